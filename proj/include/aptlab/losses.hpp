#pragma once

#include "aptlab/discriminator.hpp"
#include "aptlab/model.hpp"
#include "aptlab/schedules.hpp"

namespace aptlab {

// Per-step scalar record of the penalized discriminator objective.
struct LossBreakdown {
    double d_real = 0;
    double d_fake = 0;
    double ar1 = 0;
    double d_total = 0;
    double g_loss = 0;
    double lambda = 0;
    double sigma = 0;
};

// MSE between the backbone velocity at (x_t, t, cond) and the linear-path
// target z - x. Returns the scalar graph node (differentiable).
ag::Var flow_matching_loss(const Backbone& model, const Tensor& x, const Tensor& z, double t,
                           const std::vector<int>& ids);
ag::Var flow_matching_loss(const Backbone& model, const Tensor& x, const Tensor& z,
                           const std::vector<double>& t, const std::vector<int>& ids);

// Consistency distillation: student sample prediction at (x_{t_k}, t_k) vs the
// stop-gradient target network's prediction at the teacher-stepped point
// (x_{t_{k-1}}, t_{k-1}). Sample prediction: xhat = x_t - t * v(x_t, t, c).
ag::Var consistency_loss(const Backbone& student, const Backbone& target, const Backbone& teacher,
                         const Tensor& x, const Tensor& z, double t_hi, double t_lo,
                         const std::vector<int>& ids, double cfg_scale);

// Non-saturating GAN terms, minimization convention, stable softplus form.
// d_real = softplus(-l_real), d_fake = softplus(l_fake), g = softplus(-l_fake).
std::pair<double, double> d_loss_terms(double logit_real, double logit_fake);
double g_loss(double logit_fake);
// Batched differentiable versions over (B x 1) logit columns.
ag::Var d_real_loss(const ag::Var& logits_real);
ag::Var d_fake_loss(const ag::Var& logits_fake);
ag::Var g_loss(const ag::Var& logits_fake);

double total_d_loss(double d_real, double d_fake, double ar1, double lambda);

// A scalar critic small enough for the exact-R1 oracle: anything that maps a
// point (plus condition) to one differentiable logit graph.
using Critic = std::function<ag::Var(const ag::Var& x)>;

// || D(x) - D(x + sigma * eps) ||^2, one perturbation draw, shared rng state
// for any internal timestep draw is the caller's responsibility.
double approx_r1(const Critic& critic, const Tensor& x, double sigma, Rng& rng);

// || grad_x D(x) ||^2 via one reverse pass through the critic.
double exact_r1_oracle(const Critic& critic, const Tensor& x);

// Discriminator-specific versions: the clean/perturbed pair shares one
// timestep draw so the penalty measures sensitivity to the data, not to t.
double approx_r1(const Discriminator& disc, const Tensor& x, Condition cond, double sigma,
                 double shift_s, Rng& rng);
double exact_r1_oracle(const Discriminator& disc, const Tensor& x, Condition cond, double t);

}  // namespace aptlab
