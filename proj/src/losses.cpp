#include "aptlab/losses.hpp"

#include <cmath>

namespace aptlab {

using ag::Var;

Var flow_matching_loss(const Backbone& model, const Tensor& x, const Tensor& z,
                       const std::vector<double>& t, const std::vector<int>& ids) {
    if (!x.same_shape(z)) throw std::invalid_argument("flow_matching_loss: shape mismatch");
    if (static_cast<int>(t.size()) != x.rows) throw std::invalid_argument("flow_matching_loss: t batch mismatch");
    Tensor xt(x.rows, x.cols), target(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i) {
        if (!(t[i] >= 0.0 && t[i] <= 1.0)) throw std::invalid_argument("flow_matching_loss: t outside [0,1]");
        for (int j = 0; j < x.cols; ++j) {
            xt(i, j) = (1.0 - t[i]) * x(i, j) + t[i] * z(i, j);
            target(i, j) = z(i, j) - x(i, j);
        }
    }
    Var v = model.forward(ag::constant(std::move(xt)), t, ids).velocity;
    return ag::mse(v, ag::constant(std::move(target)));
}

Var flow_matching_loss(const Backbone& model, const Tensor& x, const Tensor& z, double t,
                       const std::vector<int>& ids) {
    return flow_matching_loss(model, x, z, std::vector<double>(static_cast<size_t>(x.rows), t), ids);
}

static Var sample_prediction(const Backbone& model, const Var& xt, double t, const std::vector<int>& ids) {
    std::vector<double> ts(static_cast<size_t>(xt->val.rows), t);
    Var v = model.forward(xt, ts, ids).velocity;
    return ag::sub(xt, ag::scale(v, t));  // xhat = x_t - t * vhat; reduces to z - vhat at t = 1
}

Var consistency_loss(const Backbone& student, const Backbone& target, const Backbone& teacher,
                     const Tensor& x, const Tensor& z, double t_hi, double t_lo,
                     const std::vector<int>& ids, double cfg_scale) {
    if (!(0.0 <= t_lo && t_lo <= t_hi && t_hi <= 1.0))
        throw std::invalid_argument("consistency_loss: need 0 <= t_lo <= t_hi <= 1");
    Tensor x_hi = interpolate(x, z, t_hi);
    Var student_pred = sample_prediction(student, ag::constant(x_hi), t_hi, ids);
    Tensor target_pred;
    {
        ag::NoGradGuard ng;  // teacher step and target network are stop-gradient
        if (t_hi == t_lo) {
            target_pred = sample_prediction(target, ag::constant(x_hi), t_lo, ids)->val;
        } else {
            std::vector<double> ts(static_cast<size_t>(x.rows), t_hi);
            Tensor v = cfg_velocity(teacher, ag::constant(x_hi), ts, ids, cfg_scale)->val;
            Tensor x_lo = x_hi;
            for (size_t i = 0; i < x_lo.size(); ++i) x_lo.v[i] -= (t_hi - t_lo) * v.v[i];
            target_pred = sample_prediction(target, ag::constant(std::move(x_lo)), t_lo, ids)->val;
        }
    }
    return ag::mse(student_pred, ag::constant(std::move(target_pred)));
}

static double softplus_val(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

std::pair<double, double> d_loss_terms(double logit_real, double logit_fake) {
    if (!std::isfinite(logit_real) || !std::isfinite(logit_fake))
        throw std::invalid_argument("d_loss_terms: non-finite logit");
    return {softplus_val(-logit_real), softplus_val(logit_fake)};
}

double g_loss(double logit_fake) {
    if (!std::isfinite(logit_fake)) throw std::invalid_argument("g_loss: non-finite logit");
    return softplus_val(-logit_fake);
}

Var d_real_loss(const Var& logits_real) { return ag::mean_all(ag::softplus(ag::neg(logits_real))); }
Var d_fake_loss(const Var& logits_fake) { return ag::mean_all(ag::softplus(logits_fake)); }
Var g_loss(const Var& logits_fake) { return ag::mean_all(ag::softplus(ag::neg(logits_fake))); }

double total_d_loss(double d_real, double d_fake, double ar1, double lambda) {
    double v = d_real + d_fake + lambda * ar1;
    if (!std::isfinite(v)) throw std::invalid_argument("total_d_loss: non-finite inputs");
    return v;
}

double approx_r1(const Critic& critic, const Tensor& x, double sigma, Rng& rng) {
    if (!(sigma > 0.0)) throw std::invalid_argument("approx_r1: sigma must be > 0");
    ag::NoGradGuard ng;
    Tensor xp = x;
    for (auto& v : xp.v) v += sigma * rng.normal();
    double d0 = critic(ag::constant(x))->item();
    double d1 = critic(ag::constant(std::move(xp)))->item();
    return (d0 - d1) * (d0 - d1);
}

double exact_r1_oracle(const Critic& critic, const Tensor& x) {
    Var xv = ag::leaf(x);
    Var out = critic(xv);
    ag::backward(out);
    double acc = 0.0;
    for (double g : xv->grad.v) acc += g * g;
    return acc;
}

double approx_r1(const Discriminator& disc, const Tensor& x, Condition cond, double sigma,
                 double shift_s, Rng& rng) {
    double t = sample_shifted_timestep(rng, shift_s);  // one draw shared by the pair
    Critic c = [&](const Var& xv) { return disc.logits(xv, {t}, {cond.class_id}); };
    return approx_r1(c, Tensor(1, static_cast<int>(x.size()), x.v), sigma, rng);
}

double exact_r1_oracle(const Discriminator& disc, const Tensor& x, Condition cond, double t) {
    Critic c = [&](const Var& xv) { return disc.logits(xv, {t}, {cond.class_id}); };
    return exact_r1_oracle(c, Tensor(1, static_cast<int>(x.size()), x.v));
}

}  // namespace aptlab
