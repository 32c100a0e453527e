#pragma once

#include "aptlab/model.hpp"
#include "aptlab/rng.hpp"

namespace aptlab {

struct ShiftConfig {
    double s = 1.0;  // s >= 1; s = 1 is the identity transform
};

// Linear flow path x_t = (1-t) x + t z; convention: t=0 clean data, t=1 noise.
Tensor interpolate(const Tensor& x, const Tensor& z, double t);
Tensor velocity_target(const Tensor& x, const Tensor& z);

// shift(t, s) = s t / (1 + (s-1) t); strictly increasing bijection on [0,1].
double shift(double t, double s);
double shift_inverse(double y, double s);

double sample_shifted_timestep(Rng& rng, double s);

// Euler integration of dx/dt = -v from t=1 to t=0 on a uniform grid,
// using classifier-free guided velocity.
Tensor euler_sample(const Backbone& model, const Tensor& z, const std::vector<int>& ids,
                    int n_steps, double cfg_scale);

}  // namespace aptlab
