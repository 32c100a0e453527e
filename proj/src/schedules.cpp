#include "aptlab/schedules.hpp"

#include <stdexcept>

namespace aptlab {

Tensor interpolate(const Tensor& x, const Tensor& z, double t) {
    if (!x.same_shape(z)) throw std::invalid_argument("interpolate: shape mismatch");
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("interpolate: t outside [0,1]");
    Tensor out = x;
    for (size_t i = 0; i < out.size(); ++i) out.v[i] = (1.0 - t) * x.v[i] + t * z.v[i];
    return out;
}

Tensor velocity_target(const Tensor& x, const Tensor& z) {
    if (!x.same_shape(z)) throw std::invalid_argument("velocity_target: shape mismatch");
    Tensor out = z;
    for (size_t i = 0; i < out.size(); ++i) out.v[i] -= x.v[i];
    return out;
}

double shift(double t, double s) {
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("shift: t outside [0,1]");
    if (!(s >= 1.0)) throw std::invalid_argument("shift: s must be >= 1");
    return s * t / (1.0 + (s - 1.0) * t);
}

double shift_inverse(double y, double s) {
    if (!(y >= 0.0 && y <= 1.0)) throw std::invalid_argument("shift_inverse: y outside [0,1]");
    if (!(s >= 1.0)) throw std::invalid_argument("shift_inverse: s must be >= 1");
    return y / (s - (s - 1.0) * y);
}

double sample_shifted_timestep(Rng& rng, double s) { return shift(rng.uniform(), s); }

Tensor euler_sample(const Backbone& model, const Tensor& z, const std::vector<int>& ids,
                    int n_steps, double cfg_scale) {
    if (n_steps < 1) throw std::invalid_argument("euler_sample: n_steps must be >= 1");
    ag::NoGradGuard ng;
    double dt = 1.0 / n_steps;
    ag::Var x = ag::constant(z);
    for (int k = 0; k < n_steps; ++k) {
        double t = 1.0 - k * dt;
        std::vector<double> ts(static_cast<size_t>(z.rows), t);
        ag::Var v = cfg_velocity(model, x, ts, ids, cfg_scale);
        x = ag::sub(x, ag::scale(v, dt));
    }
    return x->val;
}

}  // namespace aptlab
