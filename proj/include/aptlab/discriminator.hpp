#pragma once

#include "aptlab/checkpoint.hpp"
#include "aptlab/model.hpp"
#include "aptlab/schedules.hpp"

namespace aptlab {

struct HeadConfig {
    std::vector<int> layer_indices;  // 1-based, strictly increasing, last == depth

    // Proportional mapping of the reference depth-36 placement (16, 26, 36).
    static HeadConfig defaults_for_depth(int depth);
    void validate(int depth) const;
};

struct LogitHead {
    ag::Var query;          // 1 x width, learnable token
    ag::Var wk, bk, wv, bv; // key/value projections
    ag::Var wo, bo;         // attention output projection
};

// Discriminator = diffusion-initialized backbone + cross-attention-only logit
// heads at three depths + fuse (normalize concatenated head outputs, project
// to one scalar).
class Discriminator {
public:
    Discriminator(const ModelConfig& cfg, const HeadConfig& head_cfg, Rng& rng);

    const ModelConfig& config() const { return backbone_.config(); }
    const HeadConfig& head_config() const { return head_cfg_; }
    Backbone& backbone() { return backbone_; }
    const Backbone& backbone() const { return backbone_; }
    ParamList& params() { return params_; }
    const ParamList& params() const { return params_; }
    std::string backbone_origin_stage;  // provenance, checked by the training loop

    // Batched logit under per-row timestep conditioning; x is the raw sample,
    // never noised. Returns (B x 1).
    ag::Var logits(const ag::Var& x, const std::vector<double>& t, const std::vector<int>& ids) const;

    // Single-sample ensembled estimator: draws t = shift(U, s), returns (logit, t_used).
    std::pair<double, double> logit(const Tensor& sample, Condition cond, double s, Rng& rng) const;

    // Midpoint-rule quadrature of the logit over the shifted-t distribution.
    double logit_expected(const Tensor& sample, Condition cond, double s, int n_quad) const;

    // Single-head cross attention of the learned query over one layer's tokens.
    ag::Var head_forward(int head_index, const ag::Var& hidden, int batch, int tokens) const;

    void zero_grad() { aptlab::zero_grad(params_); }

private:
    Backbone backbone_;
    HeadConfig head_cfg_;
    std::vector<LogitHead> heads_;
    ag::Var fuse_gain, fuse_bias;  // 1 x (3*width) learned scale/shift after normalization
    ag::Var fuse_w, fuse_b;        // (3*width) -> 1, zero-init
    ParamList params_;
};

// Builds a discriminator from a pretrained-diffusion checkpoint. Backbone
// weights are copied exactly; heads are freshly initialized; everything is
// trainable. A distilled-stage checkpoint is rejected unless
// allow_distilled_init is set (ablation escape hatch).
Discriminator build_discriminator(const Checkpoint& diffusion_ckpt, const HeadConfig& head_cfg,
                                  Rng& rng, bool allow_distilled_init = false);

}  // namespace aptlab
