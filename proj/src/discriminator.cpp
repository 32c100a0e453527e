#include "aptlab/discriminator.hpp"

#include <cmath>

namespace aptlab {

using ag::Var;

HeadConfig HeadConfig::defaults_for_depth(int depth) {
    auto prop = [&](int ref) { return std::max(1, static_cast<int>(std::lround(depth * ref / 36.0))); };
    HeadConfig hc;
    hc.layer_indices = {prop(16), prop(26), depth};
    // keep strictly increasing for very shallow models
    if (hc.layer_indices[1] <= hc.layer_indices[0]) hc.layer_indices[1] = hc.layer_indices[0] + 1;
    if (hc.layer_indices[2] <= hc.layer_indices[1]) hc.layer_indices[1] = hc.layer_indices[2] - 1;
    if (hc.layer_indices[0] >= hc.layer_indices[1]) hc.layer_indices[0] = hc.layer_indices[1] - 1;
    hc.validate(depth);
    return hc;
}

void HeadConfig::validate(int depth) const {
    if (layer_indices.empty()) throw ConfigError("HeadConfig: no layer indices");
    int prev = 0;
    for (int i : layer_indices) {
        if (i <= prev || i > depth) throw ConfigError("HeadConfig: indices must be strictly increasing and <= depth");
        prev = i;
    }
    if (layer_indices.back() != depth) throw ConfigError("HeadConfig: last index must equal depth");
}

static Var param(int r, int c, Rng& rng, double std) {
    Tensor t(r, c);
    if (std > 0) init_normal(t, rng, std);
    return ag::leaf(std::move(t));
}

Discriminator::Discriminator(const ModelConfig& cfg, const HeadConfig& head_cfg, Rng& rng)
    : backbone_(cfg, rng), head_cfg_(head_cfg) {
    head_cfg_.validate(cfg.depth);
    int W = cfg.width;
    const double s = 0.02;
    heads_.resize(head_cfg_.layer_indices.size());
    for (auto& h : heads_) {
        h.query = param(1, W, rng, s);
        h.wk = param(W, W, rng, s);
        h.bk = param(1, W, rng, 0);
        h.wv = param(W, W, rng, s);
        h.bv = param(1, W, rng, 0);
        h.wo = param(W, W, rng, s);
        h.bo = param(1, W, rng, 0);
    }
    int F = W * static_cast<int>(heads_.size());
    fuse_gain = param(1, F, rng, 0);
    for (auto& x : fuse_gain->val.v) x = 1.0;
    fuse_bias = param(1, F, rng, 0);
    fuse_w = param(F, 1, rng, 0);  // zero-init: initial logits are 0 (balanced game start)
    fuse_b = param(1, 1, rng, 0);

    for (auto& [n, p] : backbone_.params()) params_.emplace_back("backbone." + n, p);
    for (size_t i = 0; i < heads_.size(); ++i) {
        auto& h = heads_[i];
        std::string p = "head" + std::to_string(i) + ".";
        params_.emplace_back(p + "query", h.query);
        params_.emplace_back(p + "wk", h.wk);
        params_.emplace_back(p + "bk", h.bk);
        params_.emplace_back(p + "wv", h.wv);
        params_.emplace_back(p + "bv", h.bv);
        params_.emplace_back(p + "wo", h.wo);
        params_.emplace_back(p + "bo", h.bo);
    }
    params_.emplace_back("fuse.gain", fuse_gain);
    params_.emplace_back("fuse.bias", fuse_bias);
    params_.emplace_back("fuse.w", fuse_w);
    params_.emplace_back("fuse.b", fuse_b);
}

Var Discriminator::head_forward(int head_index, const Var& hidden, int batch, int tokens) const {
    if (tokens < 1 || hidden->val.rows != batch * tokens)
        throw std::invalid_argument("head_forward: empty or mismatched token sequence");
    const auto& h = heads_.at(static_cast<size_t>(head_index));
    Var q = ag::row_repeat(h.query, batch);  // (B x W), one query token per item
    Var k = ag::linear(hidden, h.wk, h.bk);
    Var v = ag::linear(hidden, h.wv, h.bv);
    Var att = ag::attention(q, k, v, batch, 1, tokens, 1);
    return ag::linear(att, h.wo, h.bo);  // (B x W)
}

Var Discriminator::logits(const Var& x, const std::vector<double>& t, const std::vector<int>& ids) const {
    int B = x->val.rows;
    int N = config().tokens();
    BackboneActivations acts = backbone_.forward(x, t, ids);
    std::vector<Var> outs;
    outs.reserve(heads_.size());
    for (size_t i = 0; i < heads_.size(); ++i) {
        int layer = head_cfg_.layer_indices[i];  // 1-based
        outs.push_back(head_forward(static_cast<int>(i), acts.hidden.at(static_cast<size_t>(layer - 1)), B, N));
    }
    Var fused = ag::concat_cols(outs);
    fused = ag::layernorm(fused);
    fused = ag::add(ag::hadamard(fused, ag::row_repeat(fuse_gain, B)), ag::row_repeat(fuse_bias, B));
    return ag::linear(fused, fuse_w, fuse_b);  // (B x 1)
}

std::pair<double, double> Discriminator::logit(const Tensor& sample, Condition cond, double s, Rng& rng) const {
    double t = sample_shifted_timestep(rng, s);
    ag::NoGradGuard ng;
    Tensor x(1, static_cast<int>(sample.size()), sample.v);
    Var l = logits(ag::constant(std::move(x)), {t}, {cond.class_id});
    return {l->item(), t};
}

double Discriminator::logit_expected(const Tensor& sample, Condition cond, double s, int n_quad) const {
    if (n_quad < 2) throw std::invalid_argument("logit_expected: n_quad must be >= 2");
    ag::NoGradGuard ng;
    Tensor x(1, static_cast<int>(sample.size()), sample.v);
    Var xv = ag::constant(std::move(x));
    double acc = 0.0;
    for (int i = 0; i < n_quad; ++i) {
        double u = (i + 0.5) / n_quad;  // midpoint rule on the uniform u-grid
        double t = shift(u, s);
        acc += logits(xv, {t}, {cond.class_id})->item();
    }
    return acc / n_quad;
}

Discriminator build_discriminator(const Checkpoint& diffusion_ckpt, const HeadConfig& head_cfg,
                                  Rng& rng, bool allow_distilled_init) {
    if (diffusion_ckpt.stage != "pretrain" && !allow_distilled_init)
        throw ConfigError("build_discriminator: expected a pretrained-diffusion checkpoint, got stage '" +
                          diffusion_ckpt.stage + "' (set the ablation flag to allow)");
    Discriminator d(diffusion_ckpt.config, head_cfg, rng);
    diffusion_ckpt.load_into(d.backbone().params());
    d.backbone_origin_stage = diffusion_ckpt.stage;
    return d;
}

}  // namespace aptlab
