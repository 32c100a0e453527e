#include "aptlab/model.hpp"

#include <cmath>
#include <stdexcept>

namespace aptlab {

using ag::Var;

void ModelConfig::validate() const {
    if (depth < 3) throw std::invalid_argument("ModelConfig: depth must be >= 3");
    if (width <= 0 || heads <= 0 || patch_size <= 0) throw std::invalid_argument("ModelConfig: non-positive field");
    if (width % heads != 0) throw std::invalid_argument("ModelConfig: width not divisible by heads");
    if (num_classes < 0) throw std::invalid_argument("ModelConfig: negative num_classes");
    if (data_shape[0] != 1) throw std::invalid_argument("ModelConfig: t' must be 1");
    if (!is_point_task()) {
        if (data_shape[1] % patch_size != 0 || data_shape[2] % patch_size != 0)
            throw std::invalid_argument("ModelConfig: patch_size must divide spatial dims");
    }
}

std::vector<size_t> patchify_map(const ModelConfig& cfg, int batch) {
    // output: (batch * tokens) x patch_dim, input: batch x sample_dim
    int N = cfg.tokens(), pd = cfg.patch_dim(), sd = cfg.sample_dim();
    std::vector<size_t> map(static_cast<size_t>(batch) * N * pd);
    if (cfg.is_point_task()) {
        for (int b = 0; b < batch; ++b)
            for (int j = 0; j < pd; ++j) map[static_cast<size_t>(b) * pd + j] = static_cast<size_t>(b) * sd + j;
        return map;
    }
    int H = cfg.data_shape[1], W = cfg.data_shape[2], C = cfg.data_shape[3], p = cfg.patch_size;
    int gw = W / p;
    size_t k = 0;
    for (int b = 0; b < batch; ++b)
        for (int tok = 0; tok < N; ++tok) {
            int gy = tok / gw, gx = tok % gw;
            for (int py = 0; py < p; ++py)
                for (int px = 0; px < p; ++px)
                    for (int c = 0; c < C; ++c) {
                        int y = gy * p + py, x = gx * p + px;
                        map[k++] = static_cast<size_t>(b) * sd + (static_cast<size_t>(y) * W + x) * C + c;
                    }
        }
    (void)H;
    return map;
}

std::vector<size_t> unpatchify_map(const ModelConfig& cfg, int batch) {
    // inverse permutation: output batch x sample_dim from (batch*tokens) x patch_dim
    auto fwd = patchify_map(cfg, batch);
    std::vector<size_t> inv(fwd.size());
    for (size_t k = 0; k < fwd.size(); ++k) inv[fwd[k]] = k;
    return inv;
}

Tensor patchify(const Tensor& batch, const ModelConfig& cfg) {
    if (batch.cols != cfg.sample_dim()) throw std::invalid_argument("patchify: sample shape mismatch");
    auto map = patchify_map(cfg, batch.rows);
    Tensor out(batch.rows * cfg.tokens(), cfg.patch_dim());
    for (size_t k = 0; k < map.size(); ++k) out.v[k] = batch.v[map[k]];
    return out;
}

Tensor unpatchify(const Tensor& tokens, const ModelConfig& cfg) {
    int B = tokens.rows / cfg.tokens();
    if (tokens.rows != B * cfg.tokens() || tokens.cols != cfg.patch_dim())
        throw std::invalid_argument("unpatchify: token shape mismatch");
    auto map = unpatchify_map(cfg, B);
    Tensor out(B, cfg.sample_dim());
    for (size_t k = 0; k < map.size(); ++k) out.v[k] = tokens.v[map[k]];
    return out;
}

Tensor sinusoidal_timestep_embedding(const std::vector<double>& t, int dim) {
    int half = dim / 2;
    Tensor out(static_cast<int>(t.size()), dim);
    for (size_t i = 0; i < t.size(); ++i) {
        // Desk-scale frequency ladder: max angular rate 8 rad over t in [0,1],
        // decaying geometrically. Keeps the logit smooth enough in t that
        // low-order quadrature of the timestep ensemble converges.
        double x = t[i] * 8.0;
        for (int j = 0; j < half; ++j) {
            double freq = std::exp(-std::log(100.0) * j / half);
            out(static_cast<int>(i), j) = std::sin(x * freq);
            out(static_cast<int>(i), half + j) = std::cos(x * freq);
        }
    }
    return out;
}

Tensor sinusoidal_pos_embed_2d(int grid_h, int grid_w, int dim) {
    Tensor out(grid_h * grid_w, dim);
    int quarter = dim / 4;
    for (int y = 0; y < grid_h; ++y)
        for (int x = 0; x < grid_w; ++x) {
            int r = y * grid_w + x;
            for (int j = 0; j < quarter; ++j) {
                double freq = std::exp(-std::log(10000.0) * j / quarter);
                out(r, j) = std::sin(x * freq);
                out(r, quarter + j) = std::cos(x * freq);
                out(r, 2 * quarter + j) = std::sin(y * freq);
                out(r, 3 * quarter + j) = std::cos(y * freq);
            }
        }
    return out;
}

void init_normal(Tensor& t, Rng& rng, double std) {
    for (auto& x : t.v) x = rng.normal() * std;
}

static Var param(int r, int c, Rng& rng, double std) {
    Tensor t(r, c);
    if (std > 0) init_normal(t, rng, std);
    return ag::leaf(std::move(t));
}

Backbone::Backbone(ModelConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    int W = cfg_.width, pd = cfg_.patch_dim();
    const double s = 0.02;
    token_w = param(pd, W, rng, s);
    token_b = param(1, W, rng, 0);
    time_w1 = param(W, W, rng, s);
    time_b1 = param(1, W, rng, 0);
    time_w2 = param(W, W, rng, s);
    time_b2 = param(1, W, rng, 0);
    class_embed = param(cfg_.num_classes + 1, W, rng, s);
    blocks_.resize(cfg_.depth);
    for (auto& b : blocks_) {
        b.mod_w = param(W, 6 * W, rng, 0);  // zero-init: blocks start as identity
        b.mod_b = param(1, 6 * W, rng, 0);
        b.wq = param(W, W, rng, s);
        b.bq = param(1, W, rng, 0);
        b.wk = param(W, W, rng, s);
        b.bk = param(1, W, rng, 0);
        b.wv = param(W, W, rng, s);
        b.bv = param(1, W, rng, 0);
        b.wo = param(W, W, rng, s);
        b.bo = param(1, W, rng, 0);
        b.mlp_w1 = param(W, 4 * W, rng, s);
        b.mlp_b1 = param(1, 4 * W, rng, 0);
        b.mlp_w2 = param(4 * W, W, rng, s);
        b.mlp_b2 = param(1, W, rng, 0);
    }
    final_mod_w = param(W, 2 * W, rng, 0);
    final_mod_b = param(1, 2 * W, rng, 0);
    out_w = param(W, pd, rng, 0);  // zero-init: untrained model predicts v = 0
    out_b = param(1, pd, rng, 0);
    if (cfg_.is_point_task()) {
        pos_embed_ = Tensor(1, W);
    } else {
        pos_embed_ = sinusoidal_pos_embed_2d(cfg_.data_shape[1] / cfg_.patch_size,
                                             cfg_.data_shape[2] / cfg_.patch_size, W);
    }
    register_params();
}

void Backbone::register_params() {
    params_.clear();
    auto put = [&](const std::string& name, const Var& v) { params_.emplace_back(name, v); };
    put("token.w", token_w);
    put("token.b", token_b);
    put("time.w1", time_w1);
    put("time.b1", time_b1);
    put("time.w2", time_w2);
    put("time.b2", time_b2);
    put("class_embed", class_embed);
    for (int i = 0; i < cfg_.depth; ++i) {
        auto& b = blocks_[i];
        std::string p = "block" + std::to_string(i) + ".";
        put(p + "mod.w", b.mod_w);
        put(p + "mod.b", b.mod_b);
        put(p + "wq", b.wq);
        put(p + "bq", b.bq);
        put(p + "wk", b.wk);
        put(p + "bk", b.bk);
        put(p + "wv", b.wv);
        put(p + "bv", b.bv);
        put(p + "wo", b.wo);
        put(p + "bo", b.bo);
        put(p + "mlp.w1", b.mlp_w1);
        put(p + "mlp.b1", b.mlp_b1);
        put(p + "mlp.w2", b.mlp_w2);
        put(p + "mlp.b2", b.mlp_b2);
    }
    put("final_mod.w", final_mod_w);
    put("final_mod.b", final_mod_b);
    put("out.w", out_w);
    put("out.b", out_b);
}

void Backbone::zero_grad() { aptlab::zero_grad(params_); }

void Backbone::copy_weights_from(const Backbone& other) {
    if (params_.size() != other.params_.size()) throw std::invalid_argument("copy_weights_from: mismatched models");
    for (size_t i = 0; i < params_.size(); ++i) params_[i].second->val = other.params_[i].second->val;
}

static Var modulate(const Var& x, const Var& shift, const Var& scale_v, int tokens) {
    // x: (B*N x W); shift/scale: (B x W)
    Var sc = ag::row_repeat(ag::add_scalar(scale_v, 1.0), tokens);
    Var sh = ag::row_repeat(shift, tokens);
    return ag::add(ag::hadamard(x, sc), sh);
}

BackboneActivations Backbone::forward(const Var& x, const std::vector<double>& t,
                                      const std::vector<int>& ids) const {
    int B = x->val.rows;
    if (x->val.cols != cfg_.sample_dim()) throw std::invalid_argument("backbone_forward: sample shape mismatch");
    if (static_cast<int>(t.size()) != B || static_cast<int>(ids.size()) != B)
        throw std::invalid_argument("backbone_forward: batch size mismatch");
    for (double ti : t)
        if (!(ti >= 0.0 && ti <= 1.0)) throw std::invalid_argument("backbone_forward: t outside [0,1]");
    for (int id : ids)
        if (id < 0 || id > cfg_.num_classes) throw std::invalid_argument("backbone_forward: class id out of range");

    int N = cfg_.tokens(), W = cfg_.width;
    auto pmap = std::make_shared<const std::vector<size_t>>(patchify_map(cfg_, B));
    Var tok = ag::gather_elements(x, B * N, cfg_.patch_dim(), pmap);
    Var h = ag::linear(tok, token_w, token_b);
    if (!cfg_.is_point_task()) {
        Tensor pos(B * N, W);
        for (int b = 0; b < B; ++b)
            std::copy(pos_embed_.v.begin(), pos_embed_.v.end(), pos.v.begin() + static_cast<size_t>(b) * N * W);
        h = ag::add(h, ag::constant(std::move(pos)));
    }

    Var temb = ag::constant(sinusoidal_timestep_embedding(t, W));
    temb = ag::linear(ag::silu(ag::linear(temb, time_w1, time_b1)), time_w2, time_b2);
    Var cemb = ag::gather_rows(class_embed, ids);
    Var cond = ag::silu(ag::add(temb, cemb));  // (B x W)

    BackboneActivations acts;
    acts.hidden.reserve(cfg_.depth);
    for (const auto& blk : blocks_) {
        Var mod = ag::linear(cond, blk.mod_w, blk.mod_b);
        Var sh1 = ag::cols(mod, 0, W), sc1 = ag::cols(mod, W, W), g1 = ag::cols(mod, 2 * W, W);
        Var sh2 = ag::cols(mod, 3 * W, W), sc2 = ag::cols(mod, 4 * W, W), g2 = ag::cols(mod, 5 * W, W);

        Var a = modulate(ag::layernorm(h), sh1, sc1, N);
        Var q = ag::linear(a, blk.wq, blk.bq);
        Var k = ag::linear(a, blk.wk, blk.bk);
        Var v = ag::linear(a, blk.wv, blk.bv);
        Var att = ag::attention(q, k, v, B, N, N, cfg_.heads);
        att = ag::linear(att, blk.wo, blk.bo);
        h = ag::add(h, ag::hadamard(ag::row_repeat(g1, N), att));

        Var m = modulate(ag::layernorm(h), sh2, sc2, N);
        m = ag::linear(ag::silu(ag::linear(m, blk.mlp_w1, blk.mlp_b1)), blk.mlp_w2, blk.mlp_b2);
        h = ag::add(h, ag::hadamard(ag::row_repeat(g2, N), m));
        acts.hidden.push_back(h);
    }

    Var fmod = ag::linear(cond, final_mod_w, final_mod_b);
    Var fsh = ag::cols(fmod, 0, W), fsc = ag::cols(fmod, W, W);
    Var y = modulate(ag::layernorm(h), fsh, fsc, N);
    Var out_tok = ag::linear(y, out_w, out_b);
    auto umap = std::make_shared<const std::vector<size_t>>(unpatchify_map(cfg_, B));
    acts.velocity = ag::gather_elements(out_tok, B, cfg_.sample_dim(), umap);
    return acts;
}

BackboneActivations Backbone::forward_one(const Tensor& sample, double t, Condition cond) const {
    Tensor x(1, static_cast<int>(sample.size()), sample.v);
    return forward(ag::constant(std::move(x)), {t}, {cond.class_id});
}

Var cfg_velocity(const Backbone& model, const Var& z, const std::vector<double>& t,
                 const std::vector<int>& ids, double w) {
    int null_id = model.config().null_class();
    for (int id : ids)
        if (id == null_id) throw std::invalid_argument("cfg_velocity: cond must be a real class");
    std::vector<int> nulls(ids.size(), null_id);
    Var v_null = model.forward(z, t, nulls).velocity;
    if (w == 0.0) return v_null;
    Var v_cond = model.forward(z, t, ids).velocity;
    if (w == 1.0) return v_cond;
    return ag::add(v_null, ag::scale(ag::sub(v_cond, v_null), w));
}

Var generator_forward(const Backbone& model, const Var& z, const std::vector<int>& ids) {
    std::vector<double> t(static_cast<size_t>(z->val.rows), 1.0);
    Var v = model.forward(z, t, ids).velocity;
    return ag::sub(z, v);
}

Tensor generator_forward(const Backbone& model, const Tensor& z, const std::vector<int>& ids) {
    ag::NoGradGuard ng;
    return generator_forward(model, ag::constant(z), ids)->val;
}

void zero_grad(ParamList& params) {
    for (auto& [name, p] : params) p->zero_grad();
}

std::vector<Tensor> snapshot(const ParamList& params) {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (auto& [name, p] : params) out.push_back(p->val);
    return out;
}

void restore(ParamList& params, const std::vector<Tensor>& snap) {
    if (snap.size() != params.size()) throw std::invalid_argument("restore: size mismatch");
    for (size_t i = 0; i < params.size(); ++i) params[i].second->val = snap[i];
}

}  // namespace aptlab
