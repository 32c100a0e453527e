#pragma once

#include <array>
#include <string>
#include <vector>

#include "aptlab/autograd.hpp"
#include "aptlab/rng.hpp"

namespace aptlab {

// Conditional diffusion-transformer backbone. Serves as the flow-matching
// teacher, the distilled one-step generator, and the discriminator backbone.
struct ModelConfig {
    int depth = 12;
    int width = 128;
    int heads = 4;
    int patch_size = 4;
    int num_classes = 8;  // one extra embedding row is reserved as the null condition
    std::array<int, 4> data_shape = {1, 1, 1, 2};  // (t', h', w', c'); (1,1,1,2) = 2D point

    int sample_dim() const { return data_shape[0] * data_shape[1] * data_shape[2] * data_shape[3]; }
    bool is_point_task() const { return data_shape[1] == 1 && data_shape[2] == 1; }
    int tokens() const {
        if (is_point_task()) return 1;
        return (data_shape[1] / patch_size) * (data_shape[2] / patch_size);
    }
    int patch_dim() const {
        if (is_point_task()) return data_shape[3] * data_shape[1] * data_shape[2];
        return patch_size * patch_size * data_shape[3];
    }
    int null_class() const { return num_classes; }
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct Condition {
    int class_id = 0;
};

struct BackboneActivations {
    std::vector<ag::Var> hidden;  // length depth, each (B*tokens x width)
    ag::Var velocity;             // (B x sample_dim)
};

// Named parameter list; the backbone, the discriminator heads, and probes all
// expose their weights this way for checkpointing / optimizer traversal.
using ParamList = std::vector<std::pair<std::string, ag::Var>>;

struct DiTBlock {
    ag::Var mod_w, mod_b;  // width -> 6*width, zero-init
    ag::Var wq, bq, wk, bk, wv, bv, wo, bo;
    ag::Var mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

class Backbone {
public:
    Backbone(ModelConfig cfg, Rng& rng);

    const ModelConfig& config() const { return cfg_; }
    ParamList& params() { return params_; }
    const ParamList& params() const { return params_; }

    // x: (B x sample_dim), t: per-row timestep in [0,1], ids: per-row class id.
    BackboneActivations forward(const ag::Var& x, const std::vector<double>& t,
                                const std::vector<int>& ids) const;

    // Single-sample convenience matching the operation contracts.
    BackboneActivations forward_one(const Tensor& sample, double t, Condition cond) const;

    void zero_grad();
    void copy_weights_from(const Backbone& other);

private:
    ModelConfig cfg_;
    ag::Var token_w, token_b;
    ag::Var time_w1, time_b1, time_w2, time_b2;
    ag::Var class_embed;
    std::vector<DiTBlock> blocks_;
    ag::Var final_mod_w, final_mod_b;  // width -> 2*width, zero-init
    ag::Var out_w, out_b;              // width -> patch_dim, zero-init
    Tensor pos_embed_;  // (tokens x width), fixed sinusoidal
    ParamList params_;

    void register_params();
};

// Tokenization as plain tensor ops (also exposed for tests).
Tensor patchify(const Tensor& batch, const ModelConfig& cfg);
Tensor unpatchify(const Tensor& tokens, const ModelConfig& cfg);
// Element index maps for the autograd gather (batch rows x flattened sample).
std::vector<size_t> patchify_map(const ModelConfig& cfg, int batch);
std::vector<size_t> unpatchify_map(const ModelConfig& cfg, int batch);

Tensor sinusoidal_timestep_embedding(const std::vector<double>& t, int dim);
Tensor sinusoidal_pos_embed_2d(int grid_h, int grid_w, int dim);

// v_null + w * (v_cond - v_null), batched.
ag::Var cfg_velocity(const Backbone& model, const ag::Var& z, const std::vector<double>& t,
                     const std::vector<int>& ids, double w);

// One-step generator: G(z, c) = z - v(z, t=1, c).
ag::Var generator_forward(const Backbone& model, const ag::Var& z, const std::vector<int>& ids);
Tensor generator_forward(const Backbone& model, const Tensor& z, const std::vector<int>& ids);

// Parameter plumbing shared by training / checkpointing.
void init_normal(Tensor& t, Rng& rng, double std);
void zero_grad(ParamList& params);
std::vector<Tensor> snapshot(const ParamList& params);
void restore(ParamList& params, const std::vector<Tensor>& snap);

}  // namespace aptlab
