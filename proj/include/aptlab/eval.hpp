#pragma once

#include <functional>
#include <string>
#include <vector>

#include "aptlab/data.hpp"
#include "aptlab/model.hpp"

namespace aptlab {

struct MetricsRecord {
    std::string run_id;
    std::string stage;
    int n_steps_used = 1;
    double energy_distance = 0;
    double mode_coverage = 0;
    double frechet_feature = 0;
    bool collapse_flag = false;
    uint64_t seed = 0;
};

// Unbiased two-sample energy distance 2 E||A-B|| - E||A-A'|| - E||B-B'||.
double energy_distance(const Tensor& a, const Tensor& b);

struct ModeCoverage {
    int covered = 0;
    int total_modes = 0;
    double high_quality_fraction = 0;
    double fraction() const { return total_modes ? static_cast<double>(covered) / total_modes : 0.0; }
};

// A mode counts as covered when >= 1% of samples land within 3 mode_std of its
// center; high_quality_fraction is the share of samples within 3 mode_std of
// any center.
ModeCoverage mode_coverage(const Tensor& samples, const DatasetSpec& spec);

using FeatureExtractor = std::function<Tensor(const Tensor&)>;
FeatureExtractor identity_features();
// Fixed seeded random projection + tanh; the desk-scale stand-in for an
// inception embedding.
FeatureExtractor random_projection_features(int in_dim, int out_dim, uint64_t seed);

// ||mu_a - mu_b||^2 + tr(Sa + Sb - 2 (Sa Sb)^{1/2}) on extracted features.
double feature_frechet(const Tensor& a, const Tensor& b, const FeatureExtractor& features);

struct TraversalResult {
    Tensor frames;                 // (n_frames x sample_dim)
    std::vector<int> nearest_mode; // per frame, ring tasks only (else empty)
    double transition_sharpness = 0;  // max frame-to-frame jump / endpoint distance
};

TraversalResult latent_traversal(const Backbone& gen, const Tensor& z_a, const Tensor& z_b,
                                 int class_id, int n_frames, const DatasetSpec* spec);

Tensor slerp(const Tensor& a, const Tensor& b, double alpha);

struct ProbeReport {
    std::vector<Tensor> probe_w;  // per layer: (width x sample_dim-per-token)
    std::vector<Tensor> probe_b;
    std::vector<double> mse;      // per layer, vs the model's own final prediction
};

// One linear probe per layer from ln(hidden) to the backbone's velocity
// output; the backbone is frozen (features are cached up front).
ProbeReport train_layer_probes(const Backbone& gen, Rng& rng, int n_samples, int steps, double lr);

// (G - B) / (G + S + B), in [-1, 1].
double preference_score(int64_t good, int64_t similar, int64_t bad);

void write_metrics_file(const std::vector<MetricsRecord>& records, const std::string& path);

}  // namespace aptlab
