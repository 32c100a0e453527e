#include "aptlab/eval.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace aptlab {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using nlohmann::json;

static double mean_cross_dist(const Tensor& a, const Tensor& b) {
    double acc = 0;
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < b.rows; ++j) {
            double d2 = 0;
            for (int k = 0; k < a.cols; ++k) {
                double d = a(i, k) - b(j, k);
                d2 += d * d;
            }
            acc += std::sqrt(d2);
        }
    return acc / (static_cast<double>(a.rows) * b.rows);
}

static double mean_within_dist(const Tensor& a) {
    if (a.rows < 2) return 0.0;
    double acc = 0;
    for (int i = 0; i < a.rows; ++i)
        for (int j = i + 1; j < a.rows; ++j) {
            double d2 = 0;
            for (int k = 0; k < a.cols; ++k) {
                double d = a(i, k) - a(j, k);
                d2 += d * d;
            }
            acc += std::sqrt(d2);
        }
    return 2.0 * acc / (static_cast<double>(a.rows) * (a.rows - 1));
}

double energy_distance(const Tensor& a, const Tensor& b) {
    if (a.rows == 0 || b.rows == 0) throw std::invalid_argument("energy_distance: empty sample set");
    if (a.cols != b.cols) throw std::invalid_argument("energy_distance: dimension mismatch");
    return 2.0 * mean_cross_dist(a, b) - mean_within_dist(a) - mean_within_dist(b);
}

ModeCoverage mode_coverage(const Tensor& samples, const DatasetSpec& spec) {
    if (spec.kind != DatasetKind::gmm_ring)
        throw std::invalid_argument("mode_coverage: requires a synthetic dataset with known modes");
    auto centers = spec.mode_centers();
    double r = 3.0 * spec.mode_std;
    std::vector<int> counts(centers.size(), 0);
    int hq = 0;
    for (int i = 0; i < samples.rows; ++i) {
        double best = std::numeric_limits<double>::infinity();
        int best_k = 0;
        for (size_t k = 0; k < centers.size(); ++k) {
            double dx = samples(i, 0) - centers[k].first, dy = samples(i, 1) - centers[k].second;
            double d = std::sqrt(dx * dx + dy * dy);
            if (d < best) {
                best = d;
                best_k = static_cast<int>(k);
            }
        }
        if (best <= r) {
            ++counts[best_k];
            ++hq;
        }
    }
    ModeCoverage mc;
    mc.total_modes = static_cast<int>(centers.size());
    for (int c : counts)
        if (c >= std::max(1.0, 0.01 * samples.rows)) ++mc.covered;
    mc.high_quality_fraction = samples.rows ? static_cast<double>(hq) / samples.rows : 0.0;
    return mc;
}

FeatureExtractor identity_features() {
    return [](const Tensor& x) { return x; };
}

FeatureExtractor random_projection_features(int in_dim, int out_dim, uint64_t seed) {
    Rng rng(seed);
    auto w = std::make_shared<Tensor>(rng.normal_tensor(in_dim, out_dim, 1.0 / std::sqrt(in_dim)));
    return [w, in_dim, out_dim](const Tensor& x) {
        if (x.cols != in_dim) throw std::invalid_argument("feature extractor: dimension mismatch");
        Tensor out(x.rows, out_dim);
        for (int i = 0; i < x.rows; ++i)
            for (int j = 0; j < out_dim; ++j) {
                double acc = 0;
                for (int k = 0; k < in_dim; ++k) acc += x(i, k) * (*w)(k, j);
                out(i, j) = std::tanh(acc);
            }
        return out;
    };
}

static void mean_cov(const Tensor& f, Eigen::VectorXd& mu, EMat& sigma) {
    Eigen::Map<const EMat> X(f.v.data(), f.rows, f.cols);
    mu = X.colwise().mean();
    EMat C = X.rowwise() - mu.transpose();
    sigma = C.transpose() * C / static_cast<double>(f.rows - 1);
}

double feature_frechet(const Tensor& a, const Tensor& b, const FeatureExtractor& features) {
    Tensor fa = features(a), fb = features(b);
    if (fa.cols < 2) throw std::invalid_argument("feature_frechet: feature dim must be >= 2");
    if (fa.rows <= fa.cols || fb.rows <= fb.cols)
        throw std::invalid_argument("feature_frechet: need more samples than feature dims");
    Eigen::VectorXd mu_a, mu_b;
    EMat sa, sb;
    mean_cov(fa, mu_a, sa);
    mean_cov(fb, mu_b, sb);
    // floor tiny eigenvalues so near-singular covariances stay PSD
    auto floor_psd = [](EMat& s) {
        Eigen::SelfAdjointEigenSolver<EMat> es(s);
        Eigen::VectorXd ev = es.eigenvalues().cwiseMax(1e-10);
        s = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    };
    floor_psd(sa);
    floor_psd(sb);
    // tr sqrt(Sa Sb) = tr sqrt(Sa^1/2 Sb Sa^1/2); the symmetric form keeps the
    // square root stable when the covariances are rank-deficient
    Eigen::SelfAdjointEigenSolver<EMat> es_a(sa);
    EMat sa_half = es_a.eigenvectors() *
                   es_a.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                   es_a.eigenvectors().transpose();
    Eigen::SelfAdjointEigenSolver<EMat> es_m(sa_half * sb * sa_half);
    double tr_sqrt = es_m.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    double tr = sa.trace() + sb.trace() - 2.0 * tr_sqrt;
    return (mu_a - mu_b).squaredNorm() + tr;
}

Tensor slerp(const Tensor& a, const Tensor& b, double alpha) {
    double na = 0, nb = 0, dot = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        na += a.v[i] * a.v[i];
        nb += b.v[i] * b.v[i];
        dot += a.v[i] * b.v[i];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na < 1e-12 || nb < 1e-12) throw std::invalid_argument("slerp: zero-norm noise");
    double cosw = std::clamp(dot / (na * nb), -1.0, 1.0);
    double w = std::acos(cosw);
    Tensor out = a;
    if (w < 1e-8) {
        for (size_t i = 0; i < out.size(); ++i) out.v[i] = (1 - alpha) * a.v[i] + alpha * b.v[i];
        return out;
    }
    double s = std::sin(w);
    double ca = std::sin((1 - alpha) * w) / s, cb = std::sin(alpha * w) / s;
    for (size_t i = 0; i < out.size(); ++i) out.v[i] = ca * a.v[i] + cb * b.v[i];
    return out;
}

TraversalResult latent_traversal(const Backbone& gen, const Tensor& z_a, const Tensor& z_b,
                                 int class_id, int n_frames, const DatasetSpec* spec) {
    if (n_frames < 2) throw std::invalid_argument("latent_traversal: n_frames must be >= 2");
    if (!z_a.same_shape(z_b)) throw std::invalid_argument("latent_traversal: endpoint shape mismatch");
    TraversalResult r;
    r.frames = Tensor(n_frames, static_cast<int>(z_a.size()));
    for (int f = 0; f < n_frames; ++f) {
        Tensor z = slerp(z_a, z_b, static_cast<double>(f) / (n_frames - 1));
        Tensor zrow(1, static_cast<int>(z.size()), z.v);
        Tensor out = generator_forward(gen, zrow, {class_id});
        std::copy(out.v.begin(), out.v.end(), r.frames.v.begin() + static_cast<size_t>(f) * r.frames.cols);
    }
    double endpoint = 0;
    for (int k = 0; k < r.frames.cols; ++k) {
        double d = r.frames(n_frames - 1, k) - r.frames(0, k);
        endpoint += d * d;
    }
    endpoint = std::sqrt(endpoint);
    double max_jump = 0;
    for (int f = 1; f < n_frames; ++f) {
        double d2 = 0;
        for (int k = 0; k < r.frames.cols; ++k) {
            double d = r.frames(f, k) - r.frames(f - 1, k);
            d2 += d * d;
        }
        max_jump = std::max(max_jump, std::sqrt(d2));
    }
    r.transition_sharpness = endpoint > 1e-12 ? max_jump / endpoint : 0.0;
    if (spec && spec->kind == DatasetKind::gmm_ring) {
        auto centers = spec->mode_centers();
        r.nearest_mode.resize(n_frames);
        for (int f = 0; f < n_frames; ++f) {
            double best = std::numeric_limits<double>::infinity();
            for (size_t k = 0; k < centers.size(); ++k) {
                double dx = r.frames(f, 0) - centers[k].first, dy = r.frames(f, 1) - centers[k].second;
                double d = dx * dx + dy * dy;
                if (d < best) {
                    best = d;
                    r.nearest_mode[f] = static_cast<int>(k);
                }
            }
        }
    }
    return r;
}

ProbeReport train_layer_probes(const Backbone& gen, Rng& rng, int n_samples, int steps, double lr) {
    const ModelConfig& cfg = gen.config();
    int W = cfg.width, N = cfg.tokens(), pd = cfg.patch_dim();
    const int probe_class = 0;  // probes are trained under one fixed condition
    std::vector<int> ids(static_cast<size_t>(n_samples), probe_class);
    std::vector<double> ts(static_cast<size_t>(n_samples), 1.0);

    // cache features under no-grad; the backbone stays untouched
    Tensor z = rng.normal_tensor(n_samples, cfg.sample_dim());
    std::vector<Tensor> feats;  // ln(hidden) per layer, (n*N x W)
    Tensor target_tok;          // model's own output tokens (n*N x pd)
    Tensor scale_row, shift_row;
    {
        ag::NoGradGuard ng;
        BackboneActivations acts = gen.forward(ag::constant(z), ts, ids);
        for (auto& h : acts.hidden) feats.push_back(ag::layernorm(h)->val);
        target_tok = patchify(acts.velocity->val, cfg);
    }
    // the model's own final head is an affine map of ln(h_final) for fixed (t, c):
    // W' = diag(1 + scale) out_w, b' = shift diag* out_w + out_b
    Tensor w_final(W, pd), b_final(1, pd);
    {
        ag::NoGradGuard ng;
        // recover (shift, scale, out_w, out_b) from the parameter list
        const Tensor *fm_w = nullptr, *fm_b = nullptr, *ow = nullptr, *ob = nullptr;
        const Tensor *tw1 = nullptr, *tb1 = nullptr, *tw2 = nullptr, *tb2 = nullptr, *ce = nullptr;
        for (auto& [n, p] : gen.params()) {
            if (n == "final_mod.w") fm_w = &p->val;
            if (n == "final_mod.b") fm_b = &p->val;
            if (n == "out.w") ow = &p->val;
            if (n == "out.b") ob = &p->val;
            if (n == "time.w1") tw1 = &p->val;
            if (n == "time.b1") tb1 = &p->val;
            if (n == "time.w2") tw2 = &p->val;
            if (n == "time.b2") tb2 = &p->val;
            if (n == "class_embed") ce = &p->val;
        }
        ag::Var temb = ag::constant(sinusoidal_timestep_embedding({1.0}, W));
        temb = ag::linear(ag::silu(ag::linear(temb, ag::constant(*tw1), ag::constant(*tb1))),
                          ag::constant(*tw2), ag::constant(*tb2));
        ag::Var cemb = ag::gather_rows(ag::constant(*ce), {probe_class});
        Tensor cond = ag::silu(ag::add(temb, cemb))->val;
        ag::Var mod = ag::linear(ag::constant(cond), ag::constant(*fm_w), ag::constant(*fm_b));
        scale_row = Tensor(1, W);
        shift_row = Tensor(1, W);
        for (int j = 0; j < W; ++j) {
            shift_row.v[j] = mod->val(0, j);
            scale_row.v[j] = mod->val(0, W + j);
        }
        for (int i = 0; i < W; ++i)
            for (int j = 0; j < pd; ++j) w_final(i, j) = (1.0 + scale_row.v[i]) * (*ow)(i, j);
        for (int j = 0; j < pd; ++j) {
            double acc = (*ob)(0, j);
            for (int i = 0; i < W; ++i) acc += shift_row.v[i] * (*ow)(i, j);
            b_final(0, j) = acc;
        }
    }

    ProbeReport rep;
    ag::Var target = ag::constant(target_tok);
    for (int layer = 0; layer < cfg.depth; ++layer) {
        ag::Var w = layer == cfg.depth - 1 ? ag::leaf(w_final) : ag::leaf(Tensor(W, pd));
        ag::Var b = layer == cfg.depth - 1 ? ag::leaf(b_final) : ag::leaf(Tensor(1, pd));
        ag::Var feat = ag::constant(feats[static_cast<size_t>(layer)]);
        double last = 0;
        for (int s = 0; s < steps; ++s) {
            ag::Var loss = ag::mse(ag::linear(feat, w, b), target);
            last = loss->item();
            ag::backward(loss);
            // plain RMSProp-free SGD keeps the probe fit simple and convex
            for (size_t k = 0; k < w->val.size(); ++k) w->val.v[k] -= lr * w->grad.v[k];
            for (size_t k = 0; k < b->val.size(); ++k) b->val.v[k] -= lr * b->grad.v[k];
            w->zero_grad();
            b->zero_grad();
        }
        rep.probe_w.push_back(w->val);
        rep.probe_b.push_back(b->val);
        rep.mse.push_back(last);
    }
    (void)N;
    return rep;
}

double preference_score(int64_t good, int64_t similar, int64_t bad) {
    if (good < 0 || similar < 0 || bad < 0) throw std::invalid_argument("preference_score: negative count");
    int64_t total = good + similar + bad;
    if (total == 0) throw std::invalid_argument("preference_score: all counts zero");
    return static_cast<double>(good - bad) / static_cast<double>(total);
}

static json record_json(const MetricsRecord& r) {
    return {{"run_id", r.run_id},
            {"stage", r.stage},
            {"n_steps_used", r.n_steps_used},
            {"energy_distance", r.energy_distance},
            {"mode_coverage", r.mode_coverage},
            {"frechet_feature", r.frechet_feature},
            {"collapse_flag", r.collapse_flag},
            {"seed", r.seed}};
}

void write_metrics_file(const std::vector<MetricsRecord>& records, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("metrics: cannot open " + path);
    for (const auto& r : records) os << record_json(r).dump() << "\n";
}

}  // namespace aptlab
