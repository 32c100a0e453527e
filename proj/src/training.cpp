#include "aptlab/training.hpp"

#include <cmath>
#include <fstream>
#include <iostream>

#include <json.hpp>

namespace aptlab {

using ag::Var;
using nlohmann::json;

void RmsProp::step() {
    auto& params = *params_;
    if (moment_.empty()) {
        moment_.reserve(params.size());
        for (auto& [n, p] : params) moment_.emplace_back(p->val.rows, p->val.cols);
    }
    for (size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].second;
        if (!p->grad.size()) continue;
        if (!p->grad.same_shape(p->val)) throw std::invalid_argument("optimizer_step: gradient shape mismatch");
        auto& m = moment_[i];
        for (size_t k = 0; k < p->val.size(); ++k) {
            double g = p->grad.v[k];
            m.v[k] = cfg_.beta2 * m.v[k] + (1.0 - cfg_.beta2) * g * g;
            p->val.v[k] -= cfg_.lr * g / (std::sqrt(m.v[k]) + cfg_.epsilon);
        }
    }
}

void ema_update(std::vector<Tensor>& ema, const ParamList& params, double decay) {
    if (ema.size() != params.size()) throw std::invalid_argument("ema_update: tree size mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& p = params[i].second->val;
        auto& e = ema[i];
        if (!e.same_shape(p)) throw std::invalid_argument("ema_update: tree shape mismatch");
        for (size_t k = 0; k < p.size(); ++k) e.v[k] = decay * e.v[k] + (1.0 - decay) * p.v[k];
    }
}

void CollapseMonitor::push(double gan_part) {
    recent.push_back(gan_part);
    while (static_cast<int>(recent.size()) > window) recent.pop_front();
}

bool CollapseMonitor::collapsed() const {
    if (static_cast<int>(recent.size()) < window) return false;
    double acc = 0;
    for (double v : recent) acc += v;
    return acc / window < threshold;
}

bool detect_collapse(const CollapseMonitor& monitor) { return monitor.collapsed(); }

MetricsLog::MetricsLog(const std::string& path) : out_(path) {
    if (!out_) throw IoError("metrics log: cannot open " + path);
}

void MetricsLog::log_step(int64_t step, const std::string& stage, const LossBreakdown& lb, double lr,
                          bool collapse_flag) {
    json j = {{"step", step},       {"stage", stage},     {"d_real", lb.d_real},
              {"d_fake", lb.d_fake}, {"ar1", lb.ar1},      {"d_total", lb.d_total},
              {"g_loss", lb.g_loss}, {"lr", lr},           {"collapse_flag", collapse_flag}};
    out_ << j.dump() << "\n";
    out_.flush();
}

void MetricsLog::log_scalar(int64_t step, const std::string& stage, const std::string& name, double value) {
    json j = {{"step", step}, {"stage", stage}, {name, value}};
    out_ << j.dump() << "\n";
    out_.flush();
}

DataSource::DataSource(DatasetSpec spec, uint64_t seed)
    : spec_(std::move(spec)), rng_(seed), dim_(spec_->sample_dim()), classes_(spec_->num_classes()) {}

DataSource::DataSource(ImageCorpus corpus, uint64_t seed)
    : corpus_(std::move(corpus)), rng_(seed), dim_(corpus_->edge * corpus_->edge * corpus_->channels),
      classes_(corpus_->classes) {}

Batch DataSource::next(int n) {
    if (spec_) return sample_real(*spec_, rng_, n);
    return corpus_->sample(rng_, n);
}

static void check_finite_or_abort(double loss, int64_t step, const std::string& stage, MetricsLog* log) {
    if (std::isfinite(loss)) return;
    if (log) log->log_scalar(step, stage, "diverged", 1.0);
    throw std::runtime_error(stage + ": non-finite loss at step " + std::to_string(step));
}

TrainResult pretrain_diffusion(const ModelConfig& mcfg, const StageConfig& cfg, DataSource& data,
                               MetricsLog* log) {
    Rng rng(cfg.seed);
    Backbone model(mcfg, rng);
    RmsProp opt(model.params(), {.lr = cfg.lr});
    const int null_id = mcfg.null_class();
    for (int64_t step = 0; step < cfg.steps; ++step) {
        Batch b = data.next(cfg.batch_size);
        Tensor z = rng.normal_tensor(b.x.rows, b.x.cols);
        std::vector<double> t(static_cast<size_t>(b.x.rows));
        for (auto& ti : t) ti = shift(rng.uniform(), cfg.pretrain_shift);
        // drop the condition to null 10% of the time so CFG has a trained negative branch
        for (auto& id : b.labels)
            if (rng.uniform() < 0.1) id = null_id;
        Var loss = flow_matching_loss(model, b.x, z, t, b.labels);
        check_finite_or_abort(loss->item(), step, "pretrain", log);
        ag::backward(loss);
        opt.step();
        model.zero_grad();
        if (log && (step % 50 == 0 || step == cfg.steps - 1))
            log->log_scalar(step, "pretrain", "loss", loss->item());
    }
    TrainResult r;
    r.final_ckpt = Checkpoint::from_params(model.params(), mcfg, "pretrain", cfg.steps, cfg.seed);
    r.steps_run = cfg.steps;
    return r;
}

TrainResult distill_consistency(const ModelConfig& mcfg, const StageConfig& cfg,
                                const Checkpoint& teacher_ckpt, DataSource& data, MetricsLog* log) {
    if (teacher_ckpt.stage != "pretrain")
        throw ConfigError("distill: teacher checkpoint must be stage 'pretrain', got '" + teacher_ckpt.stage + "'");
    if (!(teacher_ckpt.config == mcfg)) throw ConfigError("distill: model config mismatch with teacher");
    Rng rng(cfg.seed);
    Backbone teacher(mcfg, rng), student(mcfg, rng), target(mcfg, rng);
    teacher_ckpt.load_into(teacher.params());
    student.copy_weights_from(teacher);
    target.copy_weights_from(teacher);
    std::vector<Tensor> target_ema = snapshot(student.params());
    RmsProp opt(student.params(), {.lr = cfg.lr});
    const int N = cfg.distill_segments;
    for (int64_t step = 0; step < cfg.steps; ++step) {
        Batch b = data.next(cfg.batch_size);
        Tensor z = rng.normal_tensor(b.x.rows, b.x.cols);
        int k = 1 + rng.uniform_int(N);
        double t_hi = static_cast<double>(k) / N, t_lo = static_cast<double>(k - 1) / N;
        Var loss = consistency_loss(student, target, teacher, b.x, z, t_hi, t_lo, b.labels, cfg.cfg_scale);
        check_finite_or_abort(loss->item(), step, "distill", log);
        ag::backward(loss);
        opt.step();
        student.zero_grad();
        ema_update(target_ema, student.params(), cfg.target_ema_decay);
        restore(target.params(), target_ema);
        if (log && (step % 50 == 0 || step == cfg.steps - 1))
            log->log_scalar(step, "distill", "loss", loss->item());
    }
    TrainResult r;
    r.final_ckpt = Checkpoint::from_params(student.params(), mcfg, "distill", cfg.steps, cfg.seed);
    r.steps_run = cfg.steps;
    return r;
}

TrainResult apt_train(const ModelConfig& mcfg, const StageConfig& cfg, const HeadConfig& head_cfg,
                      const Checkpoint& distilled_ckpt, const Checkpoint& diffusion_ckpt,
                      DataSource& data, MetricsLog* log) {
    if (distilled_ckpt.stage != "distill")
        throw ConfigError("apt: generator checkpoint must be stage 'distill', got '" + distilled_ckpt.stage + "'");
    if (!(distilled_ckpt.config == mcfg)) throw ConfigError("apt: model config mismatch with generator checkpoint");
    Rng rng(cfg.seed);
    Backbone gen(mcfg, rng);
    distilled_ckpt.load_into(gen.params());
    Discriminator disc = build_discriminator(diffusion_ckpt, head_cfg, rng, cfg.allow_distilled_disc_init);
    // cross-initialization provenance: generator from distill, discriminator from diffusion
    if (!cfg.allow_distilled_disc_init && disc.backbone_origin_stage != "pretrain")
        throw ConfigError("apt: discriminator backbone origin must be the diffusion stage");

    RmsProp g_opt(gen.params(), {.lr = cfg.lr});
    // discriminator backbone and heads can run at different rates (ablation);
    // paper-faithful mode trains the whole network at lr_disc
    ParamList disc_backbone, disc_heads;
    for (auto& [n, p] : disc.params())
        (n.rfind("backbone.", 0) == 0 ? disc_backbone : disc_heads).emplace_back(n, p);
    RmsProp d_opt_backbone(disc_backbone, {.lr = cfg.lr_disc * cfg.disc_backbone_lr_scale});
    RmsProp d_opt_heads(disc_heads, {.lr = cfg.lr_disc});

    std::vector<Tensor> ema = snapshot(gen.params());
    std::optional<std::vector<Tensor>> adopted_ema;
    CollapseMonitor monitor{.window = cfg.collapse_window, .threshold = cfg.collapse_threshold};
    bool collapsed = false;
    int64_t d_steps = 0, g_steps = 0;
    int64_t step = 0;
    for (; step < cfg.steps; ++step) {
        // --- discriminator update ---
        Batch real = data.next(cfg.batch_size);
        std::vector<double> t_real(static_cast<size_t>(real.x.rows)), t_fake(t_real.size());
        for (auto& t : t_real) t = sample_shifted_timestep(rng, cfg.shift_s);
        for (auto& t : t_fake) t = sample_shifted_timestep(rng, cfg.shift_s);
        Tensor z = rng.normal_tensor(real.x.rows, real.x.cols);
        Tensor fake = generator_forward(gen, z, real.labels);  // no grad into G on the D step
        Tensor perturbed = real.x;
        for (auto& v : perturbed.v) v += cfg.sigma * rng.normal();

        Var l_real = disc.logits(ag::constant(real.x), t_real, real.labels);
        Var l_pert = disc.logits(ag::constant(std::move(perturbed)), t_real, real.labels);  // same t draw
        Var l_fake = disc.logits(ag::constant(std::move(fake)), t_fake, real.labels);
        Var d_real = d_real_loss(l_real);
        Var d_fake = d_fake_loss(l_fake);
        Var ar1 = ag::mean_all(ag::square(ag::sub(l_real, l_pert)));
        Var d_total = ag::add(ag::add(d_real, d_fake), ag::scale(ar1, cfg.lambda));
        check_finite_or_abort(d_total->item(), step, "apt", log);
        ag::backward(d_total);
        d_opt_backbone.step();
        d_opt_heads.step();
        disc.zero_grad();
        ++d_steps;

        // --- generator update ---
        Batch cond_batch = data.next(cfg.batch_size);
        Tensor z2 = rng.normal_tensor(cond_batch.x.rows, cond_batch.x.cols);
        std::vector<double> t_g(static_cast<size_t>(z2.rows));
        for (auto& t : t_g) t = sample_shifted_timestep(rng, cfg.shift_s);
        Var fake_g = generator_forward(gen, ag::constant(std::move(z2)), cond_batch.labels);
        Var gl = g_loss(disc.logits(fake_g, t_g, cond_batch.labels));
        check_finite_or_abort(gl->item(), step, "apt", log);
        ag::backward(gl);
        g_opt.step();
        gen.zero_grad();
        disc.zero_grad();  // the G step leaked gradients into D; discard them
        ++g_steps;

        ema_update(ema, gen.params(), cfg.ema_decay);
        if (step + 1 == cfg.ema_adopt_step) adopted_ema = ema;

        LossBreakdown lb;
        lb.d_real = d_real->item();
        lb.d_fake = d_fake->item();
        lb.ar1 = ar1->item();
        lb.lambda = cfg.lambda;
        lb.sigma = cfg.sigma;
        lb.d_total = d_total->item();
        lb.g_loss = gl->item();
        monitor.push(lb.d_real + lb.d_fake);
        collapsed = detect_collapse(monitor);
        if (log) log->log_step(step, "apt", lb, cfg.lr, collapsed);
        if (collapsed) {
            ++step;
            break;
        }
    }
    if (d_steps != g_steps) throw std::logic_error("apt: update counts diverged from 1:1 alternation");

    TrainResult r;
    r.final_ckpt = Checkpoint::from_params(gen.params(), mcfg, "apt", step, cfg.seed);
    const std::vector<Tensor>& ema_used = adopted_ema ? *adopted_ema : ema;
    Checkpoint ema_ckpt = r.final_ckpt;
    ema_ckpt.stage = "apt_ema";
    size_t i = 0;
    for (auto& [n, p] : gen.params()) ema_ckpt.arrays[n] = ema_used[i++];
    r.ema_ckpt = std::move(ema_ckpt);
    r.collapsed = collapsed;
    r.steps_run = step;
    return r;
}

Tensor sample_multistep(const Backbone& gen, const Tensor& z, const std::vector<int>& ids,
                        int n_steps, double t_mid, Rng& rng) {
    if (n_steps < 1) throw std::invalid_argument("sample_multistep: n_steps must be >= 1");
    if (n_steps > 2)
        std::cerr << "[apt-lab] warning: more than 2 inference steps tends to introduce artifacts\n";
    Tensor x = generator_forward(gen, z, ids);
    for (int k = 1; k < n_steps; ++k) {
        Tensor z_fresh = rng.normal_tensor(z.rows, z.cols);
        x = generator_forward(gen, interpolate(x, z_fresh, t_mid), ids);
    }
    return x;
}

}  // namespace aptlab
