#include "aptlab/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "aptlab/schedules.hpp"

namespace aptlab {

namespace fs = std::filesystem;
using nlohmann::json;

std::string pretrain_ckpt_path(const std::string& d) { return d + "/pretrain.aptk"; }
std::string distill_ckpt_path(const std::string& d) { return d + "/distill.aptk"; }
std::string apt_ckpt_path(const std::string& d) { return d + "/apt.aptk"; }
std::string apt_ema_ckpt_path(const std::string& d) { return d + "/apt_ema.aptk"; }

DataSource make_data_source(const RunConfig& cfg, uint64_t seed_offset) {
    DatasetSpec spec = cfg.dataset_spec();
    uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed")) * 1000003ull + seed_offset;
    if (spec.kind == DatasetKind::image_corpus) return DataSource(load_image_corpus(spec.path), seed);
    return DataSource(spec, seed);
}

static void prepare_dir(const RunConfig& cfg, const std::string& stage) {
    const std::string& d = cfg.get_string("out_dir");
    fs::create_directories(d);
    cfg.save(d + "/resolved_config_" + stage + ".json");
}

static void require_ckpt(const std::string& path, const std::string& needed_stage) {
    if (!fs::exists(path))
        throw ConfigError("missing prerequisite checkpoint '" + path + "': run the '" + needed_stage +
                          "' stage first");
}

void run_pretrain(const RunConfig& cfg) {
    cfg.validate();
    prepare_dir(cfg, "pretrain");
    const std::string& d = cfg.get_string("out_dir");
    DataSource data = make_data_source(cfg);
    MetricsLog log(d + "/pretrain_log.jsonl");
    TrainResult r = pretrain_diffusion(cfg.model_config(), cfg.stage_config("pretrain"), data, &log);
    r.final_ckpt.save(pretrain_ckpt_path(d));
}

void run_distill(const RunConfig& cfg) {
    cfg.validate();
    prepare_dir(cfg, "distill");
    const std::string& d = cfg.get_string("out_dir");
    require_ckpt(pretrain_ckpt_path(d), "pretrain");
    Checkpoint teacher = Checkpoint::load(pretrain_ckpt_path(d));
    DataSource data = make_data_source(cfg, 2);
    MetricsLog log(d + "/distill_log.jsonl");
    TrainResult r = distill_consistency(cfg.model_config(), cfg.stage_config("distill"), teacher, data, &log);
    r.final_ckpt.save(distill_ckpt_path(d));
}

TrainResult run_apt(const RunConfig& cfg) {
    cfg.validate();
    if (cfg.get_double("lambda") == 0.0)
        std::cerr << "[apt-lab] warning: lambda=0 disables the R1 penalty (paper-faithful value is 100)\n";
    prepare_dir(cfg, "apt");
    const std::string& d = cfg.get_string("out_dir");
    require_ckpt(distill_ckpt_path(d), "distill");
    require_ckpt(pretrain_ckpt_path(d), "pretrain");
    Checkpoint distilled = Checkpoint::load(distill_ckpt_path(d));
    Checkpoint diffusion = Checkpoint::load(pretrain_ckpt_path(d));
    DataSource data = make_data_source(cfg, 3);
    MetricsLog log(d + "/apt_log.jsonl");
    TrainResult r = apt_train(cfg.model_config(), cfg.stage_config("apt"), cfg.head_config(), distilled,
                              diffusion, data, &log);
    r.final_ckpt.save(apt_ckpt_path(d));
    if (r.ema_ckpt) r.ema_ckpt->save(apt_ema_ckpt_path(d));
    return r;
}

static std::vector<int> eval_labels(const ModelConfig& m, Rng& rng, int n) {
    std::vector<int> ids(static_cast<size_t>(n));
    int classes = std::max(1, m.num_classes);
    for (auto& id : ids) id = rng.uniform_int(classes);
    return ids;
}

MetricsRecord evaluate_checkpoint(const RunConfig& cfg, const Checkpoint& ckpt, int n_steps,
                                  const std::string& run_id) {
    ModelConfig m = ckpt.config;
    Rng rng(static_cast<uint64_t>(cfg.get_int("seed")) * 7919ull + 17);
    Backbone model(m, rng);
    ckpt.load_into(model.params());
    int n = static_cast<int>(cfg.get_int("eval_samples"));
    Tensor z = rng.normal_tensor(n, m.sample_dim());
    std::vector<int> ids = eval_labels(m, rng, n);
    Tensor gen;
    if (ckpt.stage == "pretrain") {
        gen = euler_sample(model, z, ids, n_steps, cfg.get_double("cfg_scale"));
    } else {
        Rng noise_rng = rng.fork();
        gen = sample_multistep(model, z, ids, n_steps, cfg.get_double("t_mid"), noise_rng);
    }
    DataSource data = make_data_source(cfg, 99);
    Batch real = data.next(n);

    MetricsRecord rec;
    rec.run_id = run_id;
    rec.stage = ckpt.stage;
    rec.n_steps_used = n_steps;
    rec.seed = static_cast<uint64_t>(cfg.get_int("seed"));
    rec.energy_distance = energy_distance(gen, real.x);
    DatasetSpec spec = cfg.dataset_spec();
    if (spec.kind == DatasetKind::gmm_ring) rec.mode_coverage = mode_coverage(gen, spec).fraction();
    int fdim = std::min(8, m.sample_dim());
    if (fdim < 2) fdim = 2;
    rec.frechet_feature =
        feature_frechet(gen, real.x, random_projection_features(m.sample_dim(), fdim, 1234567));
    return rec;
}

static std::vector<MetricsRecord> eval_all_stages(const RunConfig& cfg) {
    const std::string& d = cfg.get_string("out_dir");
    std::vector<MetricsRecord> recs;
    struct Entry {
        std::string path, id;
        int steps;
    };
    std::vector<Entry> entries = {
        {pretrain_ckpt_path(d), "teacher_euler25", static_cast<int>(cfg.get_int("euler_steps"))},
        {distill_ckpt_path(d), "distilled_1step", 1},
        {apt_ckpt_path(d), "apt_1step", 1},
        {apt_ema_ckpt_path(d), "apt_ema_1step", 1},
    };
    for (auto& e : entries) {
        if (!fs::exists(e.path)) continue;
        recs.push_back(evaluate_checkpoint(cfg, Checkpoint::load(e.path), e.steps, e.id));
    }
    if (recs.empty()) throw ConfigError("eval: no checkpoints found in " + d + "; run a training stage first");
    return recs;
}

void run_eval(const RunConfig& cfg) {
    cfg.validate();
    const std::string& d = cfg.get_string("out_dir");
    auto recs = eval_all_stages(cfg);
    std::map<std::string, RunCurves> curves;
    if (fs::exists(d + "/apt_log.jsonl")) {
        RunCurves rc;
        std::ifstream is(d + "/apt_log.jsonl");
        std::string line;
        while (std::getline(is, line)) {
            auto j = json::parse(line);
            if (!j.contains("d_real")) continue;
            LossBreakdown lb;
            lb.d_real = j["d_real"];
            lb.d_fake = j["d_fake"];
            lb.ar1 = j["ar1"];
            lb.d_total = j["d_total"];
            lb.g_loss = j["g_loss"];
            rc.steps.push_back(lb);
        }
        curves["apt"] = std::move(rc);
    }
    emit_report(recs, d + "/report", curves, cfg.get_double("collapse_threshold"));

    // scatter overlay for 2D tasks
    DatasetSpec spec = cfg.dataset_spec();
    if (spec.kind != DatasetKind::image_corpus) {
        std::string best = fs::exists(apt_ema_ckpt_path(d)) ? apt_ema_ckpt_path(d)
                           : fs::exists(apt_ckpt_path(d))   ? apt_ckpt_path(d)
                           : fs::exists(distill_ckpt_path(d)) ? distill_ckpt_path(d)
                                                              : pretrain_ckpt_path(d);
        Checkpoint ck = Checkpoint::load(best);
        Rng rng(static_cast<uint64_t>(cfg.get_int("seed")) * 31 + 5);
        Backbone model(ck.config, rng);
        ck.load_into(model.params());
        int n = std::min<int>(1024, static_cast<int>(cfg.get_int("eval_samples")));
        Tensor z = rng.normal_tensor(n, ck.config.sample_dim());
        std::vector<int> ids = eval_labels(ck.config, rng, n);
        Tensor gen = ck.stage == "pretrain"
                         ? euler_sample(model, z, ids, static_cast<int>(cfg.get_int("euler_steps")),
                                        cfg.get_double("cfg_scale"))
                         : generator_forward(model, z, ids);
        DataSource data = make_data_source(cfg, 98);
        plot_sample_overlay(d + "/report/samples.svg", data.next(n).x, gen);
    }
}

void run_traverse(const RunConfig& cfg) {
    cfg.validate();
    const std::string& d = cfg.get_string("out_dir");
    std::string path = fs::exists(apt_ema_ckpt_path(d)) ? apt_ema_ckpt_path(d) : apt_ckpt_path(d);
    require_ckpt(path, "apt");
    Checkpoint ck = Checkpoint::load(path);
    Rng rng(static_cast<uint64_t>(cfg.get_int("seed")) * 101 + 7);
    Backbone model(ck.config, rng);
    ck.load_into(model.params());
    Tensor z_a = rng.normal_tensor(1, ck.config.sample_dim());
    Tensor z_b = rng.normal_tensor(1, ck.config.sample_dim());
    DatasetSpec spec = cfg.dataset_spec();
    auto tr = latent_traversal(model, z_a, z_b, 0, static_cast<int>(cfg.get_int("n_frames")),
                               spec.kind == DatasetKind::gmm_ring ? &spec : nullptr);
    fs::create_directories(d + "/report");
    plot_traversal_strip(d + "/report/traversal.svg", tr);
    std::ofstream os(d + "/report/traversal.txt");
    os << "transition_sharpness\t" << tr.transition_sharpness << "\n";
    for (size_t f = 0; f < tr.nearest_mode.size(); ++f)
        os << "frame " << f << "\tmode " << tr.nearest_mode[f] << "\n";
    std::cout << "traversal sharpness: " << tr.transition_sharpness << "\n";
}

void run_probe(const RunConfig& cfg) {
    cfg.validate();
    const std::string& d = cfg.get_string("out_dir");
    std::string path = fs::exists(apt_ema_ckpt_path(d)) ? apt_ema_ckpt_path(d) : apt_ckpt_path(d);
    require_ckpt(path, "apt");
    Checkpoint ck = Checkpoint::load(path);
    Rng rng(static_cast<uint64_t>(cfg.get_int("seed")) * 103 + 11);
    Backbone model(ck.config, rng);
    ck.load_into(model.params());
    auto rep = train_layer_probes(model, rng, static_cast<int>(cfg.get_int("probe_samples")),
                                  static_cast<int>(cfg.get_int("probe_steps")), 0.05);
    fs::create_directories(d + "/report");
    plot_probe_mse(d + "/report/probe_mse.svg", rep.mse);
    std::ofstream os(d + "/report/probe_mse.txt");
    for (size_t l = 0; l < rep.mse.size(); ++l) os << "layer " << l + 1 << "\t" << rep.mse[l] << "\n";
}

void run_report(const RunConfig& cfg) { run_eval(cfg); }

static void expand_grid(const std::vector<std::string>& grid, size_t i, std::vector<std::string>& cur,
                        std::vector<std::vector<std::string>>& out) {
    if (i == grid.size()) {
        out.push_back(cur);
        return;
    }
    auto eq = grid[i].find('=');
    if (eq == std::string::npos) throw ConfigError("ablate: grid entry must be key=v1,v2,...");
    std::string key = grid[i].substr(0, eq);
    std::stringstream ss(grid[i].substr(eq + 1));
    std::string v;
    while (std::getline(ss, v, ',')) {
        cur.push_back(key + "=" + v);
        expand_grid(grid, i + 1, cur, out);
        cur.pop_back();
    }
}

AblateSummary run_ablate(const RunConfig& base, const std::vector<std::string>& grid, int n_seeds) {
    std::vector<std::vector<std::string>> combos;
    std::vector<std::string> cur;
    expand_grid(grid, 0, cur, combos);
    if (combos.empty()) throw ConfigError("ablate: empty grid");
    const std::string root = base.get_string("out_dir");
    AblateSummary summary;
    for (int s = 0; s < n_seeds; ++s) {
        uint64_t seed = static_cast<uint64_t>(base.get_int("seed")) + static_cast<uint64_t>(s);
        RunConfig seed_cfg = base;
        seed_cfg.set("seed", static_cast<int64_t>(seed));
        seed_cfg.set("out_dir", root + "/seed" + std::to_string(s));
        // pretrain/distill are shared across the grid for this seed
        if (!fs::exists(pretrain_ckpt_path(seed_cfg.get_string("out_dir")))) run_pretrain(seed_cfg);
        if (!fs::exists(distill_ckpt_path(seed_cfg.get_string("out_dir")))) run_distill(seed_cfg);
        for (auto& combo : combos) {
            RunConfig child = seed_cfg;
            child.apply_overrides(combo);
            std::string tag;
            for (auto& kv : combo) tag += (tag.empty() ? "" : "_") + kv;
            for (auto& ch : tag)
                if (ch == '=') ch = '-';
            std::string child_dir = root + "/seed" + std::to_string(s) + "/" + tag;
            fs::create_directories(child_dir);
            // children read the shared stage checkpoints via symlink-free copies
            fs::copy_file(pretrain_ckpt_path(seed_cfg.get_string("out_dir")), pretrain_ckpt_path(child_dir),
                          fs::copy_options::overwrite_existing);
            fs::copy_file(distill_ckpt_path(seed_cfg.get_string("out_dir")), distill_ckpt_path(child_dir),
                          fs::copy_options::overwrite_existing);
            child.set("out_dir", child_dir);
            TrainResult r = run_apt(child);
            Checkpoint eval_ck = r.ema_ckpt ? *r.ema_ckpt : r.final_ckpt;
            MetricsRecord rec = evaluate_checkpoint(child, eval_ck, 1, tag);
            AblateCell cell;
            std::string combo_key;
            for (auto& kv : combo) combo_key += (combo_key.empty() ? "" : " ") + kv;
            cell.overrides = combo_key;
            cell.seed = seed;
            cell.collapsed = r.collapsed;
            cell.energy_distance = rec.energy_distance;
            cell.mode_coverage = rec.mode_coverage;
            summary.cells.push_back(cell);
            summary.collapse_counts[combo_key] += r.collapsed ? 1 : 0;
        }
    }
    write_ablate_summary(summary, root + "/ablate_summary.txt");
    return summary;
}

void write_ablate_summary(const AblateSummary& s, const std::string& path) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("ablate: cannot write " + path);
    os << "overrides\tseed\tcollapsed\tenergy_distance\tmode_coverage\n";
    for (auto& c : s.cells)
        os << c.overrides << "\t" << c.seed << "\t" << (c.collapsed ? 1 : 0) << "\t" << c.energy_distance
           << "\t" << c.mode_coverage << "\n";
    os << "\ncollapse counts\n";
    for (auto& [k, v] : s.collapse_counts) os << k << "\t" << v << "\n";
}

}  // namespace aptlab
