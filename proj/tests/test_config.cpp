#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "aptlab/config.hpp"

using namespace aptlab;

TEST_CASE("empty config text yields the full default run") {
    RunConfig cfg = RunConfig::from_json_text("");
    CHECK(cfg.get_string("dataset") == "gmm_ring");
    CHECK(cfg.get_int("depth") == 12);
    CHECK(cfg.get_int("width") == 128);
    CHECK(cfg.get_double("lambda") == 100.0);
    CHECK(cfg.get_double("ema_decay") == 0.995);
    CHECK(cfg.get_int("ema_adopt_step") == 350);
    CHECK(cfg.get_double("cfg_scale") == 7.5);
    CHECK_FALSE(cfg.get_bool("allow_distilled_disc_init"));
    ModelConfig m = cfg.model_config();
    CHECK(m.depth == 12);
    CHECK(m.sample_dim() == 2);
    CHECK(m.num_classes == 8);
    CHECK(cfg.head_config().layer_indices == std::vector<int>{5, 9, 12});
    CHECK(RunConfig::from_json_text("  \n\t ").get_int("depth") == 12);
    CHECK(RunConfig::from_json_text("{}").get_int("depth") == 12);
}

TEST_CASE("unknown keys are rejected with a nearest-key suggestion") {
    CHECK_THROWS_WITH_AS(RunConfig::from_json_text(R"({"lamda": 0})"),
                         doctest::Contains("did you mean 'lambda'"), ConfigError);
    CHECK_THROWS_WITH_AS(RunConfig::from_json_text(R"({"bath_size": 64})"),
                         doctest::Contains("did you mean 'batch_size'"), ConfigError);
    // far from everything: plain unknown-key error
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"completely_unrelated_zzz": 1})"), ConfigError);
}

TEST_CASE("type checking with int-to-double coercion") {
    RunConfig cfg = RunConfig::from_json_text(R"({"lambda": 50, "depth": 6})");
    CHECK(cfg.get_double("lambda") == 50.0);  // int literal accepted for a double field
    CHECK(cfg.get_int("depth") == 6);
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"depth": 6.5})"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"dataset": 3})"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"depth": [1, 2]})"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text(R"(["not", "an", "object"])"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text("{bad json"), ConfigError);
}

TEST_CASE("key=value overrides take precedence over the file") {
    RunConfig cfg = RunConfig::from_json_text(R"({"lambda": 50, "seed": 3})");
    cfg.apply_overrides({"lambda=0", "depth=4", "dataset=checkerboard", "allow_distilled_disc_init=true"});
    CHECK(cfg.get_double("lambda") == 0.0);
    CHECK(cfg.get_int("depth") == 4);
    CHECK(cfg.get_int("seed") == 3);  // untouched file value survives
    CHECK(cfg.get_string("dataset") == "checkerboard");
    CHECK(cfg.get_bool("allow_distilled_disc_init"));
    cfg.apply_override("allow_distilled_disc_init=0");
    CHECK_FALSE(cfg.get_bool("allow_distilled_disc_init"));

    CHECK_THROWS_AS(cfg.apply_override("no_equals_sign"), ConfigError);
    CHECK_THROWS_AS(cfg.apply_override("depth=abc"), ConfigError);
    CHECK_THROWS_AS(cfg.apply_override("depth=4x"), ConfigError);
    CHECK_THROWS_AS(cfg.apply_override("lambda=1.5.2"), ConfigError);
    CHECK_THROWS_AS(cfg.apply_override("allow_distilled_disc_init=maybe"), ConfigError);
    CHECK_THROWS_WITH_AS(cfg.apply_override("lamda=1"), doctest::Contains("did you mean 'lambda'"),
                         ConfigError);
}

TEST_CASE("resolved config round-trips through json exactly") {
    RunConfig cfg;
    cfg.apply_overrides({"lambda=12.5", "depth=6", "out_dir=runs/x", "seed=9"});
    std::string text = cfg.to_json();
    RunConfig back = RunConfig::from_json_text(text);
    CHECK(back.to_json() == text);  // saved resolved config reproduces the run settings
    CHECK(back.get_double("lambda") == 12.5);
    CHECK(back.get_string("out_dir") == "runs/x");

    std::string path = "config_roundtrip_test.json";
    cfg.save(path);
    RunConfig loaded = RunConfig::from_file(path);
    CHECK(loaded.to_json() == text);
    std::remove(path.c_str());
    CHECK_THROWS_AS(RunConfig::from_file("no_such_config.json"), IoError);
}

TEST_CASE("derived views: stages, heads, dataset") {
    RunConfig cfg = RunConfig::from_json_text(
        R"({"depth": 6, "head_layers": "2,4,6", "apt_steps": 77, "shift_s": 3.0, "sigma": 0.01})");
    StageConfig apt = cfg.stage_config("apt");
    CHECK(apt.steps == 77);
    CHECK(apt.shift_s == 3.0);
    CHECK(apt.sigma == 0.01);
    CHECK(apt.stage == "apt");
    CHECK(cfg.stage_config("pretrain").steps == 4000);
    CHECK(cfg.stage_config("distill").steps == 2000);
    CHECK_THROWS_AS(cfg.stage_config("bogus"), ConfigError);
    CHECK(cfg.head_config().layer_indices == std::vector<int>{2, 4, 6});

    RunConfig bad_heads = RunConfig::from_json_text(R"({"depth": 6, "head_layers": "2,4,5"})");
    CHECK_THROWS_AS(bad_heads.head_config(), ConfigError);

    DatasetSpec spec = cfg.dataset_spec();
    CHECK(spec.kind == DatasetKind::gmm_ring);
    CHECK(spec.n_modes == 8);
}

TEST_CASE("validate rejects out-of-range settings") {
    auto bad = [](const std::string& kv) {
        RunConfig cfg;
        cfg.apply_override(kv);
        return cfg;
    };
    CHECK_THROWS_AS(bad("batch_size=0").validate(), ConfigError);
    CHECK_THROWS_AS(bad("shift_s=0.5").validate(), ConfigError);
    CHECK_THROWS_AS(bad("sigma=0").validate(), ConfigError);
    CHECK_THROWS_AS(bad("lambda=-1").validate(), ConfigError);
    CHECK_THROWS_AS(bad("depth=2").validate(), ConfigError);
    CHECK_THROWS_AS(bad("width=130").validate(), ConfigError);  // not divisible by heads
    CHECK_NOTHROW(RunConfig().validate());
    CHECK_NOTHROW(bad("lambda=0").validate());  // the aR1-off ablation is legal
}

TEST_CASE("schema docs cover every key") {
    RunConfig cfg;
    for (auto& [key, doc] : RunConfig::schema_docs()) {
        CHECK_FALSE(doc.empty());
        CHECK_NOTHROW(cfg.to_json().find(key));
    }
    CHECK(RunConfig::schema_docs().size() >= 30);
}
