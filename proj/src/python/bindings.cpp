#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "aptlab/pipeline.hpp"
#include "aptlab/schedules.hpp"

namespace py = pybind11;
using namespace aptlab;

namespace {

Tensor to_tensor(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D float array");
    Tensor t(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::copy(a.data(), a.data() + t.size(), t.v.begin());
    return t;
}

py::array_t<double> to_array(const Tensor& t) {
    py::array_t<double> a({t.rows, t.cols});
    std::copy(t.v.begin(), t.v.end(), a.mutable_data());
    return a;
}

DatasetSpec spec_from(const RunConfig& cfg) { return cfg.dataset_spec(); }

Backbone load_backbone(const std::string& ckpt_path, Checkpoint& out_ckpt) {
    out_ckpt = Checkpoint::load(ckpt_path);
    Rng rng(0);
    Backbone model(out_ckpt.config, rng);
    out_ckpt.load_into(model.params());
    return model;
}

}  // namespace

PYBIND11_MODULE(_aptlab, m) {
    m.doc() = "apt-lab core: flow-matching pretraining, consistency distillation and "
              "adversarial post-training at desk scale";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<IoError>(m, "IoError", PyExc_IOError);

    py::class_<RunConfig>(m, "RunConfig")
        .def(py::init<>())
        .def_static("from_file", &RunConfig::from_file, py::arg("path"))
        .def_static("from_json_text", &RunConfig::from_json_text, py::arg("text"))
        .def("apply_override", &RunConfig::apply_override, py::arg("key_equals_value"))
        .def("apply_overrides", &RunConfig::apply_overrides, py::arg("kvs"))
        .def("get_int", &RunConfig::get_int)
        .def("get_double", &RunConfig::get_double)
        .def("get_bool", &RunConfig::get_bool)
        .def("get_string", &RunConfig::get_string, py::return_value_policy::copy)
        .def("to_json", &RunConfig::to_json)
        .def("save", &RunConfig::save, py::arg("path"))
        .def("validate", &RunConfig::validate)
        .def_static("schema_docs", &RunConfig::schema_docs);

    py::class_<MetricsRecord>(m, "MetricsRecord")
        .def_readonly("run_id", &MetricsRecord::run_id)
        .def_readonly("stage", &MetricsRecord::stage)
        .def_readonly("n_steps_used", &MetricsRecord::n_steps_used)
        .def_readonly("energy_distance", &MetricsRecord::energy_distance)
        .def_readonly("mode_coverage", &MetricsRecord::mode_coverage)
        .def_readonly("frechet_feature", &MetricsRecord::frechet_feature)
        .def_readonly("collapse_flag", &MetricsRecord::collapse_flag)
        .def_readonly("seed", &MetricsRecord::seed);

    // stage drivers: each reads/writes checkpoints and logs under cfg out_dir
    m.def("run_pretrain", &run_pretrain, py::arg("cfg"));
    m.def("run_distill", &run_distill, py::arg("cfg"));
    m.def("run_apt", [](const RunConfig& cfg) {
        TrainResult r = run_apt(cfg);
        return py::make_tuple(r.collapsed, r.steps_run);
    }, py::arg("cfg"), "Runs adversarial post-training; returns (collapsed, steps_run).");
    m.def("run_eval", &run_eval, py::arg("cfg"));
    m.def("run_traverse", &run_traverse, py::arg("cfg"));
    m.def("run_probe", &run_probe, py::arg("cfg"));
    m.def("run_report", &run_report, py::arg("cfg"));

    m.def("shift", &shift, py::arg("t"), py::arg("s"),
          "Timestep shift s*t / (1 + (s-1)*t).");
    m.def("shift_inverse", &shift_inverse, py::arg("t"), py::arg("s"));

    m.def("energy_distance",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
             const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
              return energy_distance(to_tensor(a), to_tensor(b));
          },
          py::arg("a"), py::arg("b"));

    m.def("mode_coverage",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& samples,
             const RunConfig& cfg) {
              ModeCoverage mc = mode_coverage(to_tensor(samples), spec_from(cfg));
              py::dict d;
              d["covered"] = mc.covered;
              d["total_modes"] = mc.total_modes;
              d["fraction"] = mc.fraction();
              d["high_quality_fraction"] = mc.high_quality_fraction;
              return d;
          },
          py::arg("samples"), py::arg("cfg"));

    m.def("feature_frechet",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
             const py::array_t<double, py::array::c_style | py::array::forcecast>& b,
             int feature_dim, uint64_t seed) {
              Tensor ta = to_tensor(a), tb = to_tensor(b);
              return feature_frechet(ta, tb, random_projection_features(ta.cols, feature_dim, seed));
          },
          py::arg("a"), py::arg("b"), py::arg("feature_dim") = 16, py::arg("seed") = 0);

    m.def("preference_score", &preference_score, py::arg("good"), py::arg("similar"), py::arg("bad"));

    m.def("sample_real",
          [](const RunConfig& cfg, int n, uint64_t seed) {
              Rng rng(seed);
              return to_array(sample_real(spec_from(cfg), rng, n).x);
          },
          py::arg("cfg"), py::arg("n"), py::arg("seed") = 0,
          "Draws n samples from the configured real distribution.");

    m.def("one_step_samples",
          [](const std::string& ckpt_path, int n, uint64_t seed) {
              Checkpoint ck;
              Backbone model = load_backbone(ckpt_path, ck);
              Rng rng(seed);
              Tensor z = rng.normal_tensor(n, ck.config.sample_dim());
              std::vector<int> ids(static_cast<size_t>(n));
              for (auto& id : ids) id = rng.uniform_int(ck.config.num_classes);
              return to_array(generator_forward(model, z, ids));
          },
          py::arg("ckpt_path"), py::arg("n"), py::arg("seed") = 0,
          "One-step G(z, c) samples from a distilled/apt checkpoint.");

    m.def("euler_samples",
          [](const std::string& ckpt_path, int n, int n_steps, double cfg_scale, uint64_t seed) {
              Checkpoint ck;
              Backbone model = load_backbone(ckpt_path, ck);
              Rng rng(seed);
              Tensor z = rng.normal_tensor(n, ck.config.sample_dim());
              std::vector<int> ids(static_cast<size_t>(n));
              for (auto& id : ids) id = rng.uniform_int(ck.config.num_classes);
              return to_array(euler_sample(model, z, ids, n_steps, cfg_scale));
          },
          py::arg("ckpt_path"), py::arg("n"), py::arg("n_steps") = 25, py::arg("cfg_scale") = 7.5,
          py::arg("seed") = 0, "Multi-step Euler samples from a pretrain-stage checkpoint.");

    m.def("checkpoint_stage",
          [](const std::string& path) { return Checkpoint::load(path).stage; }, py::arg("path"));
}
