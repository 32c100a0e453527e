#include "aptlab/report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace aptlab {

namespace {

constexpr int kW = 640, kH = 400, kPad = 48;

struct Range {
    double lo = 0, hi = 1;
    void extend(double v) {
        if (!std::isfinite(v)) return;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    double map(double v, double a, double b) const {
        if (hi <= lo) return (a + b) / 2;
        return a + (v - lo) / (hi - lo) * (b - a);
    }
};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

void svg_open(std::ofstream& os, const std::string& title) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << "<text x=\"" << kW / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title
       << "</text>\n";
}

void axes(std::ofstream& os, const Range& rx, const Range& ry) {
    os << "<line x1=\"" << kPad << "\" y1=\"" << kH - kPad << "\" x2=\"" << kW - kPad << "\" y2=\""
       << kH - kPad << "\" stroke=\"black\"/>\n"
       << "<line x1=\"" << kPad << "\" y1=\"" << kPad << "\" x2=\"" << kPad << "\" y2=\"" << kH - kPad
       << "\" stroke=\"black\"/>\n"
       << "<text x=\"" << kPad << "\" y=\"" << kH - kPad + 16 << "\" font-size=\"10\">" << fmt(rx.lo)
       << "</text>\n"
       << "<text x=\"" << kW - kPad << "\" y=\"" << kH - kPad + 16
       << "\" text-anchor=\"end\" font-size=\"10\">" << fmt(rx.hi) << "</text>\n"
       << "<text x=\"" << kPad - 4 << "\" y=\"" << kH - kPad << "\" text-anchor=\"end\" font-size=\"10\">"
       << fmt(ry.lo) << "</text>\n"
       << "<text x=\"" << kPad - 4 << "\" y=\"" << kPad + 4 << "\" text-anchor=\"end\" font-size=\"10\">"
       << fmt(ry.hi) << "</text>\n";
}

}  // namespace

void svg_line_plot(const std::string& path, const std::string& title,
                   const std::vector<SvgSeries>& series, double hline, const std::string& hline_label) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("plot: cannot open " + path);
    Range rx, ry;
    rx.lo = ry.lo = std::numeric_limits<double>::infinity();
    rx.hi = ry.hi = -std::numeric_limits<double>::infinity();
    for (auto& s : series)
        for (size_t i = 0; i < s.x.size(); ++i) {
            rx.extend(s.x[i]);
            ry.extend(s.y[i]);
        }
    if (std::isfinite(hline)) ry.extend(hline);
    if (!std::isfinite(rx.lo)) rx = ry = Range{};
    svg_open(os, title);
    axes(os, rx, ry);
    int li = 0;
    for (auto& s : series) {
        os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
        for (size_t i = 0; i < s.x.size(); ++i)
            os << fmt(rx.map(s.x[i], kPad, kW - kPad)) << "," << fmt(ry.map(s.y[i], kH - kPad, kPad)) << " ";
        os << "\"/>\n";
        os << "<text x=\"" << kW - kPad << "\" y=\"" << kPad + 14 * li++ << "\" text-anchor=\"end\" fill=\""
           << s.color << "\" font-size=\"11\">" << s.label << "</text>\n";
    }
    if (std::isfinite(hline)) {
        double y = ry.map(hline, kH - kPad, kPad);
        os << "<line x1=\"" << kPad << "\" y1=\"" << fmt(y) << "\" x2=\"" << kW - kPad << "\" y2=\""
           << fmt(y) << "\" stroke=\"#c53030\" stroke-dasharray=\"6,4\"/>\n"
           << "<text x=\"" << kPad + 4 << "\" y=\"" << fmt(y - 4)
           << "\" fill=\"#c53030\" font-size=\"11\" class=\"collapse-threshold\">" << hline_label
           << "</text>\n";
    }
    os << "</svg>\n";
}

void svg_scatter(const std::string& path, const std::string& title, const std::vector<SvgSeries>& series) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("plot: cannot open " + path);
    Range rx, ry;
    rx.lo = ry.lo = std::numeric_limits<double>::infinity();
    rx.hi = ry.hi = -std::numeric_limits<double>::infinity();
    for (auto& s : series)
        for (size_t i = 0; i < s.x.size(); ++i) {
            rx.extend(s.x[i]);
            ry.extend(s.y[i]);
        }
    if (!std::isfinite(rx.lo)) rx = ry = Range{};
    svg_open(os, title);
    axes(os, rx, ry);
    int li = 0;
    for (auto& s : series) {
        for (size_t i = 0; i < s.x.size(); ++i)
            os << "<circle cx=\"" << fmt(rx.map(s.x[i], kPad, kW - kPad)) << "\" cy=\""
               << fmt(ry.map(s.y[i], kH - kPad, kPad)) << "\" r=\"1.6\" fill=\"" << s.color
               << "\" fill-opacity=\"0.5\"/>\n";
        os << "<text x=\"" << kW - kPad << "\" y=\"" << kPad + 14 * li++ << "\" text-anchor=\"end\" fill=\""
           << s.color << "\" font-size=\"11\">" << s.label << "</text>\n";
    }
    os << "</svg>\n";
}

void plot_sample_overlay(const std::string& path, const Tensor& real, const Tensor& generated) {
    SvgSeries sr{.label = "real", .color = "#718096"};
    SvgSeries sg{.label = "generated", .color = "#c05621"};
    for (int i = 0; i < real.rows; ++i) {
        sr.x.push_back(real(i, 0));
        sr.y.push_back(real(i, 1));
    }
    for (int i = 0; i < generated.rows; ++i) {
        sg.x.push_back(generated(i, 0));
        sg.y.push_back(generated(i, 1));
    }
    svg_scatter(path, "sample overlay", {sr, sg});
}

void plot_traversal_strip(const std::string& path, const TraversalResult& traversal) {
    SvgSeries s{.label = "traversal", .color = "#2f855a"};
    for (int f = 0; f < traversal.frames.rows; ++f) {
        s.x.push_back(traversal.frames(f, 0));
        s.y.push_back(traversal.frames.cols > 1 ? traversal.frames(f, 1) : 0.0);
    }
    svg_line_plot(path, "latent traversal (sharpness " + fmt(traversal.transition_sharpness) + ")", {s});
}

void plot_probe_mse(const std::string& path, const std::vector<double>& mse_per_layer) {
    SvgSeries s{.label = "probe MSE", .color = "#6b46c1"};
    for (size_t i = 0; i < mse_per_layer.size(); ++i) {
        s.x.push_back(static_cast<double>(i + 1));
        s.y.push_back(mse_per_layer[i]);
    }
    svg_line_plot(path, "probe MSE vs depth", {s});
}

void emit_report(const std::vector<MetricsRecord>& records, const std::string& out_dir,
                 const std::map<std::string, RunCurves>& curves, double collapse_threshold) {
    if (records.empty()) throw std::invalid_argument("emit_report: no records");
    std::filesystem::create_directories(out_dir);
    write_metrics_file(records, out_dir + "/metrics.jsonl");

    std::ofstream os(out_dir + "/summary.txt", std::ios::binary);
    if (!os) throw IoError("report: cannot open summary.txt");
    os << "run_id\tstage\tn_steps\tenergy_distance\tmode_coverage\tfrechet_feature\tcollapsed\tseed\n";
    char buf[256];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof buf, "%s\t%s\t%d\t%.6f\t%.4f\t%.6f\t%d\t%llu\n", r.run_id.c_str(),
                      r.stage.c_str(), r.n_steps_used, r.energy_distance, r.mode_coverage,
                      r.frechet_feature, r.collapse_flag ? 1 : 0, static_cast<unsigned long long>(r.seed));
        os << buf;
    }

    bool any_collapse = false;
    for (auto& r : records) any_collapse |= r.collapse_flag;
    std::vector<SvgSeries> loss_series;
    static const char* palette[] = {"#2b6cb0", "#c05621", "#2f855a", "#6b46c1", "#b83280"};
    int ci = 0;
    for (auto& [run_id, rc] : curves) {
        SvgSeries s{.label = run_id + " d_real+d_fake", .color = palette[ci++ % 5]};
        for (size_t i = 0; i < rc.steps.size(); ++i) {
            s.x.push_back(static_cast<double>(i));
            s.y.push_back(rc.steps[i].d_real + rc.steps[i].d_fake);
        }
        loss_series.push_back(std::move(s));
    }
    if (!loss_series.empty())
        svg_line_plot(out_dir + "/loss_curves.svg", "discriminator loss", loss_series,
                      any_collapse ? collapse_threshold : std::nan(""), "collapse threshold");

    SvgSeries ed{.label = "energy_distance", .color = "#2b6cb0"};
    for (size_t i = 0; i < records.size(); ++i) {
        ed.x.push_back(static_cast<double>(i));
        ed.y.push_back(records[i].energy_distance);
    }
    svg_line_plot(out_dir + "/metrics_overview.svg", "energy distance per run", {ed});
}

}  // namespace aptlab
