#pragma once

#include <map>
#include <string>
#include <vector>

#include "aptlab/eval.hpp"
#include "aptlab/losses.hpp"

namespace aptlab {

// Minimal SVG plotting: line charts, scatter overlays, strips. Vector output
// keeps the core free of image codecs.
struct SvgSeries {
    std::string label;
    std::string color = "#2b6cb0";
    std::vector<double> x, y;
};

void svg_line_plot(const std::string& path, const std::string& title,
                   const std::vector<SvgSeries>& series, double hline = std::nan(""),
                   const std::string& hline_label = "");
void svg_scatter(const std::string& path, const std::string& title,
                 const std::vector<SvgSeries>& series);

struct RunCurves {
    std::vector<LossBreakdown> steps;
};

// Writes metrics.jsonl, summary.txt, and the plot set for whatever inputs are
// present (loss curves with the collapse threshold line when any record
// carries a collapse flag, sample scatter overlays, traversal strips,
// probe-MSE-vs-depth).
void emit_report(const std::vector<MetricsRecord>& records, const std::string& out_dir,
                 const std::map<std::string, RunCurves>& curves = {},
                 double collapse_threshold = 0.05);

void plot_sample_overlay(const std::string& path, const Tensor& real, const Tensor& generated);
void plot_traversal_strip(const std::string& path, const TraversalResult& traversal);
void plot_probe_mse(const std::string& path, const std::vector<double>& mse_per_layer);

}  // namespace aptlab
