#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gridse/grid_io.hpp"
#include "gridse/train.hpp"

namespace gridse::report {

using harness::RunOutcome;
using harness::RunReport;

OrderedJson report_to_json(const RunReport& report, const Provenance& provenance);
RunReport report_from_json(const nlohmann::json& doc);

/// Long-form per-run table: run_id, model, kind, layers, lr, noise, MAEs.
std::string runs_csv(const RunReport& report, const Provenance& provenance);

/// Test MAE by (model kind, layer count) for each noise level (the layer
/// sweep view).
std::string layers_csv(const RunReport& report, const Provenance& provenance);

/// Best run per model kind and noise level with relative error to the best
/// model in percent.
std::string summary_csv(const RunReport& report, const Provenance& provenance);

struct ChartSeries {
    std::string label;
    std::vector<std::pair<double, double>> points;
};

/// Minimal deterministic SVG line chart.
std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<ChartSeries>& series,
                           const Provenance& provenance);

/// Writes report.json, runs.csv, layers.csv, summary.csv and the two
/// standard charts (MAE vs layers, MAE vs noise) into out_dir.
void write_report_files(const std::filesystem::path& out_dir, const RunReport& report,
                        const Provenance& provenance);

}  // namespace gridse::report
