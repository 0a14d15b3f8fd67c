#include "gridse/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace gridse::report {

namespace {

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

std::string provenance_comment(const Provenance& p) {
    return "# config_hash=" + p.config_hash + " seed=" + std::to_string(p.seed) + "\n";
}

}  // namespace

OrderedJson report_to_json(const RunReport& report, const Provenance& provenance) {
    OrderedJson doc;
    doc["schema_version"] = 1;
    auto& runs = doc["runs"] = OrderedJson::array();
    for (const auto& run : report.runs) {
        OrderedJson j;
        j["run_id"] = run.run_id;
        j["model"] = run.model;
        j["spec"] = nn::spec_to_json(run.spec);
        j["lr"] = run.lr;
        j["noise"] = run.noise;
        if (run.error.empty()) {
            j["train_mae"] = run.train_mae;
            if (!std::isnan(run.val_mae)) j["val_mae"] = run.val_mae;
            j["test_mae"] = run.test_mae;
            j["epochs"] = run.epochs_run;
            j["best_epoch"] = run.best_epoch;
            auto& curve = j["curve"] = OrderedJson::array();
            for (const auto& e : run.curve)
                curve.push_back(OrderedJson::array(
                    {e.epoch, e.train_loss, std::isnan(e.val_mae) ? -1.0 : e.val_mae}));
        } else {
            j["error"] = run.error;
        }
        runs.push_back(std::move(j));
    }
    doc["provenance"] = OrderedJson{{"config_hash", provenance.config_hash}, {"seed", provenance.seed}};
    return doc;
}

RunReport report_from_json(const nlohmann::json& doc) {
    RunReport report;
    for (const auto& j : doc.at("runs")) {
        RunOutcome run;
        run.run_id = j.at("run_id").get<int>();
        run.model = j.at("model").get<std::string>();
        run.spec = nn::spec_from_json(j.at("spec"));
        run.lr = j.at("lr").get<double>();
        run.noise = j.at("noise").get<double>();
        if (j.contains("error")) {
            run.error = j.at("error").get<std::string>();
        } else {
            run.train_mae = j.at("train_mae").get<double>();
            run.val_mae = j.contains("val_mae") ? j.at("val_mae").get<double>()
                                                : std::numeric_limits<double>::quiet_NaN();
            run.test_mae = j.at("test_mae").get<double>();
            run.epochs_run = j.at("epochs").get<int>();
            run.best_epoch = j.at("best_epoch").get<int>();
            for (const auto& e : j.at("curve")) {
                harness::EpochStats stats;
                stats.epoch = e[0].get<int>();
                stats.train_loss = e[1].get<double>();
                const double vm = e[2].get<double>();
                stats.val_mae = vm < 0.0 ? std::numeric_limits<double>::quiet_NaN() : vm;
                run.curve.push_back(stats);
            }
        }
        report.runs.push_back(std::move(run));
    }
    return report;
}

std::string runs_csv(const RunReport& report, const Provenance& provenance) {
    std::ostringstream out;
    out << provenance_comment(provenance);
    out << "run_id,model,kind,layers,hidden,heads,dropout,lr,noise,train_mae,val_mae,test_mae,epochs,"
           "best_epoch,error\n";
    for (const auto& run : report.runs) {
        out << run.run_id << ',' << run.model << ',' << to_string(run.spec.kind) << ','
            << run.spec.num_layers << ',' << run.spec.hidden << ',' << run.spec.heads << ','
            << fmt(run.spec.dropout) << ',' << fmt(run.lr) << ',' << fmt(run.noise) << ',';
        if (run.error.empty()) {
            out << fmt(run.train_mae) << ',' << fmt(run.val_mae) << ',' << fmt(run.test_mae) << ','
                << run.epochs_run << ',' << run.best_epoch << ',';
        } else {
            std::string sanitized = run.error;
            std::replace(sanitized.begin(), sanitized.end(), ',', ';');
            std::replace(sanitized.begin(), sanitized.end(), '\n', ' ');
            out << ",,,,," << sanitized;
        }
        out << '\n';
    }
    return out.str();
}

namespace {

/// Best (lowest test MAE) successful run per (noise, kind, layers).
std::map<std::tuple<double, std::string, int>, const RunOutcome*> best_by_layers(
    const RunReport& report) {
    std::map<std::tuple<double, std::string, int>, const RunOutcome*> best;
    for (const auto& run : report.runs) {
        if (!run.error.empty()) continue;
        const int layers = nn::is_gnn(run.spec.kind) ? run.spec.num_layers : 0;
        const auto key = std::make_tuple(run.noise, std::string(to_string(run.spec.kind)), layers);
        const auto it = best.find(key);
        if (it == best.end() || run.test_mae < it->second->test_mae) best[key] = &run;
    }
    return best;
}

}  // namespace

std::string layers_csv(const RunReport& report, const Provenance& provenance) {
    std::ostringstream out;
    out << provenance_comment(provenance);
    out << "noise,kind,layers,test_mae\n";
    for (const auto& [key, run] : best_by_layers(report))
        out << fmt(std::get<0>(key)) << ',' << std::get<1>(key) << ',' << std::get<2>(key) << ','
            << fmt(run->test_mae) << '\n';
    return out.str();
}

std::string summary_csv(const RunReport& report, const Provenance& provenance) {
    // Best run per (noise, kind); relative error to the overall best of the
    // same noise level, in percent (best model -> 0).
    std::map<double, std::map<std::string, const RunOutcome*>> by_noise;
    for (const auto& run : report.runs) {
        if (!run.error.empty()) continue;
        auto& slot = by_noise[run.noise][std::string(to_string(run.spec.kind))];
        if (!slot || run.test_mae < slot->test_mae) slot = &run;
    }
    std::ostringstream out;
    out << provenance_comment(provenance);
    out << "noise,kind,model,lr,test_mae,relative_error_pct\n";
    for (const auto& [noise, kinds] : by_noise) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& [kind, run] : kinds) best = std::min(best, run->test_mae);
        for (const auto& [kind, run] : kinds) {
            const double rel = best > 0.0 ? (run->test_mae / best - 1.0) * 100.0
                                          : (run->test_mae == best ? 0.0 : std::numeric_limits<double>::infinity());
            out << fmt(noise) << ',' << kind << ',' << run->model << ',' << fmt(run->lr) << ','
                << fmt(run->test_mae) << ',' << fmt(rel) << '\n';
        }
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// SVG rendering
// ---------------------------------------------------------------------------

namespace {

constexpr int kWidth = 640, kHeight = 420;
constexpr int kMarginLeft = 70, kMarginRight = 150, kMarginTop = 40, kMarginBottom = 50;

const char* series_color(std::size_t i) {
    static constexpr const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                              "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
    return kColors[i % 8];
}

}  // namespace

std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<ChartSeries>& series,
                           const Provenance& provenance) {
    double x_lo = std::numeric_limits<double>::infinity(), x_hi = -x_lo;
    double y_lo = x_lo, y_hi = -x_lo;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            x_lo = std::min(x_lo, x);
            x_hi = std::max(x_hi, x);
            y_lo = std::min(y_lo, y);
            y_hi = std::max(y_hi, y);
        }
    if (!std::isfinite(x_lo)) {
        x_lo = 0;
        x_hi = 1;
        y_lo = 0;
        y_hi = 1;
    }
    if (x_hi == x_lo) x_hi = x_lo + 1;
    if (y_hi == y_lo) y_hi = y_lo + (y_lo == 0.0 ? 1.0 : std::abs(y_lo) * 0.1);
    y_lo = std::min(y_lo, 0.0);
    y_hi *= 1.05;

    const double plot_w = kWidth - kMarginLeft - kMarginRight;
    const double plot_h = kHeight - kMarginTop - kMarginBottom;
    auto sx = [&](double x) { return kMarginLeft + (x - x_lo) / (x_hi - x_lo) * plot_w; };
    auto sy = [&](double y) { return kMarginTop + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h; };

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
        << "\">\n";
    out << "<!-- config_hash=" << provenance.config_hash << " seed=" << provenance.seed << " -->\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title
        << "</text>\n";

    // Axes with 5 ticks each.
    out << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kMarginTop + plot_h << "\" x2=\""
        << kMarginLeft + plot_w << "\" y2=\"" << kMarginTop + plot_h << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kMarginTop << "\" x2=\"" << kMarginLeft
        << "\" y2=\"" << kMarginTop + plot_h << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 5; ++t) {
        const double xv = x_lo + (x_hi - x_lo) * t / 5.0;
        const double yv = y_lo + (y_hi - y_lo) * t / 5.0;
        out << "<text x=\"" << fmt(sx(xv)) << "\" y=\"" << kMarginTop + plot_h + 18
            << "\" text-anchor=\"middle\" font-size=\"11\">" << fmt(xv) << "</text>\n";
        out << "<text x=\"" << kMarginLeft - 6 << "\" y=\"" << fmt(sy(yv) + 4)
            << "\" text-anchor=\"end\" font-size=\"11\">" << fmt(yv) << "</text>\n";
        out << "<line x1=\"" << kMarginLeft << "\" y1=\"" << fmt(sy(yv)) << "\" x2=\""
            << kMarginLeft + plot_w << "\" y2=\"" << fmt(sy(yv))
            << "\" stroke=\"#dddddd\" stroke-width=\"0.5\"/>\n";
    }
    out << "<text x=\"" << kMarginLeft + plot_w / 2 << "\" y=\"" << kHeight - 12
        << "\" text-anchor=\"middle\" font-size=\"12\">" << x_label << "</text>\n";
    out << "<text x=\"16\" y=\"" << kMarginTop + plot_h / 2
        << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
        << kMarginTop + plot_h / 2 << ")\">" << y_label << "</text>\n";

    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& s = series[i];
        if (s.points.empty()) continue;
        out << "<polyline fill=\"none\" stroke=\"" << series_color(i) << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& [x, y] : s.points) out << fmt(sx(x)) << ',' << fmt(sy(y)) << ' ';
        out << "\"/>\n";
        for (const auto& [x, y] : s.points)
            out << "<circle cx=\"" << fmt(sx(x)) << "\" cy=\"" << fmt(sy(y)) << "\" r=\"2.5\" fill=\""
                << series_color(i) << "\"/>\n";
        const double ly = kMarginTop + 16.0 * static_cast<double>(i);
        out << "<rect x=\"" << kMarginLeft + plot_w + 12 << "\" y=\"" << fmt(ly) << "\" width=\"10\" "
            << "height=\"10\" fill=\"" << series_color(i) << "\"/>\n";
        out << "<text x=\"" << kMarginLeft + plot_w + 26 << "\" y=\"" << fmt(ly + 9)
            << "\" font-size=\"11\">" << s.label << "</text>\n";
    }
    out << "</svg>\n";
    return out.str();
}

void write_report_files(const std::filesystem::path& out_dir, const RunReport& report,
                        const Provenance& provenance) {
    std::filesystem::create_directories(out_dir);
    save_json(out_dir / "report.json", report_to_json(report, provenance));

    auto write_text = [&](const std::filesystem::path& path, const std::string& text) {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
        out << text;
    };
    write_text(out_dir / "runs.csv", runs_csv(report, provenance));
    write_text(out_dir / "layers.csv", layers_csv(report, provenance));
    write_text(out_dir / "summary.csv", summary_csv(report, provenance));

    // MAE vs layers per kind, one chart per noise level; MAE vs noise per kind.
    const auto best = best_by_layers(report);
    std::set<double> noises;
    for (const auto& run : report.runs) noises.insert(run.noise);

    std::size_t chart_index = 0;
    for (const double noise : noises) {
        std::map<std::string, ChartSeries> by_kind;
        for (const auto& [key, run] : best) {
            if (std::get<0>(key) != noise || std::get<2>(key) == 0) continue;
            auto& series = by_kind[std::get<1>(key)];
            series.label = std::get<1>(key);
            series.points.emplace_back(std::get<2>(key), run->test_mae);
        }
        if (by_kind.empty()) continue;
        std::vector<ChartSeries> series;
        for (auto& [kind, s] : by_kind) {
            std::sort(s.points.begin(), s.points.end());
            series.push_back(std::move(s));
        }
        char name[64];
        std::snprintf(name, sizeof(name), "mae_vs_layers_noise_%zu.svg", chart_index++);
        write_text(out_dir / name,
                   svg_line_chart("Test MAE vs layers (noise " + fmt(noise) + ")", "layers",
                                  "test MAE (pu)", series, provenance));
    }

    std::map<std::string, ChartSeries> noise_series;
    for (const auto& run : report.runs) {
        if (!run.error.empty()) continue;
        const auto kind = std::string(to_string(run.spec.kind));
        auto& s = noise_series[kind];
        s.label = kind;
        // Best run of this kind at each noise level.
        bool found = false;
        for (auto& [x, y] : s.points)
            if (x == run.noise) {
                y = std::min(y, run.test_mae);
                found = true;
            }
        if (!found) s.points.emplace_back(run.noise, run.test_mae);
    }
    if (!noise_series.empty() && noises.size() > 1) {
        std::vector<ChartSeries> series;
        for (auto& [kind, s] : noise_series) {
            std::sort(s.points.begin(), s.points.end());
            series.push_back(std::move(s));
        }
        write_text(out_dir / "mae_vs_noise.svg",
                   svg_line_chart("Test MAE vs label noise", "noise fraction p", "test MAE (pu)",
                                  series, provenance));
    }
}

}  // namespace gridse::report
