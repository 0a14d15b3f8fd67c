#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gridse/grid_io.hpp"
#include "gridse/pipeline.hpp"
#include "gridse/powerflow.hpp"
#include "gridse/report.hpp"
#include "gridse/stats.hpp"
#include "gridse/synth.hpp"
#include "gridse/train.hpp"

namespace fs = std::filesystem;
using namespace gridse;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct CommonOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> split;
    std::optional<int> holdout;
    std::optional<double> noise;
    std::optional<int> jobs;
    bool force = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_split = true) {
    cmd->add_option("--config,-c", opts.config_path, "Run configuration JSON file")->required();
    cmd->add_option("--seed", opts.seed, "Override the global seed");
    cmd->add_option("--out", opts.out, "Override the output directory");
    if (with_split) {
        cmd->add_option("--split", opts.split, "Override the split kind (profile|topology)");
        cmd->add_option("--holdout", opts.holdout, "Override the held-out grid index (topology split)");
        cmd->add_option("--noise", opts.noise, "Override the label-noise levels with a single value");
    }
    cmd->add_option("--jobs,-j", opts.jobs, "Concurrent training runs");
    cmd->add_flag("--force", opts.force, "Re-run stages even when cached");
}

pipeline::RunConfig resolve_config(const CommonOpts& opts) {
    pipeline::RunConfig config = pipeline::load_config(opts.config_path);
    if (opts.seed) {
        config.seed = *opts.seed;
        config.split.seed = *opts.seed;
    }
    if (opts.out) config.out_dir = *opts.out;
    if (opts.split) {
        const auto kind = harness::split_kind_from_string(*opts.split);
        if (!kind) throw pipeline::ConfigError("unknown split kind '" + *opts.split + "'");
        config.split.kind = *kind;
    }
    if (opts.holdout) config.split.holdout = *opts.holdout;
    if (opts.noise) config.noise_levels = {*opts.noise};
    if (opts.jobs) config.jobs = *opts.jobs;
    return config;
}

int dispatch(CLI::App& app, int argc, char** argv) {
    CommonOpts generate_opts, train_opts, eval_opts, sweep_opts, report_opts;

    auto* generate = app.add_subcommand("generate", "Generate synthetic feeders and load profiles");
    add_common(generate, generate_opts, false);

    auto* powerflow_cmd =
        app.add_subcommand("powerflow", "Solve power flow for a grid over a profile set");
    std::string pf_grid, pf_profiles, pf_out;
    double pf_noise = 0.0;
    std::uint64_t pf_seed = 0;
    powerflow_cmd->add_option("--grid", pf_grid, "Grid JSON file")->required();
    powerflow_cmd->add_option("--profiles", pf_profiles, "Load profile JSON file")->required();
    powerflow_cmd->add_option("--noise", pf_noise, "Label noise fraction p");
    powerflow_cmd->add_option("--seed", pf_seed, "Noise seed");
    powerflow_cmd->add_option("--out", pf_out, "Output directory for snapshots")->required();

    auto* stats_cmd = app.add_subcommand("stats", "Graph statistics of a grid file");
    std::string st_grid, st_out, st_csv;
    stats_cmd->add_option("--grid", st_grid, "Grid JSON file")->required();
    stats_cmd->add_option("--out", st_out, "Output stats JSON file")->required();
    stats_cmd->add_option("--csv", st_csv, "Optional per-busbar sensor distance CSV");

    auto* train_cmd = app.add_subcommand("train", "Train the first configured model");
    add_common(train_cmd, train_opts);

    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
    std::string eval_model;
    add_common(eval_cmd, eval_opts);
    eval_cmd->add_option("--model", eval_model, "Checkpoint JSON file")->required();

    auto* sweep_cmd = app.add_subcommand("sweep", "Run the full pipeline and hyperparameter sweep");
    add_common(sweep_cmd, sweep_opts);

    auto* report_cmd = app.add_subcommand("report", "Re-render report tables and charts");
    add_common(report_cmd, report_opts);

    app.require_subcommand(1);
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    if (generate->parsed()) {
        const auto config = resolve_config(generate_opts);
        pipeline::ensure_grids(config, generate_opts.force);
        pipeline::run_stats_stage(config, generate_opts.force);
        std::cout << "grids written to " << (fs::path(config.out_dir) / "grids").string() << "\n";
        return kExitOk;
    }

    if (powerflow_cmd->parsed()) {
        const PowerGrid grid = load_grid(pf_grid);
        const LoadProfileSet profiles = pipeline::profiles_from_json(load_json(pf_profiles));
        std::vector<Snapshot> snapshots;
        for (int t = 0; t < profiles.num_profiles(); ++t) {
            const SolveResult solved = solve_radial(grid, profiles.profile(t));
            snapshots.push_back(make_snapshot(grid, solved, t));
        }
        if (pf_noise > 0.0) snapshots = add_label_noise(snapshots, {pf_noise, pf_seed});
        for (std::size_t t = 0; t < snapshots.size(); ++t) {
            char name[32];
            std::snprintf(name, sizeof(name), "t%03zu.json", t);
            save_json(fs::path(pf_out) / name, snapshot_to_json(snapshots[t]));
        }
        std::cout << snapshots.size() << " snapshots written to " << pf_out << "\n";
        return kExitOk;
    }

    if (stats_cmd->parsed()) {
        const PowerGrid grid = load_grid(st_grid);
        const GraphStats stats = compute_stats(grid);
        OrderedJson doc;
        doc["schema_version"] = 1;
        doc["mean_degree"] = stats.mean_degree;
        doc["diameter"] = stats.diameter;
        doc["mean_shortest_path"] = stats.mean_shortest_path;
        doc["mean_clustering"] = stats.mean_clustering;
        doc["num_vertices"] = grid.num_vertices();
        doc["num_busbars"] = grid.busbars().size();
        doc["sensing_ratio"] =
            static_cast<double>(grid.sensing.size()) / static_cast<double>(grid.num_vertices());
        save_json(st_out, doc);
        if (!st_csv.empty()) {
            std::ofstream out{fs::path(st_csv)};
            out << "busbar,k,distance\n";
            const auto busbars = grid.busbars();
            for (std::size_t b = 0; b < stats.busbar_sensor_distances.size(); ++b)
                for (std::size_t k = 0; k < stats.busbar_sensor_distances[b].size(); ++k)
                    out << busbars[b] << ',' << (k + 1) << ',' << stats.busbar_sensor_distances[b][k]
                        << '\n';
        }
        std::cout << "stats written to " << st_out << "\n";
        return kExitOk;
    }

    if (train_cmd->parsed()) {
        const auto config = resolve_config(train_opts);
        const double noise = config.noise_levels.front();
        const harness::Dataset dataset = pipeline::ensure_dataset(config, noise, train_opts.force);
        const auto specs = pipeline::expand_model_grid(config.models);
        nn::ModelSpec spec;
        bool found = false;
        for (const auto& s : specs)
            if (nn::is_gnn(s.kind) || s.kind == nn::ModelKind::MLP) {
                spec = s;
                found = true;
                break;
            }
        if (!found) throw pipeline::ConfigError("train: no gradient-trained model in the config");

        harness::TrainSchedule schedule;
        schedule.lr = config.models.lrs.front();
        schedule.max_epochs = config.models.max_epochs;
        schedule.patience = config.models.patience;
        schedule.val_fraction = config.models.val_fraction;
        schedule.seed = config.seed;
        harness::SplitPlan plan = config.split;
        plan.seed = config.seed;

        const auto trained = harness::train_single(dataset, plan, spec, schedule);
        const fs::path out_dir = fs::path(config.out_dir) / "checkpoints";
        const auto prov = pipeline::provenance_of(config);
        harness::save_checkpoint(out_dir / (spec.name() + ".json"), spec, trained.model->params(),
                                 trained.preprocessor, prov);
        OrderedJson metrics;
        metrics["model"] = trained.outcome.model;
        metrics["train_mae"] = trained.outcome.train_mae;
        metrics["val_mae"] = trained.outcome.val_mae;
        metrics["test_mae"] = trained.outcome.test_mae;
        metrics["epochs"] = trained.outcome.epochs_run;
        metrics["best_epoch"] = trained.outcome.best_epoch;
        metrics["provenance"] = OrderedJson{{"config_hash", prov.config_hash}, {"seed", prov.seed}};
        save_json(out_dir / (spec.name() + ".metrics.json"), metrics);
        std::cout << metrics.dump(2) << "\n";
        return kExitOk;
    }

    if (eval_cmd->parsed()) {
        const auto config = resolve_config(eval_opts);
        const double noise = config.noise_levels.front();
        const harness::Dataset dataset = pipeline::ensure_dataset(config, noise, eval_opts.force);
        const auto ckpt = harness::load_checkpoint(eval_model);

        harness::SplitPlan plan = config.split;
        plan.seed = config.seed;
        const auto idx = harness::split(dataset, plan);
        const bool needs_flat = ckpt.spec.kind == nn::ModelKind::MLP;
        const InputFeatureOptions opts;
        const auto test = harness::compile(dataset, idx.test, ckpt.preprocessor, opts, needs_flat);
        const std::size_t n_busbars = test.grids.front().n_busbars;
        auto model =
            nn::make_trainable_model(ckpt.spec, test.input_width, test.flat_width, n_busbars, 0);
        nn::params_from_json(model->params(), ckpt.params);

        OrderedJson metrics;
        metrics["model"] = ckpt.spec.name();
        metrics["test_mae"] = harness::evaluate_mae(*model, test, ckpt.preprocessor);
        metrics["test_snapshots"] = idx.test.size();
        std::cout << metrics.dump(2) << "\n";
        if (eval_opts.out) save_json(fs::path(*eval_opts.out) / "eval.json", metrics);
        return kExitOk;
    }

    if (sweep_cmd->parsed()) {
        const auto config = resolve_config(sweep_opts);
        pipeline::run_pipeline(config, sweep_opts.force);
        std::cout << "report written to " << (fs::path(config.out_dir) / "report").string() << "\n";
        return kExitOk;
    }

    if (report_cmd->parsed()) {
        const auto config = resolve_config(report_opts);
        const fs::path dir = fs::path(config.out_dir) / "report";
        const auto report = report::report_from_json(load_json(dir / "report.json"));
        report::write_report_files(dir, report, pipeline::provenance_of(config));
        std::cout << "report rendered under " << dir.string() << "\n";
        return kExitOk;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Inductive GNN state estimation on synthetic power grids"};
    try {
        return dispatch(app, argc, argv);
    } catch (const pipeline::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const PowerflowError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const harness::TrainDivergence& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
