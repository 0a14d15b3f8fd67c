#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridse/dataset.hpp"
#include "gridse/grid_io.hpp"
#include "gridse/powerflow.hpp"
#include "gridse/synth.hpp"
#include "gridse/train.hpp"

namespace gridse::pipeline {

/// Configuration problems exit with status 2 (numerical failures use 3).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ModelsConfig {
    std::vector<std::string> kinds = {"gcn", "gat", "jk-trans"};
    std::vector<int> layers = {2, 4};
    std::vector<int> hidden = {32};
    std::vector<int> heads = {1};
    std::vector<double> dropout = {0.0};
    std::vector<double> lrs = {1e-3};
    int max_epochs = 400;
    int patience = 50;
    double val_fraction = 0.2;
    int max_runs = 0;
};

/// One experiment pipeline: generation, powerflow, stats, sweep, report.
/// Every random decision derives from the global seed.
struct RunConfig {
    std::uint64_t seed = 0;
    std::string out_dir = "runs/out";
    int grid_count = 1;
    int profiles_per_grid = 42;
    FeederConfig feeder;
    ProfileConfig profiles;
    std::vector<double> noise_levels = {0.0};
    harness::SplitPlan split;
    ModelsConfig models;
    int jobs = 1;
};

RunConfig config_from_json(const nlohmann::json& doc);
OrderedJson config_to_json(const RunConfig& config);
RunConfig load_config(const std::filesystem::path& path);

/// FNV-1a hash of the canonical config document, hex-encoded.
std::string config_hash(const RunConfig& config);
Provenance provenance_of(const RunConfig& config);

/// Expanded model grid (kinds x layers x hidden x heads x dropout, with
/// baseline kinds emitted once).
std::vector<nn::ModelSpec> expand_model_grid(const ModelsConfig& models);

// ---------------------------------------------------------------------------
// Load profile file format (the powerflow subcommand's --profiles input)
// ---------------------------------------------------------------------------

OrderedJson profiles_to_json(const LoadProfileSet& profiles,
                             const std::optional<Provenance>& provenance = {});
LoadProfileSet profiles_from_json(const nlohmann::json& doc);

// ---------------------------------------------------------------------------
// Staged artifacts with content-hash caching
// ---------------------------------------------------------------------------

/// Generates (or reuses) the expanded, sensor-placed grids plus their load
/// profile sets under out/grids; returns the grids in index order.
std::vector<PowerGrid> ensure_grids(const RunConfig& config, bool force);

/// Solves power flow for every profile of every grid at the given noise
/// level, writing snapshots under out/snapshots; returns the dataset.
harness::Dataset ensure_dataset(const RunConfig& config, double noise, bool force);

/// Writes per-grid stats JSON and the busbar-to-kth-sensor distance CSV.
void run_stats_stage(const RunConfig& config, bool force);

/// Runs the sweep over all noise levels and writes report files.
harness::RunReport run_sweep_stage(const RunConfig& config, bool force);

/// Full pipeline: generate -> powerflow -> stats -> sweep -> report.
/// Stages are cached by config hash; force re-runs everything.
void run_pipeline(const RunConfig& config, bool force);

}  // namespace gridse::pipeline
