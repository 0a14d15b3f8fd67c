#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridse/dataset.hpp"
#include "gridse/grid_io.hpp"
#include "gridse/models.hpp"

namespace gridse::harness {

struct TrainSchedule {
    double lr = 1e-3;
    int max_epochs = 2000;
    int patience = 50;          ///< early stop on validation MAE
    double val_fraction = 0.2;  ///< carved from the training snapshots
    std::uint64_t seed = 0;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;  ///< scaled-label MSE
    double val_mae = 0.0;     ///< original units
};

struct TrainResult {
    std::vector<EpochStats> curve;
    int best_epoch = -1;
    double best_val_mae = 0.0;
};

/// Thrown when the loss goes non-finite; carries diagnostics.
class TrainDivergence : public std::runtime_error {
public:
    TrainDivergence(const std::string& msg, int epoch, double lr)
        : std::runtime_error(msg), epoch_(epoch), lr_(lr) {}
    int epoch() const noexcept { return epoch_; }
    double lr() const noexcept { return lr_; }

private:
    int epoch_;
    double lr_;
};

/// Full-batch gradient steps over the training snapshots (shuffled each
/// epoch), MSE on scaled labels, early stopping on validation MAE. The
/// model is left at the best-validation checkpoint. When val is empty the
/// final epoch wins.
TrainResult train_model(nn::TrainableModel& model, const CompiledData& train,
                        const CompiledData& val, const Preprocessor& preprocessor,
                        const TrainSchedule& schedule);

/// Mean MAE (original units) of the model over the compiled samples.
double evaluate_mae(nn::TrainableModel& model, const CompiledData& data,
                    const Preprocessor& preprocessor);

/// Per-sample predictions in original units.
std::vector<std::vector<double>> predict_all(nn::TrainableModel& model, const CompiledData& data,
                                             const Preprocessor& preprocessor);

// ---------------------------------------------------------------------------
// Single experiment and sweep
// ---------------------------------------------------------------------------

struct RunOutcome {
    int run_id = 0;
    std::string model;  ///< spec name
    nn::ModelSpec spec;
    double lr = 0.0;
    double noise = 0.0;
    double train_mae = 0.0;  ///< fit portion, original units
    double val_mae = 0.0;
    double test_mae = 0.0;
    int epochs_run = 0;
    int best_epoch = -1;
    std::string error;  ///< non-empty when the run failed
    std::vector<EpochStats> curve;
};

/// Trains (or closed-form fits) one model under the given split and
/// evaluates it on the held-out portion. Baselines: lr and mlp are only
/// valid for load-profile splits; busbar-mean switches to the pooled global
/// mean under topology splits.
RunOutcome run_experiment(const Dataset& dataset, const SplitPlan& plan, const nn::ModelSpec& spec,
                          const TrainSchedule& schedule, const InputFeatureOptions& opts = {});

/// A gradient-trained model together with its outcome and preprocessor,
/// ready for checkpointing.
struct TrainedModel {
    RunOutcome outcome;
    std::unique_ptr<nn::TrainableModel> model;
    Preprocessor preprocessor;
};

/// Like run_experiment but keeps the trained model; gradient-trained kinds
/// only (GNNs and the MLP).
TrainedModel train_single(const Dataset& dataset, const SplitPlan& plan, const nn::ModelSpec& spec,
                          const TrainSchedule& schedule, const InputFeatureOptions& opts = {});

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

struct Checkpoint {
    nn::ModelSpec spec;
    Preprocessor preprocessor;
    nlohmann::json params;  ///< feed to nn::params_from_json after model build
};

void save_checkpoint(const std::filesystem::path& path, const nn::ModelSpec& spec,
                     const nn::ParamStore& params, const Preprocessor& preprocessor,
                     const std::optional<Provenance>& provenance = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct SweepOptions {
    std::vector<nn::ModelSpec> models;
    std::vector<double> lrs = {1e-3};
    TrainSchedule schedule;
    InputFeatureOptions features;
    int max_runs = 0;  ///< 0 = run all; otherwise a seeded subsample
    int jobs = 1;
    double noise_tag = 0.0;  ///< recorded into outcomes for reporting
    std::uint64_t seed = 0;
};

struct RunReport {
    std::vector<RunOutcome> runs;  ///< ordered by run_id
};

/// Trains every (model, lr) combination; per-run failures are recorded in
/// the report without aborting the sweep. Deterministic in (options, seed)
/// regardless of the job count.
RunReport sweep(const Dataset& dataset, const SplitPlan& plan, const SweepOptions& options);

}  // namespace gridse::harness
