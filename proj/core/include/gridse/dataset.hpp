#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gridse/grid.hpp"
#include "gridse/matrix.hpp"
#include "gridse/models.hpp"

namespace gridse::harness {

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

struct GridData {
    PowerGrid grid;
    std::vector<Snapshot> snapshots;
};

struct Dataset {
    std::vector<GridData> grids;
    std::string config_hash;  ///< provenance of the generating run
    std::uint64_t seed = 0;

    std::size_t total_snapshots() const;
};

/// Checks every snapshot against its grid. Throws std::invalid_argument.
void validate(const Dataset& dataset);

// ---------------------------------------------------------------------------
// Split protocols
// ---------------------------------------------------------------------------

enum class SplitKind { LoadProfile, Topology };

std::string_view to_string(SplitKind kind);
std::optional<SplitKind> split_kind_from_string(std::string_view name);

struct SplitPlan {
    SplitKind kind = SplitKind::LoadProfile;
    double train_fraction = 0.7;  ///< load-profile split
    int holdout = -1;             ///< topology split; -1 = last grid
    std::uint64_t seed = 0;
};

struct SampleRef {
    int grid = 0;
    int snapshot = 0;

    friend bool operator==(const SampleRef&, const SampleRef&) = default;
};

struct SplitIndices {
    std::vector<SampleRef> train;
    std::vector<SampleRef> test;
};

/// Load-profile split: seeded random train_fraction split of one grid's
/// snapshots (requires exactly one grid with >= 4 snapshots). Topology
/// split: holds out one full grid including all its snapshots (requires
/// >= 2 grids). Deterministic under the plan seed.
SplitIndices split(const Dataset& dataset, const SplitPlan& plan);

/// Seeded carve of a validation subset (for early stopping) from the
/// training indices; at least one sample goes to validation when the
/// fraction is positive and train has >= 2 samples.
std::pair<std::vector<SampleRef>, std::vector<SampleRef>> carve_validation(
    const std::vector<SampleRef>& train, double val_fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

/// Per-feature standardization and label min-max scaling, fitted strictly on
/// training data. Columns with zero variance are centered only. The label
/// transform is affine and exactly invertible (extrapolates linearly outside
/// the training range).
struct Preprocessor {
    std::vector<double> feature_mean, feature_std;  ///< node feature columns
    std::vector<double> flat_mean, flat_std;        ///< flattened baseline input
    double label_min = 0.0, label_max = 1.0;

    Matrix apply_features(const Matrix& h0) const;
    std::vector<double> apply_flat(const std::vector<double>& flat) const;
    double scale_label(double v) const;
    double invert_label(double s) const;
};

/// Flattened baseline input: [vec(Z_t zero-padded, n x 4) || vec(C, n x 7)].
/// Layout is fixed per grid.
std::vector<double> flatten_snapshot(const PowerGrid& grid, const Snapshot& snapshot);

/// Fits feature/label statistics on the given training samples; flat
/// statistics are fitted only when fit_flat is set (single-grid datasets).
Preprocessor fit_preprocessor(const Dataset& dataset, const std::vector<SampleRef>& train,
                              const InputFeatureOptions& opts, bool fit_flat);

// ---------------------------------------------------------------------------
// Compiled views for training
// ---------------------------------------------------------------------------

struct CompiledGrid {
    int grid_index = 0;
    nn::GraphStructure graph;
    std::size_t n_busbars = 0;
};

struct CompiledSample {
    int grid = 0;  ///< index into CompiledData::grids
    Matrix features;                    ///< preprocessed H0
    std::vector<double> flat;           ///< preprocessed flat input (may be empty)
    std::vector<double> labels_scaled;
    std::vector<double> labels_raw;
};

struct CompiledData {
    std::vector<CompiledGrid> grids;
    std::vector<CompiledSample> samples;
    std::size_t input_width = 0;
    std::size_t flat_width = 0;

    bool empty() const noexcept { return samples.empty(); }
};

CompiledData compile(const Dataset& dataset, const std::vector<SampleRef>& refs,
                     const Preprocessor& preprocessor, const InputFeatureOptions& opts,
                     bool with_flat);

/// Training labels as a snapshots x busbars matrix (baseline fitting).
Matrix label_matrix(const Dataset& dataset, const std::vector<SampleRef>& refs);

}  // namespace gridse::harness
