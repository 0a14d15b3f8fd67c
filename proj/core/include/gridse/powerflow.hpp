#pragma once

#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "gridse/grid.hpp"
#include "gridse/matrix.hpp"

namespace gridse {

/// (vertex, (P, Q)) demand pairs, per-unit, consumption positive. Vertices
/// must be Load or Generator vertices of the grid; absent loads draw zero.
using LoadAssignment = std::vector<std::pair<int, std::pair<double, double>>>;

struct SolveOptions {
    double slack_voltage = 1.0;  ///< per-unit
    double tolerance = 1e-8;     ///< max |dV| convergence threshold
    int max_iterations = 100;
};

/// Power flow over one branch, oriented parent -> child in the tree rooted
/// at the slack busbar.
struct BranchFlow {
    int from_busbar = 0;  ///< parent side
    int to_busbar = 0;
    double p_send = 0.0, q_send = 0.0;
    double p_recv = 0.0, q_recv = 0.0;
    double current = 0.0;  ///< magnitude, per-unit
};

struct SolveResult {
    std::vector<double> voltages;  ///< per-vertex |V|, per-unit
    std::vector<BranchFlow> flows; ///< one per branch, child-busbar ascending
    int iterations = 0;
    double residual = 0.0;
    /// Full dynamic state, n x 4 (I, P, Q, V) per vertex; feeds snapshots.
    Matrix full_state;
    /// Complex power drawn at the slack busbar from the external grid.
    double slack_p = 0.0, slack_q = 0.0;
};

/// Thrown when the sweep fails to converge (overload); carries the last
/// residual so callers can report how badly it missed.
class PowerflowError : public std::runtime_error {
public:
    PowerflowError(const std::string& msg, double residual, int iterations)
        : std::runtime_error(msg), residual_(residual), iterations_(iterations) {}
    double residual() const noexcept { return residual_; }
    int iterations() const noexcept { return iterations_; }

private:
    double residual_;
    int iterations_;
};

/// Backward/forward sweep solver for expanded radial grids with
/// constant-power loads: the backward pass accumulates branch currents from
/// the leaves, the forward pass updates voltages from the slack, iterating
/// to the configured tolerance.
///
/// Throws std::invalid_argument for non-radial grids and PowerflowError on
/// divergence.
SolveResult solve_radial(const PowerGrid& expanded, const LoadAssignment& loads,
                         const SolveOptions& opts = {});

/// Restricts the solved state to the sensing vertices (all channels that are
/// physically defined there) and attaches busbar voltage labels.
Snapshot make_snapshot(const PowerGrid& grid, const SolveResult& result, int time_index);

struct NoiseSpec {
    double p = 0.0;  ///< fraction of the estimated label variance; >= 0
    std::uint64_t seed = 0;
};

/// Adds i.i.d. Gaussian noise N(0, p * var) to every busbar label, where
/// var is the empirical variance of all labels pooled over the snapshots.
/// Measurements are untouched; p == 0 returns the input bit-identically.
/// Requires at least 2 snapshots and p >= 0.
std::vector<Snapshot> add_label_noise(const std::vector<Snapshot>& snapshots, const NoiseSpec& spec);

}  // namespace gridse
