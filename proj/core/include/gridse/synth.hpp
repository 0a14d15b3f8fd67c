#pragma once

#include <cstdint>
#include <vector>

#include "gridse/grid.hpp"
#include "gridse/matrix.hpp"

namespace gridse {

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

/// Weighted equipment chain a branch can carry.
struct BranchTemplate {
    std::vector<EquipmentType> chain;
    double weight = 1.0;
};

/// Configuration of the synthetic radial feeder generator. Defaults are
/// calibrated so that a 28-busbar feeder expands to roughly 282 vertices
/// with diameter near 67 and all-pairs mean path length near 27.
struct FeederConfig {
    int n_busbars = 28;
    /// Busbar tree shape: n_arms feeder chains radiate from the slack
    /// busbar and absorb arm_busbar_fraction of the busbars; the rest hang
    /// off them as short laterals, anchored preferentially near the root
    /// (anchor depth ~ U^anchor_root_bias).
    int n_arms = 3;
    double arm_busbar_fraction = 0.40;
    double anchor_root_bias = 2.5;
    double lateral_extend_probability = 0.12;
    /// Branch equipment mix. Mostly switch-flanked cable runs with a share
    /// of secondary transformers.
    std::vector<BranchTemplate> branch_templates = {
        {{EquipmentType::Switch, EquipmentType::Line, EquipmentType::Switch}, 0.35},
        {{EquipmentType::Switch, EquipmentType::Line}, 0.30},
        {{EquipmentType::Line, EquipmentType::Transformer}, 0.15},
        {{EquipmentType::Switch, EquipmentType::Line, EquipmentType::Transformer}, 0.08},
        {{EquipmentType::Line}, 0.12},
    };
    /// Expected number of loads attached per non-slack busbar.
    double loads_per_busbar = 2.3;
    /// Probability that a terminal attachment is a generator instead of a load.
    double generator_share = 0.0;
    double sensing_fraction = 0.095;
    Interval line_r = {0.006, 0.030};   ///< per-unit
    Interval line_x = {0.004, 0.020};   ///< per-unit
    Interval transformer_r = {0.002, 0.008};
    Interval transformer_x = {0.020, 0.060};
    Interval line_length_km = {0.3, 2.5};
    double nominal_kv = 20.0;
    std::uint64_t seed = 0;
};

/// Throws std::invalid_argument if the configuration is infeasible
/// (n_busbars < 2, sensing_fraction outside (0,1), empty template mix, ...).
void validate(const FeederConfig& config);

/// Generates a random radial bus-branch feeder: backbone-with-laterals
/// busbar tree, equipment chains sampled per branch, loads attached,
/// impedances drawn from the configured ranges, busbar 0 marked slack.
/// Deterministic in (config, seed).
BusBranchGrid generate_feeder(const FeederConfig& config);

struct SensorPlacementOptions {
    /// Sensors cluster on instrumented branches; expected number of sensed
    /// A/B vertices per chosen branch.
    double bundle_mean = 4.0;
    /// Skip candidates adjacent to a busbar, so only the slack busbar itself
    /// carries a busbar-side measurement.
    bool exclude_busbar_adjacent = true;
};

/// Returns a copy of the expanded grid with a sensing set: the slack busbar
/// plus `fraction * |V|` equipment sensors drawn from A/B and Load vertices
/// without replacement (bundled per branch so that the mean busbar-to-sensor
/// distance lands near the 8.5-hop regime of real feeders).
/// Throws std::invalid_argument if fraction * |V| < 1 or fraction >= 1.
PowerGrid place_sensors(const PowerGrid& expanded, double fraction, std::uint64_t seed,
                        const SensorPlacementOptions& opts = {});

struct ProfileConfig {
    Interval load_p = {0.004, 0.020};  ///< per-unit base active power
    Interval power_factor = {0.90, 0.98};
    /// Scaling-factor mixture: two clusters plus one 3x outlier profile.
    double cluster_low = 0.7;
    double cluster_high = 1.3;
    double cluster_sigma = 0.12;  ///< lognormal sigma of within-cluster noise
    double outlier_scale = 3.0;
    int outlier_min_profiles = 10;  ///< emit the outlier only when m >= this
};

/// Per-load base demand plus per-profile multiplicative scaling factors.
struct LoadProfileSet {
    std::vector<int> load_vertices;               ///< expanded grid indices, ascending
    std::vector<std::pair<double, double>> base_pq;  ///< per load (P, Q), per-unit
    Matrix scaling;                               ///< m x num_loads, positive
    std::vector<int> cluster_labels;              ///< per profile: 0, 1, or 2 (outlier)

    int num_profiles() const noexcept { return static_cast<int>(scaling.rows()); }
    /// Scaled (P, Q) of every load under the given profile.
    std::vector<std::pair<int, std::pair<double, double>>> profile(int index) const;
};

/// Samples base demands and an m-profile scaling family on the grid's Load
/// vertices. m == 1 fixes all scaling factors to 1 (the base profile).
/// Throws std::invalid_argument if the grid has no loads or m < 1.
LoadProfileSet sample_profiles(const PowerGrid& expanded, int m, std::uint64_t seed,
                               const ProfileConfig& config = {});

}  // namespace gridse
