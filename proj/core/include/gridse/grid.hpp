#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gridse/matrix.hpp"

namespace gridse {

// ---------------------------------------------------------------------------
// Equipment types and measurement channels
// ---------------------------------------------------------------------------

/// Vertex types. OriginA/ExtremityB mark the two sides of branch equipment
/// and appear only in expanded grids, never in bus-branch input.
enum class EquipmentType : std::uint8_t {
    Busbar = 0,
    Line,
    Transformer,
    Load,
    Generator,
    Switch,
    OriginA,
    ExtremityB,
};
inline constexpr std::size_t kNumEquipmentTypes = 8;

std::string_view to_string(EquipmentType type);
std::optional<EquipmentType> equipment_type_from_string(std::string_view name);

/// Measurement channels of the dynamic state, in row order (I, P, Q, V).
enum class Channel : std::uint8_t { I = 0, P, Q, V };
inline constexpr std::size_t kNumChannels = 4;

std::string_view to_string(Channel channel);
std::optional<Channel> channel_from_string(std::string_view name);

// ---------------------------------------------------------------------------
// Static feature schema
// ---------------------------------------------------------------------------

/// One column of the static feature matrix. Entries for (vertex, feature)
/// pairs where the vertex type is not applicable are exactly zero.
struct FeatureField {
    std::string name;
    std::string unit;
    std::vector<EquipmentType> applicable;
};

/// Fixed column indices of the static feature matrix C.
inline constexpr std::size_t kFeatR = 0;         ///< series resistance, per-unit
inline constexpr std::size_t kFeatX = 1;         ///< series reactance, per-unit
inline constexpr std::size_t kFeatNominalKv = 2; ///< nominal voltage, kV
inline constexpr std::size_t kFeatLengthKm = 3;  ///< conductor length, km
inline constexpr std::size_t kFeatWiring0 = 4;   ///< wiring code one-hot (3 codes)
inline constexpr std::size_t kNumStaticFeatures = 7;

/// The canonical static feature schema shared by all grids in this project.
const std::vector<FeatureField>& static_feature_schema();

bool feature_applicable(std::size_t feature, EquipmentType type);

// ---------------------------------------------------------------------------
// Graph types
// ---------------------------------------------------------------------------

struct Vertex {
    std::string id;
    EquipmentType type = EquipmentType::Busbar;

    friend bool operator==(const Vertex&, const Vertex&) = default;
};

/// Undirected simple connected graph over typed vertices with static
/// features and a sensor placement. Immutable after construction; safe to
/// share across concurrent readers.
struct PowerGrid {
    std::vector<Vertex> vertices;
    std::vector<std::pair<int, int>> edges;  ///< canonical: i < j, sorted
    Matrix static_features;                  ///< n x kNumStaticFeatures
    std::vector<int> sensing;                ///< sorted vertex indices with sensors
    int slack = 0;                           ///< reference busbar index

    int num_vertices() const noexcept { return static_cast<int>(vertices.size()); }
    EquipmentType type_of(int v) const { return vertices[static_cast<std::size_t>(v)].type; }
    bool is_sensed(int v) const;

    /// Indices of all vertices of the given type, ascending.
    std::vector<int> vertices_of_type(EquipmentType type) const;
    /// Busbar indices, ascending (the regression targets).
    std::vector<int> busbars() const { return vertices_of_type(EquipmentType::Busbar); }

    friend bool operator==(const PowerGrid&, const PowerGrid&) = default;
};

/// Validates simple-graph structure, connectivity, feature zero padding and
/// the sensing set. Throws std::invalid_argument describing the violation.
void validate(const PowerGrid& grid);

/// Additionally checks expanded-form structure: every Line/Transformer/Switch
/// vertex has degree 2 with exactly one OriginA and one ExtremityB neighbour.
void validate_expanded(const PowerGrid& grid);

/// Adjacency lists (neighbours ascending).
std::vector<std::vector<int>> adjacency_list(const PowerGrid& grid);

// ---------------------------------------------------------------------------
// Bus-branch input model
// ---------------------------------------------------------------------------

/// One piece of equipment (on a branch or attached to a busbar).
struct Equipment {
    std::string id;
    EquipmentType type = EquipmentType::Line;
    std::array<double, kNumStaticFeatures> features{};

    friend bool operator==(const Equipment&, const Equipment&) = default;
};

/// Branch between two busbars carrying an ordered equipment chain
/// (from-side first).
struct Branch {
    int from = 0;
    int to = 0;
    std::vector<Equipment> chain;
};

/// Terminal equipment (Load/Generator) attached directly to a busbar.
struct Attachment {
    int busbar = 0;
    Equipment equipment;
};

/// Compact bus-branch representation: busbars as vertices, connecting
/// equipment on branches. This is the generator output and the input to
/// expand_to_ab().
struct BusBranchGrid {
    std::vector<std::string> busbar_ids;
    std::vector<double> busbar_nominal_kv;
    std::vector<Branch> branches;
    std::vector<Attachment> attachments;
    int slack = 0;

    int num_busbars() const noexcept { return static_cast<int>(busbar_ids.size()); }
};

/// Expands a bus-branch grid into the typed-vertex graph used by the models:
/// every branch equipment becomes a vertex flanked by OriginA/ExtremityB
/// vertices, chained along the branch, with the outermost A/B vertices
/// reconnected to the busbars. Terminal equipment attaches directly to its
/// busbar. Busbar indices are preserved.
///
/// Throws std::invalid_argument on branches with empty equipment lists or
/// disconnected input.
PowerGrid expand_to_ab(const BusBranchGrid& grid);

// ---------------------------------------------------------------------------
// Snapshots and model input assembly
// ---------------------------------------------------------------------------

struct Measurement {
    int vertex = 0;
    Channel channel = Channel::V;
    double value = 0.0;

    friend bool operator==(const Measurement&, const Measurement&) = default;
};

/// One time step: partially observed dynamic state plus busbar voltage
/// labels (per-unit). Measurements are sorted by (vertex, channel) and
/// labels by busbar index.
struct Snapshot {
    int time_index = 0;
    std::vector<Measurement> measurements;
    std::vector<std::pair<int, double>> busbar_labels;

    friend bool operator==(const Snapshot&, const Snapshot&) = default;
};

/// Checks that measurement vertices lie in the grid's sensing set and that
/// labels cover exactly the busbar set. Throws std::invalid_argument.
void validate(const Snapshot& snapshot, const PowerGrid& grid);

struct InputFeatureOptions {
    /// Append a 4-bit observation mask distinguishing a measured zero from
    /// an unobserved channel.
    bool observation_mask = true;
};

/// Width of the model input feature rows under the given options.
std::size_t input_feature_width(const InputFeatureOptions& opts);

/// Assembles the model input matrix H0, one row per vertex:
///   [Z channels (0 where unobserved) | mask (optional) | type one-hot | C].
/// Deterministic given (grid, snapshot, opts).
Matrix input_features(const PowerGrid& grid, const Snapshot& snapshot,
                      const InputFeatureOptions& opts = {});

}  // namespace gridse
