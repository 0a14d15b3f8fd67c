#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "gridse/grid.hpp"

namespace gridse {

/// Run provenance embedded in every artifact file.
struct Provenance {
    std::string config_hash;
    std::uint64_t seed = 0;

    friend bool operator==(const Provenance&, const Provenance&) = default;
};

using OrderedJson = nlohmann::ordered_json;

inline constexpr int kGridSchemaVersion = 1;
inline constexpr int kSnapshotSchemaVersion = 1;

OrderedJson grid_to_json(const PowerGrid& grid, const std::optional<Provenance>& provenance = {});
PowerGrid grid_from_json(const nlohmann::json& doc);

OrderedJson snapshot_to_json(const Snapshot& snapshot, const std::optional<Provenance>& provenance = {});
Snapshot snapshot_from_json(const nlohmann::json& doc);

std::optional<Provenance> provenance_from_json(const nlohmann::json& doc);

/// Writes a document with a trailing newline; parent directories are created.
void save_json(const std::filesystem::path& path, const OrderedJson& doc);
nlohmann::json load_json(const std::filesystem::path& path);

PowerGrid load_grid(const std::filesystem::path& path);
Snapshot load_snapshot(const std::filesystem::path& path);

}  // namespace gridse
