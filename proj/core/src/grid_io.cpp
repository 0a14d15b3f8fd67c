#include "gridse/grid_io.hpp"

#include <fstream>
#include <stdexcept>

namespace gridse {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

const nlohmann::json& require_key(const nlohmann::json& doc, const char* key, const char* what) {
    const auto it = doc.find(key);
    if (it == doc.end()) fail(std::string(what) + " document missing key '" + key + "'");
    return *it;
}

void check_schema_version(const nlohmann::json& doc, int expected, const char* what) {
    const auto& v = require_key(doc, "schema_version", what);
    if (!v.is_number_integer() || v.get<int>() != expected)
        fail(std::string(what) + " document has unsupported schema_version (expected " +
             std::to_string(expected) + ")");
}

EquipmentType parse_type(const nlohmann::json& j) {
    const auto name = j.get<std::string>();
    const auto t = equipment_type_from_string(name);
    if (!t) fail("unknown equipment type '" + name + "'");
    return *t;
}

Channel parse_channel(const nlohmann::json& j) {
    const auto name = j.get<std::string>();
    const auto c = channel_from_string(name);
    if (!c) fail("unknown measurement channel '" + name + "'");
    return *c;
}

OrderedJson provenance_to_json(const Provenance& p) {
    OrderedJson j;
    j["config_hash"] = p.config_hash;
    j["seed"] = p.seed;
    return j;
}

}  // namespace

OrderedJson grid_to_json(const PowerGrid& grid, const std::optional<Provenance>& provenance) {
    OrderedJson doc;
    doc["schema_version"] = kGridSchemaVersion;

    auto& vertices = doc["vertices"] = OrderedJson::array();
    for (const auto& v : grid.vertices)
        vertices.push_back(OrderedJson{{"id", v.id}, {"type", to_string(v.type)}});

    auto& edges = doc["edges"] = OrderedJson::array();
    for (const auto& [i, j] : grid.edges) edges.push_back(OrderedJson::array({i, j}));

    auto& features = doc["features"] = OrderedJson::object();
    auto& schema = features["schema"] = OrderedJson::array();
    for (const auto& field : static_feature_schema()) {
        OrderedJson f;
        f["name"] = field.name;
        f["unit"] = field.unit;
        auto& applicable = f["applicable"] = OrderedJson::array();
        for (const auto t : field.applicable) applicable.push_back(to_string(t));
        schema.push_back(std::move(f));
    }
    auto& rows = features["rows"] = OrderedJson::array();
    for (std::size_t r = 0; r < grid.static_features.rows(); ++r) {
        OrderedJson row = OrderedJson::array();
        for (std::size_t c = 0; c < grid.static_features.cols(); ++c)
            row.push_back(grid.static_features.at(r, c));
        rows.push_back(std::move(row));
    }

    doc["sensing"] = grid.sensing;
    doc["slack"] = grid.slack;
    if (provenance) doc["provenance"] = provenance_to_json(*provenance);
    return doc;
}

PowerGrid grid_from_json(const nlohmann::json& doc) {
    check_schema_version(doc, kGridSchemaVersion, "grid");
    PowerGrid grid;

    for (const auto& v : require_key(doc, "vertices", "grid")) {
        Vertex vertex;
        vertex.id = require_key(v, "id", "grid vertex").get<std::string>();
        vertex.type = parse_type(require_key(v, "type", "grid vertex"));
        grid.vertices.push_back(std::move(vertex));
    }

    for (const auto& e : require_key(doc, "edges", "grid")) {
        if (!e.is_array() || e.size() != 2) fail("grid document edge is not an index pair");
        grid.edges.emplace_back(e[0].get<int>(), e[1].get<int>());
    }

    const auto& features = require_key(doc, "features", "grid");
    const auto& schema = require_key(features, "schema", "grid features");
    if (schema.size() != kNumStaticFeatures) fail("grid document feature schema size mismatch");
    for (std::size_t f = 0; f < kNumStaticFeatures; ++f) {
        const auto name = require_key(schema[f], "name", "grid feature").get<std::string>();
        if (name != static_feature_schema()[f].name)
            fail("grid document feature schema mismatch at column " + std::to_string(f) + " ('" + name +
                 "' vs '" + static_feature_schema()[f].name + "')");
    }
    const auto& rows = require_key(features, "rows", "grid features");
    if (rows.size() != grid.vertices.size()) fail("grid document feature row count mismatch");
    grid.static_features = Matrix(grid.vertices.size(), kNumStaticFeatures);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != kNumStaticFeatures) fail("grid document feature row width mismatch");
        for (std::size_t c = 0; c < kNumStaticFeatures; ++c)
            grid.static_features.at(r, c) = rows[r][c].get<double>();
    }

    grid.sensing = require_key(doc, "sensing", "grid").get<std::vector<int>>();
    grid.slack = require_key(doc, "slack", "grid").get<int>();
    validate(grid);
    return grid;
}

OrderedJson snapshot_to_json(const Snapshot& snapshot, const std::optional<Provenance>& provenance) {
    OrderedJson doc;
    doc["schema_version"] = kSnapshotSchemaVersion;
    doc["t"] = snapshot.time_index;
    auto& measurements = doc["measurements"] = OrderedJson::array();
    for (const auto& m : snapshot.measurements)
        measurements.push_back(OrderedJson::array({m.vertex, to_string(m.channel), m.value}));
    auto& labels = doc["labels"] = OrderedJson::array();
    for (const auto& [busbar, value] : snapshot.busbar_labels)
        labels.push_back(OrderedJson::array({busbar, value}));
    if (provenance) doc["provenance"] = provenance_to_json(*provenance);
    return doc;
}

Snapshot snapshot_from_json(const nlohmann::json& doc) {
    check_schema_version(doc, kSnapshotSchemaVersion, "snapshot");
    Snapshot snapshot;
    snapshot.time_index = require_key(doc, "t", "snapshot").get<int>();
    for (const auto& m : require_key(doc, "measurements", "snapshot")) {
        if (!m.is_array() || m.size() != 3) fail("snapshot document measurement is not [vertex, channel, value]");
        snapshot.measurements.push_back({m[0].get<int>(), parse_channel(m[1]), m[2].get<double>()});
    }
    for (const auto& l : require_key(doc, "labels", "snapshot")) {
        if (!l.is_array() || l.size() != 2) fail("snapshot document label is not [busbar, value]");
        snapshot.busbar_labels.emplace_back(l[0].get<int>(), l[1].get<double>());
    }
    return snapshot;
}

std::optional<Provenance> provenance_from_json(const nlohmann::json& doc) {
    const auto it = doc.find("provenance");
    if (it == doc.end()) return std::nullopt;
    Provenance p;
    p.config_hash = require_key(*it, "config_hash", "provenance").get<std::string>();
    p.seed = require_key(*it, "seed", "provenance").get<std::uint64_t>();
    return p;
}

void save_json(const std::filesystem::path& path, const OrderedJson& doc) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) fail("cannot open '" + path.string() + "' for writing");
    out << doc.dump(2) << '\n';
    if (!out) fail("failed writing '" + path.string() + "'");
}

nlohmann::json load_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open '" + path.string() + "'");
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::parse_error& e) {
        fail("malformed JSON in '" + path.string() + "': " + e.what());
    }
    return doc;
}

PowerGrid load_grid(const std::filesystem::path& path) { return grid_from_json(load_json(path)); }

Snapshot load_snapshot(const std::filesystem::path& path) { return snapshot_from_json(load_json(path)); }

}  // namespace gridse
