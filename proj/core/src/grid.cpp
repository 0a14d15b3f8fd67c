#include "gridse/grid.hpp"

#include <algorithm>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>

namespace gridse {

namespace {

constexpr std::array<std::string_view, kNumEquipmentTypes> kTypeNames = {
    "Busbar", "Line", "Transformer", "Load", "Generator", "Switch", "OriginA", "ExtremityB"};

constexpr std::array<std::string_view, kNumChannels> kChannelNames = {"I", "P", "Q", "V"};

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

}  // namespace

std::string_view to_string(EquipmentType type) { return kTypeNames[static_cast<std::size_t>(type)]; }

std::optional<EquipmentType> equipment_type_from_string(std::string_view name) {
    for (std::size_t i = 0; i < kTypeNames.size(); ++i)
        if (kTypeNames[i] == name) return static_cast<EquipmentType>(i);
    return std::nullopt;
}

std::string_view to_string(Channel channel) { return kChannelNames[static_cast<std::size_t>(channel)]; }

std::optional<Channel> channel_from_string(std::string_view name) {
    for (std::size_t i = 0; i < kChannelNames.size(); ++i)
        if (kChannelNames[i] == name) return static_cast<Channel>(i);
    return std::nullopt;
}

const std::vector<FeatureField>& static_feature_schema() {
    using ET = EquipmentType;
    static const std::vector<FeatureField> schema = {
        {"r", "pu", {ET::Line, ET::Transformer}},
        {"x", "pu", {ET::Line, ET::Transformer}},
        {"nominal_voltage", "kV",
         {ET::Busbar, ET::Line, ET::Transformer, ET::Load, ET::Generator, ET::Switch}},
        {"length", "km", {ET::Line}},
        {"wiring_dyn", "onehot", {ET::Transformer}},
        {"wiring_yyn", "onehot", {ET::Transformer}},
        {"wiring_yzn", "onehot", {ET::Transformer}},
    };
    return schema;
}

bool feature_applicable(std::size_t feature, EquipmentType type) {
    const auto& field = static_feature_schema().at(feature);
    return std::find(field.applicable.begin(), field.applicable.end(), type) != field.applicable.end();
}

bool PowerGrid::is_sensed(int v) const {
    return std::binary_search(sensing.begin(), sensing.end(), v);
}

std::vector<int> PowerGrid::vertices_of_type(EquipmentType type) const {
    std::vector<int> out;
    for (int v = 0; v < num_vertices(); ++v)
        if (vertices[static_cast<std::size_t>(v)].type == type) out.push_back(v);
    return out;
}

std::vector<std::vector<int>> adjacency_list(const PowerGrid& grid) {
    std::vector<std::vector<int>> adj(grid.vertices.size());
    for (const auto& [i, j] : grid.edges) {
        adj[static_cast<std::size_t>(i)].push_back(j);
        adj[static_cast<std::size_t>(j)].push_back(i);
    }
    for (auto& nbrs : adj) std::sort(nbrs.begin(), nbrs.end());
    return adj;
}

namespace {

bool is_connected(std::size_t n, const std::vector<std::vector<int>>& adj) {
    if (n == 0) return false;
    std::vector<char> seen(n, 0);
    std::queue<int> q;
    q.push(0);
    seen[0] = 1;
    std::size_t count = 1;
    while (!q.empty()) {
        const int u = q.front();
        q.pop();
        for (int w : adj[static_cast<std::size_t>(u)]) {
            if (!seen[static_cast<std::size_t>(w)]) {
                seen[static_cast<std::size_t>(w)] = 1;
                ++count;
                q.push(w);
            }
        }
    }
    return count == n;
}

}  // namespace

void validate(const PowerGrid& grid) {
    const int n = grid.num_vertices();
    if (n == 0) fail("grid: empty vertex set");
    std::set<std::pair<int, int>> seen_edges;
    for (const auto& [i, j] : grid.edges) {
        if (i < 0 || j < 0 || i >= n || j >= n) fail("grid: edge endpoint out of range");
        if (i == j) fail("grid: self-loop on vertex " + std::to_string(i));
        if (i > j) fail("grid: edge not in canonical (i < j) order");
        if (!seen_edges.insert({i, j}).second) fail("grid: duplicate edge");
    }
    if (!is_connected(static_cast<std::size_t>(n), adjacency_list(grid))) fail("grid: graph is not connected");

    if (grid.static_features.rows() != static_cast<std::size_t>(n) ||
        grid.static_features.cols() != kNumStaticFeatures)
        fail("grid: static feature matrix shape mismatch");
    for (int v = 0; v < n; ++v) {
        for (std::size_t f = 0; f < kNumStaticFeatures; ++f) {
            if (!feature_applicable(f, grid.type_of(v)) &&
                grid.static_features.at(static_cast<std::size_t>(v), f) != 0.0) {
                fail("grid: non-applicable feature '" + static_feature_schema()[f].name +
                     "' is nonzero on vertex " + std::to_string(v));
            }
        }
    }

    int prev = -1;
    for (int s : grid.sensing) {
        if (s < 0 || s >= n) fail("grid: sensing index out of range");
        if (s <= prev) fail("grid: sensing set not sorted/unique");
        prev = s;
    }
    if (grid.slack < 0 || grid.slack >= n) fail("grid: slack index out of range");
    if (grid.type_of(grid.slack) != EquipmentType::Busbar) fail("grid: slack vertex is not a busbar");
}

void validate_expanded(const PowerGrid& grid) {
    validate(grid);
    const auto adj = adjacency_list(grid);
    for (int v = 0; v < grid.num_vertices(); ++v) {
        const auto t = grid.type_of(v);
        if (t != EquipmentType::Line && t != EquipmentType::Transformer && t != EquipmentType::Switch)
            continue;
        const auto& nbrs = adj[static_cast<std::size_t>(v)];
        int a = 0, b = 0;
        for (int w : nbrs) {
            if (grid.type_of(w) == EquipmentType::OriginA) ++a;
            if (grid.type_of(w) == EquipmentType::ExtremityB) ++b;
        }
        if (nbrs.size() != 2 || a != 1 || b != 1)
            fail("grid: branch equipment vertex " + std::to_string(v) +
                 " is not flanked by exactly one OriginA and one ExtremityB");
    }
}

PowerGrid expand_to_ab(const BusBranchGrid& grid) {
    const int n_bus = grid.num_busbars();
    if (n_bus < 1) fail("expand_to_ab: no busbars");
    if (grid.busbar_nominal_kv.size() != static_cast<std::size_t>(n_bus))
        fail("expand_to_ab: busbar nominal voltage list size mismatch");

    std::vector<Vertex> vertices;
    std::vector<std::array<double, kNumStaticFeatures>> feats;
    auto add_vertex = [&](std::string id, EquipmentType type,
                          const std::array<double, kNumStaticFeatures>& f) {
        vertices.push_back({std::move(id), type});
        feats.push_back(f);
        return static_cast<int>(vertices.size()) - 1;
    };

    for (int b = 0; b < n_bus; ++b) {
        std::array<double, kNumStaticFeatures> f{};
        f[kFeatNominalKv] = grid.busbar_nominal_kv[static_cast<std::size_t>(b)];
        add_vertex(grid.busbar_ids[static_cast<std::size_t>(b)], EquipmentType::Busbar, f);
    }

    std::vector<std::pair<int, int>> edges;
    auto add_edge = [&](int i, int j) { edges.emplace_back(std::min(i, j), std::max(i, j)); };

    for (std::size_t bi = 0; bi < grid.branches.size(); ++bi) {
        const Branch& branch = grid.branches[bi];
        if (branch.from < 0 || branch.from >= n_bus || branch.to < 0 || branch.to >= n_bus)
            fail("expand_to_ab: branch " + std::to_string(bi) + " references unknown busbar");
        if (branch.chain.empty())
            fail("expand_to_ab: branch " + std::to_string(bi) + " has an empty equipment list");
        int prev = branch.from;  // busbar or previous ExtremityB
        for (const Equipment& eq : branch.chain) {
            if (eq.type != EquipmentType::Line && eq.type != EquipmentType::Transformer &&
                eq.type != EquipmentType::Switch)
                fail("expand_to_ab: branch equipment '" + eq.id + "' has non-branch type " +
                     std::string(to_string(eq.type)));
            const int a = add_vertex(eq.id + ".A", EquipmentType::OriginA, {});
            const int e = add_vertex(eq.id, eq.type, eq.features);
            const int b = add_vertex(eq.id + ".B", EquipmentType::ExtremityB, {});
            add_edge(prev, a);
            add_edge(a, e);
            add_edge(e, b);
            prev = b;
        }
        add_edge(prev, branch.to);
    }

    for (const Attachment& att : grid.attachments) {
        if (att.busbar < 0 || att.busbar >= n_bus) fail("expand_to_ab: attachment references unknown busbar");
        if (att.equipment.type != EquipmentType::Load && att.equipment.type != EquipmentType::Generator)
            fail("expand_to_ab: attachment '" + att.equipment.id + "' must be a Load or Generator");
        const int v = add_vertex(att.equipment.id, att.equipment.type, att.equipment.features);
        add_edge(att.busbar, v);
    }

    std::sort(edges.begin(), edges.end());

    PowerGrid out;
    out.vertices = std::move(vertices);
    out.edges = std::move(edges);
    out.static_features = Matrix(out.vertices.size(), kNumStaticFeatures);
    for (std::size_t v = 0; v < out.vertices.size(); ++v)
        for (std::size_t f = 0; f < kNumStaticFeatures; ++f) out.static_features.at(v, f) = feats[v][f];
    out.slack = grid.slack;
    validate_expanded(out);
    return out;
}

void validate(const Snapshot& snapshot, const PowerGrid& grid) {
    int prev_v = -1;
    int prev_c = -1;
    for (const auto& m : snapshot.measurements) {
        if (m.vertex < 0 || m.vertex >= grid.num_vertices())
            fail("snapshot: measurement on vertex " + std::to_string(m.vertex) + " outside grid");
        if (!grid.is_sensed(m.vertex))
            fail("snapshot: measurement on unsensed vertex " + std::to_string(m.vertex));
        const int c = static_cast<int>(m.channel);
        if (m.vertex < prev_v || (m.vertex == prev_v && c <= prev_c))
            fail("snapshot: measurements not sorted by (vertex, channel)");
        prev_v = m.vertex;
        prev_c = c;
    }
    const auto busbars = grid.busbars();
    if (snapshot.busbar_labels.size() != busbars.size())
        fail("snapshot: labels must cover exactly the busbar set (" + std::to_string(busbars.size()) +
             " busbars, " + std::to_string(snapshot.busbar_labels.size()) + " labels)");
    for (std::size_t i = 0; i < busbars.size(); ++i) {
        if (snapshot.busbar_labels[i].first != busbars[i])
            fail("snapshot: label " + std::to_string(i) + " does not match busbar index " +
                 std::to_string(busbars[i]));
    }
}

std::size_t input_feature_width(const InputFeatureOptions& opts) {
    return kNumChannels + (opts.observation_mask ? kNumChannels : 0) + kNumEquipmentTypes +
           kNumStaticFeatures;
}

Matrix input_features(const PowerGrid& grid, const Snapshot& snapshot, const InputFeatureOptions& opts) {
    const auto n = static_cast<std::size_t>(grid.num_vertices());
    const std::size_t width = input_feature_width(opts);
    Matrix h0(n, width);

    for (const auto& m : snapshot.measurements) {
        if (m.vertex < 0 || m.vertex >= grid.num_vertices())
            fail("input_features: measurement on vertex " + std::to_string(m.vertex) + " outside grid");
        if (!grid.is_sensed(m.vertex))
            fail("input_features: measurement on unsensed vertex " + std::to_string(m.vertex));
        const auto v = static_cast<std::size_t>(m.vertex);
        const auto c = static_cast<std::size_t>(m.channel);
        h0.at(v, c) = m.value;
        if (opts.observation_mask) h0.at(v, kNumChannels + c) = 1.0;
    }

    const std::size_t type_base = kNumChannels + (opts.observation_mask ? kNumChannels : 0);
    const std::size_t static_base = type_base + kNumEquipmentTypes;
    for (std::size_t v = 0; v < n; ++v) {
        h0.at(v, type_base + static_cast<std::size_t>(grid.type_of(static_cast<int>(v)))) = 1.0;
        for (std::size_t f = 0; f < kNumStaticFeatures; ++f)
            h0.at(v, static_base + f) = grid.static_features.at(v, f);
    }
    return h0;
}

}  // namespace gridse
