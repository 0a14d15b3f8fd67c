#include "gridse/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "gridse/rng.hpp"

namespace gridse {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

int sample_poisson(Rng& rng, double lambda) {
    // Knuth's method; fine for the small rates used here.
    const double limit = std::exp(-lambda);
    int k = 0;
    double p = 1.0;
    do {
        ++k;
        p *= rng.uniform();
    } while (p > limit);
    return k - 1;
}

const BranchTemplate& sample_template(Rng& rng, const std::vector<BranchTemplate>& templates,
                                      double total_weight) {
    double x = rng.uniform(0.0, total_weight);
    for (const auto& t : templates) {
        x -= t.weight;
        if (x <= 0.0) return t;
    }
    return templates.back();
}

}  // namespace

void validate(const FeederConfig& config) {
    if (config.n_busbars < 2) fail("feeder config: n_busbars must be >= 2");
    if (config.sensing_fraction <= 0.0 || config.sensing_fraction >= 1.0)
        fail("feeder config: sensing_fraction must lie in (0, 1)");
    if (config.branch_templates.empty()) fail("feeder config: empty branch template mix");
    double total = 0.0;
    for (const auto& t : config.branch_templates) {
        if (t.chain.empty()) fail("feeder config: branch template with empty chain");
        if (t.weight < 0.0) fail("feeder config: negative template weight");
        total += t.weight;
        for (const auto type : t.chain)
            if (type != EquipmentType::Line && type != EquipmentType::Transformer &&
                type != EquipmentType::Switch)
                fail("feeder config: branch template contains non-branch equipment");
    }
    if (total <= 0.0) fail("feeder config: template weights sum to zero");
    if (config.loads_per_busbar < 0.0) fail("feeder config: negative loads_per_busbar");
    if (config.generator_share < 0.0 || config.generator_share > 1.0)
        fail("feeder config: generator_share must lie in [0, 1]");
    if (config.n_arms < 1) fail("feeder config: n_arms must be >= 1");
}

BusBranchGrid generate_feeder(const FeederConfig& config) {
    validate(config);
    Rng rng = Rng(config.seed).derive("feeder");
    Rng topo_rng = rng.derive("topology");
    Rng eq_rng = rng.derive("equipment");
    Rng load_rng = rng.derive("loads");

    const int n = config.n_busbars;
    BusBranchGrid grid;
    grid.slack = 0;
    for (int b = 0; b < n; ++b) {
        grid.busbar_ids.push_back("B" + std::to_string(b));
        grid.busbar_nominal_kv.push_back(config.nominal_kv);
    }

    // Busbar tree: n_arms feeder chains radiating from the slack busbar,
    // remaining busbars as short laterals anchored preferentially near the
    // root. parent[b] defines the radial structure.
    std::vector<int> parent(static_cast<std::size_t>(n), -1);
    const int arm_busbars =
        std::min(n - 1, std::max(config.n_arms,
                                 static_cast<int>(std::lround(config.arm_busbar_fraction * n))));
    std::vector<std::vector<int>> arms(static_cast<std::size_t>(std::min(config.n_arms, arm_busbars)));
    int next = 1;
    for (std::size_t a = 0; a < arms.size() && next <= arm_busbars; ++a) {
        arms[a].push_back(0);
    }
    // Deal arm busbars round-robin so arms stay near-equal length.
    for (std::size_t a = 0; next <= arm_busbars; a = (a + 1) % arms.size()) {
        parent[static_cast<std::size_t>(next)] = arms[a].back();
        arms[a].push_back(next);
        ++next;
    }
    // Laterals: anchor depth ~ depth_max * U^bias, then possibly extend an
    // existing lateral instead of starting a new one.
    std::vector<int> lateral_tips;
    for (int b = next; b < n; ++b) {
        int anchor;
        if (!lateral_tips.empty() && topo_rng.bernoulli(config.lateral_extend_probability)) {
            const auto t = static_cast<std::size_t>(
                topo_rng.uniform_int(0, static_cast<std::int64_t>(lateral_tips.size()) - 1));
            anchor = lateral_tips[t];
            lateral_tips.erase(lateral_tips.begin() + static_cast<std::ptrdiff_t>(t));
        } else {
            const auto& arm = arms[static_cast<std::size_t>(
                topo_rng.uniform_int(0, static_cast<std::int64_t>(arms.size()) - 1))];
            const double u = std::pow(topo_rng.uniform(), config.anchor_root_bias);
            const auto depth = static_cast<std::size_t>(
                std::min<double>(std::floor(u * static_cast<double>(arm.size())),
                                 static_cast<double>(arm.size() - 1)));
            anchor = arm[depth];
        }
        parent[static_cast<std::size_t>(b)] = anchor;
        lateral_tips.push_back(b);
    }

    // Branches with sampled equipment chains.
    const double total_weight = std::accumulate(config.branch_templates.begin(),
                                                config.branch_templates.end(), 0.0,
                                                [](double s, const BranchTemplate& t) { return s + t.weight; });
    int line_counter = 0, transformer_counter = 0, switch_counter = 0;
    for (int b = 1; b < n; ++b) {
        Branch branch;
        branch.from = parent[static_cast<std::size_t>(b)];
        branch.to = b;
        const auto& tmpl = sample_template(eq_rng, config.branch_templates, total_weight);
        for (const auto type : tmpl.chain) {
            Equipment eq;
            eq.type = type;
            eq.features[kFeatNominalKv] = config.nominal_kv;
            switch (type) {
                case EquipmentType::Line:
                    eq.id = "L" + std::to_string(line_counter++);
                    eq.features[kFeatR] = eq_rng.uniform(config.line_r.lo, config.line_r.hi);
                    eq.features[kFeatX] = eq_rng.uniform(config.line_x.lo, config.line_x.hi);
                    eq.features[kFeatLengthKm] =
                        eq_rng.uniform(config.line_length_km.lo, config.line_length_km.hi);
                    break;
                case EquipmentType::Transformer: {
                    eq.id = "T" + std::to_string(transformer_counter++);
                    eq.features[kFeatR] = eq_rng.uniform(config.transformer_r.lo, config.transformer_r.hi);
                    eq.features[kFeatX] = eq_rng.uniform(config.transformer_x.lo, config.transformer_x.hi);
                    const auto wiring = eq_rng.uniform_int(0, 2);
                    eq.features[kFeatWiring0 + static_cast<std::size_t>(wiring)] = 1.0;
                    break;
                }
                default:
                    eq.id = "SW" + std::to_string(switch_counter++);
                    break;  // ideal switch: zero impedance
            }
            branch.chain.push_back(std::move(eq));
        }
        grid.branches.push_back(std::move(branch));
    }

    // Terminal loads (and optionally generators) on non-slack busbars.
    int load_counter = 0, gen_counter = 0;
    for (int b = 1; b < n; ++b) {
        const int count = sample_poisson(load_rng, config.loads_per_busbar);
        for (int k = 0; k < count; ++k) {
            Attachment att;
            att.busbar = b;
            const bool is_gen = load_rng.bernoulli(config.generator_share);
            att.equipment.type = is_gen ? EquipmentType::Generator : EquipmentType::Load;
            att.equipment.id =
                is_gen ? "GEN" + std::to_string(gen_counter++) : "LD" + std::to_string(load_counter++);
            att.equipment.features[kFeatNominalKv] = config.nominal_kv;
            grid.attachments.push_back(std::move(att));
        }
    }
    return grid;
}

PowerGrid place_sensors(const PowerGrid& expanded, double fraction, std::uint64_t seed,
                        const SensorPlacementOptions& opts) {
    if (fraction <= 0.0 || fraction >= 1.0) fail("place_sensors: fraction must lie in (0, 1)");
    const int n = expanded.num_vertices();
    const auto target = static_cast<int>(std::lround(fraction * n));
    if (target < 1) fail("place_sensors: fraction * n < 1, no sensor budget");

    const auto adj = adjacency_list(expanded);
    auto busbar_adjacent = [&](int v) {
        for (int w : adj[static_cast<std::size_t>(v)])
            if (expanded.type_of(w) == EquipmentType::Busbar) return true;
        return false;
    };
    auto eligible = [&](int v) {
        const auto t = expanded.type_of(v);
        if (t != EquipmentType::OriginA && t != EquipmentType::ExtremityB && t != EquipmentType::Load)
            return false;
        return !(opts.exclude_busbar_adjacent && busbar_adjacent(v));
    };

    // Group candidates into sites: one group per branch (its A/B chain) and
    // one per busbar's load cluster, so sensors bundle the way substation
    // instrumentation does.
    std::vector<std::vector<int>> groups;
    std::vector<char> visited(static_cast<std::size_t>(n), 0);
    for (int v = 0; v < n; ++v) {
        if (expanded.type_of(v) != EquipmentType::Busbar) continue;
        std::vector<int> load_group;
        for (int w : adj[static_cast<std::size_t>(v)]) {
            const auto wt = expanded.type_of(w);
            if ((wt == EquipmentType::Load || wt == EquipmentType::Generator)) {
                if (eligible(w)) load_group.push_back(w);
                continue;
            }
            if (wt != EquipmentType::OriginA && wt != EquipmentType::ExtremityB) continue;
            if (visited[static_cast<std::size_t>(w)]) continue;
            // Walk the branch chain to the opposite busbar.
            std::vector<int> group;
            int prev = v;
            int cur = w;
            while (expanded.type_of(cur) != EquipmentType::Busbar) {
                visited[static_cast<std::size_t>(cur)] = 1;
                if (eligible(cur)) group.push_back(cur);
                int nxt = -1;
                for (int u : adj[static_cast<std::size_t>(cur)])
                    if (u != prev) {
                        nxt = u;
                        break;
                    }
                if (nxt < 0) break;  // dead end; tolerated on malformed chains
                prev = cur;
                cur = nxt;
            }
            if (!group.empty()) groups.push_back(std::move(group));
        }
        if (!load_group.empty()) groups.push_back(std::move(load_group));
    }

    std::size_t capacity = 0;
    for (const auto& g : groups) capacity += g.size();
    const auto equipment_target = static_cast<std::size_t>(std::max(0, target - 1));
    if (capacity < equipment_target)
        fail("place_sensors: sensor budget " + std::to_string(target) + " exceeds " +
             std::to_string(capacity + 1) + " eligible sites");

    Rng rng = Rng(seed).derive("sensors");
    rng.shuffle(groups);
    for (auto& g : groups) rng.shuffle(g);

    std::vector<int> sensing;
    sensing.push_back(expanded.slack);
    std::size_t placed = 0;
    // Cycle over groups, drawing a bundle from each until the budget is used.
    std::vector<std::size_t> offsets(groups.size(), 0);
    while (placed < equipment_target) {
        bool progress = false;
        for (std::size_t gi = 0; gi < groups.size() && placed < equipment_target; ++gi) {
            auto& group = groups[gi];
            auto& off = offsets[gi];
            if (off >= group.size()) continue;
            auto bundle = static_cast<std::size_t>(
                std::max<std::int64_t>(1, sample_poisson(rng, opts.bundle_mean - 1.0) + 1));
            while (bundle-- > 0 && off < group.size() && placed < equipment_target) {
                sensing.push_back(group[off++]);
                ++placed;
                progress = true;
            }
        }
        if (!progress) break;
    }

    std::sort(sensing.begin(), sensing.end());
    sensing.erase(std::unique(sensing.begin(), sensing.end()), sensing.end());

    PowerGrid out = expanded;
    out.sensing = std::move(sensing);
    validate(out);
    return out;
}

std::vector<std::pair<int, std::pair<double, double>>> LoadProfileSet::profile(int index) const {
    if (index < 0 || index >= num_profiles()) throw std::out_of_range("LoadProfileSet::profile index");
    std::vector<std::pair<int, std::pair<double, double>>> out;
    out.reserve(load_vertices.size());
    for (std::size_t l = 0; l < load_vertices.size(); ++l) {
        const double s = scaling.at(static_cast<std::size_t>(index), l);
        out.emplace_back(load_vertices[l],
                         std::make_pair(base_pq[l].first * s, base_pq[l].second * s));
    }
    return out;
}

LoadProfileSet sample_profiles(const PowerGrid& expanded, int m, std::uint64_t seed,
                               const ProfileConfig& config) {
    if (m < 1) fail("sample_profiles: m must be >= 1");
    LoadProfileSet set;
    set.load_vertices = expanded.vertices_of_type(EquipmentType::Load);
    if (set.load_vertices.empty()) fail("sample_profiles: grid has no loads");

    Rng rng = Rng(seed).derive("profiles");
    Rng base_rng = rng.derive("base");
    Rng scale_rng = rng.derive("scaling");

    const std::size_t num_loads = set.load_vertices.size();
    set.base_pq.reserve(num_loads);
    for (std::size_t l = 0; l < num_loads; ++l) {
        const double p = base_rng.uniform(config.load_p.lo, config.load_p.hi);
        const double pf = base_rng.uniform(config.power_factor.lo, config.power_factor.hi);
        const double q = p * std::tan(std::acos(pf));
        set.base_pq.emplace_back(p, q);
    }

    set.scaling = Matrix(static_cast<std::size_t>(m), num_loads, 1.0);
    set.cluster_labels.assign(static_cast<std::size_t>(m), 0);
    if (m == 1) return set;  // identity scaling: the base profile itself

    const bool with_outlier = m >= config.outlier_min_profiles;
    const auto outlier_index =
        with_outlier ? static_cast<std::size_t>(scale_rng.uniform_int(0, m - 1)) : static_cast<std::size_t>(m);
    for (std::size_t i = 0; i < static_cast<std::size_t>(m); ++i) {
        if (i == outlier_index) {
            set.cluster_labels[i] = 2;
            for (std::size_t l = 0; l < num_loads; ++l) set.scaling.at(i, l) = config.outlier_scale;
            continue;
        }
        const bool high = scale_rng.bernoulli(0.5);
        set.cluster_labels[i] = high ? 1 : 0;
        const double mean = high ? config.cluster_high : config.cluster_low;
        for (std::size_t l = 0; l < num_loads; ++l)
            set.scaling.at(i, l) = mean * std::exp(config.cluster_sigma * scale_rng.normal());
    }
    return set;
}

}  // namespace gridse
