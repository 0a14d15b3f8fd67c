#include "gridse/powerflow.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <map>
#include <queue>
#include <stdexcept>

#include "gridse/rng.hpp"

namespace gridse {

namespace {

using Complex = std::complex<double>;

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

bool is_branch_equipment(EquipmentType t) {
    return t == EquipmentType::Line || t == EquipmentType::Transformer || t == EquipmentType::Switch;
}

/// One series element of a branch chain, in from -> to order.
struct ChainElement {
    int vertex_a = -1;  // OriginA vertex (from side)
    int vertex = -1;    // equipment vertex
    int vertex_b = -1;  // ExtremityB vertex (to side)
    Complex z{};
};

struct ChainBranch {
    int from = -1;  // busbar on the OriginA side of the first element
    int to = -1;
    std::vector<ChainElement> elements;
    Complex total_z{};
};

/// Reconstructs the bus-branch structure of an expanded grid by walking the
/// A/equipment/B chains between busbars.
struct Topology {
    std::vector<int> busbars;
    std::vector<ChainBranch> branches;
    std::vector<std::pair<int, int>> terminals;  // (busbar, Load/Generator vertex)
};

Topology discover_topology(const PowerGrid& grid, const std::vector<std::vector<int>>& adj) {
    Topology topo;
    topo.busbars = grid.busbars();
    std::vector<char> chain_visited(static_cast<std::size_t>(grid.num_vertices()), 0);

    for (int bus : topo.busbars) {
        for (int w : adj[static_cast<std::size_t>(bus)]) {
            const auto wt = grid.type_of(w);
            if (wt == EquipmentType::Load || wt == EquipmentType::Generator) {
                topo.terminals.emplace_back(bus, w);
                continue;
            }
            if (wt == EquipmentType::Busbar)
                fail("solve_radial: busbars " + std::to_string(bus) + " and " + std::to_string(w) +
                     " are directly connected (not an expanded grid)");
            if (chain_visited[static_cast<std::size_t>(w)]) continue;

            // Walk the chain until the opposite busbar.
            std::vector<int> path{bus};
            int prev = bus;
            int cur = w;
            while (grid.type_of(cur) != EquipmentType::Busbar) {
                chain_visited[static_cast<std::size_t>(cur)] = 1;
                path.push_back(cur);
                int nxt = -1;
                for (int u : adj[static_cast<std::size_t>(cur)])
                    if (u != prev) {
                        nxt = u;
                        break;
                    }
                if (nxt < 0) fail("solve_radial: dangling branch chain at vertex " + std::to_string(cur));
                prev = cur;
                cur = nxt;
            }
            path.push_back(cur);

            // The chain alternates A, equipment, B (in some orientation).
            if ((path.size() - 2) % 3 != 0)
                fail("solve_radial: malformed branch chain between busbars " + std::to_string(bus) +
                     " and " + std::to_string(cur));
            const bool forward = grid.type_of(path[1]) == EquipmentType::OriginA;

            ChainBranch branch;
            branch.from = forward ? bus : cur;
            branch.to = forward ? cur : bus;
            std::vector<int> ordered(path.begin() + 1, path.end() - 1);
            if (!forward) std::reverse(ordered.begin(), ordered.end());
            for (std::size_t i = 0; i + 3 <= ordered.size(); i += 3) {
                ChainElement el;
                el.vertex_a = ordered[i];
                el.vertex = ordered[i + 1];
                el.vertex_b = ordered[i + 2];
                if (grid.type_of(el.vertex_a) != EquipmentType::OriginA ||
                    !is_branch_equipment(grid.type_of(el.vertex)) ||
                    grid.type_of(el.vertex_b) != EquipmentType::ExtremityB)
                    fail("solve_radial: malformed A/equipment/B triple in branch between busbars " +
                         std::to_string(branch.from) + " and " + std::to_string(branch.to));
                const auto v = static_cast<std::size_t>(el.vertex);
                el.z = Complex(grid.static_features.at(v, kFeatR), grid.static_features.at(v, kFeatX));
                branch.total_z += el.z;
                branch.elements.push_back(el);
            }
            topo.branches.push_back(std::move(branch));
        }
    }
    return topo;
}

}  // namespace

SolveResult solve_radial(const PowerGrid& expanded, const LoadAssignment& loads, const SolveOptions& opts) {
    validate(expanded);
    const int n = expanded.num_vertices();
    if (expanded.edges.size() != static_cast<std::size_t>(n) - 1)
        fail("solve_radial: grid is not radial (|E| = " + std::to_string(expanded.edges.size()) +
             ", |V| - 1 = " + std::to_string(n - 1) + ")");

    const auto adj = adjacency_list(expanded);
    const Topology topo = discover_topology(expanded, adj);

    // Demand per Load/Generator vertex.
    std::map<int, Complex> demand;
    for (const auto& [vertex, pq] : loads) {
        if (vertex < 0 || vertex >= n) fail("solve_radial: load vertex out of range");
        const auto t = expanded.type_of(vertex);
        if (t != EquipmentType::Load && t != EquipmentType::Generator)
            fail("solve_radial: vertex " + std::to_string(vertex) + " is not a Load/Generator");
        demand[vertex] += Complex(pq.first, pq.second);
    }

    // Aggregate demand onto busbars.
    const std::size_t n_bus = topo.busbars.size();
    std::map<int, std::size_t> bus_pos;
    for (std::size_t i = 0; i < n_bus; ++i) bus_pos[topo.busbars[i]] = i;
    std::vector<Complex> bus_demand(n_bus);
    std::vector<Complex> terminal_demand(static_cast<std::size_t>(n));
    for (const auto& [bus, term] : topo.terminals) {
        const auto it = demand.find(term);
        if (it == demand.end()) continue;
        bus_demand[bus_pos.at(bus)] += it->second;
        terminal_demand[static_cast<std::size_t>(term)] = it->second;
    }

    // Busbar tree rooted at the slack, built over chain branches.
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> bus_adj(n_bus);  // (bus, branch id)
    for (std::size_t bi = 0; bi < topo.branches.size(); ++bi) {
        const auto& br = topo.branches[bi];
        bus_adj[bus_pos.at(br.from)].emplace_back(bus_pos.at(br.to), bi);
        bus_adj[bus_pos.at(br.to)].emplace_back(bus_pos.at(br.from), bi);
    }
    const std::size_t root = bus_pos.at(expanded.slack);
    std::vector<int> parent(n_bus, -1);
    std::vector<int> parent_branch(n_bus, -1);
    std::vector<std::size_t> order;  // BFS order from root
    order.reserve(n_bus);
    {
        std::vector<char> seen(n_bus, 0);
        std::queue<std::size_t> q;
        q.push(root);
        seen[root] = 1;
        while (!q.empty()) {
            const auto u = q.front();
            q.pop();
            order.push_back(u);
            for (const auto& [w, bi] : bus_adj[u]) {
                if (seen[w]) continue;
                seen[w] = 1;
                parent[w] = static_cast<int>(u);
                parent_branch[w] = static_cast<int>(bi);
                q.push(w);
            }
        }
        if (order.size() != n_bus) fail("solve_radial: busbar graph is disconnected");
    }

    // Backward/forward sweep on the busbar tree.
    const Complex v_slack(opts.slack_voltage, 0.0);
    std::vector<Complex> v_bus(n_bus, v_slack);
    std::vector<Complex> i_branch(n_bus);  // current flowing parent -> bus
    double residual = std::numeric_limits<double>::infinity();
    int iterations = 0;
    for (; iterations < opts.max_iterations; ++iterations) {
        // Backward: accumulate currents from the leaves.
        std::vector<Complex> i_acc(n_bus);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            const auto u = *it;
            Complex inj = bus_demand[u] != Complex{} ? std::conj(bus_demand[u] / v_bus[u]) : Complex{};
            i_acc[u] += inj;
            if (parent[u] >= 0) {
                i_branch[u] = i_acc[u];
                i_acc[static_cast<std::size_t>(parent[u])] += i_acc[u];
            }
        }
        // Forward: update voltages from the slack.
        residual = 0.0;
        for (const auto u : order) {
            if (parent[u] < 0) {
                v_bus[u] = v_slack;
                continue;
            }
            const auto& br = topo.branches[static_cast<std::size_t>(parent_branch[u])];
            const Complex v_new = v_bus[static_cast<std::size_t>(parent[u])] - br.total_z * i_branch[u];
            residual = std::max(residual, std::abs(v_new - v_bus[u]));
            v_bus[u] = v_new;
        }
        if (!std::isfinite(residual))
            throw PowerflowError("solve_radial: sweep produced non-finite voltages", residual, iterations + 1);
        if (residual < opts.tolerance) {
            ++iterations;
            break;
        }
    }
    if (residual >= opts.tolerance)
        throw PowerflowError("solve_radial: no convergence after " + std::to_string(iterations) +
                                 " iterations (residual " + std::to_string(residual) + ")",
                             residual, iterations);

    // Assemble the full per-vertex state.
    SolveResult result;
    result.iterations = iterations;
    result.residual = residual;
    result.full_state = Matrix(static_cast<std::size_t>(n), kNumChannels);
    result.voltages.assign(static_cast<std::size_t>(n), 0.0);
    auto set_state = [&](int vertex, double i, double p, double q, double v) {
        const auto r = static_cast<std::size_t>(vertex);
        result.full_state.at(r, static_cast<std::size_t>(Channel::I)) = i;
        result.full_state.at(r, static_cast<std::size_t>(Channel::P)) = p;
        result.full_state.at(r, static_cast<std::size_t>(Channel::Q)) = q;
        result.full_state.at(r, static_cast<std::size_t>(Channel::V)) = v;
        result.voltages[r] = v;
    };

    for (std::size_t u = 0; u < n_bus; ++u) set_state(topo.busbars[u], 0.0, 0.0, 0.0, std::abs(v_bus[u]));

    // Branch flows and interior node states, computed in from -> to
    // orientation with the signed current of the tree direction.
    for (std::size_t bi = 0; bi < topo.branches.size(); ++bi) {
        const auto& br = topo.branches[bi];
        const auto from_pos = bus_pos.at(br.from);
        const auto to_pos = bus_pos.at(br.to);
        // i_branch is stored on the child busbar; sign it from -> to.
        Complex i_ft;
        int child_pos;
        if (parent[to_pos] == static_cast<int>(from_pos)) {
            child_pos = static_cast<int>(to_pos);
            i_ft = i_branch[to_pos];
        } else {
            child_pos = static_cast<int>(from_pos);
            i_ft = -i_branch[from_pos];
        }
        Complex v_node = v_bus[from_pos];
        for (const auto& el : br.elements) {
            const Complex s_a = v_node * std::conj(i_ft);
            const double va = std::abs(v_node);
            const Complex v_next = v_node - el.z * i_ft;
            const Complex s_b = v_next * std::conj(i_ft);
            const double vb = std::abs(v_next);
            const double i_mag = std::abs(i_ft);
            set_state(el.vertex_a, i_mag, s_a.real(), s_a.imag(), va);
            set_state(el.vertex_b, i_mag, s_b.real(), s_b.imag(), vb);
            set_state(el.vertex, i_mag, 0.5 * (s_a.real() + s_b.real()), 0.5 * (s_a.imag() + s_b.imag()),
                      0.5 * (va + vb));
            v_node = v_next;
        }

        BranchFlow flow;
        const auto parent_pos = static_cast<std::size_t>(parent[static_cast<std::size_t>(child_pos)]);
        flow.from_busbar = topo.busbars[parent_pos];
        flow.to_busbar = topo.busbars[static_cast<std::size_t>(child_pos)];
        const Complex i_pc = i_branch[static_cast<std::size_t>(child_pos)];
        const Complex s_send = v_bus[parent_pos] * std::conj(i_pc);
        const Complex s_recv = v_bus[static_cast<std::size_t>(child_pos)] * std::conj(i_pc);
        flow.p_send = s_send.real();
        flow.q_send = s_send.imag();
        flow.p_recv = s_recv.real();
        flow.q_recv = s_recv.imag();
        flow.current = std::abs(i_pc);
        result.flows.push_back(flow);
    }
    std::sort(result.flows.begin(), result.flows.end(),
              [](const BranchFlow& a, const BranchFlow& b) { return a.to_busbar < b.to_busbar; });

    // Terminal equipment states and the slack injection.
    for (const auto& [bus, term] : topo.terminals) {
        const Complex s = terminal_demand[static_cast<std::size_t>(term)];
        const double v = std::abs(v_bus[bus_pos.at(bus)]);
        const double i = v > 0.0 ? std::abs(s) / v : 0.0;
        set_state(term, i, s.real(), s.imag(), v);
    }
    Complex i_root;
    for (std::size_t u = 0; u < n_bus; ++u)
        if (parent[u] == static_cast<int>(root)) i_root += i_branch[u];
    Complex s_slack = v_slack * std::conj(i_root) + bus_demand[root];
    result.slack_p = s_slack.real();
    result.slack_q = s_slack.imag();
    const double i_slack = std::abs(v_slack) > 0.0 ? std::abs(s_slack) / std::abs(v_slack) : 0.0;
    set_state(expanded.slack, i_slack, s_slack.real(), s_slack.imag(), std::abs(v_bus[root]));

    return result;
}

namespace {

bool channel_defined(const PowerGrid& grid, int vertex, Channel channel) {
    if (grid.type_of(vertex) == EquipmentType::Busbar && vertex != grid.slack)
        return channel == Channel::V;
    return true;
}

}  // namespace

Snapshot make_snapshot(const PowerGrid& grid, const SolveResult& result, int time_index) {
    if (result.full_state.rows() != static_cast<std::size_t>(grid.num_vertices()))
        fail("make_snapshot: solve result does not match grid size");
    Snapshot snap;
    snap.time_index = time_index;
    for (int v : grid.sensing) {
        for (std::size_t c = 0; c < kNumChannels; ++c) {
            const auto channel = static_cast<Channel>(c);
            if (!channel_defined(grid, v, channel)) continue;
            snap.measurements.push_back(
                {v, channel, result.full_state.at(static_cast<std::size_t>(v), c)});
        }
    }
    for (int b : grid.busbars())
        snap.busbar_labels.emplace_back(b, result.voltages[static_cast<std::size_t>(b)]);
    validate(snap, grid);
    return snap;
}

std::vector<Snapshot> add_label_noise(const std::vector<Snapshot>& snapshots, const NoiseSpec& spec) {
    if (spec.p < 0.0) fail("add_label_noise: p must be >= 0");
    if (spec.p == 0.0) return snapshots;
    if (snapshots.size() < 2) fail("add_label_noise: need at least 2 snapshots to estimate variance");

    double sum = 0.0, sum_sq = 0.0;
    std::size_t count = 0;
    for (const auto& s : snapshots)
        for (const auto& [bus, v] : s.busbar_labels) {
            sum += v;
            sum_sq += v * v;
            ++count;
        }
    if (count == 0) fail("add_label_noise: snapshots carry no labels");
    const double mean = sum / static_cast<double>(count);
    const double variance = std::max(0.0, sum_sq / static_cast<double>(count) - mean * mean);
    const double sigma = std::sqrt(spec.p * variance);

    Rng rng = Rng(spec.seed).derive("label-noise");
    std::vector<Snapshot> out = snapshots;
    for (auto& s : out)
        for (auto& [bus, v] : s.busbar_labels) v += rng.normal(0.0, sigma);
    return out;
}

}  // namespace gridse
