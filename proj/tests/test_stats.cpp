#include <doctest.h>

#include <cmath>

#include "gridse/rng.hpp"
#include "gridse/stats.hpp"
#include "gridse/synth.hpp"

using namespace gridse;

namespace {

/// Path graph as a PowerGrid (types are irrelevant to the metrics).
PowerGrid path_graph(int n) {
    PowerGrid g;
    for (int i = 0; i < n; ++i)
        g.vertices.push_back({"v" + std::to_string(i),
                              i == 0 ? EquipmentType::Busbar : EquipmentType::Switch});
    for (int i = 0; i + 1 < n; ++i) g.edges.emplace_back(i, i + 1);
    g.static_features = Matrix(static_cast<std::size_t>(n), kNumStaticFeatures);
    // nominal kv on applicable types only
    for (int i = 0; i < n; ++i) g.static_features.at(static_cast<std::size_t>(i), kFeatNominalKv) = 1.0;
    g.slack = 0;
    return g;
}

}  // namespace

TEST_CASE("5-vertex path: hand-countable statistics") {
    const GraphStats s = compute_stats(path_graph(5));
    CHECK(s.mean_degree == doctest::Approx(1.6));
    CHECK(s.diameter == 4);
    CHECK(s.mean_shortest_path == doctest::Approx(2.0));
    CHECK(s.mean_clustering == doctest::Approx(0.0));
}

TEST_CASE("any tree has zero clustering") {
    FeederConfig config;
    config.seed = 5;
    const PowerGrid grid = expand_to_ab(generate_feeder(config));
    const GraphStats s = compute_stats(grid);
    CHECK(s.mean_clustering == 0.0);
}

TEST_CASE("a triangle has clustering 1") {
    PowerGrid g;
    for (int i = 0; i < 3; ++i) g.vertices.push_back({"v" + std::to_string(i), EquipmentType::Busbar});
    g.edges = {{0, 1}, {0, 2}, {1, 2}};
    g.static_features = Matrix(3, kNumStaticFeatures);
    const GraphStats s = compute_stats(g);
    CHECK(s.mean_clustering == doctest::Approx(1.0));
    CHECK(s.diameter == 1);
}

TEST_CASE("stats are invariant under vertex relabeling") {
    FeederConfig config;
    config.n_busbars = 10;
    config.seed = 17;
    PowerGrid grid = expand_to_ab(generate_feeder(config));
    grid = place_sensors(grid, 0.1, 17);
    const GraphStats before = compute_stats(grid);

    // Relabel: reverse vertex order with consistent edges/features/sensing.
    const int n = grid.num_vertices();
    auto perm = [n](int v) { return n - 1 - v; };
    PowerGrid relabeled;
    relabeled.vertices.resize(static_cast<std::size_t>(n));
    relabeled.static_features = Matrix(static_cast<std::size_t>(n), kNumStaticFeatures);
    for (int v = 0; v < n; ++v) {
        relabeled.vertices[static_cast<std::size_t>(perm(v))] = grid.vertices[static_cast<std::size_t>(v)];
        for (std::size_t f = 0; f < kNumStaticFeatures; ++f)
            relabeled.static_features.at(static_cast<std::size_t>(perm(v)), f) =
                grid.static_features.at(static_cast<std::size_t>(v), f);
    }
    for (const auto& [i, j] : grid.edges)
        relabeled.edges.emplace_back(std::min(perm(i), perm(j)), std::max(perm(i), perm(j)));
    std::sort(relabeled.edges.begin(), relabeled.edges.end());
    for (int s : grid.sensing) relabeled.sensing.push_back(perm(s));
    std::sort(relabeled.sensing.begin(), relabeled.sensing.end());
    relabeled.slack = perm(grid.slack);

    const GraphStats after = compute_stats(relabeled);
    CHECK(after.mean_degree == doctest::Approx(before.mean_degree));
    CHECK(after.diameter == before.diameter);
    CHECK(after.mean_shortest_path == doctest::Approx(before.mean_shortest_path));
    CHECK(after.mean_clustering == doctest::Approx(before.mean_clustering));
}

TEST_CASE("k-th closest sensor distances are sorted and start at >= 2 off-slack") {
    FeederConfig config;
    config.seed = 23;
    PowerGrid grid = place_sensors(expand_to_ab(generate_feeder(config)), 0.095, 23);
    const GraphStats s = compute_stats(grid);
    const auto busbars = grid.busbars();
    REQUIRE(s.busbar_sensor_distances.size() == busbars.size());
    for (std::size_t b = 0; b < busbars.size(); ++b) {
        const auto& ds = s.busbar_sensor_distances[b];
        REQUIRE(ds.size() == grid.sensing.size());
        for (std::size_t k = 1; k < ds.size(); ++k) CHECK(ds[k] >= ds[k - 1]);
        if (busbars[b] == grid.slack)
            CHECK(ds.front() == 0);
        else
            CHECK(ds.front() >= 2);  // no sensor adjacent to a non-slack busbar
    }
}

TEST_CASE("disconnected graphs are rejected with component sizes") {
    PowerGrid g = path_graph(4);
    g.edges.erase(g.edges.begin() + 1);
    try {
        (void)compute_stats(g);
        FAIL("expected disconnection error");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("2 components") != std::string::npos);
    }
}

TEST_CASE("pca: rank-1 data has zero second explained variance") {
    Matrix data(6, 4);
    for (std::size_t r = 0; r < 6; ++r)
        for (std::size_t c = 0; c < 4; ++c)
            data.at(r, c) = static_cast<double>(r) * (1.0 + static_cast<double>(c));
    const Pca2d p = pca_2d(data);
    CHECK(p.explained_variance_ratio[0] == doctest::Approx(1.0));
    CHECK(p.explained_variance_ratio[1] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("pca preserves pairwise distances of data already in a 2-D subspace") {
    Rng rng(31);
    Matrix data(10, 5);
    // rows = a*u + b*v for fixed directions u, v.
    const std::vector<double> u{1, 2, 0, -1, 3}, v{0, 1, 1, 1, -1};
    std::vector<std::pair<double, double>> coeffs;
    for (std::size_t r = 0; r < 10; ++r) {
        const double a = rng.uniform(-1, 1), b = rng.uniform(-1, 1);
        coeffs.emplace_back(a, b);
        for (std::size_t c = 0; c < 5; ++c) data.at(r, c) = a * u[c] + b * v[c];
    }
    const Pca2d p = pca_2d(data);
    for (std::size_t i = 0; i < 10; ++i)
        for (std::size_t j = i + 1; j < 10; ++j) {
            double orig = 0.0, proj = 0.0;
            for (std::size_t c = 0; c < 5; ++c) {
                const double d = data.at(i, c) - data.at(j, c);
                orig += d * d;
            }
            for (std::size_t c = 0; c < 2; ++c) {
                const double d = p.projections.at(i, c) - p.projections.at(j, c);
                proj += d * d;
            }
            CHECK(std::sqrt(proj) == doctest::Approx(std::sqrt(orig)).epsilon(1e-9));
        }
}

TEST_CASE("pca reconstruction error equals the sum of dropped eigenvalues") {
    Rng rng(37);
    const std::size_t n = 40, d = 6;
    Matrix data(n, d);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) data.at(r, c) = rng.normal(0.0, 1.0 + static_cast<double>(c));
    const Pca2d p = pca_2d(data);

    // Squared reconstruction error of the 2-component model, computed via
    // total variance minus the variance captured by the 2-D projections.
    std::vector<double> col_mean(d, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) col_mean[c] += data.at(r, c);
    for (auto& m : col_mean) m /= static_cast<double>(n);
    double total_var = 0.0;
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) {
            const double diff = data.at(r, c) - col_mean[c];
            total_var += diff * diff;
        }
    double captured = 0.0;
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < 2; ++c) captured += p.projections.at(r, c) * p.projections.at(r, c);
    const double residual = (total_var - captured) / static_cast<double>(n - 1);

    double dropped = 0.0;
    for (std::size_t i = 2; i < p.eigenvalues.size(); ++i) dropped += p.eigenvalues[i];
    CHECK(residual == doctest::Approx(dropped).epsilon(1e-9));
}

TEST_CASE("pca rejects fewer than 3 rows") {
    CHECK_THROWS_AS((void)pca_2d(Matrix(2, 3)), std::invalid_argument);
}
