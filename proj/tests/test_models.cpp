#include <doctest.h>

#include <cmath>
#include <map>
#include <vector>

#include "gridse/grid.hpp"
#include "gridse/models.hpp"
#include "gridse/rng.hpp"
#include "gridse/stats.hpp"
#include "gridse/synth.hpp"

using namespace gridse;
using ad::Tape;
using ad::Tensor;
using namespace gridse::nn;

namespace {

/// Path graph 0-1-2-...-(n-1) as a GraphStructure (self-loops included by build).
GraphStructure path_structure(std::size_t n, std::vector<std::size_t> busbars = {}) {
    PowerGrid g;
    for (std::size_t i = 0; i < n; ++i)
        g.vertices.push_back({"v" + std::to_string(i), EquipmentType::Busbar});
    for (std::size_t i = 0; i + 1 < n; ++i)
        g.edges.emplace_back(static_cast<int>(i), static_cast<int>(i + 1));
    g.static_features = Matrix(n, kNumStaticFeatures);
    GraphStructure s = GraphStructure::build(g);
    if (!busbars.empty()) s.busbars = std::move(busbars);
    return s;
}

}  // namespace

TEST_CASE("gcn_layer: two-vertex graph with identity weights averages the rows") {
    const GraphStructure graph = path_structure(2);
    Tape tape;
    const Tensor h = Tensor::constant(2, 2, {1.0, 2.0, 5.0, 4.0});
    const Tensor w = Tensor::constant(2, 2, {1, 0, 0, 1});
    const Tensor bias = Tensor::zeros(1, 2);
    const Tensor out = gcn_layer(tape, h, graph, w, bias, /*activate=*/false);
    // N(v) + self = both vertices for each vertex.
    CHECK(out.at(0, 0) == doctest::Approx(3.0));
    CHECK(out.at(0, 1) == doctest::Approx(3.0));
    CHECK(out.at(1, 0) == doctest::Approx(3.0));
    CHECK(out.at(1, 1) == doctest::Approx(3.0));
}

TEST_CASE("gcn_layer: isolated vertex sees only itself") {
    PowerGrid g;
    g.vertices.push_back({"v0", EquipmentType::Busbar});
    g.static_features = Matrix(1, kNumStaticFeatures);
    const GraphStructure graph = GraphStructure::build(g);
    Tape tape;
    const Tensor h = Tensor::constant(1, 2, {0.5, -1.5});
    const Tensor w = Tensor::constant(2, 2, {2, 0, 0, 2});
    const Tensor out = gcn_layer(tape, h, graph, w, Tensor::zeros(1, 2), false);
    CHECK(out.at(0, 0) == doctest::Approx(1.0));
    CHECK(out.at(0, 1) == doctest::Approx(-3.0));
}

TEST_CASE("gat_layer: equal node features give uniform attention") {
    const GraphStructure graph = path_structure(3);
    Tape tape;
    const Tensor h = Tensor::constant(3, 2, {0.7, -0.3, 0.7, -0.3, 0.7, -0.3});
    Rng rng(5);
    GatLayerParams params;
    GatHeadParams head;
    std::vector<double> wv(4), av(2), bv(2);
    for (auto& v : wv) v = rng.normal();
    for (auto& v : av) v = rng.normal();
    for (auto& v : bv) v = rng.normal();
    head.w = Tensor::constant(2, 2, wv);
    head.a_src = Tensor::constant(2, 1, av);
    head.a_dst = Tensor::constant(2, 1, {av[1], av[0]});
    params.heads.push_back(head);
    params.bias = Tensor::constant(1, 2, bv);

    std::vector<Tensor> alphas;
    (void)gat_layer(tape, h, graph, params, true, &alphas);
    REQUIRE(alphas.size() == 1);
    // Neighbourhood sizes with self-loops: v0 and v2 have 2, v1 has 3.
    std::map<std::size_t, std::vector<double>> by_dst;
    for (std::size_t e = 0; e < graph.dst.size(); ++e)
        by_dst[graph.dst[e]].push_back(alphas[0].at(e, 0));
    for (const auto& [dst, a] : by_dst) {
        double sum = 0.0;
        for (double v : a) {
            CHECK(v == doctest::Approx(1.0 / static_cast<double>(a.size())));
            sum += v;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("gat_layer: attention sums to one over every neighbourhood on random input") {
    const GraphStructure graph = path_structure(6);
    Rng rng(6);
    Tape tape;
    std::vector<double> hv(6 * 3);
    for (auto& v : hv) v = rng.normal();
    const Tensor h = Tensor::constant(6, 3, hv);
    GatLayerParams params;
    for (int a = 0; a < 2; ++a) {
        GatHeadParams head;
        std::vector<double> wv(3 * 2), as(2), ad(2);
        for (auto& v : wv) v = rng.normal();
        for (auto& v : as) v = rng.normal();
        for (auto& v : ad) v = rng.normal();
        head.w = Tensor::constant(3, 2, wv);
        head.a_src = Tensor::constant(2, 1, as);
        head.a_dst = Tensor::constant(2, 1, ad);
        params.heads.push_back(head);
    }
    params.bias = Tensor::zeros(1, 4);

    std::vector<Tensor> alphas;
    const Tensor out = gat_layer(tape, h, graph, params, true, &alphas);
    CHECK(out.cols() == 4);  // two heads concatenated
    for (const auto& alpha : alphas) {
        std::map<std::size_t, double> sums;
        for (std::size_t e = 0; e < graph.dst.size(); ++e) sums[graph.dst[e]] += alpha.at(e, 0);
        for (const auto& [dst, sum] : sums) CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("gat_layer matches a standalone scalar re-implementation on a 3-vertex path") {
    // Fixture: 3-vertex path, one head, 2 -> 2 features, fixed small weights.
    const GraphStructure graph = path_structure(3);
    const std::vector<double> hv{0.1, -0.2, 0.3, 0.4, -0.5, 0.6};
    const std::vector<double> wv{0.2, -0.1, 0.05, 0.3};
    const std::vector<double> a_src{0.4, -0.3};
    const std::vector<double> a_dst{-0.2, 0.25};
    const std::vector<double> bias{0.01, -0.02};

    // Scalar oracle with plain loops, no tensor machinery.
    auto elu = [](double x) { return x > 0 ? x : std::expm1(x); };
    auto lrelu = [](double x) { return x > 0 ? x : 0.2 * x; };
    double wh[3][2];
    for (int v = 0; v < 3; ++v)
        for (int c = 0; c < 2; ++c)
            wh[v][c] = hv[2 * v + 0] * wv[0 + c] + hv[2 * v + 1] * wv[2 + c];
    double s_src[3], s_dst[3];
    for (int v = 0; v < 3; ++v) {
        s_src[v] = wh[v][0] * a_src[0] + wh[v][1] * a_src[1];
        s_dst[v] = wh[v][0] * a_dst[0] + wh[v][1] * a_dst[1];
    }
    const std::vector<std::pair<int, int>> nbrs_of{{0, 1}, {0, 2}, {1, 2}};  // closed neighbourhoods
    std::vector<std::vector<int>> neigh{{0, 1}, {0, 1, 2}, {1, 2}};
    double expected[3][2];
    for (int v = 0; v < 3; ++v) {
        double denom = 0.0;
        std::vector<double> weights;
        for (int u : neigh[v]) {
            const double e = std::exp(lrelu(s_src[u] + s_dst[v]));
            weights.push_back(e);
            denom += e;
        }
        for (int c = 0; c < 2; ++c) {
            double acc = 0.0;
            for (std::size_t i = 0; i < neigh[v].size(); ++i)
                acc += weights[i] / denom * wh[neigh[v][i]][c];
            expected[v][c] = elu(acc + bias[c]);
        }
    }

    Tape tape;
    GatLayerParams params;
    GatHeadParams head;
    head.w = Tensor::constant(2, 2, wv);
    head.a_src = Tensor::constant(2, 1, a_src);
    head.a_dst = Tensor::constant(2, 1, a_dst);
    params.heads.push_back(head);
    params.bias = Tensor::constant(1, 2, bias);
    const Tensor out = gat_layer(tape, Tensor::constant(3, 2, hv), graph, params);

    for (int v = 0; v < 3; ++v)
        for (int c = 0; c < 2; ++c)
            CHECK(out.at(static_cast<std::size_t>(v), static_cast<std::size_t>(c)) ==
                  doctest::Approx(expected[v][c]).epsilon(1e-12));
}

TEST_CASE("jk_max pools elementwise: {[1,5],[3,2]} -> [3,5]") {
    Tape tape;
    const std::vector<Tensor> layers{Tensor::constant(1, 2, {1, 5}), Tensor::constant(1, 2, {3, 2})};
    const Tensor out = jk_max(tape, layers);
    CHECK(out.at(0, 0) == 3.0);
    CHECK(out.at(0, 1) == 5.0);
}

TEST_CASE("jk aggregation with K=1 returns the single layer") {
    Tape tape;
    const Tensor h1 = Tensor::constant(2, 4, {1, 2, 3, 4, 5, 6, 7, 8});
    CHECK(jk_concat(tape, {h1}).values() == h1.values());
    CHECK(jk_max(tape, {h1}).values() == h1.values());

    Rng rng(7);
    JkLstmParams lstm;
    const std::size_t hl = 2;
    auto mk = [&](std::size_t r, std::size_t c) {
        std::vector<double> v(r * c);
        for (auto& x : v) x = rng.normal(0.0, 0.4);
        return Tensor::constant(r, c, v);
    };
    lstm.forward_cell = {mk(4, 4 * hl), mk(hl, 4 * hl), Tensor::zeros(1, 4 * hl)};
    lstm.backward_cell = {mk(4, 4 * hl), mk(hl, 4 * hl), Tensor::zeros(1, 4 * hl)};
    lstm.attention = mk(2 * hl, 1);
    Tensor alpha;
    const Tensor out = jk_lstm(tape, {h1}, lstm, &alpha);
    // alpha = [1] for every node; output equals the input layer.
    for (std::size_t r = 0; r < 2; ++r) CHECK(alpha.at(r, 0) == doctest::Approx(1.0));
    for (std::size_t i = 0; i < out.values().size(); ++i)
        CHECK(out.values()[i] == doctest::Approx(h1.values()[i]));
}

TEST_CASE("jk_lstm attention rows sum to one for every node") {
    Rng rng(8);
    Tape tape;
    const std::size_t n = 5, d = 4, hl = 2, k = 3;
    std::vector<Tensor> layers;
    for (std::size_t i = 0; i < k; ++i) {
        std::vector<double> v(n * d);
        for (auto& x : v) x = rng.normal();
        layers.push_back(Tensor::constant(n, d, v));
    }
    JkLstmParams lstm;
    auto mk = [&](std::size_t r, std::size_t c) {
        std::vector<double> v(r * c);
        for (auto& x : v) x = rng.normal(0.0, 0.4);
        return Tensor::constant(r, c, v);
    };
    lstm.forward_cell = {mk(d, 4 * hl), mk(hl, 4 * hl), Tensor::zeros(1, 4 * hl)};
    lstm.backward_cell = {mk(d, 4 * hl), mk(hl, 4 * hl), Tensor::zeros(1, 4 * hl)};
    lstm.attention = mk(2 * hl, 1);
    Tensor alpha;
    (void)jk_lstm(tape, layers, lstm, &alpha);
    REQUIRE(alpha.rows() == n);
    REQUIRE(alpha.cols() == k);
    for (std::size_t r = 0; r < n; ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            sum += alpha.at(r, c);
            CHECK(alpha.at(r, c) >= 0.0);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

namespace {

JkTransParams make_trans_params(Rng& rng, std::size_t d) {
    JkTransParams p;
    auto mk = [&](std::size_t r, std::size_t c) {
        std::vector<double> v(r * c);
        for (auto& x : v) x = rng.normal(0.0, 0.4);
        return Tensor::constant(r, c, v);
    };
    p.wq = mk(d, d);
    p.wk = mk(d, d);
    p.wv = mk(d, d);
    p.ln1_gain = Tensor::constant(1, d, std::vector<double>(d, 1.0));
    p.ln1_bias = Tensor::zeros(1, d);
    p.ln2_gain = Tensor::constant(1, d, std::vector<double>(d, 1.0));
    p.ln2_bias = Tensor::zeros(1, d);
    p.ff1 = mk(d, 2 * d);
    p.ff1_bias = Tensor::zeros(1, 2 * d);
    p.ff2 = mk(2 * d, d);
    p.ff2_bias = Tensor::zeros(1, d);
    return p;
}

}  // namespace

TEST_CASE("jk_transformer: identical tokens give uniform attention rows") {
    Rng rng(9);
    Tape tape;
    const std::size_t n = 3, d = 4, k = 4;
    std::vector<double> v(n * d);
    for (auto& x : v) x = rng.normal();
    const Tensor token = Tensor::constant(n, d, v);
    std::vector<Tensor> layers(k, token);
    const JkTransParams params = make_trans_params(rng, d);
    std::vector<Tensor> attention;
    (void)jk_transformer(tape, layers, params, &attention);
    REQUIRE(attention.size() == k);
    for (const auto& row : attention)
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < k; ++c)
                CHECK(row.at(r, c) == doctest::Approx(1.0 / k).epsilon(1e-12));
}

TEST_CASE("jk_transformer: attention rows sum to one on random input") {
    Rng rng(10);
    Tape tape;
    const std::size_t n = 4, d = 4, k = 5;
    std::vector<Tensor> layers;
    for (std::size_t i = 0; i < k; ++i) {
        std::vector<double> v(n * d);
        for (auto& x : v) x = rng.normal();
        layers.push_back(Tensor::constant(n, d, v));
    }
    const JkTransParams params = make_trans_params(rng, d);
    std::vector<Tensor> attention;
    (void)jk_transformer(tape, layers, params, &attention);
    for (const auto& row : attention)
        for (std::size_t r = 0; r < n; ++r) {
            double sum = 0.0;
            for (std::size_t c = 0; c < k; ++c) sum += row.at(r, c);
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
        }
}

TEST_CASE("jk_transformer: K=1 reduces to add-norm + feed-forward of the token") {
    Rng rng(11);
    Tape tape;
    const std::size_t n = 2, d = 4;
    std::vector<double> v(n * d);
    for (auto& x : v) x = rng.normal();
    const Tensor token = Tensor::constant(n, d, v);
    const JkTransParams params = make_trans_params(rng, d);

    std::vector<Tensor> attention;
    const Tensor out = jk_transformer(tape, {token}, params, &attention);
    REQUIRE(attention.size() == 1);
    for (std::size_t r = 0; r < n; ++r) CHECK(attention[0].at(r, 0) == doctest::Approx(1.0));

    // Oracle: attention over a single token is that token's value projection.
    Tensor attended = tape.matmul(token, params.wv);
    Tensor z = tape.layer_norm(tape.add(token, attended), params.ln1_gain, params.ln1_bias);
    Tensor ff = tape.add_bias(
        tape.matmul(tape.elu(tape.add_bias(tape.matmul(z, params.ff1), params.ff1_bias)), params.ff2),
        params.ff2_bias);
    Tensor expected = tape.layer_norm(tape.add(z, ff), params.ln2_gain, params.ln2_bias);
    for (std::size_t i = 0; i < out.values().size(); ++i)
        CHECK(out.values()[i] == doctest::Approx(expected.values()[i]).epsilon(1e-12));
}

TEST_CASE("loss_and_metrics") {
    SUBCASE("identity gives zero") {
        const std::vector<double> v{1.0, 2.0, 3.0};
        const auto m = loss_and_metrics(v, v);
        CHECK(m.mse == 0.0);
        CHECK(m.mae == 0.0);
    }
    SUBCASE("hand arithmetic") {
        const std::vector<double> preds{1.1, 1.9};
        const std::vector<double> labels{1.0, 2.0};
        const auto m = loss_and_metrics(preds, labels);
        CHECK(m.mse == doctest::Approx(0.01));
        CHECK(m.mae == doctest::Approx(0.1));
    }
    SUBCASE("matches an independent two-line computation on random vectors") {
        Rng rng(12);
        std::vector<double> a(64), b(64);
        for (auto& v : a) v = rng.normal();
        for (auto& v : b) v = rng.normal();
        double mse = 0.0, mae = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            mse += (a[i] - b[i]) * (a[i] - b[i]) / 64.0;
            mae += std::abs(a[i] - b[i]) / 64.0;
        }
        const auto m = loss_and_metrics(a, b);
        CHECK(m.mse == doctest::Approx(mse).epsilon(1e-12));
        CHECK(m.mae == doctest::Approx(mae).epsilon(1e-12));
    }
    SUBCASE("empty label set is rejected") {
        CHECK_THROWS_AS((void)loss_and_metrics({}, {}), std::invalid_argument);
    }
}

TEST_CASE("model spec validation") {
    ModelSpec spec;
    spec.kind = ModelKind::GCN;
    spec.num_layers = 1;
    CHECK_THROWS_AS(validate(spec), std::invalid_argument);
    spec.num_layers = 14;
    CHECK_THROWS_AS(validate(spec), std::invalid_argument);
    spec.num_layers = 4;
    spec.heads = 2;  // heads are GAT-only
    CHECK_THROWS_AS(validate(spec), std::invalid_argument);
    spec.heads = 1;
    CHECK_NOTHROW(validate(spec));
    spec.kind = ModelKind::GAT;
    spec.heads = 3;
    CHECK_THROWS_AS(validate(spec), std::invalid_argument);
    spec.heads = 2;
    spec.hidden = 33;
    CHECK_THROWS_AS(validate(spec), std::invalid_argument);
    spec.hidden = 32;
    CHECK_NOTHROW(validate(spec));
}

// ---------------------------------------------------------------------------
// Model-level fixtures
// ---------------------------------------------------------------------------

namespace {

struct ModelFixture {
    PowerGrid grid;
    GraphStructure graph;
    Matrix features;
    std::vector<double> labels;
};

ModelFixture small_fixture(std::uint64_t seed) {
    FeederConfig config;
    config.n_busbars = 6;
    config.loads_per_busbar = 1.0;
    config.seed = seed;
    ModelFixture f;
    f.grid = place_sensors(expand_to_ab(generate_feeder(config)), 0.12, seed);
    f.graph = GraphStructure::build(f.grid);
    Snapshot snap;
    snap.time_index = 0;
    Rng rng(seed);
    for (int v : f.grid.sensing)
        for (std::size_t c = 0; c < kNumChannels; ++c)
            snap.measurements.push_back({v, static_cast<Channel>(c), rng.normal(0.5, 0.2)});
    for (int b : f.grid.busbars()) snap.busbar_labels.emplace_back(b, rng.normal(0.97, 0.01));
    f.features = input_features(f.grid, snap);
    for (const auto& [bus, v] : snap.busbar_labels) f.labels.push_back(v);
    return f;
}

std::vector<ModelSpec> all_gnn_specs(int k, int hidden) {
    std::vector<ModelSpec> specs;
    for (const auto kind : {ModelKind::GCN, ModelKind::GAT, ModelKind::JKConcat, ModelKind::JKMax,
                            ModelKind::JKLstm, ModelKind::JKTrans}) {
        ModelSpec spec;
        spec.kind = kind;
        spec.num_layers = k;
        spec.hidden = hidden;
        spec.heads = 1;
        specs.push_back(spec);
    }
    return specs;
}

}  // namespace

TEST_CASE("permutation equivariance: relabeling vertices permutes busbar predictions") {
    const ModelFixture f = small_fixture(31);
    const int n = f.grid.num_vertices();

    // Random permutation of vertex indices.
    std::vector<int> perm(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    Rng prng(32);
    prng.shuffle(perm);  // perm[old] = new

    PowerGrid permuted;
    permuted.vertices.resize(static_cast<std::size_t>(n));
    permuted.static_features = Matrix(static_cast<std::size_t>(n), kNumStaticFeatures);
    for (int v = 0; v < n; ++v) {
        const auto nv = static_cast<std::size_t>(perm[static_cast<std::size_t>(v)]);
        permuted.vertices[nv] = f.grid.vertices[static_cast<std::size_t>(v)];
        for (std::size_t c = 0; c < kNumStaticFeatures; ++c)
            permuted.static_features.at(nv, c) = f.grid.static_features.at(static_cast<std::size_t>(v), c);
    }
    for (const auto& [i, j] : f.grid.edges) {
        const int pi = perm[static_cast<std::size_t>(i)], pj = perm[static_cast<std::size_t>(j)];
        permuted.edges.emplace_back(std::min(pi, pj), std::max(pi, pj));
    }
    std::sort(permuted.edges.begin(), permuted.edges.end());
    for (int s : f.grid.sensing) permuted.sensing.push_back(perm[static_cast<std::size_t>(s)]);
    std::sort(permuted.sensing.begin(), permuted.sensing.end());
    permuted.slack = perm[static_cast<std::size_t>(f.grid.slack)];

    const GraphStructure pgraph = GraphStructure::build(permuted);
    Matrix pfeatures(static_cast<std::size_t>(n), f.features.cols());
    for (int v = 0; v < n; ++v)
        for (std::size_t c = 0; c < f.features.cols(); ++c)
            pfeatures.at(static_cast<std::size_t>(perm[static_cast<std::size_t>(v)]), c) =
                f.features.at(static_cast<std::size_t>(v), c);

    for (const auto& spec : all_gnn_specs(3, 8)) {
        GnnModel model(spec, f.features.cols(), 77);
        Tape t1, t2;
        ModelInput in1{&f.graph, &f.features, nullptr};
        ModelInput in2{&pgraph, &pfeatures, nullptr};
        const Tensor out1 = model.forward(t1, in1, false, nullptr);
        const Tensor out2 = model.forward(t2, in2, false, nullptr);

        // Match predictions busbar-by-busbar through the permutation.
        std::map<int, double> by_old, by_new;
        for (std::size_t b = 0; b < f.graph.busbars.size(); ++b)
            by_old[static_cast<int>(f.graph.busbars[b])] = out1.at(b, 0);
        for (std::size_t b = 0; b < pgraph.busbars.size(); ++b)
            by_new[static_cast<int>(pgraph.busbars[b])] = out2.at(b, 0);
        for (const auto& [old_idx, value] : by_old) {
            const double permuted_value = by_new.at(perm[static_cast<std::size_t>(old_idx)]);
            CHECK(value == doctest::Approx(permuted_value).epsilon(1e-9));
        }
    }
}

TEST_CASE("receptive field: inputs beyond K hops cannot change a busbar prediction") {
    const ModelFixture f = small_fixture(33);
    const auto adj = adjacency_list(f.grid);

    for (const int k : {2, 5}) {
        for (const auto kind : {ModelKind::GCN, ModelKind::GAT}) {
            ModelSpec spec;
            spec.kind = kind;
            spec.num_layers = k;
            spec.hidden = 8;
            GnnModel model(spec, f.features.cols(), 55);

            Tape t1;
            ModelInput input{&f.graph, &f.features, nullptr};
            const Tensor base = model.forward(t1, input, false, nullptr);

            for (std::size_t b = 0; b < f.graph.busbars.size(); ++b) {
                const int busbar = static_cast<int>(f.graph.busbars[b]);
                const auto dist = bfs_distances(adj, busbar);
                int far = -1;
                for (int v = 0; v < f.grid.num_vertices(); ++v)
                    if (dist[static_cast<std::size_t>(v)] > k) far = v;
                if (far < 0) continue;

                Matrix perturbed = f.features;
                for (std::size_t c = 0; c < perturbed.cols(); ++c)
                    perturbed.at(static_cast<std::size_t>(far), c) += 10.0;
                Tape t2;
                ModelInput pin{&f.graph, &perturbed, nullptr};
                const Tensor out = model.forward(t2, pin, false, nullptr);
                //

                CHECK(out.at(b, 0) == base.at(b, 0));  // bitwise equal
            }
        }
    }
}

TEST_CASE("every model kind passes the end-to-end finite-difference gradient check") {
    const ModelFixture f = small_fixture(34);
    const Tensor labels = Tensor::constant(f.labels.size(), 1, f.labels);

    std::vector<ModelSpec> specs = all_gnn_specs(2, 4);
    {
        ModelSpec gat2;
        gat2.kind = ModelKind::GAT;
        gat2.num_layers = 2;
        gat2.hidden = 4;
        gat2.heads = 2;
        specs.push_back(gat2);
        ModelSpec mlp;
        mlp.kind = ModelKind::MLP;
        mlp.hidden = 4;
        specs.push_back(mlp);
    }

    const std::vector<double> flat(11 * static_cast<std::size_t>(f.grid.num_vertices()), 0.25);
    for (const auto& spec : specs) {
        auto model = make_trainable_model(spec, f.features.cols(), flat.size(),
                                          f.graph.busbars.size(), 91);
        ModelInput input{&f.graph, &f.features, &flat};

        Tape tape;
        const Tensor preds = model->forward(tape, input, true, nullptr);
        const Tensor loss = mse_loss(tape, preds, labels);
        tape.backward(loss);

        auto loss_value = [&]() {
            Tape t;
            return mse_loss(t, model->forward(t, input, false, nullptr), labels).value();
        };

        const double h = 1e-5;
        double max_rel = 0.0;
        for (const auto& [param, leaf] : model->bindings()) {
            const auto grad = tape.grad(leaf);
            // Probe a deterministic subset of coordinates per parameter.
            const std::size_t stride = std::max<std::size_t>(1, param->value.size() / 5);
            for (std::size_t i = 0; i < param->value.size(); i += stride) {
                const double saved = param->value[i];
                param->value[i] = saved + h;
                const double up = loss_value();
                param->value[i] = saved - h;
                const double down = loss_value();
                param->value[i] = saved;
                const double numeric = (up - down) / (2.0 * h);
                // Coordinates where both sides vanish carry only rounding
                // noise; the relative criterion applies to live gradients.
                if (std::abs(numeric) < 1e-6 && std::abs(grad[i]) < 1e-6) continue;
                const double denom = std::max({std::abs(numeric), std::abs(grad[i]), 1e-6});
                max_rel = std::max(max_rel, std::abs(numeric - grad[i]) / denom);
            }
        }
        INFO("kind ", spec.name());
        CHECK(max_rel < 1e-4);
    }
}

TEST_CASE("mean predictor is constant across test snapshots; global mode is size-agnostic") {
    Matrix labels(3, 2, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0});
    const auto per_busbar = MeanPredictor::fit(labels, false);
    const auto p1 = per_busbar.predict(2);
    const auto p2 = per_busbar.predict(2);
    CHECK(p1 == p2);
    CHECK(p1[0] == doctest::Approx(3.0));
    CHECK(p1[1] == doctest::Approx(4.0));
    CHECK_THROWS_AS((void)per_busbar.predict(5), std::invalid_argument);

    const auto global = MeanPredictor::fit(labels, true);
    const auto g = global.predict(5);
    REQUIRE(g.size() == 5);
    for (double v : g) CHECK(v == doctest::Approx(3.5));
}

TEST_CASE("ridge regression interpolates noiseless linear data") {
    Rng rng(35);
    SUBCASE("primal branch (more samples than features)") {
        const std::size_t m = 40, d = 6, t = 3;
        Matrix x(m, d), y(m, t), w(d, t);
        for (auto& v : w.data()) v = rng.normal();
        std::vector<double> b(t);
        for (auto& v : b) v = rng.normal();
        for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t c = 0; c < d; ++c) x.at(r, c) = rng.normal();
            for (std::size_t o = 0; o < t; ++o) {
                double acc = b[o];
                for (std::size_t c = 0; c < d; ++c) acc += x.at(r, c) * w.at(c, o);
                y.at(r, o) = acc;
            }
        }
        const auto model = RidgeRegression::fit(x, y, 1e-8);
        double max_err = 0.0;
        for (std::size_t r = 0; r < m; ++r) {
            const auto pred = model.predict(x.row(r));
            for (std::size_t o = 0; o < t; ++o) max_err = std::max(max_err, std::abs(pred[o] - y.at(r, o)));
        }
        CHECK(max_err < 1e-6);
    }
    SUBCASE("dual branch (more features than samples) fits train exactly") {
        const std::size_t m = 12, d = 50, t = 2;
        Matrix x(m, d), y(m, t);
        for (auto& v : x.data()) v = rng.normal();
        for (auto& v : y.data()) v = rng.normal();
        const auto model = RidgeRegression::fit(x, y, 1e-8);
        double max_err = 0.0;
        for (std::size_t r = 0; r < m; ++r) {
            const auto pred = model.predict(x.row(r));
            for (std::size_t o = 0; o < t; ++o) max_err = std::max(max_err, std::abs(pred[o] - y.at(r, o)));
        }
        CHECK(max_err < 1e-6);
    }
}

TEST_CASE("parameter checkpoints round-trip through JSON") {
    ModelSpec spec;
    spec.kind = ModelKind::JKTrans;
    spec.num_layers = 3;
    spec.hidden = 8;
    GnnModel original(spec, 23, 101);
    const auto doc = params_to_json(original.params());

    GnnModel restored(spec, 23, 202);  // different init
    params_from_json(restored.params(), nlohmann::json::parse(doc.dump()));
    REQUIRE(original.params().params().size() == restored.params().params().size());
    for (std::size_t i = 0; i < original.params().params().size(); ++i) {
        CHECK(original.params().params()[i].name == restored.params().params()[i].name);
        CHECK(original.params().params()[i].value == restored.params().params()[i].value);
    }
}

TEST_CASE("make_trainable_model rejects closed-form kinds") {
    ModelSpec spec;
    spec.kind = ModelKind::LR;
    CHECK_THROWS_AS((void)make_trainable_model(spec, 23, 100, 5, 1), std::invalid_argument);
}
