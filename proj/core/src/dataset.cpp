#include "gridse/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "gridse/rng.hpp"

namespace gridse::harness {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

}  // namespace

std::size_t Dataset::total_snapshots() const {
    std::size_t total = 0;
    for (const auto& g : grids) total += g.snapshots.size();
    return total;
}

void validate(const Dataset& dataset) {
    if (dataset.grids.empty()) fail("dataset: no grids");
    for (const auto& g : dataset.grids) {
        gridse::validate(g.grid);
        for (const auto& s : g.snapshots) gridse::validate(s, g.grid);
    }
}

std::string_view to_string(SplitKind kind) {
    return kind == SplitKind::LoadProfile ? "profile" : "topology";
}

std::optional<SplitKind> split_kind_from_string(std::string_view name) {
    if (name == "profile" || name == "load-profile") return SplitKind::LoadProfile;
    if (name == "topology") return SplitKind::Topology;
    return std::nullopt;
}

SplitIndices split(const Dataset& dataset, const SplitPlan& plan) {
    SplitIndices out;
    if (plan.kind == SplitKind::LoadProfile) {
        if (dataset.grids.size() != 1)
            fail("split: load-profile split applies to a single-grid dataset (got " +
                 std::to_string(dataset.grids.size()) + " grids)");
        const auto m = dataset.grids.front().snapshots.size();
        if (m < 4) fail("split: load-profile split needs at least 4 snapshots, got " + std::to_string(m));
        if (plan.train_fraction <= 0.0 || plan.train_fraction >= 1.0)
            fail("split: train_fraction must lie in (0, 1)");
        std::vector<int> order(m);
        std::iota(order.begin(), order.end(), 0);
        Rng rng = Rng(plan.seed).derive("split");
        rng.shuffle(order);
        auto n_train = static_cast<std::size_t>(
            std::lround(plan.train_fraction * static_cast<double>(m)));
        n_train = std::clamp<std::size_t>(n_train, 1, m - 1);
        for (std::size_t i = 0; i < m; ++i) {
            SampleRef ref{0, order[i]};
            (i < n_train ? out.train : out.test).push_back(ref);
        }
        auto by_snapshot = [](const SampleRef& a, const SampleRef& b) { return a.snapshot < b.snapshot; };
        std::sort(out.train.begin(), out.train.end(), by_snapshot);
        std::sort(out.test.begin(), out.test.end(), by_snapshot);
        return out;
    }

    // Topology split: hold out one full grid.
    const auto l = static_cast<int>(dataset.grids.size());
    if (l < 2) fail("split: topology split needs at least 2 grids, got " + std::to_string(l));
    const int holdout = plan.holdout < 0 ? l - 1 : plan.holdout;
    if (holdout >= l) fail("split: holdout index " + std::to_string(holdout) + " out of range");
    for (int g = 0; g < l; ++g) {
        const auto& snaps = dataset.grids[static_cast<std::size_t>(g)].snapshots;
        for (std::size_t s = 0; s < snaps.size(); ++s) {
            SampleRef ref{g, static_cast<int>(s)};
            (g == holdout ? out.test : out.train).push_back(ref);
        }
    }
    if (out.test.empty()) fail("split: held-out grid has no snapshots");
    return out;
}

std::pair<std::vector<SampleRef>, std::vector<SampleRef>> carve_validation(
    const std::vector<SampleRef>& train, double val_fraction, std::uint64_t seed) {
    if (val_fraction < 0.0 || val_fraction >= 1.0) fail("carve_validation: fraction must lie in [0, 1)");
    if (val_fraction == 0.0 || train.size() < 2) return {train, {}};
    std::vector<SampleRef> shuffled = train;
    Rng rng = Rng(seed).derive("validation");
    rng.shuffle(shuffled);
    auto n_val = static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(train.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, train.size() - 1);
    std::vector<SampleRef> fit(shuffled.begin(), shuffled.end() - static_cast<std::ptrdiff_t>(n_val));
    std::vector<SampleRef> val(shuffled.end() - static_cast<std::ptrdiff_t>(n_val), shuffled.end());
    return {std::move(fit), std::move(val)};
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

Matrix Preprocessor::apply_features(const Matrix& h0) const {
    if (h0.cols() != feature_mean.size()) fail("preprocessor: feature width mismatch");
    Matrix out(h0.rows(), h0.cols());
    for (std::size_t r = 0; r < h0.rows(); ++r)
        for (std::size_t c = 0; c < h0.cols(); ++c)
            out.at(r, c) = (h0.at(r, c) - feature_mean[c]) / feature_std[c];
    return out;
}

std::vector<double> Preprocessor::apply_flat(const std::vector<double>& flat) const {
    if (flat.size() != flat_mean.size()) fail("preprocessor: flat width mismatch");
    std::vector<double> out(flat.size());
    for (std::size_t i = 0; i < flat.size(); ++i) out[i] = (flat[i] - flat_mean[i]) / flat_std[i];
    return out;
}

double Preprocessor::scale_label(double v) const {
    const double range = label_max - label_min;
    if (range == 0.0) return 0.5;
    return (v - label_min) / range;
}

double Preprocessor::invert_label(double s) const {
    const double range = label_max - label_min;
    if (range == 0.0) return label_min;
    return label_min + s * range;
}

std::vector<double> flatten_snapshot(const PowerGrid& grid, const Snapshot& snapshot) {
    const auto n = static_cast<std::size_t>(grid.num_vertices());
    std::vector<double> out(n * kNumChannels + n * kNumStaticFeatures, 0.0);
    for (const auto& m : snapshot.measurements) {
        if (m.vertex < 0 || m.vertex >= grid.num_vertices())
            fail("flatten_snapshot: measurement outside grid");
        out[static_cast<std::size_t>(m.vertex) * kNumChannels + static_cast<std::size_t>(m.channel)] =
            m.value;
    }
    const std::size_t base = n * kNumChannels;
    for (std::size_t v = 0; v < n; ++v)
        for (std::size_t f = 0; f < kNumStaticFeatures; ++f)
            out[base + v * kNumStaticFeatures + f] = grid.static_features.at(v, f);
    return out;
}

namespace {

void fit_columns(const std::vector<std::vector<double>>& rows, std::vector<double>& mean,
                 std::vector<double>& stddev) {
    const std::size_t d = rows.front().size();
    const auto n = static_cast<double>(rows.size());
    mean.assign(d, 0.0);
    stddev.assign(d, 0.0);
    for (const auto& row : rows)
        for (std::size_t c = 0; c < d; ++c) mean[c] += row[c];
    for (auto& v : mean) v /= n;
    for (const auto& row : rows)
        for (std::size_t c = 0; c < d; ++c) {
            const double diff = row[c] - mean[c];
            stddev[c] += diff * diff;
        }
    for (auto& v : stddev) {
        v = std::sqrt(v / n);
        if (v == 0.0) v = 1.0;  // constant feature: center only
    }
}

}  // namespace

Preprocessor fit_preprocessor(const Dataset& dataset, const std::vector<SampleRef>& train,
                              const InputFeatureOptions& opts, bool fit_flat) {
    if (train.empty()) fail("fit_preprocessor: empty training set");
    Preprocessor pre;

    // Node feature columns, pooled over all vertices of all train samples.
    const std::size_t width = input_feature_width(opts);
    std::vector<double> mean(width, 0.0), var(width, 0.0);
    double count = 0.0;
    std::vector<Matrix> feature_cache;
    feature_cache.reserve(train.size());
    for (const auto& ref : train) {
        const auto& g = dataset.grids[static_cast<std::size_t>(ref.grid)];
        feature_cache.push_back(
            input_features(g.grid, g.snapshots[static_cast<std::size_t>(ref.snapshot)], opts));
    }
    for (const auto& h0 : feature_cache) {
        for (std::size_t r = 0; r < h0.rows(); ++r)
            for (std::size_t c = 0; c < width; ++c) mean[c] += h0.at(r, c);
        count += static_cast<double>(h0.rows());
    }
    for (auto& v : mean) v /= count;
    for (const auto& h0 : feature_cache)
        for (std::size_t r = 0; r < h0.rows(); ++r)
            for (std::size_t c = 0; c < width; ++c) {
                const double diff = h0.at(r, c) - mean[c];
                var[c] += diff * diff;
            }
    pre.feature_mean = std::move(mean);
    pre.feature_std.assign(width, 1.0);
    for (std::size_t c = 0; c < width; ++c) {
        const double s = std::sqrt(var[c] / count);
        pre.feature_std[c] = s == 0.0 ? 1.0 : s;
    }

    // Label min-max, pooled.
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& ref : train) {
        const auto& snap = dataset.grids[static_cast<std::size_t>(ref.grid)]
                               .snapshots[static_cast<std::size_t>(ref.snapshot)];
        for (const auto& [bus, v] : snap.busbar_labels) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    pre.label_min = lo;
    pre.label_max = hi;

    if (fit_flat) {
        std::vector<std::vector<double>> flats;
        flats.reserve(train.size());
        for (const auto& ref : train) {
            const auto& g = dataset.grids[static_cast<std::size_t>(ref.grid)];
            flats.push_back(flatten_snapshot(g.grid, g.snapshots[static_cast<std::size_t>(ref.snapshot)]));
        }
        fit_columns(flats, pre.flat_mean, pre.flat_std);
    }
    return pre;
}

CompiledData compile(const Dataset& dataset, const std::vector<SampleRef>& refs,
                     const Preprocessor& preprocessor, const InputFeatureOptions& opts,
                     bool with_flat) {
    CompiledData out;
    out.input_width = input_feature_width(opts);
    out.flat_width = preprocessor.flat_mean.size();

    std::vector<int> grid_slot(dataset.grids.size(), -1);
    for (const auto& ref : refs) {
        const auto gi = static_cast<std::size_t>(ref.grid);
        if (grid_slot[gi] < 0) {
            grid_slot[gi] = static_cast<int>(out.grids.size());
            CompiledGrid cg;
            cg.grid_index = ref.grid;
            cg.graph = nn::GraphStructure::build(dataset.grids[gi].grid);
            cg.n_busbars = cg.graph.busbars.size();
            out.grids.push_back(std::move(cg));
        }
        const auto& gdata = dataset.grids[gi];
        const auto& snap = gdata.snapshots[static_cast<std::size_t>(ref.snapshot)];
        CompiledSample sample;
        sample.grid = grid_slot[gi];
        sample.features = preprocessor.apply_features(input_features(gdata.grid, snap, opts));
        if (with_flat) {
            if (preprocessor.flat_mean.empty())
                fail("compile: flat view requested but preprocessor has no flat statistics");
            sample.flat = preprocessor.apply_flat(flatten_snapshot(gdata.grid, snap));
        }
        sample.labels_raw.reserve(snap.busbar_labels.size());
        sample.labels_scaled.reserve(snap.busbar_labels.size());
        for (const auto& [bus, v] : snap.busbar_labels) {
            sample.labels_raw.push_back(v);
            sample.labels_scaled.push_back(preprocessor.scale_label(v));
        }
        out.samples.push_back(std::move(sample));
    }
    return out;
}

Matrix label_matrix(const Dataset& dataset, const std::vector<SampleRef>& refs) {
    if (refs.empty()) fail("label_matrix: empty sample set");
    const auto& first = dataset.grids[static_cast<std::size_t>(refs.front().grid)];
    const std::size_t n_busbars = first.grid.busbars().size();
    Matrix out(refs.size(), n_busbars);
    for (std::size_t r = 0; r < refs.size(); ++r) {
        const auto& g = dataset.grids[static_cast<std::size_t>(refs[r].grid)];
        const auto& snap = g.snapshots[static_cast<std::size_t>(refs[r].snapshot)];
        if (snap.busbar_labels.size() != n_busbars)
            fail("label_matrix: busbar count differs across samples");
        for (std::size_t c = 0; c < n_busbars; ++c) out.at(r, c) = snap.busbar_labels[c].second;
    }
    return out;
}

}  // namespace gridse::harness
