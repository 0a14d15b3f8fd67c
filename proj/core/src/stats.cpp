#include "gridse/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <set>
#include <stdexcept>
#include <string>

namespace gridse {

std::vector<int> bfs_distances(const std::vector<std::vector<int>>& adj, int source) {
    std::vector<int> dist(adj.size(), -1);
    std::queue<int> q;
    dist[static_cast<std::size_t>(source)] = 0;
    q.push(source);
    while (!q.empty()) {
        const int u = q.front();
        q.pop();
        for (int w : adj[static_cast<std::size_t>(u)]) {
            if (dist[static_cast<std::size_t>(w)] < 0) {
                dist[static_cast<std::size_t>(w)] = dist[static_cast<std::size_t>(u)] + 1;
                q.push(w);
            }
        }
    }
    return dist;
}

namespace {

[[noreturn]] void fail_disconnected(const std::vector<std::vector<int>>& adj) {
    std::vector<int> component(adj.size(), -1);
    int num_components = 0;
    for (std::size_t s = 0; s < adj.size(); ++s) {
        if (component[s] >= 0) continue;
        const int c = num_components++;
        std::queue<int> q;
        q.push(static_cast<int>(s));
        component[s] = c;
        while (!q.empty()) {
            const int u = q.front();
            q.pop();
            for (int w : adj[static_cast<std::size_t>(u)])
                if (component[static_cast<std::size_t>(w)] < 0) {
                    component[static_cast<std::size_t>(w)] = c;
                    q.push(w);
                }
        }
    }
    std::string msg = "compute_stats: graph is disconnected (" + std::to_string(num_components) +
                      " components; sizes";
    std::vector<int> sizes(static_cast<std::size_t>(num_components), 0);
    for (int c : component) ++sizes[static_cast<std::size_t>(c)];
    for (int s : sizes) msg += " " + std::to_string(s);
    msg += ")";
    throw std::invalid_argument(msg);
}

}  // namespace

GraphStats compute_stats(const PowerGrid& grid) {
    const auto n = static_cast<std::size_t>(grid.num_vertices());
    const auto adj = adjacency_list(grid);

    GraphStats stats;
    stats.mean_degree = n > 0 ? 2.0 * static_cast<double>(grid.edges.size()) / static_cast<double>(n) : 0.0;

    // Local clustering: fraction of closed neighbour pairs.
    double clustering_sum = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
        const auto& nbrs = adj[v];
        if (nbrs.size() < 2) continue;
        int closed = 0;
        for (std::size_t i = 0; i < nbrs.size(); ++i)
            for (std::size_t j = i + 1; j < nbrs.size(); ++j) {
                const auto& ni = adj[static_cast<std::size_t>(nbrs[i])];
                if (std::binary_search(ni.begin(), ni.end(), nbrs[j])) ++closed;
            }
        clustering_sum +=
            2.0 * static_cast<double>(closed) / (static_cast<double>(nbrs.size()) * (static_cast<double>(nbrs.size()) - 1.0));
    }
    stats.mean_clustering = n > 0 ? clustering_sum / static_cast<double>(n) : 0.0;

    long long pair_sum = 0;
    long long pair_count = 0;
    int diameter = 0;
    std::vector<std::vector<int>> sensor_dists;
    const auto busbars = grid.busbars();
    sensor_dists.reserve(busbars.size());

    for (std::size_t v = 0; v < n; ++v) {
        const auto dist = bfs_distances(adj, static_cast<int>(v));
        for (std::size_t w = v + 1; w < n; ++w) {
            if (dist[w] < 0) fail_disconnected(adj);
            pair_sum += dist[w];
            ++pair_count;
            diameter = std::max(diameter, dist[w]);
        }
        if (std::binary_search(busbars.begin(), busbars.end(), static_cast<int>(v))) {
            std::vector<int> ds;
            ds.reserve(grid.sensing.size());
            for (int s : grid.sensing) {
                if (dist[static_cast<std::size_t>(s)] < 0) fail_disconnected(adj);
                ds.push_back(dist[static_cast<std::size_t>(s)]);
            }
            std::sort(ds.begin(), ds.end());
            sensor_dists.push_back(std::move(ds));
        }
    }
    stats.diameter = diameter;
    stats.mean_shortest_path = pair_count > 0 ? static_cast<double>(pair_sum) / static_cast<double>(pair_count) : 0.0;
    stats.busbar_sensor_distances = std::move(sensor_dists);
    return stats;
}

// ---------------------------------------------------------------------------
// PCA (cyclic Jacobi eigensolver on the column covariance)
// ---------------------------------------------------------------------------

namespace {

void jacobi_eigen_symmetric(Matrix& a, Matrix& eigvecs) {
    const std::size_t n = a.rows();
    eigvecs = Matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) eigvecs.at(i, i) = 1.0;

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a.at(p, q) * a.at(p, q);
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a.at(p, q);
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a.at(k, p), akq = a.at(k, q);
                    a.at(k, p) = c * akp - s * akq;
                    a.at(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a.at(p, k), aqk = a.at(q, k);
                    a.at(p, k) = c * apk - s * aqk;
                    a.at(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = eigvecs.at(k, p), vkq = eigvecs.at(k, q);
                    eigvecs.at(k, p) = c * vkp - s * vkq;
                    eigvecs.at(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
}

}  // namespace

Pca2d pca_2d(const Matrix& data) {
    const std::size_t n = data.rows();
    const std::size_t d = data.cols();
    if (n < 3) throw std::invalid_argument("pca_2d: need at least 3 rows, got " + std::to_string(n));
    if (d == 0) throw std::invalid_argument("pca_2d: empty feature dimension");

    Matrix centered(n, d);
    for (std::size_t c = 0; c < d; ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < n; ++r) mean += data.at(r, c);
        mean /= static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r) centered.at(r, c) = data.at(r, c) - mean;
    }

    Matrix cov(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i; j < d; ++j) {
            double s = 0.0;
            for (std::size_t r = 0; r < n; ++r) s += centered.at(r, i) * centered.at(r, j);
            s /= static_cast<double>(n - 1);
            cov.at(i, j) = s;
            cov.at(j, i) = s;
        }

    Matrix eigvecs;
    jacobi_eigen_symmetric(cov, eigvecs);

    std::vector<std::pair<double, std::size_t>> order(d);
    for (std::size_t i = 0; i < d; ++i) order[i] = {cov.at(i, i), i};
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

    Pca2d out;
    out.eigenvalues.reserve(d);
    double total = 0.0;
    for (const auto& [lambda, idx] : order) {
        out.eigenvalues.push_back(std::max(lambda, 0.0));
        total += std::max(lambda, 0.0);
    }

    out.projections = Matrix(n, 2);
    for (std::size_t comp = 0; comp < 2 && comp < d; ++comp) {
        const std::size_t col = order[comp].second;
        // Fix sign: largest-magnitude loading positive.
        double best = 0.0;
        for (std::size_t i = 0; i < d; ++i)
            if (std::abs(eigvecs.at(i, col)) > std::abs(best)) best = eigvecs.at(i, col);
        const double sign = best < 0.0 ? -1.0 : 1.0;
        for (std::size_t r = 0; r < n; ++r) {
            double s = 0.0;
            for (std::size_t i = 0; i < d; ++i) s += centered.at(r, i) * eigvecs.at(i, col);
            out.projections.at(r, comp) = sign * s;
        }
        out.explained_variance_ratio[comp] = total > 0.0 ? out.eigenvalues[comp] / total : 0.0;
    }
    return out;
}

double silhouette_score(const Matrix& points, const std::vector<int>& labels) {
    const std::size_t n = points.rows();
    if (labels.size() != n) throw std::invalid_argument("silhouette_score: label count mismatch");
    if (n < 2) return 0.0;

    auto dist = [&](std::size_t a, std::size_t b) {
        double s = 0.0;
        for (std::size_t c = 0; c < points.cols(); ++c) {
            const double diff = points.at(a, c) - points.at(b, c);
            s += diff * diff;
        }
        return std::sqrt(s);
    };

    std::set<int> cluster_set(labels.begin(), labels.end());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t own_count = 0;
        double own_sum = 0.0;
        double best_other = std::numeric_limits<double>::infinity();
        for (int c : cluster_set) {
            if (c == labels[i]) continue;
            double sum = 0.0;
            std::size_t count = 0;
            for (std::size_t j = 0; j < n; ++j)
                if (labels[j] == c) {
                    sum += dist(i, j);
                    ++count;
                }
            if (count > 0) best_other = std::min(best_other, sum / static_cast<double>(count));
        }
        for (std::size_t j = 0; j < n; ++j)
            if (j != i && labels[j] == labels[i]) {
                own_sum += dist(i, j);
                ++own_count;
            }
        if (own_count == 0 || !std::isfinite(best_other)) continue;  // singleton contributes 0
        const double a = own_sum / static_cast<double>(own_count);
        const double b = best_other;
        total += (b - a) / std::max(a, b);
    }
    return total / static_cast<double>(n);
}

}  // namespace gridse
