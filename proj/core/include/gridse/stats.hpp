#pragma once

#include <array>
#include <vector>

#include "gridse/grid.hpp"
#include "gridse/matrix.hpp"

namespace gridse {

/// Topological summary of one grid plus per-busbar sensor reachability.
struct GraphStats {
    double mean_degree = 0.0;
    int diameter = 0;
    double mean_shortest_path = 0.0;  ///< mean over unordered vertex pairs
    double mean_clustering = 0.0;     ///< average local clustering coefficient
    /// For each busbar (ascending index): BFS distances to all sensing
    /// vertices, sorted ascending, so entry k-1 is the k-th closest sensor.
    std::vector<std::vector<int>> busbar_sensor_distances;
};

/// BFS distances from source; unreachable vertices get -1.
std::vector<int> bfs_distances(const std::vector<std::vector<int>>& adj, int source);

/// Computes GraphStats via all-pairs BFS. Throws std::invalid_argument on a
/// disconnected grid, listing the connected components.
GraphStats compute_stats(const PowerGrid& grid);

/// Result of a 2-component principal component analysis.
struct Pca2d {
    Matrix projections;                            ///< rows x 2
    std::array<double, 2> explained_variance_ratio{};
    std::vector<double> eigenvalues;               ///< all, descending
};

/// Centers columns and projects rows onto the top-2 principal directions of
/// the column covariance. Sign convention: the largest-magnitude loading of
/// each direction is positive. Requires at least 3 rows.
Pca2d pca_2d(const Matrix& data);

/// Silhouette score over points with integer cluster labels (Euclidean).
/// Points in singleton clusters contribute 0.
double silhouette_score(const Matrix& points, const std::vector<int>& labels);

}  // namespace gridse
