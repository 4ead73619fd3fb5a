#pragma once
#include <cstdint>
#include <vector>

#include "phaseprobe/matrix.hpp"

namespace phaseprobe::ml {

inline constexpr int kNoise = -1;

// -------------------------------------------------------------------
// Principal component analysis
// -------------------------------------------------------------------
struct PcaResult {
    std::vector<double> mean;        // column means removed before projection
    std::vector<double> eigenvalues; // variances, non-increasing, one per component
    Matrix components;               // n_components x cols, rows orthonormal
    Matrix scores;                   // rows x n_components

    // scores * components + mean
    Matrix reconstruct() const;
};

// Eigen-decomposition of the sample covariance of the mean-centered data.
// Requires rows >= 2 and n_components <= min(rows-1, cols).
PcaResult pca(const Matrix& data, std::size_t n_components);

// -------------------------------------------------------------------
// DBSCAN
// -------------------------------------------------------------------
// Deterministic density clustering: a core point has >= min_pts neighbors
// within eps (itself included); clusters are the connected components of
// the core graph, labeled 0,1,... in order of their lowest core index.
// A non-core point joins the cluster of the lowest-index core that
// reaches it, else kNoise.
std::vector<int> dbscan(const Matrix& points, double eps, std::size_t min_pts);

// Median distance to the k-th nearest neighbor; the usual eps heuristic.
double suggest_eps(const Matrix& points, std::size_t k = 4);

// -------------------------------------------------------------------
// k-means
// -------------------------------------------------------------------
struct KMeansResult {
    Matrix centroids; // k x cols
    std::vector<int> labels;
    double inertia = 0.0;
    std::vector<double> inertia_history; // one entry per Lloyd iteration
};

// Seeded k-means++ initialization, then Lloyd iterations to an assignment
// fixpoint (at most max_iters). Empty clusters are re-seeded to the point
// farthest from its assigned centroid. Deterministic in (points, k, seed).
KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed,
                    std::size_t max_iters = 300);

// -------------------------------------------------------------------
// Shared helpers
// -------------------------------------------------------------------
// Mean/std column standardization; columns listed in skip keep raw values.
// Zero-variance columns are centered and left at unit divisor.
struct Standardization {
    std::vector<double> mean;
    std::vector<double> stddev;  // population std; divisor is 1 where this is 0
    std::vector<bool> skipped;
};
Standardization standardize_columns(Matrix& data, const std::vector<std::size_t>& skip = {});

} // namespace phaseprobe::ml
