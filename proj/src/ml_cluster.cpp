#include "phaseprobe/ml_cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>

#include "phaseprobe/errors.hpp"
#include "phaseprobe/rng.hpp"
#include "phaseprobe/stats_core.hpp"

namespace phaseprobe::ml {

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

// Cyclic Jacobi rotations for a symmetric matrix. Returns eigenvalues on
// the diagonal of `a` and accumulates rotations in `v` (columns are
// eigenvectors).
void jacobi_eigensymm(Matrix& a, Matrix& v, std::size_t max_sweeps = 100) {
    const std::size_t n = a.rows();
    v = Matrix(n, n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;

    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) norm += a(i, j) * a(i, j);
    norm = std::sqrt(norm);
    const double tol = 1e-14 * std::max(norm, 1.0);

    for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
        if (std::sqrt(2.0 * off) < tol) break;

        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(a(p, q)) < tol * 1e-3) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;

                for (std::size_t i = 0; i < n; ++i) {
                    const double aip = a(i, p), aiq = a(i, q);
                    a(i, p) = c * aip - s * aiq;
                    a(i, q) = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double api = a(p, i), aqi = a(q, i);
                    a(p, i) = c * api - s * aqi;
                    a(q, i) = s * api + c * aqi;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vip = v(i, p), viq = v(i, q);
                    v(i, p) = c * vip - s * viq;
                    v(i, q) = s * vip + c * viq;
                }
            }
        }
    }
}

} // namespace

Matrix PcaResult::reconstruct() const {
    Matrix out(scores.rows(), mean.size(), 0.0);
    for (std::size_t i = 0; i < scores.rows(); ++i) {
        for (std::size_t j = 0; j < mean.size(); ++j) {
            double acc = mean[j];
            for (std::size_t k = 0; k < components.rows(); ++k)
                acc += scores(i, k) * components(k, j);
            out(i, j) = acc;
        }
    }
    return out;
}

PcaResult pca(const Matrix& data, std::size_t n_components) {
    const std::size_t n = data.rows(), d = data.cols();
    if (n < 2) throw AnalysisError("pca: need at least 2 rows");
    if (n_components == 0 || n_components > std::min(n - 1, d))
        throw AnalysisError("pca: n_components must lie in [1, min(rows-1, cols)]");

    PcaResult r;
    r.mean.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) r.mean[j] += data(i, j);
    for (double& m : r.mean) m /= static_cast<double>(n);

    Matrix centered(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) centered(i, j) = data(i, j) - r.mean[j];

    Matrix cov(d, d, 0.0);
    for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = a; b < d; ++b) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) acc += centered(i, a) * centered(i, b);
            acc /= static_cast<double>(n - 1);
            cov(a, b) = acc;
            cov(b, a) = acc;
        }
    }

    Matrix vecs;
    jacobi_eigensymm(cov, vecs);

    std::vector<std::size_t> order(d);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return cov(a, a) > cov(b, b); });

    r.eigenvalues.resize(n_components);
    r.components = Matrix(n_components, d);
    for (std::size_t k = 0; k < n_components; ++k) {
        const std::size_t col = order[k];
        r.eigenvalues[k] = std::max(0.0, cov(col, col));
        // sign convention: largest-magnitude coordinate positive
        std::size_t imax = 0;
        for (std::size_t i = 1; i < d; ++i)
            if (std::abs(vecs(i, col)) > std::abs(vecs(imax, col))) imax = i;
        const double sign = vecs(imax, col) < 0.0 ? -1.0 : 1.0;
        for (std::size_t i = 0; i < d; ++i) r.components(k, i) = sign * vecs(i, col);
    }

    r.scores = Matrix(n, n_components);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n_components; ++k) {
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j) acc += centered(i, j) * r.components(k, j);
            r.scores(i, k) = acc;
        }
    return r;
}

// ---------------------------------------------------------------------
// DBSCAN
// ---------------------------------------------------------------------

std::vector<int> dbscan(const Matrix& points, double eps, std::size_t min_pts) {
    if (!(eps > 0.0)) throw AnalysisError("dbscan: eps must be positive");
    if (min_pts < 1) throw AnalysisError("dbscan: min_pts must be >= 1");

    const std::size_t n = points.rows();
    std::vector<int> labels(n, kNoise);
    if (n == 0) return labels;

    const double eps2 = eps * eps;
    std::vector<std::vector<std::uint32_t>> neighbors(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (sq_dist(points.row(i), points.row(j)) <= eps2)
                neighbors[i].push_back(static_cast<std::uint32_t>(j));
        }
    }

    std::vector<bool> core(n, false);
    for (std::size_t i = 0; i < n; ++i) core[i] = neighbors[i].size() >= min_pts;

    // clusters = connected components of the core graph, in lowest-index order
    int next_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!core[i] || labels[i] != kNoise) continue;
        const int cluster = next_label++;
        std::queue<std::uint32_t> frontier;
        labels[i] = cluster;
        frontier.push(static_cast<std::uint32_t>(i));
        while (!frontier.empty()) {
            const std::uint32_t p = frontier.front();
            frontier.pop();
            for (std::uint32_t q : neighbors[p]) {
                if (core[q] && labels[q] == kNoise) {
                    labels[q] = cluster;
                    frontier.push(q);
                }
            }
        }
    }

    // border points: lowest-index reachable core wins
    for (std::size_t i = 0; i < n; ++i) {
        if (core[i]) continue;
        for (std::uint32_t q : neighbors[i]) {
            if (core[q]) {
                labels[i] = labels[q];
                break; // neighbors are index-sorted
            }
        }
    }
    return labels;
}

double suggest_eps(const Matrix& points, std::size_t k) {
    const std::size_t n = points.rows();
    if (n < 2) throw AnalysisError("suggest_eps: need at least 2 points");
    std::vector<double> kth(n);
    std::vector<double> dists;
    for (std::size_t i = 0; i < n; ++i) {
        dists.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            dists.push_back(sq_dist(points.row(i), points.row(j)));
        }
        const std::size_t idx = std::min(k, dists.size()) - 1;
        std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(idx),
                         dists.end());
        kth[i] = std::sqrt(dists[idx]);
    }
    return stats::median(kth);
}

// ---------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------

namespace {

std::vector<std::size_t> kmeanspp_init(const Matrix& points, std::size_t k, Rng& rng) {
    const std::size_t n = points.rows();
    std::vector<std::size_t> chosen;
    chosen.reserve(k);
    chosen.push_back(rng.below(n));

    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    std::vector<bool> picked(n, false);
    picked[chosen[0]] = true;

    while (chosen.size() < k) {
        const std::size_t last = chosen.back();
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], sq_dist(points.row(i), points.row(last)));
            total += d2[i];
        }
        std::size_t next = n;
        if (total > 0.0) {
            const double target = rng.uniform() * total;
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc > target) {
                    next = i;
                    break;
                }
            }
            if (next == n) next = n - 1; // guard against rounding at the top end
        } else {
            // all remaining points coincide with chosen centers
            for (std::size_t i = 0; i < n; ++i) {
                if (!picked[i]) {
                    next = i;
                    break;
                }
            }
            if (next == n) next = 0;
        }
        picked[next] = true;
        chosen.push_back(next);
    }
    return chosen;
}

} // namespace

KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed,
                    std::size_t max_iters) {
    const std::size_t n = points.rows(), d = points.cols();
    if (k < 1) throw AnalysisError("kmeans: k must be >= 1");
    if (k > n) throw AnalysisError("kmeans: k exceeds the number of points");

    Rng rng(seed);
    KMeansResult r;
    r.centroids = Matrix(k, d);
    const std::vector<std::size_t> init = kmeanspp_init(points, k, rng);
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t j = 0; j < d; ++j) r.centroids(c, j) = points(init[c], j);

    r.labels.assign(n, -1);
    std::vector<int> prev(n, -2);

    for (std::size_t iter = 0; iter < max_iters; ++iter) {
        // assignment; lowest centroid index wins ties
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            int best_c = 0;
            for (std::size_t c = 0; c < k; ++c) {
                const double d2 = sq_dist(points.row(i), r.centroids.row(c));
                if (d2 < best) {
                    best = d2;
                    best_c = static_cast<int>(c);
                }
            }
            r.labels[i] = best_c;
        }

        // update
        Matrix sums(k, d, 0.0);
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto c = static_cast<std::size_t>(r.labels[i]);
            ++counts[c];
            for (std::size_t j = 0; j < d; ++j) sums(c, j) += points(i, j);
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;
            for (std::size_t j = 0; j < d; ++j)
                r.centroids(c, j) = sums(c, j) / static_cast<double>(counts[c]);
        }

        // empty clusters grab the point farthest from its centroid
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] != 0) continue;
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d2 =
                    sq_dist(points.row(i), r.centroids.row(static_cast<std::size_t>(r.labels[i])));
                if (d2 > far_d) {
                    far_d = d2;
                    far = i;
                }
            }
            for (std::size_t j = 0; j < d; ++j) r.centroids(c, j) = points(far, j);
            r.labels[far] = static_cast<int>(c);
        }

        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            inertia += sq_dist(points.row(i), r.centroids.row(static_cast<std::size_t>(r.labels[i])));
        r.inertia_history.push_back(inertia);
        r.inertia = inertia;

        if (r.labels == prev) break;
        prev = r.labels;
    }
    return r;
}

Standardization standardize_columns(Matrix& data, const std::vector<std::size_t>& skip) {
    const std::size_t n = data.rows(), d = data.cols();
    if (n == 0) throw AnalysisError("standardize_columns: empty matrix");

    Standardization s;
    s.mean.assign(d, 0.0);
    s.stddev.assign(d, 1.0);
    s.skipped.assign(d, false);
    for (std::size_t j : skip)
        if (j < d) s.skipped[j] = true;

    for (std::size_t j = 0; j < d; ++j) {
        if (s.skipped[j]) {
            s.mean[j] = 0.0;
            s.stddev[j] = 1.0;
            continue;
        }
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i) m += data(i, j);
        m /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (data(i, j) - m) * (data(i, j) - m);
        var /= static_cast<double>(n);
        const double sd = std::sqrt(var);
        s.mean[j] = m;
        s.stddev[j] = sd;
        const double divisor = sd > 0.0 ? sd : 1.0;
        for (std::size_t i = 0; i < n; ++i) data(i, j) = (data(i, j) - m) / divisor;
    }
    return s;
}

} // namespace phaseprobe::ml
