#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "phaseprobe/errors.hpp"
#include "phaseprobe/ml_cluster.hpp"
#include "phaseprobe/rng.hpp"

using namespace phaseprobe;

namespace {

Matrix blob_pair(std::size_t per_blob, double gap, double spread, std::uint64_t seed,
                 std::size_t dims = 2) {
    Rng rng(seed);
    Matrix m(2 * per_blob, dims);
    for (std::size_t i = 0; i < 2 * per_blob; ++i) {
        const double center = i < per_blob ? 0.0 : gap;
        for (std::size_t j = 0; j < dims; ++j)
            m(i, j) = (j == 0 ? center : 0.0) + rng.normal(0.0, spread);
    }
    return m;
}

std::set<std::set<std::size_t>> cluster_sets(const std::vector<int>& labels) {
    std::map<int, std::set<std::size_t>> groups;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] != ml::kNoise) groups[labels[i]].insert(i);
    std::set<std::set<std::size_t>> out;
    for (auto& [label, members] : groups) out.insert(std::move(members));
    return out;
}

} // namespace

TEST_CASE("pca recovers an exact line") {
    Matrix m(5, 2);
    int row = 0;
    for (double t : {-2.0, -1.0, 0.0, 1.0, 2.0}) {
        m(row, 0) = t;
        m(row, 1) = 2.0 * t;
        ++row;
    }
    const auto r = ml::pca(m, 2);
    const double inv_norm = 1.0 / std::sqrt(5.0);
    CHECK(std::abs(r.components(0, 0)) == doctest::Approx(inv_norm).epsilon(1e-10));
    CHECK(std::abs(r.components(0, 1)) == doctest::Approx(2.0 * inv_norm).epsilon(1e-10));
    CHECK(r.eigenvalues[1] == doctest::Approx(0.0).epsilon(1e-10));
}

TEST_CASE("pca reconstruction with all components is lossless") {
    Rng rng(3);
    Matrix m(40, 5);
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) = rng.normal(1.0, 3.0);
    const auto r = ml::pca(m, 5);
    const Matrix back = r.reconstruct();
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j)
            CHECK(back(i, j) == doctest::Approx(m(i, j)).epsilon(1e-8));
}

TEST_CASE("pca covariance rebuilt from the decomposition matches the sample covariance") {
    Rng rng(17);
    const std::size_t n = 60, d = 4;
    Matrix m(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            m(i, j) = rng.normal(0.0, 1.0 + static_cast<double>(j));
    const auto r = ml::pca(m, d);

    // oracle: direct sample covariance
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) mean[j] += m(i, j);
    for (double& v : mean) v /= static_cast<double>(n);
    Matrix cov(d, d, 0.0);
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                acc += (m(i, a) - mean[a]) * (m(i, b) - mean[b]);
            cov(a, b) = acc / static_cast<double>(n - 1);
        }

    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) {
            double rebuilt = 0.0;
            for (std::size_t k = 0; k < d; ++k)
                rebuilt += r.eigenvalues[k] * r.components(k, a) * r.components(k, b);
            CHECK(rebuilt == doctest::Approx(cov(a, b)).epsilon(1e-8));
        }
}

TEST_CASE("pca components are orthonormal and scores centered") {
    Rng rng(23);
    Matrix m(50, 6);
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) = rng.uniform(-4, 9);
    const auto r = ml::pca(m, 4);
    for (std::size_t a = 0; a < 4; ++a)
        for (std::size_t b = 0; b < 4; ++b) {
            double dot = 0.0;
            for (std::size_t j = 0; j < m.cols(); ++j)
                dot += r.components(a, j) * r.components(b, j);
            CHECK(std::abs(dot - (a == b ? 1.0 : 0.0)) < 1e-10);
        }
    for (std::size_t k = 0; k < 4; ++k) {
        double mean = 0.0;
        for (std::size_t i = 0; i < m.rows(); ++i) mean += r.scores(i, k);
        CHECK(std::abs(mean / static_cast<double>(m.rows())) < 1e-10);
    }
    // eigenvalues non-increasing
    for (std::size_t k = 1; k < r.eigenvalues.size(); ++k)
        CHECK(r.eigenvalues[k] <= r.eigenvalues[k - 1] + 1e-12);
}

TEST_CASE("pca rejects too many components") {
    Matrix m(3, 5, 1.0);
    CHECK_THROWS_AS((void)ml::pca(m, 3), AnalysisError); // min(rows-1, cols) = 2
    CHECK_THROWS_AS((void)ml::pca(Matrix(1, 5, 0.0), 1), AnalysisError);
}

TEST_CASE("dbscan separates two planted blobs") {
    const Matrix m = blob_pair(50, 10.0, 0.1, 77);
    const auto labels = ml::dbscan(m, 1.0, 5);
    CHECK(cluster_sets(labels).size() == 2);
    CHECK(std::count(labels.begin(), labels.end(), ml::kNoise) == 0);
    // the blobs map to single labels
    for (std::size_t i = 1; i < 50; ++i) CHECK(labels[i] == labels[0]);
    for (std::size_t i = 51; i < 100; ++i) CHECK(labels[i] == labels[50]);
}

TEST_CASE("dbscan: identical points collapse to one cluster") {
    Matrix m(8, 3, 4.2);
    const auto labels = ml::dbscan(m, 0.5, 8);
    for (int l : labels) CHECK(l == 0);
}

TEST_CASE("dbscan: an isolated point is noise") {
    Matrix m(1, 2, 0.0);
    const auto labels = ml::dbscan(m, 1.0, 2);
    CHECK(labels[0] == ml::kNoise);
}

TEST_CASE("dbscan label sets are invariant under permutation") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix m = blob_pair(20, 8.0, 0.15, 1000 + static_cast<std::uint64_t>(trial));
        const auto base = cluster_sets(ml::dbscan(m, 0.9, 4));

        std::vector<std::size_t> perm(m.rows());
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        for (std::size_t i = perm.size(); i > 1; --i)
            std::swap(perm[i - 1], perm[rng.below(i)]);
        Matrix shuffled(m.rows(), m.cols());
        for (std::size_t i = 0; i < m.rows(); ++i)
            for (std::size_t j = 0; j < m.cols(); ++j) shuffled(i, j) = m(perm[i], j);

        const auto labels = ml::dbscan(shuffled, 0.9, 4);
        // map shuffled clusters back to original indices
        std::map<int, std::set<std::size_t>> groups;
        for (std::size_t i = 0; i < perm.size(); ++i)
            if (labels[i] != ml::kNoise) groups[labels[i]].insert(perm[i]);
        std::set<std::set<std::size_t>> mapped;
        for (auto& [label, members] : groups) mapped.insert(std::move(members));
        CHECK(mapped == base);
    }
}

TEST_CASE("dbscan degenerates to one cluster with huge eps") {
    Rng rng(4);
    Matrix m(30, 2);
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < 2; ++j) m(i, j) = rng.uniform(-50, 50);
    const auto labels = ml::dbscan(m, 1e9, 1);
    for (int l : labels) CHECK(l == 0);
}

TEST_CASE("suggest_eps returns a positive scale") {
    const Matrix m = blob_pair(30, 5.0, 0.2, 8);
    const double eps = ml::suggest_eps(m);
    CHECK(eps > 0.0);
    CHECK(eps < 5.0);
}

TEST_CASE("kmeans with k=1 returns the mean and total variance") {
    Rng rng(12);
    Matrix m(25, 3);
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < 3; ++j) m(i, j) = rng.normal(2.0, 1.5);
    const auto r = ml::kmeans(m, 1, 99);
    for (std::size_t j = 0; j < 3; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < m.rows(); ++i) mean += m(i, j);
        mean /= static_cast<double>(m.rows());
        CHECK(r.centroids(0, j) == doctest::Approx(mean).epsilon(1e-12));
    }
    double total = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            const double d = m(i, j) - r.centroids(0, j);
            total += d * d;
        }
    CHECK(r.inertia == doctest::Approx(total).epsilon(1e-12));
}

TEST_CASE("kmeans recovers two planted blobs at full purity") {
    const Matrix m = blob_pair(40, 12.0, 0.3, 55);
    const auto r = ml::kmeans(m, 2, 7);
    // one label per planted side, allowing either assignment of ids
    for (std::size_t i = 1; i < 40; ++i) CHECK(r.labels[i] == r.labels[0]);
    for (std::size_t i = 41; i < 80; ++i) CHECK(r.labels[i] == r.labels[40]);
    CHECK(r.labels[0] != r.labels[40]);
}

TEST_CASE("kmeans inertia never increases across iterations") {
    Rng rng(61);
    Matrix m(120, 4);
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < 4; ++j) m(i, j) = rng.uniform(-10, 10);
    const auto r = ml::kmeans(m, 5, 3);
    for (std::size_t t = 1; t < r.inertia_history.size(); ++t)
        CHECK(r.inertia_history[t] <= r.inertia_history[t - 1] + 1e-9);
}

TEST_CASE("kmeans is reproducible for a fixed seed") {
    const Matrix m = blob_pair(30, 6.0, 0.5, 44);
    const auto a = ml::kmeans(m, 3, 123);
    const auto b = ml::kmeans(m, 3, 123);
    CHECK(a.labels == b.labels);
    CHECK(a.inertia == b.inertia);
    CHECK(a.centroids.data() == b.centroids.data());
    const auto c = ml::kmeans(m, 3, 124);
    (void)c; // different seed must still be valid, not necessarily different
}

TEST_CASE("kmeans validates k") {
    Matrix m(3, 2, 0.0);
    CHECK_THROWS_AS((void)ml::kmeans(m, 0, 1), AnalysisError);
    CHECK_THROWS_AS((void)ml::kmeans(m, 4, 1), AnalysisError);
}
