#include <catch2/catch_amalgamated.hpp>

#include "headforge/clustering.hpp"
#include "support/synthetic_clusters.hpp"

#include <numeric>
#include <sstream>

using namespace headforge;
using Catch::Approx;

namespace {

DataMatrix rows(std::initializer_list<std::initializer_list<double>> r) {
    DataMatrix m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.begin()->size()));
    Eigen::Index i = 0;
    for (const auto& row : r) {
        Eigen::Index j = 0;
        for (double v : row) m(i, j++) = v;
        ++i;
    }
    return m;
}

DataMatrix gaussian(std::size_t n, std::size_t d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    DataMatrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = nd(rng);
    return x;
}

}  // namespace

TEST_CASE("standardize examples", "[clustering]") {
    auto z = standardize(rows({{1, 5}, {3, 5}}));
    CHECK(z(0, 0) == -1.0);
    CHECK(z(1, 0) == 1.0);
    CHECK(z(0, 1) == 0.0);
    CHECK(z(1, 1) == 0.0);
    CHECK_THROWS_AS(standardize(rows({{1, 2}})), std::invalid_argument);

    auto x = gaussian(50, 4, 1) * 3.0;
    auto once = standardize(x);
    auto twice = standardize(once);
    CHECK((once - twice).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(once.colwise().mean().cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("PCA on a line and on a complete basis", "[clustering]") {
    DataMatrix line(20, 2);
    for (Eigen::Index i = 0; i < 20; ++i) line.row(i) << static_cast<double>(i), 2.0 * static_cast<double>(i) + 1.0;
    auto p = pca_fit_project(line, 1);
    CHECK(p.model.explained_variance_ratio[0] >= 0.999);
    auto p2 = pca_fit_project(line, 2);
    CHECK(p2.model.components.rows() == 1);
    CHECK_FALSE(p2.model.warning.empty());

    auto x = gaussian(40, 5, 2);
    auto full = pca_fit_project(x, 5);
    DataMatrix back = (full.projected * full.model.components).rowwise() + full.model.mean;
    CHECK((back - x).cwiseAbs().maxCoeff() < 1e-5);
    CHECK(full.model.cumulative_explained() == Approx(1.0));
    CHECK_THROWS_AS(pca_fit_project(x, 6), std::invalid_argument);
}

TEST_CASE("PCA invariants", "[clustering][property]") {
    auto x = gaussian(200, 8, 3);
    x.col(1) = 0.5 * x.col(0) + 0.1 * x.col(1);
    auto p = pca_fit_project(x, 6);
    const DataMatrix& c = p.model.components;
    CHECK((c * c.transpose() - Eigen::MatrixXd::Identity(c.rows(), c.rows())).cwiseAbs().maxCoeff() < 1e-6);
    const auto& r = p.model.explained_variance_ratio;
    for (std::size_t i = 0; i < r.size(); ++i) {
        CHECK((r[i] >= 0.0 && r[i] <= 1.0));
        if (i) CHECK(r[i] <= r[i - 1]);
    }
    DataMatrix centred = p.projected.rowwise() - p.projected.colwise().mean();
    Eigen::MatrixXd cov = centred.transpose() * centred / 199.0;
    Eigen::MatrixXd off = cov;
    off.diagonal().setZero();
    CHECK(off.cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("PCA of an isotropic Gaussian splits variance evenly", "[clustering]") {
    auto p = pca_fit_project(gaussian(10000, 3, 4), 3);
    for (double r : p.model.explained_variance_ratio) CHECK(std::abs(r - 1.0 / 3.0) < 0.1);
}

TEST_CASE("k-means examples", "[clustering]") {
    auto x = rows({{0, 0}, {0, 0.1}, {10, 10}, {10, 10.1}});
    KMeansOptions o;
    o.k = 2;
    auto a = kmeans(x, o);
    CHECK(a.labels[0] == a.labels[1]);
    CHECK(a.labels[2] == a.labels[3]);
    CHECK(a.labels[0] != a.labels[2]);
    CHECK(a.inertia == Approx(testing::brute_force_two_means(x)));

    o.k = 4;
    CHECK(kmeans(x, o).inertia == 0.0);
    o.k = 5;
    CHECK_THROWS_AS(kmeans(x, o), std::invalid_argument);

    auto dup = rows({{1, 1}, {1, 1}, {5, 0}, {5, 0}, {9, 4}, {2, 7}});
    o.k = 3;
    for (std::uint64_t s = 0; s < 10; ++s) {
        o.seed = s;
        auto d = kmeans(dup, o);
        CHECK(d.labels[0] == d.labels[1]);
        CHECK(d.labels[2] == d.labels[3]);
    }
}

TEST_CASE("k-means is deterministic and Lloyd never increases inertia", "[clustering][property]") {
    auto blobs = testing::gaussian_blobs(4, 30, 0.5, 2.0, 5);
    KMeansOptions o;
    o.k = 4;
    o.seed = 9;
    auto a = kmeans(blobs.x, o), b = kmeans(blobs.x, o);
    CHECK(a.labels == b.labels);
    CHECK(a.inertia == b.inertia);
    for (std::uint64_t s = 0; s < 20; ++s) {
        o.seed = s;
        o.n_init = 1;
        auto r = kmeans(gaussian(60, 3, s), o);
        for (std::size_t i = 1; i < r.inertia_history.size(); ++i)
            CHECK(r.inertia_history[i] <= r.inertia_history[i - 1] * (1 + 1e-12));
        CHECK(r.inertia == Approx(inertia_of(gaussian(60, 3, s), r.labels, 4)));
    }
}

TEST_CASE("HDBSCAN recovers separated blobs", "[clustering]") {
    auto d = testing::gaussian_blobs(3, 50, 0.05, 5.0, 42);
    auto a = hdbscan(d.x);
    CHECK(a.clusters == 3);
    CHECK(adjusted_rand_index(a.labels, d.truth) > 0.9);

    HdbscanOptions big;
    big.min_cluster_size = 200;
    auto none = hdbscan(d.x, big);
    CHECK(std::all_of(none.labels.begin(), none.labels.end(), [](int l) { return l == -1; }));
}

TEST_CASE("HDBSCAN agrees with a reference implementation on uniform noise", "[clustering]") {
    // noise counts and cluster counts from scikit-learn's HDBSCAN
    // (min_cluster_size=10) on the same generated datasets
    const std::vector<std::pair<std::size_t, std::size_t>> ref{{2, 7}, {2, 1}, {3, 65}, {2, 21}, {6, 5}};
    for (std::uint64_t s = 0; s < ref.size(); ++s) {
        auto a = hdbscan(testing::uniform_noise(100, 2, s));
        const auto noise = static_cast<std::size_t>(std::count(a.labels.begin(), a.labels.end(), -1));
        CHECK(a.clusters == ref[s].first);
        CHECK(noise == ref[s].second);
    }
}

TEST_CASE("HDBSCAN is invariant to row order", "[clustering][property]") {
    auto d = testing::gaussian_blobs(4, 25, 0.3, 2.0, 6);
    auto a = hdbscan(d.x);
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(d.x.rows()));
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(3);
    std::shuffle(perm.begin(), perm.end(), rng);
    DataMatrix shuffled(d.x.rows(), d.x.cols());
    for (std::size_t i = 0; i < perm.size(); ++i) shuffled.row(static_cast<Eigen::Index>(i)) = d.x.row(perm[i]);
    auto b = hdbscan(shuffled);
    std::vector<int> back(a.labels.size());
    for (std::size_t i = 0; i < perm.size(); ++i) back[static_cast<std::size_t>(perm[i])] = b.labels[i];
    CHECK(adjusted_rand_index(a.labels, back) == 1.0);
}

TEST_CASE("ARI identities", "[clustering]") {
    std::vector<int> a{0, 0, 1, 1, 2, 2, -1};
    std::vector<int> renamed{5, 5, 3, 3, 0, 0, 9};
    CHECK(adjusted_rand_index(a, a) == 1.0);
    CHECK(adjusted_rand_index(a, renamed) == 1.0);
    std::vector<int> b{0, 1, 0, 1, 0, 1, 0};
    CHECK(adjusted_rand_index(a, b) == adjusted_rand_index(b, a));
    std::vector<int> shorter{0, 1};
    CHECK_THROWS_AS(adjusted_rand_index(a, shorter), std::invalid_argument);
    // hand-computed: a = {0,0,1,1}, b = {0,1,1,1}
    // index = 1, sum_a = 2, sum_b = 3, expected = 6/6 = 1, max = 2.5 -> 0
    std::vector<int> p{0, 0, 1, 1}, q{0, 1, 1, 1};
    CHECK(adjusted_rand_index(p, q) == Approx(0.0).margin(1e-15));

    std::mt19937_64 rng(8);
    for (int s = 0; s < 20; ++s) {
        auto x = testing::random_labels(1000, 10, rng), y = testing::random_labels(1000, 10, rng);
        CHECK(std::abs(adjusted_rand_index(x, y)) < 0.05);
    }
}

TEST_CASE("depth distribution bins", "[clustering]") {
    std::vector<double> zeros(10, 0.0);
    CHECK(depth_distribution(zeros).early == 1.0);
    std::vector<double> uniform{0, 1, 2, 3, 4, 5};
    auto d = depth_distribution(uniform);
    CHECK(d.early == Approx(2.0 / 6));
    CHECK(d.middle == Approx(3.0 / 6));
    CHECK(d.late == Approx(1.0 / 6));
    CHECK(std::abs(d.early + d.middle + d.late - 1.0) < 1e-9);
}

TEST_CASE("diverse samples", "[clustering]") {
    DataMatrix line(30, 1);
    for (Eigen::Index i = 0; i < 30; ++i) line(i, 0) = static_cast<double>(i);
    std::vector<int> labels(30, 0);
    auto pick = diverse_samples(line, labels, 0, 15);
    CHECK(pick.size() == 15);
    CHECK(std::find(pick.begin(), pick.end(), 0) != pick.end());
    CHECK(std::find(pick.begin(), pick.end(), 29) != pick.end());
    CHECK(diverse_samples(line, labels, 0, 1) == std::vector<std::size_t>{14});  // medoid (lowest-index tie)
    CHECK(diverse_samples(line, labels, 0, 1) == diverse_samples(line, labels, 0, 1));

    std::vector<int> small(30, 1);
    for (int i = 0; i < 10; ++i) small[static_cast<std::size_t>(i)] = 0;
    auto all = diverse_samples(line, small, 0, 15);
    std::sort(all.begin(), all.end());
    CHECK(all == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
    CHECK_THROWS_AS(diverse_samples(line, small, 3), std::invalid_argument);
}

TEST_CASE("raw activation baseline", "[clustering]") {
    auto d = testing::gaussian_blobs(10, 20, 0.05, 3.0, 11);
    KMeansOptions o;
    o.k = 10;
    auto eng = kmeans(d.x, o);
    CHECK(raw_activation_baseline(d.x, eng.labels, 10, 0) == 1.0);

    std::vector<int> shuffled = eng.labels;
    std::mt19937_64 rng(4);
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    CHECK(std::abs(raw_activation_baseline(d.x, shuffled, 10, 0)) < 0.05);
}

TEST_CASE("label files round trip", "[clustering][io]") {
    std::vector<int> l{0, -1, 3, 2};
    std::stringstream ss;
    write_labels(ss, l);
    CHECK(read_labels(ss) == l);
    std::istringstream bad("1\nx\n");
    CHECK_THROWS_WITH(read_labels(bad), Catch::Matchers::ContainsSubstring(":2:"));
}
