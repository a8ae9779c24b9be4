#include <doctest.h>

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>

#include "cspn/citest.hpp"
#include "cspn/synthetic.hpp"
#include "helpers.hpp"

using namespace cspn;

namespace {

double ks_distance_from_uniform(std::vector<double> p) {
    std::sort(p.begin(), p.end());
    const double n = static_cast<double>(p.size());
    double d = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        d = std::max(d, std::abs((i + 1) / n - p[i]));
        d = std::max(d, std::abs(i / n - p[i]));
    }
    return d;
}

}  // namespace

TEST_CASE("rff features: zero frequency, determinism, kernel approximation") {
    {
        RffMap map;
        map.bandwidth = 1.0;
        map.frequencies = Eigen::MatrixXd::Zero(1, 1);
        map.phases = Eigen::VectorXd::Zero(1);
        Eigen::MatrixXd pts(4, 1);
        pts << 0.0, 1.0, -2.0, 3.0;
        const Eigen::MatrixXd raw = rff_raw(pts, map);
        for (int i = 0; i < 4; ++i) CHECK(raw(i, 0) == doctest::Approx(std::sqrt(2.0)));
        const Eigen::MatrixXd centered = rff_features(pts, map);
        for (int i = 0; i < 4; ++i) CHECK(centered(i, 0) == doctest::Approx(0.0));
    }
    {
        Rng a(3), b(3);
        const RffMap m1 = RffMap::make(16, 2, 1.5, a);
        const RffMap m2 = RffMap::make(16, 2, 1.5, b);
        CHECK((m1.frequencies - m2.frequencies).norm() == 0.0);
        CHECK((m1.phases - m2.phases).norm() == 0.0);
    }
    {
        // dense-kernel oracle: Gram of F=2000 raw features vs exact RBF matrix
        const int n = 50;
        Rng rng(99);
        Eigen::MatrixXd pts(n, 2);
        for (int i = 0; i < n; ++i) pts.row(i) << rng.normal(), rng.normal();
        const double bw = median_pairwise_distance(pts, 500, rng);
        Rng feat_rng(7);
        const RffMap map = RffMap::make(2000, 2, bw, feat_rng);
        const Eigen::MatrixXd z = rff_raw(pts, map);
        const Eigen::MatrixXd gram = z * z.transpose();
        double max_dev = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                const double d2 = (pts.row(i) - pts.row(j)).squaredNorm();
                const double exact = std::exp(-d2 / (2.0 * bw * bw));
                max_dev = std::max(max_dev, std::abs(gram(i, j) - exact));
            }
        CHECK(max_dev < 0.05);
    }
}

TEST_CASE("median heuristic bandwidth is positive and subsampled deterministically") {
    Rng rng(1);
    Eigen::MatrixXd pts(800, 3);
    for (int i = 0; i < 800; ++i)
        pts.row(i) << rng.normal(), rng.normal(), rng.normal();
    Rng r1(5), r2(5);
    const double b1 = median_pairwise_distance(pts, 500, r1);
    const double b2 = median_pairwise_distance(pts, 500, r2);
    CHECK(b1 == b2);
    CHECK(b1 > 0.0);
    // constant input degrades to 1.0
    Rng r3(5);
    CHECK(median_pairwise_distance(Eigen::MatrixXd::Zero(10, 2), 500, r3) == 1.0);
}

TEST_CASE("weighted chi-square survival: LPB and HBE against exact and Imhof") {
    {
        // spread weights, the shape RCoT spectra actually have
        Eigen::VectorXd lam(4);
        lam << 2.0, 1.0, 0.6, 0.3;
        for (double x : {1.0, 4.0, 8.0, 14.0, 22.0}) {
            const double reference = testing::imhof_survival(lam, x);
            const auto lpb = lpb4_survival(lam, x);
            REQUIRE(lpb.has_value());
            CHECK(std::abs(*lpb - reference) < 5e-3);
            CHECK(std::abs(hbe_survival(lam, x) - reference) < 5e-2);
        }
    }
    {
        // exactly equal weights degenerate to a single gamma; LPB's mixture
        // system is singular there and the ladder hands over to HBE, which is
        // exact for a pure chi-square
        Eigen::VectorXd lam = Eigen::VectorXd::Ones(4);
        boost::math::chi_squared chi4(4);
        for (double x : {4.0, 13.28}) {
            const double exact = 1.0 - boost::math::cdf(chi4, x);
            const auto lpb = lpb4_survival(lam, x);
            if (lpb) CHECK(std::abs(*lpb - exact) < 5e-3);
            CHECK(std::abs(hbe_survival(lam, x) - exact) < 1e-9);
        }
    }
    {
        // mixed weights against the Imhof integral
        Eigen::VectorXd lam(5);
        lam << 4.0, 2.0, 1.0, 0.5, 0.25;
        for (double x : {2.0, 8.0, 15.0, 25.0}) {
            const double reference = testing::imhof_survival(lam, x);
            const auto lpb = lpb4_survival(lam, x);
            REQUIRE(lpb.has_value());
            CHECK(std::abs(*lpb - reference) < 5e-3);
            CHECK(std::abs(hbe_survival(lam, x) - reference) < 5e-2);
        }
    }
    {
        // fewer than four weights: LPB declines, HBE still answers
        Eigen::VectorXd lam(2);
        lam << 1.0, 0.5;
        CHECK(!lpb4_survival(lam, 3.0).has_value());
        const double reference = testing::imhof_survival(lam, 3.0);
        CHECK(std::abs(hbe_survival(lam, 3.0) - reference) < 5e-2);
    }
}

TEST_CASE("rcot rejects perfect dependence") {
    const int n = 500;
    Rng rng(2);
    Eigen::VectorXd yi(n);
    Eigen::MatrixXd x(n, 1);
    for (int i = 0; i < n; ++i) {
        yi[i] = rng.normal();
        x(i, 0) = rng.normal();
    }
    const CiTestResult res = rcot(yi, yi, x, 17);
    CHECK(res.p_value < 1e-4);
    CHECK(res.statistic > 0.0);

    // permutation oracle agrees
    CiTestOptions force_perm;
    force_perm.min_rows_asymptotic = 1 << 30;
    const CiTestResult perm = rcot(yi, yi, x, 17, force_perm);
    CHECK(perm.method == NullMethod::Permutation);
    CHECK(perm.p_value <= 1.0 / 100.0);  // smallest achievable with 200 shuffles is ~1/201
}

TEST_CASE("rcot statistic is invariant to constant shifts") {
    const int n = 300;
    Rng rng(8);
    Eigen::VectorXd yi(n), yj(n);
    Eigen::MatrixXd x(n, 2);
    for (int i = 0; i < n; ++i) {
        x.row(i) << rng.normal(), rng.normal();
        yi[i] = std::sin(x(i, 0)) + 0.3 * rng.normal();
        yj[i] = std::cos(x(i, 1)) + 0.3 * rng.normal();
    }
    const double base = rcot(yi, yj, x, 5).statistic;
    CHECK(rcot(yi.array() + 13.5, yj, x, 5).statistic ==
          doctest::Approx(base).epsilon(1e-9));
    CHECK(rcot(yi, yj.array() - 7.0, x, 5).statistic == doctest::Approx(base).epsilon(1e-9));
    Eigen::MatrixXd x2 = x;
    x2.col(1).array() += 200.0;
    CHECK(rcot(yi, yj, x2, 5).statistic == doctest::Approx(base).epsilon(1e-9));
    CHECK(base >= 0.0);
}

TEST_CASE("rcot small-sample path falls back to permutations") {
    Rng rng(3);
    Eigen::VectorXd yi(12), yj(12);
    Eigen::MatrixXd x(12, 1);
    for (int i = 0; i < 12; ++i) {
        yi[i] = rng.normal();
        yj[i] = rng.normal();
        x(i, 0) = rng.normal();
    }
    const CiTestResult res = rcot(yi, yj, x, 4);
    CHECK(res.method == NullMethod::Permutation);
    CHECK(res.p_value > 0.0);
       CHECK(res.p_value <= 1.0);
}

TEST_CASE("H0 calibration: independent normals give uniform p-values") {
    const int reps = 1000, n = 400;
    std::vector<double> pvals;
    int rejects = 0;
    for (int rep = 0; rep < reps; ++rep) {
        Rng rng(10000 + rep);
        Eigen::VectorXd yi(n), yj(n);
        Eigen::MatrixXd x(n, 1);
        for (int i = 0; i < n; ++i) {
            yi[i] = rng.normal();
            yj[i] = rng.normal();
            x(i, 0) = rng.normal();
        }
        const double p = rcot(yi, yj, x, 555 + rep).p_value;
        pvals.push_back(p);
        if (p <= 0.05) ++rejects;
    }
    const double rate = static_cast<double>(rejects) / reps;
    CHECK(rate >= 0.02);
    CHECK(rate <= 0.09);
    CHECK(ks_distance_from_uniform(pvals) < 0.08);
}

TEST_CASE("conditional null: f(x)+noise pairs stay calibrated") {
    const int reps = 500, n = 400;
    int rejects = 0;
    for (int rep = 0; rep < reps; ++rep) {
        const auto synth =
            make_synthetic({.generator = "ci_pair", .rows = n}, 20000 + rep);
        const Eigen::MatrixXd y = synth.data.y_matrix();
        const double p = rcot(y.col(0), y.col(1), synth.data.x_matrix(), 777 + rep).p_value;
        if (p <= 0.05) ++rejects;
    }
    CHECK(static_cast<double>(rejects) / reps <= 0.10);
}

TEST_CASE("power: additive dependence is detected") {
    const int reps = 200, n = 400;
    int rejects = 0;
    for (int rep = 0; rep < reps; ++rep) {
        const auto synth =
            make_synthetic({.generator = "dependent_pair", .rows = n}, 30000 + rep);
        const Eigen::MatrixXd y = synth.data.y_matrix();
        const double p = rcot(y.col(0), y.col(1), synth.data.x_matrix(), 888 + rep).p_value;
        if (p <= 0.05) ++rejects;
    }
    CHECK(static_cast<double>(rejects) / reps >= 0.9);
}

TEST_CASE("permutation and LPB agree on most mixed cases") {
    const int cases = 200, n = 400;
    int agree = 0;
    CiTestOptions force_perm;
    force_perm.min_rows_asymptotic = 1 << 30;
    for (int rep = 0; rep < cases; ++rep) {
        const bool dependent = rep % 2 == 1;
        const auto synth = make_synthetic(
            {.generator = dependent ? "dependent_pair" : "ci_pair", .rows = n}, 40000 + rep);
        const Eigen::MatrixXd y = synth.data.y_matrix();
        const Eigen::MatrixXd x = synth.data.x_matrix();
        const double p_asym = rcot(y.col(0), y.col(1), x, 999 + rep).p_value;
        const double p_perm = rcot(y.col(0), y.col(1), x, 999 + rep, force_perm).p_value;
        if ((p_asym <= 0.05) == (p_perm <= 0.05)) ++agree;
    }
    CHECK(agree >= 180);  // >= 90%
}

TEST_CASE("split_labels: forced edge, clean split, chain transitivity") {
    {
        // identical copies force one component
        const int n = 200;
        Rng rng(6);
        Eigen::MatrixXd values(n, 3);
        for (int i = 0; i < n; ++i) {
            values(i, 2) = rng.normal();
            values(i, 0) = std::sin(values(i, 2)) + 0.2 * rng.normal();
            values(i, 1) = values(i, 0);
        }
        std::vector<ColumnSpec> schema{{"y0", ColumnType::Continuous, ColumnRole::Y, 0},
                                       {"y1", ColumnType::Continuous, ColumnRole::Y, 0},
                                       {"x0", ColumnType::Continuous, ColumnRole::X, 0}};
        const auto components = split_labels(Dataset(values, schema), 0.05, 3);
        CHECK(components == std::vector<std::vector<int>>{{0, 1}});
    }
    {
        // y0 = x + e, y1 = -x + e': two components on most seeds
        int correct = 0;
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            const int n = 500;
            Rng rng(700 + seed);
            Eigen::MatrixXd values(n, 3);
            for (int i = 0; i < n; ++i) {
                const double x = rng.normal();
                values(i, 0) = x + 0.25 * rng.normal();
                values(i, 1) = -x + 0.25 * rng.normal();
                values(i, 2) = x;
            }
            std::vector<ColumnSpec> schema{{"y0", ColumnType::Continuous, ColumnRole::Y, 0},
                                           {"y1", ColumnType::Continuous, ColumnRole::Y, 0},
                                           {"x0", ColumnType::Continuous, ColumnRole::X, 0}};
            const auto components = split_labels(Dataset(values, schema), 0.05, seed);
            if (components == std::vector<std::vector<int>>{{0}, {1}}) ++correct;
        }
        CHECK(correct >= 9);
    }
    {
        // chain: y0~y1 share a latent, y2 independent given x
        int correct = 0;
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            const int n = 500;
            Rng rng(900 + seed);
            Eigen::MatrixXd values(n, 4);
            for (int i = 0; i < n; ++i) {
                const double x = rng.normal();
                const double shared = rng.normal();
                values(i, 0) = std::sin(x) + 0.6 * shared + 0.2 * rng.normal();
                values(i, 1) = 0.5 * x + 0.6 * shared + 0.2 * rng.normal();
                values(i, 2) = std::cos(x) + 0.3 * rng.normal();
                values(i, 3) = x;
            }
            std::vector<ColumnSpec> schema{{"y0", ColumnType::Continuous, ColumnRole::Y, 0},
                                           {"y1", ColumnType::Continuous, ColumnRole::Y, 0},
                                           {"y2", ColumnType::Continuous, ColumnRole::Y, 0},
                                           {"x0", ColumnType::Continuous, ColumnRole::X, 0}};
            const auto components = split_labels(Dataset(values, schema), 0.05, seed);
            if (components == std::vector<std::vector<int>>{{0, 1}, {2}}) ++correct;
        }
        CHECK(correct >= 8);
    }
}

TEST_CASE("split_labels output is a partition and is thread-stable") {
    const auto synth = make_synthetic({.generator = "block_factorized", .rows = 400}, 12);
    const auto seq = split_labels(synth.data, 0.05, 31, {}, nullptr, 1);
    const auto par = split_labels(synth.data, 0.05, 31, {}, nullptr, 4);
    CHECK(seq == par);  // per-pair seeding makes threading invisible
    std::vector<bool> seen(synth.data.num_y(), false);
    for (const auto& block : seq)
        for (int v : block) {
            CHECK(!seen[v]);
            seen[v] = true;
        }
    for (bool s : seen) CHECK(s);
}
