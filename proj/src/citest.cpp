#include "cspn/citest.hpp"

#include <algorithm>
#include <atomic>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <map>
#include <numeric>
#include <thread>

#include "cspn/errors.hpp"

namespace cspn {

namespace {

// Column z-scoring: makes the statistic exactly invariant to shifting any
// input column and puts the median-heuristic bandwidth on a common scale.
Eigen::MatrixXd standardize_columns(const Eigen::MatrixXd& m) {
    Eigen::MatrixXd out = m;
    for (int c = 0; c < out.cols(); ++c) {
        const double mean = out.col(c).mean();
        out.col(c).array() -= mean;
        const double sd = std::sqrt(out.col(c).squaredNorm() / std::max<int>(1, out.rows() - 1));
        if (sd > 0) out.col(c) /= sd;
    }
    return out;
}

Eigen::MatrixXd center_columns(const Eigen::MatrixXd& m) {
    return m.rowwise() - m.colwise().mean();
}

double gamma_cdf(double x, double shape, double scale) {
    if (x <= 0.0) return 0.0;
    return boost::math::gamma_p(shape, x / scale);
}

}  // namespace

std::string null_method_name(NullMethod m) {
    switch (m) {
        case NullMethod::LPB: return "LPB";
        case NullMethod::HBE: return "HBE";
        case NullMethod::Permutation: return "permutation";
    }
    return "?";
}

RffMap RffMap::make(int feature_count, int dim, double bandwidth, Rng& rng) {
    if (feature_count < 1 || bandwidth <= 0.0)
        throw ValidationError("RffMap: feature count must be >= 1 and bandwidth > 0");
    RffMap map;
    map.bandwidth = bandwidth;
    map.frequencies.resize(feature_count, dim);
    for (int f = 0; f < feature_count; ++f)
        for (int d = 0; d < dim; ++d) map.frequencies(f, d) = rng.normal() / bandwidth;
    map.phases.resize(feature_count);
    for (int f = 0; f < feature_count; ++f) map.phases[f] = rng.uniform() * 2.0 * M_PI;
    return map;
}

double median_pairwise_distance(const Eigen::MatrixXd& points, int max_points, Rng& rng) {
    const int n = static_cast<int>(points.rows());
    std::vector<int> idx;
    if (n > max_points) {
        const auto perm = rng.permutation(n);
        idx.assign(perm.begin(), perm.begin() + max_points);
    } else {
        idx.resize(n);
        std::iota(idx.begin(), idx.end(), 0);
    }
    std::vector<double> dists;
    dists.reserve(idx.size() * (idx.size() - 1) / 2);
    for (size_t a = 0; a < idx.size(); ++a)
        for (size_t b = a + 1; b < idx.size(); ++b)
            dists.push_back((points.row(idx[a]) - points.row(idx[b])).norm());
    if (dists.empty()) return 1.0;
    std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
    const double med = dists[dists.size() / 2];
    return med > 0.0 ? med : 1.0;
}

Eigen::MatrixXd rff_raw(const Eigen::MatrixXd& points, const RffMap& map) {
    if (points.cols() != map.input_dim())
        throw ValidationError("rff_raw: point dimension does not match map");
    Eigen::MatrixXd z = points * map.frequencies.transpose();
    z.rowwise() += map.phases.transpose();
    const double scale = std::sqrt(2.0 / map.feature_count());
    return scale * z.array().cos();
}

Eigen::MatrixXd rff_features(const Eigen::MatrixXd& points, const RffMap& map) {
    return center_columns(rff_raw(points, map));
}

// -- weighted chi-square survival functions -----------------------------------

double hbe_survival(const Eigen::VectorXd& lambdas, double x) {
    const double k1 = lambdas.sum();
    const double k2 = 2.0 * lambdas.array().square().sum();
    const double k3 = 8.0 * lambdas.array().cube().sum();
    if (k2 <= 0.0) return x > k1 ? 0.0 : 1.0;
    if (k3 <= 0.0) {
        // back off to a plain two-moment gamma match
        const double shape = k1 * k1 / k2;
        return 1.0 - gamma_cdf(x, shape, k2 / k1);
    }
    const double nu = 8.0 * k2 * k2 * k2 / (k3 * k3);
    const double xs = std::sqrt(2.0 * nu / k2) * (x - k1) + nu;
    return 1.0 - gamma_cdf(xs, nu / 2.0, 2.0);
}

namespace {

// First 2p moments of Q = sum_i lambda_i chi2_1 from its cumulants
// kappa_r = 2^(r-1) (r-1)! sum_i lambda_i^r.
Eigen::VectorXd weighted_chi2_moments(const Eigen::VectorXd& lambdas, int p) {
    const int count = 2 * p;
    Eigen::VectorXd kappa(count), m(count);
    double fact = 1.0, pow2 = 1.0;
    for (int r = 1; r <= count; ++r) {
        kappa[r - 1] = pow2 * fact * lambdas.array().pow(r).sum();
        pow2 *= 2.0;
        fact *= r;
    }
    auto choose = [](int n, int k) {
        double c = 1.0;
        for (int i = 0; i < k; ++i) c = c * (n - i) / (i + 1);
        return c;
    };
    for (int n = 1; n <= count; ++n) {
        double v = kappa[n - 1];
        for (int j = 1; j < n; ++j) v += choose(n - 1, j - 1) * kappa[j - 1] * m[n - j - 1];
        m[n - 1] = v;
    }
    return m;
}

// Hankel matrix of gamma-normalized moments delta_k(lam) = m_k / prod_{j<k}(1+j*lam).
Eigen::MatrixXd delta_matrix(double lam, const Eigen::VectorXd& moments, int order) {
    Eigen::VectorXd delta(2 * order + 1);
    delta[0] = 1.0;
    double denom = 1.0;
    for (int k = 1; k <= 2 * order; ++k) {
        denom *= 1.0 + (k - 1) * lam;
        delta[k] = moments[k - 1] / denom;
    }
    Eigen::MatrixXd mat(order + 1, order + 1);
    for (int i = 0; i <= order; ++i)
        for (int j = 0; j <= order; ++j) mat(i, j) = delta[i + j];
    return mat;
}

double delta_det(double lam, const Eigen::VectorXd& moments, int order) {
    return delta_matrix(lam, moments, order).determinant();
}

std::optional<double> bisect_det_root(double lo, double hi, const Eigen::VectorXd& moments,
                                      int order) {
    double flo = delta_det(lo, moments, order);
    double fhi = delta_det(hi, moments, order);
    if (!std::isfinite(flo) || !std::isfinite(fhi) || flo * fhi > 0.0) return std::nullopt;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fmid = delta_det(mid, moments, order);
        if (!std::isfinite(fmid)) return std::nullopt;
        if (flo * fmid <= 0.0) {
            hi = mid;
            fhi = fmid;
        } else {
            lo = mid;
            flo = fmid;
        }
        if (hi - lo < 1e-12 * std::max(1.0, hi)) break;
    }
    return 0.5 * (lo + hi);
}

// Real roots of a monic-izable polynomial via the companion matrix.
std::optional<Eigen::VectorXd> real_poly_roots(const Eigen::VectorXd& coeffs) {
    const int deg = static_cast<int>(coeffs.size()) - 1;
    const double lead = coeffs[deg];
    if (std::abs(lead) < 1e-300) return std::nullopt;
    Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(deg, deg);
    for (int i = 1; i < deg; ++i) companion(i, i - 1) = 1.0;
    for (int i = 0; i < deg; ++i) companion(i, deg - 1) = -coeffs[i] / lead;
    Eigen::EigenSolver<Eigen::MatrixXd> es(companion);
    if (es.info() != Eigen::Success) return std::nullopt;
    Eigen::VectorXd roots(deg);
    for (int i = 0; i < deg; ++i) {
        const auto v = es.eigenvalues()[i];
        if (std::abs(v.imag()) > 1e-6 * std::max(1.0, std::abs(v.real()))) return std::nullopt;
        roots[i] = v.real();
    }
    std::sort(roots.data(), roots.data() + deg);
    return roots;
}

}  // namespace

std::optional<double> lpb4_survival(const Eigen::VectorXd& lambdas, double x) {
    constexpr int p = 4;
    if (lambdas.size() < p) return std::nullopt;
    if ((lambdas.array() <= 0.0).any()) return std::nullopt;

    // Work on Q/scale so the 8th moment stays well conditioned.
    const double scale = lambdas.sum();
    const Eigen::VectorXd lam = lambdas / scale;
    const double xs = x / scale;

    const Eigen::VectorXd moments = weighted_chi2_moments(lam, p);

    // lambdatilde_1 solves det of the order-1 delta matrix; each higher order
    // has its root inside (0, previous root).
    double lam_tilde = moments[1] / (moments[0] * moments[0]) - 1.0;
    if (!(lam_tilde > 0.0) || !std::isfinite(lam_tilde)) return std::nullopt;
    for (int order = 2; order <= p; ++order) {
        const auto root = bisect_det_root(1e-13, lam_tilde, moments, order);
        if (!root) return std::nullopt;
        lam_tilde = *root;
    }

    const Eigen::MatrixXd mat = delta_matrix(lam_tilde, moments, p);

    // Support-point polynomial: det of mat with its last row replaced by
    // (1, mu, ..., mu^p), expanded along that row.
    Eigen::VectorXd poly(p + 1);
    for (int k = 0; k <= p; ++k) {
        // cofactor of entry (p, k): first p rows of mat without column k
        Eigen::MatrixXd minor(p, p);
        for (int i = 0; i < p; ++i) {
            int col = 0;
            for (int j = 0; j <= p; ++j) {
                if (j == k) continue;
                minor(i, col++) = mat(i, j);
            }
        }
        poly[k] = ((p + k) % 2 == 0 ? 1.0 : -1.0) * minor.determinant();
    }
    const auto roots = real_poly_roots(poly);
    if (!roots) return std::nullopt;
    const Eigen::VectorXd mu = *roots;
    if ((mu.array() <= 0.0).any()) return std::nullopt;

    // Mixture weights from the Vandermonde moment system sum_i pi_i mu_i^k = delta_k.
    Eigen::MatrixXd vdm(p, p);
    Eigen::VectorXd rhs(p);
    for (int k = 0; k < p; ++k) {
        for (int i = 0; i < p; ++i) vdm(k, i) = std::pow(mu[i], k);
        rhs[k] = mat(0, k);  // delta_0..delta_{p-1}
    }
    const Eigen::VectorXd pi = vdm.fullPivLu().solve(rhs);
    if (!pi.allFinite()) return std::nullopt;
    if (std::abs(pi.sum() - 1.0) > 1e-6) return std::nullopt;

    // Each component is a gamma with mean mu_i and squared CV lam_tilde.
    double cdf = 0.0;
    for (int i = 0; i < p; ++i)
        cdf += pi[i] * gamma_cdf(xs, 1.0 / lam_tilde, lam_tilde * mu[i]);
    if (!std::isfinite(cdf)) return std::nullopt;
    return std::clamp(1.0 - cdf, 0.0, 1.0);
}

// -- RCoT ----------------------------------------------------------------------

namespace {

struct ResidualFeatures {
    Eigen::MatrixXd e1, e2;  // n x F, residualized + centered
};

double cross_cov_statistic(const Eigen::MatrixXd& e1, const Eigen::MatrixXd& e2) {
    const double n = static_cast<double>(e1.rows());
    const Eigen::MatrixXd cross = (e1.transpose() * e2) / n;
    return n * cross.squaredNorm();
}

ResidualFeatures residualized_features(const Eigen::VectorXd& yi, const Eigen::VectorXd& yj,
                                       const Eigen::MatrixXd& x, std::uint64_t seed,
                                       const CiTestOptions& opts) {
    const int n = static_cast<int>(yi.size());
    const Eigen::MatrixXd y1 = standardize_columns(yi);
    const Eigen::MatrixXd y2 = standardize_columns(yj);

    Rng bw_rng = Rng::stream(seed, 0);
    Rng rng_y1 = Rng::stream(seed, 1);
    Rng rng_y2 = Rng::stream(seed, 2);

    const double bw1 = median_pairwise_distance(y1, opts.bandwidth_subsample, bw_rng);
    const double bw2 = median_pairwise_distance(y2, opts.bandwidth_subsample, bw_rng);
    const Eigen::MatrixXd f1 =
        rff_features(y1, RffMap::make(opts.rff_y, 1, bw1, rng_y1));
    const Eigen::MatrixXd f2 =
        rff_features(y2, RffMap::make(opts.rff_y, 1, bw2, rng_y2));

    if (x.cols() == 0) return {f1, f2};  // marginal independence test

    Rng rng_x = Rng::stream(seed, 3);
    const Eigen::MatrixXd xs = standardize_columns(x);
    const double bwx = median_pairwise_distance(xs, opts.bandwidth_subsample, bw_rng);
    const Eigen::MatrixXd fx =
        rff_features(xs, RffMap::make(opts.rff_x, static_cast<int>(x.cols()), bwx, rng_x));

    Eigen::MatrixXd sxx = (fx.transpose() * fx) / n;
    const double ridge = std::max(opts.ridge_scale * sxx.trace(), 1e-300);
    sxx.diagonal().array() += ridge;
    const Eigen::LDLT<Eigen::MatrixXd> solver(sxx);
    if (solver.info() != Eigen::Success)
        throw NumericError("rcot: regularized feature covariance is singular");

    // e = f - fx Sxx^{-1} Sx_f, the empirical partial cross-covariance residual
    const Eigen::MatrixXd sx1 = (fx.transpose() * f1) / n;
    const Eigen::MatrixXd sx2 = (fx.transpose() * f2) / n;
    ResidualFeatures out;
    out.e1 = f1 - fx * solver.solve(sx1);
    out.e2 = f2 - fx * solver.solve(sx2);
    return out;
}

double permutation_p_value(const Eigen::MatrixXd& e1, const Eigen::MatrixXd& e2, double observed,
                           int permutations, Rng& rng) {
    const int n = static_cast<int>(e1.rows());
    int at_least = 0;
    Eigen::MatrixXd shuffled(e1.rows(), e1.cols());
    for (int rep = 0; rep < permutations; ++rep) {
        const auto perm = rng.permutation(n);
        for (int i = 0; i < n; ++i) shuffled.row(i) = e1.row(perm[i]);
        if (cross_cov_statistic(shuffled, e2) >= observed) ++at_least;
    }
    return (1.0 + at_least) / (1.0 + permutations);
}

}  // namespace

CiTestResult rcot(const Eigen::VectorXd& yi, const Eigen::VectorXd& yj, const Eigen::MatrixXd& x,
                  std::uint64_t seed, const CiTestOptions& opts) {
    const int n = static_cast<int>(yi.size());
    if (yj.size() != n || (x.size() > 0 && x.rows() != n))
        throw ValidationError("rcot: row count mismatch");
    if (n < 2) throw ValidationError("rcot: need at least 2 rows");

    const ResidualFeatures res = residualized_features(yi, yj, x, seed, opts);
    CiTestResult result;
    result.statistic = cross_cov_statistic(res.e1, res.e2);

    if (result.statistic <= 0.0) {  // constant label after standardization
        result.p_value = 1.0;
        result.method = NullMethod::LPB;
        return result;
    }

    // Null spectrum: eigenvalues of the (uncentered) second moment of the
    // per-sample outer products of the residualized features.
    const int f1 = static_cast<int>(res.e1.cols());
    const int f2 = static_cast<int>(res.e2.cols());
    Eigen::MatrixXd products(n, f1 * f2);
    for (int i = 0; i < n; ++i)
        for (int a = 0; a < f1; ++a)
            for (int b = 0; b < f2; ++b) products(i, a * f2 + b) = res.e1(i, a) * res.e2(i, b);
    const Eigen::MatrixXd cov = (products.transpose() * products) / n;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    Eigen::VectorXd lambdas = eig.eigenvalues();
    std::vector<double> keep;
    const double floor = 1e-12 * std::max(1e-300, lambdas.maxCoeff());
    for (int i = 0; i < lambdas.size(); ++i)
        if (lambdas[i] > floor) keep.push_back(lambdas[i]);
    result.eigenvalues = Eigen::Map<Eigen::VectorXd>(keep.data(), keep.size());

    if (n >= opts.min_rows_asymptotic && !keep.empty()) {
        const auto lpb = lpb4_survival(result.eigenvalues, result.statistic);
        if (lpb) {
            result.p_value = *lpb;
            result.method = NullMethod::LPB;
            return result;
        }
        const double hbe = hbe_survival(result.eigenvalues, result.statistic);
        if (std::isfinite(hbe)) {
            result.p_value = std::clamp(hbe, 0.0, 1.0);
            result.method = NullMethod::HBE;
            return result;
        }
    }

    Rng perm_rng = Rng::stream(seed, 4);
    result.p_value =
        permutation_p_value(res.e1, res.e2, result.statistic, opts.permutations, perm_rng);
    result.method = NullMethod::Permutation;
    return result;
}

// -- label partitioning --------------------------------------------------------

namespace {

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int a) {
        while (parent[a] != a) a = parent[a] = parent[parent[a]];
        return a;
    }
    void unite(int a, int b) { parent[find(a)] = find(b); }
};

}  // namespace

std::vector<std::vector<int>> split_labels_view(const Dataset& data,
                                                const std::vector<int>& row_view,
                                                const std::vector<int>& y_view, double alpha,
                                                std::uint64_t seed, const CiTestOptions& opts,
                                                int* pairs_tested, int threads,
                                                std::vector<CiTestResult>* pair_results) {
    const int m = static_cast<int>(y_view.size());
    if (m < 2) throw ValidationError("split_labels: need at least two Y variables");
    const int n = static_cast<int>(row_view.size());

    Eigen::MatrixXd x(n, data.num_x());
    for (int r = 0; r < n; ++r) x.row(r) = data.x_row(row_view[r]).transpose();
    Eigen::MatrixXd y(n, m);
    for (int r = 0; r < n; ++r)
        for (int j = 0; j < m; ++j) y(r, j) = data.y_value(row_view[r], y_view[j]);

    struct Pair {
        int a, b;
        CiTestResult result;
    };
    std::vector<Pair> pairs;
    for (int a = 0; a < m; ++a)
        for (int b = a + 1; b < m; ++b) pairs.push_back({a, b, {}});

    auto run_pair = [&](Pair& p) {
        // global variable ids key the seed so views test reproducibly
        const std::uint64_t pair_seed =
            Rng::stream(seed, static_cast<std::uint64_t>(y_view[p.a]),
                        static_cast<std::uint64_t>(y_view[p.b]))
                .next_u64();
        p.result = rcot(y.col(p.a), y.col(p.b), x, pair_seed, opts);
    };

    if (threads > 1 && pairs.size() > 1) {
        std::atomic<size_t> next{0};
        std::vector<std::thread> workers;
        const int count = std::min<int>(threads, static_cast<int>(pairs.size()));
        for (int t = 0; t < count; ++t)
            workers.emplace_back([&] {
                for (size_t i = next.fetch_add(1); i < pairs.size(); i = next.fetch_add(1))
                    run_pair(pairs[i]);
            });
        for (auto& w : workers) w.join();
    } else {
        for (auto& p : pairs) run_pair(p);
    }

    UnionFind uf(m);
    for (const auto& p : pairs)
        if (p.result.p_value <= alpha) uf.unite(p.a, p.b);

    if (pairs_tested) *pairs_tested = static_cast<int>(pairs.size());
    if (pair_results) {
        pair_results->clear();
        for (const auto& p : pairs) pair_results->push_back(p.result);
    }

    std::map<int, std::vector<int>> groups;
    for (int j = 0; j < m; ++j) groups[uf.find(j)].push_back(j);
    std::vector<std::vector<int>> components;
    for (auto& [_, g] : groups) components.push_back(std::move(g));
    std::sort(components.begin(), components.end(),
              [](const auto& a, const auto& b) { return a.front() < b.front(); });
    return components;
}

std::vector<std::vector<int>> split_labels(const Dataset& data, double alpha, std::uint64_t seed,
                                           const CiTestOptions& opts,
                                           std::vector<CiTestResult>* pair_results, int threads) {
    std::vector<int> rows(data.rows());
    std::iota(rows.begin(), rows.end(), 0);
    std::vector<int> ys(data.num_y());
    std::iota(ys.begin(), ys.end(), 0);
    return split_labels_view(data, rows, ys, alpha, seed, opts, nullptr, threads, pair_results);
}

}  // namespace cspn
