#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "cspn/dataset.hpp"
#include "cspn/rng.hpp"

namespace cspn {

/** Random Fourier feature map approximating an RBF kernel with the stored
 *  bandwidth: feature f of point v is sqrt(2/F) * cos(w_f . v + b_f), with
 *  frequencies drawn N(0, 1/bandwidth^2) entrywise and phases U[0, 2pi).
 */
struct RffMap {
    double bandwidth = 1.0;
    Eigen::MatrixXd frequencies;  // F x d
    Eigen::VectorXd phases;       // F

    int feature_count() const { return static_cast<int>(frequencies.rows()); }
    int input_dim() const { return static_cast<int>(frequencies.cols()); }

    static RffMap make(int feature_count, int dim, double bandwidth, Rng& rng);
};

/// Median pairwise Euclidean distance on a subsample of at most max_points rows.
double median_pairwise_distance(const Eigen::MatrixXd& points, int max_points, Rng& rng);

/// Raw (uncentered) feature matrix, n x F.
Eigen::MatrixXd rff_raw(const Eigen::MatrixXd& points, const RffMap& map);

/// Feature matrix with every column mean-centered.
Eigen::MatrixXd rff_features(const Eigen::MatrixXd& points, const RffMap& map);

enum class NullMethod { LPB, HBE, Permutation };
std::string null_method_name(NullMethod m);

struct CiTestResult {
    double statistic = 0.0;
    double p_value = 1.0;
    NullMethod method = NullMethod::LPB;
    Eigen::VectorXd eigenvalues;  // spectrum behind the asymptotic null
};

struct CiTestOptions {
    int rff_y = 5;                 // features per univariate label
    int rff_x = 25;                // features for the conditioning block
    double ridge_scale = 1e-10;    // times trace(Sxx), added before inversion
    int permutations = 200;
    int min_rows_asymptotic = 20;  // below this the permutation path is used
    int bandwidth_subsample = 500;
};

/** RCoT: conditional independence test of (yi, yj) given x.
 *
 * The statistic is n times the squared Frobenius norm of the empirical
 * cross-covariance of the two labels' RFF features after residualizing both on
 * the conditioning block's features. The null is a positively-weighted sum of
 * chi-squares approximated by Lindsay-Pilla-Basak moment matching, falling
 * back to Hall-Buckley-Eagleson and finally to permutations. With an empty x
 * the test degrades to a marginal independence test (no residualization).
 *
 * Deterministic given (data, seed); the internal draws come from substreams of
 * the seed (see rng.hpp).
 */
CiTestResult rcot(const Eigen::VectorXd& yi, const Eigen::VectorXd& yj, const Eigen::MatrixXd& x,
                  std::uint64_t seed, const CiTestOptions& opts = {});

/** Pairwise RCoT over all label pairs given all of X; an edge is added on
 * evidence of conditional dependence (p <= alpha), and the returned blocks are
 * the connected components, ordered by smallest member. The per-pair seed is
 * stream(seed, i, j).
 */
std::vector<std::vector<int>> split_labels(const Dataset& data, double alpha, std::uint64_t seed,
                                           const CiTestOptions& opts = {},
                                           std::vector<CiTestResult>* pair_results = nullptr,
                                           int threads = 1);

/// Label split on explicit row/column views (used by the structure learner).
std::vector<std::vector<int>> split_labels_view(const Dataset& data,
                                                const std::vector<int>& row_view,
                                                const std::vector<int>& y_view, double alpha,
                                                std::uint64_t seed, const CiTestOptions& opts,
                                                int* pairs_tested = nullptr, int threads = 1,
                                                std::vector<CiTestResult>* pair_results = nullptr);

// Null-distribution machinery, exposed for testing.

/// Survival function P(sum_i lambda_i chi2_1 > x) by LPB moment matching with
/// four support points; nullopt when the moment system is infeasible.
std::optional<double> lpb4_survival(const Eigen::VectorXd& lambdas, double x);

/// Same tail probability by the Hall-Buckley-Eagleson gamma match.
double hbe_survival(const Eigen::VectorXd& lambdas, double x);

}  // namespace cspn
