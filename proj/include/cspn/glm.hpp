#pragma once

#include <Eigen/Dense>

#include "cspn/errors.hpp"
#include "cspn/rng.hpp"

namespace cspn {

enum class LeafFamily { Bernoulli, Poisson, Gaussian, Categorical };
enum class LinkFn { Logit, Log, Identity, Softmax };

LinkFn canonical_link(LeafFamily family);
std::string family_name(LeafFamily f);
LeafFamily parse_family(const std::string& name);
std::string link_name(LinkFn l);
LinkFn parse_link(const std::string& name);

/** Univariate conditional exponential-family distribution P(Y | X).
 *
 * `coeffs` is R x (|X|+1) with the intercept in the last column; R is 1 except
 * for categorical leaves, where each of the C classes has a coefficient row.
 * `dispersion` is the gaussian variance (fixed at 1 for the other families).
 */
struct GlmLeaf {
    LeafFamily family = LeafFamily::Gaussian;
    LinkFn link = LinkFn::Identity;
    Eigen::MatrixXd coeffs;
    double dispersion = 1.0;

    int input_dim() const { return static_cast<int>(coeffs.cols()) - 1; }
    int num_categories() const { return static_cast<int>(coeffs.rows()); }
};

struct FitControl {
    int max_iters = 50;
    double tol = 1e-8;    // relative penalized-deviance change
    double ridge = 1e-6;  // L2 penalty on all coefficients
};

/// Exact log pmf/pdf at mean parameter link^-1(coeffs . [x;1]).
double leaf_log_density(const GlmLeaf& leaf, double y, const Eigen::VectorXd& x);

/** Ridge-penalized maximum likelihood via IRWLS (Fisher scoring with
 * step-halving). Rows are fitted in a canonical sorted order, so the result
 * does not depend on the input row order. For gaussian leaves the dispersion
 * is the mean squared residual, floored at 1e-4.
 */
GlmLeaf fit_irwls(LeafFamily family, const Eigen::VectorXd& y, const Eigen::MatrixXd& x,
                  const FitControl& ctrl = {}, int num_categories = 0);

double leaf_sample(const GlmLeaf& leaf, const Eigen::VectorXd& x, Rng& rng);

/// Deterministic mode. Ties: bernoulli p=0.5 -> 0; poisson integer mean -> mean-1;
/// categorical -> lowest class index.
double leaf_mode(const GlmLeaf& leaf, const Eigen::VectorXd& x);

/// Mean of Y under the leaf at x (categorical: expected class index).
double leaf_mean(const GlmLeaf& leaf, const Eigen::VectorXd& x);

/** Gradient of leaf_log_density w.r.t. the flattened (row-major) coefficient
 * matrix, followed by d/d log(dispersion) for gaussian leaves.
 */
Eigen::VectorXd leaf_grad(const GlmLeaf& leaf, double y, const Eigen::VectorXd& x);

int leaf_param_count(const GlmLeaf& leaf);

/// Throws DomainError if y is outside the family support.
void check_support(const GlmLeaf& leaf, double y);

constexpr double kDispersionFloor = 1e-4;

}  // namespace cspn
