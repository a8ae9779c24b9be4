#pragma once

// Shared test fixtures: random valid circuits, brute-force oracles, and
// numeric references kept independent of the library's own inference paths.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "cspn/circuit.hpp"
#include "cspn/rng.hpp"

namespace cspn::testing {

inline GlmLeaf random_bernoulli_leaf(int num_x, Rng& rng, double scale = 1.0) {
    GlmLeaf leaf;
    leaf.family = LeafFamily::Bernoulli;
    leaf.link = LinkFn::Logit;
    leaf.coeffs.resize(1, num_x + 1);
    for (int j = 0; j <= num_x; ++j) leaf.coeffs(0, j) = scale * rng.normal();
    return leaf;
}

inline GlmLeaf random_leaf(LeafFamily family, int num_x, Rng& rng, int categories = 3) {
    if (family == LeafFamily::Bernoulli) return random_bernoulli_leaf(num_x, rng);
    GlmLeaf leaf;
    leaf.family = family;
    leaf.link = canonical_link(family);
    const int rows = family == LeafFamily::Categorical ? categories : 1;
    leaf.coeffs.resize(rows, num_x + 1);
    for (int r = 0; r < rows; ++r)
        for (int j = 0; j <= num_x; ++j) leaf.coeffs(r, j) = 0.5 * rng.normal();
    if (family == LeafFamily::Gaussian) leaf.dispersion = 0.5 + rng.uniform();
    return leaf;
}

/** Random valid circuit over binary Y variables: leaves are bernoulli GLMs,
 * internal nodes alternate between gating (constant or softmax) and product
 * splits. Always passes validate().
 */
inline Circuit random_binary_circuit(int num_y, int num_x, std::uint64_t seed,
                                     int max_internal_depth = 4) {
    Rng rng(seed);
    CircuitBuilder builder(num_y, num_x);
    std::function<int(std::vector<int>, int)> build = [&](std::vector<int> scope,
                                                          int depth) -> int {
        if (scope.size() == 1 && (depth >= max_internal_depth || rng.uniform() < 0.6))
            return builder.add_leaf(scope, random_bernoulli_leaf(num_x, rng));
        const bool can_split = scope.size() > 1;
        const bool gate = depth < max_internal_depth && (!can_split || rng.uniform() < 0.45);
        if (gate) {
            const int k = 2 + static_cast<int>(rng.uniform_below(2));
            std::vector<int> children;
            for (int i = 0; i < k; ++i) children.push_back(build(scope, depth + 1));
            GatingFunction gf;
            if (rng.uniform() < 0.5) {
                GateConstant c;
                c.weights.resize(k);
                for (int i = 0; i < k; ++i) c.weights[i] = 0.1 + rng.uniform();
                c.weights /= c.weights.sum();
                gf = c;
            } else {
                GateSoftmax s;
                s.coeffs.resize(k, num_x + 1);
                for (int r = 0; r < k; ++r)
                    for (int j = 0; j <= num_x; ++j) s.coeffs(r, j) = rng.normal();
                gf = s;
            }
            return builder.add_gating(scope, std::move(children), std::move(gf));
        }
        if (!can_split) return builder.add_leaf(scope, random_bernoulli_leaf(num_x, rng));
        // random 2-way partition of the scope
        std::vector<int> left, right;
        for (int v : scope) (rng.bernoulli(0.5) ? left : right).push_back(v);
        if (left.empty()) {
            left.push_back(right.back());
            right.pop_back();
        } else if (right.empty()) {
            right.push_back(left.back());
            left.pop_back();
        }
        std::sort(left.begin(), left.end());
        std::sort(right.begin(), right.end());
        std::vector<int> children{build(left, depth + 1), build(right, depth + 1)};
        return builder.add_product(scope, std::move(children));
    };
    std::vector<int> full(num_y);
    std::iota(full.begin(), full.end(), 0);
    return builder.finish(build(full, 0));
}

/// Circuit whose leaves cover every family (for gradient sweeps). y_types[j]
/// gives the family of variable j; categorical uses 3 classes.
inline Circuit random_mixed_circuit(const std::vector<LeafFamily>& y_types, int num_x,
                                    std::uint64_t seed) {
    Rng rng(seed);
    const int num_y = static_cast<int>(y_types.size());
    CircuitBuilder builder(num_y, num_x);
    std::function<int(std::vector<int>, int)> build = [&](std::vector<int> scope,
                                                          int depth) -> int {
        if (scope.size() == 1 && (depth >= 3 || rng.uniform() < 0.5))
            return builder.add_leaf(scope, random_leaf(y_types[scope[0]], num_x, rng));
        const bool gate = depth < 3 && (scope.size() == 1 || rng.uniform() < 0.5);
        if (gate) {
            const int k = 2;
            std::vector<int> children;
            for (int i = 0; i < k; ++i) children.push_back(build(scope, depth + 1));
            if (rng.uniform() < 0.5) {
                GateConstant c;
                c.weights.resize(k);
                for (int i = 0; i < k; ++i) c.weights[i] = 0.2 + rng.uniform();
                c.weights /= c.weights.sum();
                return builder.add_gating(scope, std::move(children), c);
            }
            GateSoftmax s;
            s.coeffs.resize(k, num_x + 1);
            for (int r = 0; r < k; ++r)
                for (int j = 0; j <= num_x; ++j) s.coeffs(r, j) = 0.7 * rng.normal();
            return builder.add_gating(scope, std::move(children), s);
        }
        std::vector<int> left(scope.begin(), scope.begin() + scope.size() / 2);
        std::vector<int> right(scope.begin() + scope.size() / 2, scope.end());
        std::vector<int> children{build(left, depth + 1), build(right, depth + 1)};
        return builder.add_product(scope, std::move(children));
    };
    std::vector<int> full(num_y);
    std::iota(full.begin(), full.end(), 0);
    return builder.finish(build(full, 0));
}

/// Brute-force log marginal: log-sum-exp of log_density over all binary
/// completions of the marginalized slots. Independent of Circuit::log_marginal.
inline double enumerate_log_marginal(const Circuit& circuit, const Evidence& partial) {
    std::vector<int> free_slots;
    for (int j = 0; j < static_cast<int>(partial.y.size()); ++j)
        if (!partial.y[j]) free_slots.push_back(j);
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> terms;
    for (long mask = 0; mask < (1L << free_slots.size()); ++mask) {
        Evidence full = partial;
        for (size_t k = 0; k < free_slots.size(); ++k)
            full.y[free_slots[k]] = (mask >> k) & 1 ? 1.0 : 0.0;
        terms.push_back(circuit.log_density(full));
        best = std::max(best, terms.back());
    }
    double acc = 0.0;
    for (double t : terms) acc += std::exp(t - best);
    return best + std::log(acc);
}

/// Gauss-Legendre nodes/weights on [-1,1] by Newton iteration on P_n.
inline void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights) {
    nodes.resize(n);
    weights.resize(n);
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
        double pp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            pp = n * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / pp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * pp * pp);
    }
}

/// Integral of f over [a,b] with composite 64-point Gauss-Legendre panels.
inline double integrate(const std::function<double(double)>& f, double a, double b,
                        int panels = 64) {
    static std::vector<double> nodes, weights;
    if (nodes.empty()) gauss_legendre(64, nodes, weights);
    double total = 0.0;
    const double h = (b - a) / panels;
    for (int p = 0; p < panels; ++p) {
        const double lo = a + p * h;
        for (size_t i = 0; i < nodes.size(); ++i)
            total += 0.5 * h * weights[i] * f(lo + 0.5 * h * (nodes[i] + 1.0));
    }
    return total;
}

/// Imhof's integral for P(sum_j lambda_j chi2_1 > x); numeric reference for
/// the moment-matching survival approximations. Integrates half-period panels
/// of the oscillation until the envelope bound on the tail is negligible.
inline double imhof_survival(const Eigen::VectorXd& lambdas, double x) {
    const auto theta = [&](double u) {
        double t = -0.5 * x * u;
        for (int j = 0; j < lambdas.size(); ++j) t += 0.5 * std::atan(lambdas[j] * u);
        return t;
    };
    const auto rho = [&](double u) {
        double r = 1.0;
        for (int j = 0; j < lambdas.size(); ++j)
            r *= std::pow(1.0 + lambdas[j] * lambdas[j] * u * u, 0.25);
        return r;
    };
    auto integrand = [&](double u) {
        if (u < 1e-12) return 0.5 * (lambdas.sum() - x);  // theta'(0)
        return std::sin(theta(u)) / (u * rho(u));
    };
    // panel width: half the asymptotic oscillation period 4*pi/x
    const double panel = std::min(0.5, 2.0 * M_PI / std::max(x, 1e-3));
    static std::vector<double> nodes, weights;
    if (nodes.empty()) gauss_legendre(64, nodes, weights);
    double integral = 0.0;
    double u_lo = 0.0;
    for (long k = 0; k < 4000000; ++k) {
        double acc = 0.0;
        for (size_t i = 0; i < nodes.size(); ++i)
            acc += 0.5 * panel * weights[i] * integrand(u_lo + 0.5 * panel * (nodes[i] + 1.0));
        integral += acc;
        u_lo += panel;
        const double envelope = 1.0 / (u_lo * rho(u_lo));
        if (envelope * panel < 1e-12 && k > 16) break;
    }
    return std::clamp(0.5 + integral / M_PI, 0.0, 1.0);
}

}  // namespace cspn::testing
