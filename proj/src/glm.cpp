#include "cspn/glm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace cspn {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;
constexpr double kEtaCap = 35.0;  // keeps exp() and the IRWLS weights finite

double log1pexp(double t) {
    // log(1 + e^t) without overflow
    if (t > 33.0) return t;
    if (t < -33.0) return std::exp(t);
    return std::log1p(std::exp(t));
}

Eigen::VectorXd augmented(const Eigen::VectorXd& x) {
    Eigen::VectorXd xt(x.size() + 1);
    xt.head(x.size()) = x;
    xt[x.size()] = 1.0;
    return xt;
}

double clamp_eta(double eta) { return std::clamp(eta, -kEtaCap, kEtaCap); }

}  // namespace

LinkFn canonical_link(LeafFamily family) {
    switch (family) {
        case LeafFamily::Bernoulli: return LinkFn::Logit;
        case LeafFamily::Poisson: return LinkFn::Log;
        case LeafFamily::Gaussian: return LinkFn::Identity;
        case LeafFamily::Categorical: return LinkFn::Softmax;
    }
    return LinkFn::Identity;
}

std::string family_name(LeafFamily f) {
    switch (f) {
        case LeafFamily::Bernoulli: return "bernoulli";
        case LeafFamily::Poisson: return "poisson";
        case LeafFamily::Gaussian: return "gaussian";
        case LeafFamily::Categorical: return "categorical";
    }
    return "?";
}

LeafFamily parse_family(const std::string& name) {
    if (name == "bernoulli") return LeafFamily::Bernoulli;
    if (name == "poisson") return LeafFamily::Poisson;
    if (name == "gaussian") return LeafFamily::Gaussian;
    if (name == "categorical") return LeafFamily::Categorical;
    throw ParseError("unknown leaf family tag \"" + name + "\"");
}

std::string link_name(LinkFn l) {
    switch (l) {
        case LinkFn::Logit: return "logit";
        case LinkFn::Log: return "log";
        case LinkFn::Identity: return "identity";
        case LinkFn::Softmax: return "softmax";
    }
    return "?";
}

LinkFn parse_link(const std::string& name) {
    if (name == "logit") return LinkFn::Logit;
    if (name == "log") return LinkFn::Log;
    if (name == "identity") return LinkFn::Identity;
    if (name == "softmax") return LinkFn::Softmax;
    throw ParseError("unknown link tag \"" + name + "\"");
}

void check_support(const GlmLeaf& leaf, double y) {
    switch (leaf.family) {
        case LeafFamily::Bernoulli:
            if (y != 0.0 && y != 1.0)
                throw DomainError("bernoulli leaf: y must be 0 or 1, got " + std::to_string(y));
            break;
        case LeafFamily::Poisson:
            if (!(y >= 0.0) || y != std::floor(y))
                throw DomainError("poisson leaf: y must be a nonnegative integer, got " +
                                  std::to_string(y));
            break;
        case LeafFamily::Gaussian:
            if (!std::isfinite(y)) throw DomainError("gaussian leaf: y must be finite");
            break;
        case LeafFamily::Categorical:
            if (y != std::floor(y) || y < 0.0 || y >= leaf.num_categories())
                throw DomainError("categorical leaf: y must be in 0.." +
                                  std::to_string(leaf.num_categories() - 1) + ", got " +
                                  std::to_string(y));
            break;
    }
}

double leaf_log_density(const GlmLeaf& leaf, double y, const Eigen::VectorXd& x) {
    check_support(leaf, y);
    const Eigen::VectorXd xt = augmented(x);
    switch (leaf.family) {
        case LeafFamily::Bernoulli: {
            const double eta = leaf.coeffs.row(0).dot(xt);
            // y*eta - log(1+e^eta), stable on both tails
            return y * eta - log1pexp(eta);
        }
        case LeafFamily::Poisson: {
            const double eta = clamp_eta(leaf.coeffs.row(0).dot(xt));
            return y * eta - std::exp(eta) - std::lgamma(y + 1.0);
        }
        case LeafFamily::Gaussian: {
            const double mu = leaf.coeffs.row(0).dot(xt);
            const double r = y - mu;
            return -0.5 * (kLogTwoPi + std::log(leaf.dispersion)) -
                   0.5 * r * r / leaf.dispersion;
        }
        case LeafFamily::Categorical: {
            const Eigen::VectorXd etas = leaf.coeffs * xt;
            const double m = etas.maxCoeff();
            const double lse = m + std::log((etas.array() - m).exp().sum());
            return etas[static_cast<int>(y)] - lse;
        }
    }
    return 0.0;
}

double leaf_sample(const GlmLeaf& leaf, const Eigen::VectorXd& x, Rng& rng) {
    const Eigen::VectorXd xt = augmented(x);
    switch (leaf.family) {
        case LeafFamily::Bernoulli: {
            const double p = 1.0 / (1.0 + std::exp(-leaf.coeffs.row(0).dot(xt)));
            return rng.bernoulli(p) ? 1.0 : 0.0;
        }
        case LeafFamily::Poisson:
            return static_cast<double>(rng.poisson(std::exp(clamp_eta(leaf.coeffs.row(0).dot(xt)))));
        case LeafFamily::Gaussian:
            return rng.normal(leaf.coeffs.row(0).dot(xt), std::sqrt(leaf.dispersion));
        case LeafFamily::Categorical: {
            const Eigen::VectorXd etas = leaf.coeffs * xt;
            Eigen::VectorXd p = (etas.array() - etas.maxCoeff()).exp();
            return static_cast<double>(rng.categorical(p.data(), static_cast<int>(p.size())));
        }
    }
    return 0.0;
}

double leaf_mode(const GlmLeaf& leaf, const Eigen::VectorXd& x) {
    const Eigen::VectorXd xt = augmented(x);
    switch (leaf.family) {
        case LeafFamily::Bernoulli: {
            const double eta = leaf.coeffs.row(0).dot(xt);
            return eta > 0.0 ? 1.0 : 0.0;  // p=0.5 -> 0
        }
        case LeafFamily::Poisson: {
            const double mu = std::exp(clamp_eta(leaf.coeffs.row(0).dot(xt)));
            // floor(mu); at integer mu both mu and mu-1 are modes, pick mu-1
            const double f = std::floor(mu);
            return (f == mu && f > 0.0) ? f - 1.0 : f;
        }
        case LeafFamily::Gaussian:
            return leaf.coeffs.row(0).dot(xt);
        case LeafFamily::Categorical: {
            const Eigen::VectorXd etas = leaf.coeffs * xt;
            int best = 0;
            for (int c = 1; c < etas.size(); ++c)
                if (etas[c] > etas[best]) best = c;
            return static_cast<double>(best);
        }
    }
    return 0.0;
}

double leaf_mean(const GlmLeaf& leaf, const Eigen::VectorXd& x) {
    const Eigen::VectorXd xt = augmented(x);
    switch (leaf.family) {
        case LeafFamily::Bernoulli:
            return 1.0 / (1.0 + std::exp(-leaf.coeffs.row(0).dot(xt)));
        case LeafFamily::Poisson:
            return std::exp(clamp_eta(leaf.coeffs.row(0).dot(xt)));
        case LeafFamily::Gaussian:
            return leaf.coeffs.row(0).dot(xt);
        case LeafFamily::Categorical: {
            const Eigen::VectorXd etas = leaf.coeffs * xt;
            Eigen::VectorXd p = (etas.array() - etas.maxCoeff()).exp();
            p /= p.sum();
            double mean = 0.0;
            for (int c = 0; c < p.size(); ++c) mean += c * p[c];
            return mean;
        }
    }
    return 0.0;
}

int leaf_param_count(const GlmLeaf& leaf) {
    int n = static_cast<int>(leaf.coeffs.size());
    if (leaf.family == LeafFamily::Gaussian) ++n;
    return n;
}

Eigen::VectorXd leaf_grad(const GlmLeaf& leaf, double y, const Eigen::VectorXd& x) {
    check_support(leaf, y);
    const Eigen::VectorXd xt = augmented(x);
    switch (leaf.family) {
        case LeafFamily::Bernoulli: {
            const double p = 1.0 / (1.0 + std::exp(-leaf.coeffs.row(0).dot(xt)));
            return (y - p) * xt;
        }
        case LeafFamily::Poisson: {
            const double mu = std::exp(clamp_eta(leaf.coeffs.row(0).dot(xt)));
            return (y - mu) * xt;
        }
        case LeafFamily::Gaussian: {
            const double mu = leaf.coeffs.row(0).dot(xt);
            const double r = y - mu;
            Eigen::VectorXd g(xt.size() + 1);
            g.head(xt.size()) = (r / leaf.dispersion) * xt;
            g[xt.size()] = -0.5 + 0.5 * r * r / leaf.dispersion;  // w.r.t. log dispersion
            return g;
        }
        case LeafFamily::Categorical: {
            const Eigen::VectorXd etas = leaf.coeffs * xt;
            Eigen::VectorXd p = (etas.array() - etas.maxCoeff()).exp();
            p /= p.sum();
            const int cls = static_cast<int>(y);
            Eigen::VectorXd g(leaf.coeffs.size());
            const int cols = static_cast<int>(leaf.coeffs.cols());
            for (int c = 0; c < leaf.num_categories(); ++c) {
                const double d = (c == cls ? 1.0 : 0.0) - p[c];
                g.segment(c * cols, cols) = d * xt;
            }
            return g;
        }
    }
    return Eigen::VectorXd();
}

// -- IRWLS --------------------------------------------------------------------

namespace {

struct WorkingSet {
    Eigen::MatrixXd design;  // n x (d+1), intercept last
    Eigen::VectorXd y;
};

// Canonical row order: lexicographic on (y, x). Makes the fit independent of
// how the caller ordered the rows.
WorkingSet canonical_rows(const Eigen::VectorXd& y, const Eigen::MatrixXd& x) {
    const int n = static_cast<int>(y.size());
    const int d = static_cast<int>(x.cols());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (y[a] != y[b]) return y[a] < y[b];
        for (int j = 0; j < d; ++j)
            if (x(a, j) != x(b, j)) return x(a, j) < x(b, j);
        return false;
    });
    WorkingSet w;
    w.design.resize(n, d + 1);
    w.y.resize(n);
    for (int i = 0; i < n; ++i) {
        w.design.row(i).head(d) = x.row(order[i]);
        w.design(i, d) = 1.0;
        w.y[i] = y[order[i]];
    }
    return w;
}

double penalized_neg2_loglik(const GlmLeaf& leaf, const WorkingSet& w, double ridge) {
    double ll = 0.0;
    const int d = static_cast<int>(w.design.cols()) - 1;
    for (int i = 0; i < w.y.size(); ++i)
        ll += leaf_log_density(leaf, w.y[i], w.design.row(i).head(d).transpose());
    return -2.0 * (ll - 0.5 * ridge * leaf.coeffs.squaredNorm());
}

// One Fisher-scoring proposal for the univariate-parameter families.
Eigen::VectorXd irwls_step(LeafFamily family, const Eigen::VectorXd& beta, const WorkingSet& w,
                           double ridge) {
    const int n = static_cast<int>(w.y.size());
    const int p = static_cast<int>(w.design.cols());
    Eigen::VectorXd weights(n), z(n);
    for (int i = 0; i < n; ++i) {
        const double eta = clamp_eta(w.design.row(i).dot(beta));
        double mu, dmu;
        switch (family) {
            case LeafFamily::Bernoulli:
                mu = 1.0 / (1.0 + std::exp(-eta));
                dmu = std::max(mu * (1.0 - mu), 1e-10);
                break;
            case LeafFamily::Poisson:
                mu = std::exp(eta);
                dmu = std::max(mu, 1e-10);
                break;
            default:  // gaussian
                mu = eta;
                dmu = 1.0;
                break;
        }
        weights[i] = dmu;
        z[i] = eta + (w.y[i] - mu) / dmu;
    }
    Eigen::MatrixXd h = w.design.transpose() * weights.asDiagonal() * w.design;
    h.diagonal().array() += ridge;
    const Eigen::VectorXd rhs = w.design.transpose() * (weights.asDiagonal() * z);
    return h.ldlt().solve(rhs);
}

// Full-Hessian Fisher scoring for the categorical (softmax) leaf.
Eigen::MatrixXd softmax_step(const Eigen::MatrixXd& coeffs, const WorkingSet& w, double ridge) {
    const int n = static_cast<int>(w.y.size());
    const int p = static_cast<int>(w.design.cols());
    const int c = static_cast<int>(coeffs.rows());
    const int dim = c * p;
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(dim);
    for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd xt = w.design.row(i).transpose();
        Eigen::VectorXd etas = coeffs * xt;
        Eigen::VectorXd prob = (etas.array() - etas.maxCoeff()).exp();
        prob /= prob.sum();
        const int cls = static_cast<int>(w.y[i]);
        const Eigen::MatrixXd xxt = xt * xt.transpose();
        for (int a = 0; a < c; ++a) {
            grad.segment(a * p, p) += ((a == cls ? 1.0 : 0.0) - prob[a]) * xt;
            for (int b = 0; b < c; ++b) {
                const double wab = prob[a] * ((a == b ? 1.0 : 0.0) - prob[b]);
                hess.block(a * p, b * p, p, p) += wab * xxt;
            }
        }
    }
    Eigen::VectorXd flat(dim);
    for (int a = 0; a < c; ++a) flat.segment(a * p, p) = coeffs.row(a).transpose();
    grad -= ridge * flat;
    hess.diagonal().array() += ridge + 1e-10;
    const Eigen::VectorXd next = flat + hess.ldlt().solve(grad);
    Eigen::MatrixXd out(c, p);
    for (int a = 0; a < c; ++a) out.row(a) = next.segment(a * p, p).transpose();
    return out;
}

}  // namespace

GlmLeaf fit_irwls(LeafFamily family, const Eigen::VectorXd& y, const Eigen::MatrixXd& x,
                  const FitControl& ctrl, int num_categories) {
    if (y.size() < 1) throw ValidationError("fit_irwls: need at least one row");
    if (x.rows() != y.size()) throw ValidationError("fit_irwls: y/x row mismatch");
    if (ctrl.max_iters < 1 || ctrl.tol <= 0.0 || ctrl.ridge < 0.0)
        throw ValidationError("fit_irwls: bad FitControl");

    const WorkingSet w = canonical_rows(y, x);
    const int p = static_cast<int>(w.design.cols());

    GlmLeaf leaf;
    leaf.family = family;
    leaf.link = canonical_link(family);
    const int rows = family == LeafFamily::Categorical ? std::max(num_categories, 2) : 1;
    leaf.coeffs = Eigen::MatrixXd::Zero(rows, p);

    for (int i = 0; i < w.y.size(); ++i) check_support(leaf, w.y[i]);

    double dev = penalized_neg2_loglik(leaf, w, ctrl.ridge);
    for (int iter = 0; iter < ctrl.max_iters; ++iter) {
        const Eigen::MatrixXd proposal =
            family == LeafFamily::Categorical
                ? softmax_step(leaf.coeffs, w, ctrl.ridge)
                : Eigen::MatrixXd(irwls_step(family, leaf.coeffs.row(0).transpose(), w, ctrl.ridge)
                                      .transpose());
        // step-halving keeps the penalized deviance non-increasing
        const Eigen::MatrixXd base = leaf.coeffs;
        double step = 1.0;
        double new_dev = dev;
        Eigen::MatrixXd accepted = base;
        for (int half = 0; half < 30; ++half) {
            GlmLeaf trial = leaf;
            trial.coeffs = base + step * (proposal - base);
            const double trial_dev = penalized_neg2_loglik(trial, w, ctrl.ridge);
            if (std::isfinite(trial_dev) && trial_dev <= dev + 1e-12) {
                accepted = trial.coeffs;
                new_dev = trial_dev;
                break;
            }
            step *= 0.5;
        }
        leaf.coeffs = accepted;
        const double rel = std::abs(dev - new_dev) / (std::abs(new_dev) + 0.1);
        dev = new_dev;
        if (rel < ctrl.tol) break;
    }

    if (family == LeafFamily::Gaussian) {
        // mean squared residual; a single row falls straight to the floor
        double ss = 0.0;
        for (int i = 0; i < w.y.size(); ++i) {
            const double r = w.y[i] - w.design.row(i).dot(leaf.coeffs.row(0));
            ss += r * r;
        }
        leaf.dispersion = std::max(ss / static_cast<double>(w.y.size()), kDispersionFloor);
    }
    if (!leaf.coeffs.allFinite())
        throw NumericError("fit_irwls: non-finite coefficients after IRWLS");
    return leaf;
}

}  // namespace cspn
