#include "cspn/learn.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

namespace cspn {

namespace {

Eigen::MatrixXd standardize(const Eigen::MatrixXd& x) {
    Eigen::MatrixXd out = x;
    for (int c = 0; c < out.cols(); ++c) {
        const double mean = out.col(c).mean();
        out.col(c).array() -= mean;
        const double sd = std::sqrt(out.col(c).squaredNorm() / std::max<long>(1, out.rows()));
        if (sd > 0) out.col(c) /= sd;
    }
    return out;
}

ClusterAssignment compact_labels(std::vector<int> labels, int k) {
    std::vector<int> count(k, 0);
    for (int l : labels) ++count[l];
    std::vector<int> remap(k, -1);
    int next = 0;
    for (int c = 0; c < k; ++c)
        if (count[c] > 0) remap[c] = next++;
    for (int& l : labels) l = remap[l];
    return {std::move(labels), next};
}

ClusterAssignment kmeans(const Eigen::MatrixXd& x, int k, std::uint64_t seed) {
    const int n = static_cast<int>(x.rows());
    Rng rng(seed);
    const Eigen::MatrixXd z = standardize(x);

    // farthest-first seeding
    std::vector<int> center_rows{static_cast<int>(rng.uniform_below(n))};
    Eigen::VectorXd nearest = (z.rowwise() - z.row(center_rows[0])).rowwise().squaredNorm();
    while (static_cast<int>(center_rows.size()) < k) {
        int far = 0;
        for (int i = 1; i < n; ++i)
            if (nearest[i] > nearest[far]) far = i;
        if (nearest[far] <= 0.0) break;  // fewer distinct rows than k
        center_rows.push_back(far);
        nearest = nearest.cwiseMin(
            (z.rowwise() - z.row(far)).rowwise().squaredNorm());
    }
    const int kk = static_cast<int>(center_rows.size());
    Eigen::MatrixXd centers(kk, z.cols());
    for (int c = 0; c < kk; ++c) centers.row(c) = z.row(center_rows[c]);

    std::vector<int> labels(n, 0);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double best_d = (z.row(i) - centers.row(0)).squaredNorm();
            for (int c = 1; c < kk; ++c) {
                const double d = (z.row(i) - centers.row(c)).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (labels[i] != best) {
                labels[i] = best;
                changed = true;
            }
        }
        if (!changed && iter > 0) break;
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(kk, z.cols());
        std::vector<int> counts(kk, 0);
        for (int i = 0; i < n; ++i) {
            sums.row(labels[i]) += z.row(i);
            ++counts[labels[i]];
        }
        for (int c = 0; c < kk; ++c)
            if (counts[c] > 0) centers.row(c) = sums.row(c) / counts[c];
    }
    return compact_labels(std::move(labels), kk);
}

// Random hyperplane through the median projection, as in random projection trees.
ClusterAssignment random_split(const Eigen::MatrixXd& x, std::uint64_t seed) {
    const int n = static_cast<int>(x.rows());
    Rng rng(seed);
    const Eigen::MatrixXd z = standardize(x);
    Eigen::VectorXd dir(z.cols());
    for (int j = 0; j < dir.size(); ++j) dir[j] = rng.normal();
    if (dir.norm() > 0) dir /= dir.norm();
    Eigen::VectorXd proj = z * dir;
    std::vector<double> sorted(proj.data(), proj.data() + n);
    std::nth_element(sorted.begin(), sorted.begin() + n / 2, sorted.end());
    const double median = sorted[n / 2];
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) labels[i] = proj[i] > median ? 1 : 0;
    return compact_labels(std::move(labels), 2);
}

}  // namespace

void LearnParams::check() const {
    if (clusters < 2) throw ValidationError("LearnParams: clusters must be >= 2");
    if (min_instances < 2 * clusters)
        throw ValidationError("LearnParams: min_instances must be >= 2*clusters");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("LearnParams: alpha must be in (0,1)");
    if (min_fraction < 0.0 || min_fraction >= 1.0)
        throw ValidationError("LearnParams: min_fraction must be in [0,1)");
}

ClusterAssignment split_instances(const Eigen::MatrixXd& x, int k, ClusterMethod method,
                                  std::uint64_t seed) {
    if (x.rows() < k) throw ValidationError("split_instances: fewer rows than clusters");
    if (x.cols() == 0) {
        // no features to cluster on; everything is one cluster
        return {std::vector<int>(x.rows(), 0), 1};
    }
    return method == ClusterMethod::KMeans ? kmeans(x, k, seed) : random_split(x, seed);
}

// -- gating fit ----------------------------------------------------------------

namespace {

struct GatingObjective {
    const Eigen::MatrixXd& design;  // n x (d+1)
    const std::vector<int>& z;
    int k;
    double ridge;

    // negative penalized log-likelihood and its gradient, both over the
    // flattened (row-major) k x (d+1) coefficient matrix
    double eval(const Eigen::VectorXd& flat, Eigen::VectorXd& grad) const {
        const int p = static_cast<int>(design.cols());
        Eigen::MatrixXd w(k, p);
        for (int c = 0; c < k; ++c) w.row(c) = flat.segment(c * p, p).transpose();
        double nll = 0.5 * ridge * flat.squaredNorm();
        Eigen::MatrixXd gmat = ridge * w;
        for (int i = 0; i < design.rows(); ++i) {
            const Eigen::VectorXd xt = design.row(i).transpose();
            Eigen::VectorXd etas = w * xt;
            const double m = etas.maxCoeff();
            const double lse = m + std::log((etas.array() - m).exp().sum());
            nll -= etas[z[i]] - lse;
            const Eigen::VectorXd prob = (etas.array() - lse).exp();
            for (int c = 0; c < k; ++c)
                gmat.row(c) += ((prob[c] - (c == z[i] ? 1.0 : 0.0)) * xt).transpose();
        }
        grad.resize(k * p);
        for (int c = 0; c < k; ++c) grad.segment(c * p, p) = gmat.row(c).transpose();
        return nll;
    }
};

// Plain two-loop L-BFGS with Armijo backtracking; enough for the smooth,
// strongly convex gating objective.
Eigen::VectorXd lbfgs_minimize(const GatingObjective& obj, Eigen::VectorXd x0, double grad_tol,
                               int max_iters) {
    const int memory = 8;
    std::deque<Eigen::VectorXd> s_hist, y_hist;
    Eigen::VectorXd grad, x = std::move(x0);
    double fx = obj.eval(x, grad);
    for (int iter = 0; iter < max_iters; ++iter) {
        if (grad.norm() <= grad_tol) break;
        Eigen::VectorXd q = -grad;
        std::vector<double> alpha(s_hist.size());
        for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
            const double rho = 1.0 / y_hist[i].dot(s_hist[i]);
            alpha[i] = rho * s_hist[i].dot(q);
            q -= alpha[i] * y_hist[i];
        }
        if (!s_hist.empty()) {
            const double gamma =
                s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
            q *= gamma;
        }
        for (size_t i = 0; i < s_hist.size(); ++i) {
            const double rho = 1.0 / y_hist[i].dot(s_hist[i]);
            const double beta = rho * y_hist[i].dot(q);
            q += (alpha[i] - beta) * s_hist[i];
        }
        double step = 1.0;
        const double slope = grad.dot(q);
        if (slope >= 0.0) {  // fall back to steepest descent
            q = -grad;
            step = 1.0 / std::max(1.0, grad.norm());
        }
        Eigen::VectorXd x_new, g_new;
        double f_new = fx;
        for (int half = 0; half < 40; ++half) {
            x_new = x + step * q;
            f_new = obj.eval(x_new, g_new);
            if (std::isfinite(f_new) && f_new <= fx + 1e-4 * step * grad.dot(q)) break;
            step *= 0.5;
        }
        const Eigen::VectorXd s = x_new - x;
        const Eigen::VectorXd yv = g_new - grad;
        if (yv.dot(s) > 1e-12) {
            s_hist.push_back(s);
            y_hist.push_back(yv);
            if (static_cast<int>(s_hist.size()) > memory) {
                s_hist.pop_front();
                y_hist.pop_front();
            }
        }
        x = std::move(x_new);
        grad = std::move(g_new);
        fx = f_new;
    }
    return x;
}

}  // namespace

GateSoftmax fit_gating(const Eigen::MatrixXd& x, const std::vector<int>& z, int k, double ridge) {
    if (k < 2) throw ValidationError("fit_gating: need at least 2 clusters");
    if (static_cast<int>(z.size()) != x.rows()) throw ValidationError("fit_gating: z/x mismatch");
    const int n = static_cast<int>(x.rows());
    const int p = static_cast<int>(x.cols()) + 1;
    Eigen::MatrixXd design(n, p);
    design.leftCols(p - 1) = x;
    design.col(p - 1).setOnes();
    GatingObjective obj{design, z, k, ridge};
    const Eigen::VectorXd flat =
        lbfgs_minimize(obj, Eigen::VectorXd::Zero(k * p), 1e-6, 500);
    GateSoftmax gate;
    gate.coeffs.resize(k, p);
    for (int c = 0; c < k; ++c) gate.coeffs.row(c) = flat.segment(c * p, p).transpose();
    return gate;
}

// -- LearnCSPN ------------------------------------------------------------------

namespace {

LeafFamily family_for(const ColumnSpec& spec) {
    switch (spec.type) {
        case ColumnType::Binary: return LeafFamily::Bernoulli;
        case ColumnType::Count: return LeafFamily::Poisson;
        case ColumnType::Continuous: return LeafFamily::Gaussian;
        case ColumnType::Categorical: return LeafFamily::Categorical;
    }
    return LeafFamily::Gaussian;
}

struct LearnContext {
    const Dataset& data;
    const LearnParams& params;
    CircuitBuilder& builder;
    LearnStats& stats;
    int total_rows;
    std::uint64_t split_counter = 0;
};

int fit_leaf_node(LearnContext& ctx, const std::vector<int>& rows, int y_var) {
    const auto& spec = ctx.data.y_spec(y_var);
    Eigen::VectorXd y(rows.size());
    Eigen::MatrixXd x(rows.size(), ctx.data.num_x());
    for (size_t i = 0; i < rows.size(); ++i) {
        y[static_cast<int>(i)] = ctx.data.y_value(rows[i], y_var);
        x.row(static_cast<int>(i)) = ctx.data.x_row(rows[i]).transpose();
    }
    GlmLeaf leaf;
    try {
        leaf = fit_irwls(family_for(spec), y, x, ctx.params.leaf_fit,
                         spec.type == ColumnType::Categorical ? spec.arity : 0);
    } catch (const Error& e) {
        throw NumericError("leaf fit for variable \"" + spec.name + "\" on " +
                           std::to_string(rows.size()) + " rows: " + e.what());
    }
    return ctx.builder.add_leaf({y_var}, std::move(leaf));
}

int learn_node(LearnContext& ctx, std::vector<int> rows, std::vector<int> y_view, int depth);

int factorize_all(LearnContext& ctx, const std::vector<int>& rows,
                  const std::vector<int>& y_view, int depth) {
    std::vector<int> children;
    children.reserve(y_view.size());
    for (int y : y_view) children.push_back(learn_node(ctx, rows, {y}, depth + 1));
    return ctx.builder.add_product(y_view, std::move(children));
}

int learn_node(LearnContext& ctx, std::vector<int> rows, std::vector<int> y_view, int depth) {
    const LearnParams& p = ctx.params;
    if (y_view.size() == 1) return fit_leaf_node(ctx, rows, y_view[0]);

    const bool too_few = static_cast<int>(rows.size()) < p.min_instances;
    const bool below_fraction =
        p.min_fraction > 0.0 &&
        static_cast<double>(rows.size()) <= p.min_fraction * ctx.total_rows;
    const bool too_deep = p.max_depth > 0 && depth >= p.max_depth;
    if (too_few || below_fraction || too_deep) return factorize_all(ctx, rows, y_view, depth);

    int pairs = 0;
    const auto components = split_labels_view(ctx.data, rows, y_view, p.alpha,
                                              Rng::stream(p.seed, 11, ctx.split_counter++)
                                                  .next_u64(),
                                              p.citest, &pairs, p.threads);
    ctx.stats.ci_pairs_tested += pairs;
    ctx.stats.split_labels_calls += 1;
    ctx.stats.pairs_per_call.push_back(pairs);

    if (components.size() > 1) {
        std::vector<int> children;
        for (const auto& comp : components) {
            std::vector<int> sub;
            for (int local : comp) sub.push_back(y_view[local]);
            children.push_back(learn_node(ctx, rows, std::move(sub), depth + 1));
        }
        return ctx.builder.add_product(y_view, std::move(children));
    }

    // no label split: cluster instances and gate on X
    Eigen::MatrixXd x(rows.size(), ctx.data.num_x());
    for (size_t i = 0; i < rows.size(); ++i)
        x.row(static_cast<int>(i)) = ctx.data.x_row(rows[i]).transpose();
    const std::uint64_t cluster_seed = Rng::stream(p.seed, 13, ctx.split_counter++).next_u64();
    ClusterAssignment assign = split_instances(x, p.clusters, p.cluster_method, cluster_seed);

    if (assign.k < 2) {
        // no progress; force a random balanced split so the recursion shrinks
        ++ctx.stats.forced_splits;
        Rng rng(cluster_seed ^ 0x5DEECE66DULL);
        const auto perm = rng.permutation(static_cast<int>(rows.size()));
        assign.labels.assign(rows.size(), 0);
        for (size_t i = perm.size() / 2; i < perm.size(); ++i) assign.labels[perm[i]] = 1;
        assign.k = 2;
    }

    std::vector<std::vector<int>> cluster_rows(assign.k);
    for (size_t i = 0; i < rows.size(); ++i)
        cluster_rows[assign.labels[i]].push_back(rows[i]);

    GateSoftmax gate = fit_gating(x, assign.labels, assign.k);
    std::vector<int> children;
    for (auto& cr : cluster_rows)
        children.push_back(learn_node(ctx, std::move(cr), y_view, depth + 1));
    return ctx.builder.add_gating(y_view, std::move(children), std::move(gate));
}

}  // namespace

Circuit learn_cspn(const Dataset& data, const LearnParams& params, LearnStats* stats) {
    params.check();
    if (data.rows() == 0) throw ValidationError("learn_cspn: empty dataset");
    if (data.num_y() == 0) throw ValidationError("learn_cspn: no Y variables declared");

    CircuitBuilder builder(data.num_y(), data.num_x());
    LearnStats local;
    LearnStats& st = stats ? *stats : local;
    LearnContext ctx{data, params, builder, st, data.rows()};

    std::vector<int> rows(data.rows());
    std::iota(rows.begin(), rows.end(), 0);
    std::vector<int> y_view(data.num_y());
    std::iota(y_view.begin(), y_view.end(), 0);

    const int root = learn_node(ctx, std::move(rows), std::move(y_view), 0);
    Circuit circuit = builder.finish(root);
    const auto report = circuit.validate();
    if (!report.ok())
        throw ValidationError("learn_cspn produced an invalid circuit:\n" + report.to_string());
    return circuit;
}

}  // namespace cspn
