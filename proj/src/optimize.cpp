#include "cspn/optimize.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "cspn/rng.hpp"

namespace cspn {

namespace {

constexpr double kLogDispersionFloor = -9.210340371976182;  // log(1e-4)

double log_sum_exp(const Eigen::VectorXd& v) {
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((v.array() - m).exp().sum());
}

}  // namespace

ParamLayout build_layout(const Circuit& circuit) {
    ParamLayout layout;
    for (int id = 0; id < circuit.node_count(); ++id) {
        const Node& n = circuit.node(id);
        if (n.kind == NodeKind::Leaf) {
            const int count = leaf_param_count(*n.leaf);
            const bool gaussian = n.leaf->family == LeafFamily::Gaussian;
            const int coeff_count = gaussian ? count - 1 : count;
            layout.slices.push_back({id, ParamRole::LeafCoeffs, layout.total, coeff_count});
            layout.total += coeff_count;
            if (gaussian) {
                layout.slices.push_back({id, ParamRole::LeafLogDispersion, layout.total, 1});
                layout.total += 1;
            }
        } else if (n.kind == NodeKind::Gating) {
            if (std::holds_alternative<GateConstant>(*n.gate)) {
                const int k = gate_child_count(*n.gate);
                layout.slices.push_back({id, ParamRole::GateLogits, layout.total, k});
                layout.total += k;
            } else {
                const auto& s = std::get<GateSoftmax>(*n.gate);
                const int count = static_cast<int>(s.coeffs.size());
                layout.slices.push_back({id, ParamRole::GateCoeffs, layout.total, count});
                layout.total += count;
            }
        }
    }
    return layout;
}

Eigen::VectorXd extract_params(const Circuit& circuit, const ParamLayout& layout) {
    Eigen::VectorXd params(layout.total);
    for (const auto& slice : layout.slices) {
        const Node& n = circuit.node(slice.node_id);
        switch (slice.role) {
            case ParamRole::LeafCoeffs: {
                const Eigen::MatrixXd& c = n.leaf->coeffs;
                int k = slice.offset;
                for (int r = 0; r < c.rows(); ++r)
                    for (int col = 0; col < c.cols(); ++col) params[k++] = c(r, col);
                break;
            }
            case ParamRole::LeafLogDispersion:
                params[slice.offset] = std::log(n.leaf->dispersion);
                break;
            case ParamRole::GateLogits: {
                const auto& w = std::get<GateConstant>(*n.gate).weights;
                for (int k = 0; k < w.size(); ++k)
                    params[slice.offset + k] = std::log(std::max(w[k], 1e-300));
                break;
            }
            case ParamRole::GateCoeffs: {
                const Eigen::MatrixXd& c = std::get<GateSoftmax>(*n.gate).coeffs;
                int k = slice.offset;
                for (int r = 0; r < c.rows(); ++r)
                    for (int col = 0; col < c.cols(); ++col) params[k++] = c(r, col);
                break;
            }
        }
    }
    return params;
}

Circuit apply_params(const Circuit& circuit, const ParamLayout& layout,
                     const Eigen::VectorXd& params) {
    if (params.size() != layout.total)
        throw ValidationError("apply_params: parameter vector size mismatch");
    std::vector<Node> nodes = circuit.nodes();
    for (const auto& slice : layout.slices) {
        Node& n = nodes[slice.node_id];
        switch (slice.role) {
            case ParamRole::LeafCoeffs: {
                Eigen::MatrixXd& c = n.leaf->coeffs;
                int k = slice.offset;
                for (int r = 0; r < c.rows(); ++r)
                    for (int col = 0; col < c.cols(); ++col) c(r, col) = params[k++];
                break;
            }
            case ParamRole::LeafLogDispersion:
                n.leaf->dispersion =
                    std::exp(std::max(params[slice.offset], kLogDispersionFloor));
                break;
            case ParamRole::GateLogits: {
                auto& w = std::get<GateConstant>(*n.gate).weights;
                Eigen::VectorXd logits = params.segment(slice.offset, slice.size);
                const double lse = log_sum_exp(logits);
                for (int k = 0; k < w.size(); ++k) w[k] = std::exp(logits[k] - lse);
                break;
            }
            case ParamRole::GateCoeffs: {
                Eigen::MatrixXd& c = std::get<GateSoftmax>(*n.gate).coeffs;
                int k = slice.offset;
                for (int r = 0; r < c.rows(); ++r)
                    for (int col = 0; col < c.cols(); ++col) c(r, col) = params[k++];
                break;
            }
        }
    }
    return Circuit(std::move(nodes), circuit.root(), circuit.num_y(), circuit.num_x());
}

namespace {

// One sample's contribution: forward log-values, then reverse-mode pass
// accumulating d logP / d params into grad.
double accumulate_sample(const Circuit& circuit, const ParamLayout& layout,
                         const std::vector<const ParamSlice*>& slot_of_node,
                         const Eigen::VectorXd& y, const Eigen::VectorXd& x,
                         Eigen::VectorXd& grad) {
    const auto& order = circuit.evaluation_order();
    Eigen::VectorXd values(circuit.node_count());
    std::vector<Eigen::VectorXd> gate_logw(circuit.node_count());
    for (int id : order) {
        const Node& n = circuit.node(id);
        switch (n.kind) {
            case NodeKind::Leaf:
                values[id] = leaf_log_density(*n.leaf, y[n.scope[0]], x);
                break;
            case NodeKind::Product: {
                double v = 0.0;
                for (int c : n.children) v += values[c];
                values[id] = v;
                break;
            }
            case NodeKind::Gating: {
                gate_logw[id] = gate_log_weights(*n.gate, x);
                Eigen::VectorXd terms = gate_logw[id];
                for (int k = 0; k < terms.size(); ++k) terms[k] += values[n.children[k]];
                values[id] = log_sum_exp(terms);
                break;
            }
        }
        if (std::isnan(values[id]))
            throw NumericError("node " + std::to_string(id) + ": NaN during gradient forward pass");
    }

    // adjoint[i] = d logP(root) / d values[i]
    Eigen::VectorXd adjoint = Eigen::VectorXd::Zero(circuit.node_count());
    adjoint[circuit.root()] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const int id = *it;
        const double up = adjoint[id];
        if (up == 0.0) continue;
        const Node& n = circuit.node(id);
        switch (n.kind) {
            case NodeKind::Leaf: {
                const ParamSlice* slice = slot_of_node[id];
                const Eigen::VectorXd g = leaf_grad(*n.leaf, y[n.scope[0]], x);
                grad.segment(slice->offset, g.size()) += up * g;
                break;
            }
            case NodeKind::Product:
                for (int c : n.children) adjoint[c] += up;
                break;
            case NodeKind::Gating: {
                // posterior responsibilities of the children at this sample
                const Eigen::VectorXd& lw = gate_logw[id];
                Eigen::VectorXd post(lw.size());
                for (int k = 0; k < lw.size(); ++k)
                    post[k] = std::exp(lw[k] + values[n.children[k]] - values[id]);
                for (int k = 0; k < lw.size(); ++k) adjoint[n.children[k]] += up * post[k];
                // logits gradient: responsibility minus prior weight
                const ParamSlice* slice = slot_of_node[id];
                if (slice->role == ParamRole::GateLogits) {
                    for (int k = 0; k < lw.size(); ++k)
                        grad[slice->offset + k] += up * (post[k] - std::exp(lw[k]));
                } else {
                    Eigen::VectorXd xt(x.size() + 1);
                    xt.head(x.size()) = x;
                    xt[x.size()] = 1.0;
                    const int p = static_cast<int>(xt.size());
                    for (int k = 0; k < lw.size(); ++k) {
                        const double d = up * (post[k] - std::exp(lw[k]));
                        grad.segment(slice->offset + k * p, p) += d * xt;
                    }
                }
                break;
            }
        }
    }
    return values[circuit.root()];
}

std::vector<const ParamSlice*> index_slices(const Circuit& circuit, const ParamLayout& layout) {
    // first slice per node (leaf coeff block or gate block); the gaussian
    // log-dispersion slice directly follows its coefficient slice
    std::vector<const ParamSlice*> slot(circuit.node_count(), nullptr);
    for (const auto& slice : layout.slices)
        if (!slot[slice.node_id]) slot[slice.node_id] = &slice;
    return slot;
}

}  // namespace

CllGrad cll_and_grad(const Circuit& circuit, const ParamLayout& layout, const Eigen::MatrixXd& y,
                     const Eigen::MatrixXd& x) {
    if (y.rows() != x.rows()) throw ValidationError("cll_and_grad: y/x row mismatch");
    if (y.rows() == 0) throw ValidationError("cll_and_grad: empty batch");
    const auto slot = index_slices(circuit, layout);
    CllGrad out;
    out.grad = Eigen::VectorXd::Zero(layout.total);
    for (int i = 0; i < y.rows(); ++i) {
        out.cll += accumulate_sample(circuit, layout, slot, y.row(i).transpose(),
                                     x.row(i).transpose(), out.grad);
    }
    const double inv = 1.0 / static_cast<double>(y.rows());
    out.cll *= inv;
    out.grad *= inv;
    if (!out.grad.allFinite()) {
        for (const auto& slice : layout.slices)
            for (int k = 0; k < slice.size; ++k)
                if (!std::isfinite(out.grad[slice.offset + k]))
                    throw NumericError("node " + std::to_string(slice.node_id) +
                                       ": non-finite gradient entry");
    }
    return out;
}

namespace {

double mean_cll(const Circuit& circuit, const Eigen::MatrixXd& y, const Eigen::MatrixXd& x) {
    double total = 0.0;
    for (int i = 0; i < y.rows(); ++i)
        total +=
            circuit.log_density(Evidence::observed(x.row(i).transpose(), y.row(i).transpose()));
    return total / static_cast<double>(y.rows());
}

}  // namespace

TrainResult train(const Circuit& circuit, const Eigen::MatrixXd& y_train,
                  const Eigen::MatrixXd& x_train, const Eigen::MatrixXd& y_valid,
                  const Eigen::MatrixXd& x_valid, const OptControl& ctrl) {
    if (ctrl.step <= 0.0 || ctrl.batch < 1)
        throw ValidationError("train: step size must be positive and batch >= 1");
    const ParamLayout layout = build_layout(circuit);
    Eigen::VectorXd params = extract_params(circuit, layout);
    Eigen::VectorXd m = Eigen::VectorXd::Zero(layout.total);
    Eigen::VectorXd v = Eigen::VectorXd::Zero(layout.total);

    TrainResult result;
    result.initial_valid_cll = mean_cll(circuit, y_valid, x_valid);
    result.best_valid_cll = result.initial_valid_cll;
    result.best_epoch = 0;
    Eigen::VectorXd best_params = params;

    const double initial_train_cll = mean_cll(circuit, y_train, x_train);
    const int n = static_cast<int>(y_train.rows());
    Rng shuffle_rng(ctrl.seed);
    Circuit current = circuit;
    int stale = 0;
    long step_count = 0;

    for (int epoch = 1; epoch <= ctrl.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto perm = shuffle_rng.permutation(n);
        double grad_norm = 0.0;
        for (int start = 0; start < n; start += ctrl.batch) {
            const int count = std::min(ctrl.batch, n - start);
            Eigen::MatrixXd yb(count, y_train.cols());
            Eigen::MatrixXd xb(count, x_train.cols());
            for (int i = 0; i < count; ++i) {
                yb.row(i) = y_train.row(perm[start + i]);
                xb.row(i) = x_train.row(perm[start + i]);
            }
            const CllGrad g = cll_and_grad(current, layout, yb, xb);
            ++step_count;
            const double bc1 = 1.0 - std::pow(ctrl.beta1, static_cast<double>(step_count));
            const double bc2 = 1.0 - std::pow(ctrl.beta2, static_cast<double>(step_count));
            for (int k = 0; k < layout.total; ++k) {
                m[k] = ctrl.beta1 * m[k] + (1.0 - ctrl.beta1) * g.grad[k];
                v[k] = ctrl.beta2 * v[k] + (1.0 - ctrl.beta2) * g.grad[k] * g.grad[k];
                params[k] += ctrl.step * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + ctrl.epsilon);
            }
            // projection keeps gaussian dispersions above the shared floor
            for (const auto& slice : layout.slices)
                if (slice.role == ParamRole::LeafLogDispersion)
                    params[slice.offset] = std::max(params[slice.offset], kLogDispersionFloor);
            grad_norm = g.grad.norm();
            current = apply_params(current, layout, params);
        }
        const double train_cll = mean_cll(current, y_train, x_train);
        const double valid_cll = mean_cll(current, y_valid, x_valid);
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.log.push_back({epoch, train_cll, valid_cll, grad_norm, seconds});

        if (train_cll < initial_train_cll - 10.0)
            throw NumericError("train: diverged, train CLL fell from " +
                               std::to_string(initial_train_cll) + " to " +
                               std::to_string(train_cll) + " at epoch " + std::to_string(epoch));

        if (valid_cll > result.best_valid_cll) {
            result.best_valid_cll = valid_cll;
            result.best_epoch = epoch;
            best_params = params;
            stale = 0;
        } else if (++stale >= ctrl.patience) {
            break;
        }
    }

    result.model = apply_params(circuit, layout, best_params);
    return result;
}

void write_training_log(const std::vector<EpochLog>& log, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write training log: " + path);
    out << "epoch,train_cll,valid_cll,grad_norm,seconds\n";
    out.precision(17);
    for (const auto& e : log)
        out << e.epoch << ',' << e.train_cll << ',' << e.valid_cll << ',' << e.grad_norm << ','
            << e.seconds << '\n';
}

}  // namespace cspn
