#include "cspn/circuit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

namespace cspn {

namespace {

constexpr double kLogWeightFloor = -690.77552789821368;  // log(1e-300)

double log_sum_exp(const Eigen::VectorXd& v) {
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;  // all -inf stays -inf
    return m + std::log((v.array() - m).exp().sum());
}

bool scopes_equal(const std::vector<int>& a, const std::vector<int>& b) { return a == b; }

std::string scope_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << '{';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << '}';
    return os.str();
}

}  // namespace

Eigen::VectorXd gate_log_weights(const GatingFunction& gate, const Eigen::VectorXd& x) {
    if (const auto* c = std::get_if<GateConstant>(&gate)) {
        Eigen::VectorXd lw = c->weights;
        for (int k = 0; k < lw.size(); ++k) lw[k] = std::log(std::max(lw[k], 1e-300));
        return lw;
    }
    const auto& s = std::get<GateSoftmax>(gate);
    Eigen::VectorXd xt(x.size() + 1);
    xt.head(x.size()) = x;
    xt[x.size()] = 1.0;
    Eigen::VectorXd etas = s.coeffs * xt;
    const double lse = log_sum_exp(etas);
    Eigen::VectorXd lw = etas.array() - lse;
    for (int k = 0; k < lw.size(); ++k) lw[k] = std::max(lw[k], kLogWeightFloor);
    return lw;
}

int gate_child_count(const GatingFunction& gate) {
    if (const auto* c = std::get_if<GateConstant>(&gate))
        return static_cast<int>(c->weights.size());
    return static_cast<int>(std::get<GateSoftmax>(gate).coeffs.rows());
}

Evidence Evidence::observed(const Eigen::VectorXd& x, const Eigen::VectorXd& y_values) {
    Evidence ev;
    ev.x = x;
    ev.y.resize(y_values.size());
    for (int j = 0; j < y_values.size(); ++j) ev.y[j] = y_values[j];
    return ev;
}

Evidence Evidence::all_marginalized(const Eigen::VectorXd& x, int num_y) {
    Evidence ev;
    ev.x = x;
    ev.y.assign(num_y, std::nullopt);
    return ev;
}

int Evidence::num_marginalized() const {
    int n = 0;
    for (const auto& s : y)
        if (!s) ++n;
    return n;
}

std::string ValidationReport::to_string() const {
    std::ostringstream os;
    for (const auto& issue : issues)
        os << "node " << issue.node_id << " [" << issue.kind << "]: " << issue.message << '\n';
    return os.str();
}

Circuit::Circuit(std::vector<Node> nodes, int root, int num_y, int num_x)
    : nodes_(std::move(nodes)), root_(root), num_y_(num_y), num_x_(num_x) {
    for (int i = 0; i < node_count(); ++i) {
        if (nodes_[i].id != i)
            throw ValidationError("node table: entry " + std::to_string(i) + " has id " +
                                  std::to_string(nodes_[i].id));
        for (int c : nodes_[i].children)
            if (c < 0 || c >= node_count())
                throw ValidationError("node " + std::to_string(i) + ": child id " +
                                      std::to_string(c) + " out of range");
    }
    if (root_ < 0 || root_ >= node_count()) throw ValidationError("root id out of range");

    // Iterative DFS from the root: builds children-first order, detects cycles.
    std::vector<int> state(node_count(), 0);  // 0 unvisited, 1 on stack, 2 done
    std::vector<std::pair<int, size_t>> stack{{root_, 0}};
    state[root_] = 1;
    acyclic_ = true;
    while (!stack.empty()) {
        auto& [id, next] = stack.back();
        if (next < nodes_[id].children.size()) {
            const int child = nodes_[id].children[next++];
            if (state[child] == 1) {
                acyclic_ = false;
                break;
            }
            if (state[child] == 0) {
                state[child] = 1;
                stack.emplace_back(child, 0);
            }
        } else {
            state[id] = 2;
            eval_order_.push_back(id);
            stack.pop_back();
        }
    }
    if (!acyclic_) eval_order_.clear();
}

ValidationReport Circuit::validate() const {
    ValidationReport report;
    if (!acyclic_) {
        report.issues.push_back({root_, "acyclicity", "cycle reachable from root"});
        return report;
    }
    if (!scopes_equal(nodes_[root_].scope, [&] {
            std::vector<int> full(num_y_);
            for (int j = 0; j < num_y_; ++j) full[j] = j;
            return full;
        }()))
        report.issues.push_back(
            {root_, "scope", "root scope " + scope_str(nodes_[root_].scope) +
                                 " does not cover all " + std::to_string(num_y_) + " Y variables"});

    for (int id : eval_order_) {
        const Node& n = nodes_[id];
        if (n.scope.empty()) {
            report.issues.push_back({id, "scope", "empty scope"});
            continue;
        }
        if (!std::is_sorted(n.scope.begin(), n.scope.end()) ||
            std::adjacent_find(n.scope.begin(), n.scope.end()) != n.scope.end()) {
            report.issues.push_back({id, "scope", "scope is not a sorted set"});
            continue;
        }
        switch (n.kind) {
            case NodeKind::Leaf:
                if (n.scope.size() != 1)
                    report.issues.push_back({id, "scope", "leaf scope must be a single variable"});
                if (!n.leaf)
                    report.issues.push_back({id, "structure", "leaf node without distribution"});
                if (!n.children.empty())
                    report.issues.push_back({id, "structure", "leaf node with children"});
                break;
            case NodeKind::Product: {
                if (n.children.size() < 1)
                    report.issues.push_back({id, "structure", "product node without children"});
                std::vector<int> merged;
                bool disjoint = true;
                for (int c : n.children) {
                    for (int v : nodes_[c].scope) {
                        if (std::binary_search(merged.begin(), merged.end(), v)) disjoint = false;
                        merged.insert(std::upper_bound(merged.begin(), merged.end(), v), v);
                    }
                }
                if (!disjoint)
                    report.issues.push_back(
                        {id, "decomposability", "children scopes overlap at product node"});
                std::vector<int> dedup = merged;
                dedup.erase(std::unique(dedup.begin(), dedup.end()), dedup.end());
                if (!scopes_equal(dedup, n.scope))
                    report.issues.push_back(
                        {id, "scope", "node scope " + scope_str(n.scope) +
                                          " is not the union of child scopes " + scope_str(dedup)});
                break;
            }
            case NodeKind::Gating: {
                if (n.children.size() < 1)
                    report.issues.push_back({id, "structure", "gating node without children"});
                if (!n.gate) {
                    report.issues.push_back({id, "structure", "gating node without gate"});
                    break;
                }
                if (gate_child_count(*n.gate) != static_cast<int>(n.children.size()))
                    report.issues.push_back({id, "structure",
                                             "gate arity " +
                                                 std::to_string(gate_child_count(*n.gate)) +
                                                 " != child count " +
                                                 std::to_string(n.children.size())});
                for (int c : n.children)
                    if (!scopes_equal(nodes_[c].scope, n.scope)) {
                        report.issues.push_back(
                            {id, "completeness",
                             "child " + std::to_string(c) + " scope " + scope_str(nodes_[c].scope) +
                                 " differs from node scope " + scope_str(n.scope)});
                        break;
                    }
                if (const auto* c = std::get_if<GateConstant>(&*n.gate)) {
                    if ((c->weights.array() < 0.0).any() ||
                        std::abs(c->weights.sum() - 1.0) > 1e-12)
                        report.issues.push_back({id, "structure",
                                                 "constant gate weights must be nonnegative and "
                                                 "sum to 1"});
                }
                break;
            }
        }
    }
    return report;
}

void Circuit::ensure_evaluable() const {
    if (!acyclic_ || nodes_.empty())
        throw ValidationError("circuit is not evaluable (empty or cyclic)");
}

Eigen::VectorXd Circuit::node_values(const Evidence& ev, EvalStats* stats) const {
    Eigen::VectorXd values(node_count());
    for (int id : eval_order_) {
        const Node& n = nodes_[id];
        if (stats) ++stats->node_visits;
        double v = 0.0;
        switch (n.kind) {
            case NodeKind::Leaf: {
                const auto& slot = ev.y[n.scope[0]];
                if (!slot) {
                    v = 0.0;  // marginalized: integrates to one
                } else {
                    v = leaf_log_density(*n.leaf, *slot, ev.x);
                    if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
                        throw NumericError("node " + std::to_string(id) +
                                           ": non-finite leaf log-density");
                }
                break;
            }
            case NodeKind::Product: {
                for (int c : n.children) {
                    if (stats) ++stats->edge_visits;
                    v += values[c];
                }
                break;
            }
            case NodeKind::Gating: {
                const Eigen::VectorXd lw = gate_log_weights(*n.gate, ev.x);
                if (!lw.allFinite())
                    throw NumericError("node " + std::to_string(id) +
                                       ": non-finite gating weight");
                Eigen::VectorXd terms(lw.size());
                for (int k = 0; k < lw.size(); ++k) {
                    if (stats) ++stats->edge_visits;
                    terms[k] = lw[k] + values[n.children[k]];
                }
                v = log_sum_exp(terms);
                break;
            }
        }
        if (std::isnan(v))
            throw NumericError("node " + std::to_string(id) + ": NaN value during evaluation");
        values[id] = v;
    }
    return values;
}

double Circuit::log_density(const Evidence& ev, EvalStats* stats) const {
    ensure_evaluable();
    if (static_cast<int>(ev.y.size()) != num_y_ || ev.x.size() != num_x_)
        throw ValidationError("evidence shape does not match circuit");
    if (ev.num_marginalized() != 0)
        throw ValidationError("log_density requires all Y slots observed");
    return node_values(ev, stats)[root_];
}

double Circuit::log_marginal(const Evidence& ev, EvalStats* stats) const {
    ensure_evaluable();
    if (static_cast<int>(ev.y.size()) != num_y_ || ev.x.size() != num_x_)
        throw ValidationError("evidence shape does not match circuit");
    if (ev.num_marginalized() == 0)
        throw ValidationError("log_marginal requires at least one marginalized Y slot");
    return node_values(ev, stats)[root_];
}

Eigen::VectorXd Circuit::mpe(const Eigen::VectorXd& x) const {
    ensure_evaluable();
    if (x.size() != num_x_) throw ValidationError("evidence shape does not match circuit");

    // Upward max-product pass: gating nodes take the best weighted child.
    Eigen::VectorXd values(node_count());
    std::vector<int> best_child(node_count(), -1);
    for (int id : eval_order_) {
        const Node& n = nodes_[id];
        switch (n.kind) {
            case NodeKind::Leaf:
                values[id] = leaf_log_density(*n.leaf, leaf_mode(*n.leaf, x), x);
                break;
            case NodeKind::Product: {
                double v = 0.0;
                for (int c : n.children) v += values[c];
                values[id] = v;
                break;
            }
            case NodeKind::Gating: {
                const Eigen::VectorXd lw = gate_log_weights(*n.gate, x);
                if (!lw.allFinite())
                    throw NumericError("node " + std::to_string(id) +
                                       ": non-finite gating weight");
                double best = -std::numeric_limits<double>::infinity();
                int arg = 0;
                for (int k = 0; k < lw.size(); ++k) {
                    const double t = lw[k] + values[n.children[k]];
                    if (t > best) {  // strict: ties keep the lowest child index
                        best = t;
                        arg = k;
                    }
                }
                values[id] = best;
                best_child[id] = arg;
                break;
            }
        }
        if (std::isnan(values[id]))
            throw NumericError("node " + std::to_string(id) + ": NaN value during MPE");
    }

    // Downward decode.
    Eigen::VectorXd y = Eigen::VectorXd::Zero(num_y_);
    std::vector<int> stack{root_};
    while (!stack.empty()) {
        const int id = stack.back();
        stack.pop_back();
        const Node& n = nodes_[id];
        switch (n.kind) {
            case NodeKind::Leaf:
                y[n.scope[0]] = leaf_mode(*n.leaf, x);
                break;
            case NodeKind::Product:
                for (int c : n.children) stack.push_back(c);
                break;
            case NodeKind::Gating:
                stack.push_back(n.children[best_child[id]]);
                break;
        }
    }
    return y;
}

Eigen::VectorXd Circuit::sample(const Eigen::VectorXd& x, Rng& rng) const {
    ensure_evaluable();
    if (x.size() != num_x_) throw ValidationError("evidence shape does not match circuit");
    Eigen::VectorXd y = Eigen::VectorXd::Zero(num_y_);
    // Depth-first; children of a product are visited in declaration order so a
    // fixed seed reproduces the same draw sequence.
    std::vector<int> stack{root_};
    while (!stack.empty()) {
        const int id = stack.back();
        stack.pop_back();
        const Node& n = nodes_[id];
        switch (n.kind) {
            case NodeKind::Leaf:
                y[n.scope[0]] = leaf_sample(*n.leaf, x, rng);
                break;
            case NodeKind::Product:
                for (auto it = n.children.rbegin(); it != n.children.rend(); ++it)
                    stack.push_back(*it);
                break;
            case NodeKind::Gating: {
                const Eigen::VectorXd lw = gate_log_weights(*n.gate, x);
                if (!lw.allFinite())
                    throw NumericError("node " + std::to_string(id) +
                                       ": non-finite gating weight");
                Eigen::VectorXd w = lw.array().exp();
                stack.push_back(n.children[rng.categorical(w.data(), static_cast<int>(w.size()))]);
                break;
            }
        }
    }
    return y;
}

Eigen::VectorXd Circuit::predict_mean(const Eigen::VectorXd& x) const {
    ensure_evaluable();
    if (x.size() != num_x_) throw ValidationError("evidence shape does not match circuit");
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(num_y_);
    // Weighted top-down accumulation; exact because means mix linearly.
    std::vector<std::pair<int, double>> stack{{root_, 1.0}};
    while (!stack.empty()) {
        auto [id, w] = stack.back();
        stack.pop_back();
        const Node& n = nodes_[id];
        switch (n.kind) {
            case NodeKind::Leaf:
                mean[n.scope[0]] += w * leaf_mean(*n.leaf, x);
                break;
            case NodeKind::Product:
                for (int c : n.children) stack.emplace_back(c, w);
                break;
            case NodeKind::Gating: {
                const Eigen::VectorXd lw = gate_log_weights(*n.gate, x);
                for (int k = 0; k < lw.size(); ++k)
                    stack.emplace_back(n.children[k], w * std::exp(lw[k]));
                break;
            }
        }
    }
    return mean;
}

Circuit::Summary Circuit::summary() const {
    Summary s;
    std::vector<int> depth(node_count(), 0);
    std::map<std::string, int> fams;
    // eval_order_ is children-first; walk it backwards for parent-first depths.
    for (auto it = eval_order_.rbegin(); it != eval_order_.rend(); ++it) {
        const Node& n = nodes_[*it];
        s.depth = std::max(s.depth, depth[*it] + 1);
        for (int c : n.children) depth[c] = std::max(depth[c], depth[*it] + 1);
        s.edges += static_cast<int>(n.children.size());
        switch (n.kind) {
            case NodeKind::Leaf:
                ++s.leaves;
                ++fams[family_name(n.leaf->family)];
                break;
            case NodeKind::Product: ++s.products; break;
            case NodeKind::Gating: ++s.gatings; break;
        }
    }
    for (const auto& [k, v] : fams) s.leaf_families.emplace_back(k, v);
    return s;
}

std::string Circuit::Summary::to_string() const {
    std::ostringstream os;
    os << "nodes: " << (leaves + products + gatings) << " (" << leaves << " leaves, " << products
       << " products, " << gatings << " gatings)\n";
    os << "edges: " << edges << "\ndepth: " << depth << "\nleaf families:";
    for (const auto& [k, v] : leaf_families) os << ' ' << k << '=' << v;
    os << '\n';
    return os.str();
}

int CircuitBuilder::push(Node node) {
    std::lock_guard<std::mutex> lock(mutex_);
    node.id = static_cast<int>(nodes_.size());
    nodes_.push_back(std::move(node));
    return nodes_.back().id;
}

int CircuitBuilder::add_leaf(std::vector<int> scope, GlmLeaf leaf) {
    Node n;
    n.kind = NodeKind::Leaf;
    n.scope = std::move(scope);
    n.leaf = std::move(leaf);
    return push(std::move(n));
}

int CircuitBuilder::add_product(std::vector<int> scope, std::vector<int> children) {
    Node n;
    n.kind = NodeKind::Product;
    n.scope = std::move(scope);
    n.children = std::move(children);
    return push(std::move(n));
}

int CircuitBuilder::add_gating(std::vector<int> scope, std::vector<int> children,
                               GatingFunction gate) {
    Node n;
    n.kind = NodeKind::Gating;
    n.scope = std::move(scope);
    n.children = std::move(children);
    n.gate = std::move(gate);
    return push(std::move(n));
}

Circuit CircuitBuilder::finish(int root_id) {
    std::lock_guard<std::mutex> lock(mutex_);
    return Circuit(nodes_, root_id, num_y_, num_x_);
}

}  // namespace cspn
