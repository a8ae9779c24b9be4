#pragma once

#include <Eigen/Dense>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cspn/errors.hpp"
#include "cspn/glm.hpp"
#include "cspn/rng.hpp"

namespace cspn {

enum class NodeKind { Leaf, Product, Gating };

/// Standard SPN sum node: fixed mixture weights (nonnegative, sum to 1).
struct GateConstant {
    Eigen::VectorXd weights;
};

/// Input-dependent mixture: g = softmax(coeffs . [x;1]), coeffs is K x (|X|+1).
struct GateSoftmax {
    Eigen::MatrixXd coeffs;
};

using GatingFunction = std::variant<GateConstant, GateSoftmax>;

/// Mixing weights at x, in log space, clamped to >= log(1e-300).
Eigen::VectorXd gate_log_weights(const GatingFunction& gate, const Eigen::VectorXd& x);
int gate_child_count(const GatingFunction& gate);

struct Node {
    int id = -1;
    NodeKind kind = NodeKind::Leaf;
    std::vector<int> scope;      // sorted Y indices
    std::vector<int> children;   // node ids; empty for leaves
    std::optional<GatingFunction> gate;
    std::optional<GlmLeaf> leaf;
};

/** Conditioning query: x is always fully observed, each y slot is either an
 *  observed value or marginalized out.
 */
struct Evidence {
    Eigen::VectorXd x;
    std::vector<std::optional<double>> y;

    static Evidence observed(const Eigen::VectorXd& x, const Eigen::VectorXd& y_values);
    static Evidence all_marginalized(const Eigen::VectorXd& x, int num_y);
    int num_marginalized() const;
};

struct ValidationIssue {
    int node_id;
    std::string kind;  // completeness | decomposability | acyclicity | scope | structure
    std::string message;
};

struct ValidationReport {
    std::vector<ValidationIssue> issues;
    bool ok() const { return issues.empty(); }
    std::string to_string() const;
};

struct EvalStats {
    std::size_t node_visits = 0;
    std::size_t edge_visits = 0;
};

/** Rooted DAG of leaf / product / gating nodes encoding P(Y | X).
 *
 * Nodes live in an id-indexed table; inference walks a reverse topological
 * order precomputed at construction. A constructed circuit is immutable and
 * all queries are safe to run concurrently (sample takes a caller-owned Rng).
 */
class Circuit {
public:
    Circuit() = default;
    Circuit(std::vector<Node> nodes, int root, int num_y, int num_x);

    int num_y() const { return num_y_; }
    int num_x() const { return num_x_; }
    int root() const { return root_; }
    int node_count() const { return static_cast<int>(nodes_.size()); }
    const Node& node(int id) const { return nodes_[id]; }
    const std::vector<Node>& nodes() const { return nodes_; }
    const std::vector<int>& evaluation_order() const { return eval_order_; }

    /// Every completeness/decomposability/acyclicity/scope violation, by node id.
    ValidationReport validate() const;

    /// log P(y | x); requires every y slot observed.
    double log_density(const Evidence& ev, EvalStats* stats = nullptr) const;

    /// Same traversal with marginalized leaves contributing log 1 = 0.
    double log_marginal(const Evidence& ev, EvalStats* stats = nullptr) const;

    /// Max-product decode; ties broken toward the lowest child index / y value.
    Eigen::VectorXd mpe(const Eigen::VectorXd& x) const;

    /// Ancestral sample of all Y variables.
    Eigen::VectorXd sample(const Eigen::VectorXd& x, Rng& rng) const;

    /// Exact mixture mean E[Y | x] per Y variable.
    Eigen::VectorXd predict_mean(const Eigen::VectorXd& x) const;

    struct Summary {
        int leaves = 0, products = 0, gatings = 0, edges = 0, depth = 0;
        std::vector<std::pair<std::string, int>> leaf_families;
        std::string to_string() const;
    };
    Summary summary() const;

private:
    void ensure_evaluable() const;
    Eigen::VectorXd node_values(const Evidence& ev, EvalStats* stats) const;

    std::vector<Node> nodes_;
    int root_ = -1;
    int num_y_ = 0;
    int num_x_ = 0;
    std::vector<int> eval_order_;  // children before parents; empty if cyclic
    bool acyclic_ = false;
};

/// Incremental construction helper; ids are assigned contiguously and
/// atomically, so disjoint subtrees may be built from worker threads.
class CircuitBuilder {
public:
    CircuitBuilder(int num_y, int num_x) : num_y_(num_y), num_x_(num_x) {}

    int add_leaf(std::vector<int> scope, GlmLeaf leaf);
    int add_product(std::vector<int> scope, std::vector<int> children);
    int add_gating(std::vector<int> scope, std::vector<int> children, GatingFunction gate);

    Circuit finish(int root_id);

private:
    int push(Node node);
    int num_y_, num_x_;
    std::vector<Node> nodes_;
    std::mutex mutex_;
};

}  // namespace cspn
