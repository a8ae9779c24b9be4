#pragma once

#include <cstdint>
#include <vector>

#include "cspn/circuit.hpp"
#include "cspn/citest.hpp"
#include "cspn/dataset.hpp"

namespace cspn {

enum class ClusterMethod { KMeans, RandomSplit };

struct LearnParams {
    int min_instances = 256;   // eta: below this the labels are factorized
    double alpha = 0.05;       // CI-test significance
    int clusters = 2;          // K for instance splits
    ClusterMethod cluster_method = ClusterMethod::KMeans;
    double min_fraction = 0.0; // alternative stop rule: factorize below this share of all rows
    int max_depth = 0;         // 0 = unlimited
    std::uint64_t seed = 0;
    int threads = 1;
    CiTestOptions citest;
    FitControl leaf_fit;

    void check() const;
};

struct ClusterAssignment {
    std::vector<int> labels;  // per-row cluster id in 0..k-1
    int k = 0;
};

struct LearnStats {
    int ci_pairs_tested = 0;
    int split_labels_calls = 0;
    std::vector<int> pairs_per_call;   // C(m,2) telemetry per SplitLabels call
    int forced_splits = 0;             // clustering made no progress
};

/** Recursive structure induction: a single conditional leaf for one label,
 * full factorization when too few rows remain, a product over the connected
 * components found by the pairwise CI test otherwise, and an instance-cluster
 * gating node when the labels do not separate.
 */
Circuit learn_cspn(const Dataset& data, const LearnParams& params, LearnStats* stats = nullptr);

/** Instance clustering on standardized X. KMeans uses farthest-first seeding
 * and Lloyd iterations; RandomSplit projects onto a random direction and cuts
 * at the median. Empty clusters are dropped (k shrinks).
 */
ClusterAssignment split_instances(const Eigen::MatrixXd& x, int k, ClusterMethod method,
                                  std::uint64_t seed);

/** Softmax gating fit: ridge-penalized multinomial cross-entropy against the
 * one-hot cluster assignment, minimized with L-BFGS (gradient-only) to
 * gradient norm <= 1e-6 or 500 iterations.
 */
GateSoftmax fit_gating(const Eigen::MatrixXd& x, const std::vector<int>& z, int k,
                       double ridge = 1e-6);

}  // namespace cspn
