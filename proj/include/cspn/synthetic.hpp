#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cspn/dataset.hpp"

namespace cspn {

/** Seeded synthetic dataset generators used by tests and experiments. Each
 * generator records its ground truth in the returned metadata so structural
 * oracles can assert against it.
 *
 *   ci_pair:          y1 = sin(x) + e1, y2 = cos(x) + e2  (y1 _||_ y2 | x)
 *   dependent_pair:   y1 = sin(x) + e1, y2 = y1 + dependence_noise * e2
 *   two_blob_gating:  x from two separated gaussian blobs, y | blob ~ N(m_b, s)
 *   poisson_glm:      y ~ Poisson(exp(coeffs . [x;1])), 2 features
 *   block_factorized: two Y groups, dependent within (shared latent), independent across given x
 */
struct SyntheticSpec {
    std::string generator;
    int rows = 500;
    double noise_sd = 0.25;
    double dependence_noise = 0.1;
    std::vector<double> poisson_coeffs = {0.5, -0.3, 0.2};  // intercept last
    int block_size = 2;  // per group, block_factorized
};

struct SyntheticResult {
    Dataset data;
    std::string generator;
    std::vector<std::vector<int>> true_y_partition;  // conditional-independence blocks
};

SyntheticResult make_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

/// Autoregressive count series for the next-step prediction experiment.
Eigen::MatrixXd make_ar_count_series(int steps, int dims, std::uint64_t seed);

}  // namespace cspn
