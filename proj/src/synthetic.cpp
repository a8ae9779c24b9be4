#include "cspn/synthetic.hpp"

#include <cmath>

#include "cspn/rng.hpp"

namespace cspn {

namespace {

std::vector<ColumnSpec> yx_schema(int num_y, ColumnType y_type, int num_x, ColumnType x_type) {
    std::vector<ColumnSpec> schema;
    for (int j = 0; j < num_y; ++j)
        schema.push_back({"y" + std::to_string(j), y_type, ColumnRole::Y, 0});
    for (int j = 0; j < num_x; ++j)
        schema.push_back({"x" + std::to_string(j), x_type, ColumnRole::X, 0});
    return schema;
}

}  // namespace

SyntheticResult make_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    Rng rng(seed);
    const int n = spec.rows;

    if (spec.generator == "ci_pair") {
        Eigen::MatrixXd values(n, 3);
        for (int i = 0; i < n; ++i) {
            const double x = rng.normal();
            values(i, 0) = std::sin(x) + spec.noise_sd * rng.normal();
            values(i, 1) = std::cos(x) + spec.noise_sd * rng.normal();
            values(i, 2) = x;
        }
        return {Dataset(values, yx_schema(2, ColumnType::Continuous, 1, ColumnType::Continuous)),
                spec.generator,
                {{0}, {1}}};
    }

    if (spec.generator == "dependent_pair") {
        Eigen::MatrixXd values(n, 3);
        for (int i = 0; i < n; ++i) {
            const double x = rng.normal();
            values(i, 0) = std::sin(x) + spec.noise_sd * rng.normal();
            values(i, 1) = values(i, 0) + spec.dependence_noise * rng.normal();
            values(i, 2) = x;
        }
        return {Dataset(values, yx_schema(2, ColumnType::Continuous, 1, ColumnType::Continuous)),
                spec.generator,
                {{0, 1}}};
    }

    if (spec.generator == "two_blob_gating") {
        Eigen::MatrixXd values(n, 3);
        for (int i = 0; i < n; ++i) {
            const bool blob = rng.bernoulli(0.5);
            const double cx = blob ? 2.0 : -2.0;
            values(i, 1) = cx + 0.4 * rng.normal();
            values(i, 2) = cx + 0.4 * rng.normal();
            values(i, 0) = (blob ? 3.0 : -3.0) + 0.5 * rng.normal();
        }
        std::vector<ColumnSpec> schema = yx_schema(1, ColumnType::Continuous, 2,
                                                   ColumnType::Continuous);
        return {Dataset(values, schema), spec.generator, {{0}}};
    }

    if (spec.generator == "poisson_glm") {
        const int d = static_cast<int>(spec.poisson_coeffs.size()) - 1;
        Eigen::MatrixXd values(n, 1 + d);
        for (int i = 0; i < n; ++i) {
            double eta = spec.poisson_coeffs.back();
            for (int j = 0; j < d; ++j) {
                values(i, 1 + j) = rng.normal();
                eta += spec.poisson_coeffs[j] * values(i, 1 + j);
            }
            values(i, 0) = static_cast<double>(rng.poisson(std::exp(eta)));
        }
        return {Dataset(values, yx_schema(1, ColumnType::Count, d, ColumnType::Continuous)),
                spec.generator,
                {{0}}};
    }

    if (spec.generator == "block_factorized") {
        // Group A = y0..y{b-1} share latent u_a; group B likewise; both driven
        // by x, and A _||_ B | x by construction.
        const int b = spec.block_size;
        const int num_y = 2 * b;
        Eigen::MatrixXd values(n, num_y + 2);
        for (int i = 0; i < n; ++i) {
            const double x0 = rng.normal();
            const double x1 = rng.normal();
            values(i, num_y) = x0;
            values(i, num_y + 1) = x1;
            const double ua = rng.normal();
            const double ub = rng.normal();
            for (int j = 0; j < b; ++j)
                values(i, j) = std::sin(x0 + j) + 0.8 * ua + spec.noise_sd * rng.normal();
            for (int j = 0; j < b; ++j)
                values(i, b + j) = std::cos(x1 - j) + 0.8 * ub + spec.noise_sd * rng.normal();
        }
        std::vector<std::vector<int>> truth(2);
        for (int j = 0; j < b; ++j) truth[0].push_back(j);
        for (int j = 0; j < b; ++j) truth[1].push_back(b + j);
        return {Dataset(values,
                        yx_schema(num_y, ColumnType::Continuous, 2, ColumnType::Continuous)),
                spec.generator, truth};
    }

    throw ValidationError("make_synthetic: unknown generator \"" + spec.generator + "\"");
}

Eigen::MatrixXd make_ar_count_series(int steps, int dims, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixXd series(steps, dims);
    // smooth per-dimension rates coupled to the previous snapshot
    Eigen::VectorXd base(dims);
    for (int j = 0; j < dims; ++j) base[j] = 1.0 + 2.0 * rng.uniform();
    for (int j = 0; j < dims; ++j) series(0, j) = static_cast<double>(rng.poisson(base[j]));
    for (int t = 1; t < steps; ++t) {
        for (int j = 0; j < dims; ++j) {
            const double prev = series(t - 1, j);
            const double neighbor = series(t - 1, (j + 1) % dims);
            const double rate =
                std::exp(0.35 + 0.55 * std::log1p(prev) + 0.25 * std::log1p(neighbor));
            series(t, j) = static_cast<double>(rng.poisson(rate));
        }
    }
    return series;
}

}  // namespace cspn
