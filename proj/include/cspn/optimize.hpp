#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "cspn/circuit.hpp"

namespace cspn {

enum class ParamRole { LeafCoeffs, LeafLogDispersion, GateLogits, GateCoeffs };

struct ParamSlice {
    int node_id;
    ParamRole role;
    int offset;
    int size;
};

/** Flat view over every differentiable parameter of a circuit: leaf
 * coefficient matrices (row-major), gaussian dispersions in log domain,
 * softmax gate coefficient matrices, and constant gate weights reparameterized
 * as log weights (softmax logits), so the whole vector is unconstrained.
 */
struct ParamLayout {
    std::vector<ParamSlice> slices;
    int total = 0;
};

ParamLayout build_layout(const Circuit& circuit);
Eigen::VectorXd extract_params(const Circuit& circuit, const ParamLayout& layout);

/// Returns a copy of the circuit with the parameter vector written back;
/// constant gates are renormalized from their logits.
Circuit apply_params(const Circuit& circuit, const ParamLayout& layout,
                     const Eigen::VectorXd& params);

struct CllGrad {
    double cll = 0.0;        // mean conditional log-likelihood over the batch
    Eigen::VectorXd grad;    // d mean-CLL / d params
};

/// Reverse-mode accumulation through the log-space circuit.
CllGrad cll_and_grad(const Circuit& circuit, const ParamLayout& layout,
                     const Eigen::MatrixXd& y, const Eigen::MatrixXd& x);

struct OptControl {
    double step = 1e-2;
    int batch = 128;
    int max_epochs = 100;
    int patience = 10;       // epochs without validation improvement
    std::uint64_t seed = 0;
    double beta1 = 0.9;      // first/second-moment step scaling
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct EpochLog {
    int epoch;
    double train_cll;
    double valid_cll;
    double grad_norm;
    double seconds;
};

struct TrainResult {
    Circuit model;           // parameters of the best validation epoch
    std::vector<EpochLog> log;
    double initial_valid_cll = 0.0;
    double best_valid_cll = 0.0;
    int best_epoch = 0;      // 0 = initialization
};

/** Mini-batch ascent on the conditional log-likelihood with per-parameter
 * moment scaling. Keeps the best-validation parameters (including the
 * initialization), stops early after `patience` stale epochs, and throws
 * NumericError if the train CLL falls more than 10 nats below its initial
 * value. Bit-reproducible for a fixed seed.
 */
TrainResult train(const Circuit& circuit, const Eigen::MatrixXd& y_train,
                  const Eigen::MatrixXd& x_train, const Eigen::MatrixXd& y_valid,
                  const Eigen::MatrixXd& x_valid, const OptControl& ctrl = {});

void write_training_log(const std::vector<EpochLog>& log, const std::string& path);

}  // namespace cspn
