#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "kooptrain/flops.hpp"
#include "kooptrain/param_space.hpp"

namespace koop {

struct Network {
    Architecture arch;
    ParamVector params;
    std::uint64_t rng_seed = 0;
};

enum class BatchKind { Fixed, Stochastic };

struct Batch {
    Eigen::MatrixXd inputs;   // batch_size x input_dim
    Eigen::MatrixXd targets;  // batch_size x output_dim (regression targets)
    std::vector<int> labels;  // class labels (classification targets)
    BatchKind kind = BatchKind::Fixed;

    Eigen::Index size() const { return inputs.rows(); }
};

enum class LossKind { Mse, CrossEntropy, DeResidual };

std::string to_string(LossKind k);
LossKind loss_kind_from_string(const std::string& s);

/// Batched forward pass. inputs is batch_size x input_dim, result is
/// batch_size x output_dim. The architecture's activation is applied after
/// every weight layer, the output layer included.
Eigen::MatrixXd forward(const Network& net, const Eigen::MatrixXd& inputs,
                        FlopCounter* fc = nullptr);

/// Pre-activation scores of the output layer (the logits that softmax
/// losses consume). Same shape convention as forward().
Eigen::MatrixXd forward_logits(const Network& net, const Eigen::MatrixXd& inputs,
                               FlopCounter* fc = nullptr);

struct LossGrad {
    double loss = 0;
    ParamVector grad;
};

/// Loss and analytic gradient for Mse / CrossEntropy. DeResidual is owned by
/// the DE solver task (see tasks.hpp) because it needs trial-function
/// context; requesting it here is a configuration error.
LossGrad loss_and_grad(const Network& net, const Batch& batch, LossKind kind,
                       FlopCounter* fc = nullptr);

/// Loss only (forward pass, no gradient).
double loss_value(const Network& net, const Batch& batch, LossKind kind,
                  FlopCounter* fc = nullptr);

/// d(outputs)/d(inputs) for one input vector, by forward-mode propagation.
/// Result is output_dim x input_dim. Smooth activations only.
Eigen::MatrixXd input_jacobian(const Network& net, const Eigen::VectorXd& input,
                               FlopCounter* fc = nullptr);

struct InitSpec {
    enum class Kind { GlorotUniform, UniformRange };
    Kind kind = Kind::GlorotUniform;
    double low = 0, high = 0;

    static InitSpec glorot() { return {Kind::GlorotUniform, 0, 0}; }
    static InitSpec uniform(double lo, double hi) { return {Kind::UniformRange, lo, hi}; }
};

/// Deterministic given (arch, seed, spec). Glorot draws every weight and bias
/// of a layer from U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
ParamVector init_params(const Architecture& arch, std::uint64_t seed,
                        const InitSpec& spec = InitSpec::glorot());

// ---------------------------------------------------------------------------
// Differentiation internals, exposed for the DE-residual loss.
// All matrices here are column-per-sample.
// ---------------------------------------------------------------------------

struct ForwardPass {
    std::vector<Eigen::MatrixXd> a;   // activations, a[0] = inputs, size depth+1
    std::vector<Eigen::MatrixXd> z;   // pre-activations, size depth
    std::vector<Eigen::MatrixXd> da;  // tangent of a (empty without tangent)
    std::vector<Eigen::MatrixXd> dz;  // tangent of z
    bool with_tangent = false;

    const Eigen::MatrixXd& outputs() const { return a.back(); }
    const Eigen::MatrixXd& output_tangent() const { return da.back(); }
};

/// Runs the forward pass, optionally carrying a directional input tangent
/// (forward-mode). tangent_seed, when given, is input_dim x batch.
ForwardPass run_forward(const Network& net, const Eigen::MatrixXd& inputs_cols,
                        const Eigen::MatrixXd* tangent_seed = nullptr,
                        FlopCounter* fc = nullptr);

/// Reverse pass through run_forward. bar_out is the cotangent of the outputs;
/// bar_dout, when given, is the cotangent of the output tangent (this is what
/// lets a loss depend on d(output)/d(input)). Returns d(loss)/d(params).
/// With bar_on_preactivation, bar_out is read as the cotangent of the output
/// layer's pre-activation z instead (softmax losses live on logits).
ParamVector run_backward(const Network& net, const ForwardPass& pass,
                         const Eigen::MatrixXd& bar_out,
                         const Eigen::MatrixXd* bar_dout = nullptr,
                         FlopCounter* fc = nullptr, bool bar_on_preactivation = false);

}  // namespace koop
