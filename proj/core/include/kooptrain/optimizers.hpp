#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>

#include "kooptrain/flops.hpp"
#include "kooptrain/param_space.hpp"

namespace koop {

struct LrSchedule {
    enum class Kind { Constant, Decay };
    Kind kind = Kind::Constant;
    double a = 1.0;  // Constant: the rate; Decay: numerator
    double b = 0.0;  // Decay: eta(t) = a / (b + t)

    static LrSchedule constant(double c) { return {Kind::Constant, c, 0}; }
    static LrSchedule decay(double a, double b) { return {Kind::Decay, a, b}; }

    double eta(std::uint64_t t) const {
        return kind == Kind::Constant ? a : a / (b + static_cast<double>(t));
    }
};

enum class OptimizerKind { Sgd, Adam, Adagrad, Adadelta };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_kind_from_string(const std::string& s);

struct OptimizerHyper {
    LrSchedule lr = LrSchedule::constant(0.01);
    double beta1 = 0.9;       // Adam
    double beta2 = 0.999;     // Adam
    double rho = 0.9;         // Adadelta
    double eps = 1e-8;        // Adam default; Adadelta/Adagrad default 1e-6
    double gamma = 1.0;       // per-epoch multiplicative lr decay
};

/// Training map state. One instance drives one training loop; accumulators
/// are lazily sized to the parameter count on the first step.
struct OptimizerState {
    OptimizerKind kind = OptimizerKind::Sgd;
    OptimizerHyper hyper;
    std::uint64_t t = 0;          // completed steps
    double epoch_scale = 1.0;     // product of gamma over finished epochs
    Eigen::VectorXd m;            // Adam first moment
    Eigen::VectorXd v;            // Adam second moment / Adagrad sum / Adadelta E[g^2]
    Eigen::VectorXd u;            // Adadelta E[dx^2]
    std::uint64_t update_flops = 0;

    OptimizerState() = default;
    OptimizerState(OptimizerKind k, OptimizerHyper h) : kind(k), hyper(std::move(h)) {}

    /// Effective learning-rate multiplier at step t.
    double effective_lr() const { return hyper.lr.eta(t) * epoch_scale; }
    /// Applies the per-epoch gamma decay (StepLR-style, step size one epoch).
    void end_epoch() { epoch_scale *= hyper.gamma; }
};

/// One update: params <- T(params). Increments state.t by exactly one.
/// Throws NumericError naming the first offending index if the update
/// produces a non-finite parameter.
void step(OptimizerState& state, ParamVector& params, const ParamVector& grad,
          FlopCounter* fc = nullptr);

/// Cumulative multiply-add count of all updates applied through this state.
std::uint64_t flop_count(const OptimizerState& state);

// ---------------------------------------------------------------------------
// Perceptron rule (threshold unit, fires iff w_i . x > 1)
// ---------------------------------------------------------------------------

/// Outputs of a bias-free threshold layer: y_i = 1 iff w.row(i) . x > 1.
Eigen::VectorXd perceptron_output(const Eigen::MatrixXd& weights, const Eigen::VectorXd& x);

/// weights -= eta * (y_hat - y) x^T. Inactive inputs (x_j = 0) leave column j
/// untouched.
void perceptron_step(Eigen::MatrixXd& weights, const Eigen::VectorXd& x,
                     const Eigen::VectorXd& y, double eta);

}  // namespace koop
