#include "kooptrain/optimizers.hpp"

#include <cmath>

#include "kooptrain/errors.hpp"

namespace koop {

std::string to_string(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::Sgd: return "sgd";
        case OptimizerKind::Adam: return "adam";
        case OptimizerKind::Adagrad: return "adagrad";
        case OptimizerKind::Adadelta: return "adadelta";
    }
    return "?";
}

OptimizerKind optimizer_kind_from_string(const std::string& s) {
    if (s == "sgd") return OptimizerKind::Sgd;
    if (s == "adam") return OptimizerKind::Adam;
    if (s == "adagrad") return OptimizerKind::Adagrad;
    if (s == "adadelta") return OptimizerKind::Adadelta;
    throw ConfigError("unknown optimizer '" + s + "' (expected sgd|adam|adagrad|adadelta)");
}

namespace {

void ensure_state(OptimizerState& st, Eigen::Index n) {
    auto need = [n](Eigen::VectorXd& vec) {
        if (vec.size() != n) vec = Eigen::VectorXd::Zero(n);
    };
    switch (st.kind) {
        case OptimizerKind::Sgd:
            break;
        case OptimizerKind::Adam:
            need(st.m);
            need(st.v);
            break;
        case OptimizerKind::Adagrad:
            need(st.v);
            break;
        case OptimizerKind::Adadelta:
            need(st.v);
            need(st.u);
            break;
    }
}

void check_finite(const ParamVector& params) {
    if (params.allFinite()) return;
    for (Eigen::Index i = 0; i < params.size(); ++i) {
        if (!std::isfinite(params(i))) {
            throw NumericError("optimizer step produced non-finite parameter at index " +
                               std::to_string(i));
        }
    }
}

}  // namespace

void step(OptimizerState& st, ParamVector& params, const ParamVector& grad, FlopCounter* fc) {
    const Eigen::Index n = params.size();
    if (grad.size() != n) throw ConfigError("optimizer step: grad/param length mismatch");
    ensure_state(st, n);
    const double lr = st.effective_lr();
    const auto g = grad.array();
    std::uint64_t macs = 0;

    switch (st.kind) {
        case OptimizerKind::Sgd:
            params.noalias() -= lr * grad;
            macs = static_cast<std::uint64_t>(n);
            break;
        case OptimizerKind::Adam: {
            const double b1 = st.hyper.beta1, b2 = st.hyper.beta2;
            st.m.array() = b1 * st.m.array() + (1 - b1) * g;
            st.v.array() = b2 * st.v.array() + (1 - b2) * g * g;
            const double tc = static_cast<double>(st.t + 1);
            const double c1 = 1.0 - std::pow(b1, tc);
            const double c2 = 1.0 - std::pow(b2, tc);
            params.array() -=
                lr * (st.m.array() / c1) / ((st.v.array() / c2).sqrt() + st.hyper.eps);
            macs = static_cast<std::uint64_t>(n) * 8;
            break;
        }
        case OptimizerKind::Adagrad:
            st.v.array() += g * g;
            params.array() -= lr * g / (st.v.array().sqrt() + st.hyper.eps);
            macs = static_cast<std::uint64_t>(n) * 4;
            break;
        case OptimizerKind::Adadelta: {
            // Zeiler (2012) with the schedule applied to the final update
            // only; the delta accumulator sees the unscaled delta.
            const double rho = st.hyper.rho, eps = st.hyper.eps;
            st.v.array() = rho * st.v.array() + (1 - rho) * g * g;
            Eigen::ArrayXd delta =
                -((st.u.array() + eps) / (st.v.array() + eps)).sqrt() * g;
            st.u.array() = rho * st.u.array() + (1 - rho) * delta * delta;
            params.array() += lr * delta;
            macs = static_cast<std::uint64_t>(n) * 8;
            break;
        }
    }
    st.t += 1;
    st.update_flops += macs;
    add_flops(fc, &FlopCounter::update, macs);
    check_finite(params);
}

std::uint64_t flop_count(const OptimizerState& st) { return st.update_flops; }

Eigen::VectorXd perceptron_output(const Eigen::MatrixXd& weights, const Eigen::VectorXd& x) {
    Eigen::VectorXd drive = weights * x;
    return drive.unaryExpr([](double d) { return d > 1.0 ? 1.0 : 0.0; });
}

void perceptron_step(Eigen::MatrixXd& weights, const Eigen::VectorXd& x,
                     const Eigen::VectorXd& y, double eta) {
    if (eta <= 0) throw ConfigError("perceptron_step: eta must be > 0");
    if (weights.cols() != x.size() || weights.rows() != y.size()) {
        throw ConfigError("perceptron_step: shape mismatch");
    }
    const Eigen::VectorXd y_hat = perceptron_output(weights, x);
    weights.noalias() -= eta * (y_hat - y) * x.transpose();
}

}  // namespace koop
