#include "kooptrain/nn_engine.hpp"

#include <cmath>
#include <random>

#include "kooptrain/errors.hpp"

namespace koop {

std::string to_string(LossKind k) {
    switch (k) {
        case LossKind::Mse: return "mse";
        case LossKind::CrossEntropy: return "cross_entropy";
        case LossKind::DeResidual: return "de_residual";
    }
    return "?";
}

LossKind loss_kind_from_string(const std::string& s) {
    if (s == "mse") return LossKind::Mse;
    if (s == "cross_entropy") return LossKind::CrossEntropy;
    if (s == "de_residual") return LossKind::DeResidual;
    throw ConfigError("unknown loss '" + s + "' (expected mse|cross_entropy|de_residual)");
}

namespace {

double sigmoid(double x) {
    // Two-branch form, overflow-safe for large |x|.
    if (x >= 0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Eigen::MatrixXd apply_activation(Activation act, const Eigen::MatrixXd& z) {
    switch (act) {
        case Activation::Sigmoid:
            return z.unaryExpr([](double x) { return sigmoid(x); });
        case Activation::ReLU:
            return z.cwiseMax(0.0);
        case Activation::Step:
            // Perceptron threshold unit: fires iff the drive exceeds 1.
            return z.unaryExpr([](double x) { return x > 1.0 ? 1.0 : 0.0; });
    }
    throw ConfigError("bad activation");
}

// First derivative from pre-activation z and activation a.
Eigen::MatrixXd activation_prime(Activation act, const Eigen::MatrixXd& z,
                                 const Eigen::MatrixXd& a) {
    switch (act) {
        case Activation::Sigmoid:
            return (a.array() * (1.0 - a.array())).matrix();
        case Activation::ReLU:
            return z.unaryExpr([](double x) { return x > 0.0 ? 1.0 : 0.0; });
        case Activation::Step:
            throw ConfigError("step activation is not differentiable");
    }
    throw ConfigError("bad activation");
}

// Second derivative, needed only when a loss depends on the input tangent.
Eigen::MatrixXd activation_second(Activation act, const Eigen::MatrixXd& a) {
    switch (act) {
        case Activation::Sigmoid:
            return (a.array() * (1.0 - a.array()) * (1.0 - 2.0 * a.array())).matrix();
        case Activation::ReLU:
            return Eigen::MatrixXd::Zero(a.rows(), a.cols());
        case Activation::Step:
            throw ConfigError("step activation is not differentiable");
    }
    throw ConfigError("bad activation");
}

}  // namespace

ForwardPass run_forward(const Network& net, const Eigen::MatrixXd& inputs_cols,
                        const Eigen::MatrixXd* tangent_seed, FlopCounter* fc) {
    const Architecture& arch = net.arch;
    if (inputs_cols.rows() != arch.input_size()) {
        throw ConfigError("forward: input dim " + std::to_string(inputs_cols.rows()) +
                          " != architecture input size " + std::to_string(arch.input_size()));
    }
    const auto layers = unflatten(arch, net.params);
    const Eigen::Index j = inputs_cols.cols();

    ForwardPass pass;
    pass.with_tangent = tangent_seed != nullptr;
    pass.a.resize(arch.depth() + 1);
    pass.z.resize(arch.depth());
    pass.a[0] = inputs_cols;
    if (pass.with_tangent) {
        pass.da.resize(arch.depth() + 1);
        pass.dz.resize(arch.depth());
        pass.da[0] = *tangent_seed;
    }

    for (int l = 0; l < arch.depth(); ++l) {
        const auto& lp = layers[l];
        pass.z[l].noalias() = lp.W * pass.a[l];
        if (arch.has_bias) pass.z[l].colwise() += lp.b;
        add_flops(fc, &FlopCounter::forward,
                  static_cast<std::uint64_t>(lp.W.rows()) * lp.W.cols() * j +
                      static_cast<std::uint64_t>(lp.W.rows()) * j);
        pass.a[l + 1] = apply_activation(arch.activation, pass.z[l]);
        if (pass.with_tangent) {
            pass.dz[l].noalias() = lp.W * pass.da[l];
            pass.da[l + 1] =
                activation_prime(arch.activation, pass.z[l], pass.a[l + 1]).cwiseProduct(
                    pass.dz[l]);
            add_flops(fc, &FlopCounter::forward,
                      static_cast<std::uint64_t>(lp.W.rows()) * lp.W.cols() * j +
                          static_cast<std::uint64_t>(lp.W.rows()) * j);
        }
    }
    if (!pass.a.back().allFinite()) {
        throw NumericError("forward: non-finite activation in output layer");
    }
    return pass;
}

ParamVector run_backward(const Network& net, const ForwardPass& pass,
                         const Eigen::MatrixXd& bar_out, const Eigen::MatrixXd* bar_dout,
                         FlopCounter* fc, bool bar_on_preactivation) {
    const Architecture& arch = net.arch;
    const auto layers = unflatten(arch, net.params);
    const Eigen::Index j = pass.a[0].cols();
    if (bar_dout && !pass.with_tangent) {
        throw ConfigError("run_backward: tangent cotangent given but pass has no tangent");
    }
    if (bar_dout && bar_on_preactivation) {
        throw ConfigError("run_backward: pre-activation cotangents carry no tangent term");
    }

    std::vector<LayerParams> grads(arch.depth());
    Eigen::MatrixXd bar_a = bar_out;
    Eigen::MatrixXd bar_da;
    const bool dual = bar_dout != nullptr;
    if (dual) bar_da = *bar_dout;

    for (int l = arch.depth() - 1; l >= 0; --l) {
        const auto& lp = layers[l];
        const bool skip_activation = bar_on_preactivation && l == arch.depth() - 1;
        const std::uint64_t ew = static_cast<std::uint64_t>(bar_a.rows()) * j;

        Eigen::MatrixXd bar_z;
        Eigen::MatrixXd bar_dz;
        if (skip_activation) {
            bar_z = bar_a;
        } else {
            const Eigen::MatrixXd sp =
                activation_prime(arch.activation, pass.z[l], pass.a[l + 1]);
            bar_z = sp.cwiseProduct(bar_a);
            add_flops(fc, &FlopCounter::backward, ew);
            if (dual) {
                // a' = sp .* dz, so its cotangent feeds both z (through sp)
                // and dz.
                const Eigen::MatrixXd spp = activation_second(arch.activation, pass.a[l + 1]);
                bar_z += spp.cwiseProduct(pass.dz[l]).cwiseProduct(bar_da);
                bar_dz = sp.cwiseProduct(bar_da);
                add_flops(fc, &FlopCounter::backward, 3 * ew);
            }
        }

        grads[l].W.noalias() = bar_z * pass.a[l].transpose();
        add_flops(fc, &FlopCounter::backward,
                  static_cast<std::uint64_t>(bar_z.rows()) * pass.a[l].rows() * j);
        if (dual) {
            grads[l].W.noalias() += bar_dz * pass.da[l].transpose();
            add_flops(fc, &FlopCounter::backward,
                      static_cast<std::uint64_t>(bar_dz.rows()) * pass.da[l].rows() * j);
        }
        if (arch.has_bias) {
            grads[l].b = bar_z.rowwise().sum();
            add_flops(fc, &FlopCounter::backward, ew);
        }

        if (l > 0) {
            bar_a.noalias() = lp.W.transpose() * bar_z;
            add_flops(fc, &FlopCounter::backward,
                      static_cast<std::uint64_t>(lp.W.cols()) * lp.W.rows() * j);
            if (dual) {
                bar_da = lp.W.transpose() * bar_dz;
                add_flops(fc, &FlopCounter::backward,
                          static_cast<std::uint64_t>(lp.W.cols()) * lp.W.rows() * j);
            }
        }
    }
    return flatten(arch, grads);
}

Eigen::MatrixXd forward(const Network& net, const Eigen::MatrixXd& inputs, FlopCounter* fc) {
    const Eigen::MatrixXd cols = inputs.transpose();
    return run_forward(net, cols, nullptr, fc).outputs().transpose();
}

Eigen::MatrixXd forward_logits(const Network& net, const Eigen::MatrixXd& inputs,
                               FlopCounter* fc) {
    const Eigen::MatrixXd cols = inputs.transpose();
    return run_forward(net, cols, nullptr, fc).z.back().transpose();
}

namespace {

// Softmax over each column.
Eigen::MatrixXd softmax_cols(const Eigen::MatrixXd& logits) {
    Eigen::MatrixXd p = logits;
    for (Eigen::Index c = 0; c < p.cols(); ++c) {
        auto col = p.col(c);
        col.array() -= col.maxCoeff();
        col = col.array().exp();
        col /= col.sum();
    }
    return p;
}

void check_batch(const Network& net, const Batch& batch, LossKind kind) {
    if (batch.size() < 1) throw ConfigError("batch is empty");
    if (batch.inputs.cols() != net.arch.input_size()) {
        throw ConfigError("batch input dim " + std::to_string(batch.inputs.cols()) +
                          " != architecture input size");
    }
    if (kind == LossKind::Mse && batch.targets.rows() != batch.size()) {
        throw ConfigError("mse loss: targets row count != batch size");
    }
    if (kind == LossKind::CrossEntropy &&
        static_cast<Eigen::Index>(batch.labels.size()) != batch.size()) {
        throw ConfigError("cross_entropy loss: labels count != batch size");
    }
    if (kind == LossKind::DeResidual) {
        throw ConfigError(
            "de_residual loss needs DE-solver task context; use koop::de_loss");
    }
    if (net.arch.activation == Activation::Step) {
        throw ConfigError("step activation has no usable gradient; use the perceptron rule");
    }
}

}  // namespace

LossGrad loss_and_grad(const Network& net, const Batch& batch, LossKind kind, FlopCounter* fc) {
    check_batch(net, batch, kind);
    const Eigen::Index j = batch.size();
    const Eigen::MatrixXd inputs_cols = batch.inputs.transpose();
    ForwardPass pass = run_forward(net, inputs_cols, nullptr, fc);
    const Eigen::MatrixXd& out = pass.outputs();  // out_dim x j

    double loss = 0;
    LossGrad lg;
    if (kind == LossKind::Mse) {
        const Eigen::MatrixXd diff = out - batch.targets.transpose();
        loss = diff.squaredNorm() / static_cast<double>(j);
        const Eigen::MatrixXd bar_out = diff * (2.0 / static_cast<double>(j));
        add_flops(fc, &FlopCounter::backward, 2 * static_cast<std::uint64_t>(diff.size()));
        lg.grad = run_backward(net, pass, bar_out, nullptr, fc);
    } else {
        // Softmax cross-entropy lives on the pre-activation logits.
        const Eigen::MatrixXd& logits = pass.z.back();
        const Eigen::MatrixXd p = softmax_cols(logits);
        for (Eigen::Index c = 0; c < j; ++c) {
            const int label = batch.labels[static_cast<size_t>(c)];
            if (label < 0 || label >= logits.rows()) {
                throw ConfigError("cross_entropy: label " + std::to_string(label) +
                                  " out of range");
            }
            loss -= std::log(std::max(p(label, c), 1e-300));
        }
        loss /= static_cast<double>(j);
        Eigen::MatrixXd bar_z = p / static_cast<double>(j);
        for (Eigen::Index c = 0; c < j; ++c) {
            bar_z(batch.labels[static_cast<size_t>(c)], c) -= 1.0 / static_cast<double>(j);
        }
        add_flops(fc, &FlopCounter::backward, 3 * static_cast<std::uint64_t>(p.size()));
        lg.grad = run_backward(net, pass, bar_z, nullptr, fc, /*bar_on_preactivation=*/true);
    }
    lg.loss = loss;
    return lg;
}

double loss_value(const Network& net, const Batch& batch, LossKind kind, FlopCounter* fc) {
    if (kind == LossKind::DeResidual) {
        throw ConfigError("de_residual loss needs DE-solver task context; use koop::de_loss");
    }
    const Eigen::Index j = batch.size();
    if (kind == LossKind::Mse) {
        const Eigen::MatrixXd out = forward(net, batch.inputs, fc);
        return (out - batch.targets).squaredNorm() / static_cast<double>(j);
    }
    const Eigen::MatrixXd p = softmax_cols(forward_logits(net, batch.inputs, fc).transpose());
    double loss = 0;
    for (Eigen::Index c = 0; c < j; ++c) {
        loss -= std::log(std::max(p(batch.labels[static_cast<size_t>(c)], c), 1e-300));
    }
    return loss / static_cast<double>(j);
}

Eigen::MatrixXd input_jacobian(const Network& net, const Eigen::VectorXd& input,
                               FlopCounter* fc) {
    if (net.arch.activation != Activation::Sigmoid) {
        throw ConfigError("input_jacobian requires a smooth activation (sigmoid)");
    }
    const int d = net.arch.input_size();
    if (input.size() != d) throw ConfigError("input_jacobian: input dim mismatch");
    // One forward-mode sweep per input coordinate, batched as d copies of the
    // input with unit tangent seeds.
    const Eigen::MatrixXd inputs_cols = input.replicate(1, d);
    const Eigen::MatrixXd seeds = Eigen::MatrixXd::Identity(d, d);
    ForwardPass pass = run_forward(net, inputs_cols, &seeds, fc);
    return pass.output_tangent();
}

ParamVector init_params(const Architecture& arch, std::uint64_t seed, const InitSpec& spec) {
    std::mt19937_64 rng(seed);
    ParamVector v(arch.param_count());
    Eigen::Index pos = 0;
    for (int l = 0; l < arch.depth(); ++l) {
        double lo = spec.low, hi = spec.high;
        if (spec.kind == InitSpec::Kind::GlorotUniform) {
            const double a =
                std::sqrt(6.0 / (arch.layer_sizes[l] + arch.layer_sizes[l + 1]));
            lo = -a;
            hi = a;
        } else if (!(lo < hi)) {
            throw ConfigError("init_params: domain low must be < high");
        }
        std::uniform_real_distribution<double> dist(lo, hi);
        const Eigen::Index count =
            static_cast<Eigen::Index>(arch.node_span(l)) * arch.layer_sizes[l + 1];
        for (Eigen::Index i = 0; i < count; ++i) v(pos++) = dist(rng);
    }
    return v;
}

}  // namespace koop
