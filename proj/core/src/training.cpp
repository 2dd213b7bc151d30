#include "kooptrain/training.hpp"

#include <algorithm>
#include <numeric>

#include "kooptrain/errors.hpp"

namespace koop {

MinibatchObjective::MinibatchObjective(const Dataset* data, int batch_size,
                                       std::uint64_t shuffle_seed)
    : data_(data), batch_size_(batch_size), rng_(shuffle_seed) {
    if (!data_ || data_->count() < 1) throw ConfigError("minibatch objective: empty dataset");
    if (batch_size_ < 1) throw ConfigError("minibatch objective: batch size must be >= 1");
    order_.resize(static_cast<std::size_t>(data_->count()));
    std::iota(order_.begin(), order_.end(), Eigen::Index{0});
    cursor_ = data_->count();  // force a shuffle before the first batch
}

Eigen::Index MinibatchObjective::iterations_per_epoch() const {
    return (data_->count() + batch_size_ - 1) / batch_size_;
}

Batch MinibatchObjective::next_batch() {
    if (cursor_ >= data_->count()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        cursor_ = 0;
    }
    const Eigen::Index n = std::min<Eigen::Index>(batch_size_, data_->count() - cursor_);
    Batch batch;
    batch.kind = BatchKind::Stochastic;
    batch.inputs.resize(n, data_->images.cols());
    batch.labels.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index src = order_[static_cast<std::size_t>(cursor_ + i)];
        batch.inputs.row(i) = data_->images.row(src);
        batch.labels[static_cast<std::size_t>(i)] = data_->labels[static_cast<std::size_t>(src)];
    }
    cursor_ += n;
    return batch;
}

LossGrad MinibatchObjective::loss_and_grad(const Network& net, FlopCounter* fc) {
    last_batch_ = next_batch();
    has_last_ = true;
    return koop::loss_and_grad(net, last_batch_, LossKind::CrossEntropy, fc);
}

double MinibatchObjective::loss(const Network& net, FlopCounter* fc) const {
    if (!has_last_) throw ConfigError("minibatch objective: no batch drawn yet");
    return loss_value(net, last_batch_, LossKind::CrossEntropy, fc);
}

TrainResult train(Network& net, Objective& objective, OptimizerState& opt,
                  const TrainOptions& options, FlopCounter* fc) {
    TrainResult result;
    if (options.keep_losses) result.losses.reserve(options.steps);

    std::optional<TrajectoryRecorder> recorder;
    if (options.record_window) {
        const auto [t1, t2] = *options.record_window;
        recorder.emplace(net.arch.param_count(), t1, t2);
        if (opt.t >= t1 && opt.t <= t2) recorder->observe(opt.t, net.params);
    }

    const Eigen::Index ipe = objective.iterations_per_epoch();
    for (std::uint64_t i = 0; i < options.steps; ++i) {
        try {
            const LossGrad lg = objective.loss_and_grad(net, fc);
            if (options.keep_losses) result.losses.push_back(lg.loss);
            step(opt, net.params, lg.grad, fc);
        } catch (const NumericError& e) {
            throw NumericError("iteration " + std::to_string(opt.t) + ": " + e.what());
        }
        if (recorder) recorder->observe(opt.t, net.params);
        if (ipe > 0 && opt.t % static_cast<std::uint64_t>(ipe) == 0) {
            opt.end_epoch();
            if (options.on_epoch_end) {
                options.on_epoch_end(static_cast<int>(opt.t / static_cast<std::uint64_t>(ipe)));
            }
        }
        if (options.on_step) options.on_step(opt.t, net);
        ++result.steps_done;
    }
    if (recorder && recorder->complete()) result.trajectory = recorder->take();
    return result;
}

}  // namespace koop
