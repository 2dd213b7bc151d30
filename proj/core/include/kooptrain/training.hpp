#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "kooptrain/nn_engine.hpp"
#include "kooptrain/optimizers.hpp"
#include "kooptrain/recorder.hpp"
#include "kooptrain/tasks.hpp"

namespace koop {

/// What the training map optimizes. Stochastic objectives advance their own
/// batch cursor per call; copying an objective snapshots the stream.
class Objective {
public:
    virtual ~Objective() = default;
    virtual LossGrad loss_and_grad(const Network& net, FlopCounter* fc) = 0;
    /// Loss of the current parameters without advancing any batch stream.
    virtual double loss(const Network& net, FlopCounter* fc) const = 0;
    /// 0 means no epoch structure.
    virtual Eigen::Index iterations_per_epoch() const { return 0; }
};

class FixedBatchObjective final : public Objective {
public:
    FixedBatchObjective(Batch batch, LossKind kind) : batch_(std::move(batch)), kind_(kind) {}
    LossGrad loss_and_grad(const Network& net, FlopCounter* fc) override {
        return koop::loss_and_grad(net, batch_, kind_, fc);
    }
    double loss(const Network& net, FlopCounter* fc) const override {
        return loss_value(net, batch_, kind_, fc);
    }

private:
    Batch batch_;
    LossKind kind_;
};

class DeObjective final : public Objective {
public:
    explicit DeObjective(DESolverTask task) : task_(std::move(task)) {}
    LossGrad loss_and_grad(const Network& net, FlopCounter* fc) override {
        return de_loss(net, task_, fc);
    }
    double loss(const Network& net, FlopCounter* fc) const override {
        return de_loss_value(net, task_, fc);
    }
    const DESolverTask& task() const { return task_; }

private:
    DESolverTask task_;
};

/// Cross-entropy over shuffled minibatches; reshuffles at each epoch start
/// with a stream seeded once, so a copied objective continues identically.
class MinibatchObjective final : public Objective {
public:
    MinibatchObjective(const Dataset* data, int batch_size, std::uint64_t shuffle_seed);
    LossGrad loss_and_grad(const Network& net, FlopCounter* fc) override;
    double loss(const Network& net, FlopCounter* fc) const override;
    Eigen::Index iterations_per_epoch() const override;

private:
    Batch next_batch();
    const Dataset* data_;
    int batch_size_;
    std::mt19937_64 rng_;
    std::vector<Eigen::Index> order_;
    Eigen::Index cursor_ = 0;
    mutable Batch last_batch_;
    mutable bool has_last_ = false;
};

struct TrainOptions {
    std::uint64_t steps = 0;
    /// Snapshot window [t1, t2] in completed-update counts; w(t) is captured
    /// after the t-th update (w(0) is the initial state).
    std::optional<std::pair<std::uint64_t, std::uint64_t>> record_window;
    bool keep_losses = true;
    /// Called after each update with the completed-update count.
    std::function<void(std::uint64_t, const Network&)> on_step;
    /// Called when an epoch boundary is crossed (epoch index starting at 1),
    /// after the optimizer's gamma decay was applied.
    std::function<void(int)> on_epoch_end;
};

struct TrainResult {
    /// losses[i] = loss(w(t0 + i)) where t0 is the step count at entry;
    /// these are the pre-update evaluations of each iteration.
    std::vector<double> losses;
    std::optional<Trajectory> trajectory;
    std::uint64_t steps_done = 0;
};

/// Runs `steps` optimizer updates. Exceptions from the engine are rethrown
/// with the iteration index attached.
TrainResult train(Network& net, Objective& objective, OptimizerState& opt,
                  const TrainOptions& options, FlopCounter* fc = nullptr);

}  // namespace koop
