#include <benchmark/benchmark.h>

#include "kooptrain/nn_engine.hpp"
#include "kooptrain/optimizers.hpp"
#include "kooptrain/tasks.hpp"

namespace {

using namespace koop;

void bm_forward_mnist_batch(benchmark::State& state) {
    const Architecture arch = Architecture::parse("784:20:20:20:10", Activation::ReLU, true);
    const Network net{arch, init_params(arch, 1), 1};
    const Eigen::MatrixXd inputs =
        (Eigen::MatrixXd::Random(state.range(0), 784).array() * 0.5 + 0.5).matrix();
    for (auto _ : state) {
        benchmark::DoNotOptimize(forward(net, inputs));
    }
}
BENCHMARK(bm_forward_mnist_batch)->Arg(64)->Arg(1000)->Unit(benchmark::kMicrosecond);

void bm_de_loss_grad(benchmark::State& state) {
    DESolverTask task;
    task.n_points = static_cast<int>(state.range(0));
    const Network net{task.arch, init_params(task.arch, 2), 2};
    for (auto _ : state) {
        benchmark::DoNotOptimize(de_loss(net, task));
    }
}
BENCHMARK(bm_de_loss_grad)->Arg(200)->Unit(benchmark::kMicrosecond);

void bm_adadelta_step(benchmark::State& state) {
    const auto n = static_cast<Eigen::Index>(state.range(0));
    OptimizerHyper hyper;
    hyper.lr = LrSchedule::decay(8.0, 1000.0);
    hyper.rho = 0.999;
    hyper.eps = 1e-6;
    OptimizerState st(OptimizerKind::Adadelta, hyper);
    ParamVector w = Eigen::VectorXd::Random(n);
    const ParamVector g = Eigen::VectorXd::Random(n) * 1e-3;
    for (auto _ : state) {
        step(st, w, g);
    }
}
BENCHMARK(bm_adadelta_step)->Arg(152)->Arg(16750)->Unit(benchmark::kMicrosecond);

}  // namespace
