#include <benchmark/benchmark.h>

#include <random>

#include "kooptrain/koopman.hpp"
#include "kooptrain/param_space.hpp"
#include "kooptrain/recorder.hpp"

namespace {

using namespace koop;

Trajectory random_walk_trajectory(Eigen::Index n, int k, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> step(0.0, 1e-3);
    Trajectory traj;
    traj.param_count = n;
    traj.t1 = 0;
    traj.t2 = static_cast<std::uint64_t>(k - 1);
    traj.snapshots.resize(n, k);
    traj.snapshots.col(0) = Eigen::VectorXd::Random(n);
    for (int c = 1; c < k; ++c) {
        traj.snapshots.col(c) =
            traj.snapshots.col(c - 1) +
            Eigen::VectorXd::NullaryExpr(n, [&] { return step(rng); });
    }
    return traj;
}

void bm_finite_section(benchmark::State& state) {
    const auto m = static_cast<Eigen::Index>(state.range(0));
    const int k = static_cast<int>(state.range(1));
    const Trajectory traj = random_walk_trajectory(m, k, 7);
    std::vector<Eigen::Index> group(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) group[static_cast<std::size_t>(i)] = i;
    const SnapshotPair pair = extract(traj, group);
    FiniteSectionOptions opts;
    opts.compute_spectrum = false;
    for (auto _ : state) {
        benchmark::DoNotOptimize(finite_section(pair, 0.0, opts));
    }
}
BENCHMARK(bm_finite_section)
    ->Args({11, 1001})
    ->Args({21, 2815})
    ->Args({157, 2815})
    ->Unit(benchmark::kMillisecond);

void bm_finite_section_ridge(benchmark::State& state) {
    const auto m = static_cast<Eigen::Index>(state.range(0));
    const int k = static_cast<int>(state.range(1));
    const Trajectory traj = random_walk_trajectory(m, k, 7);
    std::vector<Eigen::Index> group(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) group[static_cast<std::size_t>(i)] = i;
    const SnapshotPair pair = extract(traj, group);
    FiniteSectionOptions opts;
    opts.compute_spectrum = false;
    for (auto _ : state) {
        benchmark::DoNotOptimize(finite_section(pair, 1e-8, opts));
    }
}
BENCHMARK(bm_finite_section_ridge)->Args({157, 2815})->Unit(benchmark::kMillisecond);

// One prediction step across the node partition of the DE-solver net.
void bm_predict_step(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    std::vector<int> sizes(static_cast<std::size_t>(n) + 1, n);
    const Architecture arch(sizes, Activation::Sigmoid, true);
    const Trajectory traj = random_walk_trajectory(arch.param_count(), 50, 3);
    const Partition partition = build_partition(arch, Scheme::node());
    FiniteSectionOptions opts;
    opts.compute_spectrum = false;
    KoopmanModel model = build_model(traj, partition, 1, 0.0, opts);
    model.horizon = 1;
    PredictOptions popts;
    popts.divergence_cap = 1e300;
    for (auto _ : state) {
        predict_steps(model, [](std::uint64_t, const ParamVector&) {}, popts);
    }
    state.SetItemsProcessed(state.iterations() *
                            static_cast<std::int64_t>(model.per_step_flops()));
}
BENCHMARK(bm_predict_step)->Arg(4)->Arg(8)->Arg(16)->Unit(benchmark::kMicrosecond);

void bm_spectral_report(benchmark::State& state) {
    const auto m = static_cast<Eigen::Index>(state.range(0));
    KoopmanPatch patch;
    patch.U = Eigen::MatrixXd::Random(m, m) * 0.1;
    patch.group.resize(static_cast<std::size_t>(m));
    for (auto _ : state) {
        KoopmanPatch copy = patch;
        compute_patch_spectrum(copy);
        benchmark::DoNotOptimize(spectral_report(copy));
    }
}
BENCHMARK(bm_spectral_report)->Arg(21)->Arg(157)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
