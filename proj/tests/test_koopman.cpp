#include <doctest.h>

#include <filesystem>
#include <random>

#include "kooptrain/errors.hpp"
#include "kooptrain/koopman.hpp"
#include "kooptrain/param_space.hpp"
#include "kooptrain/recorder.hpp"

using namespace koop;
namespace fs = std::filesystem;

namespace {

// Snapshots of w(t+1) = A w(t).
Trajectory linear_trajectory(const Eigen::MatrixXd& a, const Eigen::VectorXd& w0, int k) {
    Trajectory traj;
    traj.param_count = w0.size();
    traj.t1 = 0;
    traj.t2 = static_cast<std::uint64_t>(k - 1);
    traj.snapshots.resize(w0.size(), k);
    traj.snapshots.col(0) = w0;
    for (int c = 1; c < k; ++c) {
        traj.snapshots.col(c) = a * traj.snapshots.col(c - 1);
    }
    return traj;
}

SnapshotPair pair_from(const Trajectory& traj) {
    std::vector<Eigen::Index> group(static_cast<std::size_t>(traj.param_count));
    for (Eigen::Index i = 0; i < traj.param_count; ++i) group[static_cast<std::size_t>(i)] = i;
    return extract(traj, group);
}

}  // namespace

TEST_CASE("geometric 1-d series recovers its ratio") {
    Eigen::MatrixXd a(1, 1);
    a << 0.5;
    const Trajectory traj = linear_trajectory(a, Eigen::VectorXd::Ones(1), 5);
    const KoopmanPatch patch = finite_section(pair_from(traj), 0.0);
    CHECK(patch.U(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(patch.method == "svd");
}

TEST_CASE("constant nonzero series gives the identity map") {
    Trajectory traj;
    traj.param_count = 1;
    traj.t1 = 0;
    traj.t2 = 4;
    traj.snapshots = Eigen::MatrixXd::Constant(1, 5, 3.0);
    const KoopmanPatch patch = finite_section(pair_from(traj), 0.0);
    CHECK(patch.U(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("2-d stable system is recovered entrywise") {
    Eigen::MatrixXd a(2, 2);
    a << 0.9, 0.1, 0.0, 0.8;
    const Trajectory traj = linear_trajectory(a, Eigen::VectorXd::Ones(2), 10);
    const KoopmanPatch patch = finite_section(pair_from(traj), 0.0);
    CHECK((patch.U - a).cwiseAbs().maxCoeff() < 1e-8);
    // Spectrum of the recovered operator matches the generator's eigenvalues.
    REQUIRE(patch.spectrum.size() == 2);
    std::vector<double> mods;
    for (const auto& ev : patch.spectrum) mods.push_back(std::abs(ev));
    std::sort(mods.begin(), mods.end());
    CHECK(mods[0] == doctest::Approx(0.8).epsilon(1e-6));
    CHECK(mods[1] == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("all-zero snapshots give the zero operator, flagged rank 0") {
    Trajectory traj;
    traj.param_count = 3;
    traj.t1 = 0;
    traj.t2 = 4;
    traj.snapshots = Eigen::MatrixXd::Zero(3, 5);
    const KoopmanPatch patch = finite_section(pair_from(traj), 0.0);
    CHECK(patch.U.isZero(0));
    CHECK(patch.effective_rank == 0);
    CHECK(patch.rank_deficient);
}

TEST_CASE("ridge route agrees with the svd route on well-conditioned data") {
    Eigen::MatrixXd a(2, 2);
    a << 0.9, 0.1, -0.05, 0.8;
    std::mt19937_64 rng(3);
    std::normal_distribution<double> dist;
    // Multiple restarts so F has solid row rank.
    Trajectory traj;
    traj.param_count = 2;
    traj.t1 = 0;
    traj.t2 = 19;
    traj.snapshots.resize(2, 20);
    Eigen::VectorXd w = Eigen::VectorXd::NullaryExpr(2, [&] { return dist(rng); });
    for (int c = 0; c < 20; ++c) {
        if (c % 7 == 0) w = Eigen::VectorXd::NullaryExpr(2, [&] { return dist(rng); });
        traj.snapshots.col(c) = w;
        w = a * w;
    }
    // Columns within a restart segment obey w(t+1) = A w(t); crossing
    // segments does not, so rebuild the pair segment-aware.
    SnapshotPair pair;
    pair.group = {0, 1};
    std::vector<int> cols;
    for (int c = 0; c + 1 < 20; ++c) {
        if ((c + 1) % 7 != 0) cols.push_back(c);
    }
    pair.F.resize(2, static_cast<Eigen::Index>(cols.size()));
    pair.Fp.resize(2, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i) {
        pair.F.col(static_cast<Eigen::Index>(i)) = traj.snapshots.col(cols[i]);
        pair.Fp.col(static_cast<Eigen::Index>(i)) = traj.snapshots.col(cols[i] + 1);
    }
    const KoopmanPatch svd = finite_section(pair, 0.0);
    const KoopmanPatch ridge = finite_section(pair, 1e-10);
    CHECK(ridge.method == "ridge");
    CHECK((svd.U - a).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((ridge.U - svd.U).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("identity patches repeat the seed state") {
    KoopmanModel model;
    model.param_count = 3;
    model.horizon = 4;
    model.seed_state = Eigen::Vector3d(1.0, -2.0, 0.5);
    KoopmanPatch patch;
    patch.U = Eigen::MatrixXd::Identity(3, 3);
    patch.group = {0, 1, 2};
    model.patches.push_back(patch);
    const auto path = predict(model);
    REQUIRE(path.size() == 4);
    for (const auto& w : path) CHECK(w == model.seed_state);
}

TEST_CASE("scalar patch powers down the seed") {
    KoopmanModel model;
    model.param_count = 1;
    model.horizon = 3;
    model.seed_state = Eigen::VectorXd::Ones(1);
    KoopmanPatch patch;
    patch.U = Eigen::MatrixXd::Constant(1, 1, 0.5);
    patch.group = {0};
    model.patches.push_back(patch);
    const auto path = predict(model);
    CHECK(path[0](0) == doctest::Approx(0.5));
    CHECK(path[1](0) == doctest::Approx(0.25));
    CHECK(path[2](0) == doctest::Approx(0.125));
}

TEST_CASE("linear-system oracle: predictions reproduce matrix powers") {
    Eigen::MatrixXd a(2, 2);
    a << 0.9, 0.1, 0.0, 0.8;
    const Eigen::VectorXd w0 = Eigen::Vector2d(1.0, 1.0);
    const Trajectory traj = linear_trajectory(a, w0, 10);
    Partition partition;
    partition.param_count = 2;
    partition.groups.push_back({{0, 1}, Scheme::network()});
    auto [model, path] = koopman_train(traj, partition, 20, 0.0);
    Eigen::VectorXd truth = traj.snapshots.col(9);
    for (std::size_t t = 0; t < path.size(); ++t) {
        truth = a * truth;
        CHECK((path[t] - truth).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("divergence aborts with the step index") {
    KoopmanModel model;
    model.param_count = 1;
    model.horizon = 100;
    model.seed_state = Eigen::VectorXd::Ones(1);
    KoopmanPatch patch;
    patch.U = Eigen::MatrixXd::Constant(1, 1, 2.0);
    patch.group = {0};
    model.patches.push_back(patch);
    try {
        predict(model);
        FAIL("expected divergence");
    } catch (const DivergenceError& e) {
        CHECK(e.step_reached == 40);  // 2^40 is the first power past 1e12
    }
}

TEST_CASE("spectral report on the identity and a contraction") {
    KoopmanPatch identity;
    identity.U = Eigen::MatrixXd::Identity(3, 3);
    compute_patch_spectrum(identity);
    const SpectralReport rid = spectral_report(identity);
    CHECK(rid.available);
    CHECK(rid.max_modulus == doctest::Approx(1.0));
    CHECK(rid.count_on_unit_circle == 3);

    KoopmanPatch half;
    half.U = Eigen::MatrixXd::Constant(1, 1, 0.5);
    compute_patch_spectrum(half);
    const SpectralReport rhalf = spectral_report(half);
    CHECK(rhalf.max_modulus == doctest::Approx(0.5));
    CHECK(rhalf.count_on_unit_circle == 0);
}

TEST_CASE("patches beyond the spectral cap fall back to a power estimate") {
    FiniteSectionOptions opts;
    opts.spectral_cap = 2;
    KoopmanPatch patch;
    patch.U = Eigen::MatrixXd::Identity(4, 4) * 0.75;
    compute_patch_spectrum(patch, opts);
    CHECK(patch.spectrum.empty());
    const SpectralReport rep = spectral_report(patch);
    CHECK_FALSE(rep.available);
    CHECK(rep.max_modulus == doctest::Approx(0.75).epsilon(1e-6));
}

TEST_CASE("koopman_train on a node partition of 1:10:10:2") {
    const Architecture arch = Architecture::parse("1:10:10:2", Activation::Sigmoid, true);
    const Partition partition = build_partition(arch, Scheme::node());
    std::mt19937_64 rng(12);
    std::normal_distribution<double> dist;
    Trajectory traj;
    traj.param_count = 152;
    traj.t1 = 0;
    traj.t2 = 30;
    traj.snapshots.resize(152, 31);
    traj.snapshots.col(0) = Eigen::VectorXd::NullaryExpr(152, [&] { return dist(rng); });
    for (int c = 1; c < 31; ++c) {
        traj.snapshots.col(c) = traj.snapshots.col(c - 1) * 0.99;
    }
    auto [model, path] = koopman_train(traj, partition, 5, 0.0);
    REQUIRE(model.patches.size() == 22);
    int size2 = 0, size11 = 0;
    for (const auto& patch : model.patches) {
        if (patch.size() == 2) ++size2;
        if (patch.size() == 11) ++size11;
    }
    CHECK(size2 == 10);
    CHECK(size11 == 12);
    CHECK(path.size() == 5);
}

TEST_CASE("block-diagonal dynamics aligned with the partition are exact") {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> dist;
    const std::vector<std::vector<Eigen::Index>> groups = {{0, 1, 2}, {3, 4}, {5}};
    Eigen::MatrixXd blockdiag = Eigen::MatrixXd::Zero(6, 6);
    for (const auto& g : groups) {
        const auto m = static_cast<Eigen::Index>(g.size());
        Eigen::MatrixXd block =
            Eigen::MatrixXd::NullaryExpr(m, m, [&] { return 0.3 * dist(rng); });
        block.diagonal().array() += 0.6;
        for (Eigen::Index r = 0; r < m; ++r) {
            for (Eigen::Index c = 0; c < m; ++c) {
                blockdiag(g[static_cast<std::size_t>(r)], g[static_cast<std::size_t>(c)]) =
                    block(r, c);
            }
        }
    }
    const Eigen::VectorXd w0 = Eigen::VectorXd::NullaryExpr(6, [&] { return dist(rng); });
    const Trajectory traj = linear_trajectory(blockdiag, w0, 25);

    Partition partition;
    partition.param_count = 6;
    for (const auto& g : groups) partition.groups.push_back({g, Scheme::node()});
    auto [model, path] = koopman_train(traj, partition, 10, 0.0);

    Eigen::VectorXd truth = traj.snapshots.col(24);
    for (std::size_t t = 0; t < path.size(); ++t) {
        truth = blockdiag * truth;
        CHECK((path[t] - truth).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("two snapshots with m > 1 take the rank-deficient svd path") {
    std::mt19937_64 rng(33);
    std::normal_distribution<double> dist;
    Trajectory traj;
    traj.param_count = 4;
    traj.t1 = 0;
    traj.t2 = 1;
    traj.snapshots = Eigen::MatrixXd::NullaryExpr(4, 2, [&] { return dist(rng); });
    Partition partition;
    partition.param_count = 4;
    partition.groups.push_back({{0, 1, 2, 3}, Scheme::network()});
    auto [model, path] = koopman_train(traj, partition, 3, 0.0);
    CHECK(model.patches[0].effective_rank == 1);
    CHECK(model.patches[0].rank_deficient);
    CHECK(path.size() == 3);
}

TEST_CASE("permuting group order leaves predictions bitwise unchanged") {
    std::mt19937_64 rng(44);
    std::normal_distribution<double> dist;
    Trajectory traj;
    traj.param_count = 6;
    traj.t1 = 0;
    traj.t2 = 14;
    traj.snapshots = Eigen::MatrixXd::NullaryExpr(6, 15, [&] { return dist(rng); });

    Partition forward_order;
    forward_order.param_count = 6;
    forward_order.groups.push_back({{0, 1, 2}, Scheme::node()});
    forward_order.groups.push_back({{3, 4}, Scheme::node()});
    forward_order.groups.push_back({{5}, Scheme::node()});
    Partition reversed = forward_order;
    std::reverse(reversed.groups.begin(), reversed.groups.end());

    auto [model_a, path_a] = koopman_train(traj, forward_order, 7, 0.0);
    auto [model_b, path_b] = koopman_train(traj, reversed, 7, 0.0);
    REQUIRE(path_a.size() == path_b.size());
    for (std::size_t t = 0; t < path_a.size(); ++t) {
        CHECK(path_a[t] == path_b[t]);  // bitwise
    }
}

TEST_CASE("construction flops follow the cost model") {
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(3, 3) * 0.9;
    const Trajectory traj = linear_trajectory(a, Eigen::Vector3d(1, 2, 3), 11);
    FlopCounter fc;
    finite_section(pair_from(traj), 0.0, {}, &fc);
    // 2 m^2 kc + 2 m^3 with m = 3, kc = 10.
    CHECK(fc.construction == 2 * 9 * 10 + 2 * 27);
}

TEST_CASE("per-step flops sum the squared patch sizes") {
    KoopmanModel model;
    model.param_count = 5;
    model.horizon = 1;
    model.seed_state = Eigen::VectorXd::Ones(5);
    KoopmanPatch p1, p2;
    p1.U = Eigen::MatrixXd::Identity(3, 3);
    p1.group = {0, 1, 2};
    p2.U = Eigen::MatrixXd::Identity(2, 2);
    p2.group = {3, 4};
    model.patches = {p1, p2};
    CHECK(model.per_step_flops() == 9 + 4);
    FlopCounter fc;
    predict(model, {}, &fc);
    CHECK(fc.prediction == 13);
}

TEST_CASE("model files round trip") {
    Eigen::MatrixXd a(2, 2);
    a << 0.9, 0.1, 0.0, 0.8;
    const Trajectory traj = linear_trajectory(a, Eigen::Vector2d(1, 1), 10);
    Partition partition;
    partition.param_count = 2;
    partition.groups.push_back({{0, 1}, Scheme::network()});
    KoopmanModel model = build_model(traj, partition, 5, 0.0);

    const fs::path path = fs::temp_directory_path() / "kooptrain_test.kmod";
    save_model(path, model);
    const KoopmanModel back = load_model(path);
    CHECK(back.param_count == 2);
    CHECK(back.horizon == 5);
    REQUIRE(back.patches.size() == 1);
    CHECK(back.patches[0].U == model.patches[0].U);  // bitwise
    CHECK(back.patches[0].group == model.patches[0].group);
    fs::remove(path);
}
