#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "kooptrain/errors.hpp"
#include "kooptrain/recorder.hpp"

using namespace koop;
namespace fs = std::filesystem;

namespace {

Trajectory make_trajectory(Eigen::Index n, std::uint64_t t1, std::uint64_t t2,
                           std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist;
    Trajectory traj;
    traj.param_count = n;
    traj.t1 = t1;
    traj.t2 = t2;
    traj.snapshots = Eigen::MatrixXd::NullaryExpr(
        n, static_cast<Eigen::Index>(t2 - t1 + 1), [&] { return dist(rng); });
    return traj;
}

}  // namespace

TEST_CASE("recorder captures a consecutive window") {
    TrajectoryRecorder rec(3, 2, 5);
    for (std::uint64_t t = 0; t <= 6; ++t) {
        rec.observe(t, Eigen::VectorXd::Constant(3, static_cast<double>(t)));
    }
    REQUIRE(rec.complete());
    const Trajectory traj = rec.take();
    CHECK(traj.snapshot_count() == 4);
    CHECK(traj.snapshot(2)(0) == 2.0);
    CHECK(traj.snapshot(5)(2) == 5.0);
    CHECK_THROWS_AS(traj.snapshot(6), ConfigError);
}

TEST_CASE("recorder rejects gaps and inverted windows") {
    CHECK_THROWS_AS(TrajectoryRecorder(3, 5, 5), ConfigError);
    CHECK_THROWS_AS(TrajectoryRecorder(3, 6, 5), ConfigError);
    TrajectoryRecorder rec(2, 0, 3);
    rec.observe(0, Eigen::VectorXd::Zero(2));
    CHECK_THROWS_AS(rec.observe(2, Eigen::VectorXd::Zero(2)), ConfigError);
}

TEST_CASE("minimal window holds two snapshots") {
    TrajectoryRecorder rec(1, 0, 1);
    rec.observe(0, Eigen::VectorXd::Constant(1, 1.0));
    rec.observe(1, Eigen::VectorXd::Constant(1, 2.0));
    const Trajectory traj = rec.take();
    CHECK(traj.snapshot_count() == 2);
}

TEST_CASE("extract produces the shifted pair") {
    Trajectory traj;
    traj.param_count = 1;
    traj.t1 = 0;
    traj.t2 = 2;
    traj.snapshots.resize(1, 3);
    traj.snapshots << 2, 4, 8;
    const std::vector<Eigen::Index> group = {0};
    const SnapshotPair pair = extract(traj, group);
    CHECK(pair.F(0, 0) == 2);
    CHECK(pair.F(0, 1) == 4);
    CHECK(pair.Fp(0, 0) == 4);
    CHECK(pair.Fp(0, 1) == 8);
}

TEST_CASE("constant trajectory gives F == Fp") {
    Trajectory traj;
    traj.param_count = 4;
    traj.t1 = 10;
    traj.t2 = 14;
    traj.snapshots = Eigen::MatrixXd::Constant(4, 5, 3.25);
    const std::vector<Eigen::Index> group = {1, 2};
    const SnapshotPair pair = extract(traj, group);
    CHECK(pair.F == pair.Fp);
    CHECK(pair.F.rows() == 2);
    CHECK(pair.F.cols() == 4);
}

TEST_CASE("full-vector group gives an N x (k-1) matrix, shifted by one column") {
    const Trajectory traj = make_trajectory(6, 0, 9, 5);
    std::vector<Eigen::Index> group(6);
    for (Eigen::Index i = 0; i < 6; ++i) group[static_cast<std::size_t>(i)] = i;
    const SnapshotPair pair = extract(traj, group);
    CHECK(pair.F.rows() == 6);
    CHECK(pair.F.cols() == 9);
    CHECK(pair.Fp.leftCols(8) == pair.F.rightCols(8));
}

TEST_CASE("non-contiguous groups extract by gather") {
    const Trajectory traj = make_trajectory(5, 0, 4, 6);
    const std::vector<Eigen::Index> group = {4, 0, 2};
    const SnapshotPair pair = extract(traj, group);
    for (int c = 0; c < 4; ++c) {
        CHECK(pair.F(0, c) == traj.snapshots(4, c));
        CHECK(pair.F(1, c) == traj.snapshots(0, c));
        CHECK(pair.F(2, c) == traj.snapshots(2, c));
    }
}

TEST_CASE("out-of-range group indices are rejected") {
    const Trajectory traj = make_trajectory(3, 0, 2, 7);
    const std::vector<Eigen::Index> group = {0, 3};
    CHECK_THROWS_AS(extract(traj, group), ConfigError);
}

TEST_CASE("partition groups jointly cover each snapshot exactly once") {
    const Trajectory traj = make_trajectory(10, 0, 5, 8);
    const std::vector<Eigen::Index> a = {0, 1, 2, 3}, b = {4, 5, 6}, c = {7, 8, 9};
    Eigen::VectorXd seen = Eigen::VectorXd::Zero(10);
    for (const auto& group : {a, b, c}) {
        const SnapshotPair pair = extract(traj, group);
        for (std::size_t r = 0; r < group.size(); ++r) {
            seen(group[r]) += pair.F(static_cast<Eigen::Index>(r), 0);
        }
    }
    CHECK(seen == traj.snapshots.col(0));
}

TEST_CASE("trajectory file round trip is bitwise") {
    Trajectory traj = make_trajectory(152, 3500, 3520, 99);
    traj.arch_string = "1:10:10:2";
    traj.config_hash = "deadbeefdeadbeef";
    const fs::path path = fs::temp_directory_path() / "kooptrain_test.ktrj";
    save_trajectory(path, traj);

    const TrajectoryHeader header = read_trajectory_header(path);
    CHECK(header.param_count == 152);
    CHECK(header.t1 == 3500);
    CHECK(header.t2 == 3520);

    const Trajectory back = load_trajectory(path);
    CHECK(back.snapshots == traj.snapshots);  // bitwise
    CHECK(back.arch_string == traj.arch_string);
    CHECK(back.config_hash == traj.config_hash);
    fs::remove(path);
    fs::remove(path.string() + ".meta");
}

TEST_CASE("truncated trajectory files are reported") {
    Trajectory traj = make_trajectory(8, 0, 3, 1);
    const fs::path path = fs::temp_directory_path() / "kooptrain_trunc.ktrj";
    save_trajectory(path, traj);
    fs::resize_file(path, fs::file_size(path) - 16);
    CHECK_THROWS_AS(load_trajectory(path), IoError);
    fs::remove(path);
    fs::remove(path.string() + ".meta");
}

TEST_CASE("bad magic is rejected") {
    const fs::path path = fs::temp_directory_path() / "kooptrain_badmagic.ktrj";
    std::ofstream(path, std::ios::binary) << "NOPE0000000000000000000000000000";
    CHECK_THROWS_AS(read_trajectory_header(path), IoError);
    fs::remove(path);
}
