#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kooptrain/param_space.hpp"

namespace koop {

/// The recorded weight/bias path w(t) for t in [t1, t2], one snapshot per
/// optimizer update, 64-bit floats. Column c of `snapshots` is w(t1 + c).
struct Trajectory {
    Eigen::Index param_count = 0;
    std::uint64_t t1 = 0;
    std::uint64_t t2 = 0;
    Eigen::MatrixXd snapshots;  // param_count x (t2 - t1 + 1)
    std::optional<std::string> arch_string;
    std::optional<std::string> config_hash;

    Eigen::Index snapshot_count() const { return snapshots.cols(); }
    /// Snapshot at absolute iteration t (t1 <= t <= t2).
    Eigen::VectorXd snapshot(std::uint64_t t) const;
};

/// Collects snapshots emitted by a training loop. observe(t, w) must be
/// called with consecutive t; snapshots outside [t1, t2] are ignored.
class TrajectoryRecorder {
public:
    TrajectoryRecorder(Eigen::Index param_count, std::uint64_t t1, std::uint64_t t2);

    void observe(std::uint64_t t, const ParamVector& w);
    bool complete() const { return next_ == t2_ + 1; }
    /// Finalizes and returns the trajectory; recorder is empty afterwards.
    Trajectory take();

private:
    Eigen::Index n_;
    std::uint64_t t1_, t2_, next_;
    Eigen::MatrixXd data_;
};

/// Per-group snapshot matrices: column i of F is the group's slice of
/// w(t1 + i); Fp is F shifted one step ahead.
struct SnapshotPair {
    Eigen::MatrixXd F;   // m x (k-1)
    Eigen::MatrixXd Fp;  // m x (k-1)
    std::vector<Eigen::Index> group;
};

SnapshotPair extract(const Trajectory& traj, std::span<const Eigen::Index> group);

// ---------------------------------------------------------------------------
// KTRJ file format (binary, little-endian):
//   magic "KTRJ" | u32 version | u64 N | u64 t1 | u64 t2 |
//   (t2-t1+1) records of N doubles.
// A sidecar text file <path>.meta carries the architecture string and the
// config hash.
// ---------------------------------------------------------------------------

void save_trajectory(const std::filesystem::path& path, const Trajectory& traj);
Trajectory load_trajectory(const std::filesystem::path& path);

struct TrajectoryHeader {
    std::uint32_t version;
    std::uint64_t param_count, t1, t2;
};
TrajectoryHeader read_trajectory_header(const std::filesystem::path& path);

}  // namespace koop
