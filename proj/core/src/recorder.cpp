#include "kooptrain/recorder.hpp"

#include <cstring>
#include <fstream>

#include "kooptrain/errors.hpp"

namespace koop {

namespace {

constexpr char kMagic[4] = {'K', 'T', 'R', 'J'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_le(std::ostream& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    // Little-endian host assumed (x86/arm); asserted at load time via magic.
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
void read_le(std::istream& in, T& value, const std::string& what) {
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw IoError("trajectory file truncated while reading " + what);
}

}  // namespace

Eigen::VectorXd Trajectory::snapshot(std::uint64_t t) const {
    if (t < t1 || t > t2) {
        throw ConfigError("snapshot t=" + std::to_string(t) + " outside [" +
                          std::to_string(t1) + ", " + std::to_string(t2) + "]");
    }
    return snapshots.col(static_cast<Eigen::Index>(t - t1));
}

TrajectoryRecorder::TrajectoryRecorder(Eigen::Index param_count, std::uint64_t t1,
                                       std::uint64_t t2)
    : n_(param_count), t1_(t1), t2_(t2), next_(t1) {
    if (t1 >= t2) {
        throw ConfigError("recording window needs t1 < t2, got t1=" + std::to_string(t1) +
                          " t2=" + std::to_string(t2));
    }
    data_.resize(n_, static_cast<Eigen::Index>(t2 - t1 + 1));
}

void TrajectoryRecorder::observe(std::uint64_t t, const ParamVector& w) {
    if (t < t1_ || t > t2_) return;
    if (t != next_) {
        throw ConfigError("recorder expected snapshot t=" + std::to_string(next_) +
                          ", got t=" + std::to_string(t));
    }
    if (w.size() != n_) throw ConfigError("recorder: parameter length changed mid-run");
    data_.col(static_cast<Eigen::Index>(t - t1_)) = w;
    ++next_;
}

Trajectory TrajectoryRecorder::take() {
    if (!complete()) {
        throw ConfigError("trajectory incomplete: next expected snapshot t=" +
                          std::to_string(next_));
    }
    Trajectory traj;
    traj.param_count = n_;
    traj.t1 = t1_;
    traj.t2 = t2_;
    traj.snapshots = std::move(data_);
    data_.resize(n_, 0);
    next_ = t1_;
    return traj;
}

SnapshotPair extract(const Trajectory& traj, std::span<const Eigen::Index> group) {
    const Eigen::Index k = traj.snapshot_count();
    if (k < 2) throw ConfigError("extract: need at least 2 snapshots");
    const Eigen::Index m = static_cast<Eigen::Index>(group.size());
    SnapshotPair pair;
    pair.group.assign(group.begin(), group.end());
    for (Eigen::Index i : group) {
        if (i < 0 || i >= traj.param_count) {
            throw ConfigError("extract: index " + std::to_string(i) + " out of range [0, " +
                              std::to_string(traj.param_count) + ")");
        }
    }
    pair.F.resize(m, k - 1);
    pair.Fp.resize(m, k - 1);
    // Contiguous groups are the common case under the flat ordering.
    bool contiguous = m > 0;
    for (Eigen::Index i = 1; i < m; ++i) {
        if (group[static_cast<size_t>(i)] != group[static_cast<size_t>(i - 1)] + 1) {
            contiguous = false;
            break;
        }
    }
    if (contiguous) {
        const Eigen::Index first = group[0];
        pair.F = traj.snapshots.block(first, 0, m, k - 1);
        pair.Fp = traj.snapshots.block(first, 1, m, k - 1);
    } else {
        for (Eigen::Index r = 0; r < m; ++r) {
            const Eigen::Index idx = group[static_cast<size_t>(r)];
            pair.F.row(r) = traj.snapshots.row(idx).head(k - 1);
            pair.Fp.row(r) = traj.snapshots.row(idx).tail(k - 1);
        }
    }
    return pair;
}

void save_trajectory(const std::filesystem::path& path, const Trajectory& traj) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open trajectory file for writing: " + path.string());
    out.write(kMagic, 4);
    write_le(out, kVersion);
    write_le(out, static_cast<std::uint64_t>(traj.param_count));
    write_le(out, traj.t1);
    write_le(out, traj.t2);
    // One record per snapshot; column-major storage makes each column a
    // contiguous run of N doubles.
    for (Eigen::Index c = 0; c < traj.snapshot_count(); ++c) {
        out.write(reinterpret_cast<const char*>(traj.snapshots.col(c).data()),
                  static_cast<std::streamsize>(sizeof(double)) * traj.param_count);
    }
    if (!out) throw IoError("write failed for trajectory file: " + path.string());
    out.close();

    std::ofstream meta(path.string() + ".meta", std::ios::trunc);
    if (meta) {
        meta << "architecture " << traj.arch_string.value_or("?") << "\n";
        meta << "config_hash " << traj.config_hash.value_or("?") << "\n";
    }
}

TrajectoryHeader read_trajectory_header(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open trajectory file: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw IoError("bad magic in " + path.string() + " (expected KTRJ)");
    }
    TrajectoryHeader h{};
    read_le(in, h.version, "version");
    if (h.version != kVersion) {
        throw IoError("unsupported trajectory format version " + std::to_string(h.version));
    }
    read_le(in, h.param_count, "param count");
    read_le(in, h.t1, "t1");
    read_le(in, h.t2, "t2");
    if (h.t1 >= h.t2) throw IoError("corrupt trajectory header: t1 >= t2");
    return h;
}

Trajectory load_trajectory(const std::filesystem::path& path) {
    const TrajectoryHeader h = read_trajectory_header(path);
    std::ifstream in(path, std::ios::binary);
    in.seekg(4 + sizeof(std::uint32_t) + 3 * sizeof(std::uint64_t));

    Trajectory traj;
    traj.param_count = static_cast<Eigen::Index>(h.param_count);
    traj.t1 = h.t1;
    traj.t2 = h.t2;
    const Eigen::Index k = static_cast<Eigen::Index>(h.t2 - h.t1 + 1);
    traj.snapshots.resize(traj.param_count, k);
    for (Eigen::Index c = 0; c < k; ++c) {
        in.read(reinterpret_cast<char*>(traj.snapshots.col(c).data()),
                static_cast<std::streamsize>(sizeof(double)) * traj.param_count);
        if (!in) {
            throw IoError("trajectory file truncated at snapshot " +
                          std::to_string(h.t1 + static_cast<std::uint64_t>(c)));
        }
    }

    std::ifstream meta(path.string() + ".meta");
    if (meta) {
        std::string key, value;
        while (meta >> key >> value) {
            if (key == "architecture" && value != "?") traj.arch_string = value;
            if (key == "config_hash" && value != "?") traj.config_hash = value;
        }
    }
    return traj;
}

}  // namespace koop
