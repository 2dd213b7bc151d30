#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "kooptrain/metrics.hpp"
#include "kooptrain/optimizers.hpp"
#include "kooptrain/param_space.hpp"
#include "kooptrain/tasks.hpp"

namespace koop {

enum class TaskKind { DeSolver, Classifier, Perceptron };

std::string to_string(TaskKind k);

struct DeTaskConfig {
    std::string architecture = "1:10:10:2";
    Hamiltonian hamiltonian = Hamiltonian::Harmonic;
    double x0 = 1.0;
    double p0 = 0.0;
    double t_max = 4.0 * 3.14159265358979323846;
    int collocation_points = 200;

    DESolverTask make_task() const;
};

struct ClassifierDataConfig {
    std::string source = "synthetic";  // synthetic | idx
    std::string idx_dir;
    std::uint64_t seed = 12345;
    double noise_amplitude = 0.8;
    int max_shift = 4;
    double warp_amplitude = 0.0;
    Eigen::Index train_count = 60032;
    Eigen::Index test_count = 10000;
};

struct ClassifierTaskConfig {
    std::string architecture = "784:20:20:20:10";
    int train_batch = 64;
    int test_batch = 1000;
    int epochs = 10;
    ClassifierDataConfig data;
};

struct PerceptronTaskConfig {
    PerceptronTask task;
    std::uint64_t t_switch = 100;
};

struct WindowConfig {
    std::uint64_t t1 = 0;
    std::uint64_t t2 = 0;
    std::uint64_t horizon = 0;  // T
    /// "iteration" or "epoch". With epochs, t1 names the epoch whose start
    /// opens the window, t2 the epoch whose end closes it.
    std::string unit = "iteration";
};

struct PartitionConfig {
    /// Uniform scheme, or one entry per weight layer.
    std::optional<Scheme> uniform = Scheme::node();
    std::vector<Scheme> per_layer;

    Partition build(const Architecture& arch) const;
    std::string describe() const;
};

struct ExperimentFlags {
    bool record_flops = true;
    bool include_construction_in_speedup = false;
    bool write_trajectories = true;
    bool write_models = true;
};

struct ExperimentConfig {
    TaskKind task_kind = TaskKind::DeSolver;
    DeTaskConfig de;
    ClassifierTaskConfig classifier;
    PerceptronTaskConfig perceptron;

    OptimizerKind optimizer = OptimizerKind::Adadelta;
    OptimizerHyper hyper;

    WindowConfig window;
    PartitionConfig partition;
    double lambda = 0.0;
    /// Relative SVD cutoff override for patch construction (0 = numerical
    /// rank default).
    double rank_tolerance = 0.0;

    std::vector<std::uint64_t> seeds = {1};
    std::filesystem::path output_dir = "out";
    int workers = 1;
    ExperimentFlags flags;
};

/// Strict JSON config parsing: unknown keys are errors, every default lands
/// in the manifest.
ExperimentConfig parse_config(const std::filesystem::path& path);
ExperimentConfig parse_config_string(const std::string& json_text);

/// Canonical JSON of the fully resolved config (defaults included).
std::string config_to_json(const ExperimentConfig& cfg);
/// FNV-1a over the canonical JSON.
std::string config_hash(const ExperimentConfig& cfg);

struct SeedOutcome {
    std::uint64_t seed = 0;
    bool completed = false;
    std::string error;
    RunMetrics metrics;
};

struct ExperimentResult {
    std::vector<SeedOutcome> outcomes;
    std::filesystem::path metrics_csv;
    std::filesystem::path manifest_path;

    bool all_completed() const;
};

/// Full standard-vs-Koopman pipeline: per seed, train to t2 recording
/// [t1, t2], branch A continues T standard steps, branch B Koopman-trains,
/// and metrics compare the branches. Artifacts land under
/// cfg.output_dir/seed_<s>/ plus metrics.csv and manifest.json at the root.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// Standard training only (trajectory + loss series per seed).
ExperimentResult run_training_only(const ExperimentConfig& cfg);

struct BenchRow {
    std::string scheme;
    int n = 0;
    int k = 0;
    std::uint64_t construction_flops = 0;
    std::uint64_t per_step_flops = 0;
    double predicted_construction = 0;
    double predicted_per_step = 0;
    double construction_seconds = 0;
    double per_step_seconds = 0;
    bool skipped = false;
};

/// Builds cube networks (n-1 hidden layers, width n), random-walk
/// trajectories of length k, and times/counts every scheme against the
/// predicted complexity formulas.
std::vector<BenchRow> bench_complexity(const std::vector<int>& widths, int k,
                                       const std::vector<Scheme>& schemes);

void write_bench_csv(const std::filesystem::path& path, const std::vector<BenchRow>& rows);

}  // namespace koop
