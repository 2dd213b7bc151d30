// Command-line front end: standard training, Koopman model construction,
// the full compare pipeline, the complexity benchmark, and file inspection.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "kooptrain/errors.hpp"
#include "kooptrain/experiment.hpp"
#include "kooptrain/koopman.hpp"
#include "kooptrain/recorder.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
    std::string config_path;
    std::optional<int> seeds;
    std::optional<std::string> out_dir;
    std::optional<int> workers;
    std::optional<std::string> mnist_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "Experiment config (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--seeds", args.seeds, "Override: run this many seeds (base kept)");
    cmd->add_option("--out", args.out_dir, "Override: output directory");
    cmd->add_option("--workers", args.workers, "Override: seed worker pool size");
    cmd->add_option("--mnist-dir", args.mnist_dir,
                    "Directory with the IDX files; absence keeps the config's data source");
}

koop::ExperimentConfig load_config(const CommonArgs& args) {
    koop::ExperimentConfig cfg = koop::parse_config(args.config_path);
    if (args.seeds) {
        if (*args.seeds < 1) throw koop::ConfigError("--seeds must be >= 1");
        const std::uint64_t base = cfg.seeds.empty() ? 1 : cfg.seeds.front();
        cfg.seeds.clear();
        for (int i = 0; i < *args.seeds; ++i) {
            cfg.seeds.push_back(base + static_cast<std::uint64_t>(i));
        }
    }
    if (args.out_dir) cfg.output_dir = *args.out_dir;
    if (args.workers) cfg.workers = *args.workers;
    if (args.mnist_dir) {
        cfg.classifier.data.source = "idx";
        cfg.classifier.data.idx_dir = *args.mnist_dir;
    }
    return cfg;
}

int report(const koop::ExperimentResult& result) {
    for (const auto& o : result.outcomes) {
        if (o.completed) {
            std::printf("seed %llu: ok\n", static_cast<unsigned long long>(o.seed));
        } else {
            std::printf("seed %llu: FAILED: %s\n", static_cast<unsigned long long>(o.seed),
                        o.error.c_str());
        }
    }
    if (!result.metrics_csv.empty()) {
        std::printf("metrics: %s\n", result.metrics_csv.string().c_str());
    }
    std::printf("manifest: %s\n", result.manifest_path.string().c_str());
    return result.all_completed() ? 0 : 1;
}

koop::Scheme scheme_from_cli(const std::string& name, int q) {
    if (name == "single_weight") return koop::Scheme::single_weight();
    if (name == "quasi_node") return koop::Scheme::quasi_node(q);
    if (name == "node") return koop::Scheme::node();
    if (name == "layer") return koop::Scheme::layer();
    if (name == "network") return koop::Scheme::network();
    throw koop::ConfigError("unknown scheme '" + name + "'");
}

int run_koopman_cmd(const std::string& traj_path, const std::string& arch_str,
                    const std::string& scheme_name, int q, std::uint64_t horizon,
                    double lambda, const std::string& out_dir) {
    koop::Trajectory traj = koop::load_trajectory(traj_path);
    std::string arch_text = arch_str;
    if (arch_text.empty()) {
        if (!traj.arch_string) {
            throw koop::ConfigError(
                "trajectory sidecar has no architecture; pass --arch explicitly");
        }
        arch_text = *traj.arch_string;
    }
    // Activation does not matter for partitioning; sigmoid stands in.
    const koop::Architecture arch =
        koop::Architecture::parse(arch_text, koop::Activation::Sigmoid, true);
    if (arch.param_count() != traj.param_count) {
        throw koop::ConfigError("architecture " + arch_text + " has " +
                                std::to_string(arch.param_count()) +
                                " parameters, trajectory has " +
                                std::to_string(traj.param_count));
    }
    const koop::Partition partition =
        koop::build_partition(arch, scheme_from_cli(scheme_name, q));
    koop::FlopCounter fc;
    auto [model, path] = koop::koopman_train(traj, partition, horizon, lambda, {}, &fc);

    fs::create_directories(out_dir);
    koop::save_model(fs::path(out_dir) / "model.kmod", model);
    double max_mod = 0;
    int on_circle = 0;
    for (const auto& patch : model.patches) {
        const koop::SpectralReport rep = koop::spectral_report(patch);
        max_mod = std::max(max_mod, rep.max_modulus);
        on_circle += rep.count_on_unit_circle;
    }
    std::printf("patches: %zu  construction MACs: %llu  per-step MACs: %llu\n",
                model.patches.size(), static_cast<unsigned long long>(fc.construction),
                static_cast<unsigned long long>(model.per_step_flops()));
    std::printf("max |eigenvalue|: %.6f  eigenvalues on unit circle (tol 1e-2): %d\n", max_mod,
                on_circle);
    std::printf("model: %s\n", (fs::path(out_dir) / "model.kmod").string().c_str());
    return 0;
}

int run_inspect(const std::string& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw koop::IoError("cannot open " + file);
    char magic[4] = {0, 0, 0, 0};
    in.read(magic, 4);
    in.close();
    if (std::string(magic, 4) == "KTRJ") {
        const koop::TrajectoryHeader h = koop::read_trajectory_header(file);
        std::printf("KTRJ v%u  N=%llu  t1=%llu  t2=%llu  snapshots=%llu\n", h.version,
                    static_cast<unsigned long long>(h.param_count),
                    static_cast<unsigned long long>(h.t1),
                    static_cast<unsigned long long>(h.t2),
                    static_cast<unsigned long long>(h.t2 - h.t1 + 1));
        const koop::Trajectory traj = koop::load_trajectory(file);
        if (traj.arch_string) std::printf("architecture: %s\n", traj.arch_string->c_str());
        if (traj.config_hash) std::printf("config_hash: %s\n", traj.config_hash->c_str());
        return 0;
    }
    if (std::string(magic, 4) == "KMOD") {
        const koop::KoopmanModel model = koop::load_model(file);
        std::printf("KMOD  N=%lld  horizon=%llu  patches=%zu\n",
                    static_cast<long long>(model.param_count),
                    static_cast<unsigned long long>(model.horizon), model.patches.size());
        std::printf("per-step MACs: %llu\n",
                    static_cast<unsigned long long>(model.per_step_flops()));
        return 0;
    }
    throw koop::IoError(file + ": unknown magic (expected KTRJ or KMOD)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Koopman-operator training for feedforward networks"};
    app.require_subcommand(1);

    CommonArgs train_args, compare_args;
    auto* train_cmd =
        app.add_subcommand("train", "Standard training only; records the snapshot window");
    add_common(train_cmd, train_args);
    auto* compare_cmd = app.add_subcommand(
        "compare", "Full pipeline: train, branch into standard vs Koopman, compare");
    add_common(compare_cmd, compare_args);

    std::string traj_path, arch_str, scheme_name = "node", koop_out = "out/koopman";
    int scheme_q = 0;
    std::uint64_t horizon = 1000;
    double lambda = 0.0;
    auto* koopman_cmd =
        app.add_subcommand("koopman", "Build Koopman patches from a recorded trajectory");
    koopman_cmd->add_option("--trajectory", traj_path, "KTRJ file")->required()
        ->check(CLI::ExistingFile);
    koopman_cmd->add_option("--arch", arch_str,
                            "Architecture (e.g. 1:10:10:2); default from sidecar");
    koopman_cmd->add_option("--scheme", scheme_name,
                            "single_weight|quasi_node|node|layer|network");
    koopman_cmd->add_option("--q", scheme_q, "Chunk size for quasi_node");
    koopman_cmd->add_option("--horizon", horizon, "Prediction steps T");
    koopman_cmd->add_option("--lambda", lambda, "Ridge parameter (0 = SVD pseudoinverse)");
    koopman_cmd->add_option("--out", koop_out, "Output directory");

    std::string widths_csv = "4,8,16", schemes_csv = "single_weight,node,layer,network";
    int bench_k = 100;
    std::string bench_out = "out/bench";
    auto* bench_cmd =
        app.add_subcommand("bench", "Complexity benchmark on synthetic cube networks");
    bench_cmd->add_option("--widths", widths_csv, "Comma-separated widths");
    bench_cmd->add_option("--k", bench_k, "Snapshot count");
    bench_cmd->add_option("--schemes", schemes_csv, "Comma-separated schemes");
    bench_cmd->add_option("--out", bench_out, "Output directory");

    std::string inspect_file;
    auto* inspect_cmd = app.add_subcommand("inspect", "Dump KTRJ / KMOD headers");
    inspect_cmd->add_option("file", inspect_file, "File to inspect")->required()
        ->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) {
            return report(koop::run_training_only(load_config(train_args)));
        }
        if (compare_cmd->parsed()) {
            return report(koop::run_experiment(load_config(compare_args)));
        }
        if (koopman_cmd->parsed()) {
            return run_koopman_cmd(traj_path, arch_str, scheme_name, scheme_q, horizon, lambda,
                                   koop_out);
        }
        if (bench_cmd->parsed()) {
            std::vector<int> widths;
            for (std::size_t pos = 0; pos < widths_csv.size();) {
                const std::size_t comma = widths_csv.find(',', pos);
                widths.push_back(std::stoi(widths_csv.substr(pos, comma - pos)));
                if (comma == std::string::npos) break;
                pos = comma + 1;
            }
            std::vector<koop::Scheme> schemes;
            for (std::size_t pos = 0; pos < schemes_csv.size();) {
                const std::size_t comma = schemes_csv.find(',', pos);
                std::string name = schemes_csv.substr(pos, comma - pos);
                int q = 0;
                if (const auto at = name.find('@'); at != std::string::npos) {
                    q = std::stoi(name.substr(at + 1));  // e.g. quasi_node@8
                    name = name.substr(0, at);
                }
                schemes.push_back(scheme_from_cli(name, q));
                if (comma == std::string::npos) break;
                pos = comma + 1;
            }
            const auto rows = koop::bench_complexity(widths, bench_k, schemes);
            fs::create_directories(bench_out);
            const fs::path csv = fs::path(bench_out) / "complexity.csv";
            koop::write_bench_csv(csv, rows);
            for (const auto& r : rows) {
                std::printf("%-16s n=%-3d construction=%llu (predicted %g)  per_step=%llu "
                            "(predicted %g)%s\n",
                            r.scheme.c_str(), r.n,
                            static_cast<unsigned long long>(r.construction_flops),
                            r.predicted_construction,
                            static_cast<unsigned long long>(r.per_step_flops),
                            r.predicted_per_step, r.skipped ? "  [skipped]" : "");
            }
            std::printf("csv: %s\n", csv.string().c_str());
            return 0;
        }
        if (inspect_cmd->parsed()) return run_inspect(inspect_file);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
