#include "kooptrain/experiment.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <random>
#include <thread>

#include <json.hpp>

#include "kooptrain/errors.hpp"
#include "kooptrain/koopman.hpp"
#include "kooptrain/training.hpp"

namespace koop {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::uint64_t fnv1a(const unsigned char* data, std::size_t n, std::uint64_t h = 14695981039346656037ULL) {
    for (std::size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string param_hash(const ParamVector& v) {
    return hex64(fnv1a(reinterpret_cast<const unsigned char*>(v.data()),
                       static_cast<std::size_t>(v.size()) * sizeof(double)));
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    // splitmix64 finalizer
    std::uint64_t z = seed + salt + 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

std::string to_string(TaskKind k) {
    switch (k) {
        case TaskKind::DeSolver: return "de_solver";
        case TaskKind::Classifier: return "classifier";
        case TaskKind::Perceptron: return "perceptron";
    }
    return "?";
}

DESolverTask DeTaskConfig::make_task() const {
    DESolverTask task;
    task.arch = Architecture::parse(architecture, Activation::Sigmoid, true);
    task.hamiltonian = hamiltonian;
    task.x0 = x0;
    task.p0 = p0;
    task.t_max = t_max;
    task.n_points = collocation_points;
    return task;
}

Partition PartitionConfig::build(const Architecture& arch) const {
    if (!per_layer.empty()) return build_partition(arch, per_layer);
    if (!uniform) throw ConfigError("partition config is empty");
    return build_partition(arch, *uniform);
}

std::string PartitionConfig::describe() const {
    if (per_layer.empty()) return uniform ? to_string(*uniform) : "?";
    std::string s = "mixed[";
    for (std::size_t i = 0; i < per_layer.size(); ++i) {
        if (i) s += ',';
        s += to_string(per_layer[i]);
    }
    return s + "]";
}

// ---------------------------------------------------------------------------
// Config parsing (strict)
// ---------------------------------------------------------------------------

namespace {

void expect_object(const json& j, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
}

void check_keys(const json& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
    for (const auto& item : obj.items()) {
        bool ok = false;
        for (const char* k : allowed) {
            if (item.key() == k) {
                ok = true;
                break;
            }
        }
        if (!ok) throw ConfigError("unknown key '" + item.key() + "' in " + where);
    }
}

template <typename T>
T get_field(const json& obj, const char* key, const std::string& where, T def) {
    if (!obj.contains(key)) return def;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

Scheme parse_scheme(const json& obj, const std::string& where) {
    expect_object(obj, where);
    check_keys(obj, where, {"scheme", "q"});
    const std::string name = get_field<std::string>(obj, "scheme", where, "");
    const int q = get_field<int>(obj, "q", where, 0);
    if (name == "single_weight") return Scheme::single_weight();
    if (name == "quasi_node") {
        if (q < 1) throw ConfigError(where + ": quasi_node needs q >= 1");
        return Scheme::quasi_node(q);
    }
    if (name == "node") return Scheme::node();
    if (name == "layer") return Scheme::layer();
    if (name == "network") return Scheme::network();
    throw ConfigError(where + ": unknown scheme '" + name + "'");
}

LrSchedule parse_lr(const json& obj, const std::string& where) {
    expect_object(obj, where);
    check_keys(obj, where, {"kind", "value", "a", "b"});
    const std::string kind = get_field<std::string>(obj, "kind", where, "constant");
    if (kind == "constant") {
        return LrSchedule::constant(get_field<double>(obj, "value", where, 1.0));
    }
    if (kind == "decay") {
        const double a = get_field<double>(obj, "a", where, 1.0);
        const double b = get_field<double>(obj, "b", where, 0.0);
        if (a <= 0 || b < 0) throw ConfigError(where + ": decay needs a > 0, b >= 0");
        return LrSchedule::decay(a, b);
    }
    throw ConfigError(where + ": unknown lr kind '" + kind + "'");
}

}  // namespace

ExperimentConfig parse_config_string(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    expect_object(root, "config");
    check_keys(root, "config",
               {"task", "optimizer", "window", "partition", "lambda", "rank_tolerance",
                "seeds", "output_dir", "workers", "flags"});

    ExperimentConfig cfg;

    if (!root.contains("task")) throw ConfigError("config.task is required");
    const json& task = root.at("task");
    expect_object(task, "task");
    const std::string kind = get_field<std::string>(task, "kind", "task", "");
    if (kind == "de_solver") {
        cfg.task_kind = TaskKind::DeSolver;
        check_keys(task, "task",
                   {"kind", "architecture", "hamiltonian", "x0", "p0", "t_max",
                    "collocation_points"});
        cfg.de.architecture = get_field<std::string>(task, "architecture", "task",
                                                     cfg.de.architecture);
        cfg.de.hamiltonian = hamiltonian_from_string(
            get_field<std::string>(task, "hamiltonian", "task", "harmonic"));
        cfg.de.x0 = get_field<double>(task, "x0", "task", cfg.de.x0);
        cfg.de.p0 = get_field<double>(task, "p0", "task", cfg.de.p0);
        cfg.de.t_max = get_field<double>(task, "t_max", "task", cfg.de.t_max);
        cfg.de.collocation_points =
            get_field<int>(task, "collocation_points", "task", cfg.de.collocation_points);
        if (cfg.de.collocation_points < 1) throw ConfigError("task.collocation_points >= 1");
    } else if (kind == "classifier") {
        cfg.task_kind = TaskKind::Classifier;
        check_keys(task, "task",
                   {"kind", "architecture", "train_batch", "test_batch", "epochs", "data"});
        auto& c = cfg.classifier;
        c.architecture = get_field<std::string>(task, "architecture", "task", c.architecture);
        c.train_batch = get_field<int>(task, "train_batch", "task", c.train_batch);
        c.test_batch = get_field<int>(task, "test_batch", "task", c.test_batch);
        c.epochs = get_field<int>(task, "epochs", "task", c.epochs);
        if (task.contains("data")) {
            const json& data = task.at("data");
            expect_object(data, "task.data");
            check_keys(data, "task.data",
                       {"source", "dir", "seed", "noise_amplitude", "max_shift", "warp_amplitude", "train_count",
                        "test_count"});
            c.data.source = get_field<std::string>(data, "source", "task.data", c.data.source);
            c.data.idx_dir = get_field<std::string>(data, "dir", "task.data", c.data.idx_dir);
            c.data.seed = get_field<std::uint64_t>(data, "seed", "task.data", c.data.seed);
            c.data.noise_amplitude =
                get_field<double>(data, "noise_amplitude", "task.data", c.data.noise_amplitude);
            c.data.max_shift = get_field<int>(data, "max_shift", "task.data", c.data.max_shift);
            c.data.warp_amplitude =
                get_field<double>(data, "warp_amplitude", "task.data", c.data.warp_amplitude);
            c.data.train_count = get_field<Eigen::Index>(data, "train_count", "task.data",
                                                         c.data.train_count);
            c.data.test_count =
                get_field<Eigen::Index>(data, "test_count", "task.data", c.data.test_count);
            if (c.data.source != "synthetic" && c.data.source != "idx") {
                throw ConfigError("task.data.source must be synthetic|idx");
            }
        }
    } else if (kind == "perceptron") {
        cfg.task_kind = TaskKind::Perceptron;
        check_keys(task, "task",
                   {"kind", "steps", "eta", "activation_prob", "init", "t_switch",
                    "correlated_inputs"});
        auto& p = cfg.perceptron;
        p.task.steps = get_field<int>(task, "steps", "task", p.task.steps);
        p.task.eta = get_field<double>(task, "eta", "task", p.task.eta);
        p.task.activation_prob =
            get_field<double>(task, "activation_prob", "task", p.task.activation_prob);
        p.task.correlated_inputs =
            get_field<bool>(task, "correlated_inputs", "task", p.task.correlated_inputs);
        if (task.contains("init")) {
            const auto init = task.at("init");
            if (!init.is_array() || init.size() != 2) {
                throw ConfigError("task.init must be [low, high]");
            }
            p.task.init_low = init.at(0).get<double>();
            p.task.init_high = init.at(1).get<double>();
        }
        p.t_switch = get_field<std::uint64_t>(task, "t_switch", "task", p.t_switch);
    } else {
        throw ConfigError("task.kind must be de_solver|classifier|perceptron, got '" + kind +
                          "'");
    }

    if (root.contains("optimizer")) {
        const json& opt = root.at("optimizer");
        expect_object(opt, "optimizer");
        check_keys(opt, "optimizer",
                   {"kind", "lr", "beta1", "beta2", "rho", "eps", "gamma"});
        cfg.optimizer =
            optimizer_kind_from_string(get_field<std::string>(opt, "kind", "optimizer", "adadelta"));
        // Paper-faithful epsilon defaults: Adam 1e-8, Adadelta/Adagrad 1e-6.
        cfg.hyper.eps = cfg.optimizer == OptimizerKind::Adam ? 1e-8 : 1e-6;
        if (opt.contains("lr")) cfg.hyper.lr = parse_lr(opt.at("lr"), "optimizer.lr");
        cfg.hyper.beta1 = get_field<double>(opt, "beta1", "optimizer", cfg.hyper.beta1);
        cfg.hyper.beta2 = get_field<double>(opt, "beta2", "optimizer", cfg.hyper.beta2);
        cfg.hyper.rho = get_field<double>(opt, "rho", "optimizer", cfg.hyper.rho);
        cfg.hyper.eps = get_field<double>(opt, "eps", "optimizer", cfg.hyper.eps);
        cfg.hyper.gamma = get_field<double>(opt, "gamma", "optimizer", cfg.hyper.gamma);
    } else if (cfg.task_kind != TaskKind::Perceptron) {
        throw ConfigError("config.optimizer is required for this task");
    }

    if (root.contains("window")) {
        const json& win = root.at("window");
        expect_object(win, "window");
        check_keys(win, "window", {"t1", "t2", "horizon", "unit"});
        cfg.window.t1 = get_field<std::uint64_t>(win, "t1", "window", 0);
        cfg.window.t2 = get_field<std::uint64_t>(win, "t2", "window", 0);
        cfg.window.horizon = get_field<std::uint64_t>(win, "horizon", "window", 0);
        cfg.window.unit = get_field<std::string>(win, "unit", "window", "iteration");
        if (cfg.window.unit != "iteration" && cfg.window.unit != "epoch") {
            throw ConfigError("window.unit must be iteration|epoch");
        }
        if (cfg.window.t1 >= cfg.window.t2) throw ConfigError("window needs t1 < t2");
        if (cfg.window.horizon < 1) throw ConfigError("window.horizon must be >= 1");
    } else if (cfg.task_kind != TaskKind::Perceptron) {
        throw ConfigError("config.window is required for this task");
    }

    if (root.contains("partition")) {
        const json& part = root.at("partition");
        if (part.is_array()) {
            cfg.partition.uniform.reset();
            for (std::size_t i = 0; i < part.size(); ++i) {
                cfg.partition.per_layer.push_back(
                    parse_scheme(part.at(i), "partition[" + std::to_string(i) + "]"));
            }
        } else {
            cfg.partition.uniform = parse_scheme(part, "partition");
        }
    }

    cfg.lambda = get_field<double>(root, "lambda", "config", cfg.lambda);
    if (cfg.lambda < 0) throw ConfigError("lambda must be >= 0");
    cfg.rank_tolerance =
        get_field<double>(root, "rank_tolerance", "config", cfg.rank_tolerance);
    if (cfg.rank_tolerance < 0) throw ConfigError("rank_tolerance must be >= 0");

    if (root.contains("seeds")) {
        const json& seeds = root.at("seeds");
        cfg.seeds.clear();
        if (seeds.is_array()) {
            for (const auto& s : seeds) cfg.seeds.push_back(s.get<std::uint64_t>());
        } else {
            expect_object(seeds, "seeds");
            check_keys(seeds, "seeds", {"count", "base"});
            const auto count = get_field<std::uint64_t>(seeds, "count", "seeds", 1);
            const auto base = get_field<std::uint64_t>(seeds, "base", "seeds", 1);
            for (std::uint64_t i = 0; i < count; ++i) cfg.seeds.push_back(base + i);
        }
        if (cfg.seeds.empty()) throw ConfigError("seeds must be non-empty");
    }

    cfg.output_dir = get_field<std::string>(root, "output_dir", "config", "out");
    cfg.workers = get_field<int>(root, "workers", "config", 1);
    if (cfg.workers < 1) throw ConfigError("workers must be >= 1");

    if (root.contains("flags")) {
        const json& flags = root.at("flags");
        expect_object(flags, "flags");
        check_keys(flags, "flags",
                   {"record_flops", "include_construction_in_speedup", "write_trajectories",
                    "write_models"});
        cfg.flags.record_flops =
            get_field<bool>(flags, "record_flops", "flags", cfg.flags.record_flops);
        cfg.flags.include_construction_in_speedup =
            get_field<bool>(flags, "include_construction_in_speedup", "flags",
                            cfg.flags.include_construction_in_speedup);
        cfg.flags.write_trajectories =
            get_field<bool>(flags, "write_trajectories", "flags", cfg.flags.write_trajectories);
        cfg.flags.write_models =
            get_field<bool>(flags, "write_models", "flags", cfg.flags.write_models);
    }
    return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config_string(text);
}

namespace {

json scheme_to_json(const Scheme& s) {
    json j;
    switch (s.kind) {
        case SchemeKind::SingleWeight: j["scheme"] = "single_weight"; break;
        case SchemeKind::QuasiNode: j["scheme"] = "quasi_node"; j["q"] = s.q; break;
        case SchemeKind::Node: j["scheme"] = "node"; break;
        case SchemeKind::Layer: j["scheme"] = "layer"; break;
        case SchemeKind::Network: j["scheme"] = "network"; break;
    }
    return j;
}

}  // namespace

std::string config_to_json(const ExperimentConfig& cfg) {
    json root;
    json task;
    task["kind"] = to_string(cfg.task_kind);
    switch (cfg.task_kind) {
        case TaskKind::DeSolver:
            task["architecture"] = cfg.de.architecture;
            task["hamiltonian"] = to_string(cfg.de.hamiltonian);
            task["x0"] = cfg.de.x0;
            task["p0"] = cfg.de.p0;
            task["t_max"] = cfg.de.t_max;
            task["collocation_points"] = cfg.de.collocation_points;
            break;
        case TaskKind::Classifier: {
            const auto& c = cfg.classifier;
            task["architecture"] = c.architecture;
            task["train_batch"] = c.train_batch;
            task["test_batch"] = c.test_batch;
            task["epochs"] = c.epochs;
            json data;
            data["source"] = c.data.source;
            data["dir"] = c.data.idx_dir;
            data["seed"] = c.data.seed;
            data["noise_amplitude"] = c.data.noise_amplitude;
            data["max_shift"] = c.data.max_shift;
            data["warp_amplitude"] = c.data.warp_amplitude;
            data["train_count"] = c.data.train_count;
            data["test_count"] = c.data.test_count;
            task["data"] = data;
            break;
        }
        case TaskKind::Perceptron: {
            const auto& p = cfg.perceptron;
            task["steps"] = p.task.steps;
            task["eta"] = p.task.eta;
            task["activation_prob"] = p.task.activation_prob;
            task["init"] = {p.task.init_low, p.task.init_high};
            task["t_switch"] = p.t_switch;
            task["correlated_inputs"] = p.task.correlated_inputs;
            break;
        }
    }
    root["task"] = task;

    json opt;
    opt["kind"] = to_string(cfg.optimizer);
    json lr;
    lr["kind"] = cfg.hyper.lr.kind == LrSchedule::Kind::Constant ? "constant" : "decay";
    if (cfg.hyper.lr.kind == LrSchedule::Kind::Constant) {
        lr["value"] = cfg.hyper.lr.a;
    } else {
        lr["a"] = cfg.hyper.lr.a;
        lr["b"] = cfg.hyper.lr.b;
    }
    opt["lr"] = lr;
    opt["beta1"] = cfg.hyper.beta1;
    opt["beta2"] = cfg.hyper.beta2;
    opt["rho"] = cfg.hyper.rho;
    opt["eps"] = cfg.hyper.eps;
    opt["gamma"] = cfg.hyper.gamma;
    root["optimizer"] = opt;

    json win;
    win["t1"] = cfg.window.t1;
    win["t2"] = cfg.window.t2;
    win["horizon"] = cfg.window.horizon;
    win["unit"] = cfg.window.unit;
    root["window"] = win;

    if (!cfg.partition.per_layer.empty()) {
        json arr = json::array();
        for (const auto& s : cfg.partition.per_layer) arr.push_back(scheme_to_json(s));
        root["partition"] = arr;
    } else if (cfg.partition.uniform) {
        root["partition"] = scheme_to_json(*cfg.partition.uniform);
    }

    root["lambda"] = cfg.lambda;
    root["rank_tolerance"] = cfg.rank_tolerance;
    root["seeds"] = cfg.seeds;
    root["output_dir"] = cfg.output_dir.string();
    root["workers"] = cfg.workers;
    json flags;
    flags["record_flops"] = cfg.flags.record_flops;
    flags["include_construction_in_speedup"] = cfg.flags.include_construction_in_speedup;
    flags["write_trajectories"] = cfg.flags.write_trajectories;
    flags["write_models"] = cfg.flags.write_models;
    root["flags"] = flags;
    return root.dump(2);
}

std::string config_hash(const ExperimentConfig& cfg) {
    const std::string text = config_to_json(cfg);
    return hex64(fnv1a(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

// ---------------------------------------------------------------------------
// Pipelines
// ---------------------------------------------------------------------------

namespace {

struct ResolvedWindow {
    std::uint64_t t1 = 0, t2 = 0, horizon = 0;  // iterations
    double horizon_native = 0;                  // in the config's unit
};

ResolvedWindow resolve_window(const WindowConfig& win, Eigen::Index iterations_per_epoch) {
    ResolvedWindow r;
    if (win.unit == "iteration") {
        r.t1 = win.t1;
        r.t2 = win.t2;
        r.horizon = win.horizon;
        r.horizon_native = static_cast<double>(win.horizon);
        return r;
    }
    if (iterations_per_epoch < 1) {
        throw ConfigError("epoch window unit needs an epoch-structured task");
    }
    const auto ipe = static_cast<std::uint64_t>(iterations_per_epoch);
    if (win.t1 < 1) throw ConfigError("epoch window: t1 names the first recorded epoch (>= 1)");
    r.t1 = (win.t1 - 1) * ipe;  // start of epoch t1
    r.t2 = win.t2 * ipe;        // end of epoch t2
    r.horizon = win.horizon * ipe;
    r.horizon_native = static_cast<double>(win.horizon);
    return r;
}

void write_loss_series_csv(const std::filesystem::path& path, std::uint64_t first_t,
                           const std::vector<double>& losses) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "t,loss\n";
    for (std::size_t i = 0; i < losses.size(); ++i) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g", losses[i]);
        out << (first_t + i) << ',' << buf << '\n';
    }
}

double max_patch_modulus(KoopmanModel& model, const FiniteSectionOptions& opts) {
    double mx = 0;
    for (auto& patch : model.patches) {
        compute_patch_spectrum(patch, opts);
        mx = std::max(mx, spectral_report(patch).max_modulus);
    }
    return mx;
}

struct SeedContext {
    const ExperimentConfig& cfg;
    std::filesystem::path seed_dir;
    std::string cfg_hash;
    const ClassifierTask* classifier_task = nullptr;  // shared, classifier runs only
};

json metrics_to_json(const RunMetrics& m) {
    json j;
    j["t_eq"] = m.t_eq;
    j["t_eq_over_T"] = m.t_eq_over_t;
    j["success"] = m.success;
    j["speedup_excl"] = std::isinf(m.speedup.excluding_construction)
                            ? json("inf")
                            : json(m.speedup.excluding_construction);
    j["speedup_incl"] = std::isinf(m.speedup.including_construction)
                            ? json("inf")
                            : json(m.speedup.including_construction);
    j["median_error_ratio"] = m.median_error_ratio;
    j["max_patch_modulus"] = m.max_patch_modulus;
    j["diverged"] = m.diverged;
    j["note"] = m.note;
    json t;
    t["standard_train_s"] = m.timing.standard_train_s;
    t["branch_standard_s"] = m.timing.branch_standard_s;
    t["construction_s"] = m.timing.construction_s;
    t["prediction_s"] = m.timing.prediction_s;
    j["timing"] = t;
    json f;
    f["forward"] = m.flops.forward;
    f["backward"] = m.flops.backward;
    f["update"] = m.flops.update;
    f["construction"] = m.flops.construction;
    f["prediction"] = m.flops.prediction;
    f["standard_steps"] = m.standard_steps_counted;
    f["prediction_steps"] = m.prediction_steps_counted;
    j["flops"] = f;
    return j;
}

// DE solver: fixed batch, per-iteration loss series, integer T^eq.
RunMetrics run_de_seed(const SeedContext& ctx, std::uint64_t seed, json& extra) {
    const ExperimentConfig& cfg = ctx.cfg;
    const DESolverTask task = cfg.de.make_task();
    const ResolvedWindow win = resolve_window(cfg.window, 0);

    RunMetrics m;
    m.seed = seed;
    m.task = "de_solver";
    m.optimizer = to_string(cfg.optimizer);
    m.scheme = cfg.partition.describe();
    m.horizon = cfg.window.horizon;

    FlopCounter fc;
    FlopCounter* fcp = cfg.flags.record_flops ? &fc : nullptr;

    Network net{task.arch, init_params(task.arch, seed), seed};
    OptimizerState opt(cfg.optimizer, cfg.hyper);
    DeObjective obj(task);

    // Phase 1: standard training up to t2, recording [t1, t2].
    auto t0 = Clock::now();
    TrainOptions phase1;
    phase1.steps = win.t2;
    phase1.record_window = {{win.t1, win.t2}};
    phase1.keep_losses = true;
    TrainResult r1 = train(net, obj, opt, phase1, fcp);
    m.timing.standard_train_s = seconds_since(t0);

    Trajectory traj = std::move(*r1.trajectory);
    traj.arch_string = task.arch.size_string();
    traj.config_hash = ctx.cfg_hash;
    if (cfg.flags.write_trajectories) {
        save_trajectory(ctx.seed_dir / "trajectory.ktrj", traj);
    }
    write_loss_series_csv(ctx.seed_dir / "losses_standard_train.csv", 0, r1.losses);

    const ParamVector w_t2 = net.params;
    const std::string branch_hash = param_hash(w_t2);
    extra["w_t2_hash"] = branch_hash;

    // Branch A: T more standard steps.
    Network net_a = net;
    OptimizerState opt_a = opt;
    DeObjective obj_a = obj;
    if (param_hash(net_a.params) != branch_hash) {
        throw NumericError("branch A does not start from w(t2)");
    }
    t0 = Clock::now();
    TrainOptions branch;
    branch.steps = win.horizon;
    TrainResult ra = train(net_a, obj_a, opt_a, branch, fcp);
    m.timing.branch_standard_s = seconds_since(t0);
    m.standard_steps_counted = win.t2 + win.horizon;

    // losses at t2+1 .. t2+T (ra.losses[0] is the pre-update loss at t2).
    std::vector<double> series(ra.losses.begin() + 1, ra.losses.end());
    series.push_back(obj_a.loss(net_a, fcp));
    const double loss_at_t2 = ra.losses.front();
    extra["loss_at_t2"] = loss_at_t2;
    write_loss_series_csv(ctx.seed_dir / "losses_standard.csv", win.t2 + 1, series);

    // Branch B: Koopman training.
    const Partition partition = cfg.partition.build(task.arch);
    FiniteSectionOptions fso;
    fso.lambda = cfg.lambda;
    fso.rank_tolerance = cfg.rank_tolerance;
    fso.compute_spectrum = false;  // spectra computed after timing
    t0 = Clock::now();
    KoopmanModel model = build_model(traj, partition, win.horizon, cfg.lambda, fso, fcp);
    m.timing.construction_s = seconds_since(t0);
    if (param_hash(model.seed_state) != branch_hash) {
        throw NumericError("branch B does not start from w(t2)");
    }

    std::vector<ParamVector> preds;
    bool diverged = false;
    std::uint64_t diverged_at = 0;
    t0 = Clock::now();
    try {
        preds = predict(model, {}, fcp);
    } catch (const DivergenceError& e) {
        diverged = true;
        diverged_at = e.step_reached;
    }
    m.timing.prediction_s = seconds_since(t0);
    m.prediction_steps_counted = diverged ? diverged_at : win.horizon;

    FiniteSectionOptions spectral_opts;
    m.max_patch_modulus = max_patch_modulus(model, spectral_opts);
    if (cfg.flags.write_models) save_model(ctx.seed_dir / "model.kmod", model);

    if (diverged) {
        m.diverged = true;
        m.success = false;
        m.t_eq = 0;
        m.t_eq_over_t = 0;
        m.note = "prediction diverged at step " + std::to_string(diverged_at);
        m.flops = fc;
        return m;
    }

    // Koopman loss along the prediction (bookkeeping, not timed or counted).
    std::vector<double> koop_losses(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        Network probe{task.arch, preds[i], seed};
        koop_losses[i] = de_loss_value(probe, task, nullptr);
    }
    write_loss_series_csv(ctx.seed_dir / "losses_koopman.csv", win.t2 + 1, koop_losses);
    const double koop_final_loss = koop_losses.back();
    extra["koopman_final_loss"] = koop_final_loss;

    const TeqIterative teq = t_eq_iterative(series, koop_final_loss);
    m.t_eq = static_cast<double>(teq.t_eq);
    m.t_eq_over_t = m.t_eq / static_cast<double>(win.horizon);
    m.success = teq.t_eq > 0;
    extra["t_eq_saturated"] = teq.saturated;

    const ErrorStats stats = error_evolution_stats(w_t2, net_a.params, preds.back());
    m.median_error_ratio = stats.median_error_ratio;
    extra["error_ratio_excluded"] = stats.excluded;
    write_error_pairs_csv(ctx.seed_dir / "error_pairs.csv", stats.error_pairs);

    // Time of T^eq standard iterations, prorated from the measured branch.
    const double standard_time_for_teq =
        m.timing.branch_standard_s * (m.t_eq / static_cast<double>(win.horizon));
    m.speedup = compute_speedup(standard_time_for_teq, m.timing.construction_s,
                                m.timing.prediction_s);
    m.flops = fc;
    return m;
}

// Classifier: stochastic minibatches, per-epoch validation loss, fractional
// T^eq across epochs.
RunMetrics run_classifier_seed(const SeedContext& ctx, std::uint64_t seed, json& extra) {
    const ExperimentConfig& cfg = ctx.cfg;
    const ClassifierTask& task = *ctx.classifier_task;
    const Eigen::Index ipe = task.iterations_per_epoch();
    const ResolvedWindow win = resolve_window(cfg.window, ipe);
    const auto horizon_epochs = static_cast<std::uint64_t>(win.horizon_native);

    RunMetrics m;
    m.seed = seed;
    m.task = "classifier";
    m.optimizer = to_string(cfg.optimizer);
    m.scheme = cfg.partition.describe();
    m.horizon = horizon_epochs;

    FlopCounter fc;
    FlopCounter* fcp = cfg.flags.record_flops ? &fc : nullptr;

    Network net{task.arch, init_params(task.arch, seed), seed};
    OptimizerState opt(cfg.optimizer, cfg.hyper);
    MinibatchObjective obj(&task.train, task.train_batch, mix_seed(seed, 0xC0FFEE));

    json epoch_log = json::array();
    auto t0 = Clock::now();
    TrainOptions phase1;
    phase1.steps = win.t2;
    phase1.record_window = {{win.t1, win.t2}};
    phase1.keep_losses = false;
    phase1.on_epoch_end = [&](int epoch) {
        const EvalResult ev = evaluate_classifier(net, task, nullptr);
        json row;
        row["epoch"] = epoch;
        row["val_loss"] = ev.loss;
        row["val_accuracy"] = ev.accuracy;
        epoch_log.push_back(row);
    };
    TrainResult r1 = train(net, obj, opt, phase1, fcp);
    m.timing.standard_train_s = seconds_since(t0);

    Trajectory traj = std::move(*r1.trajectory);
    traj.arch_string = task.arch.size_string();
    traj.config_hash = ctx.cfg_hash;
    if (cfg.flags.write_trajectories) {
        save_trajectory(ctx.seed_dir / "trajectory.ktrj", traj);
    }

    const ParamVector w_t2 = net.params;
    const std::string branch_hash = param_hash(w_t2);
    extra["w_t2_hash"] = branch_hash;
    const EvalResult eval_t2 = evaluate_classifier(net, task, nullptr);
    const double loss_at_t2 = eval_t2.loss;
    extra["loss_at_t2"] = loss_at_t2;
    extra["accuracy_at_t2"] = eval_t2.accuracy;

    // Branch A: T more epochs, logging per-epoch validation loss and epoch
    // wall time (training only; the eval sits outside the timed span).
    Network net_a = net;
    OptimizerState opt_a = opt;
    MinibatchObjective obj_a = obj;
    if (param_hash(net_a.params) != branch_hash) {
        throw NumericError("branch A does not start from w(t2)");
    }
    std::vector<double> epoch_losses, epoch_times, epoch_acc;
    auto epoch_start = Clock::now();
    TrainOptions branch;
    branch.steps = win.horizon;
    branch.keep_losses = false;
    branch.on_epoch_end = [&](int) {
        epoch_times.push_back(seconds_since(epoch_start));
        const EvalResult ev = evaluate_classifier(net_a, task, nullptr);
        epoch_losses.push_back(ev.loss);
        epoch_acc.push_back(ev.accuracy);
        epoch_start = Clock::now();
    };
    t0 = Clock::now();
    train(net_a, obj_a, opt_a, branch, fcp);
    m.timing.branch_standard_s = seconds_since(t0);
    m.standard_steps_counted = win.t2 + win.horizon;
    extra["branch_epoch_losses"] = epoch_losses;
    extra["branch_epoch_times_s"] = epoch_times;
    extra["branch_epoch_accuracy"] = epoch_acc;

    // Branch B.
    const Partition partition = cfg.partition.build(task.arch);
    FiniteSectionOptions fso;
    fso.lambda = cfg.lambda;
    fso.rank_tolerance = cfg.rank_tolerance;
    fso.compute_spectrum = false;
    t0 = Clock::now();
    KoopmanModel model = build_model(traj, partition, win.horizon, cfg.lambda, fso, fcp);
    m.timing.construction_s = seconds_since(t0);
    if (param_hash(model.seed_state) != branch_hash) {
        throw NumericError("branch B does not start from w(t2)");
    }

    ParamVector w_pred = model.seed_state;
    bool diverged = false;
    std::uint64_t diverged_at = 0;
    t0 = Clock::now();
    try {
        predict_steps(model,
                      [&w_pred](std::uint64_t, const ParamVector& w) { w_pred = w; }, {}, fcp);
    } catch (const DivergenceError& e) {
        diverged = true;
        diverged_at = e.step_reached;
    }
    m.timing.prediction_s = seconds_since(t0);
    m.prediction_steps_counted = diverged ? diverged_at : win.horizon;

    FiniteSectionOptions spectral_opts;
    m.max_patch_modulus = max_patch_modulus(model, spectral_opts);
    if (cfg.flags.write_models) save_model(ctx.seed_dir / "model.kmod", model);
    {
        std::ofstream log(ctx.seed_dir / "epoch_log.json", std::ios::trunc);
        log << epoch_log.dump(2) << "\n";
    }

    if (diverged) {
        m.diverged = true;
        m.success = false;
        m.note = "prediction diverged at step " + std::to_string(diverged_at);
        m.flops = fc;
        return m;
    }

    Network probe{task.arch, w_pred, seed};
    const EvalResult eval_ko = evaluate_classifier(probe, task, nullptr);
    extra["koopman_final_loss"] = eval_ko.loss;
    extra["koopman_final_accuracy"] = eval_ko.accuracy;

    const TeqFractional teq = t_eq_fractional(epoch_losses, eval_ko.loss, loss_at_t2);
    m.t_eq = teq.t_eq;
    m.t_eq_over_t = teq.t_eq / static_cast<double>(horizon_epochs);
    m.success = teq.t_eq > 0;
    extra["t_eq_Q"] = teq.q;
    extra["t_eq_R"] = teq.r;
    extra["t_eq_saturated"] = teq.saturated;
    extra["t_eq_flat_segment"] = teq.flat_segment;

    const ErrorStats stats = error_evolution_stats(w_t2, net_a.params, w_pred);
    m.median_error_ratio = stats.median_error_ratio;
    write_error_pairs_csv(ctx.seed_dir / "error_pairs.csv", stats.error_pairs);

    const double standard_time_for_teq =
        teq.saturated ? m.timing.branch_standard_s
                      : equivalent_runtime(epoch_times, teq.q, teq.r);
    m.speedup = compute_speedup(standard_time_for_teq, m.timing.construction_s,
                                m.timing.prediction_s);
    extra["prediction_s_per_epoch"] =
        m.timing.prediction_s / static_cast<double>(horizon_epochs);
    extra["standard_s_per_epoch"] =
        m.timing.branch_standard_s / static_cast<double>(horizon_epochs);
    m.flops = fc;
    return m;
}

// Perceptron: baseline vs the three Koopman variants, error curves averaged
// over seeds by the caller.
struct PerceptronCurves {
    std::vector<double> baseline, single_weight, node, network;
    bool any_truncated = false;
};

PerceptronCurves run_perceptron_seed(const PerceptronTaskConfig& cfg, std::uint64_t seed) {
    PerceptronCurves out;
    auto pad = [&](PerceptronRunResult r) {
        out.any_truncated |= r.truncated;
        r.percent_error.resize(static_cast<std::size_t>(cfg.task.steps) + 1,
                               r.percent_error.empty() ? 100.0 : r.percent_error.back());
        return std::move(r.percent_error);
    };
    out.baseline = pad(perceptron_run(cfg.task, seed, std::nullopt));
    out.single_weight = pad(perceptron_run(
        cfg.task, seed, PerceptronKoopman{cfg.t_switch, Scheme::single_weight(), 0.0}));
    out.node =
        pad(perceptron_run(cfg.task, seed, PerceptronKoopman{cfg.t_switch, Scheme::node(), 0.0}));
    out.network = pad(perceptron_run(cfg.task, seed,
                                     PerceptronKoopman{cfg.t_switch, Scheme::network(), 0.0}));
    return out;
}

}  // namespace

bool ExperimentResult::all_completed() const {
    for (const auto& o : outcomes) {
        if (!o.completed) return false;
    }
    return true;
}

namespace {

ClassifierTask build_classifier_task(const ClassifierTaskConfig& cfg) {
    ClassifierTask task;
    task.arch = Architecture::parse(cfg.architecture, Activation::ReLU, true);
    task.train_batch = cfg.train_batch;
    task.test_batch = cfg.test_batch;
    task.epochs = cfg.epochs;
    if (cfg.data.source == "idx") {
        const std::filesystem::path dir = cfg.data.idx_dir;
        task.train = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
        task.test = load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
    } else {
        SyntheticOptions opts;
        opts.noise_amplitude = cfg.data.noise_amplitude;
        opts.max_shift = cfg.data.max_shift;
        opts.warp_amplitude = cfg.data.warp_amplitude;
        task.train = synthetic_digits(cfg.data.seed, cfg.data.train_count, opts);
        task.test = synthetic_digits(mix_seed(cfg.data.seed, 0x7e57), cfg.data.test_count, opts);
    }
    return task;
}

ExperimentResult run_pipeline(const ExperimentConfig& cfg, bool compare_branches) {
    namespace fs = std::filesystem;
    ExperimentResult result;
    fs::create_directories(cfg.output_dir);
    const std::string hash = config_hash(cfg);

    // Perceptron runs are cheap and aggregate across seeds; handle inline.
    if (cfg.task_kind == TaskKind::Perceptron) {
        const int len = cfg.perceptron.task.steps + 1;
        std::vector<std::vector<double>> sums(4, std::vector<double>(static_cast<std::size_t>(len), 0.0));
        bool truncated = false;
        result.outcomes.resize(cfg.seeds.size());
        for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
            auto& o = result.outcomes[i];
            o.seed = cfg.seeds[i];
            try {
                const PerceptronCurves curves = run_perceptron_seed(cfg.perceptron, o.seed);
                const std::vector<double>* all[4] = {&curves.baseline, &curves.single_weight,
                                                     &curves.node, &curves.network};
                for (int v = 0; v < 4; ++v) {
                    for (int t = 0; t < len; ++t) {
                        sums[static_cast<std::size_t>(v)][static_cast<std::size_t>(t)] +=
                            (*all[v])[static_cast<std::size_t>(t)];
                    }
                }
                truncated |= curves.any_truncated;
                o.completed = true;
            } catch (const std::exception& e) {
                o.error = e.what();
            }
        }
        const double denom = static_cast<double>(cfg.seeds.size());
        std::ofstream out(cfg.output_dir / "perceptron_curves.csv", std::ios::trunc);
        out << "step,baseline,single_weight,node,network\n";
        for (int t = 0; t < len; ++t) {
            out << t;
            for (int v = 0; v < 4; ++v) {
                out << ',' << sums[static_cast<std::size_t>(v)][static_cast<std::size_t>(t)] / denom;
            }
            out << '\n';
        }
        json manifest;
        manifest["config"] = json::parse(config_to_json(cfg));
        manifest["config_hash"] = hash;
        manifest["any_prediction_truncated"] = truncated;
        manifest["curves_csv"] = "perceptron_curves.csv";
        std::ofstream mf(cfg.output_dir / "manifest.json", std::ios::trunc);
        mf << manifest.dump(2) << "\n";
        result.manifest_path = cfg.output_dir / "manifest.json";
        return result;
    }

    // Shared, read-only task data for classifier runs.
    std::optional<ClassifierTask> classifier_task;
    if (cfg.task_kind == TaskKind::Classifier) {
        classifier_task = build_classifier_task(cfg.classifier);
    }

    result.outcomes.resize(cfg.seeds.size());
    std::vector<json> extras(cfg.seeds.size());

    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cfg.seeds.size()) return;
            SeedOutcome& o = result.outcomes[i];
            o.seed = cfg.seeds[i];
            SeedContext ctx{cfg, cfg.output_dir / ("seed_" + std::to_string(o.seed)), hash,
                            classifier_task ? &*classifier_task : nullptr};
            std::filesystem::create_directories(ctx.seed_dir);
            try {
                if (compare_branches) {
                    o.metrics = cfg.task_kind == TaskKind::DeSolver
                                    ? run_de_seed(ctx, o.seed, extras[i])
                                    : run_classifier_seed(ctx, o.seed, extras[i]);
                } else {
                    // Training-only: phase 1 of the same pipelines.
                    ExperimentConfig only = cfg;
                    only.flags.write_models = false;
                    json tmp;
                    // Reuse the full pipeline with horizon 1 would distort
                    // artifacts; run just the recording phase instead.
                    if (cfg.task_kind == TaskKind::DeSolver) {
                        const DESolverTask task = cfg.de.make_task();
                        const ResolvedWindow win = resolve_window(cfg.window, 0);
                        Network net{task.arch, init_params(task.arch, o.seed), o.seed};
                        OptimizerState opt(cfg.optimizer, cfg.hyper);
                        DeObjective objective(task);
                        TrainOptions opts;
                        opts.steps = win.t2;
                        opts.record_window = {{win.t1, win.t2}};
                        TrainResult r = train(net, objective, opt, opts, nullptr);
                        Trajectory traj = std::move(*r.trajectory);
                        traj.arch_string = task.arch.size_string();
                        traj.config_hash = hash;
                        save_trajectory(ctx.seed_dir / "trajectory.ktrj", traj);
                        write_loss_series_csv(ctx.seed_dir / "losses_standard_train.csv", 0,
                                              r.losses);
                    } else {
                        const ClassifierTask& task = *ctx.classifier_task;
                        const ResolvedWindow win =
                            resolve_window(cfg.window, task.iterations_per_epoch());
                        Network net{task.arch, init_params(task.arch, o.seed), o.seed};
                        OptimizerState opt(cfg.optimizer, cfg.hyper);
                        MinibatchObjective objective(&task.train, task.train_batch,
                                                     mix_seed(o.seed, 0xC0FFEE));
                        TrainOptions opts;
                        opts.steps = win.t2;
                        opts.record_window = {{win.t1, win.t2}};
                        opts.keep_losses = false;
                        TrainResult r = train(net, objective, opt, opts, nullptr);
                        Trajectory traj = std::move(*r.trajectory);
                        traj.arch_string = task.arch.size_string();
                        traj.config_hash = hash;
                        save_trajectory(ctx.seed_dir / "trajectory.ktrj", traj);
                    }
                    o.metrics.seed = o.seed;
                    o.metrics.task = to_string(cfg.task_kind);
                }
                o.completed = true;
            } catch (const std::exception& e) {
                o.error = e.what();
            }
        }
    };

    const int n_workers =
        std::max(1, std::min<int>(cfg.workers, static_cast<int>(cfg.seeds.size())));
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(n_workers));
        for (int i = 0; i < n_workers; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    if (compare_branches) {
        std::vector<RunMetrics> rows;
        for (const auto& o : result.outcomes) {
            if (o.completed) rows.push_back(o.metrics);
        }
        result.metrics_csv = cfg.output_dir / "metrics.csv";
        write_metrics_csv(result.metrics_csv, rows);
    }

    json manifest;
    manifest["config"] = json::parse(config_to_json(cfg));
    manifest["config_hash"] = hash;
    json seeds = json::array();
    for (std::size_t i = 0; i < result.outcomes.size(); ++i) {
        const auto& o = result.outcomes[i];
        json row;
        row["seed"] = o.seed;
        row["completed"] = o.completed;
        if (!o.error.empty()) row["error"] = o.error;
        if (o.completed && compare_branches) row["metrics"] = metrics_to_json(o.metrics);
        if (!extras[i].is_null()) row["detail"] = extras[i];
        seeds.push_back(row);
    }
    manifest["seeds"] = seeds;
    result.manifest_path = cfg.output_dir / "manifest.json";
    std::ofstream mf(result.manifest_path, std::ios::trunc);
    mf << manifest.dump(2) << "\n";
    return result;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    return run_pipeline(cfg, /*compare_branches=*/true);
}

ExperimentResult run_training_only(const ExperimentConfig& cfg) {
    return run_pipeline(cfg, /*compare_branches=*/false);
}

// ---------------------------------------------------------------------------
// Complexity benchmark
// ---------------------------------------------------------------------------

std::vector<BenchRow> bench_complexity(const std::vector<int>& widths, int k,
                                       const std::vector<Scheme>& schemes) {
    if (k < 2) throw ConfigError("bench_complexity: k must be >= 2");
    std::vector<BenchRow> rows;
    for (int n : widths) {
        if (n < 2) throw ConfigError("bench_complexity: widths must be >= 2");
        // Cube network: input n, n-1 hidden layers of width n, output n.
        std::vector<int> sizes(static_cast<std::size_t>(n) + 1, n);
        const Architecture arch(sizes, Activation::Sigmoid, true);
        const Eigen::Index n_params = arch.param_count();

        // Random-walk weight history: enough texture for full-rank sections.
        std::mt19937_64 rng(0x5eedULL + static_cast<std::uint64_t>(n));
        std::normal_distribution<double> step_dist(0.0, 1e-3);
        Trajectory traj;
        traj.param_count = n_params;
        traj.t1 = 0;
        traj.t2 = static_cast<std::uint64_t>(k - 1);
        traj.snapshots.resize(n_params, k);
        traj.snapshots.col(0) = init_params(arch, rng());
        for (int c = 1; c < k; ++c) {
            traj.snapshots.col(c) = traj.snapshots.col(c - 1);
            for (Eigen::Index r = 0; r < n_params; ++r) {
                traj.snapshots(r, c) += step_dist(rng);
            }
        }

        for (const Scheme& scheme : schemes) {
            BenchRow row;
            row.scheme = to_string(scheme);
            row.n = n;
            row.k = k;
            const ComplexityEstimate est = predicted_complexity(scheme, n, k);
            row.predicted_construction = est.construction_flops;
            row.predicted_per_step = est.per_iteration_flops;

            // Memory guard: the Network operator is N x N dense.
            if (scheme.kind == SchemeKind::Network &&
                static_cast<double>(n_params) * static_cast<double>(n_params) * 8.0 > 2e9) {
                row.skipped = true;
                rows.push_back(row);
                continue;
            }

            const Partition partition = build_partition(arch, scheme);
            FlopCounter fc;
            FiniteSectionOptions opts;
            opts.compute_spectrum = false;
            const auto t0 = Clock::now();
            KoopmanModel model = build_model(traj, partition, 1, 0.0, opts, &fc);
            row.construction_seconds = seconds_since(t0);
            row.construction_flops = fc.construction;
            row.per_step_flops = model.per_step_flops();

            // Time a short prediction run and average.
            const std::uint64_t steps = 20;
            model.horizon = steps;
            PredictOptions popts;
            popts.divergence_cap = 1e300;
            const auto t1 = Clock::now();
            predict_steps(model, [](std::uint64_t, const ParamVector&) {}, popts, nullptr);
            row.per_step_seconds = seconds_since(t1) / static_cast<double>(steps);
            rows.push_back(row);
        }
    }
    return rows;
}

void write_bench_csv(const std::filesystem::path& path, const std::vector<BenchRow>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write bench csv: " + path.string());
    out << "scheme,n,k,construction_flops,per_step_flops,predicted_construction,"
           "predicted_per_step,construction_seconds,per_step_seconds,skipped\n";
    for (const auto& r : rows) {
        out << r.scheme << ',' << r.n << ',' << r.k << ',' << r.construction_flops << ','
            << r.per_step_flops << ',' << r.predicted_construction << ','
            << r.predicted_per_step << ',' << r.construction_seconds << ','
            << r.per_step_seconds << ',' << (r.skipped ? 1 : 0) << '\n';
    }
}

}  // namespace koop
