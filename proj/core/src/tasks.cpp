#include "kooptrain/tasks.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

#include "kooptrain/errors.hpp"
#include "kooptrain/koopman.hpp"
#include "kooptrain/optimizers.hpp"
#include "kooptrain/recorder.hpp"

namespace koop {

std::string to_string(Hamiltonian h) {
    return h == Hamiltonian::Harmonic ? "harmonic" : "quartic";
}

Hamiltonian hamiltonian_from_string(const std::string& s) {
    if (s == "harmonic") return Hamiltonian::Harmonic;
    if (s == "quartic") return Hamiltonian::Quartic;
    throw ConfigError("unknown hamiltonian '" + s + "' (expected harmonic|quartic)");
}

Eigen::ArrayXd DESolverTask::collocation_times() const {
    if (n_points < 1) throw ConfigError("DE task needs at least one collocation point");
    return Eigen::ArrayXd::LinSpaced(n_points, 0.0, t_max);
}

namespace {

struct DeTrialState {
    Eigen::ArrayXd s, sp;        // envelope 1 - e^-t and its derivative e^-t
    Eigen::ArrayXd x, p;         // trial functions
    Eigen::ArrayXd xdot, pdot;   // their time derivatives
    Eigen::ArrayXd hx, hp, hxx;  // Hamiltonian partials along the trials
    Eigen::ArrayXd r_x, r_p;
    double loss = 0;
};

DeTrialState de_trial_state(const DESolverTask& task, const Eigen::ArrayXd& t,
                            const Eigen::MatrixXd& outputs, const Eigen::MatrixXd& tangents) {
    if (outputs.rows() != 2 || tangents.rows() != 2) {
        throw ConfigError("de residuals expect 2-row outputs (N1, N2)");
    }
    if (outputs.cols() != t.size() || tangents.cols() != t.size()) {
        throw ConfigError("de residuals: column count != collocation points");
    }
    DeTrialState st;
    const Eigen::ArrayXd n1 = outputs.row(0).transpose().array();
    const Eigen::ArrayXd n2 = outputs.row(1).transpose().array();
    const Eigen::ArrayXd dn1 = tangents.row(0).transpose().array();
    const Eigen::ArrayXd dn2 = tangents.row(1).transpose().array();
    st.sp = (-t).exp();
    st.s = 1.0 - st.sp;
    st.x = task.x0 + st.s * n1;
    st.p = task.p0 + st.s * n2;
    st.xdot = st.sp * n1 + st.s * dn1;
    st.pdot = st.sp * n2 + st.s * dn2;
    if (task.hamiltonian == Hamiltonian::Harmonic) {
        st.hx = st.x;
        st.hp = st.p;
        st.hxx = Eigen::ArrayXd::Ones(t.size());
    } else {
        st.hx = st.x + st.x.cube();
        st.hp = st.p;
        st.hxx = 1.0 + 3.0 * st.x.square();
    }
    st.r_x = st.xdot - st.hp;
    st.r_p = st.pdot + st.hx;
    st.loss = (st.r_x.square() + st.r_p.square()).mean();
    return st;
}

}  // namespace

DeResiduals de_trial_residuals(const DESolverTask& task, const Eigen::ArrayXd& times,
                               const Eigen::MatrixXd& outputs,
                               const Eigen::MatrixXd& tangents) {
    DeTrialState st = de_trial_state(task, times, outputs, tangents);
    return {std::move(st.r_x), std::move(st.r_p), st.loss};
}

LossGrad de_loss(const Network& net, const DESolverTask& task, FlopCounter* fc) {
    if (net.arch.activation != Activation::Sigmoid) {
        throw ConfigError("de_residual loss requires sigmoid activation "
                          "(input derivatives need a smooth unit)");
    }
    if (net.arch.input_size() != 1 || net.arch.output_size() != 2) {
        throw ConfigError("de solver network must map 1 input to 2 outputs");
    }
    const Eigen::ArrayXd t = task.collocation_times();
    const Eigen::Index j = t.size();
    const Eigen::MatrixXd inputs_cols = t.matrix().transpose();
    const Eigen::MatrixXd seed = Eigen::MatrixXd::Ones(1, j);

    ForwardPass pass = run_forward(net, inputs_cols, &seed, fc);
    DeTrialState st = de_trial_state(task, t, pass.outputs(), pass.output_tangent());
    add_flops(fc, &FlopCounter::forward, static_cast<std::uint64_t>(j) * 14);

    // Cotangents of (N, dN/dt) from the mean of r_x^2 + r_p^2.
    const double c = 2.0 / static_cast<double>(j);
    Eigen::MatrixXd bar_out(2, j), bar_dout(2, j);
    bar_out.row(0) = (c * (st.r_x * st.sp + st.r_p * st.hxx * st.s)).matrix().transpose();
    bar_out.row(1) = (c * (st.r_p * st.sp - st.r_x * st.s)).matrix().transpose();
    bar_dout.row(0) = (c * st.r_x * st.s).matrix().transpose();
    bar_dout.row(1) = (c * st.r_p * st.s).matrix().transpose();
    add_flops(fc, &FlopCounter::backward, static_cast<std::uint64_t>(j) * 10);

    LossGrad lg;
    lg.loss = st.loss;
    lg.grad = run_backward(net, pass, bar_out, &bar_dout, fc);
    return lg;
}

double de_loss_value(const Network& net, const DESolverTask& task, FlopCounter* fc) {
    if (net.arch.activation != Activation::Sigmoid) {
        throw ConfigError("de_residual loss requires sigmoid activation");
    }
    const Eigen::ArrayXd t = task.collocation_times();
    const Eigen::MatrixXd inputs_cols = t.matrix().transpose();
    const Eigen::MatrixXd seed = Eigen::MatrixXd::Ones(1, t.size());
    ForwardPass pass = run_forward(net, inputs_cols, &seed, fc);
    add_flops(fc, &FlopCounter::forward, static_cast<std::uint64_t>(t.size()) * 14);
    return de_trial_state(task, t, pass.outputs(), pass.output_tangent()).loss;
}

// ---------------------------------------------------------------------------
// IDX ingestion
// ---------------------------------------------------------------------------

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    return bytes;
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off,
                   const std::filesystem::path& path) {
    if (off + 4 > b.size()) {
        throw IoError(path.string() + ": truncated at byte offset " + std::to_string(off));
    }
    return (static_cast<std::uint32_t>(b[off]) << 24) |
           (static_cast<std::uint32_t>(b[off + 1]) << 16) |
           (static_cast<std::uint32_t>(b[off + 2]) << 8) |
           static_cast<std::uint32_t>(b[off + 3]);
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path) {
    const auto img = read_file(images_path);
    const auto lab = read_file(labels_path);

    const std::uint32_t img_magic = be32(img, 0, images_path);
    if (img_magic != 0x00000803u) {
        throw IoError(images_path.string() + ": bad magic 0x" + [&] {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%08x", img_magic);
            return std::string(buf);
        }() + " at byte offset 0 (expected 00000803)");
    }
    const std::uint32_t count = be32(img, 4, images_path);
    const std::uint32_t rows = be32(img, 8, images_path);
    const std::uint32_t cols = be32(img, 12, images_path);
    if (rows != 28 || cols != 28) {
        throw IoError(images_path.string() + ": unexpected image dims " +
                      std::to_string(rows) + "x" + std::to_string(cols) +
                      " at byte offset 8 (expected 28x28)");
    }
    const std::size_t need = 16 + static_cast<std::size_t>(count) * rows * cols;
    if (img.size() < need) {
        throw IoError(images_path.string() + ": truncated at byte offset " +
                      std::to_string(img.size()) + " (need " + std::to_string(need) + ")");
    }

    const std::uint32_t lab_magic = be32(lab, 0, labels_path);
    if (lab_magic != 0x00000801u) {
        throw IoError(labels_path.string() + ": bad magic at byte offset 0 (expected 00000801)");
    }
    const std::uint32_t lab_count = be32(lab, 4, labels_path);
    if (lab_count != count) {
        throw IoError("image/label count mismatch: " + std::to_string(count) + " vs " +
                      std::to_string(lab_count));
    }
    if (lab.size() < 8 + static_cast<std::size_t>(lab_count)) {
        throw IoError(labels_path.string() + ": truncated at byte offset " +
                      std::to_string(lab.size()));
    }

    Dataset ds;
    ds.images.resize(count, 784);
    ds.labels.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t base = 16 + static_cast<std::size_t>(i) * 784;
        for (int px = 0; px < 784; ++px) {
            ds.images(i, px) = static_cast<double>(img[base + static_cast<std::size_t>(px)]) / 255.0;
        }
        const int label = lab[8 + i];
        if (label < 0 || label > 9) {
            throw IoError(labels_path.string() + ": label " + std::to_string(label) +
                          " out of [0, 9] at byte offset " + std::to_string(8 + i));
        }
        ds.labels[i] = label;
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Synthetic digits
// ---------------------------------------------------------------------------

namespace {

// 5x7 glyphs, upscaled 4x into the 28x28 frame.
constexpr std::array<std::array<const char*, 7>, 10> kGlyphs = {{
    {".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."},
    {"..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."},
    {".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"},
    {".###.", "#...#", "....#", "..##.", "....#", "#...#", ".###."},
    {"...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."},
    {"#####", "#....", "####.", "....#", "....#", "#...#", ".###."},
    {"..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."},
    {"#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."},
    {".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."},
    {".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."},
}};

}  // namespace

Eigen::VectorXd synthetic_template(int digit) {
    if (digit < 0 || digit > 9) throw ConfigError("digit out of [0, 9]");
    Eigen::VectorXd out = Eigen::VectorXd::Zero(784);
    const auto& glyph = kGlyphs[static_cast<std::size_t>(digit)];
    for (int r = 0; r < 7; ++r) {
        for (int c = 0; c < 5; ++c) {
            if (glyph[static_cast<std::size_t>(r)][c] != '#') continue;
            for (int dy = 0; dy < 4; ++dy) {
                for (int dx = 0; dx < 4; ++dx) {
                    const int y = r * 4 + dy;
                    const int x = c * 4 + 4 + dx;
                    out(y * 28 + x) = 1.0;
                }
            }
        }
    }
    return out;
}

Dataset synthetic_digits(std::uint64_t seed, Eigen::Index count, const SyntheticOptions& opts) {
    if (count < 10) throw ConfigError("synthetic_digits: count must be >= 10");
    if (opts.max_shift < 0 || opts.max_shift > 13) {
        throw ConfigError("synthetic_digits: max_shift out of [0, 13]");
    }
    constexpr double kTwoPi = 6.283185307179586;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> noise(-opts.noise_amplitude, opts.noise_amplitude);
    std::uniform_int_distribution<int> digit_dist(0, 9);
    std::uniform_int_distribution<int> shift_dist(-opts.max_shift, opts.max_shift);
    std::uniform_real_distribution<double> amp_dist(0.3 * opts.warp_amplitude,
                                                    opts.warp_amplitude);
    std::uniform_real_distribution<double> freq_dist(0.5 / 28.0, 1.5 / 28.0);
    std::uniform_real_distribution<double> phase_dist(0.0, kTwoPi);

    std::array<Eigen::VectorXd, 10> templates;
    for (int d = 0; d < 10; ++d) templates[static_cast<std::size_t>(d)] = synthetic_template(d);

    const bool deform = opts.max_shift > 0 || opts.warp_amplitude > 0;
    Dataset ds;
    ds.images.resize(count, 784);
    ds.labels.resize(static_cast<std::size_t>(count));
    double row_wave[28], col_wave[28], row_wave2[28], col_wave2[28];
    for (Eigen::Index i = 0; i < count; ++i) {
        // First ten samples cycle through every class so tiny datasets still
        // cover all labels.
        const int digit = i < 10 ? static_cast<int>(i) : digit_dist(rng);
        ds.labels[static_cast<std::size_t>(i)] = digit;
        const Eigen::VectorXd& tmpl = templates[static_cast<std::size_t>(digit)];
        Eigen::VectorXd img(784);
        if (deform) {
            const int dx0 = opts.max_shift > 0 ? shift_dist(rng) : 0;
            const int dy0 = opts.max_shift > 0 ? shift_dist(rng) : 0;
            double ax = 0, ay = 0;
            if (opts.warp_amplitude > 0) {
                // Separable sinusoidal displacement field, one per axis.
                ax = amp_dist(rng);
                ay = amp_dist(rng);
                const double fx = freq_dist(rng), fy = freq_dist(rng);
                const double gx = freq_dist(rng), gy = freq_dist(rng);
                const double p1 = phase_dist(rng), p2 = phase_dist(rng);
                const double p3 = phase_dist(rng), p4 = phase_dist(rng);
                for (int k = 0; k < 28; ++k) {
                    col_wave[k] = std::sin(kTwoPi * fx * k + p1);
                    row_wave[k] = std::sin(kTwoPi * fy * k + p2);
                    col_wave2[k] = std::sin(kTwoPi * gx * k + p3);
                    row_wave2[k] = std::sin(kTwoPi * gy * k + p4);
                }
            }
            for (int y = 0; y < 28; ++y) {
                for (int x = 0; x < 28; ++x) {
                    double sx = x - dx0, sy = y - dy0;
                    if (opts.warp_amplitude > 0) {
                        sx -= ax * col_wave[x] * row_wave[y];
                        sy -= ay * col_wave2[x] * row_wave2[y];
                    }
                    const int ix = static_cast<int>(std::lround(sx));
                    const int iy = static_cast<int>(std::lround(sy));
                    img(y * 28 + x) = (iy >= 0 && iy < 28 && ix >= 0 && ix < 28)
                                          ? tmpl(iy * 28 + ix)
                                          : 0.0;
                }
            }
        } else {
            img = tmpl;
        }
        if (opts.noise_amplitude > 0) {
            for (int px = 0; px < 784; ++px) {
                img(px) = std::clamp(img(px) + noise(rng), 0.0, 1.0);
            }
        }
        ds.images.row(i) = img.transpose();
    }
    return ds;
}

EvalResult evaluate_classifier(const Network& net, const ClassifierTask& task, FlopCounter* fc) {
    const Dataset& ds = task.test;
    if (ds.count() < 1) throw ConfigError("empty test dataset");
    double loss_sum = 0;
    Eigen::Index correct = 0;
    for (Eigen::Index start = 0; start < ds.count(); start += task.test_batch) {
        const Eigen::Index n = std::min<Eigen::Index>(task.test_batch, ds.count() - start);
        const Eigen::MatrixXd out =
            forward_logits(net, ds.images.middleRows(start, n), fc);  // n x 10
        for (Eigen::Index i = 0; i < n; ++i) {
            // Log-softmax cross-entropy per sample.
            const Eigen::VectorXd logits = out.row(i).transpose();
            const double mx = logits.maxCoeff();
            const double lse = mx + std::log((logits.array() - mx).exp().sum());
            const int label = ds.labels[static_cast<std::size_t>(start + i)];
            loss_sum += lse - logits(label);
            Eigen::Index arg = 0;
            logits.maxCoeff(&arg);
            if (arg == label) ++correct;
        }
    }
    EvalResult res;
    res.loss = loss_sum / static_cast<double>(ds.count());
    res.accuracy = static_cast<double>(correct) / static_cast<double>(ds.count());
    return res;
}

// ---------------------------------------------------------------------------
// Perceptron experiment
// ---------------------------------------------------------------------------

Eigen::VectorXd perceptron_target(const PerceptronTask& task, const Eigen::VectorXd& x) {
    if (task.n_inputs % task.n_outputs != 0) {
        throw ConfigError("perceptron: n_inputs must divide evenly into output blocks");
    }
    const int block = task.n_inputs / task.n_outputs;
    Eigen::VectorXd y = Eigen::VectorXd::Zero(task.n_outputs);
    for (int o = 0; o < task.n_outputs; ++o) {
        for (int b = 0; b < block; ++b) {
            if (x(o * block + b) > 0.5) {
                y(o) = 1.0;
                break;
            }
        }
    }
    return y;
}

Eigen::VectorXd perceptron_draw_input(const PerceptronTask& task, std::mt19937_64& rng) {
    std::bernoulli_distribution unit(task.activation_prob);
    Eigen::VectorXd x(task.n_inputs);
    if (task.correlated_inputs) {
        const int block = task.n_inputs / task.n_outputs;
        for (int o = 0; o < task.n_outputs; ++o) {
            const double v = unit(rng) ? 1.0 : 0.0;
            for (int b = 0; b < block; ++b) x(o * block + b) = v;
        }
    } else {
        for (int i = 0; i < task.n_inputs; ++i) x(i) = unit(rng) ? 1.0 : 0.0;
    }
    return x;
}

double perceptron_percent_error(const PerceptronTask& task, const Eigen::MatrixXd& weights) {
    const int n = task.n_inputs;
    const long patterns = 1L << n;
    long wrong = 0;
    Eigen::VectorXd x(n);
    for (long bits = 0; bits < patterns; ++bits) {
        for (int i = 0; i < n; ++i) x(i) = (bits >> i) & 1 ? 1.0 : 0.0;
        const Eigen::VectorXd y = perceptron_target(task, x);
        const Eigen::VectorXd y_hat = perceptron_output(weights, x);
        for (int o = 0; o < task.n_outputs; ++o) {
            if (y(o) != y_hat(o)) ++wrong;
        }
    }
    return 100.0 * static_cast<double>(wrong) /
           static_cast<double>(patterns * task.n_outputs);
}

PerceptronRunResult perceptron_run(const PerceptronTask& task, std::uint64_t seed,
                                   const std::optional<PerceptronKoopman>& koopman) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> init(task.init_low, task.init_high);
    Eigen::MatrixXd w(task.n_outputs, task.n_inputs);
    for (int r = 0; r < task.n_outputs; ++r) {
        for (int c = 0; c < task.n_inputs; ++c) w(r, c) = init(rng);
    }

    PerceptronRunResult result;
    result.percent_error.reserve(static_cast<std::size_t>(task.steps) + 1);
    result.percent_error.push_back(perceptron_percent_error(task, w));

    const std::uint64_t switch_at =
        koopman ? std::min<std::uint64_t>(koopman->t_switch,
                                          static_cast<std::uint64_t>(task.steps))
                : static_cast<std::uint64_t>(task.steps);

    const Eigen::Index n_params =
        static_cast<Eigen::Index>(task.n_inputs) * task.n_outputs;
    Eigen::MatrixXd snapshots;
    if (koopman) snapshots.resize(n_params, static_cast<Eigen::Index>(switch_at) + 1);
    auto flat = [&](const Eigen::MatrixXd& mat) {
        // Row-major flatten matches the node-major ParamVector contract.
        Eigen::VectorXd v(n_params);
        for (int r = 0; r < task.n_outputs; ++r) {
            v.segment(static_cast<Eigen::Index>(r) * task.n_inputs, task.n_inputs) =
                mat.row(r).transpose();
        }
        return v;
    };
    if (koopman) snapshots.col(0) = flat(w);

    for (std::uint64_t t = 1; t <= switch_at; ++t) {
        const Eigen::VectorXd x = perceptron_draw_input(task, rng);
        const Eigen::VectorXd y = perceptron_target(task, x);
        perceptron_step(w, x, y, task.eta);
        result.percent_error.push_back(perceptron_percent_error(task, w));
        if (koopman) snapshots.col(static_cast<Eigen::Index>(t)) = flat(w);
    }
    if (!koopman || switch_at >= static_cast<std::uint64_t>(task.steps)) return result;

    Trajectory traj;
    traj.param_count = n_params;
    traj.t1 = 0;
    traj.t2 = switch_at;
    traj.snapshots = std::move(snapshots);

    const Architecture arch({task.n_inputs, task.n_outputs}, Activation::Step, false);
    const Partition partition = build_partition(arch, koopman->scheme);
    KoopmanModel model =
        build_model(traj, partition, static_cast<std::uint64_t>(task.steps) - switch_at,
                    koopman->lambda);
    try {
        predict_steps(model, [&](std::uint64_t, const ParamVector& v) {
            Eigen::MatrixXd wp(task.n_outputs, task.n_inputs);
            for (int r = 0; r < task.n_outputs; ++r) {
                wp.row(r) =
                    v.segment(static_cast<Eigen::Index>(r) * task.n_inputs, task.n_inputs)
                        .transpose();
            }
            result.percent_error.push_back(perceptron_percent_error(task, wp));
        });
    } catch (const DivergenceError&) {
        result.truncated = true;
    }
    return result;
}

}  // namespace koop
