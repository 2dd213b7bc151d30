#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "kooptrain/nn_engine.hpp"
#include "kooptrain/param_space.hpp"

namespace koop {

// ---------------------------------------------------------------------------
// NN differential-equation solver task
// ---------------------------------------------------------------------------

enum class Hamiltonian { Harmonic, Quartic };

std::string to_string(Hamiltonian h);
Hamiltonian hamiltonian_from_string(const std::string& s);

/// Unsupervised DE-solver setup: the network maps time t to (N1, N2) and the
/// trial functions x(t) = x0 + (1 - e^-t) N1, p(t) = p0 + (1 - e^-t) N2 pin
/// the initial condition exactly. The loss is the mean squared Hamiltonian
/// residual over a fixed collocation grid.
struct DESolverTask {
    Architecture arch = Architecture::parse("1:10:10:2", Activation::Sigmoid, true);
    double t_max = 4.0 * 3.14159265358979323846;
    int n_points = 200;
    Hamiltonian hamiltonian = Hamiltonian::Harmonic;
    double x0 = 1.0;
    double p0 = 0.0;

    /// Equispaced collocation times on [0, t_max], shaped as a fixed batch.
    Eigen::ArrayXd collocation_times() const;
};

/// Trial functions and residuals evaluated from raw network outputs, kept
/// separate so oracles can feed synthetic outputs. outputs/tangents are
/// 2 x j (rows N1, N2; tangents are d/dt).
struct DeResiduals {
    Eigen::ArrayXd r_x, r_p;
    double loss = 0;
};
DeResiduals de_trial_residuals(const DESolverTask& task, const Eigen::ArrayXd& times,
                               const Eigen::MatrixXd& outputs,
                               const Eigen::MatrixXd& tangents);

/// Mean squared residual loss and its parameter gradient (reverse pass over
/// the forward-mode tangent computation). Requires sigmoid activation.
LossGrad de_loss(const Network& net, const DESolverTask& task, FlopCounter* fc = nullptr);
double de_loss_value(const Network& net, const DESolverTask& task, FlopCounter* fc = nullptr);

// ---------------------------------------------------------------------------
// Classifier task (MNIST layout: 28x28 grayscale, 10 classes)
// ---------------------------------------------------------------------------

struct Dataset {
    Eigen::MatrixXd images;  // count x 784, values in [0, 1]
    std::vector<int> labels;

    Eigen::Index count() const { return images.rows(); }
};

/// Parses the IDX pair (big-endian magics 0x803 images / 0x801 labels),
/// scales pixels into [0, 1], and cross-checks the counts.
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path);

struct SyntheticOptions {
    double noise_amplitude = 0.8;
    /// Per-sample random translation in pixels, drawn per axis from
    /// [-max_shift, max_shift].
    int max_shift = 4;
    /// Amplitude (pixels) of a per-sample smooth sinusoidal warp of the
    /// glyph; 0 disables warping. Warping makes the task hard enough that
    /// the snapshot window lands before basin entry; leave it off to mirror
    /// the late-stage descent the Koopman window assumes.
    double warp_amplitude = 0.0;
};

/// Ten fixed digit-glyph templates, deformed per sample by a seeded smooth
/// warp and translation, plus seeded uniform pixel noise, clipped to [0, 1].
/// Deterministic given (seed, count, options).
Dataset synthetic_digits(std::uint64_t seed, Eigen::Index count,
                         const SyntheticOptions& opts = {});

/// The 28x28 class template for a digit (no noise), flattened to 784.
Eigen::VectorXd synthetic_template(int digit);

struct ClassifierTask {
    Architecture arch = Architecture::parse("784:20:20:20:10", Activation::ReLU, true);
    int train_batch = 64;
    int test_batch = 1000;
    int epochs = 10;
    Dataset train;
    Dataset test;

    Eigen::Index iterations_per_epoch() const {
        return (train.count() + train_batch - 1) / train_batch;
    }
};

/// Mean cross-entropy over the whole test split, evaluated in test_batch
/// chunks; also reports top-1 accuracy.
struct EvalResult {
    double loss = 0;
    double accuracy = 0;
};
EvalResult evaluate_classifier(const Network& net, const ClassifierTask& task,
                               FlopCounter* fc = nullptr);

// ---------------------------------------------------------------------------
// Perceptron OR-task (supplement experiment)
// ---------------------------------------------------------------------------

struct PerceptronTask {
    int n_inputs = 4;
    int n_outputs = 2;
    double activation_prob = 0.25;
    double eta = 0.005;
    int steps = 1000;
    double init_low = 0.5;
    double init_high = 1.0;
    /// Draws both units of each input half together (the large-n caution
    /// mode); default off.
    bool correlated_inputs = false;
};

/// Percent of wrong output decisions over the exhaustively enumerated binary
/// inputs (2^n_inputs patterns x n_outputs units).
double perceptron_percent_error(const PerceptronTask& task, const Eigen::MatrixXd& weights);

Eigen::VectorXd perceptron_draw_input(const PerceptronTask& task, std::mt19937_64& rng);
Eigen::VectorXd perceptron_target(const PerceptronTask& task, const Eigen::VectorXd& x);

struct PerceptronKoopman {
    std::uint64_t t_switch = 100;
    Scheme scheme = Scheme::single_weight();
    double lambda = 0.0;
};

struct PerceptronRunResult {
    /// percent_error[t] is the error of w(t), t = 0..steps (or shorter when
    /// a Koopman prediction diverged).
    std::vector<double> percent_error;
    bool truncated = false;
};

/// Baseline when koopman is absent; otherwise records the first t_switch
/// steps, builds patches, and evolves the weights by prediction.
PerceptronRunResult perceptron_run(const PerceptronTask& task, std::uint64_t seed,
                                   const std::optional<PerceptronKoopman>& koopman);

}  // namespace koop
