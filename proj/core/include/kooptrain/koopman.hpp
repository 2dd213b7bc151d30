#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "kooptrain/flops.hpp"
#include "kooptrain/param_space.hpp"
#include "kooptrain/recorder.hpp"

namespace koop {

struct FiniteSectionOptions {
    /// Ridge parameter; 0 selects the SVD pseudoinverse route.
    double lambda = 0.0;
    /// Relative singular-value cutoff for the SVD route, as a fraction of
    /// sigma_max. <= 0 selects the numerical-rank default
    /// max(m, k-1) * machine_eps. Larger values truncate noise modes.
    double rank_tolerance = 0.0;
    /// Eigen-decomposition is skipped for patches larger than this; they get
    /// a power-iteration max-modulus estimate instead.
    Eigen::Index spectral_cap = 256;
    bool compute_spectrum = true;
};

/// One patch: a dense m x m operator advancing its group's slice of the
/// parameter vector by one training step.
struct KoopmanPatch {
    Eigen::MatrixXd U;
    std::vector<Eigen::Index> group;
    double lambda = 0.0;
    /// sigma_max / sigma_min over the singular values kept by the
    /// pseudoinverse (1 for an empty/zero problem).
    double condition_estimate = 1.0;
    Eigen::Index effective_rank = 0;
    /// True when the snapshot matrix was rank-deficient at the SVD threshold
    /// and the minimum-norm solution was taken on the reduced rank.
    bool rank_deficient = false;
    /// "svd" or "ridge" (normal equations with lambda > 0).
    std::string method;
    /// Eigenvalues, populated for m <= spectral_cap.
    std::vector<std::complex<double>> spectrum;
    /// Power-iteration estimate when the spectrum is unavailable, else the
    /// exact max modulus.
    double max_modulus_estimate = 0.0;

    Eigen::Index size() const { return U.rows(); }
};

/// Least-squares finite section U with U*F ~= Fp. lambda = 0 computes the
/// Moore-Penrose solution via thresholded SVD; lambda > 0 solves the ridge
/// normal equations Fp F^T (F F^T + lambda I)^-1.
KoopmanPatch finite_section(const SnapshotPair& pair, double lambda,
                            const FiniteSectionOptions& opts = {}, FlopCounter* fc = nullptr);

struct KoopmanModel {
    std::vector<KoopmanPatch> patches;
    ParamVector seed_state;   // w(t2)
    std::uint64_t horizon = 0;  // T
    Eigen::Index param_count = 0;

    /// Sum of m^2 over patches: multiply-adds per prediction step.
    std::uint64_t per_step_flops() const;
};

struct PredictOptions {
    double divergence_cap = 1e12;
};

/// Evolves the seed state T steps; step t of the result is w(t2 + 1 + t).
/// Throws DivergenceError with the step index if any entry passes the cap.
std::vector<ParamVector> predict(const KoopmanModel& model,
                                 const PredictOptions& opts = {}, FlopCounter* fc = nullptr);

/// Streaming variant: sink(step, state) is called with step = 1..T. Keeps a
/// single state buffer, for horizons where materializing every step is
/// wasteful.
void predict_steps(const KoopmanModel& model,
                   const std::function<void(std::uint64_t, const ParamVector&)>& sink,
                   const PredictOptions& opts = {}, FlopCounter* fc = nullptr);

struct SpectralReport {
    bool available = false;
    double max_modulus = 0.0;
    int count_on_unit_circle = 0;
};

/// Eigenvalue diagnostic: modulus within tol of 1 counts as "on the unit
/// circle" (a basin-of-attraction indicator for the recorded dynamics).
SpectralReport spectral_report(const KoopmanPatch& patch, double tol = 1e-2);

/// Fills patch.spectrum / max_modulus_estimate after the fact; used when
/// construction was run with compute_spectrum = false to keep timings clean.
void compute_patch_spectrum(KoopmanPatch& patch, const FiniteSectionOptions& opts = {});

/// extract -> finite_section per group -> model, seeded at w(t2), then
/// predict. Returns the model and the predicted trajectory.
std::pair<KoopmanModel, std::vector<ParamVector>> koopman_train(
    const Trajectory& traj, const Partition& partition, std::uint64_t horizon, double lambda,
    const FiniteSectionOptions& opts = {}, FlopCounter* fc = nullptr);

/// Builds the model only (no prediction).
KoopmanModel build_model(const Trajectory& traj, const Partition& partition,
                         std::uint64_t horizon, double lambda,
                         const FiniteSectionOptions& opts = {}, FlopCounter* fc = nullptr);

// KMOD file format (binary, little-endian):
//   magic "KMOD" | u32 version | u64 N | u64 horizon | u32 patch_count |
//   per patch: u64 m | m u64 indices | f64 lambda | m*m f64 row-major U.
void save_model(const std::filesystem::path& path, const KoopmanModel& model);
KoopmanModel load_model(const std::filesystem::path& path);

}  // namespace koop
