#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "kooptrain/flops.hpp"

namespace koop {

/// Integer T^eq: the largest count of standard iterations whose loss is
/// still above the final Koopman loss.
struct TeqIterative {
    std::uint64_t t_eq = 0;
    bool saturated = false;  // the whole series stayed above the target
};

/// loss_series holds the standard-optimizer losses at t2+1 .. t2+T_max.
TeqIterative t_eq_iterative(const std::vector<double>& loss_series,
                            double final_koopman_loss);

/// Fractional T^eq = Q + R across epoch losses. loss_at_t2 acts as the
/// virtual epoch-0 loss so a Koopman loss that beats even the first epoch
/// still interpolates into [0, 1).
struct TeqFractional {
    double t_eq = 0;
    std::uint64_t q = 0;
    double r = 0;
    bool saturated = false;     // koopman loss below every epoch loss
    bool flat_segment = false;  // interpolation segment had zero drop
};

TeqFractional t_eq_fractional(const std::vector<double>& epoch_losses, double koopman_loss,
                              double loss_at_t2);

/// Wall-clock of Q full epochs plus the R fraction of the next one.
double equivalent_runtime(const std::vector<double>& epoch_times, std::uint64_t q, double r);

struct ErrorStats {
    /// (delta_i, e_i) per parameter: true evolution over the window and
    /// prediction error at its end.
    std::vector<std::pair<double, double>> error_pairs;
    double median_error_ratio = 0;
    std::size_t excluded = 0;  // |delta| < threshold, left out of the ratio
};

ErrorStats error_evolution_stats(const Eigen::VectorXd& w_true_t2,
                                 const Eigen::VectorXd& w_true_end,
                                 const Eigen::VectorXd& w_pred_end,
                                 double exclude_threshold = 1e-12);

struct PhaseTiming {
    double standard_train_s = 0;  // initial training up to t2
    double branch_standard_s = 0; // the T comparison steps of the standard branch
    double construction_s = 0;
    double prediction_s = 0;
};

struct SpeedupReport {
    double excluding_construction = 0;
    double including_construction = 0;
    bool degenerate = false;  // zero koopman time, value is the inf sentinel
};

/// standard_time_for_teq is the wall-clock of the T^eq standard iterations
/// (the equivalent runtime).
SpeedupReport compute_speedup(double standard_time_for_teq, double construction_s,
                              double prediction_s);

struct RunMetrics {
    std::uint64_t seed = 0;
    std::string task, optimizer, scheme;
    std::uint64_t horizon = 0;  // T
    double t_eq = 0;
    double t_eq_over_t = 0;
    bool success = false;
    SpeedupReport speedup;
    double median_error_ratio = 0;
    double max_patch_modulus = 0;
    PhaseTiming timing;
    FlopCounter flops;
    std::uint64_t standard_steps_counted = 0;   // steps behind flops.training()
    std::uint64_t prediction_steps_counted = 0; // steps behind flops.prediction
    bool diverged = false;
    std::string note;
};

/// One row per run: (seed, task, optimizer, scheme, T, t_eq, t_eq_over_T,
/// success, speedup_excl, speedup_incl, median_error_ratio,
/// max_patch_modulus).
void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<RunMetrics>& rows);

/// Long format: (param_index, delta_true, error).
void write_error_pairs_csv(const std::filesystem::path& path,
                           const std::vector<std::pair<double, double>>& pairs);

double median(std::vector<double> values);

}  // namespace koop
