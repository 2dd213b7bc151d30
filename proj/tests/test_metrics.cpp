#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "kooptrain/errors.hpp"
#include "kooptrain/metrics.hpp"

using namespace koop;

TEST_CASE("iterative t_eq counts the last loss still above the target") {
    const TeqIterative r = t_eq_iterative({1.0, 0.8, 0.6}, 0.7);
    CHECK(r.t_eq == 2);
    CHECK_FALSE(r.saturated);
}

TEST_CASE("iterative t_eq boundary cases") {
    // Target above the whole series: immediate crossing.
    CHECK(t_eq_iterative({1.0, 0.8, 0.6}, 1.5).t_eq == 0);
    // Target below the whole series: saturated at T_max.
    const TeqIterative r = t_eq_iterative({1.0, 0.8, 0.6}, 0.1);
    CHECK(r.t_eq == 3);
    CHECK(r.saturated);
    // Non-monotone series: the max index counts.
    CHECK(t_eq_iterative({1.0, 0.65, 0.8, 0.6}, 0.7).t_eq == 3);
}

TEST_CASE("fractional t_eq reproduces the hand-worked value") {
    const TeqFractional r = t_eq_fractional({0.8, 0.6, 0.5}, 0.55, /*loss_at_t2=*/1.0);
    CHECK(r.q == 2);
    CHECK(r.r == doctest::Approx(0.5));
    CHECK(r.t_eq == doctest::Approx(2.5));
}

TEST_CASE("fractional t_eq interpolates against the branch-point loss when q is 0") {
    // koopman loss already below epoch 1: virtual ell_0 = loss(t2) anchors R.
    const TeqFractional r = t_eq_fractional({0.8, 0.6}, 0.9, /*loss_at_t2=*/1.0);
    CHECK(r.q == 0);
    CHECK(r.r == doctest::Approx((1.0 - 0.9) / (1.0 - 0.8)));
    CHECK(r.t_eq >= 0);
    CHECK(r.t_eq < 1);
}

TEST_CASE("fractional t_eq hits epochs exactly and clamps R") {
    CHECK(t_eq_fractional({0.8, 0.6, 0.5, 0.45}, 0.5, 1.0).t_eq == doctest::Approx(3.0));
    // koopman loss below everything: saturated, R = 0.
    const TeqFractional sat = t_eq_fractional({0.8, 0.6}, 0.1, 1.0);
    CHECK(sat.saturated);
    CHECK(sat.t_eq == doctest::Approx(2.0));
    // worse than the branch point: t_eq 0.
    CHECK(t_eq_fractional({0.8, 0.6}, 1.5, 1.0).t_eq == doctest::Approx(0.0));
}

TEST_CASE("flat segments are flagged with R = 0") {
    // Q > 0 forces ell_Q > koopman_loss >= ell_{Q+1}, so a zero-drop segment
    // can only appear at the virtual boundary ell_0 == ell_1.
    const TeqFractional r = t_eq_fractional({0.8, 0.6}, 0.9, /*loss_at_t2=*/0.8);
    CHECK(r.q == 0);
    CHECK(r.flat_segment);
    CHECK(r.r == 0);
    CHECK(r.t_eq == 0);
}

TEST_CASE("fractional t_eq reduces to the iterative value on exact hits") {
    const std::vector<double> losses = {0.9, 0.7, 0.55, 0.4};
    for (std::size_t i = 0; i < losses.size(); ++i) {
        const TeqFractional f = t_eq_fractional(losses, losses[i], 1.0);
        const TeqIterative it = t_eq_iterative(losses, losses[i]);
        CHECK(f.t_eq == doctest::Approx(static_cast<double>(it.t_eq)));
    }
}

TEST_CASE("success monotonicity: lowering the koopman loss never lowers t_eq") {
    const std::vector<double> losses = {0.9, 0.7, 0.55, 0.4, 0.35};
    double prev = -1;
    for (double target = 1.0; target >= 0.3; target -= 0.01) {
        const double t_eq = t_eq_fractional(losses, target, 1.1).t_eq;
        CHECK(t_eq >= prev);
        prev = t_eq;
    }
}

TEST_CASE("equivalent runtime sums Q epochs plus the R fraction") {
    CHECK(equivalent_runtime({2, 2, 2}, 2, 0.5) == doctest::Approx(5.0));
    CHECK(equivalent_runtime({2, 2, 2}, 0, 0.0) == doctest::Approx(0.0));
    // R = 1 is a full extra epoch.
    CHECK(equivalent_runtime({2, 2, 2}, 1, 1.0) == doctest::Approx(4.0));
    CHECK_THROWS_AS(equivalent_runtime({2.0}, 1, 0.5), ConfigError);
}

TEST_CASE("error stats: perfect, frozen, and scaled predictions") {
    Eigen::VectorXd w_t2(3), w_end(3);
    w_t2 << 1.0, 2.0, 3.0;
    w_end << 2.0, 2.5, 2.0;

    const ErrorStats perfect = error_evolution_stats(w_t2, w_end, w_end);
    CHECK(perfect.median_error_ratio == doctest::Approx(0.0));

    // Frozen prediction: e_i = -delta_i, every ratio is 1.
    const ErrorStats frozen = error_evolution_stats(w_t2, w_end, w_t2);
    CHECK(frozen.median_error_ratio == doctest::Approx(1.0));
    CHECK(frozen.error_pairs.size() == 3);
    CHECK(frozen.error_pairs[0].first == doctest::Approx(1.0));
    CHECK(frozen.error_pairs[0].second == doctest::Approx(-1.0));

    // Scale equivariance: c * everything leaves each ratio unchanged.
    Eigen::VectorXd w_pred(3);
    w_pred << 2.2, 2.4, 1.9;
    const ErrorStats base = error_evolution_stats(w_t2, w_end, w_pred);
    const ErrorStats scaled = error_evolution_stats(5 * w_t2, 5 * w_end, 5 * w_pred);
    CHECK(base.median_error_ratio == doctest::Approx(scaled.median_error_ratio));
}

TEST_CASE("unmoved parameters are excluded and counted") {
    Eigen::VectorXd w_t2(3), w_end(3), w_pred(3);
    w_t2 << 1.0, 2.0, 3.0;
    w_end << 1.0, 2.5, 2.0;  // first parameter never moves
    w_pred << 1.1, 2.5, 2.0;
    const ErrorStats stats = error_evolution_stats(w_t2, w_end, w_pred);
    CHECK(stats.excluded == 1);
    CHECK(stats.error_pairs.size() == 3);
    CHECK(stats.median_error_ratio == doctest::Approx(0.0));
}

TEST_CASE("speedup ratios, with the degenerate zero-time sentinel") {
    const SpeedupReport r = compute_speedup(10.0, 1.0, 1.0);
    CHECK(r.excluding_construction == doctest::Approx(10.0));
    CHECK(r.including_construction == doctest::Approx(5.0));
    CHECK_FALSE(r.degenerate);

    const SpeedupReport same = compute_speedup(1.0, 0.0, 1.0);
    CHECK(same.excluding_construction == doctest::Approx(1.0));

    const SpeedupReport degen = compute_speedup(1.0, 0.0, 0.0);
    CHECK(degen.degenerate);
    CHECK(std::isinf(degen.excluding_construction));
}

TEST_CASE("median handles odd, even, and empty inputs") {
    CHECK(median({3.0, 1.0, 2.0}) == doctest::Approx(2.0));
    CHECK(median({4.0, 1.0, 2.0, 3.0}) == doctest::Approx(2.5));
    CHECK(median({}) == doctest::Approx(0.0));
}

TEST_CASE("metrics csv carries the pinned column set") {
    namespace fs = std::filesystem;
    RunMetrics m;
    m.seed = 7;
    m.task = "de_solver";
    m.optimizer = "adadelta";
    m.scheme = "node";
    m.horizon = 1000;
    m.t_eq = 950;
    m.t_eq_over_t = 0.95;
    m.success = true;
    m.speedup.excluding_construction = 42.5;
    m.speedup.including_construction = 17.1;
    m.median_error_ratio = 0.004;
    m.max_patch_modulus = 1.0002;
    const fs::path path = fs::temp_directory_path() / "kooptrain_metrics.csv";
    write_metrics_csv(path, {m});
    std::ifstream in(path);
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    CHECK(header ==
          "seed,task,optimizer,scheme,T,t_eq,t_eq_over_T,success,speedup_excl,speedup_incl,"
          "median_error_ratio,max_patch_modulus");
    CHECK(row.starts_with("7,de_solver,adadelta,node,1000,950,0.95,1,42.5,17.1,"));
    fs::remove(path);
}
