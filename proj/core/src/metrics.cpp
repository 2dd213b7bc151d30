#include "kooptrain/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "kooptrain/errors.hpp"

namespace koop {

TeqIterative t_eq_iterative(const std::vector<double>& loss_series,
                            double final_koopman_loss) {
    if (loss_series.empty()) throw ConfigError("t_eq_iterative: empty loss series");
    TeqIterative out;
    // "Remains above" counts touching the target: a standard iteration that
    // only ties the Koopman loss has not yet beaten it. This is what makes
    // the fractional T^eq (strict Q plus R = 1) agree on exact hits.
    for (std::size_t i = 0; i < loss_series.size(); ++i) {
        if (loss_series[i] >= final_koopman_loss) out.t_eq = i + 1;  // 1-based step count
    }
    out.saturated = out.t_eq == loss_series.size();
    return out;
}

TeqFractional t_eq_fractional(const std::vector<double>& epoch_losses, double koopman_loss,
                              double loss_at_t2) {
    if (epoch_losses.empty()) throw ConfigError("t_eq_fractional: empty loss series");
    TeqFractional out;
    // 1-based epoch indexing; ell_0 is the loss at the branch point t2.
    auto ell = [&](std::uint64_t i) {
        return i == 0 ? loss_at_t2 : epoch_losses[static_cast<std::size_t>(i - 1)];
    };
    const std::uint64_t count = epoch_losses.size();
    for (std::uint64_t i = 1; i <= count; ++i) {
        if (ell(i) > koopman_loss) out.q = i;
    }
    if (out.q == count) {
        // No later epoch to interpolate towards.
        out.saturated = true;
        out.r = 0;
        out.t_eq = static_cast<double>(out.q);
        return out;
    }
    const double drop = ell(out.q) - ell(out.q + 1);
    if (drop <= 0) {
        out.flat_segment = true;
        out.r = 0;
    } else {
        out.r = std::clamp((ell(out.q) - koopman_loss) / drop, 0.0, 1.0);
    }
    out.t_eq = static_cast<double>(out.q) + out.r;
    return out;
}

double equivalent_runtime(const std::vector<double>& epoch_times, std::uint64_t q, double r) {
    if (epoch_times.size() < q || (r > 0 && epoch_times.size() < q + 1)) {
        throw ConfigError("equivalent_runtime: need at least Q+1 epoch times");
    }
    double total = 0;
    for (std::uint64_t i = 0; i < q; ++i) total += epoch_times[static_cast<std::size_t>(i)];
    if (r > 0) total += r * epoch_times[static_cast<std::size_t>(q)];
    return total;
}

double median(std::vector<double> values) {
    if (values.empty()) return 0;
    const std::size_t mid = values.size() / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid),
                     values.end());
    double hi = values[mid];
    if (values.size() % 2 == 1) return hi;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid - 1),
                     values.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (values[mid - 1] + hi);
}

ErrorStats error_evolution_stats(const Eigen::VectorXd& w_true_t2,
                                 const Eigen::VectorXd& w_true_end,
                                 const Eigen::VectorXd& w_pred_end, double exclude_threshold) {
    const Eigen::Index n = w_true_t2.size();
    if (w_true_end.size() != n || w_pred_end.size() != n) {
        throw ConfigError("error_evolution_stats: vector lengths differ");
    }
    ErrorStats stats;
    stats.error_pairs.reserve(static_cast<std::size_t>(n));
    std::vector<double> ratios;
    ratios.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const double delta = w_true_end(i) - w_true_t2(i);
        const double err = w_pred_end(i) - w_true_end(i);
        stats.error_pairs.emplace_back(delta, err);
        if (std::abs(delta) < exclude_threshold) {
            ++stats.excluded;
        } else {
            ratios.push_back(std::abs(err) / std::abs(delta));
        }
    }
    stats.median_error_ratio = median(std::move(ratios));
    return stats;
}

SpeedupReport compute_speedup(double standard_time_for_teq, double construction_s,
                              double prediction_s) {
    SpeedupReport rep;
    const double inf = std::numeric_limits<double>::infinity();
    if (prediction_s <= 0) {
        rep.degenerate = true;
        rep.excluding_construction = inf;
        rep.including_construction =
            construction_s > 0 ? standard_time_for_teq / construction_s : inf;
        return rep;
    }
    rep.excluding_construction = standard_time_for_teq / prediction_s;
    rep.including_construction = standard_time_for_teq / (construction_s + prediction_s);
    return rep;
}

namespace {

std::string fmt(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

// Scheme descriptors can contain commas; quote per RFC 4180.
std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

}  // namespace

void write_metrics_csv(const std::filesystem::path& path, const std::vector<RunMetrics>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open metrics csv for writing: " + path.string());
    out << "seed,task,optimizer,scheme,T,t_eq,t_eq_over_T,success,speedup_excl,speedup_incl,"
           "median_error_ratio,max_patch_modulus\n";
    for (const auto& r : rows) {
        out << r.seed << ',' << csv_field(r.task) << ',' << csv_field(r.optimizer) << ','
            << csv_field(r.scheme) << ',' << r.horizon << ',' << fmt(r.t_eq) << ','
            << fmt(r.t_eq_over_t) << ',' << (r.success ? 1 : 0) << ','
            << fmt(r.speedup.excluding_construction) << ','
            << fmt(r.speedup.including_construction) << ',' << fmt(r.median_error_ratio) << ','
            << fmt(r.max_patch_modulus) << '\n';
    }
    if (!out) throw IoError("write failed for metrics csv: " + path.string());
}

void write_error_pairs_csv(const std::filesystem::path& path,
                           const std::vector<std::pair<double, double>>& pairs) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open error-pairs csv for writing: " + path.string());
    out << "param_index,delta_true,error\n";
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        out << i << ',' << fmt(pairs[i].first) << ',' << fmt(pairs[i].second) << '\n';
    }
    if (!out) throw IoError("write failed for error-pairs csv: " + path.string());
}

}  // namespace koop
