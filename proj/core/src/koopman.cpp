#include "kooptrain/koopman.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "kooptrain/errors.hpp"

namespace koop {

namespace {

// Construction cost model per patch, matching the plain Eq.-4 algebra:
// two Gram products (m^2 k each), one factorization/inversion and one
// application (m^3 each). The SVD route refines the same algebraic object,
// so the ledger counts the model, not library internals.
std::uint64_t construction_cost_model(Eigen::Index m, Eigen::Index kc) {
    const std::uint64_t mu = static_cast<std::uint64_t>(m);
    const std::uint64_t ku = static_cast<std::uint64_t>(kc);
    return 2 * mu * mu * ku + 2 * mu * mu * mu;
}

void spectral_fill(KoopmanPatch& patch, const FiniteSectionOptions& opts) {
    const Eigen::Index m = patch.U.rows();
    if (!opts.compute_spectrum) return;
    if (m <= opts.spectral_cap) {
        Eigen::EigenSolver<Eigen::MatrixXd> eig(patch.U, /*computeEigenvectors=*/false);
        if (eig.info() == Eigen::Success) {
            patch.spectrum.reserve(static_cast<size_t>(m));
            double max_mod = 0;
            for (Eigen::Index i = 0; i < m; ++i) {
                const std::complex<double> ev = eig.eigenvalues()(i);
                patch.spectrum.push_back(ev);
                max_mod = std::max(max_mod, std::abs(ev));
            }
            patch.max_modulus_estimate = max_mod;
            return;
        }
        // Non-fatal: fall through to the power-iteration estimate.
    }
    // Power iteration on U (dominant eigenvalue modulus estimate).
    Eigen::VectorXd v = Eigen::VectorXd::Ones(m).normalized();
    double lambda_est = 0;
    for (int it = 0; it < 100; ++it) {
        Eigen::VectorXd w = patch.U * v;
        const double norm = w.norm();
        if (norm == 0 || !std::isfinite(norm)) break;
        lambda_est = norm;
        v = w / norm;
    }
    patch.max_modulus_estimate = lambda_est;
}

}  // namespace

KoopmanPatch finite_section(const SnapshotPair& pair, double lambda,
                            const FiniteSectionOptions& opts, FlopCounter* fc) {
    const Eigen::Index m = pair.F.rows();
    const Eigen::Index kc = pair.F.cols();
    if (kc < 1) throw ConfigError("finite_section: need at least one snapshot column");
    if (pair.Fp.rows() != m || pair.Fp.cols() != kc) {
        throw ConfigError("finite_section: F and Fp shapes differ");
    }
    if (lambda < 0) throw ConfigError("finite_section: lambda must be >= 0");

    KoopmanPatch patch;
    patch.group = pair.group;
    patch.lambda = lambda;
    add_flops(fc, &FlopCounter::construction, construction_cost_model(m, kc));

    if (lambda > 0) {
        // Ridge normal equations in the wide-F orientation:
        // U = Fp F^T (F F^T + lambda I)^-1.
        Eigen::MatrixXd gram = pair.F * pair.F.transpose();
        gram.diagonal().array() += lambda;
        Eigen::LLT<Eigen::MatrixXd> llt(gram);
        if (llt.info() != Eigen::Success) {
            throw NumericError("finite_section: ridge normal matrix not SPD (group of size " +
                               std::to_string(m) + ")");
        }
        // U^T = (F F^T + lambda I)^-1 (Fp F^T)^T
        patch.U = llt.solve((pair.Fp * pair.F.transpose()).transpose()).transpose();
        patch.method = "ridge";
        patch.effective_rank = m;
        const Eigen::VectorXd d = llt.matrixL().toDenseMatrix().diagonal();
        const double dmax = d.maxCoeff(), dmin = d.minCoeff();
        patch.condition_estimate = dmin > 0 ? (dmax * dmax) / (dmin * dmin)
                                            : std::numeric_limits<double>::infinity();
    } else {
        // Moore-Penrose route: U = Fp pinv(F) with singular values below
        // tol * sigma_max treated as zero (numerical-rank cutoff by default).
        Eigen::BDCSVD<Eigen::MatrixXd> svd(pair.F, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const Eigen::VectorXd& sv = svd.singularValues();
        const double smax = sv.size() > 0 ? sv(0) : 0.0;
        const double rel = opts.rank_tolerance > 0
                               ? opts.rank_tolerance
                               : static_cast<double>(std::max(m, kc)) *
                                     std::numeric_limits<double>::epsilon();
        const double tol = rel * smax;
        Eigen::Index rank = 0;
        for (Eigen::Index i = 0; i < sv.size(); ++i) {
            if (sv(i) > tol) ++rank;
        }
        patch.effective_rank = rank;
        patch.rank_deficient = rank < m;
        patch.method = "svd";
        patch.condition_estimate =
            (rank > 0 && sv(rank - 1) > 0) ? smax / sv(rank - 1) : 1.0;
        if (rank == 0) {
            // All-zero snapshots: the minimum-norm solution is the zero map.
            patch.U = Eigen::MatrixXd::Zero(m, m);
        } else {
            const Eigen::MatrixXd u_r = svd.matrixU().leftCols(rank);
            const Eigen::MatrixXd v_r = svd.matrixV().leftCols(rank);
            const Eigen::VectorXd inv_s = sv.head(rank).cwiseInverse();
            // U = (Fp v_r) diag(1/s) u_r^T, smallest-first association order.
            Eigen::MatrixXd t = pair.Fp * v_r;  // m x r
            t = t * inv_s.asDiagonal();
            patch.U.noalias() = t * u_r.transpose();
        }
    }

    if (!patch.U.allFinite()) {
        throw NumericError("finite_section: non-finite operator entries (group of size " +
                           std::to_string(m) + ")");
    }
    spectral_fill(patch, opts);
    return patch;
}

std::uint64_t KoopmanModel::per_step_flops() const {
    std::uint64_t total = 0;
    for (const auto& p : patches) {
        total += static_cast<std::uint64_t>(p.size()) * static_cast<std::uint64_t>(p.size());
    }
    return total;
}

namespace {

struct PatchSlice {
    const KoopmanPatch* patch;
    bool contiguous;
    Eigen::Index first;
    Eigen::VectorXd in, out;  // scratch for non-contiguous groups
};

std::vector<PatchSlice> make_slices(const KoopmanModel& model) {
    std::vector<PatchSlice> slices;
    slices.reserve(model.patches.size());
    for (const auto& patch : model.patches) {
        PatchSlice s;
        s.patch = &patch;
        s.contiguous = !patch.group.empty();
        for (size_t i = 1; i < patch.group.size(); ++i) {
            if (patch.group[i] != patch.group[i - 1] + 1) {
                s.contiguous = false;
                break;
            }
        }
        s.first = patch.group.empty() ? 0 : patch.group.front();
        if (!s.contiguous) {
            s.in.resize(patch.size());
            s.out.resize(patch.size());
        }
        slices.push_back(std::move(s));
    }
    return slices;
}

void advance(std::vector<PatchSlice>& slices, const ParamVector& cur, ParamVector& next) {
    for (auto& s : slices) {
        const auto& patch = *s.patch;
        const Eigen::Index m = patch.size();
        if (s.contiguous) {
            next.segment(s.first, m).noalias() = patch.U * cur.segment(s.first, m);
        } else {
            for (Eigen::Index i = 0; i < m; ++i) {
                s.in(i) = cur(patch.group[static_cast<size_t>(i)]);
            }
            s.out.noalias() = patch.U * s.in;
            for (Eigen::Index i = 0; i < m; ++i) {
                next(patch.group[static_cast<size_t>(i)]) = s.out(i);
            }
        }
    }
}

}  // namespace

void predict_steps(const KoopmanModel& model,
                   const std::function<void(std::uint64_t, const ParamVector&)>& sink,
                   const PredictOptions& opts, FlopCounter* fc) {
    if (model.horizon < 1) throw ConfigError("predict: horizon must be >= 1");
    if (model.seed_state.size() != model.param_count) {
        throw ConfigError("predict: seed state length mismatch");
    }
    auto slices = make_slices(model);
    const std::uint64_t per_step = model.per_step_flops();

    ParamVector cur = model.seed_state;
    ParamVector next(model.param_count);
    for (std::uint64_t step = 1; step <= model.horizon; ++step) {
        advance(slices, cur, next);
        add_flops(fc, &FlopCounter::prediction, per_step);
        const double amax = next.cwiseAbs().maxCoeff();
        if (!std::isfinite(amax) || amax > opts.divergence_cap) {
            throw DivergenceError("prediction diverged at step " + std::to_string(step) +
                                      " (|entry| > " + std::to_string(opts.divergence_cap) +
                                      "); patch spectrum left the stable regime",
                                  step);
        }
        cur.swap(next);
        sink(step, cur);
    }
}

std::vector<ParamVector> predict(const KoopmanModel& model, const PredictOptions& opts,
                                 FlopCounter* fc) {
    std::vector<ParamVector> out;
    out.reserve(model.horizon);
    predict_steps(
        model, [&out](std::uint64_t, const ParamVector& w) { out.push_back(w); }, opts, fc);
    return out;
}

void compute_patch_spectrum(KoopmanPatch& patch, const FiniteSectionOptions& opts) {
    if (!patch.spectrum.empty() || patch.max_modulus_estimate != 0.0) return;
    FiniteSectionOptions with_spectrum = opts;
    with_spectrum.compute_spectrum = true;
    spectral_fill(patch, with_spectrum);
}

SpectralReport spectral_report(const KoopmanPatch& patch, double tol) {
    SpectralReport rep;
    if (patch.spectrum.empty()) {
        rep.available = false;
        rep.max_modulus = patch.max_modulus_estimate;
        return rep;
    }
    rep.available = true;
    for (const auto& ev : patch.spectrum) {
        const double mod = std::abs(ev);
        rep.max_modulus = std::max(rep.max_modulus, mod);
        if (std::abs(mod - 1.0) < tol) ++rep.count_on_unit_circle;
    }
    return rep;
}

KoopmanModel build_model(const Trajectory& traj, const Partition& partition,
                         std::uint64_t horizon, double lambda,
                         const FiniteSectionOptions& opts, FlopCounter* fc) {
    if (traj.snapshot_count() < 2) throw ConfigError("koopman_train: need k >= 2 snapshots");
    if (traj.param_count != partition.param_count) {
        throw ConfigError("koopman_train: partition built for N=" +
                          std::to_string(partition.param_count) + ", trajectory has N=" +
                          std::to_string(traj.param_count));
    }
    KoopmanModel model;
    model.param_count = traj.param_count;
    model.horizon = horizon;
    model.seed_state = traj.snapshots.col(traj.snapshot_count() - 1);
    model.patches.reserve(partition.groups.size());
    for (size_t gi = 0; gi < partition.groups.size(); ++gi) {
        try {
            const SnapshotPair pair = extract(traj, partition.groups[gi].indices);
            FiniteSectionOptions patch_opts = opts;
            patch_opts.lambda = lambda;
            model.patches.push_back(finite_section(pair, lambda, patch_opts, fc));
        } catch (const NumericError& e) {
            throw NumericError("group " + std::to_string(gi) + ": " + e.what());
        }
    }
    return model;
}

std::pair<KoopmanModel, std::vector<ParamVector>> koopman_train(
    const Trajectory& traj, const Partition& partition, std::uint64_t horizon, double lambda,
    const FiniteSectionOptions& opts, FlopCounter* fc) {
    KoopmanModel model = build_model(traj, partition, horizon, lambda, opts, fc);
    std::vector<ParamVector> path = predict(model, {}, fc);
    return {std::move(model), std::move(path)};
}

// ---------------------------------------------------------------------------
// KMOD serialization
// ---------------------------------------------------------------------------

namespace {
constexpr char kModelMagic[4] = {'K', 'M', 'O', 'D'};
constexpr std::uint32_t kModelVersion = 1;
}  // namespace

void save_model(const std::filesystem::path& path, const KoopmanModel& model) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open model file for writing: " + path.string());
    out.write(kModelMagic, 4);
    const std::uint32_t version = kModelVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const std::uint64_t n = static_cast<std::uint64_t>(model.param_count);
    const std::uint64_t horizon = model.horizon;
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    out.write(reinterpret_cast<const char*>(&horizon), sizeof(horizon));
    const std::uint32_t count = static_cast<std::uint32_t>(model.patches.size());
    out.write(reinterpret_cast<const char*>(&count), sizeof(count));
    for (const auto& patch : model.patches) {
        const std::uint64_t m = static_cast<std::uint64_t>(patch.size());
        out.write(reinterpret_cast<const char*>(&m), sizeof(m));
        for (Eigen::Index idx : patch.group) {
            const std::uint64_t v = static_cast<std::uint64_t>(idx);
            out.write(reinterpret_cast<const char*>(&v), sizeof(v));
        }
        out.write(reinterpret_cast<const char*>(&patch.lambda), sizeof(double));
        const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> row_major =
            patch.U;
        out.write(reinterpret_cast<const char*>(row_major.data()),
                  static_cast<std::streamsize>(sizeof(double)) * row_major.size());
    }
    if (!out) throw IoError("write failed for model file: " + path.string());
}

KoopmanModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open model file: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kModelMagic, 4) != 0) {
        throw IoError("bad magic in " + path.string() + " (expected KMOD)");
    }
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (!in || version != kModelVersion) {
        throw IoError("unsupported model format version");
    }
    std::uint64_t n = 0, horizon = 0;
    std::uint32_t count = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof(n));
    in.read(reinterpret_cast<char*>(&horizon), sizeof(horizon));
    in.read(reinterpret_cast<char*>(&count), sizeof(count));
    if (!in) throw IoError("model file truncated in header");

    KoopmanModel model;
    model.param_count = static_cast<Eigen::Index>(n);
    model.horizon = horizon;
    model.seed_state = Eigen::VectorXd::Zero(model.param_count);
    model.patches.resize(count);
    for (auto& patch : model.patches) {
        std::uint64_t m = 0;
        in.read(reinterpret_cast<char*>(&m), sizeof(m));
        if (!in) throw IoError("model file truncated at patch header");
        patch.group.resize(m);
        for (auto& idx : patch.group) {
            std::uint64_t v = 0;
            in.read(reinterpret_cast<char*>(&v), sizeof(v));
            idx = static_cast<Eigen::Index>(v);
        }
        in.read(reinterpret_cast<char*>(&patch.lambda), sizeof(double));
        Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> row_major(
            static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
        in.read(reinterpret_cast<char*>(row_major.data()),
                static_cast<std::streamsize>(sizeof(double)) * row_major.size());
        if (!in) throw IoError("model file truncated inside a patch");
        patch.U = row_major;
        patch.method = "loaded";
        patch.effective_rank = patch.U.rows();
    }
    return model;
}

}  // namespace koop
