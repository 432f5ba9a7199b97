#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "smlb/common.hpp"
#include "smlb/kdtree.hpp"
#include "smlb/linear_model.hpp"
#include "smlb/parallel.hpp"
#include "smlb/rng.hpp"
#include "smlb/samplers.hpp"
#include "smlb/schedule.hpp"
#include "smlb/targets.hpp"

namespace smlb {

// ---------------------------------------------------------------------------
// Score mismatch Delta_{t,y}
// ---------------------------------------------------------------------------

/// Hoisted per-t state for repeated mismatch evaluations: the two marginal
/// laws, the rectifier context, and the projectors. Monte-Carlo loops build
/// one of these per t instead of refactorizing covariances per draw.
struct DeltaContext {
    bool oracle = false;
    const LinearObservation* model = nullptr;
    Law cond;
    Law uncond;
    std::optional<FtyContext> f;
    double sqab = 0.0, omab = 0.0;

    static DeltaContext make(const SamplerSpec& spec, const Target& target,
                             const LinearObservation& model, const NoiseSchedule& sched, int t) {
        DeltaContext c;
        c.model = &model;
        c.oracle = spec.kind == SamplerKind::Oracle;
        if (c.oracle) return c;
        c.cond = cond_law(target, model, sched, t);
        c.uncond = uncond_law(target, sched, t);
        c.f = FtyContext::make(spec.kind, model, sched, t);
        c.sqab = sched.sqrt_alpha_bar(t);
        c.omab = sched.one_minus_alpha_bar(t);
        return c;
    }

    /// Delta for an arbitrary rectifier value at x.
    Vec eval_with_f(const Vec& x, const Vec& f_val) const {
        const Vec sc = law_score(cond, x);
        const Vec su = law_score(uncond, x);
        return model->Pc * (sc - su) + model->P * sc - f_val;
    }

    /// Delta of the configured sampler. DDNM+'s x0t estimate uses the exact
    /// unconditional score here; the perturbed source only affects runs.
    Vec eval(const Vec& x) const {
        if (oracle) return Vec::Zero(model->d());
        Vec fv;
        if (f->needs_x0t()) {
            const Vec su = law_score(uncond, x);
            const Vec x0t = (x + omab * su) / sqab;
            fv = f->eval(x, &x0t);
        } else {
            fv = f->eval(x);
        }
        return eval_with_f(x, fv);
    }
};

/// Delta for an arbitrary range-space rectifier value:
/// (I-P)(score_cond - score_uncond) + P score_cond - f.
inline Vec delta_with_f(const Target& target, const LinearObservation& model,
                        const NoiseSchedule& sched, int t, const Vec& x, const Vec& f_val) {
    const Vec sc = score_cond(target, model, sched, t, x);
    const Vec su = score_uncond(target, sched, t, x);
    return model.Pc * (sc - su) + model.P * sc - f_val;
}

/// Step-wise score mismatch of the configured sampler at (t, x). The oracle
/// sampler has none by definition.
inline Vec delta_ty(const SamplerSpec& spec, const Target& target,
                    const LinearObservation& model, const NoiseSchedule& sched, int t,
                    const Vec& x) {
    return DeltaContext::make(spec, target, model, sched, t).eval(x);
}

/// Closed-form Gaussian mismatch under the bias-optimal rectifier:
/// Delta = -abar_t A_t Sigma0 P Sigma_t^{-1} (x - sqrt(abar_t) mu0) with
/// A_t = (I-P) Sigma_{t,sig}^{-1} (I-P). Valid when Hp Hp^T = P, i.e. H has
/// orthonormal rows (the canonical [I_p 0] form in particular).
inline Vec delta_gaussian_closed_form(const GaussianTarget& target,
                                      const LinearObservation& model,
                                      const NoiseSchedule& sched, int t, const Vec& x) {
    if (!model.orthonormal_rows)
        throw std::invalid_argument("delta_gaussian_closed_form: needs orthonormal-row H");
    const int d = target.dim();
    const Mat I = Mat::Identity(d, d);
    const double ab = sched.alpha_bar(t);
    const double omab = sched.one_minus_alpha_bar(t);
    const Mat Stsig = ab * (model.Pc * target.Sigma0 * model.Pc) + omab * I;
    const Mat At = model.Pc * Eigen::LLT<Mat>(Stsig).solve(Mat(model.Pc));
    const Mat St = ab * target.Sigma0 + omab * I;
    const Vec r = Eigen::LLT<Mat>(St).solve(Vec(x - sched.sqrt_alpha_bar(t) * target.mu0));
    return -ab * (At * (target.Sigma0 * (model.P * r)));
}

/// ||Delta with f* + v||^2 - ||Delta with f*||^2 for a range-space
/// perturbation v; equals ||v||^2 exactly since v is orthogonal to the
/// null-space component of Delta.
inline double optimality_gap(const Target& target, const LinearObservation& model,
                             const NoiseSchedule& sched, int t, const Vec& x, const Vec& v) {
    if ((model.Pc * v).cwiseAbs().maxCoeff() > 1e-10)
        throw std::invalid_argument("optimality_gap: v must lie in range(P)");
    FtyContext f = FtyContext::make(SamplerKind::BODDNM, model, sched, t);
    const Vec f_star = f.eval(x);
    const Vec d_star = delta_with_f(target, model, sched, t, x, f_star);
    const Vec d_pert = delta_with_f(target, model, sched, t, x, Vec(f_star + v));
    return d_pert.squaredNorm() - d_star.squaredNorm();
}

// ---------------------------------------------------------------------------
// Expected squared mismatch and W_bias
// ---------------------------------------------------------------------------

struct MomentEstimate {
    double value = 0.0;
    double stderr_ = 0.0;
};

enum class DeltaMethod { ExactGaussian, MonteCarlo };

/// E ||Delta||^2 in closed form: abar^2 tr(M^T M (Sigma_{t|y} + abar r r^T))
/// with M = A_t Sigma0 P Sigma_t^{-1} and r = Hp y - P mu0. Gaussian target,
/// bias-optimal rectifier, orthonormal-row H.
inline MomentEstimate expected_delta_sq_exact(const GaussianTarget& target,
                                              const LinearObservation& model,
                                              const NoiseSchedule& sched, int t) {
    if (!model.orthonormal_rows)
        throw std::invalid_argument("expected_delta_sq_exact: needs orthonormal-row H");
    const int d = target.dim();
    const Mat I = Mat::Identity(d, d);
    const double ab = sched.alpha_bar(t);
    const double omab = sched.one_minus_alpha_bar(t);
    const Mat Stsig = ab * (model.Pc * target.Sigma0 * model.Pc) + omab * I;
    const Mat At = model.Pc * Eigen::LLT<Mat>(Stsig).solve(Mat(model.Pc));
    const Mat St = ab * target.Sigma0 + omab * I;
    const Mat Sti = Eigen::LLT<Mat>(St).solve(I);
    const Mat M = At * target.Sigma0 * model.P * Sti;
    const GaussLaw q = std::get<GaussLaw>(cond_law(Target{target}, model, sched, t));
    const Vec r = model.pinv_y() - model.P * target.mu0;
    const Mat C = q.cov + ab * (r * r.transpose());
    return {ab * ab * (M.transpose() * M * C).trace(), 0.0};
}

inline MomentEstimate expected_delta_sq_mc(const SamplerSpec& spec, const Target& target,
                                           const LinearObservation& model,
                                           const NoiseSchedule& sched, int t, int n,
                                           std::uint64_t seed) {
    if (n < 2) throw std::invalid_argument("expected_delta_sq_mc: n >= 2 required");
    const Law q = cond_law(target, model, sched, t);
    const DeltaContext ctx = DeltaContext::make(spec, target, model, sched, t);
    RngStream rng(seed, static_cast<std::uint64_t>(t));
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        const Vec x = law_sample(q, rng);
        const double v = ctx.eval(x).squaredNorm();
        sum += v;
        sumsq += v * v;
    }
    const double mean = sum / n;
    const double var = std::max(0.0, sumsq / n - mean * mean);
    return {mean, std::sqrt(var / n)};
}

inline MomentEstimate expected_delta_sq(const SamplerSpec& spec, const Target& target,
                                        const LinearObservation& model,
                                        const NoiseSchedule& sched, int t, DeltaMethod method,
                                        int mc_n = 20000, std::uint64_t seed = 1) {
    if (method == DeltaMethod::ExactGaussian) {
        if (spec.kind != SamplerKind::BODDNM)
            throw std::invalid_argument("expected_delta_sq: exact form is for the BO rectifier");
        const auto* g = std::get_if<GaussianTarget>(&target);
        if (g == nullptr)
            throw std::invalid_argument("expected_delta_sq: exact form needs a Gaussian target");
        return expected_delta_sq_exact(*g, model, sched, t);
    }
    return expected_delta_sq_mc(spec, target, model, sched, t, mc_n, seed);
}

struct MismatchStep {
    int t = 0;
    double weight = 0.0; // 1 - alpha_t
    double value = 0.0;  // E ||Delta_{t,y}||^2
    double stderr_ = 0.0;
};

struct MismatchReport {
    std::vector<MismatchStep> steps;
    double w_bias = 0.0;
    double w_bias_stderr = 0.0;
    DeltaMethod method = DeltaMethod::ExactGaussian;
};

/// W_bias = sum_t (1-alpha_t) E||Delta_{t,y}||^2 over t = 1..T. stride > 1
/// subsamples the t-grid and integrates trapezoidally (Monte-Carlo runs at
/// large T); stride 1 is the exact summation used for acceptance.
inline MismatchReport w_bias(const SamplerSpec& spec, const Target& target,
                             const LinearObservation& model, const NoiseSchedule& sched,
                             DeltaMethod method, int mc_n = 20000, std::uint64_t seed = 1,
                             int stride = 1) {
    const int T = sched.T();
    if (stride < 1) stride = std::max(1, (T + 199) / 200);
    MismatchReport rep;
    rep.method = method;
    std::vector<int> grid;
    for (int t = 1; t <= T; t += stride) grid.push_back(t);
    if (grid.back() != T) grid.push_back(T);
    for (int t : grid) {
        const MomentEstimate e = expected_delta_sq(spec, target, model, sched, t, method, mc_n,
                                                   seed);
        rep.steps.push_back({t, sched.beta(t), e.value, e.stderr_});
    }
    if (stride == 1) {
        double var = 0.0;
        for (const auto& s : rep.steps) {
            rep.w_bias += s.weight * s.value;
            var += s.weight * s.weight * s.stderr_ * s.stderr_;
        }
        rep.w_bias_stderr = std::sqrt(var);
    } else {
        // trapezoidal integration of f(t) = (1-alpha_t) E||Delta_t||^2
        double var = 0.0;
        for (std::size_t i = 0; i + 1 < rep.steps.size(); ++i) {
            const auto& a = rep.steps[i];
            const auto& b = rep.steps[i + 1];
            const double w = 0.5 * (b.t - a.t);
            rep.w_bias += w * (a.weight * a.value + b.weight * b.value);
            var += w * w * (a.weight * a.weight * a.stderr_ * a.stderr_ +
                            b.weight * b.weight * b.stderr_ * b.stderr_);
        }
        rep.w_bias_stderr = std::sqrt(var);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Explicit bias bounds
// ---------------------------------------------------------------------------

namespace detail {
/// Smallest eigenvalue of the (d-p)-dimensional block Pc Sigma0 Pc restricted
/// to range(I-P), i.e. skipping the p structural zeros.
inline double null_block_min_eig(const Mat& Sigma0, const LinearObservation& m) {
    Eigen::SelfAdjointEigenSolver<Mat> eig(m.Pc * Sigma0 * m.Pc);
    return eig.eigenvalues()(m.p()); // ascending; first p are the projected-out zeros
}
inline double cross_block_norm(const Mat& Sigma0, const LinearObservation& m) {
    const Mat B = m.P * Sigma0 * m.Pc; // [Sigma0]_{y ybar} embedded in R^{d x d}
    Eigen::JacobiSVD<Mat> svd(B);
    return svd.singularValues()(0);
}
} // namespace detail

/// Fully explicit upper bound on E||Delta||^2 for Gaussian targets under the
/// bias-optimal rectifier (no hidden constant):
/// abar^2 max{||Hp y - P mu0||^2 + d (l1 + sy2), d} ||[S]_{y yb}[S]_{yb y}|| /
/// (min{l_d,1}^2 min{lt_{d-p},1}^2).
inline double bias_bound_gaussian(const GaussianTarget& target, const LinearObservation& model,
                                  const NoiseSchedule& sched, int t) {
    const int d = target.dim();
    const double ab = sched.alpha_bar(t);
    Eigen::SelfAdjointEigenSolver<Mat> eig(target.Sigma0);
    const double l1 = eig.eigenvalues()(d - 1);
    const double ld = eig.eigenvalues()(0);
    const double lt = detail::null_block_min_eig(target.Sigma0, model);
    const double cross = detail::cross_block_norm(target.Sigma0, model);
    const Vec r = model.pinv_y() - model.P * target.mu0;
    const double num = std::max(r.squaredNorm() + d * (l1 + model.sigma_y2),
                                static_cast<double>(d));
    const double den = std::pow(std::min(ld, 1.0), 2) * std::pow(std::min(lt, 1.0), 2);
    return ab * ab * num * cross * cross / den;
}

/// Mismatch bound shape for the equal-variance mixture. This one holds only
/// up to an unspecified constant, so consumers test the MC/RHS ratio for
/// boundedness rather than an absolute inequality.
inline double bias_bound_mixture(const MixtureTarget& target, const LinearObservation& model,
                                 const NoiseSchedule& sched, int t) {
    if (!model.canonical)
        throw std::invalid_argument("bias_bound_mixture: needs canonical H = [I_p 0]");
    const int d = target.dim();
    const double ab = sched.alpha_bar(t);
    Eigen::SelfAdjointEigenSolver<Mat> eig(target.Sigma0);
    const double l1 = eig.eigenvalues()(d - 1);
    const double ld = eig.eigenvalues()(0);
    const double lt = detail::null_block_min_eig(target.Sigma0, model);
    const double cross = detail::cross_block_norm(target.Sigma0, model);
    double wsum = 0.0;
    const Vec py = model.pinv_y();
    for (std::size_t i = 0; i < target.means.size(); ++i)
        wsum += target.weights[static_cast<Eigen::Index>(i)] *
                (py - model.P * target.means[i]).squaredNorm();
    const double num = std::max(d * (l1 + model.sigma_y2) + wsum, static_cast<double>(d));
    const double den = std::pow(std::min(lt, 1.0), 2) * std::pow(std::min(ld, 1.0), 2);
    return ab * d + ab * ab * cross * cross / den * num;
}

// ---------------------------------------------------------------------------
// Projected Fisher divergence
// ---------------------------------------------------------------------------

/// Monte-Carlo E_{Q_{t|y}} ||(I-P)(score_cond - score_uncond)||^2, the
/// minimum achievable step-wise mismatch over admissible rectifiers.
inline MomentEstimate fisher_projected(const Target& target, const LinearObservation& model,
                                       const NoiseSchedule& sched, int t, int mc_n,
                                       std::uint64_t seed = 2) {
    if (mc_n < 2) throw std::invalid_argument("fisher_projected: n >= 2 required");
    const Law q = cond_law(target, model, sched, t);
    const Law qu = uncond_law(target, sched, t);
    RngStream rng(seed, static_cast<std::uint64_t>(t));
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < mc_n; ++i) {
        const Vec x = law_sample(q, rng);
        const Vec sc = law_score(q, x);
        const Vec su = law_score(qu, x);
        const double v = (model.Pc * (sc - su)).squaredNorm();
        sum += v;
        sumsq += v * v;
    }
    const double mean = sum / mc_n;
    const double var = std::max(0.0, sumsq / mc_n - mean * mean);
    return {mean, std::sqrt(var / mc_n)};
}

// ---------------------------------------------------------------------------
// KL divergence
// ---------------------------------------------------------------------------

/// KL(N(meanA, covA) || N(meanB, covB)), closed form.
inline double gaussian_kl(const Vec& meanA, const Mat& covA, const Vec& meanB, const Mat& covB) {
    const Eigen::Index d = meanA.size();
    if (meanB.size() != d || covA.rows() != d || covB.rows() != d)
        throw std::invalid_argument("gaussian_kl: dimension mismatch");
    Eigen::LLT<Mat> lltA(covA), lltB(covB);
    if (lltA.info() != Eigen::Success || lltB.info() != Eigen::Success)
        throw NumericalError("gaussian_kl: covariance not positive definite");
    const double logdetA = 2.0 * Mat(lltA.matrixL()).diagonal().array().log().sum();
    const double logdetB = 2.0 * Mat(lltB.matrixL()).diagonal().array().log().sum();
    const double tr = lltB.solve(covA).trace();
    const Vec dm = meanB - meanA;
    const double quad = dm.dot(lltB.solve(dm));
    return 0.5 * (tr + quad - static_cast<double>(d) + logdetB - logdetA);
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Two-sample k-NN estimate of KL(Q||P) from X ~ Q and Z ~ P
/// (Wang-Kulkarni-Verdu): (d/n) sum_i log(nu_k(i)/rho_k(i)) + log(m/(n-1)).
/// Points with a zero radius (exact duplicates, which only bootstrap
/// resampling produces) are skipped.
inline double knn_kl(const RowMat& X, const RowMat& Z, int k, int workers = 0) {
    const int n = static_cast<int>(X.rows());
    const int m = static_cast<int>(Z.rows());
    const int d = static_cast<int>(X.cols());
    if (Z.cols() != d) throw std::invalid_argument("knn_kl: dimension mismatch");
    if (n < 10 * k || m < 10 * k)
        throw std::invalid_argument("knn_kl: need at least 10k samples per batch");
    const KdTree tx(X.data(), n, d);
    const KdTree tz(Z.data(), m, d);
    constexpr int kChunk = 4096;
    const int n_chunks = (n + kChunk - 1) / kChunk;
    std::vector<double> partial(static_cast<std::size_t>(n_chunks), 0.0);
    std::vector<long long> used(static_cast<std::size_t>(n_chunks), 0);
    for_chunks(n, kChunk, workers, [&](int c, int b, int e) {
        double s = 0.0;
        long long u = 0;
        for (int i = b; i < e; ++i) {
            const double rho = tx.kth_distance(X.data() + static_cast<std::ptrdiff_t>(i) * d, k, i);
            const double nu = tz.kth_distance(X.data() + static_cast<std::ptrdiff_t>(i) * d, k);
            if (rho > 0.0 && nu > 0.0) {
                s += std::log(nu / rho);
                ++u;
            }
        }
        partial[static_cast<std::size_t>(c)] = s;
        used[static_cast<std::size_t>(c)] = u;
    });
    double total = 0.0;
    long long total_used = 0;
    for (int c = 0; c < n_chunks; ++c) {
        total += partial[static_cast<std::size_t>(c)];
        total_used += used[static_cast<std::size_t>(c)];
    }
    if (total_used == 0) throw NumericalError("knn_kl: no usable query points");
    return d * total / static_cast<double>(total_used) +
           std::log(static_cast<double>(m) / (n - 1));
}

struct KLEstimate {
    double value = 0.0;
    double stderr_ = 0.0;
    enum class Method { ExactGaussian, KnnTwoSample } method = Method::ExactGaussian;
    int k = 0;         // k-NN order (KnnTwoSample)
    int n_samples = 0; // per-batch sample count (KnnTwoSample)
};

/// Raw two-sample estimate plus a bootstrap stderr (both batches resampled
/// with replacement per replicate, replicates keyed by (seed, index)).
inline KLEstimate knn_kl_with_bootstrap(const RowMat& X, const RowMat& Z, int k, int bootstrap,
                                        std::uint64_t seed, int workers = 0) {
    KLEstimate est;
    est.method = KLEstimate::Method::KnnTwoSample;
    est.k = k;
    est.n_samples = static_cast<int>(X.rows());
    est.value = knn_kl(X, Z, k, workers);
    if (bootstrap < 2) return est;
    const int n = static_cast<int>(X.rows());
    const int m = static_cast<int>(Z.rows());
    const int d = static_cast<int>(X.cols());
    std::vector<double> vals(static_cast<std::size_t>(bootstrap), 0.0);
    for_chunks(bootstrap, 1, workers, [&](int b, int, int) {
        RngStream rng(seed, 0xB00Dull + static_cast<std::uint64_t>(b));
        RowMat Xb(n, d), Zb(m, d);
        for (int i = 0; i < n; ++i)
            Xb.row(i) = X.row(static_cast<Eigen::Index>(rng.next_u64() % n));
        for (int i = 0; i < m; ++i)
            Zb.row(i) = Z.row(static_cast<Eigen::Index>(rng.next_u64() % m));
        vals[static_cast<std::size_t>(b)] = knn_kl(Xb, Zb, k, 1);
    });
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= bootstrap;
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    est.stderr_ = std::sqrt(var / (bootstrap - 1));
    return est;
}

enum class KLMethod { ExactGaussian, KnnTwoSample };

struct KnnOptions {
    int k = 5;
    int n = 150000;
    int bootstrap = 20;
};

/// KL(Q_{stop_t|y} || P_hat_{stop_t|y}): exact affine propagation against the
/// conditional law for Gaussian targets, or the two-sample k-NN estimator fed
/// by sample_cond and run_reverse batches.
inline KLEstimate kl_target_vs_sampler(const SamplerSpec& spec, const Target& target,
                                       const LinearObservation& model,
                                       const NoiseSchedule& sched, KLMethod method,
                                       const KnnOptions& opts = {}, std::uint64_t seed = 1,
                                       int workers = 0) {
    spec.validate(model);
    if (method == KLMethod::ExactGaussian) {
        const auto* g = std::get_if<GaussianTarget>(&target);
        if (g == nullptr)
            throw std::invalid_argument("kl_target_vs_sampler: exact method needs Gaussian");
        const AffineLawSequence seq = propagate_affine(spec, *g, model, sched);
        const GaussLaw q = std::get<GaussLaw>(cond_law(target, model, sched, spec.stop_t));
        KLEstimate est;
        est.method = KLEstimate::Method::ExactGaussian;
        est.value = gaussian_kl(q.mean, q.cov, seq.mean_at(spec.stop_t), seq.cov_at(spec.stop_t));
        return est;
    }
    if (opts.n < 10 * opts.k)
        throw std::invalid_argument("kl_target_vs_sampler: need n >= 10k for the k-NN method");
    std::uint64_t s = seed;
    const std::uint64_t seed_chains = splitmix64(s);
    const std::uint64_t seed_cond = splitmix64(s);
    const std::uint64_t seed_boot = splitmix64(s);
    RngStream cond_rng(seed_cond);
    const Mat Xc = sample_cond(target, model, sched, spec.stop_t, opts.n, cond_rng);
    RowMat X = Xc;
    const ReverseRun run = run_reverse(spec, target, model, sched, opts.n, seed_chains, workers);
    return knn_kl_with_bootstrap(X, run.samples, opts.k, opts.bootstrap, seed_boot, workers);
}

} // namespace smlb
