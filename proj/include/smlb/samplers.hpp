#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <optional>
#include <ostream>
#include <thread>
#include <vector>

#include "smlb/common.hpp"
#include "smlb/linear_model.hpp"
#include "smlb/rng.hpp"
#include "smlb/schedule.hpp"
#include "smlb/targets.hpp"

namespace smlb {

enum class SamplerKind { Oracle, CCDF, DDNM, DDNMplus, BODDNM };

inline const char* sampler_name(SamplerKind k) {
    switch (k) {
        case SamplerKind::Oracle: return "oracle";
        case SamplerKind::CCDF: return "ccdf";
        case SamplerKind::DDNM: return "ddnm";
        case SamplerKind::DDNMplus: return "ddnmplus";
        case SamplerKind::BODDNM: return "boddnm";
    }
    return "?";
}

/// Sampler configuration: which rectifier, whether the unconditional score is
/// perturbed (i.i.d. N(0, eps^2 I) added at every step), and where the chain
/// stops. stop_t = 0 is only meaningful when q_{0|y} exists.
struct SamplerSpec {
    SamplerKind kind = SamplerKind::BODDNM;
    double perturb_eps = 0.0; // 0 => exact score source
    int stop_t = 1;

    void validate(const LinearObservation& model) const {
        if (perturb_eps < 0.0) throw std::invalid_argument("SamplerSpec: perturb_eps < 0");
        if (stop_t != 0 && stop_t != 1)
            throw std::invalid_argument("SamplerSpec: stop_t must be 0 or 1");
        if (stop_t == 0 && !cond_density_exists_at_zero(model))
            throw std::invalid_argument(
                "SamplerSpec: stop_t = 0 requires sigma_y2 > 0 and canonical H");
        if (kind == SamplerKind::DDNMplus && !model.canonical)
            throw std::invalid_argument("SamplerSpec: DDNM+ is defined only for H = [I_p 0]");
    }
};

// ---------------------------------------------------------------------------
// Rectifiers f_{t,y}
// ---------------------------------------------------------------------------

/// Per-step context for the range-space rectifier f_{t,y}. Every variant
/// outputs a vector in range(P), so (I-P) f = 0 identically.
struct FtyContext {
    SamplerKind kind = SamplerKind::DDNM;
    const LinearObservation* model = nullptr;
    double beta = 0.0, alpha = 0.0, sqab = 0.0, omab = 0.0;
    Vec py;          // H_pinv y
    Mat bo_inv;      // BODDNM: Sigma_{t|0,y}^{-1}
    bool plus_case2 = false;
    double plus_lambda = 0.0; // sigma_t / (a sigma_y) when the DDNM+ noise case is active

    static FtyContext make(SamplerKind kind, const LinearObservation& model,
                           const NoiseSchedule& sched, int t) {
        if (kind == SamplerKind::Oracle)
            throw std::invalid_argument("f_ty: the oracle sampler has no rectifier");
        FtyContext c;
        c.kind = kind;
        c.model = &model;
        c.beta = sched.beta(t);
        c.alpha = sched.alpha(t);
        c.sqab = sched.sqrt_alpha_bar(t);
        c.omab = sched.one_minus_alpha_bar(t);
        c.py = model.pinv_y();
        switch (kind) {
            case SamplerKind::BODDNM:
                c.bo_inv = sigma_t0y_inverse(model, sched, t);
                break;
            case SamplerKind::DDNMplus: {
                if (!model.canonical)
                    throw std::invalid_argument("f_ty: DDNM+ requires H = [I_p 0]");
                const double sigma_t = sched.sigma(t);
                const double a = std::exp(0.5 * sched.log_alpha_bar(t - 1)) * c.beta / c.omab;
                const double a_sy = a * std::sqrt(model.sigma_y2);
                if (sigma_t < a_sy) {
                    c.plus_case2 = true;
                    c.plus_lambda = sigma_t / a_sy;
                }
                break;
            }
            default:
                break;
        }
        return c;
    }

    bool needs_x0t() const { return plus_case2; }

    Vec eval(const Vec& x, const Vec* x0t = nullptr) const {
        const auto& m = *model;
        switch (kind) {
            case SamplerKind::CCDF:
                return (std::sqrt(alpha) * sqab * py - m.P * x) / beta;
            case SamplerKind::DDNM:
                return (sqab * py - m.P * x) / omab;
            case SamplerKind::BODDNM:
                return bo_inv * (sqab * py - m.P * x);
            case SamplerKind::DDNMplus: {
                if (!plus_case2) return (sqab * py - m.P * x) / omab; // scaling matrix = I
                if (x0t == nullptr)
                    throw std::invalid_argument("f_ty: DDNM+ needs the x0t estimate here");
                return (sqab * (plus_lambda * py + (1.0 - plus_lambda) * (m.P * *x0t)) -
                        m.P * x) /
                       omab;
            }
            default:
                throw std::invalid_argument("f_ty: unsupported kind");
        }
    }
};

/// Point-wise rectifier evaluation. x0t is consulted only by DDNM+ (its
/// noise-aware branch); other kinds ignore it.
inline Vec f_ty(SamplerKind kind, const LinearObservation& model, const NoiseSchedule& sched,
                int t, const Vec& x, const Vec* x0t = nullptr) {
    FtyContext c = FtyContext::make(kind, model, sched, t);
    if (c.needs_x0t() && x0t == nullptr)
        throw std::invalid_argument("f_ty: DDNM+ requires x0t for this (t, sigma_y) regime");
    return c.eval(x, x0t);
}

// ---------------------------------------------------------------------------
// Reverse process
// ---------------------------------------------------------------------------

/// Everything one reverse step needs, precomputed per t and shared read-only
/// across chains. The drift of every sampler is
///     g(x) = Smat * s(x) + Fmat * x + fvec
/// where s is the (possibly perturbed) score the kind consumes: for zero-shot
/// kinds Smat folds (I-P) together with DDNM+'s x0t feedback, and for the
/// oracle Smat = I with s the conditional score. The flat copies drive the
/// allocation-free chain kernel.
struct StepContext {
    int t = 0;
    int d = 0;
    double alpha = 0.0, beta = 0.0, inv_sqrt_alpha = 0.0, sigma = 0.0;
    double eps = 0.0;
    Law score_law;
    Mat Smat, Fmat;
    Vec fvec;

    // flat kernel data (row-major)
    int ncomp = 1;
    std::vector<double> k_means, k_logw, k_inv, k_smat, k_fmat, k_fvec;

    static StepContext make(const SamplerSpec& spec, const Target& target,
                            const LinearObservation& model, const NoiseSchedule& sched, int t) {
        StepContext c;
        c.t = t;
        c.d = model.d();
        c.alpha = sched.alpha(t);
        c.beta = sched.beta(t);
        c.inv_sqrt_alpha = 1.0 / std::sqrt(c.alpha);
        c.sigma = sched.sigma(t);
        c.eps = spec.perturb_eps;
        const int d = c.d;
        const double sqab = sched.sqrt_alpha_bar(t);
        const double omab = sched.one_minus_alpha_bar(t);
        const Vec py = model.pinv_y();
        if (spec.kind == SamplerKind::Oracle) {
            c.score_law = cond_law(target, model, sched, t);
            c.Smat = Mat::Identity(d, d);
            c.Fmat = Mat::Zero(d, d);
            c.fvec = Vec::Zero(d);
        } else {
            c.score_law = uncond_law(target, sched, t);
            c.Smat = model.Pc;
            switch (spec.kind) {
                case SamplerKind::BODDNM: {
                    const Mat B = sigma_t0y_inverse(model, sched, t);
                    c.Fmat = -B * model.P;
                    c.fvec = sqab * (B * py);
                    break;
                }
                case SamplerKind::DDNM:
                    c.Fmat = -model.P / omab;
                    c.fvec = (sqab / omab) * py;
                    break;
                case SamplerKind::CCDF:
                    c.Fmat = -model.P / c.beta;
                    c.fvec = (std::sqrt(c.alpha) * sqab / c.beta) * py;
                    break;
                case SamplerKind::DDNMplus: {
                    const FtyContext f = FtyContext::make(spec.kind, model, sched, t);
                    if (!f.plus_case2) {
                        c.Fmat = -model.P / omab;
                        c.fvec = (sqab / omab) * py;
                    } else {
                        // x0t = (x + omab s)/sqab feeds back into the drift:
                        // g = (Pc + (1-lam) P) s + (lam/omab)(sqab py - P x)
                        const double lam = f.plus_lambda;
                        c.Smat = model.Pc + (1.0 - lam) * model.P;
                        c.Fmat = -(lam / omab) * model.P;
                        c.fvec = (lam * sqab / omab) * py;
                    }
                    break;
                }
                default:
                    throw std::invalid_argument("StepContext: unsupported kind");
            }
        }
        c.flatten();
        return c;
    }

    void flatten() {
        const int d = this->d;
        auto put_mat = [d](std::vector<double>& dst, const Mat& src) {
            dst.resize(static_cast<std::size_t>(d) * d);
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j) dst[static_cast<std::size_t>(i) * d + j] = src(i, j);
        };
        put_mat(k_smat, Smat);
        put_mat(k_fmat, Fmat);
        k_fvec.assign(fvec.data(), fvec.data() + d);
        if (const auto* g = std::get_if<GaussLaw>(&score_law)) {
            ncomp = 1;
            k_means.assign(g->mean.data(), g->mean.data() + d);
            k_logw.assign(1, 0.0);
            put_mat(k_inv, g->inv);
        } else {
            const auto& mx = std::get<MixtureLaw>(score_law);
            ncomp = mx.components();
            k_means.resize(static_cast<std::size_t>(ncomp) * d);
            for (int k = 0; k < ncomp; ++k)
                for (int j = 0; j < d; ++j)
                    k_means[static_cast<std::size_t>(k) * d + j] = mx.means[static_cast<std::size_t>(k)][j];
            k_logw.assign(mx.log_w.data(), mx.log_w.data() + ncomp);
            put_mat(k_inv, mx.inv);
        }
    }

    std::size_t scratch_size() const {
        return static_cast<std::size_t>(ncomp) * d + ncomp + 3 * static_cast<std::size_t>(d);
    }

    /// Allocation-free transition kernel: reads x, writes x_{t-1} to out.
    /// scratch must hold scratch_size() doubles. z_override replaces the step
    /// noise (deterministic test hook). RNG order: score perturbation first,
    /// then step noise.
    void step_flat(const double* x, double* out, RngStream& rng, double* scratch,
                   const double* z_override = nullptr) const {
        const int dd = d;
        if (dd == 2 && ncomp == 2 && z_override == nullptr && eps == 0.0) {
            step_flat_2x2(x, out, rng);
            return;
        }
        double* u = scratch;                    // ncomp x d
        double* q = u + ncomp * dd;             // ncomp
        double* s = q + ncomp;                  // d
        double* g = s + dd;                     // d
        double* r = g + dd;                     // d
        const double* inv = k_inv.data();
        // score of the (Gaussian or mixture) law
        if (ncomp == 1) {
            const double* mu = k_means.data();
            for (int j = 0; j < dd; ++j) r[j] = x[j] - mu[j];
            for (int i = 0; i < dd; ++i) {
                double acc = 0.0;
                for (int j = 0; j < dd; ++j) acc += inv[i * dd + j] * r[j];
                s[i] = -acc;
            }
        } else {
            double qmax = -1e300;
            for (int k = 0; k < ncomp; ++k) {
                const double* mu = k_means.data() + static_cast<std::size_t>(k) * dd;
                for (int j = 0; j < dd; ++j) r[j] = x[j] - mu[j];
                double quad = 0.0;
                double* uk = u + static_cast<std::size_t>(k) * dd;
                for (int i = 0; i < dd; ++i) {
                    double acc = 0.0;
                    for (int j = 0; j < dd; ++j) acc += inv[i * dd + j] * r[j];
                    uk[i] = acc;
                    quad += acc * r[i];
                }
                q[k] = k_logw[k] - 0.5 * quad;
                if (q[k] > qmax) qmax = q[k];
            }
            double wsum = 0.0;
            for (int k = 0; k < ncomp; ++k) {
                q[k] = std::exp(q[k] - qmax);
                wsum += q[k];
            }
            for (int i = 0; i < dd; ++i) s[i] = 0.0;
            for (int k = 0; k < ncomp; ++k) {
                const double w = q[k] / wsum;
                const double* uk = u + static_cast<std::size_t>(k) * dd;
                for (int i = 0; i < dd; ++i) s[i] -= w * uk[i];
            }
        }
        if (eps > 0.0)
            for (int i = 0; i < dd; ++i) s[i] += eps * rng.normal();
        // drift g = Smat s + Fmat x + fvec
        const double* sm = k_smat.data();
        const double* fm = k_fmat.data();
        for (int i = 0; i < dd; ++i) {
            double acc = k_fvec[i];
            for (int j = 0; j < dd; ++j) acc += sm[i * dd + j] * s[j] + fm[i * dd + j] * x[j];
            g[i] = acc;
        }
        if (z_override != nullptr) {
            for (int i = 0; i < dd; ++i)
                out[i] = (x[i] + beta * g[i]) * inv_sqrt_alpha + sigma * z_override[i];
        } else {
            for (int i = 0; i < dd; ++i)
                out[i] = (x[i] + beta * g[i]) * inv_sqrt_alpha + sigma * rng.normal();
        }
    }

    Vec step(const Vec& x, RngStream& rng, const Vec* z_override = nullptr) const {
        std::vector<double> scratch(scratch_size());
        Vec out(d);
        step_flat(x.data(), out.data(), rng, scratch.data(),
                  z_override ? z_override->data() : nullptr);
        return out;
    }

private:
    /// Unrolled kernel for the d = 2, two-component mixtures that dominate
    /// desk-scale runs; one exp per step via the responsibility logit.
    void step_flat_2x2(const double* x, double* out, RngStream& rng) const {
        const double* inv = k_inv.data();
        const double* m0 = k_means.data();
        const double* m1 = m0 + 2;
        const double r00 = x[0] - m0[0], r01 = x[1] - m0[1];
        const double r10 = x[0] - m1[0], r11 = x[1] - m1[1];
        const double u00 = inv[0] * r00 + inv[1] * r01;
        const double u01 = inv[2] * r00 + inv[3] * r01;
        const double u10 = inv[0] * r10 + inv[1] * r11;
        const double u11 = inv[2] * r10 + inv[3] * r11;
        const double q0 = k_logw[0] - 0.5 * (u00 * r00 + u01 * r01);
        const double q1 = k_logw[1] - 0.5 * (u10 * r10 + u11 * r11);
        const double w1 = 1.0 / (1.0 + std::exp(q0 - q1));
        const double w0 = 1.0 - w1;
        const double s0 = -(w0 * u00 + w1 * u10);
        const double s1 = -(w0 * u01 + w1 * u11);
        const double* sm = k_smat.data();
        const double* fm = k_fmat.data();
        const double g0 = k_fvec[0] + sm[0] * s0 + sm[1] * s1 + fm[0] * x[0] + fm[1] * x[1];
        const double g1 = k_fvec[1] + sm[2] * s0 + sm[3] * s1 + fm[2] * x[0] + fm[3] * x[1];
        out[0] = (x[0] + beta * g0) * inv_sqrt_alpha + sigma * rng.normal();
        out[1] = (x[1] + beta * g1) * inv_sqrt_alpha + sigma * rng.normal();
    }
};

/// One reverse transition x_t -> x_{t-1}; convenience form for tests and
/// point-wise checks.
inline Vec reverse_step(const SamplerSpec& spec, const Target& target,
                        const LinearObservation& model, const NoiseSchedule& sched, int t,
                        const Vec& x, RngStream& rng, const Vec* z_override = nullptr) {
    spec.validate(model);
    return StepContext::make(spec, target, model, sched, t).step(x, rng, z_override);
}

namespace detail {
inline void hash_doubles(std::uint64_t& h, const double* v, std::size_t n) {
    const unsigned char* bytes = reinterpret_cast<const unsigned char*>(v);
    for (std::size_t i = 0; i < n * sizeof(double); ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
    }
}
} // namespace detail

inline std::uint64_t schedule_hash(const NoiseSchedule& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL ^ static_cast<std::uint64_t>(s.T());
    const double params[] = {static_cast<double>(static_cast<int>(s.kind())), s.c(), s.delta()};
    detail::hash_doubles(h, params, 3);
    return h;
}

inline std::uint64_t model_hash(const LinearObservation& m) {
    std::uint64_t h = 0xcbf29ce484222325ULL ^ static_cast<std::uint64_t>(m.d());
    detail::hash_doubles(h, m.H.data(), static_cast<std::size_t>(m.H.size()));
    detail::hash_doubles(h, m.y.data(), static_cast<std::size_t>(m.y.size()));
    detail::hash_doubles(h, &m.sigma_y2, 1);
    return h;
}

/// Batch of reverse chains, one row per chain, at t = stop_t.
struct ReverseRun {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> samples;
    std::uint64_t seed = 0;
    int stop_t = 1;
    SamplerKind kind = SamplerKind::BODDNM;
    std::uint64_t sched_hash = 0;
    std::uint64_t obs_hash = 0;

    int n() const { return static_cast<int>(samples.rows()); }
    int dim() const { return static_cast<int>(samples.cols()); }
};

inline unsigned resolve_workers(int workers) {
    if (workers > 0) return static_cast<unsigned>(workers);
    const unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? hc : 1;
}

/// Runs n independent chains from x_T ~ N(0, I) down to stop_t. Chain i uses
/// the stream (seed, i), so the batch is bit-identical under any worker count.
inline ReverseRun run_reverse(const SamplerSpec& spec, const Target& target,
                              const LinearObservation& model, const NoiseSchedule& sched, int n,
                              std::uint64_t seed, int workers = 0) {
    if (n < 1) throw std::invalid_argument("run_reverse: n >= 1 required");
    spec.validate(model);
    const int T = sched.T();
    const int d = target_dim(target);
    if (d != model.d()) throw std::invalid_argument("run_reverse: target/model dim mismatch");

    std::vector<StepContext> steps;
    steps.reserve(static_cast<std::size_t>(T - spec.stop_t));
    for (int t = T; t > spec.stop_t; --t)
        steps.push_back(StepContext::make(spec, target, model, sched, t));
    std::size_t scratch_n = 16;
    for (const auto& sc : steps) scratch_n = std::max(scratch_n, sc.scratch_size());

    ReverseRun run;
    run.samples.resize(n, d);
    run.seed = seed;
    run.stop_t = spec.stop_t;
    run.kind = spec.kind;
    run.sched_hash = schedule_hash(sched);
    run.obs_hash = model_hash(model);

    const unsigned nw = std::min<unsigned>(resolve_workers(workers), static_cast<unsigned>(n));
    auto work = [&](int begin, int end) {
        std::vector<double> scratch(scratch_n);
        std::vector<double> x(static_cast<std::size_t>(d)), xn(static_cast<std::size_t>(d));
        for (int i = begin; i < end; ++i) {
            RngStream rng(seed, static_cast<std::uint64_t>(i));
            for (int j = 0; j < d; ++j) x[static_cast<std::size_t>(j)] = rng.normal();
            for (const auto& sc : steps) {
                sc.step_flat(x.data(), xn.data(), rng, scratch.data());
                std::swap(x, xn);
            }
            for (int j = 0; j < d; ++j) run.samples(i, j) = x[static_cast<std::size_t>(j)];
        }
    };
    if (nw <= 1) {
        work(0, n);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(nw);
        const int chunk = (n + static_cast<int>(nw) - 1) / static_cast<int>(nw);
        for (unsigned w = 0; w < nw; ++w) {
            const int b = static_cast<int>(w) * chunk;
            const int e = std::min(n, b + chunk);
            if (b >= e) break;
            pool.emplace_back(work, b, e);
        }
        for (auto& th : pool) th.join();
    }
    return run;
}

// ---------------------------------------------------------------------------
// Exact law propagation (Gaussian targets)
// ---------------------------------------------------------------------------

/// Exact per-t law of the sampling process for Gaussian targets, from the
/// mean/cov recursion mean' = A mean + b, cov' = A cov A^T + sigma_t^2 I.
struct AffineLawSequence {
    int stop_t = 1;
    int T = 0;
    std::vector<Vec> means; // index 0 <-> t = T, last <-> t = stop_t
    std::vector<Mat> covs;

    const Vec& mean_at(int t) const { return means.at(static_cast<std::size_t>(T - t)); }
    const Mat& cov_at(int t) const { return covs.at(static_cast<std::size_t>(T - t)); }
};

inline AffineLawSequence propagate_affine(const SamplerSpec& spec, const GaussianTarget& target,
                                          const LinearObservation& model,
                                          const NoiseSchedule& sched) {
    spec.validate(model);
    if (spec.perturb_eps != 0.0)
        throw std::invalid_argument("propagate_affine: requires the exact score source");
    const int d = target.dim();
    const int T = sched.T();
    const Mat I = Mat::Identity(d, d);
    const Vec py = model.pinv_y();

    AffineLawSequence seq;
    seq.stop_t = spec.stop_t;
    seq.T = T;
    seq.means.reserve(static_cast<std::size_t>(T - spec.stop_t + 1));
    seq.covs.reserve(static_cast<std::size_t>(T - spec.stop_t + 1));

    Vec mean = Vec::Zero(d);
    Mat cov = I;
    seq.means.push_back(mean);
    seq.covs.push_back(cov);

    for (int t = T; t > spec.stop_t; --t) {
        const double beta = sched.beta(t);
        const double alpha = sched.alpha(t);
        const double ab = sched.alpha_bar(t);
        const double omab = sched.one_minus_alpha_bar(t);
        const double sqab = sched.sqrt_alpha_bar(t);
        Mat G(d, d);
        Vec h(d);
        if (spec.kind == SamplerKind::Oracle) {
            const GaussLaw q = std::get<GaussLaw>(cond_law(Target{target}, model, sched, t));
            G = -q.inv;
            h = q.inv * q.mean;
        } else {
            const Mat St = ab * target.Sigma0 + omab * I;
            const Mat Sti = Eigen::LLT<Mat>(St).solve(I);
            G = -model.Pc * Sti;
            h = model.Pc * (Sti * (sqab * target.mu0));
            switch (spec.kind) {
                case SamplerKind::BODDNM: {
                    const Mat Minv = sigma_t0y_inverse(model, sched, t);
                    G -= Minv * model.P;
                    h += sqab * (Minv * py);
                    break;
                }
                case SamplerKind::DDNM:
                    G -= model.P / omab;
                    h += (sqab / omab) * py;
                    break;
                case SamplerKind::CCDF:
                    G -= model.P / beta;
                    h += (std::sqrt(alpha) * sqab / beta) * py;
                    break;
                case SamplerKind::DDNMplus: {
                    const double sigma_t = sched.sigma(t);
                    const double a = std::exp(0.5 * sched.log_alpha_bar(t - 1)) * beta / omab;
                    const double a_sy = a * std::sqrt(model.sigma_y2);
                    if (sigma_t >= a_sy) {
                        G -= model.P / omab;
                        h += (sqab / omab) * py;
                    } else {
                        const double lam = sigma_t / a_sy;
                        // x0t = Mx x + mx is affine in x through the exact score
                        const Mat Mx = (I - omab * Sti) / sqab;
                        const Vec mx = omab * (Sti * target.mu0);
                        G += (sqab * (1.0 - lam) * (model.P * Mx) - model.P) / omab;
                        h += (sqab * (lam * py + (1.0 - lam) * (model.P * mx))) / omab;
                    }
                    break;
                }
                default:
                    throw std::invalid_argument("propagate_affine: unsupported kind");
            }
        }
        const double sq_alpha = std::sqrt(alpha);
        const Mat A = (I + beta * G) / sq_alpha;
        const Vec b = (beta / sq_alpha) * h;
        mean = A * mean + b;
        cov = A * cov * A.transpose() + (beta / alpha) * I;
        cov = 0.5 * (cov + cov.transpose());
        seq.means.push_back(mean);
        seq.covs.push_back(cov);
    }
    return seq;
}

// ---------------------------------------------------------------------------
// Batch export
// ---------------------------------------------------------------------------

inline void write_run_csv(const ReverseRun& run, std::ostream& os) {
    for (int j = 0; j < run.dim(); ++j) os << (j ? "," : "") << "x" << (j + 1);
    os << "\n";
    char buf[64];
    for (int i = 0; i < run.n(); ++i) {
        for (int j = 0; j < run.dim(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", run.samples(i, j));
            os << (j ? "," : "") << buf;
        }
        os << "\n";
    }
}

/// 16-byte header: magic "SMLB", version u32, n u32, d u32; then row-major
/// float64 samples.
inline void write_run_binary(const ReverseRun& run, std::ostream& os) {
    const char magic[4] = {'S', 'M', 'L', 'B'};
    const std::uint32_t version = 1;
    const std::uint32_t n = static_cast<std::uint32_t>(run.n());
    const std::uint32_t d = static_cast<std::uint32_t>(run.dim());
    os.write(magic, 4);
    os.write(reinterpret_cast<const char*>(&version), 4);
    os.write(reinterpret_cast<const char*>(&n), 4);
    os.write(reinterpret_cast<const char*>(&d), 4);
    os.write(reinterpret_cast<const char*>(run.samples.data()),
             static_cast<std::streamsize>(sizeof(double) * run.samples.size()));
}

inline ReverseRun read_run_binary(std::istream& is) {
    char magic[4];
    std::uint32_t version = 0, n = 0, d = 0;
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "SMLB", 4) != 0)
        throw std::invalid_argument("read_run_binary: bad magic");
    is.read(reinterpret_cast<char*>(&version), 4);
    is.read(reinterpret_cast<char*>(&n), 4);
    is.read(reinterpret_cast<char*>(&d), 4);
    if (!is || version != 1) throw std::invalid_argument("read_run_binary: bad header");
    ReverseRun run;
    run.samples.resize(n, d);
    is.read(reinterpret_cast<char*>(run.samples.data()),
            static_cast<std::streamsize>(sizeof(double) * run.samples.size()));
    if (!is) throw std::invalid_argument("read_run_binary: truncated payload");
    return run;
}

} // namespace smlb
