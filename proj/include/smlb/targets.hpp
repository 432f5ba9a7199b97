#pragma once

#include <cmath>
#include <numbers>
#include <utility>
#include <variant>
#include <vector>

#include "smlb/common.hpp"
#include "smlb/linear_model.hpp"
#include "smlb/rng.hpp"
#include "smlb/schedule.hpp"

namespace smlb {

/// Multivariate normal with cached Cholesky factor, dense inverse and
/// log-determinant, so score/logpdf evaluations inside the reverse loop are
/// plain mat-vecs.
struct GaussLaw {
    Vec mean;
    Mat cov;
    Mat chol_l;
    Mat inv;
    double logdet = 0.0;

    static GaussLaw make(Vec mean, Mat cov) {
        GaussLaw g;
        g.mean = std::move(mean);
        g.cov = std::move(cov);
        Eigen::LLT<Mat> llt(g.cov);
        if (llt.info() != Eigen::Success)
            throw NumericalError("GaussLaw: covariance not positive definite");
        g.chol_l = llt.matrixL();
        g.inv = llt.solve(Mat::Identity(g.cov.rows(), g.cov.cols()));
        g.logdet = 2.0 * g.chol_l.diagonal().array().log().sum();
        return g;
    }

    int dim() const { return static_cast<int>(mean.size()); }

    double logpdf(const Vec& x) const {
        const Vec r = x - mean;
        const double quad = r.dot(inv * r);
        return -0.5 * (dim() * std::log(2.0 * std::numbers::pi) + logdet + quad);
    }

    Vec score(const Vec& x) const { return inv * (mean - x); }

    Vec sample(RngStream& rng) const { return mean + chol_l * rng.normal_vec(dim()); }
};

/// Equal-covariance Gaussian mixture at a fixed diffusion time. All weight
/// arithmetic is in log space; at small 1-alpha_bar_t the component densities
/// underflow otherwise.
struct MixtureLaw {
    std::vector<Vec> means;
    Vec log_w;
    Mat cov;
    Mat chol_l;
    Mat inv;
    double logdet = 0.0;

    static MixtureLaw make(std::vector<Vec> means, Vec log_w, Mat cov) {
        MixtureLaw m;
        m.means = std::move(means);
        m.log_w = std::move(log_w);
        m.cov = std::move(cov);
        Eigen::LLT<Mat> llt(m.cov);
        if (llt.info() != Eigen::Success)
            throw NumericalError("MixtureLaw: covariance not positive definite");
        m.chol_l = llt.matrixL();
        m.inv = llt.solve(Mat::Identity(m.cov.rows(), m.cov.cols()));
        m.logdet = 2.0 * m.chol_l.diagonal().array().log().sum();
        return m;
    }

    int dim() const { return static_cast<int>(means[0].size()); }
    int components() const { return static_cast<int>(means.size()); }

    /// Posterior component weights r_n(x), normalized in log space.
    Vec responsibilities(const Vec& x) const {
        const int n = components();
        Vec lw(n);
        for (int k = 0; k < n; ++k) {
            const Vec r = x - means[k];
            lw[k] = log_w[k] - 0.5 * r.dot(inv * r);
        }
        const double mx = lw.maxCoeff();
        Vec w = (lw.array() - mx).exp();
        w /= w.sum();
        return w;
    }

    double logpdf(const Vec& x) const {
        const int n = components();
        const double norm = -0.5 * (dim() * std::log(2.0 * std::numbers::pi) + logdet);
        Vec lw(n);
        for (int k = 0; k < n; ++k) {
            const Vec r = x - means[k];
            lw[k] = log_w[k] + norm - 0.5 * r.dot(inv * r);
        }
        const double mx = lw.maxCoeff();
        return mx + std::log((lw.array() - mx).exp().sum());
    }

    Vec score(const Vec& x) const {
        const Vec w = responsibilities(x);
        Vec s = Vec::Zero(dim());
        for (int k = 0; k < components(); ++k) s += w[k] * (inv * (means[k] - x));
        return s;
    }

    Vec sample(RngStream& rng) const {
        const double u = rng.uniform();
        double acc = 0.0;
        int k = components() - 1;
        for (int i = 0; i < components(); ++i) {
            acc += std::exp(log_w[i]);
            if (u <= acc) {
                k = i;
                break;
            }
        }
        return means[k] + chol_l * rng.normal_vec(dim());
    }
};

using Law = std::variant<GaussLaw, MixtureLaw>;

inline double law_logpdf(const Law& l, const Vec& x) {
    return std::visit([&](const auto& v) { return v.logpdf(x); }, l);
}
inline Vec law_score(const Law& l, const Vec& x) {
    return std::visit([&](const auto& v) { return v.score(x); }, l);
}
inline Vec law_sample(const Law& l, RngStream& rng) {
    return std::visit([&](const auto& v) { return v.sample(rng); }, l);
}

// ---------------------------------------------------------------------------
// Target distributions
// ---------------------------------------------------------------------------

struct GaussianTarget {
    Vec mu0;
    Mat Sigma0;

    static GaussianTarget make(Vec mu0, Mat Sigma0) {
        if (Sigma0.rows() != Sigma0.cols() || Sigma0.rows() != mu0.size())
            throw std::invalid_argument("GaussianTarget: shape mismatch");
        if ((Sigma0 - Sigma0.transpose()).cwiseAbs().maxCoeff() > 1e-12)
            throw std::invalid_argument("GaussianTarget: Sigma0 must be symmetric");
        Eigen::SelfAdjointEigenSolver<Mat> eig(Sigma0);
        if (eig.eigenvalues().minCoeff() <= 0.0)
            throw std::invalid_argument("GaussianTarget: Sigma0 must be positive definite");
        return GaussianTarget{std::move(mu0), std::move(Sigma0)};
    }

    int dim() const { return static_cast<int>(mu0.size()); }
};

/// Equal-variance mixture: shared SPD covariance, weights on the simplex.
struct MixtureTarget {
    Vec weights;
    std::vector<Vec> means;
    Mat Sigma0;

    static MixtureTarget make(Vec weights, std::vector<Vec> means, Mat Sigma0) {
        if (means.empty() || weights.size() != static_cast<Eigen::Index>(means.size()))
            throw std::invalid_argument("MixtureTarget: weights/means mismatch");
        for (const auto& m : means)
            if (m.size() != Sigma0.rows())
                throw std::invalid_argument("MixtureTarget: mean dimension mismatch");
        if (weights.minCoeff() < 0.0 || std::abs(weights.sum() - 1.0) > 1e-12)
            throw std::invalid_argument("MixtureTarget: weights must lie on the simplex");
        Eigen::SelfAdjointEigenSolver<Mat> eig(Sigma0);
        if (eig.eigenvalues().minCoeff() <= 0.0)
            throw std::invalid_argument("MixtureTarget: Sigma0 must be positive definite");
        return MixtureTarget{std::move(weights), std::move(means), std::move(Sigma0)};
    }

    int dim() const { return static_cast<int>(Sigma0.rows()); }
};

using Target = std::variant<GaussianTarget, MixtureTarget>;

inline int target_dim(const Target& t) {
    return std::visit([](const auto& v) { return v.dim(); }, t);
}

/// Sigma0 with per-coordinate variances and one correlation coefficient rho
/// shared by every off-diagonal pair: Sigma_ij = rho * sd_i * sd_j (i != j).
/// This realizes the cross-block correlation construction while staying
/// positive definite for all rho in (-1/(d-1), 1).
inline Mat make_equicorrelated_sigma0(const Vec& variances, double rho) {
    const Eigen::Index d = variances.size();
    if (variances.minCoeff() <= 0.0)
        throw std::invalid_argument("make_equicorrelated_sigma0: variances must be > 0");
    if (rho <= -1.0 / static_cast<double>(d - 1) || rho >= 1.0)
        throw std::invalid_argument("make_equicorrelated_sigma0: rho out of the PD range");
    const Vec sd = variances.cwiseSqrt();
    Mat S = rho * (sd * sd.transpose());
    S.diagonal() = variances;
    return S;
}

// ---------------------------------------------------------------------------
// Time-t laws
// ---------------------------------------------------------------------------

/// Unconditional marginal Q_t: the target convolved to time t,
/// Sigma_t = abar_t Sigma0 + (1 - abar_t) I. t = 0 gives the target itself.
inline Law uncond_law(const Target& target, const NoiseSchedule& sched, int t) {
    if (t < 0 || t > sched.T()) throw std::invalid_argument("uncond_law: t out of range");
    const double ab = sched.alpha_bar(t);
    const double omab = sched.one_minus_alpha_bar(t);
    const double sqab = sched.sqrt_alpha_bar(t);
    return std::visit(
        [&](const auto& tg) -> Law {
            const int d = tg.dim();
            Mat cov = ab * tg.Sigma0 + omab * Mat::Identity(d, d);
            using T = std::decay_t<decltype(tg)>;
            if constexpr (std::is_same_v<T, GaussianTarget>) {
                return GaussLaw::make(sqab * tg.mu0, std::move(cov));
            } else {
                std::vector<Vec> means;
                means.reserve(tg.means.size());
                for (const auto& m : tg.means) means.push_back(sqab * m);
                return MixtureLaw::make(std::move(means), tg.weights.array().log(),
                                        std::move(cov));
            }
        },
        target);
}

inline bool cond_density_exists_at_zero(const LinearObservation& m) {
    return m.sigma_y2 > 0.0 && m.canonical;
}

/// Conditional marginal Q_{t|y} under the conditional forward model:
/// component means sqrt(abar_t) ((I-P) mu_n + Hp y), shared covariance
/// Sigma_{t|y} = abar_t (I-P) Sigma0 (I-P) + (1-abar_t) I + abar_t sy2 Hp Hp^T.
/// Mixture weights stay the prior pi_n (no Bayes reweighting).
inline Law cond_law(const Target& target, const LinearObservation& model,
                    const NoiseSchedule& sched, int t) {
    if (t < 0 || t > sched.T()) throw std::invalid_argument("cond_law: t out of range");
    if (t == 0 && !cond_density_exists_at_zero(model))
        throw std::invalid_argument(
            "cond_law: q_{0|y} requires sigma_y2 > 0 and H = [I_p 0]; use early stop t=1");
    const double ab = sched.alpha_bar(t);
    const double omab = sched.one_minus_alpha_bar(t);
    const double sqab = sched.sqrt_alpha_bar(t);
    const Vec py = model.pinv_y();
    return std::visit(
        [&](const auto& tg) -> Law {
            const int d = tg.dim();
            Mat cov = ab * (model.Pc * tg.Sigma0 * model.Pc) + omab * Mat::Identity(d, d) +
                      (ab * model.sigma_y2) * (model.H_pinv * model.H_pinv.transpose());
            using T = std::decay_t<decltype(tg)>;
            if constexpr (std::is_same_v<T, GaussianTarget>) {
                return GaussLaw::make(sqab * (model.Pc * tg.mu0 + py), std::move(cov));
            } else {
                std::vector<Vec> means;
                means.reserve(tg.means.size());
                for (const auto& m : tg.means) means.push_back(sqab * (model.Pc * m + py));
                return MixtureLaw::make(std::move(means), tg.weights.array().log(),
                                        std::move(cov));
            }
        },
        target);
}

// ---------------------------------------------------------------------------
// Point-wise operations
// ---------------------------------------------------------------------------

/// n i.i.d. draws from Q_0, one row per draw.
inline Mat sample_prior(const Target& target, RngStream& rng, int n) {
    if (n < 1) throw std::invalid_argument("sample_prior: n >= 1 required");
    const int d = target_dim(target);
    Law l = std::visit(
        [&](const auto& tg) -> Law {
            using T = std::decay_t<decltype(tg)>;
            if constexpr (std::is_same_v<T, GaussianTarget>) {
                return GaussLaw::make(tg.mu0, tg.Sigma0);
            } else {
                return MixtureLaw::make(tg.means, tg.weights.array().log(), tg.Sigma0);
            }
        },
        target);
    Mat out(n, d);
    for (int i = 0; i < n; ++i) out.row(i) = law_sample(l, rng).transpose();
    return out;
}

inline double logpdf_t(const Target& target, const NoiseSchedule& sched, int t, const Vec& x) {
    return law_logpdf(uncond_law(target, sched, t), x);
}

inline Vec score_uncond(const Target& target, const NoiseSchedule& sched, int t, const Vec& x) {
    if (t < 1) throw std::invalid_argument("score_uncond: t >= 1 required");
    return law_score(uncond_law(target, sched, t), x);
}

inline Vec score_cond(const Target& target, const LinearObservation& model,
                      const NoiseSchedule& sched, int t, const Vec& x) {
    if (t < 0) throw std::invalid_argument("score_cond: t >= 0 required");
    return law_score(cond_law(target, model, sched, t), x);
}

/// Posterior mean m_{t,y}(x) = (x + (1-alpha_t) grad log q_{t|y}(x)) / sqrt(alpha_t)
/// (Tweedie). Needs q_{t-1|y} to exist, so t >= 2 always works and t = 1 only
/// when the data-level conditional density exists.
inline Vec posterior_mean(const Target& target, const LinearObservation& model,
                          const NoiseSchedule& sched, int t, const Vec& x) {
    if (t < 2 && !(t == 1 && cond_density_exists_at_zero(model)))
        throw std::invalid_argument("posterior_mean: requires t >= 2 (or t = 1 with q_{0|y})");
    const double a = sched.alpha(t);
    return (x + (1.0 - a) * score_cond(target, model, sched, t, x)) / std::sqrt(a);
}

inline Mat sample_cond(const Target& target, const LinearObservation& model,
                       const NoiseSchedule& sched, int t, int n, RngStream& rng) {
    if (n < 1) throw std::invalid_argument("sample_cond: n >= 1 required");
    Law l = cond_law(target, model, sched, t);
    Mat out(n, target_dim(target));
    for (int i = 0; i < n; ++i) out.row(i) = law_sample(l, rng).transpose();
    return out;
}

} // namespace smlb
