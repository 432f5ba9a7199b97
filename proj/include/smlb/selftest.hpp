#pragma once

#include <cstdio>
#include <functional>
#include <ostream>

#include "smlb/analysis.hpp"

namespace smlb {

/// Fast analytic invariant suite behind `smlb self-test`: projector algebra,
/// the two inverse identities, rectifier range constraints, the sigma_y = 0
/// sampler coincidences, score consistency against finite differences, and
/// the Gaussian KL closed form. Prints one line per check.
inline bool run_self_test(std::ostream& os) {
    int failed = 0;
    auto check = [&](const char* name, bool ok) {
        os << (ok ? "  ok   " : "  FAIL ") << name << "\n";
        if (!ok) ++failed;
    };

    RngStream rng(0xC0FFEEULL);
    const int d = 5, p = 2;
    Mat H(p, d);
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < d; ++j) H(i, j) = rng.normal();
    Vec y(p);
    rng.fill_normal(y);
    const LinearObservation model = LinearObservation::make(H, 0.4, y);
    const Mat I = Mat::Identity(d, d);

    check("H Hp = I_p", (model.H * model.H_pinv - Mat::Identity(p, p)).cwiseAbs().maxCoeff() <
                            1e-10);
    check("P idempotent/symmetric",
          (model.P * model.P - model.P).cwiseAbs().maxCoeff() < 1e-10 &&
              (model.P - model.P.transpose()).cwiseAbs().maxCoeff() < 1e-10);
    check("Pc P = 0", (model.Pc * model.P).cwiseAbs().maxCoeff() < 1e-10);

    {
        // inverse identity 1: (a s Hp Hp^T + (1-a) I)^{-1} (I-P) = (I-P)/(1-a)
        const double a = 0.37, s = 1.3;
        const Mat M = a * s * (model.H_pinv * model.H_pinv.transpose()) + (1 - a) * I;
        const Mat lhs = Eigen::LLT<Mat>(M).solve(Mat(model.Pc));
        check("inverse identity on null space",
              (lhs - model.Pc / (1 - a)).cwiseAbs().maxCoeff() < 1e-10);
        // inverse identity 2: (I-P)(a (I-P)S(I-P) + a s P + (1-a) I)^{-1} P = 0
        Mat A(d, d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) A(i, j) = rng.normal();
        const Mat S = A * A.transpose() + 0.1 * I;
        const Mat M2 = a * (model.Pc * S * model.Pc) + a * s * model.P + (1 - a) * I;
        const Mat lhs2 = model.Pc * Eigen::LLT<Mat>(M2).solve(Mat(model.P));
        check("inverse identity cross block", lhs2.cwiseAbs().maxCoeff() < 1e-10);
    }

    const NoiseSchedule sched = make_exp_then_const(200, 3.0, 1e-3);
    {
        bool ok = true;
        for (SamplerKind k : {SamplerKind::CCDF, SamplerKind::DDNM, SamplerKind::BODDNM}) {
            for (int rep = 0; rep < 5; ++rep) {
                const int t = 1 + static_cast<int>(rng.next_u64() % sched.T());
                Vec x(d);
                rng.fill_normal(x);
                ok = ok && (model.Pc * f_ty(k, model, sched, t, x)).cwiseAbs().maxCoeff() < 1e-12;
            }
        }
        check("rectifiers live in range(P)", ok);
    }

    {
        // sigma_y = 0: BO-DDNM, DDNM and DDNM+ coincide as maps
        const LinearObservation m0 = LinearObservation::identity_prefix(d, p, 0.0, y);
        bool ok = true;
        for (int rep = 0; rep < 5; ++rep) {
            const int t = 2 + static_cast<int>(rng.next_u64() % (sched.T() - 1));
            Vec x(d);
            rng.fill_normal(x);
            const Vec a = f_ty(SamplerKind::BODDNM, m0, sched, t, x);
            const Vec b = f_ty(SamplerKind::DDNM, m0, sched, t, x);
            const Vec c = f_ty(SamplerKind::DDNMplus, m0, sched, t, x, &x);
            ok = ok && (a - b).cwiseAbs().maxCoeff() < 1e-12 &&
                 (b - c).cwiseAbs().maxCoeff() < 1e-12;
        }
        check("sigma_y = 0 sampler coincidence", ok);
    }

    {
        Vec mu0(d);
        rng.fill_normal(mu0);
        Mat A(d, d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) A(i, j) = rng.normal();
        const Target tg = GaussianTarget::make(mu0, A * A.transpose() / d + 0.3 * I);
        bool ok = true;
        const double h = 1e-5;
        for (int rep = 0; rep < 3; ++rep) {
            const int t = 1 + static_cast<int>(rng.next_u64() % sched.T());
            Vec x(d);
            rng.fill_normal(x);
            const Vec s = score_uncond(tg, sched, t, x);
            for (int i = 0; i < d; ++i) {
                Vec xp = x, xm = x;
                xp[i] += h;
                xm[i] -= h;
                const double fd =
                    (logpdf_t(tg, sched, t, xp) - logpdf_t(tg, sched, t, xm)) / (2 * h);
                ok = ok && std::abs(fd - s[i]) < 1e-5 * std::max(1.0, std::abs(s[i]));
            }
        }
        check("score matches finite differences", ok);
    }

    {
        Vec m0 = Vec::Zero(1), m1 = Vec::Ones(1);
        Mat c1 = Mat::Identity(1, 1);
        const double kl = gaussian_kl(m0, c1, m1, c1);
        check("gaussian_kl hand value", std::abs(kl - 0.5) < 1e-12);
        check("gaussian_kl identical laws", std::abs(gaussian_kl(m1, c1, m1, c1)) < 1e-14);
    }

    {
        const auto diag = sched.diagnostics();
        double serial = 1.0;
        bool ok = true;
        for (int t = 1; t <= sched.T(); ++t) {
            serial *= sched.alpha(t);
            ok = ok && std::abs(serial - sched.alpha_bar(t)) <=
                           1e-12 * std::max(serial, sched.alpha_bar(t));
        }
        check("alpha_bar log-domain vs serial product", ok);
        check("schedule diagnostics populated", diag.max_beta_ratio > 0 && diag.crossover > 0);
    }

    os << (failed == 0 ? "self-test: all checks passed\n"
                       : "self-test: FAILURES detected\n");
    return failed == 0;
}

} // namespace smlb
