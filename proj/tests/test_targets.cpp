#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "oracles.hpp"
#include "smlb/targets.hpp"

using namespace smlb;
using Catch::Approx;

namespace {

GaussianTarget random_gaussian(int d, std::uint64_t seed) {
    RngStream rng(seed);
    Vec mu(d);
    rng.fill_normal(mu);
    Mat A(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) A(i, j) = rng.normal();
    return GaussianTarget::make(mu, A * A.transpose() / d + 0.3 * Mat::Identity(d, d));
}

MixtureTarget small_mixture() {
    Vec w(2);
    w << 0.4, 0.6;
    std::vector<Vec> means(2, Vec(2));
    means[0] << -0.5, 0.7;
    means[1] << 0.3, -0.4;
    Vec var(2);
    var << 0.1, 1.0;
    return MixtureTarget::make(w, means, make_equicorrelated_sigma0(var, 0.6));
}

} // namespace

TEST_CASE("prior sampling hits CLT bands (gaussian)", "[targets]") {
    const int d = 3, n = 100000;
    const Target tg = GaussianTarget::make(Vec::Zero(d), Mat::Identity(d, d));
    RngStream rng(7);
    const Mat X = sample_prior(tg, rng, n);
    const Vec mean = X.colwise().mean();
    for (int j = 0; j < d; ++j) REQUIRE(std::abs(mean[j]) < 4.0 / std::sqrt(double(n)));
}

TEST_CASE("degenerate mixture weights select a single component", "[targets]") {
    Vec w(2);
    w << 1.0, 0.0;
    std::vector<Vec> means(2, Vec(1));
    means[0] << 0.0;
    means[1] << 1000.0;
    const Target tg = MixtureTarget::make(w, means, Mat::Identity(1, 1));
    RngStream rng(3);
    const Mat X = sample_prior(tg, rng, 5000);
    REQUIRE(X.cwiseAbs().maxCoeff() < 100.0);
}

TEST_CASE("mixture component frequencies respect the binomial band", "[targets]") {
    Vec w(2);
    w << 0.4, 0.6;
    std::vector<Vec> means(2, Vec(1));
    means[0] << -10.0;
    means[1] << 10.0;
    const Target tg = MixtureTarget::make(w, means, Mat::Identity(1, 1));
    const int n = 100000;
    RngStream rng(11);
    const Mat X = sample_prior(tg, rng, n);
    int n1 = 0;
    for (int i = 0; i < n; ++i) n1 += X(i, 0) < 0.0;
    const double f1 = double(n1) / n;
    REQUIRE(std::abs(f1 - 0.4) < 4.0 * std::sqrt(0.4 * 0.6 / n));
}

TEST_CASE("unit gaussian is a fixed point of the noising", "[targets]") {
    const Target tg = GaussianTarget::make(Vec::Zero(1), Mat::Identity(1, 1));
    const auto sched = make_exp_then_const(300, 3.0, 1e-3);
    Vec x(1);
    x << 0.37;
    for (int t : {0, 1, 50, 300}) {
        const double want = -0.5 * (std::log(2.0 * std::numbers::pi) + x[0] * x[0]);
        REQUIRE(logpdf_t(tg, sched, t, x) == Approx(want).epsilon(1e-12));
    }
    for (int t : {1, 50, 300})
        REQUIRE(score_uncond(tg, sched, t, x)[0] == Approx(-x[0]).epsilon(1e-12));
}

TEST_CASE("mixture marginal density matches the quadrature convolution", "[targets]") {
    Vec w(2);
    w << 0.3, 0.7;
    std::vector<Vec> means(2, Vec(1));
    means[0] << -1.0;
    means[1] << 2.0;
    const double var0 = 0.5;
    const Target tg = MixtureTarget::make(w, means, var0 * Mat::Identity(1, 1));
    const auto sched = make_exp_then_const(200, 3.0, 1e-2);
    for (int t : {1, 40, 120}) {
        const double ab = sched.alpha_bar(t);
        for (double xv : {-2.0, 0.0, 0.8, 3.0}) {
            Vec x(1);
            x << xv;
            const double got = logpdf_t(tg, sched, t, x);
            const double want =
                oracle::convolved_logpdf_1d({0.3, 0.7}, {-1.0, 2.0}, var0, ab, xv);
            REQUIRE(got == Approx(want).margin(1e-6));
        }
    }
}

TEST_CASE("unconditional scores match finite differences", "[targets]") {
    const auto sched = make_exp_then_const(400, 3.0, 1e-3);
    RngStream rng(23);

    SECTION("gaussian") {
        const GaussianTarget g = random_gaussian(3, 17);
        const Target tg = g;
        for (int rep = 0; rep < 50; ++rep) {
            const int t = 1 + int(rng.next_u64() % 400);
            Vec x(3);
            rng.fill_normal(x);
            const Vec s = score_uncond(tg, sched, t, x);
            const Vec fd = oracle::fd_gradient(
                [&](const Vec& z) { return logpdf_t(tg, sched, t, z); }, x);
            REQUIRE((s - fd).norm() <= 1e-5 * std::max(1.0, s.norm()));
        }
        // score vanishes at the pushed-forward mode
        const int t = 50;
        const Vec mode = sched.sqrt_alpha_bar(t) * g.mu0;
        REQUIRE(score_uncond(tg, sched, t, mode).norm() < 1e-12);
    }

    SECTION("mixture") {
        const Target tg = small_mixture();
        for (int rep = 0; rep < 50; ++rep) {
            const int t = 1 + int(rng.next_u64() % 400);
            Vec x(2);
            rng.fill_normal(x);
            const Vec s = score_uncond(tg, sched, t, x);
            const Vec fd = oracle::fd_gradient(
                [&](const Vec& z) { return logpdf_t(tg, sched, t, z); }, x);
            REQUIRE((s - fd).norm() <= 1e-5 * std::max(1.0, s.norm()));
        }
    }
}

TEST_CASE("conditioning leaves independent blocks untouched", "[targets]") {
    const int d = 4, p = 2;
    Mat S0 = Mat::Identity(d, d);
    S0(0, 1) = S0(1, 0) = 0.3;
    S0(2, 3) = S0(3, 2) = -0.2; // block diagonal: no cross correlation
    Vec mu0(d);
    mu0 << 0.5, -0.5, 1.0, 2.0;
    const Target tg = GaussianTarget::make(mu0, S0);
    const auto m = LinearObservation::identity_prefix(d, p, 0.0, Vec::Ones(p));
    const auto sched = make_exp_then_const(200, 3.0, 1e-3);
    RngStream rng(31);
    for (int rep = 0; rep < 20; ++rep) {
        const int t = 1 + int(rng.next_u64() % 200);
        Vec x(d);
        rng.fill_normal(x);
        const Vec diff = score_cond(tg, m, sched, t, x) - score_uncond(tg, sched, t, x);
        REQUIRE((m.Pc * diff).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("gaussian conditional score agrees with the decomposition route", "[targets]") {
    const int d = 4, p = 2;
    const GaussianTarget g = random_gaussian(d, 41);
    const Target tg = g;
    RngStream rng(43);
    Mat H(p, d);
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < d; ++j) H(i, j) = rng.normal();
    Vec y(p);
    rng.fill_normal(y);
    const auto m = LinearObservation::make(H, 0.4, y);
    const auto sched = make_exp_then_const(300, 3.0, 1e-3);
    for (int rep = 0; rep < 40; ++rep) {
        const int t = 1 + int(rng.next_u64() % 300);
        Vec x(d);
        rng.fill_normal(x);
        const Vec got = score_cond(tg, m, sched, t, x);
        const Vec want = oracle::cond_score_decomposition(g.mu0, g.Sigma0, H, y, 0.4,
                                                          sched.alpha_bar(t), x);
        REQUIRE((got - want).norm() <= 1e-8 * std::max(1.0, want.norm()));
    }
}

TEST_CASE("mixture conditional score matches finite differences", "[targets]") {
    const Target tg = small_mixture();
    const auto m = LinearObservation::identity_prefix(2, 1, 0.5, Vec::Ones(1));
    const auto sched = make_exp_then_const(300, 4.0, 2e-2);
    RngStream rng(53);
    for (int rep = 0; rep < 50; ++rep) {
        const int t = 1 + int(rng.next_u64() % 300);
        Vec x(2);
        rng.fill_normal(x);
        const Vec s = score_cond(tg, m, sched, t, x);
        const Law q = cond_law(tg, m, sched, t);
        const Vec fd =
            oracle::fd_gradient([&](const Vec& z) { return law_logpdf(q, z); }, x);
        REQUIRE((s - fd).norm() <= 1e-5 * std::max(1.0, s.norm()));
    }
}

TEST_CASE("posterior mean agrees with joint-gaussian conditioning", "[targets]") {
    const int d = 3, p = 1;
    const GaussianTarget g = random_gaussian(d, 61);
    const Target tg = g;
    RngStream rng(67);
    Mat H(p, d);
    for (int j = 0; j < d; ++j) H(0, j) = rng.normal();
    Vec y(p);
    rng.fill_normal(y);
    const auto m = LinearObservation::make(H, 0.3, y);
    const auto sched = make_exp_then_const(250, 3.0, 1e-3);
    for (int rep = 0; rep < 30; ++rep) {
        const int t = 2 + int(rng.next_u64() % 249);
        Vec x(d);
        rng.fill_normal(x);
        const Vec got = posterior_mean(tg, m, sched, t, x);
        const Vec want = oracle::cond_posterior_mean(
            g.mu0, g.Sigma0, H, y, 0.3, sched.alpha_bar(t - 1), sched.alpha(t), x);
        REQUIRE((got - want).norm() <= 1e-8 * std::max(1.0, want.norm()));
    }
    // zero-score point maps to x/sqrt(alpha)
    const int t = 10;
    const GaussLaw q = std::get<GaussLaw>(cond_law(tg, m, sched, t));
    REQUIRE((posterior_mean(tg, m, sched, t, q.mean) -
             q.mean / std::sqrt(sched.alpha(t)))
                .norm() < 1e-12);
}

TEST_CASE("posterior mean gates t=1 on conditional density existence", "[targets]") {
    const Target tg = random_gaussian(3, 71);
    const auto sched = make_exp_then_const(100, 3.0, 1e-3);
    const auto noiseless = LinearObservation::identity_prefix(3, 1, 0.0, Vec::Ones(1));
    REQUIRE_THROWS_AS(posterior_mean(tg, noiseless, sched, 1, Vec::Zero(3)),
                      std::invalid_argument);
    const auto noisy = LinearObservation::identity_prefix(3, 1, 0.2, Vec::Ones(1));
    REQUIRE_NOTHROW(posterior_mean(tg, noisy, sched, 1, Vec::Zero(3)));
}

TEST_CASE("conditional sampling moments (gaussian, canonical noiseless)", "[targets]") {
    const int d = 3, p = 1, n = 100000;
    const GaussianTarget g = random_gaussian(d, 73);
    const Target tg = g;
    Vec y(p);
    y << 0.8;
    const auto m = LinearObservation::identity_prefix(d, p, 0.0, y);
    const auto sched = make_exp_then_const(200, 3.0, 1e-3);
    const int t = 60;
    RngStream rng(79);
    const Mat X = sample_cond(tg, m, sched, t, n, rng);
    const GaussLaw q = std::get<GaussLaw>(cond_law(tg, m, sched, t));
    for (int j = 0; j < d; ++j) {
        const double se = std::sqrt(q.cov(j, j) / n);
        REQUIRE(std::abs(X.col(j).mean() - q.mean[j]) < 4.0 * se);
    }
    // observed coordinate: mean sqrt(ab) y, variance 1-ab
    const double ab = sched.alpha_bar(t);
    REQUIRE(std::abs(X.col(0).mean() - std::sqrt(ab) * y[0]) <
            4.0 * std::sqrt((1.0 - ab) / n));
    const double var0 = (X.col(0).array() - X.col(0).mean()).square().mean();
    REQUIRE(var0 == Approx(1.0 - ab).epsilon(0.05));
}

TEST_CASE("conditional mixture samples pass a chi-square fit on a 1-d grid", "[targets]") {
    // d=1 mixture, H = [1], sigma_y2 > 0: Q_{t|y} = sum pi_n N(mu_{t,n|y}, s2)
    Vec w(2);
    w << 0.35, 0.65;
    std::vector<Vec> means(2, Vec(1));
    means[0] << -1.5;
    means[1] << 1.0;
    const Target tg = MixtureTarget::make(w, means, 0.4 * Mat::Identity(1, 1));
    Vec y(1);
    y << 0.3;
    const auto m = LinearObservation::identity_prefix(1, 1, 0.5, y);
    const auto sched = make_exp_then_const(150, 3.0, 1e-2);
    const int t = 40, n = 60000;
    RngStream rng(83);
    const Mat X = sample_cond(tg, m, sched, t, n, rng);
    const MixtureLaw law = std::get<MixtureLaw>(cond_law(tg, m, sched, t));
    const double sd = std::sqrt(law.cov(0, 0));
    // cell probabilities from the analytic CDF
    const int bins = 24;
    const double lo = -4.0, hi = 4.0;
    std::vector<double> edges(bins + 1);
    for (int b = 0; b <= bins; ++b) edges[b] = lo + (hi - lo) * b / bins;
    edges.front() = -1e30;
    edges.back() = 1e30;
    auto cdf = [&](double xv) {
        double acc = 0.0;
        for (int k = 0; k < 2; ++k)
            acc += std::exp(law.log_w[k]) * oracle::normal_cdf(xv, law.means[k][0], sd);
        return acc;
    };
    std::vector<double> expect(bins);
    for (int b = 0; b < bins; ++b) expect[b] = n * (cdf(edges[b + 1]) - cdf(edges[b]));
    std::vector<int> got(bins, 0);
    for (int i = 0; i < n; ++i) {
        const double xv = X(i, 0);
        int b = int((xv - lo) / (hi - lo) * bins);
        b = std::clamp(b, 0, bins - 1);
        ++got[b];
    }
    double chi2 = 0.0;
    int dof = -1;
    for (int b = 0; b < bins; ++b) {
        if (expect[b] < 5.0) continue; // skip starved cells
        chi2 += (got[b] - expect[b]) * (got[b] - expect[b]) / expect[b];
        ++dof;
    }
    REQUIRE(chi2 < oracle::chi2_q99(dof));
}

TEST_CASE("mixture responsibilities normalize to one", "[targets]") {
    const Target tg = small_mixture();
    const auto sched = make_exp_then_const(200, 4.0, 2e-2);
    RngStream rng(89);
    for (int rep = 0; rep < 50; ++rep) {
        const int t = 1 + int(rng.next_u64() % 200);
        Vec x(2);
        rng.fill_normal(x);
        const Law l = uncond_law(tg, sched, t);
        const auto& law = std::get<MixtureLaw>(l);
        REQUIRE(law.responsibilities(x).sum() == Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("conditional covariance eigenvalues respect the analytic floor", "[targets]") {
    const int d = 4, p = 2;
    Vec var(d);
    var << 0.3, 1.2, 0.5, 2.0;
    const Mat S0 = make_equicorrelated_sigma0(var, 0.5);
    const Target tg = GaussianTarget::make(Vec::Zero(d), S0);
    const auto sched = make_exp_then_const(300, 3.0, 1e-3);
    for (double sy2 : {0.0, 0.5}) {
        const auto m = LinearObservation::identity_prefix(d, p, sy2, Vec::Ones(p));
        const double lt = Eigen::SelfAdjointEigenSolver<Mat>(S0.bottomRightCorner(d - p, d - p))
                              .eigenvalues()
                              .minCoeff();
        for (int t : {1, 30, 150, 300}) {
            const GaussLaw q = std::get<GaussLaw>(cond_law(tg, m, sched, t));
            const double ab = sched.alpha_bar(t), omab = sched.one_minus_alpha_bar(t);
            const double floor = std::min({omab, omab + ab * sy2, omab + ab * lt}) - 1e-10;
            REQUIRE(Eigen::SelfAdjointEigenSolver<Mat>(q.cov).eigenvalues().minCoeff() >=
                    floor);
        }
    }
}

TEST_CASE("data-level conditional laws are gated on density existence", "[targets]") {
    const Target tg = random_gaussian(3, 97);
    const auto sched = make_exp_then_const(100, 3.0, 1e-3);
    const auto noiseless = LinearObservation::identity_prefix(3, 1, 0.0, Vec::Ones(1));
    REQUIRE_THROWS_AS(cond_law(tg, noiseless, sched, 0), std::invalid_argument);
    const auto noisy = LinearObservation::identity_prefix(3, 1, 0.3, Vec::Ones(1));
    REQUIRE_NOTHROW(cond_law(tg, noisy, sched, 0));
}

TEST_CASE("equicorrelated covariance helper validates and builds", "[targets]") {
    Vec var(3);
    var << 1.0, 0.25, 4.0;
    const Mat S = make_equicorrelated_sigma0(var, 0.6);
    REQUIRE(S(0, 0) == 1.0);
    REQUIRE(S(0, 1) == Approx(0.6 * 0.5));
    REQUIRE(S(1, 2) == Approx(0.6 * 0.5 * 2.0));
    REQUIRE(Eigen::SelfAdjointEigenSolver<Mat>(S).eigenvalues().minCoeff() > 0.0);
    REQUIRE_THROWS_AS(make_equicorrelated_sigma0(var, 1.0), std::invalid_argument);
    REQUIRE_THROWS_AS(make_equicorrelated_sigma0(var, -0.6), std::invalid_argument);
}

TEST_CASE("target validation rejects bad inputs", "[targets]") {
    REQUIRE_THROWS_AS(GaussianTarget::make(Vec::Zero(2), -Mat::Identity(2, 2)),
                      std::invalid_argument);
    Vec w(2);
    w << 0.7, 0.7;
    std::vector<Vec> means(2, Vec::Zero(2));
    REQUIRE_THROWS_AS(MixtureTarget::make(w, means, Mat::Identity(2, 2)),
                      std::invalid_argument);
}
