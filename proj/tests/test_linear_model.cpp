#include <catch2/catch_amalgamated.hpp>

#include "smlb/linear_model.hpp"
#include "smlb/rng.hpp"

using namespace smlb;
using Catch::Approx;

namespace {
Mat random_matrix(int r, int c, std::uint64_t seed) {
    RngStream rng(seed);
    Mat m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = rng.normal();
    return m;
}
} // namespace

TEST_CASE("pseudo-inverse of block-identity rows", "[linear_model]") {
    const int d = 5, p = 2;
    auto m = LinearObservation::identity_prefix(d, p, 0.0, Vec::Zero(p));
    Mat expect = Mat::Zero(d, p);
    expect.topRows(p).setIdentity();
    REQUIRE((m.H_pinv - expect).cwiseAbs().maxCoeff() < 1e-14);
    REQUIRE(m.canonical);
    REQUIRE(m.orthonormal_rows);
}

TEST_CASE("pseudo-inverse of the identity is the identity", "[linear_model]") {
    const int d = 3;
    auto m = LinearObservation::make(Mat::Identity(d, d), 0.0, Vec::Zero(d));
    REQUIRE((m.H_pinv - Mat::Identity(d, d)).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE((m.P - Mat::Identity(d, d)).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE(m.Pc.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("random full-rank H satisfies the defining identity", "[linear_model]") {
    for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
        const Mat H = random_matrix(2, 4, seed);
        const auto m = LinearObservation::make(H, 0.3, Vec::Ones(2));
        REQUIRE((m.H * m.H_pinv - Mat::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-10);
        // projector invariants
        REQUIRE((m.P * m.P - m.P).cwiseAbs().maxCoeff() < 1e-10);
        REQUIRE((m.P - m.P.transpose()).cwiseAbs().maxCoeff() < 1e-10);
        REQUIRE((m.Pc * m.P).cwiseAbs().maxCoeff() < 1e-10);
        Eigen::SelfAdjointEigenSolver<Mat> ep(m.P), ec(m.Pc);
        REQUIRE(ep.eigenvalues().maxCoeff() == Approx(1.0).margin(1e-10));
        REQUIRE(ec.eigenvalues().maxCoeff() == Approx(1.0).margin(1e-10));
    }
}

TEST_CASE("rank-deficient and ill-conditioned H are rejected", "[linear_model]") {
    Mat H(2, 4);
    H.row(0) << 1, 2, 3, 4;
    H.row(1) << 2, 4, 6, 8; // duplicate direction
    REQUIRE_THROWS_AS(LinearObservation::make(H, 0.0, Vec::Zero(2)), NumericalError);

    Mat H2(2, 4);
    H2.row(0) << 1, 0, 0, 0;
    H2.row(1) << 1, 1e-9, 0, 0; // condition number of H H^T far above 1e12
    REQUIRE_THROWS_AS(LinearObservation::make(H2, 0.0, Vec::Zero(2)), NumericalError);
}

TEST_CASE("sigma_t0y reduces to (1-abar) I when noiseless", "[linear_model]") {
    const auto m = LinearObservation::identity_prefix(4, 2, 0.0, Vec::Ones(2));
    const auto sched = make_exp_then_const(200, 3.0, 1e-3);
    for (int t : {1, 7, 200}) {
        const Mat S = sigma_t0y(m, sched, t);
        const Mat expect = sched.one_minus_alpha_bar(t) * Mat::Identity(4, 4);
        REQUIRE((S - expect).cwiseAbs().maxCoeff() < 1e-15);
    }
}

TEST_CASE("sigma_t0y inverse acts as a scalar on the null space", "[linear_model]") {
    const Mat H = random_matrix(2, 5, 11);
    const auto m = LinearObservation::make(H, 0.7, Vec::Ones(2));
    const auto sched = make_exp_then_const(300, 3.0, 1e-3);
    for (int t : {1, 50, 300}) {
        const Mat Si = sigma_t0y_inverse(m, sched, t);
        const double scale = 1.0 / sched.one_minus_alpha_bar(t);
        REQUIRE((Si * m.Pc - scale * m.Pc).cwiseAbs().maxCoeff() <
                1e-10 * std::max(1.0, scale));
    }
}

TEST_CASE("sigma_t0y is block diagonal in the canonical model", "[linear_model]") {
    const int d = 4, p = 2;
    const auto m = LinearObservation::identity_prefix(d, p, 0.5, Vec::Ones(p));
    const auto sched = make_exp_then_const(100, 3.0, 1e-3);
    const int t = 20;
    const double ab = sched.alpha_bar(t), omab = sched.one_minus_alpha_bar(t);
    Mat expect = omab * Mat::Identity(d, d);
    expect.topLeftCorner(p, p) += ab * 0.5 * Mat::Identity(p, p);
    REQUIRE((sigma_t0y(m, sched, t) - expect).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("conditional forward params match the direct expression", "[linear_model]") {
    const auto sched = make_exp_then_const(500, 3.0, 1e-4);
    RngStream rng(99);
    const Mat H = random_matrix(2, 4, 21);
    Vec y(2);
    rng.fill_normal(y);
    const auto m = LinearObservation::make(H, 0.25, y);
    Vec x0(4);
    rng.fill_normal(x0);
    for (int t : {1, 100, 500}) {
        const auto [mean, cov] = conditional_forward_params(m, sched, t, x0);
        const double sqab = sched.sqrt_alpha_bar(t);
        const Vec direct = sqab * (Mat::Identity(4, 4) - m.H_pinv * m.H) * x0 +
                           sqab * (m.H_pinv * m.y);
        REQUIRE((mean - direct).cwiseAbs().maxCoeff() < 1e-12);
        REQUIRE((cov - sigma_t0y(m, sched, t)).cwiseAbs().maxCoeff() == 0.0);
    }
    // terminal noising: mean ~ 0, cov ~ I (scale sqrt(alpha_bar_T) ~ 9e-3 here)
    const auto [meanT, covT] = conditional_forward_params(m, sched, 500, x0);
    REQUIRE(meanT.cwiseAbs().maxCoeff() < 0.02);
    REQUIRE((covT - Mat::Identity(4, 4)).cwiseAbs().maxCoeff() < 0.02);
}

TEST_CASE("noiseless canonical conditioning pins the observed block", "[linear_model]") {
    const auto sched = make_exp_then_const(100, 3.0, 1e-3);
    Vec y(2);
    y << 0.4, -1.2;
    const auto m = LinearObservation::identity_prefix(5, 2, 0.0, y);
    Vec x0 = Vec::Ones(5);
    const int t = 30;
    const auto [mean, cov] = conditional_forward_params(m, sched, t, x0);
    const double sqab = sched.sqrt_alpha_bar(t);
    REQUIRE(mean[0] == Approx(sqab * y[0]).epsilon(1e-12));
    REQUIRE(mean[1] == Approx(sqab * y[1]).epsilon(1e-12));
}

TEST_CASE("cross-block inverse identity on random SPD matrices", "[linear_model]") {
    RngStream rng(5);
    for (int rep = 0; rep < 10; ++rep) {
        const int d = 5, p = 2;
        const Mat H = random_matrix(p, d, 100 + static_cast<std::uint64_t>(rep));
        const auto m = LinearObservation::make(H, 0.0, Vec::Zero(p));
        Mat A(d, d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) A(i, j) = rng.normal();
        const Mat Sigma = A * A.transpose() + 0.05 * Mat::Identity(d, d);
        const double alpha = 0.05 + 0.9 * rng.uniform();
        const double sig = rng.uniform() * 2.0;
        const Mat M = alpha * (m.Pc * Sigma * m.Pc) + alpha * sig * m.P +
                      (1.0 - alpha) * Mat::Identity(d, d);
        const Mat lhs = m.Pc * Eigen::LLT<Mat>(M).solve(Mat(m.P));
        REQUIRE(lhs.cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("model construction validates shapes", "[linear_model]") {
    REQUIRE_THROWS_AS(LinearObservation::make(Mat::Identity(2, 2), -0.1, Vec::Zero(2)),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(LinearObservation::make(Mat::Identity(2, 2), 0.1, Vec::Zero(3)),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(LinearObservation::identity_prefix(3, 4, 0.0, Vec::Zero(4)),
                      std::invalid_argument);
}
