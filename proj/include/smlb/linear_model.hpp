#pragma once

#include <cmath>

#include "smlb/common.hpp"
#include "smlb/schedule.hpp"

namespace smlb {

/// H^dagger = H^T (H H^T)^{-1} for full-row-rank H, via SPD factorization of
/// H H^T. Rank deficiency and conditioning beyond 1e12 are hard errors; every
/// observation model of interest is full rank and silent regularization would
/// corrupt the projector identities downstream.
inline Mat pinv_full_row_rank(const Mat& H, double max_condition = 1e12) {
    const Eigen::Index p = H.rows(), d = H.cols();
    if (p > d) throw std::invalid_argument("pinv: H must have p <= d");
    const Mat G = H * H.transpose();
    Eigen::SelfAdjointEigenSolver<Mat> eig(G);
    const double lmin = eig.eigenvalues().minCoeff();
    const double lmax = eig.eigenvalues().maxCoeff();
    if (lmin <= 0.0 || lmax / lmin > max_condition)
        throw NumericalError("pinv: H H^T rank-deficient or condition number above 1e12");
    Eigen::LLT<Mat> llt(G);
    return llt.solve(H).transpose();
}

/// Linear observation model y = H x0 + n, n ~ N(0, sigma_y^2 I_p), with the
/// pseudo-inverse and the range/null projectors cached. Immutable once built.
struct LinearObservation {
    Mat H;          // p x d, full row rank
    double sigma_y2 = 0.0;
    Vec y;          // length p
    Mat H_pinv;     // d x p
    Mat P;          // H_pinv * H, orthogonal projector onto range(H^T)
    Mat Pc;         // I - P
    bool canonical = false;        // H == [I_p 0]
    bool orthonormal_rows = false; // H H^T == I_p, hence H_pinv (H_pinv)^T == P

    int d() const { return static_cast<int>(H.cols()); }
    int p() const { return static_cast<int>(H.rows()); }
    Vec pinv_y() const { return H_pinv * y; }

    static LinearObservation make(Mat H, double sigma_y2, Vec y) {
        if (sigma_y2 < 0.0) throw std::invalid_argument("LinearObservation: sigma_y2 < 0");
        if (y.size() != H.rows())
            throw std::invalid_argument("LinearObservation: y length must equal rows of H");
        LinearObservation m;
        m.H = std::move(H);
        m.sigma_y2 = sigma_y2;
        m.y = std::move(y);
        m.H_pinv = pinv_full_row_rank(m.H);
        m.P = m.H_pinv * m.H;
        m.Pc = Mat::Identity(m.d(), m.d()) - m.P;
        const Mat G = m.H * m.H.transpose();
        m.orthonormal_rows = (G - Mat::Identity(m.p(), m.p())).cwiseAbs().maxCoeff() < 1e-12;
        m.canonical = m.orthonormal_rows &&
                      (m.H.leftCols(m.p()) - Mat::Identity(m.p(), m.p())).cwiseAbs().maxCoeff() <
                          1e-15 &&
                      (m.d() == m.p() || m.H.rightCols(m.d() - m.p()).cwiseAbs().maxCoeff() == 0.0);
        return m;
    }

    /// H = [I_p 0]: the super-resolution/inpainting form after reordering pixels.
    static LinearObservation identity_prefix(int d, int p, double sigma_y2, Vec y) {
        if (p < 1 || p > d) throw std::invalid_argument("identity_prefix: need 1 <= p <= d");
        Mat H = Mat::Zero(p, d);
        H.leftCols(p).setIdentity();
        return make(std::move(H), sigma_y2, std::move(y));
    }
};

/// Sigma_{t|0,y} = alpha_bar_t sigma_y^2 Hp Hp^T + (1 - alpha_bar_t) I_d,
/// the conditional forward covariance. SPD for every t >= 1.
inline Mat sigma_t0y(const LinearObservation& m, const NoiseSchedule& sched, int t) {
    const double ab = sched.alpha_bar(t);
    const double omab = sched.one_minus_alpha_bar(t);
    return ab * m.sigma_y2 * (m.H_pinv * m.H_pinv.transpose()) +
           omab * Mat::Identity(m.d(), m.d());
}

inline Mat sigma_t0y_inverse(const LinearObservation& m, const NoiseSchedule& sched, int t) {
    const Mat S = sigma_t0y(m, sched, t);
    Eigen::LLT<Mat> llt(S);
    if (llt.info() != Eigen::Success)
        throw NumericalError("sigma_t0y: covariance not positive definite");
    return llt.solve(Mat::Identity(m.d(), m.d()));
}

/// Mean and covariance of the conditional forward law Q_{t|0,y}:
/// mean = sqrt(abar_t) ((I - P) x0 + Hp y), cov = Sigma_{t|0,y}.
inline std::pair<Vec, Mat> conditional_forward_params(const LinearObservation& m,
                                                      const NoiseSchedule& sched, int t,
                                                      const Vec& x0) {
    const double sqab = sched.sqrt_alpha_bar(t);
    Vec mean = sqab * (m.Pc * x0 + m.H_pinv * m.y);
    return {std::move(mean), sigma_t0y(m, sched, t)};
}

} // namespace smlb
