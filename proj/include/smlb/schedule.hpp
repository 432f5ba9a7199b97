#pragma once

#include <algorithm>
#include <cmath>
#include <ostream>
#include <vector>

#include "smlb/common.hpp"

namespace smlb {

enum class ScheduleKind { Constant, ExpThenConst };

/// Validation summary computed when a schedule is constructed. The sampler
/// guarantees are schedule-conditional, so these are reported rather than
/// clamped away.
struct ScheduleDiagnostics {
    double max_beta_ratio = 0.0;      // max_t (1-alpha_t) * T / ln(T)
    double alpha_bar_T_times_T = 0.0; // should shrink as T grows for c > 1
    int crossover = 0;                // first t >= 2 with 1-alpha_t == c ln(T)/T (ExpThenConst)
};

/// Discrete noise schedule: per-step retention factors alpha_t in (0,1),
/// t = 1..T, with the cumulative product kept in the log domain (alpha_bar_T
/// underflows double precision for large c*T otherwise).
class NoiseSchedule {
public:
    int T() const { return static_cast<int>(beta_.size()); }
    ScheduleKind kind() const { return kind_; }
    double c() const { return c_; }
    double delta() const { return delta_; }

    double beta(int t) const { return beta_[check(t) - 1]; }  // 1 - alpha_t
    double alpha(int t) const { return 1.0 - beta_[check(t) - 1]; }
    double log_alpha_bar(int t) const {
        if (t == 0) return 0.0;
        return log_ab_[check(t) - 1];
    }
    double alpha_bar(int t) const { return std::exp(log_alpha_bar(t)); }
    double sqrt_alpha_bar(int t) const { return std::exp(0.5 * log_alpha_bar(t)); }
    /// 1 - alpha_bar_t without cancellation near alpha_bar ~ 1.
    double one_minus_alpha_bar(int t) const { return -std::expm1(log_alpha_bar(t)); }
    /// sigma_t = sqrt((1-alpha_t)/alpha_t), the reverse-step noise scale.
    double sigma(int t) const { return std::sqrt(beta(t) / (1.0 - beta(t))); }

    const ScheduleDiagnostics& diagnostics() const { return diag_; }

    /// Sum_{t=2}^T (1-alpha_t) * alpha_bar_t^p, ascending t, log-domain powers.
    double coefficient_sum(double p) const {
        if (p <= 0.0) throw std::invalid_argument("coefficient_sum: p must be > 0");
        if (kind_ == ScheduleKind::ExpThenConst && delta_ * p >= 1.0)
            throw std::invalid_argument("coefficient_sum: requires delta * p < 1");
        double s = 0.0;
        for (int t = 2; t <= T(); ++t) s += beta(t) * std::exp(p * log_alpha_bar(t));
        return s;
    }

    /// Columns: t, alpha_t, alpha_bar_t, sigma_t
    void write_csv(std::ostream& os) const;

    friend NoiseSchedule make_constant(int T, double c);
    friend NoiseSchedule make_exp_then_const(int T, double c, double delta);

private:
    int check(int t) const {
        if (t < 1 || t > T()) throw std::invalid_argument("schedule index out of range");
        return t;
    }

    void finalize() {
        log_ab_.resize(beta_.size());
        double acc = 0.0;
        double max_beta = 0.0;
        for (std::size_t i = 0; i < beta_.size(); ++i) {
            acc += std::log1p(-beta_[i]);
            log_ab_[i] = acc;
            max_beta = std::max(max_beta, beta_[i]);
        }
        const double Td = static_cast<double>(beta_.size());
        diag_.max_beta_ratio = max_beta * Td / std::log(Td);
        diag_.alpha_bar_T_times_T = std::exp(acc) * Td;
    }

    ScheduleKind kind_ = ScheduleKind::Constant;
    double c_ = 0.0;
    double delta_ = 0.0;
    std::vector<double> beta_;
    std::vector<double> log_ab_;
    ScheduleDiagnostics diag_;
};

/// 1 - alpha_t = c ln(T)/T for every t, c > 1.
inline NoiseSchedule make_constant(int T, double c) {
    if (T < 2) throw std::invalid_argument("make_constant: T must be >= 2");
    if (c <= 1.0)
        throw std::invalid_argument("make_constant: c must be > 1 (alpha_bar_T = o(1/T) fails)");
    const double beta = c * std::log(static_cast<double>(T)) / T;
    if (beta >= 1.0)
        throw std::invalid_argument("make_constant: T too small, c ln(T)/T must be < 1");
    NoiseSchedule s;
    s.kind_ = ScheduleKind::Constant;
    s.c_ = c;
    s.beta_.assign(static_cast<std::size_t>(T), beta);
    s.finalize();
    return s;
}

/// 1 - alpha_1 = delta; 1 - alpha_t = (c ln T / T) * min{delta (1 + c ln T / T)^t, 1}
/// for t >= 2. Exponential warm-up followed by the constant plateau.
///
/// The source derivation states the side condition delta * e^c > 1, but its own
/// reference configurations (c = 3, delta = 1e-4) violate it; what the condition
/// is used for is that the plateau is reached before T, which we check directly.
inline NoiseSchedule make_exp_then_const(int T, double c, double delta) {
    if (T < 2) throw std::invalid_argument("make_exp_then_const: T must be >= 2");
    if (c <= 1.0) throw std::invalid_argument("make_exp_then_const: c must be > 1");
    if (delta <= 0.0 || delta >= 1.0)
        throw std::invalid_argument("make_exp_then_const: delta must be in (0,1)");
    const double b = c * std::log(static_cast<double>(T)) / T;
    if (b >= 1.0)
        throw std::invalid_argument("make_exp_then_const: T too small, c ln(T)/T must be < 1");
    NoiseSchedule s;
    s.kind_ = ScheduleKind::ExpThenConst;
    s.c_ = c;
    s.delta_ = delta;
    s.beta_.resize(static_cast<std::size_t>(T));
    s.beta_[0] = delta;
    int crossover = 0;
    const double logd = std::log(delta);
    const double log1pb = std::log1p(b);
    for (int t = 2; t <= T; ++t) {
        const double grow = std::exp(logd + t * log1pb);
        if (grow >= 1.0) {
            s.beta_[t - 1] = b;
            if (crossover == 0) crossover = t;
        } else {
            s.beta_[t - 1] = b * grow;
        }
    }
    if (crossover == 0)
        throw std::invalid_argument(
            "make_exp_then_const: warm-up never reaches the c ln(T)/T plateau within T "
            "steps (delta too small or c too small for this T)");
    s.finalize();
    s.diag_.crossover = crossover;
    return s;
}

inline void NoiseSchedule::write_csv(std::ostream& os) const {
    os << "t,alpha_t,alpha_bar_t,sigma_t\n";
    char buf[128];
    for (int t = 1; t <= T(); ++t) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", t, alpha(t), alpha_bar(t),
                      sigma(t));
        os << buf;
    }
}

} // namespace smlb
