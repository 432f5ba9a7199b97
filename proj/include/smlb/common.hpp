#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace smlb {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Invalid experiment configuration (bad field, unknown key, inconsistent
/// shapes). The CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A numerical guard tripped (ill-conditioned matrix, non-SPD input).
/// The CLI maps this to exit code 3.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

inline constexpr const char* kVersion = "smlb-0.1.0";

} // namespace smlb
