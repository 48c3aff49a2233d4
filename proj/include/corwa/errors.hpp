#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <utility>

namespace corwa {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed configuration, inconsistent topology, unbounded domains.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Vector/matrix shapes that do not chain.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Non-finite state derivative during integration.
class IntegrationError : public Error {
public:
    IntegrationError(int agent, const std::string& what)
        : Error("agent " + std::to_string(agent) + ": " + what), agent_(agent) {}
    int agent() const { return agent_; }

private:
    int agent_;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    DivergenceError(int epoch, double loss, const std::string& what)
        : Error(what), epoch_(epoch), loss_(loss) {}
    int epoch() const { return epoch_; }
    double loss() const { return loss_; }

private:
    int epoch_;
    double loss_;
};

/// Numerical routines that disagree or fail to converge.
class DiagnosticsError : public Error {
public:
    using Error::Error;
};

/// A transferred coupling matrix failed the Hurwitz re-check.
class TransferRejected : public Error {
public:
    TransferRejected(const std::string& what, Eigen::MatrixXd offending)
        : Error(what), matrix_(std::move(offending)) {}
    const Eigen::MatrixXd& matrix() const { return matrix_; }

private:
    Eigen::MatrixXd matrix_;
};

}  // namespace corwa
