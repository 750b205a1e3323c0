#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mil {

enum class ErrorKind {
    negative_density,
    not_normalized,
    domain_mismatch,
    step_too_large,
    non_finite,
    order_unavailable,
    linear_solve_failure,
    eig_solver_failure,
    complex_eigenvalue,
    mode_deficiency,
    oracle_budget_exceeded,
    no_convergence,
    newton_divergence,
    singular_system,
    support_deficiency,
    ill_conditioned,
    singular_poisson,
    spectral_gap_failure,
    non_positive_eigenvector,
    invalid_argument,
    config_invalid,
};

inline std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::negative_density: return "NegativeDensity";
    case ErrorKind::not_normalized: return "NotNormalized";
    case ErrorKind::domain_mismatch: return "DomainMismatch";
    case ErrorKind::step_too_large: return "StepTooLarge";
    case ErrorKind::non_finite: return "NonFinite";
    case ErrorKind::order_unavailable: return "OrderUnavailable";
    case ErrorKind::linear_solve_failure: return "LinearSolveFailure";
    case ErrorKind::eig_solver_failure: return "EigSolverFailure";
    case ErrorKind::complex_eigenvalue: return "ComplexEigenvalue";
    case ErrorKind::mode_deficiency: return "ModeDeficiency";
    case ErrorKind::oracle_budget_exceeded: return "OracleBudgetExceeded";
    case ErrorKind::no_convergence: return "NoConvergence";
    case ErrorKind::newton_divergence: return "NewtonDivergence";
    case ErrorKind::singular_system: return "SingularSystem";
    case ErrorKind::support_deficiency: return "SupportDeficiency";
    case ErrorKind::ill_conditioned: return "IllConditioned";
    case ErrorKind::singular_poisson: return "SingularPoisson";
    case ErrorKind::spectral_gap_failure: return "SpectralGapFailure";
    case ErrorKind::non_positive_eigenvector: return "NonPositiveEigenvector";
    case ErrorKind::invalid_argument: return "InvalidArgument";
    case ErrorKind::config_invalid: return "ConfigInvalid";
    }
    return "Unknown";
}

/// Every failure raised by the library carries a machine-readable kind.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
    if (!cond) fail(kind, what);
}

} // namespace mil
