#pragma once

#include <string>
#include <vector>

namespace graphdps {

/// Outcome of one oracle check.
struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;  ///< measured quantity against its bound
    double seconds = 0.0;
};

// Each check builds its own small problem from fixed seeds. Exceptions are reported as failures.

/// alpha_bar products, beta_tilde and the DDPM/DDIM (A, B) closed forms at T = 1000, to 1e-12.
CheckResult check_schedule_identities();
/// forward corruption followed by the Tweedie estimate with the true noise, 100 fields, to 1e-10.
CheckResult check_tweedie_exactness();
/// Neumann problem with exact solution u = x on 150/600/2400-vertex disks, L2 order >= 1.8.
CheckResult check_fem_convergence();
/// Transfer reciprocity of the electrode model, 16 electrodes on ~300 vertices, 1e-8 relative.
CheckResult check_cem_reciprocity();
/// Adjoint vector-Jacobian products against central differences, 20 weight vectors, 1e-4 relative.
CheckResult check_adjoint_vjp();
/// Every tape primitive and the full network loss gradient against central differences, 1e-4 relative.
CheckResult check_autodiff_oracle();
/// Network output under 10 random node relabelings, 1e-10.
CheckResult check_permutation_equivariance();
/// Composite guided mean against the closed-form regularized Gaussian posterior, 50 triples, 1e-10.
CheckResult check_gaussian_toy();
/// Guided sampling with eta = 0 and lambda = 0 against the unconditional sampler, bitwise.
CheckResult check_reduction_law();
/// Regularizer invariance under constant shifts (1e-10) and the two-node TV value.
CheckResult check_regularizer_invariance();

/// All of the above in order.
std::vector<CheckResult> run_oracle_suite();

/// "PASS <name> (<detail>, <seconds> s)" or the FAIL equivalent.
std::string format_check(const CheckResult& result);

}  // namespace graphdps
