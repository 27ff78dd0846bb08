#pragma once

#include "graphdps/common.hpp"

namespace graphdps::toy {

// x0 ~ N(0, I), y = x0 + N(0, s2 I), x_t = sqrt(abar) x0 + sqrt(1 - abar) eps,
// regularizer prior p_R(x_t) proportional to exp(-lambda ||x_t||^2).
struct GaussianToy {
    double alpha_bar = 0.5;
    double noise_variance = 0.1;  ///< s2
    double lambda = 0.0;
};

/// Scores entering the composite update.
NodeField prior_score(const GaussianToy& g, const NodeField& x_t);
NodeField likelihood_score(const GaussianToy& g, const NodeField& x_t, const NodeField& y);
NodeField regularizer_score(const GaussianToy& g, const NodeField& x_t);

/// Composite update: unconditional Tweedie mean plus the guidance correction built from the analytic scores.
NodeField composite_mean(const GaussianToy& g, const NodeField& x_t, const NodeField& y);

/// Closed form: the regularized density p_t(x_t | y) p_R(x_t) is Gaussian with precision
/// 1 / (abar v_y + 1 - abar) + 2 lambda; its score is mapped through Tweedie's identity.
NodeField closed_form_mean(const GaussianToy& g, const NodeField& x_t, const NodeField& y);

/// E[x0 | x_t, y] for lambda = 0 by conditioning the joint Gaussian of (x0, x_t, y) directly.
NodeField joint_gaussian_mean(const GaussianToy& g, const NodeField& x_t, const NodeField& y);

}  // namespace graphdps::toy
