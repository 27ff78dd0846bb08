#include "graphdps/gaussian_toy.hpp"

#include "graphdps/diffusion.hpp"

#include <cmath>

namespace graphdps::toy {

NodeField prior_score(const GaussianToy&, const NodeField& x_t) { return -x_t; }

NodeField likelihood_score(const GaussianToy& g, const NodeField& x_t, const NodeField& y)
{
    // y | x_t ~ N(sqrt(abar) x_t, 1 - abar + s2)
    const double r = std::sqrt(g.alpha_bar);
    return r * (y - r * x_t) / (1.0 - g.alpha_bar + g.noise_variance);
}

NodeField regularizer_score(const GaussianToy& g, const NodeField& x_t) { return -2.0 * g.lambda * x_t; }

NodeField composite_mean(const GaussianToy& g, const NodeField& x_t, const NodeField& y)
{
    const double ab = g.alpha_bar;
    const NodeField eps = -std::sqrt(1.0 - ab) * prior_score(g, x_t);
    const NodeField x0_hat = (x_t - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
    return conditional_posterior_mean(x0_hat, ab, likelihood_score(g, x_t, y), regularizer_score(g, x_t));
}

NodeField closed_form_mean(const GaussianToy& g, const NodeField& x_t, const NodeField& y)
{
    const double ab = g.alpha_bar;
    const double v_y = g.noise_variance / (1.0 + g.noise_variance);
    const NodeField mu_y = y / (1.0 + g.noise_variance);
    const double var = ab * v_y + 1.0 - ab;
    const double precision = 1.0 / var + 2.0 * g.lambda;
    const NodeField mean = (std::sqrt(ab) * mu_y / var) / precision;
    const NodeField score = -precision * (x_t - mean);
    return (x_t + (1.0 - ab) * score) / std::sqrt(ab);
}

NodeField joint_gaussian_mean(const GaussianToy& g, const NodeField& x_t, const NodeField& y)
{
    // Cov(x0, [x_t, y]) = [r, 1]; Cov([x_t, y]) = [[1, r], [r, 1 + s2]].
    const double r = std::sqrt(g.alpha_bar);
    Eigen::Matrix2d cov;
    cov << 1.0, r, r, 1.0 + g.noise_variance;
    const Eigen::RowVector2d gain = Eigen::RowVector2d(r, 1.0) * cov.inverse();
    return gain[0] * x_t + gain[1] * y;
}

}  // namespace graphdps::toy
