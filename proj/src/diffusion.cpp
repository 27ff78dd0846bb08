#include "graphdps/diffusion.hpp"

#include <cmath>

namespace graphdps {

ScheduleKind parse_schedule_kind(std::string_view name)
{
    if (name == "linear") {
        return ScheduleKind::linear;
    }
    throw Error("config", "unknown schedule kind '" + std::string(name) + "'");
}

std::string_view to_string(ScheduleKind) { return "linear"; }

void NoiseSchedule::check_step(int t) const
{
    if (t < 1 || t > T) {
        throw Error("diffusion", "step " + std::to_string(t) + " outside 1.." + std::to_string(T));
    }
}

NoiseSchedule schedule_from_betas(std::span<const double> betas)
{
    NoiseSchedule s;
    s.T = static_cast<int>(betas.size());
    if (s.T < 1) {
        throw Error("diffusion", "schedule needs at least one step");
    }
    s.beta = Eigen::VectorXd::Zero(s.T + 1);
    s.alpha = Eigen::VectorXd::Ones(s.T + 1);
    s.alpha_bar = Eigen::VectorXd::Ones(s.T + 1);
    s.beta_tilde = Eigen::VectorXd::Zero(s.T + 1);
    for (int t = 1; t <= s.T; ++t) {
        const double b = betas[t - 1];
        if (!(b >= 0.0 && b < 1.0)) {
            throw Error("diffusion", "beta must lie in [0, 1)");
        }
        s.beta[t] = b;
        s.alpha[t] = 1.0 - b;
        s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
        const double denom = 1.0 - s.alpha_bar[t];
        s.beta_tilde[t] = denom > 0.0 ? (1.0 - s.alpha_bar[t - 1]) / denom * b : 0.0;
    }
    return s;
}

NoiseSchedule make_schedule(int T, ScheduleKind kind, double beta_start, double beta_end)
{
    (void)kind;
    if (T < 1) {
        throw Error("config", "schedule steps must be positive");
    }
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw Error("config", "schedule bounds need 0 < beta_start <= beta_end < 1");
    }
    std::vector<double> betas(T);
    for (int k = 0; k < T; ++k) {
        betas[k] = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * k / (T - 1);
    }
    return schedule_from_betas(betas);
}

NoiseSchedule make_schedule(const ScheduleConfig& c) { return make_schedule(c.steps, c.kind, c.beta_start, c.beta_end); }

KeyValues schedule_key_values(const ScheduleConfig& c)
{
    return {{"steps", std::to_string(c.steps)},
            {"schedule", std::string(to_string(c.kind))},
            {"beta_start", format_double(c.beta_start)},
            {"beta_end", format_double(c.beta_end)}};
}

NodeField standard_normal(Eigen::Index n, std::mt19937_64& rng)
{
    std::normal_distribution<double> normal;
    NodeField z(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        z[i] = normal(rng);
    }
    return z;
}

NodeField corrupt(const NodeField& x0, const NodeField& eps, int t, const NoiseSchedule& s)
{
    s.check_step(t);
    return std::sqrt(s.alpha_bar[t]) * x0 + std::sqrt(1.0 - s.alpha_bar[t]) * eps;
}

Corrupted forward_corrupt(const NodeField& x0, int t, const NoiseSchedule& s, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    NodeField eps = standard_normal(x0.size(), rng);
    NodeField x_t = corrupt(x0, eps, t, s);
    return {std::move(x_t), std::move(eps)};
}

NodeField tweedie_x0(const NodeField& x_t, int t, const NodeField& eps_pred, const NoiseSchedule& s)
{
    s.check_step(t);
    const double ab = s.alpha_bar[t];
    if (ab < 1e-12) {
        throw Error("diffusion", "alpha_bar at step " + std::to_string(t) + " too small for the Tweedie estimate");
    }
    return (x_t - std::sqrt(1.0 - ab) * eps_pred) / std::sqrt(ab);
}

StepCoefficients ddpm_coefficients(int t, const NoiseSchedule& s)
{
    s.check_step(t);
    const double ab = s.alpha_bar[t];
    const double ab_prev = s.alpha_bar[t - 1];
    StepCoefficients c;
    c.A = std::sqrt(ab_prev) * s.beta[t] / (1.0 - ab);
    c.B = std::sqrt(s.alpha[t]) * (1.0 - ab_prev) / (1.0 - ab);
    c.noise_std = t > 1 ? std::sqrt(s.beta_tilde[t]) : 0.0;
    return c;
}

StepCoefficients ddim_coefficients(int t, const NoiseSchedule& s)
{
    s.check_step(t);
    const double ab = s.alpha_bar[t];
    const double ab_prev = s.alpha_bar[t - 1];
    const double ratio = std::sqrt(1.0 - ab_prev) / std::sqrt(1.0 - ab);
    StepCoefficients c;
    c.A = std::sqrt(ab_prev) - ratio * std::sqrt(ab);
    c.B = ratio;
    return c;
}

NodeField ddpm_step(const NodeField& x_t, int t, const NodeField& eps_pred, const NoiseSchedule& s, std::uint64_t seed)
{
    const StepCoefficients c = ddpm_coefficients(t, s);
    NodeField next = c.A * tweedie_x0(x_t, t, eps_pred, s) + c.B * x_t;
    if (c.noise_std > 0.0) {
        std::mt19937_64 rng(seed);
        next += c.noise_std * standard_normal(x_t.size(), rng);
    }
    return next;
}

NodeField ddim_step(const NodeField& x_t, int t, const NodeField& eps_pred, const NoiseSchedule& s)
{
    const StepCoefficients c = ddim_coefficients(t, s);
    return c.A * tweedie_x0(x_t, t, eps_pred, s) + c.B * x_t;
}

SamplerKind parse_sampler(std::string_view name)
{
    if (name == "ddpm") {
        return SamplerKind::ddpm;
    }
    if (name == "ddim") {
        return SamplerKind::ddim;
    }
    throw Error("config", "unknown sampler '" + std::string(name) + "'");
}

std::string_view to_string(SamplerKind kind) { return kind == SamplerKind::ddpm ? "ddpm" : "ddim"; }

std::uint64_t step_noise_seed(std::uint64_t seed, int t) { return derive_seed(substream(seed, "step"), t); }

NodeField initial_state(Eigen::Index n, std::uint64_t seed)
{
    std::mt19937_64 rng(substream(seed, "x_T"));
    return standard_normal(n, rng);
}

EpsModel network_model(const GraphHierarchy& hierarchy, const ScoreNetParams& params, const ScoreNetConfig& config)
{
    return [&hierarchy, &params, config](const NodeField& x, int t) {
        return dgn_forward(x, t, hierarchy, params, config).eps;
    };
}

NodeField sample_unconditional(const EpsModel& model, Eigen::Index n, const NoiseSchedule& schedule,
                               const UnconditionalOptions& options)
{
    NodeField x = initial_state(n, options.seed);
    for (int t = schedule.T; t >= 1; --t) {
        const NodeField eps = model(x, t);
        x = options.sampler == SamplerKind::ddpm ? ddpm_step(x, t, eps, schedule, step_noise_seed(options.seed, t))
                                                 : ddim_step(x, t, eps, schedule);
        if (options.floor) {
            x = x.cwiseMax(*options.floor);
        }
        if (!x.allFinite()) {
            throw Error("diffusion", "non-finite state at step " + std::to_string(t));
        }
    }
    return x;
}

NoisedBatch make_noised_batch(std::span<const NodeField> x0, const NoiseSchedule& schedule, std::uint64_t seed)
{
    if (x0.empty()) {
        throw Error("diffusion", "empty training batch");
    }
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> step(1, schedule.T);
    NoisedBatch b;
    for (const NodeField& x : x0) {
        const int t = step(rng);
        NodeField eps = standard_normal(x.size(), rng);
        b.x_t.push_back(corrupt(x, eps, t, schedule));
        b.eps.push_back(std::move(eps));
        b.steps.push_back(t);
    }
    return b;
}

double training_loss(const EpsModel& model, std::span<const NodeField> x0, const NoiseSchedule& schedule,
                     std::uint64_t seed)
{
    const NoisedBatch b = make_noised_batch(x0, schedule, seed);
    double total = 0.0;
    for (std::size_t k = 0; k < x0.size(); ++k) {
        total += (b.eps[k] - model(b.x_t[k], b.steps[k])).squaredNorm();
    }
    return total / static_cast<double>(x0.size());
}

NodeField guidance_correction(double alpha_bar, const NodeField& likelihood_score, const NodeField& regularizer_score)
{
    return (1.0 - alpha_bar) / std::sqrt(alpha_bar) * (likelihood_score + regularizer_score);
}

NodeField conditional_posterior_mean(const NodeField& x0_hat, double alpha_bar, const NodeField& likelihood_score,
                                     const NodeField& regularizer_score)
{
    return x0_hat + guidance_correction(alpha_bar, likelihood_score, regularizer_score);
}

}  // namespace graphdps
