#pragma once

#include "graphdps/common.hpp"
#include "graphdps/io.hpp"
#include "graphdps/score_net.hpp"

#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string_view>

namespace graphdps {

enum class ScheduleKind { linear };

ScheduleKind parse_schedule_kind(std::string_view name);
std::string_view to_string(ScheduleKind kind);

/// Variance schedule. Vectors are indexed by t = 0..T with beta[0] = 0 and alpha_bar[0] = 1.
struct NoiseSchedule {
    int T = 0;
    Eigen::VectorXd beta;
    Eigen::VectorXd alpha;
    Eigen::VectorXd alpha_bar;
    Eigen::VectorXd beta_tilde;  ///< (1 - abar_{t-1}) / (1 - abar_t) * beta_t

    void check_step(int t) const;
};

struct ScheduleConfig {
    int steps = 1000;
    ScheduleKind kind = ScheduleKind::linear;
    double beta_start = 1e-4;
    double beta_end = 2e-2;
};

NoiseSchedule make_schedule(int T, ScheduleKind kind = ScheduleKind::linear, double beta_start = 1e-4,
                            double beta_end = 2e-2);
NoiseSchedule make_schedule(const ScheduleConfig& config);
/// Schedule from explicit betas (t = 1..T).
NoiseSchedule schedule_from_betas(std::span<const double> betas);

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
NodeField corrupt(const NodeField& x0, const NodeField& eps, int t, const NoiseSchedule& schedule);

struct Corrupted {
    NodeField x_t;
    NodeField eps;
};

Corrupted forward_corrupt(const NodeField& x0, int t, const NoiseSchedule& schedule, std::uint64_t seed);

NodeField standard_normal(Eigen::Index n, std::mt19937_64& rng);

/// (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t).
NodeField tweedie_x0(const NodeField& x_t, int t, const NodeField& eps_pred, const NoiseSchedule& schedule);

/// x_{t-1} = A x0_hat + B x_t + noise_std * z.
struct StepCoefficients {
    double A = 0.0;
    double B = 0.0;
    double noise_std = 0.0;
};

StepCoefficients ddpm_coefficients(int t, const NoiseSchedule& schedule);
StepCoefficients ddim_coefficients(int t, const NoiseSchedule& schedule);

/// Noise is suppressed at t = 1.
NodeField ddpm_step(const NodeField& x_t, int t, const NodeField& eps_pred, const NoiseSchedule& schedule,
                    std::uint64_t seed);
NodeField ddim_step(const NodeField& x_t, int t, const NodeField& eps_pred, const NoiseSchedule& schedule);

enum class SamplerKind { ddpm, ddim };

SamplerKind parse_sampler(std::string_view name);
std::string_view to_string(SamplerKind kind);

/// Seed of the transition noise drawn at step t of a chain rooted at `seed`.
std::uint64_t step_noise_seed(std::uint64_t seed, int t);
/// x_T for a chain rooted at `seed`.
NodeField initial_state(Eigen::Index n, std::uint64_t seed);

/// Noise prediction eps(x_t, t).
using EpsModel = std::function<NodeField(const NodeField& x_t, int t)>;

/// Keeps references to `hierarchy` and `params`.
EpsModel network_model(const GraphHierarchy& hierarchy, const ScoreNetParams& params, const ScoreNetConfig& config);

struct UnconditionalOptions {
    SamplerKind sampler = SamplerKind::ddim;
    std::uint64_t seed = 0;
    std::optional<double> floor;  ///< applies max(x, floor) after every step when set
};

NodeField sample_unconditional(const EpsModel& model, Eigen::Index n, const NoiseSchedule& schedule,
                               const UnconditionalOptions& options);

/// Training batch with one uniformly drawn step and one fresh eps per element.
struct NoisedBatch {
    std::vector<int> steps;
    std::vector<NodeField> x_t;
    std::vector<NodeField> eps;
};

NoisedBatch make_noised_batch(std::span<const NodeField> x0, const NoiseSchedule& schedule, std::uint64_t seed);

/// Mean over the batch of ||eps - model(x_t, t)||^2.
double training_loss(const EpsModel& model, std::span<const NodeField> x0, const NoiseSchedule& schedule,
                     std::uint64_t seed);

/// (1 - abar_t) / sqrt(abar_t) * (likelihood score + regularizer score).
NodeField guidance_correction(double alpha_bar, const NodeField& likelihood_score, const NodeField& regularizer_score);

/// E[x0 | x_t, y] = x0_hat + guidance_correction.
NodeField conditional_posterior_mean(const NodeField& x0_hat, double alpha_bar, const NodeField& likelihood_score,
                                     const NodeField& regularizer_score);

KeyValues schedule_key_values(const ScheduleConfig& config);

}  // namespace graphdps
