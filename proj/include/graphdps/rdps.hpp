#pragma once

#include "graphdps/autodiff.hpp"
#include "graphdps/diffusion.hpp"
#include "graphdps/fem.hpp"
#include "graphdps/mesh.hpp"

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string_view>

namespace graphdps {

enum class RegularizerKind { none, tik, gtik, tv };

RegularizerKind parse_regularizer(std::string_view name);
std::string_view to_string(RegularizerKind kind);

struct Regularizer {
    RegularizerKind kind = RegularizerKind::none;
    double delta = 1e-6;  ///< tv smoothing
};

/// Edge index lists of a graph in tape form.
struct RegularizerGraph {
    int node_count = 0;
    ad::IndexList source;  ///< directed edges
    ad::IndexList target;
    ad::IndexList edge_a;  ///< undirected edges, a < b
    ad::IndexList edge_b;
};

RegularizerGraph make_regularizer_graph(const GraphLevel& graph);

/// tik: ||x||^2; gtik: sum over undirected edges of (x_b - x_a)^2;
/// tv: sum over directed edges of sqrt((x_j - x_i)^2 + delta^2).
ad::Var regularizer_term(const ad::Var& x, const RegularizerGraph& graph, const Regularizer& reg);

struct ValueAndGrad {
    double value = 0.0;
    NodeField grad;
};

ValueAndGrad reg_value_and_grad(const NodeField& x, const GraphLevel& graph, const Regularizer& reg);

/// Measurement operator on the tape: sigma (n x 1) -> voltages (m x 1), differentiated with the adjoint method.
/// The forward evaluation is kept alive by the tape node.
ad::Var forward_operator(const ad::Var& sigma, const CemSolver& solver, const CurrentProtocol& protocol);

/// Noise predictor usable both directly and on a tape.
struct ScoreModel {
    EpsModel eps;
    std::function<ad::Var(ad::Tape&, const ad::Var& x, int t)> eps_on_tape;
};

/// Network-backed model. Keeps references to `hierarchy` and `params`.
ScoreModel network_score_model(const GraphHierarchy& hierarchy, const ScoreNetParams& params,
                               const ScoreNetConfig& config);

enum class GradMode { full_backprop, tweedie_jacobian_approx };

GradMode parse_grad_mode(std::string_view name);
std::string_view to_string(GradMode mode);

struct GuidanceConfig {
    double eta = 1.0;
    double eps_floor = 1e-3;
    double lambda = 0.0;
    bool adaptive_lambda = false;
    double lambda_min = 0.0;
    double lambda_max = 0.0;
    double lambda_scale = 1.0;
    GradMode grad_mode = GradMode::full_backprop;
    /// Lower bound applied to the Tweedie estimate before the forward operator and the regularizer.
    /// Entries below it carry no gradient. The default coincides with the solver's own floor.
    double estimate_floor = 1e-3;

    void validate() const;
};

/// eta / (||y - y0|| + eps_floor).
double adaptive_eta(double eta, const Eigen::VectorXd& y, const Eigen::VectorXd& y0, double eps_floor);

/// clip(scale * sigma_y^2 * sqrt(abar_t) / (1 - abar_t), lambda_min, lambda_max).
double adaptive_lambda(int t, const NoiseSchedule& schedule, double sigma_y, double lambda_min, double lambda_max,
                       double scale = 1.0);

/// Forward solver, protocol and regularizer connectivity for one reconstruction.
struct FidelityContext {
    const CemSolver* solver = nullptr;
    const CurrentProtocol* protocol = nullptr;
    const RegularizerGraph* graph = nullptr;
};

struct GuidanceEvaluation {
    NodeField eps;
    NodeField x0_hat;
    Eigen::VectorXd y0;  ///< F(x0_hat)
    double objective = 0.0;
    /// Gradient of ||y - F(x0_hat(x_t))||^2 + lambda R(x0_hat(x_t)) with respect to x_t.
    NodeField grad;
};

/// F and R see max(x0_hat, estimate_floor).
GuidanceEvaluation guidance_gradient(const ScoreModel& model, const NodeField& x_t, int t,
                                     const NoiseSchedule& schedule, const FidelityContext& context,
                                     const Eigen::VectorXd& y, const Regularizer& reg, double lambda_t,
                                     GradMode mode, double estimate_floor = 1e-3);

struct StepLog {
    int t = 0;
    double residual = 0.0;
    double lambda_t = 0.0;
    double eta_t = 0.0;
};

struct ReconResult {
    NodeField x0_star;
    std::vector<StepLog> history;
};

struct RdpsOptions {
    SamplerKind sampler = SamplerKind::ddim;
    Regularizer regularizer;
    GuidanceConfig guidance;
    std::uint64_t seed = 0;
};

/// Reverse pass t = T..1: eps, Tweedie estimate, unconditional transition, forward solve, adaptive step,
/// gradient step and projection onto x >= eps_floor.
ReconResult rdps_reconstruct(const MeasurementSet& y, const ScoreModel& model, const NoiseSchedule& schedule,
                             const FidelityContext& context, const RdpsOptions& options);

ReconResult ddim_rdps(const MeasurementSet& y, const ScoreModel& model, const NoiseSchedule& schedule,
                      const FidelityContext& context, RdpsOptions options);
ReconResult ddpm_rdps(const MeasurementSet& y, const ScoreModel& model, const NoiseSchedule& schedule,
                      const FidelityContext& context, RdpsOptions options);

/// max(x, floor) elementwise.
NodeField project(const NodeField& x, double floor);

void write_run_log(std::ostream& out, const std::vector<StepLog>& history, std::string_view header_comment = {});
void save_run_log(const std::filesystem::path& path, const std::vector<StepLog>& history,
                  std::string_view header_comment = {});

}  // namespace graphdps
