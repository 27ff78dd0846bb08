#include "graphdps/rdps.hpp"

#include "graphdps/io.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace graphdps {

namespace {

using ad::Matrix;
using ad::Var;

Var constant_field(ad::Tape& tape, const Eigen::VectorXd& v) { return tape.constant(ad::as_column(v)); }

}  // namespace

RegularizerKind parse_regularizer(std::string_view name)
{
    if (name == "none") {
        return RegularizerKind::none;
    }
    if (name == "tik") {
        return RegularizerKind::tik;
    }
    if (name == "gtik") {
        return RegularizerKind::gtik;
    }
    if (name == "tv") {
        return RegularizerKind::tv;
    }
    throw Error("config", "unknown regularizer '" + std::string(name) + "'");
}

std::string_view to_string(RegularizerKind kind)
{
    switch (kind) {
    case RegularizerKind::none:
        return "none";
    case RegularizerKind::tik:
        return "tik";
    case RegularizerKind::gtik:
        return "gtik";
    case RegularizerKind::tv:
        return "tv";
    }
    return "none";
}

GradMode parse_grad_mode(std::string_view name)
{
    if (name == "full_backprop") {
        return GradMode::full_backprop;
    }
    if (name == "tweedie_jacobian_approx") {
        return GradMode::tweedie_jacobian_approx;
    }
    throw Error("config", "unknown grad_mode '" + std::string(name) + "'");
}

std::string_view to_string(GradMode mode)
{
    return mode == GradMode::full_backprop ? "full_backprop" : "tweedie_jacobian_approx";
}

RegularizerGraph make_regularizer_graph(const GraphLevel& graph)
{
    RegularizerGraph g;
    g.node_count = graph.node_count;
    auto src = std::make_shared<std::vector<int>>();
    auto dst = std::make_shared<std::vector<int>>();
    auto a = std::make_shared<std::vector<int>>();
    auto b = std::make_shared<std::vector<int>>();
    for (const auto& [i, j] : graph.edges) {
        src->push_back(i);
        dst->push_back(j);
        if (i < j) {
            a->push_back(i);
            b->push_back(j);
        }
    }
    g.source = std::move(src);
    g.target = std::move(dst);
    g.edge_a = std::move(a);
    g.edge_b = std::move(b);
    return g;
}

Var regularizer_term(const Var& x, const RegularizerGraph& graph, const Regularizer& reg)
{
    if (x.rows() != graph.node_count || x.cols() != 1) {
        throw Error("regularizer", "field has " + std::to_string(x.rows()) + " entries, graph has " +
                                       std::to_string(graph.node_count) + " nodes");
    }
    switch (reg.kind) {
    case RegularizerKind::none:
        return x.tape().constant(Matrix::Zero(1, 1));
    case RegularizerKind::tik:
        return ad::sum(ad::square(x));
    case RegularizerKind::gtik:
        if (graph.edge_a->empty()) {
            return x.tape().constant(Matrix::Zero(1, 1));
        }
        return ad::sum(ad::square(ad::sub(ad::gather_rows(x, graph.edge_b), ad::gather_rows(x, graph.edge_a))));
    case RegularizerKind::tv:
        if (!(reg.delta > 0.0)) {
            throw Error("regularizer", "tv smoothing must be positive");
        }
        if (graph.source->empty()) {
            return x.tape().constant(Matrix::Zero(1, 1));
        }
        return ad::sum(
            ad::abs_smooth(ad::sub(ad::gather_rows(x, graph.target), ad::gather_rows(x, graph.source)), reg.delta));
    }
    throw Error("regularizer", "unhandled regularizer");
}

ValueAndGrad reg_value_and_grad(const NodeField& x, const GraphLevel& graph, const Regularizer& reg)
{
    ad::Tape tape;
    const Var xv = tape.leaf(ad::as_column(x));
    const Var r = regularizer_term(xv, make_regularizer_graph(graph), reg);
    tape.backward(r);
    return {r.scalar(), ad::as_field(tape.grad(xv))};
}

Var forward_operator(const Var& sigma, const CemSolver& solver, const CurrentProtocol& protocol)
{
    auto evaluation = std::make_shared<ForwardEvaluation>(solver, protocol, ad::as_field(sigma.value()));
    Matrix y = ad::as_column(evaluation->measurements().y);
    return ad::custom_unary(sigma, std::move(y), [evaluation](const Matrix&, const Matrix& g) {
        return ad::as_column(evaluation->vjp(ad::as_field(g)));
    });
}

ScoreModel network_score_model(const GraphHierarchy& hierarchy, const ScoreNetParams& params,
                               const ScoreNetConfig& config)
{
    auto graph = std::make_shared<const BatchedGraph>(batch_hierarchy(hierarchy, 1));
    ScoreModel model;
    model.eps = network_model(hierarchy, params, config);
    model.eps_on_tape = [graph, &params, config](ad::Tape& tape, const Var& x, int t) {
        const BoundParams p = bind_params(tape, params, false);
        const int steps[] = {t};
        return ad::column(dgn_apply(tape, p, *graph, x, steps, config), 0);
    };
    return model;
}

void GuidanceConfig::validate() const
{
    if (!(eta >= 0.0)) {
        throw Error("config", "eta must be nonnegative");
    }
    if (!(eps_floor > 0.0)) {
        throw Error("config", "eps_floor must be positive");
    }
    if (!(lambda >= 0.0)) {
        throw Error("config", "lambda must be nonnegative");
    }
    if (adaptive_lambda && !(lambda_min >= 0.0 && lambda_min <= lambda_max)) {
        throw Error("config", "adaptive lambda needs 0 <= lambda_min <= lambda_max");
    }
    if (!(estimate_floor >= 0.0)) {
        throw Error("config", "estimate_floor must be nonnegative");
    }
}

double adaptive_eta(double eta, const Eigen::VectorXd& y, const Eigen::VectorXd& y0, double eps_floor)
{
    if (y.size() != y0.size()) {
        throw Error("sampler", "measurement lengths differ");
    }
    return eta / ((y - y0).norm() + eps_floor);
}

double adaptive_lambda(int t, const NoiseSchedule& schedule, double sigma_y, double lambda_min, double lambda_max,
                       double scale)
{
    schedule.check_step(t);
    if (!(lambda_min <= lambda_max)) {
        throw Error("config", "lambda_min exceeds lambda_max");
    }
    const double ab = schedule.alpha_bar[t];
    const double theory = scale * sigma_y * sigma_y * std::sqrt(ab) / (1.0 - ab);
    return std::clamp(theory, lambda_min, lambda_max);
}

namespace {

Var floor_var(const Var& x, double floor)
{
    const ad::Matrix& v = x.value();
    if ((v.array() >= floor).all()) {
        return x;
    }
    ad::Matrix keep = (v.array() >= floor).cast<double>();
    return ad::custom_unary(x, v.cwiseMax(floor), [keep = std::move(keep)](const ad::Matrix&, const ad::Matrix& g) {
        return ad::Matrix(g.cwiseProduct(keep));
    });
}

}  // namespace

GuidanceEvaluation guidance_gradient(const ScoreModel& model, const NodeField& x_t, int t,
                                     const NoiseSchedule& schedule, const FidelityContext& context,
                                     const Eigen::VectorXd& y, const Regularizer& reg, double lambda_t,
                                     GradMode mode, double estimate_floor)
{
    schedule.check_step(t);
    const double ab = schedule.alpha_bar[t];
    const double c_eps = std::sqrt(1.0 - ab);
    const double c_x = 1.0 / std::sqrt(ab);
    ad::Tape tape;
    GuidanceEvaluation out;
    Var x0_hat;
    Var xv;
    if (mode == GradMode::full_backprop) {
        xv = tape.leaf(ad::as_column(x_t));
        const Var eps = model.eps_on_tape(tape, xv, t);
        out.eps = ad::as_field(eps.value());
        x0_hat = ad::scale(ad::sub(xv, ad::scale(eps, c_eps)), c_x);
    } else {
        out.eps = model.eps(x_t, t);
        x0_hat = tape.leaf(ad::as_column(tweedie_x0(x_t, t, out.eps, schedule)));
    }
    out.x0_hat = ad::as_field(x0_hat.value());
    const Var clipped = floor_var(x0_hat, estimate_floor);
    const Var y_pred = forward_operator(clipped, *context.solver, *context.protocol);
    out.y0 = ad::as_field(y_pred.value());
    Var objective = ad::sum(ad::square(ad::sub(constant_field(tape, y), y_pred)));
    if (reg.kind != RegularizerKind::none && lambda_t != 0.0) {
        objective = ad::add(objective, ad::scale(regularizer_term(clipped, *context.graph, reg), lambda_t));
    }
    tape.backward(objective);
    out.objective = objective.scalar();
    out.grad = mode == GradMode::full_backprop ? ad::as_field(tape.grad(xv)) : NodeField(c_x * ad::as_field(tape.grad(x0_hat)));
    return out;
}

NodeField project(const NodeField& x, double floor) { return x.cwiseMax(floor); }

ReconResult rdps_reconstruct(const MeasurementSet& y, const ScoreModel& model, const NoiseSchedule& schedule,
                             const FidelityContext& context, const RdpsOptions& options)
{
    const GuidanceConfig& g = options.guidance;
    g.validate();
    if (context.solver == nullptr || context.protocol == nullptr || context.graph == nullptr) {
        throw Error("sampler", "incomplete fidelity context");
    }
    const int n = context.solver->vertex_count();
    if (context.graph->node_count != n) {
        throw Error("sampler", "regularizer graph and forward mesh differ in node count");
    }
    if (y.y.size() != context.protocol->measurement_count()) {
        throw Error("sampler", "measurement vector has " + std::to_string(y.y.size()) + " entries, protocol expects " +
                                   std::to_string(context.protocol->measurement_count()));
    }
    ReconResult result;
    NodeField x = initial_state(n, options.seed);
    for (int t = schedule.T; t >= 1; --t) {
        try {
            StepLog log;
            log.t = t;
            log.lambda_t = g.adaptive_lambda ? adaptive_lambda(t, schedule, y.sigma_y, g.lambda_min, g.lambda_max,
                                                               g.lambda_scale)
                                             : g.lambda;
            NodeField next;
            if (g.eta == 0.0) {
                // Guidance switched off: exactly the unconditional transition.
                const NodeField eps = model.eps(x, t);
                next = options.sampler == SamplerKind::ddpm
                           ? ddpm_step(x, t, eps, schedule, step_noise_seed(options.seed, t))
                           : ddim_step(x, t, eps, schedule);
                log.residual = std::numeric_limits<double>::quiet_NaN();
            } else {
                const GuidanceEvaluation ev =
                    guidance_gradient(model, x, t, schedule, context, y.y, options.regularizer, log.lambda_t, g.grad_mode,
                                      g.estimate_floor);
                const StepCoefficients c = options.sampler == SamplerKind::ddpm ? ddpm_coefficients(t, schedule)
                                                                                : ddim_coefficients(t, schedule);
                next = c.A * ev.x0_hat + c.B * x;
                if (c.noise_std > 0.0) {
                    std::mt19937_64 rng(step_noise_seed(options.seed, t));
                    next += c.noise_std * standard_normal(n, rng);
                }
                log.residual = (y.y - ev.y0).norm();
                log.eta_t = adaptive_eta(g.eta, y.y, ev.y0, g.eps_floor);
                next -= log.eta_t * ev.grad;
            }
            x = project(next, g.eps_floor);
            if (!x.allFinite()) {
                throw Error("sampler", "non-finite state");
            }
            result.history.push_back(log);
        } catch (const Error& e) {
            throw Error(e.category(), "step " + std::to_string(t) + ": " + e.what());
        }
    }
    result.x0_star = std::move(x);
    return result;
}

ReconResult ddim_rdps(const MeasurementSet& y, const ScoreModel& model, const NoiseSchedule& schedule,
                      const FidelityContext& context, RdpsOptions options)
{
    options.sampler = SamplerKind::ddim;
    return rdps_reconstruct(y, model, schedule, context, options);
}

ReconResult ddpm_rdps(const MeasurementSet& y, const ScoreModel& model, const NoiseSchedule& schedule,
                      const FidelityContext& context, RdpsOptions options)
{
    options.sampler = SamplerKind::ddpm;
    return rdps_reconstruct(y, model, schedule, context, options);
}

void write_run_log(std::ostream& out, const std::vector<StepLog>& history, std::string_view header_comment)
{
    if (!header_comment.empty()) {
        out << "# " << header_comment << '\n';
    }
    out << "t,residual,lambda_t,eta_t\n";
    for (const auto& s : history) {
        out << s.t << ',' << (std::isnan(s.residual) ? std::string("nan") : format_double(s.residual)) << ','
            << format_double(s.lambda_t) << ',' << format_double(s.eta_t) << '\n';
    }
}

void save_run_log(const std::filesystem::path& path, const std::vector<StepLog>& history,
                  std::string_view header_comment)
{
    std::ofstream out = open_output(path);
    write_run_log(out, history, header_comment);
    if (!out) {
        throw Error("io", "failed writing " + path.string());
    }
}

}  // namespace graphdps
