#include "graphdps/metrics.hpp"

#include "graphdps/io.hpp"

#include <cmath>
#include <ostream>

namespace graphdps {

namespace {

void check_lengths(const NodeField& a, const NodeField& b)
{
    if (a.size() != b.size()) {
        throw Error("metrics", "field lengths differ (" + std::to_string(a.size()) + " vs " +
                                   std::to_string(b.size()) + ")");
    }
}

}  // namespace

double rmse(const NodeField& x_gt, const NodeField& x_star)
{
    check_lengths(x_gt, x_star);
    if (x_gt.size() == 0) {
        throw Error("metrics", "empty field");
    }
    return std::sqrt((x_gt - x_star).squaredNorm() / static_cast<double>(x_gt.size()));
}

double rel_err(const NodeField& x_gt, const NodeField& x_star)
{
    check_lengths(x_gt, x_star);
    const double norm = x_gt.norm();
    if (norm == 0.0) {
        throw Error("metrics", "relative error needs a nonzero ground truth");
    }
    return (x_gt - x_star).norm() / norm;
}

double graph_ssim(const NodeField& x_gt, const NodeField& x_star, const GraphLevel& graph, const MetricsConfig& config)
{
    check_lengths(x_gt, x_star);
    if (x_gt.size() != graph.node_count) {
        throw Error("metrics", "field length does not match the graph");
    }
    double range = config.data_range.value_or(x_gt.maxCoeff() - x_gt.minCoeff());
    if (range <= 0.0) {
        range = 1.0;
    }
    const double c1 = std::pow(config.k1 * range, 2);
    const double c2 = std::pow(config.k2 * range, 2);
    const auto rings = graph.neighbors();
    double total = 0.0;
    for (int k = 0; k < graph.node_count; ++k) {
        double ma = x_gt[k];
        double mb = x_star[k];
        for (const int j : rings[k]) {
            ma += x_gt[j];
            mb += x_star[j];
        }
        const double size = 1.0 + static_cast<double>(rings[k].size());
        ma /= size;
        mb /= size;
        double va = (x_gt[k] - ma) * (x_gt[k] - ma);
        double vb = (x_star[k] - mb) * (x_star[k] - mb);
        double cov = (x_gt[k] - ma) * (x_star[k] - mb);
        for (const int j : rings[k]) {
            va += (x_gt[j] - ma) * (x_gt[j] - ma);
            vb += (x_star[j] - mb) * (x_star[j] - mb);
            cov += (x_gt[j] - ma) * (x_star[j] - mb);
        }
        va /= size;
        vb /= size;
        cov /= size;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    return total / graph.node_count;
}

EvaluationRow evaluate(const NodeField& x_gt, const NodeField& x_star, const GraphLevel& graph,
                       const MetricsConfig& config)
{
    EvaluationRow row;
    row.rmse = rmse(x_gt, x_star);
    row.rel_err = rel_err(x_gt, x_star);
    row.ssim = graph_ssim(x_gt, x_star, graph, config);
    return row;
}

void write_evaluation_csv(std::ostream& out, const std::vector<EvaluationRow>& rows, std::string_view header_comment)
{
    if (!header_comment.empty()) {
        out << "# " << header_comment << '\n';
    }
    out << "sample_id,rmse,rel_err,ssim,sampler,regularizer,noise\n";
    for (const auto& r : rows) {
        out << r.sample_id << ',' << format_double(r.rmse) << ',' << format_double(r.rel_err) << ','
            << format_double(r.ssim) << ',' << r.sampler << ',' << r.regularizer << ',' << r.noise << '\n';
    }
}

void save_evaluation_csv(const std::filesystem::path& path, const std::vector<EvaluationRow>& rows,
                         std::string_view header_comment)
{
    std::ofstream out = open_output(path);
    write_evaluation_csv(out, rows, header_comment);
    if (!out) {
        throw Error("io", "failed writing " + path.string());
    }
}

}  // namespace graphdps
