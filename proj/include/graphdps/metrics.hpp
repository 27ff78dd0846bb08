#pragma once

#include "graphdps/common.hpp"
#include "graphdps/mesh.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace graphdps {

struct MetricsConfig {
    double k1 = 0.01;
    double k2 = 0.03;
    /// Scales the stabilizers C1 = (k1 R)^2, C2 = (k2 R)^2. Defaults to max(x_gt) - min(x_gt), or 1 when that is zero.
    std::optional<double> data_range;
};

double rmse(const NodeField& x_gt, const NodeField& x_star);
double rel_err(const NodeField& x_gt, const NodeField& x_star);

/// Mean over nodes of SSIM on one-ring windows {k} and its neighbors, population statistics.
double graph_ssim(const NodeField& x_gt, const NodeField& x_star, const GraphLevel& graph,
                  const MetricsConfig& config = {});

struct EvaluationRow {
    std::string sample_id;
    double rmse = 0.0;
    double rel_err = 0.0;
    double ssim = 0.0;
    std::string sampler;
    std::string regularizer;
    std::string noise;
};

EvaluationRow evaluate(const NodeField& x_gt, const NodeField& x_star, const GraphLevel& graph,
                       const MetricsConfig& config = {});

void write_evaluation_csv(std::ostream& out, const std::vector<EvaluationRow>& rows,
                          std::string_view header_comment = {});
void save_evaluation_csv(const std::filesystem::path& path, const std::vector<EvaluationRow>& rows,
                         std::string_view header_comment = {});

}  // namespace graphdps
