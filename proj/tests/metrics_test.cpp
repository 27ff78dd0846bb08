#include "graphdps/metrics.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

using namespace graphdps;

namespace {

GraphLevel path3()
{
    GraphLevel g;
    g.node_count = 3;
    g.edges = {{0, 1}, {1, 0}, {1, 2}, {2, 1}};
    g.edge_lengths = {1, 1, 1, 1};
    g.coords = {Point2(0, 0), Point2(1, 0), Point2(2, 0)};
    return g;
}

NodeField random_field(int n, std::mt19937_64& rng)
{
    std::normal_distribution<double> normal(1.0, 0.3);
    NodeField x(n);
    for (int i = 0; i < n; ++i) {
        x[i] = normal(rng);
    }
    return x;
}

// Textbook SSIM of two short vectors with population statistics.
double window_ssim(const std::vector<double>& a, const std::vector<double>& b, double c1, double c2)
{
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double va = 0.0;
    double vb = 0.0;
    double cov = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        va += (a[i] - ma) * (a[i] - ma) / n;
        vb += (b[i] - mb) * (b[i] - mb) / n;
        cov += (a[i] - ma) * (b[i] - mb) / n;
    }
    return (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
}

}  // namespace

TEST(Metrics, RmseAndRelErrExamples)
{
    const NodeField gt = NodeField::Ones(2);
    const NodeField est = (NodeField(2) << 1.0, 2.0).finished();
    EXPECT_NEAR(rmse(gt, est), 1.0 / std::sqrt(2.0), 1e-15);
    EXPECT_NEAR(rel_err(gt, est), 1.0 / std::sqrt(2.0), 1e-15);
    EXPECT_EQ(rmse(gt, gt), 0.0);
    EXPECT_EQ(rel_err(gt, gt), 0.0);
    EXPECT_THROW(rel_err(NodeField::Zero(2), est), Error);
    EXPECT_THROW(rmse(gt, NodeField::Ones(3)), Error);
}

TEST(Metrics, RelErrIsScaledRmse)
{
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const NodeField a = random_field(40, rng);
        const NodeField b = random_field(40, rng);
        EXPECT_NEAR(rel_err(a, b), rmse(a, b) * std::sqrt(40.0) / a.norm(), 1e-14);
    }
}

TEST(Metrics, SsimMatchesWindowFormulaOnPath)
{
    const NodeField a = (NodeField(3) << 1.0, 1.5, 0.7).finished();
    const NodeField b = (NodeField(3) << 0.9, 1.2, 1.1).finished();
    const double range = 0.8;
    const double c1 = std::pow(0.01 * range, 2);
    const double c2 = std::pow(0.03 * range, 2);
    const double expected = (window_ssim({1.0, 1.5}, {0.9, 1.2}, c1, c2) +
                             window_ssim({1.0, 1.5, 0.7}, {0.9, 1.2, 1.1}, c1, c2) +
                             window_ssim({1.5, 0.7}, {1.2, 1.1}, c1, c2)) /
                            3.0;
    EXPECT_NEAR(graph_ssim(a, b, path3()), expected, 1e-14);
}

TEST(Metrics, SsimIdentityAndNegation)
{
    const GraphLevel g = mesh_edges(build_disk_mesh(80, 2));
    std::mt19937_64 rng(2);
    const NodeField a = random_field(g.node_count, rng);
    EXPECT_NEAR(graph_ssim(a, a, g), 1.0, 1e-14);
    const NodeField flat = NodeField::Constant(g.node_count, 2.0);
    EXPECT_NEAR(graph_ssim(flat, flat, g), 1.0, 1e-14);
}

TEST(Metrics, SsimOfNegatedZeroMeanWindowsIsNonPositive)
{
    // On a complete graph every window is the whole field, so centering makes all windows zero-mean.
    GraphLevel g;
    g.node_count = 6;
    for (int i = 0; i < 6; ++i) {
        g.coords.emplace_back(std::cos(i), std::sin(i));
        for (int j = 0; j < 6; ++j) {
            if (i != j) {
                g.edges.emplace_back(i, j);
                g.edge_lengths.push_back(1.0);
            }
        }
    }
    std::mt19937_64 rng(5);
    const NodeField a = random_field(6, rng);
    const NodeField centered = a.array() - a.mean();
    EXPECT_LE(graph_ssim(centered, -centered, g), 0.0);
}

TEST(Metrics, SsimSymmetricForFixedRange)
{
    const GraphLevel g = mesh_edges(build_disk_mesh(80, 3));
    std::mt19937_64 rng(3);
    MetricsConfig config;
    config.data_range = 1.0;
    for (int trial = 0; trial < 10; ++trial) {
        const NodeField a = random_field(g.node_count, rng);
        const NodeField b = random_field(g.node_count, rng);
        EXPECT_NEAR(graph_ssim(a, b, g, config), graph_ssim(b, a, g, config), 1e-14);
        const double s = graph_ssim(a, b, g, config);
        EXPECT_GE(s, -1.0);
        EXPECT_LE(s, 1.0);
    }
}

TEST(Metrics, SsimInvariantUnderRelabeling)
{
    const TriMesh mesh = build_disk_mesh(80, 4);
    const int n = mesh.vertex_count();
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(4);
    std::shuffle(perm.begin(), perm.end(), rng);
    const NodeField a = random_field(n, rng);
    const NodeField b = random_field(n, rng);
    NodeField pa(n);
    NodeField pb(n);
    for (int i = 0; i < n; ++i) {
        pa[perm[i]] = a[i];
        pb[perm[i]] = b[i];
    }
    EXPECT_NEAR(graph_ssim(a, b, mesh_edges(mesh)), graph_ssim(pa, pb, mesh_edges(permute_mesh(mesh, perm))), 1e-13);
}

TEST(Metrics, CsvHasOneRowPerEvaluation)
{
    EvaluationRow r{"s0", 0.1, 0.2, 0.9, "ddim", "tv", "none"};
    std::ostringstream out;
    write_evaluation_csv(out, {r, r}, "config_hash=abc");
    EXPECT_EQ(out.str(), "# config_hash=abc\nsample_id,rmse,rel_err,ssim,sampler,regularizer,noise\n"
                         "s0,0.1,0.2,0.9,ddim,tv,none\ns0,0.1,0.2,0.9,ddim,tv,none\n");
}
