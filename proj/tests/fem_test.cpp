#include "graphdps/fem.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

using namespace graphdps;

namespace {

TriMesh ring_mesh(int boundary_count, int target = 120, std::uint64_t seed = 4)
{
    DiskMeshOptions opt;
    opt.target_vertex_count = target;
    opt.boundary_count = boundary_count;
    opt.seed = seed;
    return build_disk_mesh(opt);
}

TriMesh electrode_mesh(int target, int electrodes, std::uint64_t seed)
{
    return ring_mesh(electrode_boundary_count(target, electrodes), target, seed);
}

double rel_diff(const Eigen::VectorXd& a, const Eigen::VectorXd& b)
{
    return (a - b).norm() / std::max(a.norm(), b.norm());
}

}  // namespace

TEST(Protocol, AdjacentSixteenGives208)
{
    const CurrentProtocol p = make_protocol(ProtocolKind::adjacent_adjacent, 16);
    EXPECT_EQ(p.patterns.size(), 16u);
    EXPECT_EQ(p.measurement_count(), 208);
}

TEST(Protocol, OppositeSixteenExcludesDrivenPairs)
{
    const CurrentProtocol p = make_protocol(ProtocolKind::opposite_adjacent, 16);
    EXPECT_EQ(p.measurement_count(), 16 * 12);
    for (const auto& m : p.measurement_pairs) {
        const auto& pat = p.patterns[m.pattern];
        EXPECT_EQ(pat[m.electrode_a], 0.0);
        EXPECT_EQ(pat[m.electrode_b], 0.0);
    }
}

TEST(Protocol, OppositeFourDrivesZeroAndTwo)
{
    const CurrentProtocol p = make_protocol(ProtocolKind::opposite_adjacent, 4, 1.0);
    const Eigen::VectorXd& pat = p.patterns[0];
    EXPECT_EQ(pat[0], 1.0);
    EXPECT_EQ(pat[2], -1.0);
    EXPECT_EQ(pat[1], 0.0);
    EXPECT_EQ(pat[3], 0.0);
}

TEST(Protocol, PatternsConserveCharge)
{
    for (const auto kind : {ProtocolKind::opposite_adjacent, ProtocolKind::adjacent_adjacent}) {
        for (const auto& pat : make_protocol(kind, 32).patterns) {
            EXPECT_LE(std::abs(pat.sum()), 1e-12);
        }
    }
}

TEST(Protocol, OddOppositeRejected)
{
    EXPECT_THROW(make_protocol(ProtocolKind::opposite_adjacent, 7), Error);
    EXPECT_THROW(parse_protocol("opposite"), Error);
    EXPECT_EQ(parse_protocol("adjacent_adjacent"), ProtocolKind::adjacent_adjacent);
}

TEST(Electrodes, FourOnThirtyTwoBoundaryNodes)
{
    const TriMesh mesh = ring_mesh(32);
    ASSERT_EQ(mesh.boundary_loop.size(), 32u);
    const ElectrodeConfig e = place_electrodes(mesh, 4, 0.5);
    ASSERT_EQ(e.count, 4);
    std::vector<int> owner(static_cast<std::size_t>(mesh.vertex_count()), -1);
    for (int l = 0; l < 4; ++l) {
        EXPECT_EQ(e.electrode_nodes[l].size(), 4u);
        for (const int v : e.electrode_nodes[l]) {
            EXPECT_EQ(owner[v], -1) << "arcs overlap at vertex " << v;
            owner[v] = l;
        }
    }
}

TEST(Electrodes, ThirtyTwoOnDeskMesh)
{
    const TriMesh mesh = electrode_mesh(300, 32, 0);
    EXPECT_EQ(mesh.boundary_loop.size() % 32, 0u);
    const ElectrodeConfig e = place_electrodes(mesh, 32, 0.5);
    EXPECT_EQ(e.count, 32);
    for (const auto& nodes : e.electrode_nodes) {
        EXPECT_GE(nodes.size(), 2u);
    }
}

TEST(Electrodes, TooCoarseBoundaryRejected)
{
    const TriMesh mesh = ring_mesh(32);
    EXPECT_THROW(place_electrodes(mesh, 32, 0.5), Error);
}

TEST(Electrodes, LengthMatchesArcChords)
{
    const TriMesh mesh = ring_mesh(64);
    const ElectrodeConfig e = place_electrodes(mesh, 8, 0.5);
    const CemSolver solver(mesh, e);
    // 64 boundary nodes, arc of 4 segments each covering a full chord.
    const double chord = 2.0 * std::sin(std::numbers::pi / 64.0);
    for (int l = 0; l < 8; ++l) {
        EXPECT_NEAR(solver.electrode_length(l), 4.0 * chord, 1e-12);
    }
}

class CemFixture : public ::testing::Test {
protected:
    CemFixture()
        : mesh(electrode_mesh(200, 16, 1)),
          electrodes(place_electrodes(mesh, 16, 0.5)),
          solver(mesh, electrodes),
          protocol(make_protocol(ProtocolKind::adjacent_adjacent, 16))
    {
    }

    TriMesh mesh;
    ElectrodeConfig electrodes;
    CemSolver solver;
    CurrentProtocol protocol;
};

TEST_F(CemFixture, ZeroPatternGivesZeroField)
{
    const CemSolution s = solve_cem(solver, NodeField::Ones(mesh.vertex_count()), Eigen::VectorXd::Zero(16));
    EXPECT_EQ(s.potentials.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(s.electrode_voltages.cwiseAbs().maxCoeff(), 0.0);
}

TEST_F(CemFixture, VoltagesSumToZero)
{
    const CemSolution s = solver.factorize(NodeField::Ones(mesh.vertex_count())).solve(protocol.pattern_matrix());
    for (Eigen::Index p = 0; p < s.electrode_voltages.cols(); ++p) {
        EXPECT_LE(std::abs(s.electrode_voltages.col(p).sum()), 1e-12 * s.electrode_voltages.col(p).norm());
    }
}

TEST_F(CemFixture, ResidualBelowTolerance)
{
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.5, 1.5);
    NodeField sigma(mesh.vertex_count());
    for (auto& s : sigma) {
        s = u(rng);
    }
    const CemFactorization f = solver.factorize(sigma);
    const CemSolution sol = f.solve(protocol.pattern_matrix());
    const Eigen::SparseMatrix<double> A = solver.assemble(sigma);
    for (Eigen::Index p = 0; p < sol.potentials.cols(); ++p) {
        Eigen::VectorXd x(solver.unknown_count());
        x << sol.potentials.col(p), sol.electrode_voltages.col(p);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(solver.unknown_count());
        rhs.tail(16) = protocol.patterns[p];
        EXPECT_LE((A * x - rhs).norm() / rhs.norm(), 1e-10);
    }
}

TEST_F(CemFixture, ElectrodeCurrentsReproducePattern)
{
    const NodeField sigma = NodeField::Constant(mesh.vertex_count(), 0.8);
    for (const auto& pat : protocol.patterns) {
        const CemSolution s = solve_cem(solver, sigma, pat);
        const Eigen::VectorXd currents = solver.electrode_currents(s.potentials.col(0), s.electrode_voltages.col(0));
        EXPECT_LE((currents - pat).norm() / pat.norm(), 1e-8);
    }
}

TEST_F(CemFixture, JointScalingScalesVoltages)
{
    const double c = 3.5;
    ElectrodeConfig scaled = electrodes;
    for (auto& z : scaled.contact_impedances) {
        z /= c;
    }
    const CemSolver scaled_solver(mesh, scaled);
    const MeasurementSet base = forward(solver, protocol, NodeField::Ones(mesh.vertex_count()));
    const MeasurementSet s = forward(scaled_solver, protocol, NodeField::Constant(mesh.vertex_count(), c));
    EXPECT_LE(rel_diff(s.y * c, base.y), 1e-10);
}

TEST_F(CemFixture, Reciprocity)
{
    const NodeField sigma = NodeField::Ones(mesh.vertex_count()) + 0.3 * NodeField::Random(mesh.vertex_count());
    const CemFactorization f = solver.factorize(sigma);
    const std::array<std::array<int, 4>, 3> quads{{{0, 1, 5, 6}, {2, 9, 12, 4}, {3, 4, 10, 15}}};
    for (const auto& q : quads) {
        Eigen::MatrixXd pats = Eigen::MatrixXd::Zero(16, 2);
        pats(q[0], 0) = 1.0;
        pats(q[1], 0) = -1.0;
        pats(q[2], 1) = 1.0;
        pats(q[3], 1) = -1.0;
        const CemSolution s = f.solve(pats);
        const double forward_transfer = s.electrode_voltages(q[2], 0) - s.electrode_voltages(q[3], 0);
        const double reverse_transfer = s.electrode_voltages(q[0], 1) - s.electrode_voltages(q[1], 1);
        EXPECT_LE(std::abs(forward_transfer - reverse_transfer), 1e-8 * std::abs(forward_transfer));
    }
}

TEST_F(CemFixture, UnitInclusionMatchesHomogeneous)
{
    const NodeField ones = NodeField::Ones(mesh.vertex_count());
    const MeasurementSet a = forward(solver, protocol, ones);
    const MeasurementSet b = forward(solver, protocol, ones);
    EXPECT_EQ(a.y, b.y);
    EXPECT_EQ(a.y.size(), 208);
    EXPECT_EQ(a.noise_kind, NoiseKind::none);
}

TEST(Cem, ConductiveInclusionLowersOppositeVoltages)
{
    const TriMesh mesh = electrode_mesh(300, 32, 0);
    const CemSolver solver(mesh, place_electrodes(mesh, 32, 0.5));
    const CurrentProtocol protocol = make_protocol(ProtocolKind::opposite_adjacent, 32);
    NodeField sigma = NodeField::Ones(mesh.vertex_count());
    for (int v = 0; v < mesh.vertex_count(); ++v) {
        if (mesh.vertices[v].norm() < 0.35) {
            sigma[v] = 3.0;
        }
    }
    const MeasurementSet homogeneous = forward(solver, protocol, NodeField::Ones(mesh.vertex_count()));
    const MeasurementSet inclusion = forward(solver, protocol, sigma);
    EXPECT_LT(inclusion.y.norm(), homogeneous.y.norm());
}

TEST(Cem, VjpMatchesCentralDifferences)
{
    const TriMesh mesh = electrode_mesh(50, 8, 2);
    const CemSolver solver(mesh, place_electrodes(mesh, 8, 0.5));
    const CurrentProtocol protocol = make_protocol(ProtocolKind::opposite_adjacent, 8);
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.6, 1.4);
    NodeField sigma(mesh.vertex_count());
    for (auto& s : sigma) {
        s = u(rng);
    }
    Eigen::VectorXd w(protocol.measurement_count());
    std::normal_distribution<double> normal;
    for (auto& x : w) {
        x = normal(rng);
    }
    const NodeField g = adjoint_jacobian_vjp(solver, protocol, sigma, w);
    NodeField fd(mesh.vertex_count());
    const double h = 1e-5;
    for (int i = 0; i < mesh.vertex_count(); ++i) {
        NodeField sp = sigma;
        NodeField sm = sigma;
        sp[i] += h;
        sm[i] -= h;
        fd[i] = (w.dot(forward(solver, protocol, sp).y) - w.dot(forward(solver, protocol, sm).y)) / (2.0 * h);
    }
    EXPECT_LE(rel_diff(g, fd), 1e-4);
}

TEST(Cem, VjpIsLinearAndVanishesForZeroWeights)
{
    const TriMesh mesh = electrode_mesh(80, 8, 3);
    const CemSolver solver(mesh, place_electrodes(mesh, 8, 0.5));
    const CurrentProtocol protocol = make_protocol(ProtocolKind::adjacent_adjacent, 8);
    const NodeField sigma = NodeField::Ones(mesh.vertex_count()) + 0.2 * NodeField::Random(mesh.vertex_count());
    const ForwardEvaluation eval(solver, protocol, sigma);
    const Eigen::VectorXd w1 = Eigen::VectorXd::Random(protocol.measurement_count());
    const Eigen::VectorXd w2 = Eigen::VectorXd::Random(protocol.measurement_count());
    const NodeField lhs = eval.vjp(2.0 * w1 - 0.5 * w2);
    const NodeField rhs = 2.0 * eval.vjp(w1) - 0.5 * eval.vjp(w2);
    EXPECT_LE(rel_diff(lhs, rhs), 1e-10);
    EXPECT_EQ(eval.vjp(Eigen::VectorXd::Zero(protocol.measurement_count())).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Cem, EmptyProtocolGivesZeroGradient)
{
    const TriMesh mesh = electrode_mesh(50, 8, 2);
    const CemSolver solver(mesh, place_electrodes(mesh, 8, 0.5));
    const CurrentProtocol empty;
    const NodeField g = adjoint_jacobian_vjp(solver, empty, NodeField::Ones(mesh.vertex_count()), Eigen::VectorXd());
    EXPECT_EQ(g.size(), mesh.vertex_count());
    EXPECT_EQ(g.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Cem, FlooredEntriesHaveZeroGradient)
{
    const TriMesh mesh = electrode_mesh(50, 8, 2);
    const CemSolver solver(mesh, place_electrodes(mesh, 8, 0.5));
    const CurrentProtocol protocol = make_protocol(ProtocolKind::opposite_adjacent, 8);
    NodeField sigma = NodeField::Ones(mesh.vertex_count());
    sigma[10] = -0.5;
    const ForwardEvaluation eval(solver, protocol, sigma);
    const NodeField g = eval.vjp(Eigen::VectorXd::Ones(protocol.measurement_count()));
    EXPECT_EQ(g[10], 0.0);
    NodeField at_floor = sigma;
    at_floor[10] = kConductivityFloor;
    EXPECT_EQ(eval.measurements().y, forward(solver, protocol, at_floor).y);
}

TEST(Continuum, NeumannConvergesAtSecondOrder)
{
    // u = x solves the Laplace problem with flux cos(theta) on the unit circle.
    std::vector<double> h;
    std::vector<double> err;
    for (const int n : {150, 600, 2400}) {
        const TriMesh mesh = build_disk_mesh(n, 21);
        const NodeField u = solve_neumann(mesh, NodeField::Ones(mesh.vertex_count()),
                                          [](const Point2& p) { return std::cos(std::atan2(p.y(), p.x())); });
        NodeField exact(mesh.vertex_count());
        for (int v = 0; v < mesh.vertex_count(); ++v) {
            exact[v] = mesh.vertices[v].x();
        }
        const NodeField ones = NodeField::Ones(mesh.vertex_count());
        const double area = l2_norm(mesh, ones) * l2_norm(mesh, ones);
        // zero-mean the exact field with the same quadrature as the solver
        const double mean = (l2_norm(mesh, exact + ones) * l2_norm(mesh, exact + ones) -
                             l2_norm(mesh, exact) * l2_norm(mesh, exact) - area) /
                            (2.0 * area);
        exact.array() -= mean;
        h.push_back(1.0 / std::sqrt(static_cast<double>(mesh.vertex_count())));
        err.push_back(l2_norm(mesh, u - exact));
    }
    const double rate_fine = std::log(err[1] / err[2]) / std::log(h[1] / h[2]);
    const double rate_all = std::log(err[0] / err[2]) / std::log(h[0] / h[2]);
    EXPECT_GE(rate_all, 1.8) << err[0] << ' ' << err[1] << ' ' << err[2];
    EXPECT_GE(rate_fine, 1.8) << err[0] << ' ' << err[1] << ' ' << err[2];
}

TEST(Noise, LevelsSetSigma)
{
    MeasurementSet clean;
    clean.y = Eigen::VectorXd::LinSpaced(50, -2.0, 4.0);
    EXPECT_DOUBLE_EQ(add_noise(clean, NoiseKind::gaussian, 2e-3, 1).sigma_y, 8e-3);
    EXPECT_DOUBLE_EQ(add_noise(clean, NoiseKind::laplace, 1e-2, 1).sigma_y, 4e-2);
    EXPECT_EQ(add_noise(clean, NoiseKind::laplace, 1e-2, 1).y, add_noise(clean, NoiseKind::laplace, 1e-2, 1).y);
    EXPECT_NE(add_noise(clean, NoiseKind::laplace, 1e-2, 1).y, add_noise(clean, NoiseKind::laplace, 1e-2, 2).y);
    EXPECT_THROW(add_noise(clean, NoiseKind::gaussian, 0.0, 1), Error);
}

TEST(Noise, EmpiricalStdMatchesSigma)
{
    MeasurementSet clean;
    clean.y = Eigen::VectorXd::Zero(100000);
    clean.y[0] = 1.0;
    for (const auto kind : {NoiseKind::gaussian, NoiseKind::laplace}) {
        const MeasurementSet noisy = add_noise(clean, kind, 1e-2, 17);
        const Eigen::VectorXd e = noisy.y - clean.y;
        const double mean = e.mean();
        const double sd = std::sqrt((e.array() - mean).square().sum() / static_cast<double>(e.size() - 1));
        EXPECT_NEAR(sd / noisy.sigma_y, 1.0, 0.02);
    }
}

TEST(Noise, LaplaceHasHeavierTails)
{
    MeasurementSet clean;
    clean.y = Eigen::VectorXd::Zero(100000);
    clean.y[0] = 1.0;
    auto kurtosis = [&](NoiseKind kind) {
        const Eigen::ArrayXd e = (add_noise(clean, kind, 1e-2, 3).y - clean.y).array();
        const double m2 = e.square().mean();
        return e.pow(4).mean() / (m2 * m2);
    };
    EXPECT_NEAR(kurtosis(NoiseKind::gaussian), 3.0, 0.15);
    EXPECT_NEAR(kurtosis(NoiseKind::laplace), 6.0, 0.6);
}

TEST(MeasurementIO, RoundTrip)
{
    MeasurementSet m;
    m.y = Eigen::VectorXd::Random(13) * 1e-3;
    m.sigma_y = 1.25e-6;
    m.noise_kind = NoiseKind::laplace;
    std::stringstream ss;
    write_measurements(ss, m);
    const MeasurementSet r = read_measurements(ss);
    EXPECT_EQ(r.y, m.y);
    EXPECT_EQ(r.sigma_y, m.sigma_y);
    EXPECT_EQ(r.noise_kind, m.noise_kind);
}

TEST(MeasurementIO, RejectsTruncatedFile)
{
    std::istringstream in("MEAS 3 0 none\n1\n2\n");
    EXPECT_THROW(read_measurements(in), Error);
    std::istringstream bad("MEAS 3 0 pink\n1\n2\n3\n");
    EXPECT_THROW(read_measurements(bad), Error);
}
