#pragma once

#include "graphdps/common.hpp"
#include "graphdps/mesh.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string_view>

namespace graphdps {

/// Conductivity floor applied to every solver input (S/m).
inline constexpr double kConductivityFloor = 1e-3;

/// Equally spaced electrodes. Electrode l covers the boundary arc
/// [center_angles[l] - half_width, center_angles[l] + half_width].
struct ElectrodeConfig {
    int count = 0;
    double coverage = 0.5;
    double half_width = 0.0;  ///< radians
    std::vector<double> center_angles;
    std::vector<double> contact_impedances;  ///< Ohm m
    std::vector<std::vector<int>> electrode_nodes;  ///< boundary vertices inside each arc, loop order
};

ElectrodeConfig place_electrodes(const TriMesh& mesh, int count, double coverage, double contact_impedance = 1e-2);

enum class ProtocolKind { opposite_adjacent, adjacent_adjacent };

ProtocolKind parse_protocol(std::string_view name);
std::string_view to_string(ProtocolKind kind);

/// y_k = U[electrode_a] - U[electrode_b] under current pattern `pattern`.
struct MeasurementPair {
    int pattern;
    int electrode_a;
    int electrode_b;

    bool operator==(const MeasurementPair&) const = default;
};

struct CurrentProtocol {
    std::vector<Eigen::VectorXd> patterns;  ///< per-electrode currents (A)
    std::vector<MeasurementPair> measurement_pairs;

    int electrode_count() const { return patterns.empty() ? 0 : static_cast<int>(patterns.front().size()); }
    int measurement_count() const { return static_cast<int>(measurement_pairs.size()); }
    /// Patterns as columns of an electrode_count x pattern_count matrix.
    Eigen::MatrixXd pattern_matrix() const;
};

/// Adjacent measurement pairs skip any pair touching a driven electrode.
CurrentProtocol make_protocol(ProtocolKind kind, int electrode_count, double amplitude = 1e-3);

enum class NoiseKind { none, gaussian, laplace };

NoiseKind parse_noise_kind(std::string_view name);
std::string_view to_string(NoiseKind kind);

struct MeasurementSet {
    Eigen::VectorXd y;
    double sigma_y = 0.0;
    NoiseKind noise_kind = NoiseKind::none;
};

/// sigma_y = level * max|y|; gaussian N(0, sigma_y^2), laplace with scale sigma_y / sqrt(2).
MeasurementSet add_noise(const MeasurementSet& clean, NoiseKind kind, double level, std::uint64_t seed);

struct CemSolution {
    Eigen::MatrixXd potentials;          ///< vertex_count x pattern_count
    Eigen::MatrixXd electrode_voltages;  ///< electrode_count x pattern_count, columns sum to zero
};

class CemFactorization;

/// Complete electrode model on P1 triangles. Geometry is precomputed once; each conductivity
/// gets its own factorization (see factorize), which may be shared read-only across patterns.
class CemSolver {
public:
    CemSolver(TriMesh mesh, ElectrodeConfig electrodes);

    const TriMesh& mesh() const { return mesh_; }
    const ElectrodeConfig& electrodes() const { return electrodes_; }
    int vertex_count() const { return mesh_.vertex_count(); }
    int electrode_count() const { return electrodes_.count; }
    int unknown_count() const { return vertex_count() + electrode_count(); }

    CemFactorization factorize(const NodeField& sigma) const;

    /// Assembled CEM matrix without grounding.
    Eigen::SparseMatrix<double> assemble(const NodeField& sigma) const;

    /// Current leaving through each electrode: (1/z_l) * integral over e_l of (U_l - u).
    Eigen::VectorXd electrode_currents(const Eigen::VectorXd& potential, const Eigen::VectorXd& voltages) const;

    double electrode_length(int electrode) const { return electrode_length_[electrode]; }

    /// Per-element sum over patterns of grad(a_p) . grad(b_p), scattered to nodes with weight area/3.
    NodeField nodal_gradient_products(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) const;

private:
    struct BoundaryEntry {
        int row;
        int col;
        double value;
    };

    TriMesh mesh_;
    ElectrodeConfig electrodes_;
    std::vector<double> area_;
    std::vector<Eigen::Matrix<double, 3, 2>> grad_;  ///< basis gradients per element
    std::vector<std::vector<BoundaryEntry>> electrode_mass_;  ///< integral phi_i phi_j per electrode
    std::vector<Eigen::VectorXd> electrode_load_;            ///< integral phi_i per electrode
    std::vector<double> electrode_length_;
};

class CemFactorization {
public:
    CemSolution solve(const Eigen::MatrixXd& patterns) const;
    /// Solves the grounded system for an arbitrary (vertex + electrode) right-hand side block.
    Eigen::MatrixXd solve_raw(const Eigen::MatrixXd& rhs) const;
    const Eigen::SparseMatrix<double>& matrix() const { return *grounded_; }

private:
    friend class CemSolver;
    int vertex_count_ = 0;
    int electrode_count_ = 0;
    std::shared_ptr<Eigen::SparseMatrix<double>> grounded_;
    std::shared_ptr<Eigen::SimplicialLLT<Eigen::SparseMatrix<double>>> llt_;
};

CemSolution solve_cem(const CemSolver& solver, const NodeField& sigma, const Eigen::VectorXd& pattern);

/// Forward solution for one conductivity, reusable for gradient evaluation.
class ForwardEvaluation {
public:
    ForwardEvaluation(const CemSolver& solver, const CurrentProtocol& protocol, const NodeField& sigma);

    const MeasurementSet& measurements() const { return measurements_; }
    const CemSolution& solution() const { return solution_; }

    /// sum_k w_k dy_k / dsigma, one adjoint solve per pattern.
    NodeField vjp(const Eigen::VectorXd& weights) const;

private:
    const CemSolver* solver_;
    const CurrentProtocol* protocol_;
    CemFactorization factorization_;
    CemSolution solution_;
    MeasurementSet measurements_;
    Eigen::VectorXd sigma_mask_;  ///< 0 where the input sat below the floor
};

MeasurementSet forward(const CemSolver& solver, const CurrentProtocol& protocol, const NodeField& sigma);

NodeField adjoint_jacobian_vjp(const CemSolver& solver, const CurrentProtocol& protocol, const NodeField& sigma,
                               const Eigen::VectorXd& weights);

/// Continuum check: div(sigma grad u) = 0 with Neumann flux g on the boundary polygon,
/// normalized to zero integral mean.
NodeField solve_neumann(const TriMesh& mesh, const NodeField& sigma, const std::function<double(const Point2&)>& flux);

/// Continuous L2 norm of a P1 field (consistent mass matrix).
double l2_norm(const TriMesh& mesh, const NodeField& field);

// "MEAS m sigma_y noise_kind" followed by m values.
void write_measurements(std::ostream& out, const MeasurementSet& meas);
MeasurementSet read_measurements(std::istream& in);
void save_measurements(const std::filesystem::path& path, const MeasurementSet& meas, std::string_view header_comment = {});
MeasurementSet load_measurements(const std::filesystem::path& path);

}  // namespace graphdps
