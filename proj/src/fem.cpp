#include "graphdps/fem.hpp"

#include "graphdps/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

namespace graphdps {

namespace {

double wrap_angle(double a)
{
    a = std::fmod(a + std::numbers::pi, 2.0 * std::numbers::pi);
    if (a < 0.0) {
        a += 2.0 * std::numbers::pi;
    }
    return a - std::numbers::pi;
}

double vertex_angle(const Point2& p) { return std::atan2(p.y(), p.x()); }

}  // namespace

ElectrodeConfig place_electrodes(const TriMesh& mesh, int count, double coverage, double contact_impedance)
{
    if (count < 1) {
        throw Error("fem", "place_electrodes: electrode count must be positive");
    }
    if (!(coverage > 0.0 && coverage < 1.0)) {
        throw Error("fem", "place_electrodes: coverage must lie in (0, 1)");
    }
    if (!(contact_impedance > 0.0)) {
        throw Error("fem", "place_electrodes: contact impedance must be positive");
    }
    const auto& loop = mesh.boundary_loop;
    if (static_cast<int>(loop.size()) < 2 * count) {
        throw Error("fem", "place_electrodes: boundary too coarse for " + std::to_string(count) + " electrodes");
    }
    ElectrodeConfig cfg;
    cfg.count = count;
    cfg.coverage = coverage;
    cfg.half_width = coverage * std::numbers::pi / count;
    cfg.contact_impedances.assign(static_cast<std::size_t>(count), contact_impedance);
    cfg.electrode_nodes.resize(static_cast<std::size_t>(count));
    for (int l = 0; l < count; ++l) {
        const double center = 2.0 * std::numbers::pi * l / count;
        cfg.center_angles.push_back(center);
        // Start the scan at a node outside the arc so each electrode's nodes come out contiguous.
        std::size_t start = 0;
        for (std::size_t i = 0; i < loop.size(); ++i) {
            if (std::abs(wrap_angle(vertex_angle(mesh.vertices[loop[i]]) - center)) > cfg.half_width) {
                start = i;
                break;
            }
        }
        for (std::size_t k = 0; k < loop.size(); ++k) {
            const int v = loop[(start + k) % loop.size()];
            if (std::abs(wrap_angle(vertex_angle(mesh.vertices[v]) - center)) < cfg.half_width - 1e-12) {
                cfg.electrode_nodes[l].push_back(v);
            }
        }
        if (cfg.electrode_nodes[l].size() < 2) {
            throw Error("fem", "place_electrodes: boundary too coarse, electrode " + std::to_string(l) +
                                   " owns fewer than 2 nodes");
        }
    }
    return cfg;
}

ProtocolKind parse_protocol(std::string_view name)
{
    if (name == "opposite_adjacent") {
        return ProtocolKind::opposite_adjacent;
    }
    if (name == "adjacent_adjacent") {
        return ProtocolKind::adjacent_adjacent;
    }
    throw Error("config", "unknown protocol '" + std::string(name) + "'");
}

std::string_view to_string(ProtocolKind kind)
{
    return kind == ProtocolKind::opposite_adjacent ? "opposite_adjacent" : "adjacent_adjacent";
}

Eigen::MatrixXd CurrentProtocol::pattern_matrix() const
{
    Eigen::MatrixXd m(electrode_count(), static_cast<Eigen::Index>(patterns.size()));
    for (std::size_t p = 0; p < patterns.size(); ++p) {
        m.col(static_cast<Eigen::Index>(p)) = patterns[p];
    }
    return m;
}

CurrentProtocol make_protocol(ProtocolKind kind, int electrode_count, double amplitude)
{
    const int p = electrode_count;
    if (p < 3) {
        throw Error("fem", "make_protocol: need at least 3 electrodes");
    }
    if (kind == ProtocolKind::opposite_adjacent && p % 2 != 0) {
        throw Error("fem", "make_protocol: opposite injection needs an even electrode count");
    }
    CurrentProtocol proto;
    for (int k = 0; k < p; ++k) {
        const int source = k;
        const int sink = kind == ProtocolKind::opposite_adjacent ? (k + p / 2) % p : (k + 1) % p;
        Eigen::VectorXd pattern = Eigen::VectorXd::Zero(p);
        pattern[source] = amplitude;
        pattern[sink] = -amplitude;
        proto.patterns.push_back(pattern);
        for (int e = 0; e < p; ++e) {
            const int a = e;
            const int b = (e + 1) % p;
            if (a == source || a == sink || b == source || b == sink) {
                continue;
            }
            proto.measurement_pairs.push_back({k, a, b});
        }
    }
    return proto;
}

NoiseKind parse_noise_kind(std::string_view name)
{
    if (name == "none") {
        return NoiseKind::none;
    }
    if (name == "gaussian") {
        return NoiseKind::gaussian;
    }
    if (name == "laplace") {
        return NoiseKind::laplace;
    }
    throw Error("config", "unknown noise kind '" + std::string(name) + "'");
}

std::string_view to_string(NoiseKind kind)
{
    switch (kind) {
    case NoiseKind::none:
        return "none";
    case NoiseKind::gaussian:
        return "gaussian";
    case NoiseKind::laplace:
        return "laplace";
    }
    return "none";
}

MeasurementSet add_noise(const MeasurementSet& clean, NoiseKind kind, double level, std::uint64_t seed)
{
    if (!(level > 0.0)) {
        throw Error("fem", "add_noise: level must be positive");
    }
    MeasurementSet out = clean;
    out.noise_kind = kind;
    out.sigma_y = level * clean.y.cwiseAbs().maxCoeff();
    std::mt19937_64 rng(seed);
    if (kind == NoiseKind::gaussian) {
        std::normal_distribution<double> normal(0.0, out.sigma_y);
        for (Eigen::Index k = 0; k < out.y.size(); ++k) {
            out.y[k] += normal(rng);
        }
    } else if (kind == NoiseKind::laplace) {
        // Difference of two unit exponentials is Laplace(0, 1); scale b = sigma_y / sqrt(2) matches the variance.
        const double b = out.sigma_y / std::numbers::sqrt2;
        std::exponential_distribution<double> expo(1.0);
        for (Eigen::Index k = 0; k < out.y.size(); ++k) {
            out.y[k] += b * (expo(rng) - expo(rng));
        }
    } else {
        out.sigma_y = 0.0;
    }
    return out;
}

CemSolver::CemSolver(TriMesh mesh, ElectrodeConfig electrodes) : mesh_(std::move(mesh)), electrodes_(std::move(electrodes))
{
    const int nt = mesh_.triangle_count();
    area_.resize(static_cast<std::size_t>(nt));
    grad_.resize(static_cast<std::size_t>(nt));
    for (int e = 0; e < nt; ++e) {
        const auto& t = mesh_.triangles[e];
        const double area = signed_area(mesh_, t);
        if (!(area > 0.0)) {
            throw Error("fem", "CemSolver: degenerate or inverted element " + std::to_string(e));
        }
        area_[e] = area;
        for (int k = 0; k < 3; ++k) {
            const Point2& b = mesh_.vertices[t[(k + 1) % 3]];
            const Point2& c = mesh_.vertices[t[(k + 2) % 3]];
            grad_[e](k, 0) = (b.y() - c.y()) / (2.0 * area);
            grad_[e](k, 1) = (c.x() - b.x()) / (2.0 * area);
        }
    }

    const int nv = mesh_.vertex_count();
    const int L = electrodes_.count;
    if (static_cast<int>(electrodes_.contact_impedances.size()) != L ||
        static_cast<int>(electrodes_.center_angles.size()) != L) {
        throw Error("fem", "CemSolver: inconsistent electrode configuration");
    }
    electrode_mass_.resize(static_cast<std::size_t>(L));
    electrode_load_.assign(static_cast<std::size_t>(L), Eigen::VectorXd::Zero(nv));
    electrode_length_.assign(static_cast<std::size_t>(L), 0.0);

    // Integrate each electrode arc over the boundary polygon. An edge's angular range maps
    // linearly onto its chord parameter tau in [0, 1].
    const auto& loop = mesh_.boundary_loop;
    for (std::size_t s = 0; s < loop.size(); ++s) {
        const int a = loop[s];
        const int b = loop[(s + 1) % loop.size()];
        const double ta = vertex_angle(mesh_.vertices[a]);
        double tb = vertex_angle(mesh_.vertices[b]);
        while (tb <= ta) {
            tb += 2.0 * std::numbers::pi;
        }
        const double h = (mesh_.vertices[b] - mesh_.vertices[a]).norm();
        for (int l = 0; l < L; ++l) {
            double lo = electrodes_.center_angles[l] - electrodes_.half_width;
            // shift the arc into the window [ta - 2pi, ta + 2pi) and test both copies
            while (lo > ta) {
                lo -= 2.0 * std::numbers::pi;
            }
            for (int copy = 0; copy < 2; ++copy) {
                const double arc_lo = lo + copy * 2.0 * std::numbers::pi;
                const double arc_hi = arc_lo + 2.0 * electrodes_.half_width;
                const double lo_ang = std::max(ta, arc_lo);
                const double hi_ang = std::min(tb, arc_hi);
                if (hi_ang <= lo_ang) {
                    continue;
                }
                const double t0 = (lo_ang - ta) / (tb - ta);
                const double t1 = (hi_ang - ta) / (tb - ta);
                // Integrals of (1 - tau), tau, (1 - tau)^2, tau (1 - tau), tau^2 over [t0, t1].
                auto prim = [](double t) {
                    return std::array<double, 5>{t - 0.5 * t * t, 0.5 * t * t, t - t * t + t * t * t / 3.0,
                                                 0.5 * t * t - t * t * t / 3.0, t * t * t / 3.0};
                };
                const auto p1 = prim(t1);
                const auto p0 = prim(t0);
                std::array<double, 5> I{};
                for (int q = 0; q < 5; ++q) {
                    I[q] = h * (p1[q] - p0[q]);
                }
                electrode_load_[l][a] += I[0];
                electrode_load_[l][b] += I[1];
                electrode_mass_[l].push_back({a, a, I[2]});
                electrode_mass_[l].push_back({a, b, I[3]});
                electrode_mass_[l].push_back({b, a, I[3]});
                electrode_mass_[l].push_back({b, b, I[4]});
                electrode_length_[l] += h * (t1 - t0);
            }
        }
    }
    for (int l = 0; l < L; ++l) {
        if (!(electrode_length_[l] > 0.0)) {
            throw Error("fem", "CemSolver: electrode " + std::to_string(l) + " has no boundary support");
        }
    }
}

Eigen::SparseMatrix<double> CemSolver::assemble(const NodeField& sigma) const
{
    const int nv = vertex_count();
    const int L = electrode_count();
    if (sigma.size() != nv) {
        throw Error("fem", "conductivity length does not match the mesh");
    }
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(9 * mesh_.triangle_count() + 8 * mesh_.boundary_loop.size() + 2 * L * nv / 8));
    for (int e = 0; e < mesh_.triangle_count(); ++e) {
        const auto& t = mesh_.triangles[e];
        const double s = (sigma[t[0]] + sigma[t[1]] + sigma[t[2]]) / 3.0;
        const Eigen::Matrix3d ke = s * area_[e] * grad_[e] * grad_[e].transpose();
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                trip.emplace_back(t[i], t[j], ke(i, j));
            }
        }
    }
    for (int l = 0; l < L; ++l) {
        const double inv_z = 1.0 / electrodes_.contact_impedances[l];
        for (const auto& m : electrode_mass_[l]) {
            trip.emplace_back(m.row, m.col, inv_z * m.value);
        }
        const Eigen::VectorXd& load = electrode_load_[l];
        for (int i = 0; i < nv; ++i) {
            if (load[i] != 0.0) {
                trip.emplace_back(i, nv + l, -inv_z * load[i]);
                trip.emplace_back(nv + l, i, -inv_z * load[i]);
            }
        }
        trip.emplace_back(nv + l, nv + l, inv_z * electrode_length_[l]);
    }
    Eigen::SparseMatrix<double> A(nv + L, nv + L);
    A.setFromTriplets(trip.begin(), trip.end());
    return A;
}

CemFactorization CemSolver::factorize(const NodeField& sigma) const
{
    const int nv = vertex_count();
    const int L = electrode_count();
    const NodeField floored = sigma.cwiseMax(kConductivityFloor);
    Eigen::SparseMatrix<double> A = assemble(floored);

    // Grounding: adding c * e e^T (e = indicator of the electrode block) removes the constant null
    // space. For right-hand sides orthogonal to the constants, the solution satisfies sum U = 0.
    double c = 0.0;
    for (int l = 0; l < L; ++l) {
        c += electrode_length_[l] / electrodes_.contact_impedances[l];
    }
    c /= L;
    std::vector<Eigen::Triplet<double>> ground;
    for (int a = 0; a < L; ++a) {
        for (int b = 0; b < L; ++b) {
            ground.emplace_back(nv + a, nv + b, c);
        }
    }
    Eigen::SparseMatrix<double> G(nv + L, nv + L);
    G.setFromTriplets(ground.begin(), ground.end());

    CemFactorization f;
    f.vertex_count_ = nv;
    f.electrode_count_ = L;
    f.grounded_ = std::make_shared<Eigen::SparseMatrix<double>>(A + G);
    f.llt_ = std::make_shared<Eigen::SimplicialLLT<Eigen::SparseMatrix<double>>>(*f.grounded_);
    if (f.llt_->info() != Eigen::Success) {
        throw Error("fem", "CEM system is singular or not positive definite");
    }
    return f;
}

Eigen::MatrixXd CemFactorization::solve_raw(const Eigen::MatrixXd& rhs) const
{
    Eigen::MatrixXd x = llt_->solve(rhs);
    if (llt_->info() != Eigen::Success) {
        throw Error("fem", "CEM solve failed");
    }
    return x;
}

CemSolution CemFactorization::solve(const Eigen::MatrixXd& patterns) const
{
    if (patterns.rows() != electrode_count_) {
        throw Error("fem", "pattern length does not match the electrode count");
    }
    for (Eigen::Index p = 0; p < patterns.cols(); ++p) {
        const double total = patterns.col(p).sum();
        const double scale = std::max(patterns.col(p).cwiseAbs().maxCoeff(), 1e-300);
        if (std::abs(total) > 1e-12 * scale && std::abs(total) > 1e-300) {
            throw Error("fem", "current pattern does not conserve charge");
        }
    }
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(vertex_count_ + electrode_count_, patterns.cols());
    rhs.bottomRows(electrode_count_) = patterns;
    const Eigen::MatrixXd x = solve_raw(rhs);
    return {x.topRows(vertex_count_), x.bottomRows(electrode_count_)};
}

Eigen::VectorXd CemSolver::electrode_currents(const Eigen::VectorXd& potential, const Eigen::VectorXd& voltages) const
{
    Eigen::VectorXd out(electrode_count());
    for (int l = 0; l < electrode_count(); ++l) {
        out[l] = (voltages[l] * electrode_length_[l] - electrode_load_[l].dot(potential)) /
                 electrodes_.contact_impedances[l];
    }
    return out;
}

NodeField CemSolver::nodal_gradient_products(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) const
{
    NodeField out = NodeField::Zero(vertex_count());
    const Eigen::Index P = a.cols();
    Eigen::Matrix<double, 3, Eigen::Dynamic> la(3, P);
    Eigen::Matrix<double, 3, Eigen::Dynamic> lb(3, P);
    for (int e = 0; e < mesh_.triangle_count(); ++e) {
        const auto& t = mesh_.triangles[e];
        for (int k = 0; k < 3; ++k) {
            la.row(k) = a.row(t[k]);
            lb.row(k) = b.row(t[k]);
        }
        const Eigen::Matrix<double, 2, Eigen::Dynamic> ga = grad_[e].transpose() * la;
        const Eigen::Matrix<double, 2, Eigen::Dynamic> gb = grad_[e].transpose() * lb;
        const double s = area_[e] / 3.0 * ga.cwiseProduct(gb).sum();
        for (int k = 0; k < 3; ++k) {
            out[t[k]] += s;
        }
    }
    return out;
}

CemSolution solve_cem(const CemSolver& solver, const NodeField& sigma, const Eigen::VectorXd& pattern)
{
    return solver.factorize(sigma).solve(pattern);
}

ForwardEvaluation::ForwardEvaluation(const CemSolver& solver, const CurrentProtocol& protocol, const NodeField& sigma)
    : solver_(&solver), protocol_(&protocol), factorization_(solver.factorize(sigma))
{
    if (protocol.electrode_count() != solver.electrode_count() && !protocol.patterns.empty()) {
        throw Error("fem", "protocol and electrode configuration disagree on the electrode count");
    }
    if (!protocol.patterns.empty()) {
        solution_ = factorization_.solve(protocol.pattern_matrix());
    }
    measurements_.y.resize(protocol.measurement_count());
    for (int k = 0; k < protocol.measurement_count(); ++k) {
        const auto& m = protocol.measurement_pairs[k];
        measurements_.y[k] = solution_.electrode_voltages(m.electrode_a, m.pattern) -
                             solution_.electrode_voltages(m.electrode_b, m.pattern);
    }
    // Remember which entries were floored: the map is locally constant there.
    sigma_mask_ = (sigma.array() >= kConductivityFloor).cast<double>();
}

NodeField ForwardEvaluation::vjp(const Eigen::VectorXd& weights) const
{
    const int nv = solver_->vertex_count();
    const int L = solver_->electrode_count();
    if (weights.size() != protocol_->measurement_count()) {
        throw Error("fem", "vjp: weight vector length does not match the measurement count");
    }
    if (protocol_->patterns.empty()) {
        return NodeField::Zero(nv);
    }
    const auto P = static_cast<Eigen::Index>(protocol_->patterns.size());
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(nv + L, P);
    for (int k = 0; k < protocol_->measurement_count(); ++k) {
        const auto& m = protocol_->measurement_pairs[k];
        rhs(nv + m.electrode_a, m.pattern) += weights[k];
        rhs(nv + m.electrode_b, m.pattern) -= weights[k];
    }
    const Eigen::MatrixXd adjoint = factorization_.solve_raw(rhs);
    NodeField g = -solver_->nodal_gradient_products(solution_.potentials, adjoint.topRows(nv));
    return g.cwiseProduct(sigma_mask_);
}

MeasurementSet forward(const CemSolver& solver, const CurrentProtocol& protocol, const NodeField& sigma)
{
    return ForwardEvaluation(solver, protocol, sigma).measurements();
}

NodeField adjoint_jacobian_vjp(const CemSolver& solver, const CurrentProtocol& protocol, const NodeField& sigma,
                               const Eigen::VectorXd& weights)
{
    return ForwardEvaluation(solver, protocol, sigma).vjp(weights);
}

namespace {

Eigen::SparseMatrix<double> stiffness(const TriMesh& mesh, const NodeField& sigma)
{
    std::vector<Eigen::Triplet<double>> trip;
    for (const auto& t : mesh.triangles) {
        const double area = signed_area(mesh, t);
        Eigen::Matrix<double, 3, 2> g;
        for (int k = 0; k < 3; ++k) {
            const Point2& b = mesh.vertices[t[(k + 1) % 3]];
            const Point2& c = mesh.vertices[t[(k + 2) % 3]];
            g(k, 0) = (b.y() - c.y()) / (2.0 * area);
            g(k, 1) = (c.x() - b.x()) / (2.0 * area);
        }
        const double s = (sigma[t[0]] + sigma[t[1]] + sigma[t[2]]) / 3.0;
        const Eigen::Matrix3d ke = s * area * g * g.transpose();
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                trip.emplace_back(t[i], t[j], ke(i, j));
            }
        }
    }
    Eigen::SparseMatrix<double> K(mesh.vertex_count(), mesh.vertex_count());
    K.setFromTriplets(trip.begin(), trip.end());
    return K;
}

Eigen::SparseMatrix<double> mass_matrix(const TriMesh& mesh)
{
    std::vector<Eigen::Triplet<double>> trip;
    for (const auto& t : mesh.triangles) {
        const double area = signed_area(mesh, t);
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                trip.emplace_back(t[i], t[j], area / 12.0 * (i == j ? 2.0 : 1.0));
            }
        }
    }
    Eigen::SparseMatrix<double> M(mesh.vertex_count(), mesh.vertex_count());
    M.setFromTriplets(trip.begin(), trip.end());
    return M;
}

}  // namespace

NodeField solve_neumann(const TriMesh& mesh, const NodeField& sigma, const std::function<double(const Point2&)>& flux)
{
    const int nv = mesh.vertex_count();
    if (sigma.size() != nv) {
        throw Error("fem", "conductivity length does not match the mesh");
    }
    // Boundary load with the P1 interpolant of the flux; b holds integral phi_i ds.
    Eigen::VectorXd f = Eigen::VectorXd::Zero(nv);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(nv);
    const auto& loop = mesh.boundary_loop;
    for (std::size_t s = 0; s < loop.size(); ++s) {
        const int i = loop[s];
        const int j = loop[(s + 1) % loop.size()];
        const double h = (mesh.vertices[j] - mesh.vertices[i]).norm();
        const double gi = flux(mesh.vertices[i]);
        const double gj = flux(mesh.vertices[j]);
        f[i] += h * (gi / 3.0 + gj / 6.0);
        f[j] += h * (gi / 6.0 + gj / 3.0);
        b[i] += 0.5 * h;
        b[j] += 0.5 * h;
    }
    f -= (f.sum() / b.sum()) * b;  // enforce compatibility

    // Pin vertex 0 and solve the reduced SPD system.
    const Eigen::SparseMatrix<double> K = stiffness(mesh, sigma.cwiseMax(kConductivityFloor));
    const Eigen::SparseMatrix<double> Kr = K.bottomRightCorner(nv - 1, nv - 1);
    Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt(Kr);
    if (llt.info() != Eigen::Success) {
        throw Error("fem", "Neumann system factorization failed");
    }
    NodeField u = NodeField::Zero(nv);
    u.tail(nv - 1) = llt.solve(f.tail(nv - 1));

    const Eigen::SparseMatrix<double> M = mass_matrix(mesh);
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(nv);
    const double mean = ones.dot(M * u) / ones.dot(M * ones);
    u.array() -= mean;
    return u;
}

double l2_norm(const TriMesh& mesh, const NodeField& field)
{
    const Eigen::SparseMatrix<double> M = mass_matrix(mesh);
    return std::sqrt(field.dot(M * field));
}

void write_measurements(std::ostream& out, const MeasurementSet& meas)
{
    out << std::setprecision(17);
    out << "MEAS " << meas.y.size() << ' ' << meas.sigma_y << ' ' << to_string(meas.noise_kind) << '\n';
    for (Eigen::Index k = 0; k < meas.y.size(); ++k) {
        out << meas.y[k] << '\n';
    }
}

MeasurementSet read_measurements(std::istream& in)
{
    std::string line;
    std::string tag;
    while (std::getline(in, line)) {
        if (!line.empty() && line[0] != '#') {
            break;
        }
    }
    std::istringstream header(line);
    long m = -1;
    MeasurementSet meas;
    std::string kind;
    header >> tag >> m >> meas.sigma_y >> kind;
    if (tag != "MEAS" || header.fail() || m < 0) {
        throw Error("io", "malformed measurement header");
    }
    meas.noise_kind = parse_noise_kind(kind);
    meas.y.resize(m);
    for (long k = 0; k < m; ++k) {
        if (!(in >> meas.y[k])) {
            throw Error("io", "measurement file truncated");
        }
    }
    return meas;
}

void save_measurements(const std::filesystem::path& path, const MeasurementSet& meas, std::string_view header_comment)
{
    std::ofstream out = open_output(path);
    if (!header_comment.empty()) {
        out << "# " << header_comment << '\n';
    }
    write_measurements(out, meas);
}

MeasurementSet load_measurements(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw Error("io", "cannot read " + path.string());
    }
    return read_measurements(in);
}

}  // namespace graphdps
