#include "graphdps/mesh.hpp"

#include "graphdps/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

namespace graphdps {

double signed_area(const TriMesh& mesh, const Triangle& t)
{
    const Point2& a = mesh.vertices[t[0]];
    const Point2& b = mesh.vertices[t[1]];
    const Point2& c = mesh.vertices[t[2]];
    return 0.5 * ((b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x()));
}

void validate_mesh(const TriMesh& mesh)
{
    const int nv = mesh.vertex_count();
    std::map<std::pair<int, int>, int> edge_use;
    for (const auto& t : mesh.triangles) {
        for (const int v : t) {
            if (v < 0 || v >= nv) {
                throw Error("mesh", "triangle index out of range");
            }
        }
        if (!(signed_area(mesh, t) > 0.0)) {
            throw Error("mesh", "triangle with non-positive signed area");
        }
        for (int e = 0; e < 3; ++e) {
            ++edge_use[{t[e], t[(e + 1) % 3]}];
        }
    }
    // A boundary edge (a, b) is used once and its reverse never.
    std::set<std::pair<int, int>> boundary;
    for (const auto& [edge, count] : edge_use) {
        if (count != 1) {
            throw Error("mesh", "directed edge used by more than one triangle");
        }
        if (!edge_use.contains({edge.second, edge.first})) {
            boundary.insert(edge);
        }
    }
    const auto& loop = mesh.boundary_loop;
    if (loop.size() != boundary.size() || loop.size() < 3) {
        throw Error("mesh", "boundary loop does not cover the boundary edges");
    }
    for (std::size_t i = 0; i < loop.size(); ++i) {
        const int a = loop[i];
        const int b = loop[(i + 1) % loop.size()];
        if (!boundary.contains({a, b})) {
            throw Error("mesh", "boundary loop is not a closed cycle of boundary edges");
        }
    }
}

std::vector<std::vector<int>> GraphLevel::neighbors() const
{
    std::vector<std::vector<int>> nbr(static_cast<std::size_t>(node_count));
    for (const auto& [i, j] : edges) {
        nbr[i].push_back(j);
    }
    for (auto& list : nbr) {
        std::sort(list.begin(), list.end());
    }
    return nbr;
}

namespace {

struct DiskLayout {
    double spacing;
    int boundary_count;
};

DiskLayout disk_layout(int target, int boundary_override)
{
    // Vertex count of an equilateral tiling of the disk with spacing h:
    // area / (sqrt(3)/2 h^2) interior plus 2 pi / h on the rim.
    double h = 0.5;
    for (int it = 0; it < 100; ++it) {
        const double count = std::numbers::pi / (0.5 * std::sqrt(3.0) * h * h) + std::numbers::pi / h;
        h *= std::sqrt(count / target);
    }
    int nb = boundary_override > 0 ? boundary_override : static_cast<int>(std::lround(2.0 * std::numbers::pi / h));
    nb = std::max(nb, 8);
    return {2.0 * std::numbers::pi / nb, nb};
}

class PointGrid {
public:
    PointGrid(double cell) : cell_(cell), dim_(static_cast<int>(std::ceil(2.2 / cell)) + 1), cells_(dim_ * dim_) {}

    void insert(const Point2& p, int id) { cells_[index(p)].push_back(id); }

    bool far_from_all(const Point2& p, double min_dist, const std::vector<Point2>& pts) const
    {
        const auto [cx, cy] = coords(p);
        const int reach = static_cast<int>(std::ceil(min_dist / cell_));
        for (int dx = -reach; dx <= reach; ++dx) {
            for (int dy = -reach; dy <= reach; ++dy) {
                const int x = cx + dx;
                const int y = cy + dy;
                if (x < 0 || y < 0 || x >= dim_ || y >= dim_) {
                    continue;
                }
                for (const int id : cells_[y * dim_ + x]) {
                    if ((pts[id] - p).squaredNorm() < min_dist * min_dist) {
                        return false;
                    }
                }
            }
        }
        return true;
    }

private:
    std::pair<int, int> coords(const Point2& p) const
    {
        const int x = std::clamp(static_cast<int>((p.x() + 1.1) / cell_), 0, dim_ - 1);
        const int y = std::clamp(static_cast<int>((p.y() + 1.1) / cell_), 0, dim_ - 1);
        return {x, y};
    }
    int index(const Point2& p) const
    {
        const auto [x, y] = coords(p);
        return y * dim_ + x;
    }

    double cell_;
    int dim_;
    std::vector<std::vector<int>> cells_;
};

TriMesh try_disk_mesh(const DiskMeshOptions& opt, std::uint64_t seed)
{
    const DiskLayout layout = disk_layout(opt.target_vertex_count, opt.boundary_count);
    const int nb = layout.boundary_count;
    // Interior spacing from the target count, independent of a boundary override.
    const double h = disk_layout(opt.target_vertex_count, 0).spacing;
    const int n_interior = std::max(opt.target_vertex_count - nb, 1);
    const double r_max = 1.0 - 0.55 * std::max(h, layout.spacing);

    std::vector<Point2> pts;
    pts.reserve(static_cast<std::size_t>(nb + n_interior));
    for (int i = 0; i < nb; ++i) {
        const double theta = (i + 0.5) * 2.0 * std::numbers::pi / nb;
        pts.emplace_back(std::cos(theta), std::sin(theta));
    }

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    double min_dist = 0.8 * h;
    PointGrid grid(min_dist);
    for (int i = 0; i < nb; ++i) {
        grid.insert(pts[i], i);
    }
    int failures = 0;
    while (static_cast<int>(pts.size()) < nb + n_interior) {
        const Point2 cand{unit(rng), unit(rng)};
        if (cand.squaredNorm() > r_max * r_max) {
            continue;
        }
        if (grid.far_from_all(cand, min_dist, pts)) {
            grid.insert(cand, static_cast<int>(pts.size()));
            pts.push_back(cand);
            failures = 0;
        } else if (++failures > 2000) {
            min_dist *= 0.95;
            failures = 0;
        }
    }

    std::vector<Triangle> tris = delaunay_triangulate(pts);
    for (int pass = 0; pass < opt.lloyd_passes; ++pass) {
        std::vector<Point2> acc(pts.size(), Point2::Zero());
        std::vector<double> weight(pts.size(), 0.0);
        for (const auto& t : tris) {
            const Point2 c = (pts[t[0]] + pts[t[1]] + pts[t[2]]) / 3.0;
            const double area = 0.5 * std::abs((pts[t[1]] - pts[t[0]]).x() * (pts[t[2]] - pts[t[0]]).y() -
                                               (pts[t[1]] - pts[t[0]]).y() * (pts[t[2]] - pts[t[0]]).x());
            for (const int v : t) {
                acc[v] += area * c;
                weight[v] += area;
            }
        }
        for (std::size_t v = static_cast<std::size_t>(nb); v < pts.size(); ++v) {
            if (weight[v] <= 0.0) {
                continue;
            }
            Point2 p = acc[v] / weight[v];
            if (p.norm() > r_max) {
                p *= r_max / p.norm();
            }
            pts[v] = p;
        }
        tris = delaunay_triangulate(pts);
    }

    TriMesh mesh;
    mesh.vertices = std::move(pts);
    mesh.triangles = std::move(tris);
    mesh.boundary_loop.resize(static_cast<std::size_t>(nb));
    for (int i = 0; i < nb; ++i) {
        mesh.boundary_loop[i] = i;
    }
    return mesh;
}

}  // namespace

TriMesh build_disk_mesh(const DiskMeshOptions& options)
{
    if (options.target_vertex_count < 16) {
        throw Error("mesh", "build_disk_mesh: target_vertex_count must be >= 16");
    }
    for (int attempt = 0; attempt < options.max_retries; ++attempt) {
        TriMesh mesh = try_disk_mesh(options, derive_seed(options.seed, static_cast<std::uint64_t>(attempt)));
        const double h = disk_layout(options.target_vertex_count, options.boundary_count).spacing;
        bool degenerate = false;
        for (const auto& t : mesh.triangles) {
            if (signed_area(mesh, t) < 1e-6 * h * h) {
                degenerate = true;
                break;
            }
        }
        if (degenerate) {
            continue;
        }
        try {
            validate_mesh(mesh);
        } catch (const Error&) {
            continue;
        }
        return mesh;
    }
    throw Error("mesh", "build_disk_mesh: degenerate triangulation after retries");
}

int electrode_boundary_count(int target_vertex_count, int electrode_count, double coverage)
{
    if (electrode_count < 1 || !(coverage > 0.0 && coverage < 1.0)) {
        throw Error("mesh", "electrode_boundary_count: invalid electrode layout");
    }
    const int natural = disk_layout(target_vertex_count, 0).boundary_count;
    for (int m = 1;; ++m) {
        // Nodes sit at half-integer offsets (in node spacings) from each electrode center.
        const double half_width = 0.5 * coverage * m;
        const int inside = 2 * static_cast<int>(std::ceil(half_width - 0.5 - 1e-9));
        if (inside >= 2 && m * electrode_count >= natural) {
            return m * electrode_count;
        }
    }
}

TriMesh build_disk_mesh(int target_vertex_count, std::uint64_t seed)
{
    DiskMeshOptions opt;
    opt.target_vertex_count = target_vertex_count;
    opt.seed = seed;
    return build_disk_mesh(opt);
}

GraphLevel mesh_edges(const TriMesh& mesh)
{
    std::set<std::pair<int, int>> undirected;
    for (const auto& t : mesh.triangles) {
        for (int e = 0; e < 3; ++e) {
            const int a = t[e];
            const int b = t[(e + 1) % 3];
            undirected.insert({std::min(a, b), std::max(a, b)});
        }
    }
    GraphLevel level;
    level.node_count = mesh.vertex_count();
    level.coords = mesh.vertices;
    std::vector<std::pair<int, int>> directed;
    directed.reserve(2 * undirected.size());
    for (const auto& [a, b] : undirected) {
        directed.emplace_back(a, b);
        directed.emplace_back(b, a);
    }
    std::sort(directed.begin(), directed.end());
    level.edges = std::move(directed);
    level.edge_lengths.reserve(level.edges.size());
    for (const auto& [a, b] : level.edges) {
        level.edge_lengths.push_back((mesh.vertices[a] - mesh.vertices[b]).norm());
    }
    return level;
}

GraphLevel knn_graph(std::span<const Point2> coords, int k)
{
    if (k < 1) {
        throw Error("mesh", "knn_graph: k must be positive");
    }
    const int n = static_cast<int>(coords.size());
    std::set<std::pair<int, int>> directed;
    std::vector<std::pair<double, int>> dist;
    for (int i = 0; i < n; ++i) {
        dist.clear();
        for (int j = 0; j < n; ++j) {
            if (j != i) {
                dist.emplace_back((coords[i] - coords[j]).squaredNorm(), j);
            }
        }
        const int kk = std::min<int>(k, static_cast<int>(dist.size()));
        std::partial_sort(dist.begin(), dist.begin() + kk, dist.end());
        for (int r = 0; r < kk; ++r) {
            directed.insert({i, dist[r].second});
            directed.insert({dist[r].second, i});
        }
    }
    GraphLevel level;
    level.node_count = n;
    level.coords.assign(coords.begin(), coords.end());
    level.edges.assign(directed.begin(), directed.end());
    for (const auto& [a, b] : level.edges) {
        level.edge_lengths.push_back((coords[a] - coords[b]).norm());
    }
    return level;
}

CoarsenResult coarsen(const GraphLevel& level, int knn_k)
{
    const int n = level.node_count;
    if (n < 2) {
        throw Error("mesh", "coarsen: level needs at least 2 nodes");
    }
    const auto nbr = level.neighbors();
    std::vector<int> parent(static_cast<std::size_t>(n), -1);
    std::vector<int> kept;
    for (int i = 0; i < n; ++i) {
        if (parent[i] >= 0) {
            continue;  // deleted by an earlier kept node
        }
        parent[i] = i;
        kept.push_back(i);
        for (const int j : nbr[i]) {
            if (j > i && parent[j] < 0) {
                parent[j] = i;
            }
        }
    }
    if (kept.size() < 2) {
        throw Error("mesh", "coarsen: coarse level would have fewer than 2 nodes");
    }
    std::vector<int> coarse_index(static_cast<std::size_t>(n), -1);
    for (std::size_t c = 0; c < kept.size(); ++c) {
        coarse_index[kept[c]] = static_cast<int>(c);
    }
    CoarsenResult out;
    out.kept = kept;
    out.parent_of.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        out.parent_of[i] = coarse_index[parent[i]];
    }
    std::vector<Point2> coords;
    coords.reserve(kept.size());
    for (const int i : kept) {
        coords.push_back(level.coords[i]);
    }
    out.coarse = knn_graph(coords, knn_k);
    return out;
}

GraphHierarchy build_hierarchy(const TriMesh& mesh, int depth, int knn_k)
{
    if (depth < 1) {
        throw Error("mesh", "build_hierarchy: depth must be >= 1");
    }
    GraphHierarchy h;
    h.levels.push_back(mesh_edges(mesh));
    for (int l = 1; l < depth; ++l) {
        try {
            CoarsenResult r = coarsen(h.levels.back(), knn_k);
            h.parent_of.push_back(std::move(r.parent_of));
            h.levels.push_back(std::move(r.coarse));
        } catch (const Error& e) {
            throw Error("mesh", "build_hierarchy: level " + std::to_string(l + 1) + " unreachable: " + e.what());
        }
    }
    return h;
}

GraphHierarchy permute_hierarchy(const GraphHierarchy& hierarchy, std::span<const int> perm)
{
    GraphHierarchy out = hierarchy;
    GraphLevel& fine = out.levels.front();
    const GraphLevel& src = hierarchy.levels.front();
    if (static_cast<int>(perm.size()) != src.node_count) {
        throw Error("mesh", "permute_hierarchy: permutation size mismatch");
    }
    for (int i = 0; i < src.node_count; ++i) {
        fine.coords[perm[i]] = src.coords[i];
    }
    for (std::size_t e = 0; e < src.edges.size(); ++e) {
        fine.edges[e] = {perm[src.edges[e].first], perm[src.edges[e].second]};
    }
    if (!out.parent_of.empty()) {
        for (int i = 0; i < src.node_count; ++i) {
            out.parent_of[0][perm[i]] = hierarchy.parent_of[0][i];
        }
    }
    return out;
}

TriMesh permute_mesh(const TriMesh& mesh, std::span<const int> perm)
{
    TriMesh out = mesh;
    for (int i = 0; i < mesh.vertex_count(); ++i) {
        out.vertices[perm[i]] = mesh.vertices[i];
    }
    for (auto& t : out.triangles) {
        for (int& v : t) {
            v = perm[v];
        }
    }
    for (int& v : out.boundary_loop) {
        v = perm[v];
    }
    return out;
}

std::vector<int> compose_parents(const GraphHierarchy& hierarchy)
{
    std::vector<int> map(static_cast<std::size_t>(hierarchy.levels.front().node_count));
    for (std::size_t i = 0; i < map.size(); ++i) {
        map[i] = static_cast<int>(i);
    }
    for (const auto& parents : hierarchy.parent_of) {
        for (int& v : map) {
            v = parents[v];
        }
    }
    return map;
}

void write_mesh(std::ostream& out, const TriMesh& mesh)
{
    out << "MESH " << mesh.vertex_count() << ' ' << mesh.triangle_count() << '\n';
    out << std::setprecision(17);
    for (const auto& v : mesh.vertices) {
        out << v.x() << ' ' << v.y() << '\n';
    }
    for (const auto& t : mesh.triangles) {
        out << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
    }
    out << "BOUNDARY " << mesh.boundary_loop.size() << '\n';
    for (const int b : mesh.boundary_loop) {
        out << b << '\n';
    }
}

namespace {

std::string next_token(std::istream& in)
{
    std::string tok;
    while (in >> tok) {
        if (tok.starts_with('#')) {
            std::string rest;
            std::getline(in, rest);
            continue;
        }
        return tok;
    }
    throw Error("io", "unexpected end of input");
}

template <class T>
T parse_number(std::istream& in)
{
    const std::string tok = next_token(in);
    std::istringstream ss(tok);
    T value{};
    ss >> value;
    if (ss.fail() || !ss.eof()) {
        throw Error("io", "malformed number '" + tok + "'");
    }
    return value;
}

}  // namespace

TriMesh read_mesh(std::istream& in)
{
    if (next_token(in) != "MESH") {
        throw Error("io", "mesh file must start with MESH");
    }
    const int nv = parse_number<int>(in);
    const int nt = parse_number<int>(in);
    if (nv < 0 || nt < 0) {
        throw Error("io", "negative mesh counts");
    }
    TriMesh mesh;
    mesh.vertices.resize(static_cast<std::size_t>(nv));
    for (auto& v : mesh.vertices) {
        v.x() = parse_number<double>(in);
        v.y() = parse_number<double>(in);
    }
    mesh.triangles.resize(static_cast<std::size_t>(nt));
    for (auto& t : mesh.triangles) {
        for (int& i : t) {
            i = parse_number<int>(in);
        }
    }
    if (next_token(in) != "BOUNDARY") {
        throw Error("io", "missing BOUNDARY section");
    }
    const int nb = parse_number<int>(in);
    mesh.boundary_loop.resize(static_cast<std::size_t>(std::max(nb, 0)));
    for (int& b : mesh.boundary_loop) {
        b = parse_number<int>(in);
    }
    validate_mesh(mesh);
    return mesh;
}

std::optional<PointLocation> locate_point(const TriMesh& mesh, const Point2& p)
{
    for (int e = 0; e < mesh.triangle_count(); ++e) {
        const auto& t = mesh.triangles[e];
        const Point2& a = mesh.vertices[t[0]];
        const Point2& b = mesh.vertices[t[1]];
        const Point2& c = mesh.vertices[t[2]];
        const double area2 = (b - a).x() * (c - a).y() - (b - a).y() * (c - a).x();
        const double l0 = ((b - p).x() * (c - p).y() - (b - p).y() * (c - p).x()) / area2;
        const double l1 = ((c - p).x() * (a - p).y() - (c - p).y() * (a - p).x()) / area2;
        const double l2 = 1.0 - l0 - l1;
        if (l0 >= -1e-12 && l1 >= -1e-12 && l2 >= -1e-12) {
            return PointLocation{e, Eigen::Vector3d(l0, l1, l2)};
        }
    }
    return std::nullopt;
}

double interpolate(const TriMesh& mesh, const NodeField& field, const Point2& p)
{
    const auto loc = locate_point(mesh, p);
    if (!loc) {
        throw Error("mesh", "interpolate: point outside the mesh");
    }
    const auto& t = mesh.triangles[loc->triangle];
    return loc->barycentric[0] * field[t[0]] + loc->barycentric[1] * field[t[1]] + loc->barycentric[2] * field[t[2]];
}

void save_mesh(const std::filesystem::path& path, const TriMesh& mesh, std::string_view header_comment)
{
    std::ofstream out = open_output(path);
    if (!header_comment.empty()) {
        out << "# " << header_comment << '\n';
    }
    write_mesh(out, mesh);
    if (!out) {
        throw Error("io", "write failed for " + path.string());
    }
}

TriMesh load_mesh(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw Error("io", "cannot read " + path.string());
    }
    return read_mesh(in);
}

}  // namespace graphdps
