#pragma once

#include "graphdps/common.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

namespace graphdps {

using Point2 = Eigen::Vector2d;
using Triangle = std::array<int, 3>;

/// Triangulated planar domain. Triangles are counter-clockwise.
struct TriMesh {
    std::vector<Point2> vertices;
    std::vector<Triangle> triangles;
    std::vector<int> boundary_loop;  ///< closed cycle, counter-clockwise

    int vertex_count() const { return static_cast<int>(vertices.size()); }
    int triangle_count() const { return static_cast<int>(triangles.size()); }

    bool operator==(const TriMesh&) const = default;
};

/// Signed area of triangle `t` (positive for counter-clockwise order).
double signed_area(const TriMesh& mesh, const Triangle& t);

/// Throws if indices are out of range, a triangle is not positively oriented,
/// or the boundary loop is not a closed cycle of boundary edges.
void validate_mesh(const TriMesh& mesh);

/// Directed edge graph at one resolution. Every undirected edge appears in both directions.
struct GraphLevel {
    int node_count = 0;
    std::vector<std::pair<int, int>> edges;
    std::vector<double> edge_lengths;  ///< per directed edge
    std::vector<Point2> coords;

    int edge_count() const { return static_cast<int>(edges.size()); }
    /// Neighbor lists (N(i) = {j : (i, j) in edges}), sorted ascending.
    std::vector<std::vector<int>> neighbors() const;
};

/// Multi-resolution view, fine (index 0) to coarse. parent_of[l] maps nodes of
/// level l to nodes of level l + 1, so parent_of.size() == levels.size() - 1.
struct GraphHierarchy {
    std::vector<GraphLevel> levels;
    std::vector<std::vector<int>> parent_of;

    int depth() const { return static_cast<int>(levels.size()); }
};

struct DiskMeshOptions {
    int target_vertex_count = 300;
    std::uint64_t seed = 0;
    int boundary_count = 0;  ///< 0 selects a count matching the interior spacing
    int lloyd_passes = 2;
    int max_retries = 8;
};

/// Approximately uniform Delaunay triangulation of the unit disk.
/// Boundary node i sits at angle (i + 1/2) * 2 pi / boundary_count.
TriMesh build_disk_mesh(const DiskMeshOptions& options);
TriMesh build_disk_mesh(int target_vertex_count, std::uint64_t seed);

/// Smallest multiple of electrode_count that is at least the natural boundary count for the target
/// and puts at least two boundary nodes strictly inside every electrode arc of the given coverage.
int electrode_boundary_count(int target_vertex_count, int electrode_count, double coverage = 0.5);

/// Delaunay triangulation of a planar point set (Bowyer-Watson). Triangles are counter-clockwise.
std::vector<Triangle> delaunay_triangulate(std::span<const Point2> points);

GraphLevel mesh_edges(const TriMesh& mesh);

/// Symmetrized k-nearest-neighbor graph on `coords` (ties broken by index).
GraphLevel knn_graph(std::span<const Point2> coords, int k);

struct CoarsenResult {
    GraphLevel coarse;
    std::vector<int> parent_of;  ///< fine node -> coarse node
    std::vector<int> kept;       ///< coarse node -> fine node
};

/// Greedy independent-set decimation in ascending node order, then KNN connectivity
/// on the kept coordinates.
CoarsenResult coarsen(const GraphLevel& level, int knn_k = 6);

GraphHierarchy build_hierarchy(const TriMesh& mesh, int depth, int knn_k = 6);

/// Relabels level-0 nodes: new node perm[i] is old node i. Coarse levels keep their labels.
GraphHierarchy permute_hierarchy(const GraphHierarchy& hierarchy, std::span<const int> perm);
TriMesh permute_mesh(const TriMesh& mesh, std::span<const int> perm);

/// Sends each level-0 node to its coarsest-level ancestor.
std::vector<int> compose_parents(const GraphHierarchy& hierarchy);

struct PointLocation {
    int triangle = -1;
    Eigen::Vector3d barycentric = Eigen::Vector3d::Zero();
};

/// Triangle containing p (boundary inclusive, 1e-12 slack); nullopt outside the mesh. Linear scan.
std::optional<PointLocation> locate_point(const TriMesh& mesh, const Point2& p);

/// P1 interpolation of a nodal field at p; throws Error("mesh", ...) outside the mesh.
double interpolate(const TriMesh& mesh, const NodeField& field, const Point2& p);

// Text format: "MESH nv nt", nv lines "x y", nt lines "i j k", "BOUNDARY nb", nb indices.
void write_mesh(std::ostream& out, const TriMesh& mesh);
TriMesh read_mesh(std::istream& in);
void save_mesh(const std::filesystem::path& path, const TriMesh& mesh, std::string_view header_comment = {});
TriMesh load_mesh(const std::filesystem::path& path);

}  // namespace graphdps
