#include "graphdps/mesh.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

using namespace graphdps;

namespace {

GraphLevel path_graph(int n)
{
    GraphLevel g;
    g.node_count = n;
    for (int i = 0; i < n; ++i) {
        g.coords.emplace_back(static_cast<double>(i), 0.0);
    }
    for (int i = 0; i + 1 < n; ++i) {
        g.edges.emplace_back(i, i + 1);
        g.edges.emplace_back(i + 1, i);
        g.edge_lengths.push_back(1.0);
        g.edge_lengths.push_back(1.0);
    }
    return g;
}

GraphLevel complete_graph(int n)
{
    GraphLevel g;
    g.node_count = n;
    for (int i = 0; i < n; ++i) {
        g.coords.emplace_back(std::cos(i), std::sin(i));
    }
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i != j) {
                g.edges.emplace_back(i, j);
                g.edge_lengths.push_back((g.coords[i] - g.coords[j]).norm());
            }
        }
    }
    return g;
}

std::vector<std::pair<int, int>> sorted_edges(GraphLevel level)
{
    std::sort(level.edges.begin(), level.edges.end());
    return level.edges;
}

}  // namespace

TEST(DiskMesh, SmallTargetStaysInsideDisk)
{
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const TriMesh mesh = build_disk_mesh(16, seed);
        EXPECT_GE(mesh.vertex_count(), 14);
        EXPECT_LE(mesh.vertex_count(), 19);
        for (const auto& v : mesh.vertices) {
            EXPECT_LE(v.norm(), 1.0 + 1e-9);
        }
        EXPECT_NO_THROW(validate_mesh(mesh));
    }
}

TEST(DiskMesh, VertexCountWithinTolerance)
{
    for (const int target : {50, 150, 300, 600}) {
        const TriMesh mesh = build_disk_mesh(target, 7);
        EXPECT_NEAR(mesh.vertex_count(), target, 0.15 * target);
    }
}

TEST(DiskMesh, InteriorVerticesHaveThreeNeighbors)
{
    const TriMesh mesh = build_disk_mesh(300, 3);
    const auto nbr = mesh_edges(mesh).neighbors();
    std::vector<bool> on_boundary(static_cast<std::size_t>(mesh.vertex_count()), false);
    for (const int b : mesh.boundary_loop) {
        on_boundary[b] = true;
    }
    for (int v = 0; v < mesh.vertex_count(); ++v) {
        if (!on_boundary[v]) {
            EXPECT_GE(nbr[v].size(), 3u) << "vertex " << v;
        }
    }
}

TEST(DiskMesh, DeterministicPerSeed)
{
    const TriMesh a = build_disk_mesh(300, 11);
    const TriMesh b = build_disk_mesh(300, 11);
    std::ostringstream sa;
    std::ostringstream sb;
    write_mesh(sa, a);
    write_mesh(sb, b);
    EXPECT_EQ(sa.str(), sb.str());
    const TriMesh c = build_disk_mesh(300, 12);
    EXPECT_NE(a, c);
}

TEST(DiskMesh, BoundaryLoopOnUnitCircle)
{
    const TriMesh mesh = build_disk_mesh(200, 5);
    for (const int b : mesh.boundary_loop) {
        EXPECT_NEAR(mesh.vertices[b].norm(), 1.0, 1e-9);
    }
    EXPECT_NO_THROW(validate_mesh(mesh));
}

TEST(DiskMesh, RejectsTinyTarget)
{
    EXPECT_THROW(build_disk_mesh(15, 0), Error);
}

TEST(MeshEdges, SingleTriangle)
{
    TriMesh mesh;
    mesh.vertices = {{0.0, 0.0}, {1.0, 0.0}, {0.5, std::sqrt(3.0) / 2.0}};
    mesh.triangles = {{0, 1, 2}};
    mesh.boundary_loop = {0, 1, 2};
    const GraphLevel g = mesh_edges(mesh);
    EXPECT_EQ(g.edge_count(), 6);
    for (const double len : g.edge_lengths) {
        EXPECT_NEAR(len, 1.0, 1e-15);
    }
}

TEST(MeshEdges, TwoTrianglesSharingAnEdge)
{
    TriMesh mesh;
    mesh.vertices = {{0.0, 0.0}, {1.0, 0.0}, {1.0, 1.0}, {0.0, 1.0}};
    mesh.triangles = {{0, 1, 2}, {0, 2, 3}};
    mesh.boundary_loop = {0, 1, 2, 3};
    EXPECT_NO_THROW(validate_mesh(mesh));
    EXPECT_EQ(mesh_edges(mesh).edge_count(), 10);
}

TEST(MeshEdges, SymmetricWithExactLengths)
{
    const TriMesh mesh = build_disk_mesh(120, 2);
    const GraphLevel g = mesh_edges(mesh);
    const auto edges = sorted_edges(g);
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        const auto [a, b] = g.edges[e];
        EXPECT_TRUE(std::binary_search(edges.begin(), edges.end(), std::pair{b, a}));
        EXPECT_GT(g.edge_lengths[e], 0.0);
        EXPECT_NEAR(g.edge_lengths[e], (g.coords[a] - g.coords[b]).norm(), 1e-12);
    }
}

TEST(Coarsen, PathGraphKeepsEvenNodes)
{
    const CoarsenResult r = coarsen(path_graph(5), 2);
    EXPECT_EQ(r.kept, (std::vector<int>{0, 2, 4}));
    EXPECT_EQ(r.parent_of, (std::vector<int>{0, 0, 1, 1, 2}));
    EXPECT_EQ(r.coarse.node_count, 3);
}

TEST(Coarsen, CompleteGraphCollapsesAndIsRejected)
{
    EXPECT_THROW(coarsen(complete_graph(3)), Error);
}

TEST(Coarsen, ParentMapIsTotalAndCoversCoarseNodes)
{
    const GraphLevel fine = mesh_edges(build_disk_mesh(300, 4));
    const CoarsenResult r = coarsen(fine, 6);
    std::vector<int> children(static_cast<std::size_t>(r.coarse.node_count), 0);
    for (const int p : r.parent_of) {
        ASSERT_GE(p, 0);
        ASSERT_LT(p, r.coarse.node_count);
        ++children[p];
    }
    EXPECT_EQ(std::accumulate(children.begin(), children.end(), 0), fine.node_count);
    for (const int c : children) {
        EXPECT_GE(c, 1);
    }
    // every fine node is its own parent or adjacent to it
    const auto nbr = fine.neighbors();
    for (int i = 0; i < fine.node_count; ++i) {
        const int kept = r.kept[r.parent_of[i]];
        EXPECT_TRUE(kept == i || std::binary_search(nbr[i].begin(), nbr[i].end(), kept));
    }
}

TEST(Hierarchy, DepthOneIsMeshGraph)
{
    const TriMesh mesh = build_disk_mesh(100, 1);
    const GraphHierarchy h = build_hierarchy(mesh, 1);
    ASSERT_EQ(h.depth(), 1);
    EXPECT_EQ(h.levels[0].edges, mesh_edges(mesh).edges);
    EXPECT_TRUE(h.parent_of.empty());
}

TEST(Hierarchy, NodeCountsDecreaseAndParentsCompose)
{
    const TriMesh mesh = build_disk_mesh(300, 9);
    const GraphHierarchy h = build_hierarchy(mesh, 3, 6);
    ASSERT_EQ(h.depth(), 3);
    EXPECT_GT(h.levels[0].node_count, h.levels[1].node_count);
    EXPECT_GT(h.levels[1].node_count, h.levels[2].node_count);
    for (int l = 0; l + 1 < h.depth(); ++l) {
        std::vector<int> children(static_cast<std::size_t>(h.levels[l + 1].node_count), 0);
        for (const int p : h.parent_of[l]) {
            ++children[p];
        }
        EXPECT_EQ(std::accumulate(children.begin(), children.end(), 0), h.levels[l].node_count);
        for (std::size_t e = 0; e < h.levels[l + 1].edges.size(); ++e) {
            const auto [a, b] = h.levels[l + 1].edges[e];
            EXPECT_NEAR(h.levels[l + 1].edge_lengths[e],
                        (h.levels[l + 1].coords[a] - h.levels[l + 1].coords[b]).norm(), 1e-12);
        }
    }
    const auto top = compose_parents(h);
    for (const int c : top) {
        EXPECT_GE(c, 0);
        EXPECT_LT(c, h.levels[2].node_count);
    }
}

TEST(Hierarchy, UnreachableDepthNamesLevel)
{
    const TriMesh mesh = build_disk_mesh(16, 0);
    try {
        build_hierarchy(mesh, 12, 6);
        FAIL() << "expected failure";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("level"), std::string::npos);
    }
}

TEST(Hierarchy, RelabelingGivesIsomorphicFineLevel)
{
    const TriMesh mesh = build_disk_mesh(150, 6);
    std::vector<int> perm(static_cast<std::size_t>(mesh.vertex_count()));
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(3);
    std::shuffle(perm.begin(), perm.end(), rng);
    const TriMesh relabeled = permute_mesh(mesh, perm);
    EXPECT_NO_THROW(validate_mesh(relabeled));
    const GraphLevel a = mesh_edges(mesh);
    const GraphLevel b = mesh_edges(relabeled);
    std::vector<std::pair<int, int>> mapped;
    for (const auto& [i, j] : a.edges) {
        mapped.emplace_back(perm[i], perm[j]);
    }
    std::sort(mapped.begin(), mapped.end());
    EXPECT_EQ(mapped, sorted_edges(b));
}

TEST(MeshIO, RoundTripsExactly)
{
    const TriMesh mesh = build_disk_mesh(80, 8);
    std::stringstream ss;
    write_mesh(ss, mesh);
    EXPECT_EQ(read_mesh(ss), mesh);
}

TEST(MeshIO, RejectsBadHeader)
{
    std::istringstream in("MESHX 3 1\n");
    EXPECT_THROW(read_mesh(in), Error);
}
