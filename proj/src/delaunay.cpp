#include "graphdps/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace graphdps {

namespace {

struct WorkTriangle {
    std::array<int, 3> v;
    Point2 center;
    double radius2;
    bool alive;
};

double orient(const Point2& a, const Point2& b, const Point2& c)
{
    return (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
}

WorkTriangle make_triangle(std::span<const Point2> pts, int a, int b, int c)
{
    if (orient(pts[a], pts[b], pts[c]) < 0.0) {
        std::swap(b, c);
    }
    const Point2& pa = pts[a];
    const Point2& pb = pts[b];
    const Point2& pc = pts[c];
    const double d = 2.0 * (pa.x() * (pb.y() - pc.y()) + pb.x() * (pc.y() - pa.y()) + pc.x() * (pa.y() - pb.y()));
    const double a2 = pa.squaredNorm();
    const double b2 = pb.squaredNorm();
    const double c2 = pc.squaredNorm();
    Point2 center{(a2 * (pb.y() - pc.y()) + b2 * (pc.y() - pa.y()) + c2 * (pa.y() - pb.y())) / d,
                  (a2 * (pc.x() - pb.x()) + b2 * (pa.x() - pc.x()) + c2 * (pb.x() - pa.x())) / d};
    return WorkTriangle{{a, b, c}, center, (center - pa).squaredNorm(), true};
}

}  // namespace

std::vector<Triangle> delaunay_triangulate(std::span<const Point2> points)
{
    const int n = static_cast<int>(points.size());
    if (n < 3) {
        throw Error("mesh", "delaunay_triangulate: need at least 3 points");
    }

    Point2 lo = points[0];
    Point2 hi = points[0];
    for (const auto& p : points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const Point2 mid = 0.5 * (lo + hi);
    const double span = std::max(hi.x() - lo.x(), hi.y() - lo.y()) + 1.0;

    std::vector<Point2> pts(points.begin(), points.end());
    pts.emplace_back(mid.x() - 20.0 * span, mid.y() - 10.0 * span);
    pts.emplace_back(mid.x() + 20.0 * span, mid.y() - 10.0 * span);
    pts.emplace_back(mid.x(), mid.y() + 20.0 * span);

    std::vector<WorkTriangle> tris;
    tris.reserve(static_cast<std::size_t>(2 * n + 8));
    tris.push_back(make_triangle(pts, n, n + 1, n + 2));

    std::vector<int> bad;
    std::map<std::pair<int, int>, int> edge_count;
    for (int p = 0; p < n; ++p) {
        const Point2& pt = pts[p];
        bad.clear();
        for (int t = 0; t < static_cast<int>(tris.size()); ++t) {
            const auto& tri = tris[t];
            if (!tri.alive) {
                continue;
            }
            if ((pt - tri.center).squaredNorm() < tri.radius2 * (1.0 - 1e-12)) {
                bad.push_back(t);
            }
        }
        edge_count.clear();
        for (const int t : bad) {
            const auto& v = tris[t].v;
            for (int e = 0; e < 3; ++e) {
                const int a = v[e];
                const int b = v[(e + 1) % 3];
                ++edge_count[{std::min(a, b), std::max(a, b)}];
            }
        }
        for (const int t : bad) {
            const auto v = tris[t].v;
            tris[t].alive = false;
            for (int e = 0; e < 3; ++e) {
                const int a = v[e];
                const int b = v[(e + 1) % 3];
                if (edge_count[{std::min(a, b), std::max(a, b)}] == 1) {
                    tris.push_back(make_triangle(pts, a, b, p));
                }
            }
        }
        // Compact occasionally so the linear scan stays proportional to live triangles.
        if (tris.size() > 4 * static_cast<std::size_t>(p + 16)) {
            std::erase_if(tris, [](const WorkTriangle& t) { return !t.alive; });
        }
    }

    std::vector<Triangle> out;
    for (const auto& tri : tris) {
        if (!tri.alive || tri.v[0] >= n || tri.v[1] >= n || tri.v[2] >= n) {
            continue;
        }
        out.push_back(tri.v);
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace graphdps
