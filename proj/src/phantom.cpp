#include "graphdps/phantom.hpp"

#include "graphdps/parallel.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace graphdps {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double wrap(double a)
{
    a = std::fmod(a + std::numbers::pi, kTwoPi);
    return (a < 0.0 ? a + kTwoPi : a) - std::numbers::pi;
}

double cross(const Point2& a, const Point2& b, const Point2& p)
{
    return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
}

std::string sample_stem(int index) { return "sample_" + std::to_string(index); }

}  // namespace

ShapeFamily parse_shape_family(std::string_view name)
{
    if (name == "circle") {
        return ShapeFamily::circle;
    }
    if (name == "triangle") {
        return ShapeFamily::triangle;
    }
    if (name == "blob") {
        return ShapeFamily::blob;
    }
    if (name == "horseshoe") {
        return ShapeFamily::horseshoe;
    }
    throw Error("config", "unknown shape family '" + std::string(name) + "'");
}

std::string_view to_string(ShapeFamily family)
{
    switch (family) {
    case ShapeFamily::circle:
        return "circle";
    case ShapeFamily::triangle:
        return "triangle";
    case ShapeFamily::blob:
        return "blob";
    case ShapeFamily::horseshoe:
        return "horseshoe";
    }
    return "circle";
}

bool Inclusion::contains(const Point2& p) const
{
    const Point2 d = p - center;
    const double r = d.norm();
    switch (shape) {
    case ShapeFamily::circle:
        return r <= radius;
    case ShapeFamily::triangle: {
        std::array<Point2, 3> v;
        for (int k = 0; k < 3; ++k) {
            const double a = rotation + kTwoPi * k / 3.0;
            v[k] = center + radius * Point2(std::cos(a), std::sin(a));
        }
        for (int k = 0; k < 3; ++k) {
            if (cross(v[k], v[(k + 1) % 3], p) < 0.0) {
                return false;
            }
        }
        return true;
    }
    case ShapeFamily::blob: {
        if (r == 0.0) {
            return true;
        }
        const double theta = std::atan2(d.y(), d.x());
        double scale = 1.0;
        for (int k = 0; k < kBlobModes; ++k) {
            scale += blob_amplitude[k] * std::cos((k + 1) * theta + blob_phase[k]);
        }
        return r <= radius * scale;
    }
    case ShapeFamily::horseshoe: {
        if (r < radius || r > radius + width) {
            return false;
        }
        const double theta = std::atan2(d.y(), d.x());
        return std::abs(wrap(theta - rotation)) >= 0.5 * opening;
    }
    }
    return false;
}

double Inclusion::extent() const
{
    switch (shape) {
    case ShapeFamily::circle:
    case ShapeFamily::triangle:
        return radius;
    case ShapeFamily::blob: {
        double sum = 1.0;
        for (const double a : blob_amplitude) {
            sum += std::abs(a);
        }
        return radius * sum;
    }
    case ShapeFamily::horseshoe:
        return radius + width;
    }
    return radius;
}

double Phantom::value_at(const Point2& p) const
{
    double value = background;
    for (const auto& inc : inclusions) {
        if (inc.contains(p)) {
            value = inc.conductivity;
        }
    }
    return value;
}

void DatasetSpec::validate() const
{
    auto require = [](bool ok, const char* what) {
        if (!ok) {
            throw Error("config", std::string("dataset spec: ") + what);
        }
    };
    require(count >= 1, "count must be at least 1");
    require(conductivity_min > 0.0 && conductivity_min <= conductivity_max, "invalid conductivity range");
    require(min_inclusions >= 0 && min_inclusions <= max_inclusions, "invalid inclusion count range");
    require(margin >= 0.0 && separation >= 0.0, "margins must be non-negative");
    require(circle_radius_min > 0.0 && circle_radius_min <= circle_radius_max, "invalid circle radius range");
    require(triangle_radius_min > 0.0 && triangle_radius_min <= triangle_radius_max, "invalid triangle radius range");
    require(blob_radius_min > 0.0 && blob_radius_min <= blob_radius_max, "invalid blob radius range");
    require(blob_amplitude_max >= 0.0 && blob_amplitude_max < 1.0, "blob amplitude must lie in [0, 1)");
    require(horseshoe_inner_min > 0.0 && horseshoe_inner_min <= horseshoe_inner_max, "invalid horseshoe radius range");
    require(horseshoe_width_min > 0.0 && horseshoe_width_min <= horseshoe_width_max, "invalid horseshoe width range");
    require(horseshoe_opening_min >= 0.0 && horseshoe_opening_min <= horseshoe_opening_max &&
                horseshoe_opening_max < kTwoPi,
            "invalid horseshoe opening range");
    require(max_attempts >= 1, "max_attempts must be positive");
}

KeyValues DatasetSpec::to_key_values() const
{
    KeyValues kv;
    kv["family"] = std::string(to_string(family));
    kv["count"] = std::to_string(count);
    kv["conductivity_min"] = format_double(conductivity_min);
    kv["conductivity_max"] = format_double(conductivity_max);
    kv["min_inclusions"] = std::to_string(min_inclusions);
    kv["max_inclusions"] = std::to_string(max_inclusions);
    kv["seed"] = std::to_string(seed);
    kv["margin"] = format_double(margin);
    kv["separation"] = format_double(separation);
    kv["circle_radius_min"] = format_double(circle_radius_min);
    kv["circle_radius_max"] = format_double(circle_radius_max);
    kv["triangle_radius_min"] = format_double(triangle_radius_min);
    kv["triangle_radius_max"] = format_double(triangle_radius_max);
    kv["blob_radius_min"] = format_double(blob_radius_min);
    kv["blob_radius_max"] = format_double(blob_radius_max);
    kv["blob_amplitude_max"] = format_double(blob_amplitude_max);
    kv["horseshoe_inner_min"] = format_double(horseshoe_inner_min);
    kv["horseshoe_inner_max"] = format_double(horseshoe_inner_max);
    kv["horseshoe_width_min"] = format_double(horseshoe_width_min);
    kv["horseshoe_width_max"] = format_double(horseshoe_width_max);
    kv["horseshoe_opening_min"] = format_double(horseshoe_opening_min);
    kv["horseshoe_opening_max"] = format_double(horseshoe_opening_max);
    kv["fine_mesh_id"] = fine_mesh_id;
    kv["coarse_mesh_id"] = coarse_mesh_id;
    return kv;
}

Phantom sample_phantom(const DatasetSpec& spec, std::uint64_t seed)
{
    spec.validate();
    std::mt19937_64 rng(seed);
    auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

    Phantom ph;
    const int n = std::uniform_int_distribution<int>(spec.min_inclusions, spec.max_inclusions)(rng);
    for (int k = 0; k < n; ++k) {
        bool placed = false;
        for (int attempt = 0; attempt < spec.max_attempts && !placed; ++attempt) {
            Inclusion inc;
            inc.shape = spec.family;
            switch (spec.family) {
            case ShapeFamily::circle:
                inc.radius = uniform(spec.circle_radius_min, spec.circle_radius_max);
                break;
            case ShapeFamily::triangle:
                inc.radius = uniform(spec.triangle_radius_min, spec.triangle_radius_max);
                inc.rotation = uniform(0.0, kTwoPi);
                break;
            case ShapeFamily::blob:
                inc.radius = uniform(spec.blob_radius_min, spec.blob_radius_max);
                for (int m = 0; m < kBlobModes; ++m) {
                    inc.blob_amplitude[m] = uniform(0.0, spec.blob_amplitude_max) / (m + 1);
                    inc.blob_phase[m] = uniform(0.0, kTwoPi);
                }
                break;
            case ShapeFamily::horseshoe:
                inc.radius = uniform(spec.horseshoe_inner_min, spec.horseshoe_inner_max);
                inc.width = uniform(spec.horseshoe_width_min, spec.horseshoe_width_max);
                inc.opening = uniform(spec.horseshoe_opening_min, spec.horseshoe_opening_max);
                inc.rotation = uniform(0.0, kTwoPi);
                break;
            }
            const double reach = 1.0 - spec.margin - inc.extent();
            if (reach <= 0.0) {
                continue;
            }
            inc.center = Point2(uniform(-reach, reach), uniform(-reach, reach));
            if (inc.center.norm() > reach) {
                continue;
            }
            bool clear = true;
            for (const auto& other : ph.inclusions) {
                if ((other.center - inc.center).norm() < other.extent() + inc.extent() + spec.separation) {
                    clear = false;
                    break;
                }
            }
            if (!clear) {
                continue;
            }
            inc.conductivity = uniform(spec.conductivity_min, spec.conductivity_max);
            ph.inclusions.push_back(inc);
            placed = true;
        }
        if (!placed) {
            throw Error("phantom", "rejection budget exhausted placing inclusion " + std::to_string(k));
        }
    }
    return ph;
}

NodeField rasterize(const Phantom& phantom, std::span<const Point2> points)
{
    NodeField out(static_cast<Eigen::Index>(points.size()));
    for (std::size_t i = 0; i < points.size(); ++i) {
        out[static_cast<Eigen::Index>(i)] = phantom.value_at(points[i]);
    }
    return out;
}

NodeField rasterize(const Phantom& phantom, const TriMesh& mesh) { return rasterize(phantom, mesh.vertices); }

DatasetSample make_sample(const DatasetSpec& spec, int index, const TriMesh& coarse_mesh, const CemSolver& fine_solver,
                          const CurrentProtocol& protocol)
{
    DatasetSample s;
    s.phantom = sample_phantom(spec, derive_seed(spec.seed, static_cast<std::uint64_t>(index)));
    s.coarse_field = rasterize(s.phantom, coarse_mesh);
    s.fine_field = rasterize(s.phantom, fine_solver.mesh());
    s.measurements = forward(fine_solver, protocol, s.fine_field);
    return s;
}

KeyValues build_dataset(const DatasetSpec& spec, const TriMesh& coarse_mesh, const CemSolver& fine_solver,
                        const CurrentProtocol& protocol, const std::filesystem::path& directory,
                        std::string_view header_comment, int threads)
{
    spec.validate();
    if (coarse_mesh == fine_solver.mesh()) {
        throw Error("phantom", "build_dataset: coarse and fine meshes must differ");
    }
    KeyValues manifest = spec.to_key_values();
    manifest["coarse_vertex_count"] = std::to_string(coarse_mesh.vertex_count());
    manifest["fine_vertex_count"] = std::to_string(fine_solver.vertex_count());
    manifest["electrode_count"] = std::to_string(fine_solver.electrode_count());
    manifest["measurement_count"] = std::to_string(protocol.measurement_count());
    manifest["field_normalization"] = "none";

    parallel_for(spec.count, threads, [&](int i) {
        const DatasetSample s = make_sample(spec, i, coarse_mesh, fine_solver, protocol);
        save_field(directory / (sample_stem(i) + ".field"), s.coarse_field, header_comment);
        save_measurements(directory / (sample_stem(i) + ".meas"), s.measurements, header_comment);
    });
    save_key_values(directory / "manifest", manifest, header_comment);
    return manifest;
}

Dataset load_dataset(const std::filesystem::path& directory)
{
    Dataset ds;
    ds.manifest = load_key_values(directory / "manifest");
    const auto it = ds.manifest.find("count");
    if (it == ds.manifest.end()) {
        throw Error("io", "dataset manifest lacks 'count'");
    }
    const int count = std::stoi(it->second);
    for (int i = 0; i < count; ++i) {
        ds.fields.push_back(load_field(directory / (sample_stem(i) + ".field")));
        ds.measurements.push_back(load_measurements(directory / (sample_stem(i) + ".meas")));
    }
    return ds;
}

}  // namespace graphdps
