#pragma once

#include "graphdps/fem.hpp"
#include "graphdps/io.hpp"
#include "graphdps/mesh.hpp"

#include <array>
#include <filesystem>
#include <string_view>
#include <vector>

namespace graphdps {

enum class ShapeFamily { circle, triangle, blob, horseshoe };

ShapeFamily parse_shape_family(std::string_view name);
std::string_view to_string(ShapeFamily family);

inline constexpr int kBlobModes = 4;

struct Inclusion {
    ShapeFamily shape = ShapeFamily::circle;
    Point2 center = Point2::Zero();
    /// circle: radius; triangle: circumradius; blob: base radius r0; horseshoe: inner radius.
    double radius = 0.2;
    /// triangle: rotation of the first vertex; horseshoe: direction of the opening.
    double rotation = 0.0;
    std::array<double, kBlobModes> blob_amplitude{};  ///< relative to r0, mode k = index + 1
    std::array<double, kBlobModes> blob_phase{};
    double width = 0.0;    ///< horseshoe ring width
    double opening = 0.0;  ///< horseshoe gap angle
    double conductivity = 1.0;

    bool contains(const Point2& p) const;
    /// Radius of the smallest center-based disk holding the support.
    double extent() const;
};

struct Phantom {
    std::vector<Inclusion> inclusions;
    double background = 1.0;

    /// Conductivity at p; later inclusions win where supports overlap.
    double value_at(const Point2& p) const;
};

struct DatasetSpec {
    ShapeFamily family = ShapeFamily::circle;
    int count = 200;
    double conductivity_min = 0.5;
    double conductivity_max = 1.5;
    int min_inclusions = 1;
    int max_inclusions = 3;
    std::uint64_t seed = 0;
    double margin = 0.05;       ///< minimum gap between support and the unit circle
    double separation = 0.05;   ///< minimum gap between inclusion supports
    double circle_radius_min = 0.12;
    double circle_radius_max = 0.3;
    double triangle_radius_min = 0.15;
    double triangle_radius_max = 0.35;
    double blob_radius_min = 0.15;
    double blob_radius_max = 0.28;
    double blob_amplitude_max = 0.35;
    double horseshoe_inner_min = 0.08;
    double horseshoe_inner_max = 0.15;
    double horseshoe_width_min = 0.06;
    double horseshoe_width_max = 0.12;
    double horseshoe_opening_min = 1.0471975511965976;  // pi / 3
    double horseshoe_opening_max = 2.0943951023931953;  // 2 pi / 3
    int max_attempts = 1000;
    std::string fine_mesh_id;
    std::string coarse_mesh_id;

    void validate() const;
    KeyValues to_key_values() const;
};

/// Deterministic per (spec, seed). Throws Error("phantom", ...) when rejection sampling runs out.
Phantom sample_phantom(const DatasetSpec& spec, std::uint64_t seed);

NodeField rasterize(const Phantom& phantom, std::span<const Point2> points);
NodeField rasterize(const Phantom& phantom, const TriMesh& mesh);

struct DatasetSample {
    Phantom phantom;
    NodeField coarse_field;
    NodeField fine_field;
    MeasurementSet measurements;  ///< simulated on the fine mesh, noise free
};

/// Sample `index` of a dataset: the phantom seed is derive_seed(spec.seed, index).
DatasetSample make_sample(const DatasetSpec& spec, int index, const TriMesh& coarse_mesh, const CemSolver& fine_solver,
                          const CurrentProtocol& protocol);

/// Writes manifest, sample_<idx>.field (coarse mesh) and sample_<idx>.meas (fine-mesh simulation).
/// `header_comment` is copied to the first line of every file. Returns the manifest.
KeyValues build_dataset(const DatasetSpec& spec, const TriMesh& coarse_mesh, const CemSolver& fine_solver,
                        const CurrentProtocol& protocol, const std::filesystem::path& directory,
                        std::string_view header_comment = {}, int threads = 1);

struct Dataset {
    KeyValues manifest;
    std::vector<NodeField> fields;
    std::vector<MeasurementSet> measurements;
};

Dataset load_dataset(const std::filesystem::path& directory);

}  // namespace graphdps
