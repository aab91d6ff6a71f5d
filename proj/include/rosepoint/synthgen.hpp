#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rosepoint/cloud.hpp"
#include "rosepoint/labels.hpp"

namespace rosepoint {

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

struct IntRange {
    int lo = 0;
    int hi = 0;
};

// Architectural parameters of the procedural rosebush generator. Defaults are
// tuned so the merged class fractions of sampled clouds stay leaf-dominated
// (roughly 2/3 leaf, with stem and flower splitting the rest).
struct PlantParams {
    int n_axes = 5;
    double long_axis_prob = 0.7;          // morphotype: long vs short axes
    Range internode_length = {1.6, 2.6};  // cm
    Range branch_radius = {0.18, 0.30};   // cm, base radius of an axis
    IntRange leaflets_per_leaf = {3, 7};
    double flower_prob_per_axis = 0.85;
    int recursion_depth = 3;
    Range target_height = {30.0, 50.0};   // cm, vertical extent of the plant

    void validate() const;
};

struct OrganMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;
    OrganLabel organ = OrganLabel::Stem;
};

struct PlantMesh {
    std::vector<OrganMesh> organs;
    std::uint64_t seed = 0;

    std::size_t triangle_count() const;
};

class GenerationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Deterministic for fixed (params, seed). Throws GenerationError if no valid
// plant can be produced in 100 attempts.
PlantMesh generate_plant(const PlantParams& params, std::uint64_t seed);

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c);
double mesh_area(const OrganMesh& mesh);
double mesh_area(const PlantMesh& mesh);

// Homogeneous surface sampling: triangles picked with probability proportional
// to area, positions uniform per triangle via barycentric coordinates. The
// total point count is round(density * mesh_area) exactly.
LabeledPointCloud sample_mesh(const PlantMesh& mesh, double density, std::uint64_t seed);

struct DatasetEntry {
    std::string file;
    std::uint64_t seed = 0;
    std::string split;  // "train" or "val"
};

struct DatasetManifest {
    std::vector<DatasetEntry> entries;
};

// Writes n_plants XYZL clouds plus manifest.csv; the last ceil(n/6) plants go
// to the validation split.
DatasetManifest generate_dataset(int n_plants, const PlantParams& params, std::uint64_t seed,
                                 const std::filesystem::path& out_dir, double density = 120.0);

DatasetManifest load_manifest(const std::filesystem::path& path);

// Debug export of the labeled mesh in OFF format.
void write_off(const PlantMesh& mesh, const std::filesystem::path& path);

}  // namespace rosepoint
