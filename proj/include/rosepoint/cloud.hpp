#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "rosepoint/labels.hpp"

namespace rosepoint {

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline double squared_distance(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A plant point cloud with positions in centimeters and optional per-point
// part labels. Labels are either empty (unlabeled) or one per point.
struct LabeledPointCloud {
    std::vector<Vec3> positions;
    std::vector<PartLabel> labels;
    std::string name;

    std::size_t size() const { return positions.size(); }
    bool labeled() const { return !labels.empty(); }
};

// XYZL text format: "x y z [label]" per line, '#' starts a comment line.
LabeledPointCloud load_cloud(const std::filesystem::path& path);
void save_cloud(const LabeledPointCloud& cloud, const std::filesystem::path& path);

}  // namespace rosepoint
