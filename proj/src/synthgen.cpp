#include "rosepoint/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "rosepoint/rng.hpp"

namespace rosepoint {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kDeg = kPi / 180.0;

// --- L-system module string ---------------------------------------------

// 'I' internode (length, r_base, r_tip), 'L' leaf (scale, n_leaflets),
// 'K' flower (scale), '[' push, ']' pop, '&' pitch (deg), '/' roll (deg).
struct Module {
    char sym;
    double a = 0.0;
    double b = 0.0;
    double c = 0.0;
};

using ModuleString = std::vector<Module>;

void expand_axis(ModuleString& out, Rng& rng, const PlantParams& params, int depth, int metamers,
                 double radius, bool long_axis) {
    const double taper = 0.90;
    double r = radius;
    for (int m = 0; m < metamers; ++m) {
        double len = rng.uniform(params.internode_length.lo, params.internode_length.hi);
        if (!long_axis) len *= 0.55;
        out.push_back({'I', len, r, r * taper});
        r *= taper;

        // one compound leaf per metamer, spiral phyllotaxy
        int nl = static_cast<int>(params.leaflets_per_leaf.lo +
                                  rng.uniform_int(static_cast<std::uint64_t>(
                                      params.leaflets_per_leaf.hi - params.leaflets_per_leaf.lo + 1)));
        nl |= 1;  // odd leaflet counts, as in rose leaves
        const double leaf_scale = rng.uniform(0.9, 1.3);
        out.push_back({'['});
        out.push_back({'&', rng.uniform(35.0, 60.0)});
        out.push_back({'L', leaf_scale, static_cast<double>(nl)});
        out.push_back({']'});

        // lateral branch
        if (depth > 1 && m >= 1 && m + 1 < metamers && rng.uniform() < 0.30) {
            const bool sub_long = rng.uniform() < params.long_axis_prob * 0.5;
            const int sub_metamers = 2 + static_cast<int>(rng.uniform_int(3));
            out.push_back({'['});
            out.push_back({'/', rng.uniform(0.0, 360.0)});
            out.push_back({'&', rng.uniform(30.0, 55.0)});
            expand_axis(out, rng, params, depth - 1, sub_metamers, r * 0.8, sub_long);
            out.push_back({']'});
        }
        out.push_back({'/', 137.5});
    }
    if (rng.uniform() < params.flower_prob_per_axis) {
        out.push_back({'K', rng.uniform(0.85, 1.15)});
    }
}

ModuleString derive(const PlantParams& params, Rng& rng) {
    ModuleString out;
    for (int axis = 0; axis < params.n_axes; ++axis) {
        const bool long_axis = rng.uniform() < params.long_axis_prob;
        const int metamers = long_axis ? 9 + static_cast<int>(rng.uniform_int(5))
                                       : 4 + static_cast<int>(rng.uniform_int(3));
        const double radius = rng.uniform(params.branch_radius.lo, params.branch_radius.hi);
        out.push_back({'['});
        out.push_back({'/', rng.uniform(0.0, 360.0)});
        out.push_back({'&', rng.uniform(4.0, 22.0)});
        expand_axis(out, rng, params, params.recursion_depth, metamers, radius, long_axis);
        out.push_back({']'});
    }
    return out;
}

// --- turtle interpretation ------------------------------------------------

struct Frame {
    Vec3 pos{0.0, 0.0, 0.0};
    Vec3 heading{0.0, 0.0, 1.0};
    Vec3 left{1.0, 0.0, 0.0};
    Vec3 up{0.0, 1.0, 0.0};
};

Vec3 rotate_about(const Vec3& v, const Vec3& axis, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    return {c * v[0] + s * (axis[1] * v[2] - axis[2] * v[1]) + (1 - c) * dot(axis, v) * axis[0],
            c * v[1] + s * (axis[2] * v[0] - axis[0] * v[2]) + (1 - c) * dot(axis, v) * axis[1],
            c * v[2] + s * (axis[0] * v[1] - axis[1] * v[0]) + (1 - c) * dot(axis, v) * axis[2]};
}

void pitch(Frame& f, double deg) {
    const double a = deg * kDeg;
    f.heading = rotate_about(f.heading, f.left, a);
    f.up = rotate_about(f.up, f.left, a);
}

void roll(Frame& f, double deg) {
    const double a = deg * kDeg;
    f.left = rotate_about(f.left, f.heading, a);
    f.up = rotate_about(f.up, f.heading, a);
}

class MeshBuilder {
public:
    explicit MeshBuilder(PlantMesh& mesh) : mesh_(mesh) {}

    OrganMesh& begin(OrganLabel organ) {
        mesh_.organs.push_back(OrganMesh{{}, {}, organ});
        return mesh_.organs.back();
    }

    static void push_triangle(OrganMesh& m, const Vec3& a, const Vec3& b, const Vec3& c) {
        if (triangle_area(a, b, c) <= 1e-12) return;
        const int base = static_cast<int>(m.vertices.size());
        m.vertices.push_back(a);
        m.vertices.push_back(b);
        m.vertices.push_back(c);
        m.triangles.push_back({base, base + 1, base + 2});
    }

    void tube(const Frame& f, double length, double r0, double r1, OrganLabel organ) {
        constexpr int kSides = 8;
        OrganMesh& m = begin(organ);
        const Vec3 tip = f.pos + length * f.heading;
        std::array<Vec3, kSides> ring0, ring1;
        for (int i = 0; i < kSides; ++i) {
            const double a = 2.0 * kPi * i / kSides;
            const Vec3 radial = std::cos(a) * f.left + std::sin(a) * f.up;
            ring0[i] = f.pos + r0 * radial;
            ring1[i] = tip + r1 * radial;
        }
        for (int i = 0; i < kSides; ++i) {
            const int j = (i + 1) % kSides;
            push_triangle(m, ring0[i], ring0[j], ring1[j]);
            push_triangle(m, ring0[i], ring1[j], ring1[i]);
        }
        if (m.triangles.empty()) mesh_.organs.pop_back();
    }

    // A bilaterally folded elliptic blade along `dir`; used for leaflets,
    // sepals and (with a different width profile) petals.
    void blade(const Vec3& origin, const Vec3& dir, const Vec3& side, double length, double width,
               double fold_deg, OrganLabel organ, bool petal_profile = false) {
        constexpr int kSegments = 4;
        OrganMesh& m = begin(organ);
        const Vec3 n = cross(dir, side);
        const double fold = fold_deg * kDeg;
        const Vec3 side_l = rotate_about(side, dir, fold);
        const Vec3 side_r = rotate_about(-1.0 * side, dir, -fold);
        auto half_width = [&](double t) {
            if (petal_profile) return 0.5 * width * std::sqrt(t) * (1.2 - 0.55 * t);
            const double u = 2.0 * t - 1.0;
            return 0.5 * width * std::sqrt(std::max(0.0, 1.0 - u * u));
        };
        std::array<Vec3, kSegments + 1> mid, lpt, rpt;
        for (int i = 0; i <= kSegments; ++i) {
            const double t = static_cast<double>(i) / kSegments;
            const double droop = 0.15 * length * t * t;  // slight downward curvature
            mid[i] = origin + (t * length) * dir - droop * n;
            const double w = half_width(t);
            lpt[i] = mid[i] + w * side_l;
            rpt[i] = mid[i] + w * side_r;
        }
        for (int i = 0; i < kSegments; ++i) {
            push_triangle(m, mid[i], lpt[i], lpt[i + 1]);
            push_triangle(m, mid[i], lpt[i + 1], mid[i + 1]);
            push_triangle(m, mid[i], rpt[i + 1], rpt[i]);
            push_triangle(m, mid[i], mid[i + 1], rpt[i + 1]);
        }
        if (m.triangles.empty()) mesh_.organs.pop_back();
    }

    void icosphere(const Vec3& center, double radius, OrganLabel organ) {
        OrganMesh& m = begin(organ);
        const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
        std::vector<Vec3> v = {{-1, phi, 0}, {1, phi, 0},  {-1, -phi, 0}, {1, -phi, 0},
                               {0, -1, phi}, {0, 1, phi},  {0, -1, -phi}, {0, 1, -phi},
                               {phi, 0, -1}, {phi, 0, 1},  {-phi, 0, -1}, {-phi, 0, 1}};
        static const int faces[20][3] = {
            {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9},  {5, 11, 4},
            {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6},  {3, 6, 8},
            {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
        for (Vec3& p : v) {
            const double s = radius / norm(p);
            p = s * p;
            p = p + center;
        }
        for (const auto& f : faces) push_triangle(m, v[f[0]], v[f[1]], v[f[2]]);
    }

private:
    PlantMesh& mesh_;
};

void emit_leaf(MeshBuilder& mb, const Frame& frame, double scale, int n_leaflets) {
    Frame f = frame;
    const double petiole_len = 1.6 * scale;
    const double petiole_r = 0.045 * scale;
    mb.tube(f, petiole_len, petiole_r, petiole_r * 0.8, OrganLabel::Petiole);

    // stipules: two tiny blades at the petiole base
    mb.blade(f.pos, rotate_about(f.heading, f.up, 0.5), f.left, 0.45 * scale, 0.22 * scale, 25.0,
             OrganLabel::Stipule);
    mb.blade(f.pos, rotate_about(f.heading, f.up, -0.5), -1.0 * f.left, 0.45 * scale, 0.22 * scale,
             25.0, OrganLabel::Stipule);

    f.pos = f.pos + petiole_len * f.heading;

    // rachis with alternating leaflet pairs and one terminal leaflet
    const int pairs = (n_leaflets - 1) / 2;
    const double rachis_step = 1.1 * scale;
    const double blade_len = 2.6 * scale;
    const double blade_width = 1.6 * scale;
    for (int p = 0; p < pairs; ++p) {
        mb.tube(f, rachis_step, petiole_r * 0.8, petiole_r * 0.7, OrganLabel::Petiole);
        f.pos = f.pos + rachis_step * f.heading;
        const Vec3 out_l = rotate_about(f.heading, cross(f.heading, f.left), 55.0 * kDeg);
        mb.blade(f.pos, rotate_about(f.left, f.up, 0.35), f.heading, blade_len * 0.9,
                 blade_width * 0.9, 18.0, OrganLabel::Leaflet);
        mb.blade(f.pos, rotate_about(-1.0 * f.left, f.up, -0.35), f.heading, blade_len * 0.9,
                 blade_width * 0.9, 18.0, OrganLabel::Leaflet);
        (void)out_l;
    }
    mb.blade(f.pos, f.heading, f.left, blade_len, blade_width, 18.0, OrganLabel::Leaflet);
}

void emit_flower(MeshBuilder& mb, const Frame& frame, double scale) {
    Frame f = frame;
    // peduncle up to the receptacle
    const double stalk = 1.0 * scale;
    mb.tube(f, stalk, 0.07 * scale, 0.09 * scale, OrganLabel::Stem);
    f.pos = f.pos + stalk * f.heading;
    const double rr = 0.42 * scale;
    mb.icosphere(f.pos + (0.5 * rr) * f.heading, rr, OrganLabel::Receptacle);

    const Vec3 base = f.pos + (0.8 * rr) * f.heading;
    for (int s = 0; s < 5; ++s) {
        Frame g = f;
        roll(g, 72.0 * s + 36.0);
        Frame tilted = g;
        pitch(tilted, 75.0);
        mb.blade(base, tilted.heading, tilted.left, 1.1 * scale, 0.45 * scale, 15.0,
                 OrganLabel::Sepal);
    }
    // two whorls of petals
    for (int whorl = 0; whorl < 2; ++whorl) {
        const int count = 5;
        const double tilt = whorl == 0 ? 55.0 : 30.0;
        const double len = (whorl == 0 ? 1.7 : 1.4) * scale;
        for (int s = 0; s < count; ++s) {
            Frame g = f;
            roll(g, 72.0 * s + (whorl == 0 ? 0.0 : 36.0));
            Frame tilted = g;
            pitch(tilted, tilt);
            mb.blade(base, tilted.heading, tilted.left, len, 1.15 * scale, 30.0, OrganLabel::Petal,
                     /*petal_profile=*/true);
        }
    }
}

void interpret(const ModuleString& modules, PlantMesh& mesh) {
    MeshBuilder mb(mesh);
    std::vector<Frame> stack;
    Frame f;
    for (const Module& m : modules) {
        switch (m.sym) {
            case 'I':
                mb.tube(f, m.a, m.b, m.c, OrganLabel::Stem);
                f.pos = f.pos + m.a * f.heading;
                // gentle gravity droop on long shoots
                pitch(f, 1.5);
                break;
            case 'L':
                emit_leaf(mb, f, m.a, static_cast<int>(m.b));
                break;
            case 'K':
                emit_flower(mb, f, m.a);
                break;
            case '[':
                stack.push_back(f);
                break;
            case ']':
                f = stack.back();
                stack.pop_back();
                break;
            case '&':
                pitch(f, m.a);
                break;
            case '/':
                roll(f, m.a);
                break;
            default:
                break;
        }
    }
}

bool has_organ(const PlantMesh& mesh, OrganLabel organ) {
    for (const OrganMesh& m : mesh.organs) {
        if (m.organ == organ && !m.triangles.empty()) return true;
    }
    return false;
}

}  // namespace

void PlantParams::validate() const {
    auto check_range = [](const Range& r, const char* name) {
        if (!(r.lo > 0.0) || !(r.hi >= r.lo)) {
            throw std::invalid_argument(std::string("invalid range for ") + name);
        }
    };
    if (n_axes < 1) throw std::invalid_argument("n_axes must be >= 1");
    if (long_axis_prob < 0.0 || long_axis_prob > 1.0)
        throw std::invalid_argument("long_axis_prob must be in [0,1]");
    if (flower_prob_per_axis < 0.0 || flower_prob_per_axis > 1.0)
        throw std::invalid_argument("flower_prob_per_axis must be in [0,1]");
    if (recursion_depth < 1) throw std::invalid_argument("recursion_depth must be >= 1");
    if (leaflets_per_leaf.lo < 1 || leaflets_per_leaf.hi < leaflets_per_leaf.lo)
        throw std::invalid_argument("invalid leaflets_per_leaf range");
    check_range(internode_length, "internode_length");
    check_range(branch_radius, "branch_radius");
    check_range(target_height, "target_height");
}

std::size_t PlantMesh::triangle_count() const {
    std::size_t n = 0;
    for (const OrganMesh& m : organs) n += m.triangles.size();
    return n;
}

PlantMesh generate_plant(const PlantParams& params, std::uint64_t seed) {
    params.validate();
    Rng rng(seed);
    for (int attempt = 0; attempt < 100; ++attempt) {
        const double target = rng.uniform(params.target_height.lo, params.target_height.hi);
        PlantMesh mesh;
        mesh.seed = seed;
        const ModuleString modules = derive(params, rng);
        interpret(modules, mesh);
        if (!has_organ(mesh, OrganLabel::Stem) || !has_organ(mesh, OrganLabel::Leaflet)) continue;

        double z_min = 1e30, z_max = -1e30;
        for (const OrganMesh& m : mesh.organs) {
            for (const Vec3& v : m.vertices) {
                z_min = std::min(z_min, v[2]);
                z_max = std::max(z_max, v[2]);
            }
        }
        const double extent = z_max - z_min;
        if (extent <= 1e-6) continue;

        const double scale = target / extent;
        for (OrganMesh& m : mesh.organs) {
            for (Vec3& v : m.vertices) v = scale * v;
        }
        return mesh;
    }
    throw GenerationError("generate_plant: no valid plant after 100 attempts");
}

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
    return 0.5 * norm(cross(b - a, c - a));
}

double mesh_area(const OrganMesh& mesh) {
    double area = 0.0;
    for (const auto& t : mesh.triangles) {
        area += triangle_area(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
    }
    return area;
}

double mesh_area(const PlantMesh& mesh) {
    double area = 0.0;
    for (const OrganMesh& m : mesh.organs) area += mesh_area(m);
    return area;
}

LabeledPointCloud sample_mesh(const PlantMesh& mesh, double density, std::uint64_t seed) {
    if (density <= 0.0) throw std::invalid_argument("sample_mesh: density must be > 0");

    struct Tri {
        Vec3 a, b, c;
        PartLabel label;
    };
    std::vector<Tri> tris;
    std::vector<double> cumulative;
    double total_area = 0.0;
    for (const OrganMesh& m : mesh.organs) {
        const PartLabel label = merge_organ_label(m.organ);
        for (const auto& t : m.triangles) {
            const Tri tri{m.vertices[t[0]], m.vertices[t[1]], m.vertices[t[2]], label};
            const double area = triangle_area(tri.a, tri.b, tri.c);
            if (area <= 0.0) continue;
            total_area += area;
            tris.push_back(tri);
            cumulative.push_back(total_area);
        }
    }
    if (total_area <= 0.0) throw GenerationError("sample_mesh: zero-area mesh");

    const auto count = static_cast<std::size_t>(std::llround(density * total_area));
    Rng rng(seed);
    LabeledPointCloud cloud;
    cloud.positions.reserve(count);
    cloud.labels.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double r = rng.uniform() * total_area;
        const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), r);
        const std::size_t idx = std::min<std::size_t>(it - cumulative.begin(), tris.size() - 1);
        const Tri& t = tris[idx];
        double u = rng.uniform();
        double v = rng.uniform();
        if (u + v > 1.0) {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        cloud.positions.push_back(t.a + u * (t.b - t.a) + v * (t.c - t.a));
        cloud.labels.push_back(t.label);
    }
    return cloud;
}

DatasetManifest generate_dataset(int n_plants, const PlantParams& params, std::uint64_t seed,
                                 const std::filesystem::path& out_dir, double density) {
    if (n_plants < 1) throw std::invalid_argument("generate_dataset: n_plants must be >= 1");
    std::filesystem::create_directories(out_dir);

    const int n_val = (n_plants + 5) / 6;  // mirrors 8 of 48
    DatasetManifest manifest;
    for (int i = 0; i < n_plants; ++i) {
        const std::uint64_t plant_seed = seed + static_cast<std::uint64_t>(i);
        const PlantMesh mesh = generate_plant(params, plant_seed);
        const LabeledPointCloud cloud = sample_mesh(mesh, density, plant_seed ^ 0xD1B54A32D192ED03ull);
        char name[64];
        std::snprintf(name, sizeof(name), "plant_%03d.xyzl", i);
        save_cloud(cloud, out_dir / name);
        manifest.entries.push_back(
            {name, plant_seed, i >= n_plants - n_val ? "val" : "train"});
    }

    std::ofstream out(out_dir / "manifest.csv");
    if (!out) throw std::runtime_error("cannot write manifest: " + (out_dir / "manifest.csv").string());
    out << "file,seed,split\n";
    for (const DatasetEntry& e : manifest.entries) {
        out << e.file << ',' << e.seed << ',' << e.split << '\n';
    }
    return manifest;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest: " + path.string());
    DatasetManifest manifest;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream fields(line);
        DatasetEntry e;
        std::string seed_str;
        if (!std::getline(fields, e.file, ',') || !std::getline(fields, seed_str, ',') ||
            !std::getline(fields, e.split, ',')) {
            throw ParseError(path.string() + ": malformed manifest line: " + line);
        }
        e.seed = std::stoull(seed_str);
        manifest.entries.push_back(e);
    }
    return manifest;
}

void write_off(const PlantMesh& mesh, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write OFF file: " + path.string());
    std::size_t nv = 0, nt = 0;
    for (const OrganMesh& m : mesh.organs) {
        nv += m.vertices.size();
        nt += m.triangles.size();
    }
    out << "OFF\n" << nv << ' ' << nt << " 0\n";
    for (const OrganMesh& m : mesh.organs) {
        for (const Vec3& v : m.vertices) out << v[0] << ' ' << v[1] << ' ' << v[2] << '\n';
    }
    std::size_t base = 0;
    for (const OrganMesh& m : mesh.organs) {
        for (const auto& t : m.triangles) {
            out << "3 " << base + t[0] << ' ' << base + t[1] << ' ' << base + t[2] << '\n';
        }
        base += m.vertices.size();
    }
}

}  // namespace rosepoint
