#include "rosepoint/cloud.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace rosepoint {

namespace {

bool blank_or_comment(const std::string& line) {
    for (char c : line) {
        if (c == '#') return true;
        if (!std::isspace(static_cast<unsigned char>(c))) return false;
    }
    return true;
}

}  // namespace

LabeledPointCloud load_cloud(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open point cloud file: " + path.string());

    LabeledPointCloud cloud;
    cloud.name = path.stem().string();

    std::string line;
    std::size_t line_no = 0;
    int columns = 0;  // 3 or 4, fixed by the first data line
    while (std::getline(in, line)) {
        ++line_no;
        if (blank_or_comment(line)) continue;

        std::istringstream fields(line);
        double x, y, z;
        if (!(fields >> x >> y >> z)) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": malformed point line");
        }
        if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z)) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": non-finite coordinate");
        }
        long code = -1;
        bool has_label = static_cast<bool>(fields >> code);
        std::string trailing;
        if (fields >> trailing) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": trailing tokens");
        }

        if (columns == 0) {
            columns = has_label ? 4 : 3;
        } else if ((columns == 4) != has_label) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) +
                             ": inconsistent column count");
        }
        if (has_label) {
            if (code < 0 || code > 2) {
                throw ParseError(path.string() + ":" + std::to_string(line_no) +
                                 ": label code " + std::to_string(code) + " outside {0,1,2}");
            }
            cloud.labels.push_back(static_cast<PartLabel>(code));
        }
        cloud.positions.push_back({x, y, z});
    }
    if (cloud.positions.empty()) {
        throw ParseError(path.string() + ": no points");
    }
    return cloud;
}

void save_cloud(const LabeledPointCloud& cloud, const std::filesystem::path& path) {
    if (cloud.labeled() && cloud.labels.size() != cloud.positions.size()) {
        throw std::invalid_argument("cloud has " + std::to_string(cloud.positions.size()) +
                                    " points but " + std::to_string(cloud.labels.size()) + " labels");
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write point cloud file: " + path.string());

    char buf[128];
    for (std::size_t i = 0; i < cloud.positions.size(); ++i) {
        const Vec3& p = cloud.positions[i];
        int n = std::snprintf(buf, sizeof(buf), "%.6f %.6f %.6f", p[0], p[1], p[2]);
        out.write(buf, n);
        if (cloud.labeled()) {
            out << ' ' << static_cast<int>(cloud.labels[i]);
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace rosepoint
