#include "rosepoint/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>

#include "rosepoint/rng.hpp"

namespace rosepoint {

namespace {

Vec3 min_corner_of(const LabeledPointCloud& cloud) {
    Vec3 mc = cloud.positions.front();
    for (const Vec3& p : cloud.positions) {
        mc[0] = std::min(mc[0], p[0]);
        mc[1] = std::min(mc[1], p[1]);
        mc[2] = std::min(mc[2], p[2]);
    }
    return mc;
}

double cell_center_sqdist(const std::array<std::int64_t, 3>& a, const std::array<std::int64_t, 3>& b) {
    double d = 0.0;
    for (int k = 0; k < 3; ++k) {
        const double diff = static_cast<double>(a[k] - b[k]);
        d += diff * diff;
    }
    return d;
}

}  // namespace

void BlockSpec::validate() const {
    if (!(edge > 0.0)) throw std::invalid_argument("BlockSpec: edge must be > 0");
    if (offset < 0.0 || offset >= edge) throw std::invalid_argument("BlockSpec: offset must be in [0, edge)");
    if (n_points < 1) throw std::invalid_argument("BlockSpec: n_points must be >= 1");
    if (!(min_fraction > 0.0 && min_fraction < 1.0))
        throw std::invalid_argument("BlockSpec: min_fraction must be in (0,1)");
    if (!(voxel_grid > 0.0 && voxel_grid < edge))
        throw std::invalid_argument("BlockSpec: voxel_grid must be in (0, edge)");
}

std::vector<RawBlock> partition(const LabeledPointCloud& cloud, const BlockSpec& spec) {
    spec.validate();
    if (cloud.positions.empty()) throw std::invalid_argument("partition: empty cloud");

    const Vec3 mc = min_corner_of(cloud);
    std::map<std::array<std::int64_t, 3>, std::vector<std::uint32_t>> cells;
    for (std::uint32_t i = 0; i < cloud.positions.size(); ++i) {
        const Vec3& p = cloud.positions[i];
        std::array<std::int64_t, 3> cell;
        for (int k = 0; k < 3; ++k) {
            cell[k] = static_cast<std::int64_t>(std::floor((p[k] - mc[k] + spec.offset) / spec.edge));
        }
        cells[cell].push_back(i);
    }
    std::vector<RawBlock> blocks;
    blocks.reserve(cells.size());
    for (auto& [cell, indices] : cells) {
        blocks.push_back({cell, std::move(indices)});
    }
    return blocks;
}

std::vector<RawBlock> reassign_small(std::vector<RawBlock> blocks, const BlockSpec& spec) {
    const double threshold = spec.min_fraction * spec.n_points;
    while (blocks.size() > 1) {
        // smallest sub-threshold block, ties by lexicographic cell index
        std::size_t small = blocks.size();
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            if (static_cast<double>(blocks[i].point_indices.size()) >= threshold) continue;
            if (small == blocks.size() ||
                blocks[i].point_indices.size() < blocks[small].point_indices.size() ||
                (blocks[i].point_indices.size() == blocks[small].point_indices.size() &&
                 blocks[i].cell_index < blocks[small].cell_index)) {
                small = i;
            }
        }
        if (small == blocks.size()) break;

        std::size_t target = blocks.size();
        double best = 0.0;
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            if (i == small) continue;
            const double d = cell_center_sqdist(blocks[i].cell_index, blocks[small].cell_index);
            if (target == blocks.size() || d < best ||
                (d == best && blocks[i].cell_index < blocks[target].cell_index)) {
                target = i;
                best = d;
            }
        }
        auto& dst = blocks[target].point_indices;
        auto& src = blocks[small].point_indices;
        dst.insert(dst.end(), src.begin(), src.end());
        blocks.erase(blocks.begin() + static_cast<std::ptrdiff_t>(small));
    }
    return blocks;
}

std::vector<std::uint32_t> voxel_balance(const std::vector<Vec3>& cloud_positions,
                                         const RawBlock& block, const BlockSpec& spec,
                                         std::uint64_t seed) {
    if (block.point_indices.empty()) throw std::invalid_argument("voxel_balance: empty block");

    Vec3 lo = cloud_positions[block.point_indices.front()];
    for (std::uint32_t idx : block.point_indices) {
        for (int k = 0; k < 3; ++k) lo[k] = std::min(lo[k], cloud_positions[idx][k]);
    }
    std::map<std::array<std::int64_t, 3>, std::vector<std::uint32_t>> voxels;
    for (std::uint32_t idx : block.point_indices) {
        const Vec3& p = cloud_positions[idx];
        std::array<std::int64_t, 3> v;
        for (int k = 0; k < 3; ++k) {
            v[k] = static_cast<std::int64_t>(std::floor((p[k] - lo[k]) / spec.voxel_grid));
        }
        voxels[v].push_back(idx);
    }

    double mean = 0.0;
    for (const auto& [v, pts] : voxels) mean += static_cast<double>(pts.size());
    mean /= static_cast<double>(voxels.size());
    const auto avg = std::max<std::int64_t>(1, std::llround(mean));

    std::vector<std::uint32_t> out(block.point_indices);
    Rng rng(seed);
    for (const auto& [v, pts] : voxels) {
        const auto count = static_cast<std::int64_t>(pts.size());
        for (std::int64_t c = count; c < avg; ++c) {
            out.push_back(pts[rng.uniform_int(pts.size())]);
        }
    }
    return out;
}

std::vector<std::vector<std::uint32_t>> sample_fixed(std::vector<std::uint32_t> balanced_indices,
                                                     const BlockSpec& spec, std::uint64_t seed) {
    if (balanced_indices.empty()) throw std::invalid_argument("sample_fixed: empty index list");
    const std::size_t n = static_cast<std::size_t>(spec.n_points);
    Rng rng(seed);
    std::vector<std::vector<std::uint32_t>> out;

    if (balanced_indices.size() < n) {
        std::vector<std::uint32_t> block(balanced_indices);
        while (block.size() < n) {
            block.push_back(balanced_indices[rng.uniform_int(balanced_indices.size())]);
        }
        out.push_back(std::move(block));
        return out;
    }

    rng.shuffle(balanced_indices);
    const std::size_t full = balanced_indices.size() / n;
    for (std::size_t b = 0; b < full; ++b) {
        out.emplace_back(balanced_indices.begin() + static_cast<std::ptrdiff_t>(b * n),
                         balanced_indices.begin() + static_cast<std::ptrdiff_t>((b + 1) * n));
    }
    const std::size_t rem = balanced_indices.size() - full * n;
    if (rem > 0 && static_cast<double>(rem) >= spec.min_fraction * spec.n_points) {
        std::vector<std::uint32_t> block(balanced_indices.end() - static_cast<std::ptrdiff_t>(rem),
                                         balanced_indices.end());
        const std::size_t base = block.size();
        while (block.size() < n) {
            block.push_back(block[rng.uniform_int(base)]);
        }
        out.push_back(std::move(block));
    }
    return out;
}

std::vector<SampledBlock> make_blocks(const LabeledPointCloud& cloud, const BlockSpec& spec_base,
                                      const std::vector<double>& offsets, std::uint64_t seed) {
    if (offsets.empty()) throw std::invalid_argument("make_blocks: no offsets");
    const Vec3 mc = min_corner_of(cloud);

    std::vector<SampledBlock> result;
    Rng master(seed);
    for (double offset : offsets) {
        BlockSpec spec = spec_base;
        spec.offset = offset;
        spec.validate();
        const std::vector<RawBlock> raw = reassign_small(partition(cloud, spec), spec);
        for (const RawBlock& rb : raw) {
            Rng block_rng = master.fork(static_cast<std::uint64_t>(rb.cell_index[0] * 73856093 ^
                                                                   rb.cell_index[1] * 19349663 ^
                                                                   rb.cell_index[2] * 83492791));
            const std::vector<std::uint32_t> balanced =
                voxel_balance(cloud.positions, rb, spec, block_rng.raw());
            for (auto& indices : sample_fixed(balanced, spec, block_rng.raw())) {
                SampledBlock sb;
                sb.offset = offset;
                sb.edge = spec.edge;
                for (int k = 0; k < 3; ++k) {
                    sb.block_origin[k] = mc[k] - offset + static_cast<double>(rb.cell_index[k]) * spec.edge;
                }
                sb.source_indices = std::move(indices);
                sb.positions.reserve(sb.source_indices.size());
                for (std::uint32_t idx : sb.source_indices) {
                    sb.positions.push_back(cloud.positions[idx]);
                    if (cloud.labeled()) sb.labels.push_back(cloud.labels[idx]);
                }
                result.push_back(std::move(sb));
            }
        }
    }
    return result;
}

CoverageError::CoverageError(std::string message, std::vector<std::uint32_t> missing)
    : std::runtime_error(std::move(message)), missing_(std::move(missing)) {}

std::vector<PartLabel> merge_predictions(
    std::size_t cloud_size,
    const std::vector<std::pair<const SampledBlock*, const ClassScores*>>& per_block_scores) {
    std::vector<std::array<double, kNumClasses>> best(cloud_size, {-1.0, -1.0, -1.0});
    for (const auto& [block, scores] : per_block_scores) {
        if (scores->rows.size() != block->source_indices.size()) {
            throw std::invalid_argument("merge_predictions: score rows do not match block size");
        }
        for (std::size_t i = 0; i < block->source_indices.size(); ++i) {
            const std::uint32_t idx = block->source_indices[i];
            if (idx >= cloud_size) throw std::invalid_argument("merge_predictions: index out of range");
            for (int c = 0; c < kNumClasses; ++c) {
                best[idx][c] = std::max(best[idx][c], scores->rows[i][c]);
            }
        }
    }

    std::vector<std::uint32_t> missing;
    std::vector<PartLabel> labels(cloud_size, PartLabel::Flower);
    for (std::size_t i = 0; i < cloud_size; ++i) {
        if (best[i][0] < 0.0) {
            missing.push_back(static_cast<std::uint32_t>(i));
            continue;
        }
        int arg = 0;
        for (int c = 1; c < kNumClasses; ++c) {
            if (best[i][c] > best[i][arg]) arg = c;  // ties keep the lower class code
        }
        labels[i] = static_cast<PartLabel>(arg);
    }
    if (!missing.empty()) {
        throw CoverageError("merge_predictions: " + std::to_string(missing.size()) +
                                " points covered by no block (first missing index " +
                                std::to_string(missing.front()) + ")",
                            std::move(missing));
    }
    return labels;
}

namespace {

template <typename T>
void write_raw(std::ostream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
void read_raw(std::istream& in, T& value) {
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
}

constexpr std::uint32_t kBlockMagic = 0x4B42'5052;  // "RPBK"

}  // namespace

void save_blocks(const std::vector<SampledBlock>& blocks, const BlockSpec& spec,
                 const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write block archive: " + path.string());

    const bool labeled = !blocks.empty() && !blocks.front().labels.empty();
    write_raw(out, kBlockMagic);
    write_raw(out, std::uint32_t{1});
    write_raw(out, spec.edge);
    write_raw(out, spec.offset);
    write_raw(out, std::uint32_t(spec.n_points));
    write_raw(out, spec.min_fraction);
    write_raw(out, spec.voxel_grid);
    write_raw(out, std::uint8_t(labeled ? 1 : 0));
    write_raw(out, std::uint32_t(blocks.size()));
    for (const SampledBlock& b : blocks) {
        if (b.positions.size() != static_cast<std::size_t>(spec.n_points)) {
            throw std::invalid_argument("save_blocks: block size does not match spec.n_points");
        }
        write_raw(out, b.block_origin);
        write_raw(out, b.offset);
        for (std::size_t i = 0; i < b.positions.size(); ++i) {
            for (int k = 0; k < 3; ++k) write_raw(out, static_cast<float>(b.positions[i][k]));
            write_raw(out, std::uint8_t(labeled ? static_cast<std::uint8_t>(b.labels[i]) : 255));
            write_raw(out, b.source_indices[i]);
        }
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::pair<std::vector<SampledBlock>, BlockSpec> load_blocks(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open block archive: " + path.string());

    std::uint32_t magic = 0, version = 0, n_points = 0, count = 0;
    std::uint8_t labeled = 0;
    BlockSpec spec;
    read_raw(in, magic);
    read_raw(in, version);
    if (magic != kBlockMagic || version != 1) {
        throw ParseError(path.string() + ": not a block archive");
    }
    read_raw(in, spec.edge);
    read_raw(in, spec.offset);
    read_raw(in, n_points);
    read_raw(in, spec.min_fraction);
    read_raw(in, spec.voxel_grid);
    read_raw(in, labeled);
    read_raw(in, count);
    spec.n_points = static_cast<int>(n_points);

    std::vector<SampledBlock> blocks(count);
    for (SampledBlock& b : blocks) {
        b.edge = spec.edge;
        read_raw(in, b.block_origin);
        read_raw(in, b.offset);
        b.positions.resize(n_points);
        b.source_indices.resize(n_points);
        if (labeled) b.labels.resize(n_points);
        for (std::uint32_t i = 0; i < n_points; ++i) {
            for (int k = 0; k < 3; ++k) {
                float v = 0.f;
                read_raw(in, v);
                b.positions[i][k] = v;
            }
            std::uint8_t label = 0;
            read_raw(in, label);
            if (labeled) b.labels[i] = static_cast<PartLabel>(label);
            read_raw(in, b.source_indices[i]);
        }
    }
    if (!in) throw ParseError(path.string() + ": truncated block archive");
    return {std::move(blocks), spec};
}

}  // namespace rosepoint
