#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "rosepoint/cloud.hpp"
#include "rosepoint/labels.hpp"

namespace rosepoint {

struct BlockSpec {
    double edge = 10.0;         // cm
    double offset = 0.0;        // cm, shift applied before cell assignment
    int n_points = 4096;
    double min_fraction = 0.10; // blocks below min_fraction*n_points get reassigned
    double voxel_grid = 0.2;    // cm

    void validate() const;
};

struct RawBlock {
    std::array<std::int64_t, 3> cell_index{};
    std::vector<std::uint32_t> point_indices;
};

struct SampledBlock {
    std::vector<Vec3> positions;               // source coordinates, n_points rows
    std::vector<std::uint32_t> source_indices; // into the source cloud, repetitions allowed
    std::vector<PartLabel> labels;             // empty for unlabeled clouds
    Vec3 block_origin{};                       // min corner of the cell in source coordinates
    double offset = 0.0;                       // partition offset this block came from
    double edge = 10.0;                        // cm, cube edge the block was cut with
};

// Per-point class probabilities, one row per block point.
struct ClassScores {
    std::vector<std::array<double, kNumClasses>> rows;
};

// Cell of point p = floor((p - min_corner + offset*(1,1,1)) / edge); every
// point lands in exactly one block; empty cells are omitted.
std::vector<RawBlock> partition(const LabeledPointCloud& cloud, const BlockSpec& spec);

// Dissolves blocks below min_fraction*n_points into the nearest surviving
// block (Euclidean on cell centers, ties by lexicographic cell index).
std::vector<RawBlock> reassign_small(std::vector<RawBlock> blocks, const BlockSpec& spec);

// Duplicates points of sparse voxels up to the mean non-empty voxel count.
std::vector<std::uint32_t> voxel_balance(const std::vector<Vec3>& cloud_positions,
                                         const RawBlock& block, const BlockSpec& spec,
                                         std::uint64_t seed);

// Cuts the balanced index list into fixed-size blocks of exactly n_points.
std::vector<std::vector<std::uint32_t>> sample_fixed(std::vector<std::uint32_t> balanced_indices,
                                                     const BlockSpec& spec, std::uint64_t seed);

// Full pipeline partition -> reassign_small -> voxel_balance -> sample_fixed
// for each requested offset.
std::vector<SampledBlock> make_blocks(const LabeledPointCloud& cloud, const BlockSpec& spec_base,
                                      const std::vector<double>& offsets, std::uint64_t seed);

class CoverageError : public std::runtime_error {
public:
    CoverageError(std::string message, std::vector<std::uint32_t> missing);
    const std::vector<std::uint32_t>& missing() const { return missing_; }

private:
    std::vector<std::uint32_t> missing_;
};

// Per source point, element-wise max over all collected probability rows, then
// argmax; ties broken by lowest class code.
std::vector<PartLabel> merge_predictions(
    std::size_t cloud_size,
    const std::vector<std::pair<const SampledBlock*, const ClassScores*>>& per_block_scores);

// Binary block archive, one file per cloud+offset, little-endian.
void save_blocks(const std::vector<SampledBlock>& blocks, const BlockSpec& spec,
                 const std::filesystem::path& path);
std::pair<std::vector<SampledBlock>, BlockSpec> load_blocks(const std::filesystem::path& path);

}  // namespace rosepoint
