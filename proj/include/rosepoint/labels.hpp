#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace rosepoint {

// Coarse structural classes, fixed codes used in files and reports.
enum class PartLabel : std::uint8_t { Flower = 0, Leaf = 1, Stem = 2 };

inline constexpr int kNumClasses = 3;

// Fine-grained organ taxonomy of the synthetic generator.
enum class OrganLabel : std::uint8_t {
    Leaflet = 0,
    Petiole = 1,
    Stem = 2,
    Stipule = 3,
    Petal = 4,
    Sepal = 5,
    Receptacle = 6
};

inline constexpr int kNumOrgans = 7;

const char* to_string(PartLabel label);
const char* to_string(OrganLabel organ);

// Petiole/Stem/Stipule -> Stem; Petal/Sepal/Receptacle -> Flower; Leaflet -> Leaf.
PartLabel merge_organ_label(OrganLabel organ);
std::vector<PartLabel> merge_organ_labels(const std::vector<OrganLabel>& fine);

}  // namespace rosepoint
