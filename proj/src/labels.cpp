#include "rosepoint/labels.hpp"

namespace rosepoint {

const char* to_string(PartLabel label) {
    switch (label) {
        case PartLabel::Flower: return "flower";
        case PartLabel::Leaf: return "leaf";
        case PartLabel::Stem: return "stem";
    }
    return "?";
}

const char* to_string(OrganLabel organ) {
    switch (organ) {
        case OrganLabel::Leaflet: return "leaflet";
        case OrganLabel::Petiole: return "petiole";
        case OrganLabel::Stem: return "stem";
        case OrganLabel::Stipule: return "stipule";
        case OrganLabel::Petal: return "petal";
        case OrganLabel::Sepal: return "sepal";
        case OrganLabel::Receptacle: return "receptacle";
    }
    return "?";
}

PartLabel merge_organ_label(OrganLabel organ) {
    switch (organ) {
        case OrganLabel::Leaflet:
            return PartLabel::Leaf;
        case OrganLabel::Petiole:
        case OrganLabel::Stem:
        case OrganLabel::Stipule:
            return PartLabel::Stem;
        case OrganLabel::Petal:
        case OrganLabel::Sepal:
        case OrganLabel::Receptacle:
            return PartLabel::Flower;
    }
    return PartLabel::Leaf;
}

std::vector<PartLabel> merge_organ_labels(const std::vector<OrganLabel>& fine) {
    std::vector<PartLabel> coarse;
    coarse.reserve(fine.size());
    for (OrganLabel organ : fine) coarse.push_back(merge_organ_label(organ));
    return coarse;
}

}  // namespace rosepoint
