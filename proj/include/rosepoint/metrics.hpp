#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "rosepoint/labels.hpp"

namespace rosepoint {

struct ConfusionCounts {
    std::array<std::int64_t, kNumClasses> tp{};
    std::array<std::int64_t, kNumClasses> fp{};
    std::array<std::int64_t, kNumClasses> fn{};
    std::int64_t total = 0;

    void add(PartLabel pred, PartLabel gt);
    void merge(const ConfusionCounts& other);
};

struct ClassMetrics {
    double re = 0.0;
    double pr = 0.0;
    double iou = 0.0;
};

struct MetricsReport {
    std::array<ClassMetrics, kNumClasses> per_class{};
    double miou = 0.0;
    double acc = 0.0;
};

// Re = TP/(TP+FN), Pr = TP/(TP+FP), IoU = TP/(TP+FN+FP), MIoU = mean IoU,
// Acc = correct/total. Any 0/0 ratio is defined as 1 so that classes absent
// from both pred and gt do not poison MIoU.
MetricsReport compute_metrics(const std::vector<PartLabel>& pred, const std::vector<PartLabel>& gt);
MetricsReport metrics_from_counts(const ConfusionCounts& counts);

// Macro mean over per-cloud reports (per-class metrics and summaries averaged).
MetricsReport macro_mean(const std::vector<MetricsReport>& reports);

// Class fractions ordered (Flower, Leaf, Stem); sums to 1.
std::array<double, kNumClasses> class_distribution(const std::vector<PartLabel>& labels);

// CSV with header "class,recall,precision,iou" plus "miou" and "acc" rows.
std::string metrics_to_csv(const MetricsReport& report);
void save_metrics_csv(const MetricsReport& report, const std::filesystem::path& path);

}  // namespace rosepoint
