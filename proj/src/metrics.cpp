#include "rosepoint/metrics.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rosepoint {

void ConfusionCounts::add(PartLabel pred, PartLabel gt) {
    const int p = static_cast<int>(pred);
    const int g = static_cast<int>(gt);
    if (p == g) {
        ++tp[p];
    } else {
        ++fp[p];
        ++fn[g];
    }
    ++total;
}

void ConfusionCounts::merge(const ConfusionCounts& other) {
    for (int c = 0; c < kNumClasses; ++c) {
        tp[c] += other.tp[c];
        fp[c] += other.fp[c];
        fn[c] += other.fn[c];
    }
    total += other.total;
}

MetricsReport metrics_from_counts(const ConfusionCounts& counts) {
    auto ratio = [](std::int64_t num, std::int64_t den) {
        return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
    };
    MetricsReport report;
    std::int64_t correct = 0;
    double iou_sum = 0.0;
    for (int c = 0; c < kNumClasses; ++c) {
        ClassMetrics& m = report.per_class[c];
        m.re = ratio(counts.tp[c], counts.tp[c] + counts.fn[c]);
        m.pr = ratio(counts.tp[c], counts.tp[c] + counts.fp[c]);
        m.iou = ratio(counts.tp[c], counts.tp[c] + counts.fn[c] + counts.fp[c]);
        iou_sum += m.iou;
        correct += counts.tp[c];
    }
    report.miou = iou_sum / kNumClasses;
    report.acc = counts.total == 0 ? 1.0 : static_cast<double>(correct) / static_cast<double>(counts.total);
    return report;
}

MetricsReport compute_metrics(const std::vector<PartLabel>& pred, const std::vector<PartLabel>& gt) {
    if (pred.size() != gt.size()) {
        throw std::invalid_argument("compute_metrics: pred has " + std::to_string(pred.size()) +
                                    " labels, gt has " + std::to_string(gt.size()));
    }
    if (pred.empty()) throw std::invalid_argument("compute_metrics: empty input");
    ConfusionCounts counts;
    for (std::size_t i = 0; i < pred.size(); ++i) counts.add(pred[i], gt[i]);
    return metrics_from_counts(counts);
}

MetricsReport macro_mean(const std::vector<MetricsReport>& reports) {
    if (reports.empty()) throw std::invalid_argument("macro_mean: no reports");
    MetricsReport mean;
    for (const MetricsReport& r : reports) {
        for (int c = 0; c < kNumClasses; ++c) {
            mean.per_class[c].re += r.per_class[c].re;
            mean.per_class[c].pr += r.per_class[c].pr;
            mean.per_class[c].iou += r.per_class[c].iou;
        }
        mean.miou += r.miou;
        mean.acc += r.acc;
    }
    const double n = static_cast<double>(reports.size());
    for (int c = 0; c < kNumClasses; ++c) {
        mean.per_class[c].re /= n;
        mean.per_class[c].pr /= n;
        mean.per_class[c].iou /= n;
    }
    mean.miou /= n;
    mean.acc /= n;
    return mean;
}

std::array<double, kNumClasses> class_distribution(const std::vector<PartLabel>& labels) {
    if (labels.empty()) throw std::invalid_argument("class_distribution: empty input");
    std::array<double, kNumClasses> fractions{};
    for (PartLabel l : labels) fractions[static_cast<int>(l)] += 1.0;
    for (double& f : fractions) f /= static_cast<double>(labels.size());
    return fractions;
}

std::string metrics_to_csv(const MetricsReport& report) {
    std::ostringstream out;
    out.precision(6);
    out << std::fixed;
    out << "class,recall,precision,iou\n";
    for (int c = 0; c < kNumClasses; ++c) {
        const ClassMetrics& m = report.per_class[c];
        out << to_string(static_cast<PartLabel>(c)) << ',' << m.re << ',' << m.pr << ',' << m.iou << '\n';
    }
    out << "miou," << report.miou << ",,\n";
    out << "acc," << report.acc << ",,\n";
    return out.str();
}

void save_metrics_csv(const MetricsReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write metrics file: " + path.string());
    out << metrics_to_csv(report);
}

}  // namespace rosepoint
