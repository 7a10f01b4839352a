#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace resformer {

struct ClassCounts {
    std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;

    std::int64_t total() const { return tp + tn + fp + fn; }
    ClassCounts& operator+=(const ClassCounts& o) {
        tp += o.tp;
        tn += o.tn;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
    bool operator==(const ClassCounts&) const = default;
};

/// Per-class confusion tallies; merging partial tallies is plain addition.
struct ConfusionCounts {
    std::vector<ClassCounts> classes;

    ConfusionCounts() = default;
    explicit ConfusionCounts(std::size_t n) : classes(n) {}
    ConfusionCounts& operator+=(const ConfusionCounts& o);
    bool operator==(const ConfusionCounts&) const = default;
};

/// Micro-averaged scores. A metric with a zero denominator is empty.
struct MicroMetrics {
    std::optional<double> accuracy;
    std::optional<double> sensitivity;
    std::optional<double> specificity;
};

MicroMetrics classification_micro_metrics(const ConfusionCounts& counts);

/// Binarizes scores[i * n + c] at `threshold` and tallies against binary labels.
ConfusionCounts confusion_from_predictions(std::span<const double> scores, std::span<const int> labels, std::size_t n_classes,
                                           double threshold = 0.5);

/// Pixel-set sizes for one foreground class.
struct OverlapCounts {
    std::int64_t intersection = 0;
    std::int64_t ground_truth = 0;
    std::int64_t predicted = 0;

    std::int64_t union_size() const { return ground_truth + predicted - intersection; }
    OverlapCounts& operator+=(const OverlapCounts& o) {
        intersection += o.intersection;
        ground_truth += o.ground_truth;
        predicted += o.predicted;
        return *this;
    }
};

/// 2|GT n PR| / (|GT| + |PR|); 1 when the class is absent from both.
double dice_coefficient(const OverlapCounts& c);
/// |GT n PR| / |GT u PR|; 1 when the class is absent from both.
double jaccard_index(const OverlapCounts& c);

struct SegOverlapMetrics {
    std::vector<double> dsc;  // per foreground class 1..n
    std::vector<double> ji;
    double mean_dsc = 0;
    double mean_ji = 0;
};

/// Counts for foreground classes 1..n of one ground-truth / prediction mask pair.
std::vector<OverlapCounts> overlap_counts(std::span<const std::uint8_t> ground_truth, std::span<const std::uint8_t> predicted,
                                          int n_classes);
SegOverlapMetrics seg_overlap_metrics(std::span<const std::uint8_t> ground_truth, std::span<const std::uint8_t> predicted,
                                      int n_classes);
SegOverlapMetrics overlap_metrics_from_counts(const std::vector<OverlapCounts>& counts);

/// Accumulates segmentation overlap over a dataset. Pooled mode sums pixel
/// counts before forming ratios; per-image mode averages per-image ratios.
class SegOverlapAccumulator {
public:
    enum class Aggregation { Pooled, PerImage };

    SegOverlapAccumulator(int n_classes, Aggregation mode = Aggregation::Pooled);

    void add(std::span<const std::uint8_t> ground_truth, std::span<const std::uint8_t> predicted);
    SegOverlapMetrics result() const;
    std::size_t images() const { return images_; }

private:
    int n_classes_;
    Aggregation mode_;
    std::size_t images_ = 0;
    std::vector<OverlapCounts> pooled_;
    std::vector<double> dsc_sum_, ji_sum_;
};

/// Flat metric name -> value map, e.g. "micro_accuracy", "dsc_class1", "mean_dsc".
/// Undefined metrics are omitted.
std::map<std::string, double> metrics_report(const MicroMetrics& cls, const SegOverlapMetrics& seg);
/// "key = value" lines with four decimals.
std::string format_report(const std::map<std::string, double>& report);

}  // namespace resformer
