#include "resformer/metrics.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace resformer {

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
    if (classes.empty()) classes.resize(o.classes.size());
    if (classes.size() != o.classes.size()) throw std::invalid_argument("merging confusion counts of different class counts");
    for (std::size_t c = 0; c < classes.size(); ++c) classes[c] += o.classes[c];
    return *this;
}

namespace {
std::optional<double> ratio(std::int64_t num, std::int64_t den) {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace

MicroMetrics classification_micro_metrics(const ConfusionCounts& counts) {
    ClassCounts s;
    for (const auto& c : counts.classes) s += c;
    return {ratio(s.tp + s.tn, s.total()), ratio(s.tp, s.tp + s.fn), ratio(s.tn, s.tn + s.fp)};
}

ConfusionCounts confusion_from_predictions(std::span<const double> scores, std::span<const int> labels, std::size_t n_classes,
                                           double threshold) {
    if (!(threshold > 0 && threshold < 1)) throw std::invalid_argument("threshold must lie in (0, 1)");
    if (scores.size() != labels.size() || (n_classes > 0 && scores.size() % n_classes != 0))
        throw std::invalid_argument("scores and labels must both hold items x classes values");
    ConfusionCounts counts(n_classes);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool predicted = scores[i] >= threshold;
        const bool actual = labels[i] != 0;
        auto& c = counts.classes[i % n_classes];
        if (predicted && actual) ++c.tp;
        else if (predicted) ++c.fp;
        else if (actual) ++c.fn;
        else ++c.tn;
    }
    return counts;
}

double dice_coefficient(const OverlapCounts& c) {
    const std::int64_t den = c.ground_truth + c.predicted;
    return den == 0 ? 1.0 : 2.0 * static_cast<double>(c.intersection) / static_cast<double>(den);
}

double jaccard_index(const OverlapCounts& c) {
    const std::int64_t den = c.union_size();
    return den == 0 ? 1.0 : static_cast<double>(c.intersection) / static_cast<double>(den);
}

std::vector<OverlapCounts> overlap_counts(std::span<const std::uint8_t> ground_truth, std::span<const std::uint8_t> predicted,
                                          int n_classes) {
    if (ground_truth.size() != predicted.size())
        throw std::invalid_argument("ground-truth and predicted masks differ in size (" + std::to_string(ground_truth.size()) +
                                    " vs " + std::to_string(predicted.size()) + ")");
    std::vector<OverlapCounts> counts(static_cast<std::size_t>(n_classes));
    for (std::size_t i = 0; i < ground_truth.size(); ++i) {
        const int g = ground_truth[i], p = predicted[i];
        if (g > n_classes || p > n_classes) throw std::invalid_argument("mask label exceeds class count");
        if (g > 0) ++counts[static_cast<std::size_t>(g - 1)].ground_truth;
        if (p > 0) ++counts[static_cast<std::size_t>(p - 1)].predicted;
        if (g > 0 && g == p) ++counts[static_cast<std::size_t>(g - 1)].intersection;
    }
    return counts;
}

SegOverlapMetrics overlap_metrics_from_counts(const std::vector<OverlapCounts>& counts) {
    SegOverlapMetrics m;
    for (const auto& c : counts) {
        m.dsc.push_back(dice_coefficient(c));
        m.ji.push_back(jaccard_index(c));
        m.mean_dsc += m.dsc.back();
        m.mean_ji += m.ji.back();
    }
    if (!counts.empty()) {
        m.mean_dsc /= static_cast<double>(counts.size());
        m.mean_ji /= static_cast<double>(counts.size());
    }
    return m;
}

SegOverlapMetrics seg_overlap_metrics(std::span<const std::uint8_t> ground_truth, std::span<const std::uint8_t> predicted,
                                      int n_classes) {
    return overlap_metrics_from_counts(overlap_counts(ground_truth, predicted, n_classes));
}

SegOverlapAccumulator::SegOverlapAccumulator(int n_classes, Aggregation mode)
    : n_classes_(n_classes),
      mode_(mode),
      pooled_(static_cast<std::size_t>(n_classes)),
      dsc_sum_(static_cast<std::size_t>(n_classes), 0.0),
      ji_sum_(static_cast<std::size_t>(n_classes), 0.0) {}

void SegOverlapAccumulator::add(std::span<const std::uint8_t> ground_truth, std::span<const std::uint8_t> predicted) {
    const auto counts = overlap_counts(ground_truth, predicted, n_classes_);
    for (std::size_t c = 0; c < counts.size(); ++c) {
        pooled_[c] += counts[c];
        dsc_sum_[c] += dice_coefficient(counts[c]);
        ji_sum_[c] += jaccard_index(counts[c]);
    }
    ++images_;
}

SegOverlapMetrics SegOverlapAccumulator::result() const {
    if (mode_ == Aggregation::Pooled || images_ == 0) return overlap_metrics_from_counts(pooled_);
    SegOverlapMetrics m;
    const double n = static_cast<double>(images_);
    for (std::size_t c = 0; c < dsc_sum_.size(); ++c) {
        m.dsc.push_back(dsc_sum_[c] / n);
        m.ji.push_back(ji_sum_[c] / n);
        m.mean_dsc += m.dsc.back();
        m.mean_ji += m.ji.back();
    }
    if (!dsc_sum_.empty()) {
        m.mean_dsc /= static_cast<double>(dsc_sum_.size());
        m.mean_ji /= static_cast<double>(dsc_sum_.size());
    }
    return m;
}

std::map<std::string, double> metrics_report(const MicroMetrics& cls, const SegOverlapMetrics& seg) {
    std::map<std::string, double> r;
    if (cls.accuracy) r["micro_accuracy"] = *cls.accuracy;
    if (cls.sensitivity) r["micro_sensitivity"] = *cls.sensitivity;
    if (cls.specificity) r["micro_specificity"] = *cls.specificity;
    for (std::size_t c = 0; c < seg.dsc.size(); ++c) {
        r["dsc_class" + std::to_string(c + 1)] = seg.dsc[c];
        r["ji_class" + std::to_string(c + 1)] = seg.ji[c];
    }
    r["mean_dsc"] = seg.mean_dsc;
    r["mean_ji"] = seg.mean_ji;
    return r;
}

std::string format_report(const std::map<std::string, double>& report) {
    std::ostringstream os;
    char buf[64];
    for (const auto& [k, v] : report) {
        std::snprintf(buf, sizeof buf, "%.4f", v);
        os << k << " = " << buf << '\n';
    }
    return os.str();
}

}  // namespace resformer
