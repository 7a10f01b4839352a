#pragma once

#include "resformer/layers.hpp"

#include <span>
#include <vector>

namespace resformer {

/// GAP of the two deepest encoder levels, concatenated, then FC -> ReLU -> FC.
template <typename S>
struct ClassificationHead {
    Linear<S> fc1, fc2;

    ClassificationHead() = default;
    ClassificationHead(Index in_features, Index hidden, Index n_classes, Rng& rng)
        : fc1(in_features, hidden, rng), fc2(hidden, n_classes, rng) {}

    template <typename V>
    void visit(V& v, const std::string& prefix) {
        fc1.visit(v, scoped(prefix, "fc1"));
        fc2.visit(v, scoped(prefix, "fc2"));
    }
};

/// [B, C3, ., .] and [B, C4, ., .] -> logits [B, n].
template <typename S>
Tensor<S> classification_head(const Tensor<S>& level3, const Tensor<S>& level4, const ClassificationHead<S>& p);

/// 1x1 conv to n+1 channels (background first) followed by softmax over channels.
template <typename S>
struct SegmentationHead {
    Conv2d<S> conv;

    SegmentationHead() = default;
    SegmentationHead(Index in_channels, Index n_classes, Rng& rng) : conv(in_channels, n_classes + 1, 1, {1, 0, 1}, true, rng) {}

    template <typename V>
    void visit(V& v, const std::string& prefix) {
        conv.visit(v, scoped(prefix, "conv"));
    }
};

template <typename S>
Tensor<S> segmentation_head(const Tensor<S>& features, const SegmentationHead<S>& p);

template <typename S>
struct MtlOutput {
    Tensor<S> cls_logits;  // [B, n]
    Tensor<S> seg_probs;   // [B, n+1, H, W]
};

/// Clamp floor for the log arguments of the classification loss.
inline constexpr double kLogClamp = 1e-7;
/// Additive smoothing of the soft Dice ratio.
inline constexpr double kDiceSmooth = 1.0;

/// Mean over batch and classes of w_c * BCE(sigmoid(logit), label).
/// Labels must be exactly 0 or 1; weights must be positive, one per class.
template <typename S>
Tensor<S> weighted_multilabel_loss(const Tensor<S>& logits, const Tensor<S>& labels, std::span<const double> class_weights);

/// Soft Dice loss averaged over images and foreground classes (channel 0 is background).
template <typename S>
Tensor<S> dice_loss(const Tensor<S>& probs, const Tensor<S>& target_onehot);

struct LossWeights {
    double lambda_cls = 0.25;
    double lambda_seg = 1.0;
    // Empty means all ones.
    std::vector<double> class_weights;

    void validate(Index n_classes) const;
};

template <typename S>
struct LossTerms {
    Tensor<S> total;
    Tensor<S> classification;
    Tensor<S> segmentation;
};

/// lambda_cls * weighted_multilabel_loss + lambda_seg * dice_loss.
template <typename S>
LossTerms<S> combined_loss(const MtlOutput<S>& out, const Tensor<S>& cls_labels, const Tensor<S>& seg_onehot,
                           const LossWeights& w);

/// Inverse positive frequency per class, normalized to mean 1. Classes
/// without positives are treated as having one.
std::vector<double> inverse_frequency_weights(std::span<const Index> positives, Index samples);

/// [B, H, W] label map -> one-hot [B, classes, H, W].
template <typename S>
Tensor<S> one_hot(std::span<const int> labels, Index batch, Index height, Index width, Index classes);

}  // namespace resformer
