#include "resformer/heads.hpp"

#include "ops_common.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace resformer {

using detail::grad_of;

template <typename S>
Tensor<S> classification_head(const Tensor<S>& level3, const Tensor<S>& level4, const ClassificationHead<S>& p) {
    detail::require_rank(level3.shape(), 4, "classification_head", "level-3 features");
    detail::require_rank(level4.shape(), 4, "classification_head", "level-4 features");
    const Index expected = p.fc1.weight.dim(1);
    if (level3.dim(1) + level4.dim(1) != expected)
        throw ShapeError("classification_head: axis 1 (channels) " + std::to_string(level3.dim(1)) + " + " +
                         std::to_string(level4.dim(1)) + " does not match head input " + std::to_string(expected));
    const Tensor<S> pooled = concat<S>({global_avg_pool(level3), global_avg_pool(level4)}, 1);
    return p.fc2(relu(p.fc1(pooled)));
}

template <typename S>
Tensor<S> segmentation_head(const Tensor<S>& features, const SegmentationHead<S>& p) {
    return softmax(p.conv(features), 1);
}

template <typename S>
Tensor<S> weighted_multilabel_loss(const Tensor<S>& logits, const Tensor<S>& labels, std::span<const double> class_weights) {
    detail::require_rank(logits.shape(), 2, "weighted_multilabel_loss", "logits");
    if (labels.shape() != logits.shape())
        throw ShapeError("weighted_multilabel_loss: labels " + shape_str(labels.shape()) + " vs logits " +
                         shape_str(logits.shape()));
    const Index B = logits.dim(0), n = logits.dim(1);
    std::vector<double> w(class_weights.begin(), class_weights.end());
    if (w.empty()) w.assign(static_cast<std::size_t>(n), 1.0);
    if (static_cast<Index>(w.size()) != n)
        throw ShapeError("weighted_multilabel_loss: " + std::to_string(w.size()) + " class weights for " + std::to_string(n) +
                         " classes");
    for (double v : w)
        if (!(v > 0)) throw std::invalid_argument("weighted_multilabel_loss: class weights must be positive");
    const auto y = labels.values();
    for (Index i = 0; i < B * n; ++i)
        if (y[i] != S(0) && y[i] != S(1))
            throw std::invalid_argument("weighted_multilabel_loss: label at row " + std::to_string(i / n) + ", class " +
                                        std::to_string(i % n) + " is not 0 or 1");
    const auto z = logits.values();
    const S floor = S(kLogClamp);
    const S count = S(B * n);
    S total = 0;
    for (Index i = 0; i < B * n; ++i) {
        const S p = S(1) / (S(1) + std::exp(-z[i]));
        const S q = S(1) / (S(1) + std::exp(z[i]));
        const S wc = S(w[static_cast<std::size_t>(i % n)]);
        total += wc * (-y[i] * std::log(std::max(p, floor)) - (S(1) - y[i]) * std::log(std::max(q, floor)));
    }
    return detail::make_result<S>(Shape{1}, {total / count}, {logits}, [logits, labels, w, n, count](TensorNode<S>& self) {
        auto& dz = grad_of(logits);
        const auto z = logits.values();
        const auto y = labels.values();
        const S g = self.grad[0] / count;
        for (std::size_t i = 0; i < z.size(); ++i) {
            const S p = S(1) / (S(1) + std::exp(-z[i]));
            const S wc = S(w[i % static_cast<std::size_t>(n)]);
            // Unclamped logit-domain gradient: a saturated wrong logit keeps a
            // pull of magnitude ~1 instead of being frozen by the clamp.
            dz[i] += g * wc * (p - y[i]);
        }
    });
}

template <typename S>
Tensor<S> dice_loss(const Tensor<S>& probs, const Tensor<S>& target_onehot) {
    detail::require_rank(probs.shape(), 4, "dice_loss", "probabilities");
    if (target_onehot.shape() != probs.shape())
        throw ShapeError("dice_loss: target " + shape_str(target_onehot.shape()) + " vs probabilities " +
                         shape_str(probs.shape()));
    const Index B = probs.dim(0), K = probs.dim(1), HW = probs.dim(2) * probs.dim(3);
    if (K < 2) throw ShapeError("dice_loss: axis 1 needs background plus at least one foreground class");
    const S smooth = S(kDiceSmooth);
    const auto p = probs.values();
    const auto g = target_onehot.values();
    // Per (image, foreground class): intersection and denominator.
    std::vector<S> inter(static_cast<std::size_t>(B * K), S(0)), denom(static_cast<std::size_t>(B * K), S(0));
    S total = 0;
    for (Index b = 0; b < B; ++b)
        for (Index c = 1; c < K; ++c) {
            const Index off = (b * K + c) * HW;
            S i = 0, sp = 0, sg = 0;
            for (Index k = 0; k < HW; ++k) {
                i += p[off + k] * g[off + k];
                sp += p[off + k];
                sg += g[off + k];
            }
            inter[b * K + c] = i;
            denom[b * K + c] = sp + sg + smooth;
            total += S(1) - (S(2) * i + smooth) / (sp + sg + smooth);
        }
    const S count = S(B * (K - 1));
    return detail::make_result<S>(Shape{1}, {total / count}, {probs},
                                  [probs, target_onehot, inter = std::move(inter), denom = std::move(denom), B, K, HW, count,
                                   smooth](TensorNode<S>& self) {
        auto& dp = grad_of(probs);
        const auto g = target_onehot.values();
        const S scale = self.grad[0] / count;
        for (Index b = 0; b < B; ++b)
            for (Index c = 1; c < K; ++c) {
                const S num = S(2) * inter[b * K + c] + smooth;
                const S den = denom[b * K + c];
                const Index off = (b * K + c) * HW;
                for (Index k = 0; k < HW; ++k) dp[off + k] -= scale * (S(2) * g[off + k] * den - num) / (den * den);
            }
    });
}

void LossWeights::validate(Index n_classes) const {
    if (!(lambda_cls >= 0) || !(lambda_seg >= 0)) throw std::invalid_argument("loss weights must be non-negative");
    if (!class_weights.empty() && static_cast<Index>(class_weights.size()) != n_classes)
        throw std::invalid_argument("class weight count does not match n_classes");
    for (double w : class_weights)
        if (!(w > 0)) throw std::invalid_argument("class weights must be positive");
}

template <typename S>
LossTerms<S> combined_loss(const MtlOutput<S>& out, const Tensor<S>& cls_labels, const Tensor<S>& seg_onehot,
                           const LossWeights& w) {
    w.validate(out.cls_logits.dim(1));
    LossTerms<S> terms;
    terms.classification = weighted_multilabel_loss(out.cls_logits, cls_labels, w.class_weights);
    terms.segmentation = dice_loss(out.seg_probs, seg_onehot);
    terms.total = add(scale(terms.classification, S(w.lambda_cls)), scale(terms.segmentation, S(w.lambda_seg)));
    return terms;
}

std::vector<double> inverse_frequency_weights(std::span<const Index> positives, Index samples) {
    std::vector<double> w;
    w.reserve(positives.size());
    for (Index p : positives) w.push_back(static_cast<double>(std::max<Index>(samples, 1)) / static_cast<double>(std::max<Index>(p, 1)));
    if (w.empty()) return w;
    const double mean = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
    for (double& v : w) v /= mean;
    return w;
}

template <typename S>
Tensor<S> one_hot(std::span<const int> labels, Index batch, Index height, Index width, Index classes) {
    const Index HW = height * width;
    if (static_cast<Index>(labels.size()) != batch * HW) throw ShapeError("one_hot: label count does not match shape");
    Tensor<S> out(Shape{batch, classes, height, width});
    auto v = out.mutable_values();
    for (Index b = 0; b < batch; ++b)
        for (Index k = 0; k < HW; ++k) {
            const int c = labels[static_cast<std::size_t>(b * HW + k)];
            if (c < 0 || c >= classes) throw std::invalid_argument("one_hot: label " + std::to_string(c) + " out of range");
            v[static_cast<std::size_t>((b * classes + c) * HW + k)] = S(1);
        }
    return out;
}

#define INSTANTIATE(S)                                                                                              \
    template Tensor<S> classification_head<S>(const Tensor<S>&, const Tensor<S>&, const ClassificationHead<S>&);   \
    template Tensor<S> segmentation_head<S>(const Tensor<S>&, const SegmentationHead<S>&);                         \
    template Tensor<S> weighted_multilabel_loss<S>(const Tensor<S>&, const Tensor<S>&, std::span<const double>);    \
    template Tensor<S> dice_loss<S>(const Tensor<S>&, const Tensor<S>&);                                            \
    template LossTerms<S> combined_loss<S>(const MtlOutput<S>&, const Tensor<S>&, const Tensor<S>&, const LossWeights&); \
    template Tensor<S> one_hot<S>(std::span<const int>, Index, Index, Index, Index);
RESFORMER_FOR_EACH_SCALAR(INSTANTIATE)

}  // namespace resformer
