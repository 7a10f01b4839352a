#pragma once

#include "resformer/tensor.hpp"

#include <optional>
#include <vector>

namespace resformer {

enum class Mode { Train, Eval };

/// Running statistics of a batch-norm layer. Starts at mean 0, variance 1.
template <typename Scalar>
struct BatchNormStats {
    std::vector<Scalar> mean;
    std::vector<Scalar> var;

    BatchNormStats() = default;
    explicit BatchNormStats(Index channels)
        : mean(static_cast<std::size_t>(channels), Scalar(0)),
          var(static_cast<std::size_t>(channels), Scalar(1)) {}
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kLayerNormEps = 1e-5;

struct Conv2dOptions {
    Index stride = 1;
    Index padding = 0;
    Index dilation = 1;
};

// ---- elementwise, with broadcasting over singleton axes of equal-rank operands

template <typename S> Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> scale(const Tensor<S>& a, S factor);

template <typename S> Tensor<S> relu(const Tensor<S>& x);
/// Exact erf-based GELU.
template <typename S> Tensor<S> gelu(const Tensor<S>& x);
template <typename S> Tensor<S> sigmoid(const Tensor<S>& x);
/// Max-subtracted softmax along `axis`.
template <typename S> Tensor<S> softmax(const Tensor<S>& x, int axis);

// ---- reductions

template <typename S> Tensor<S> sum(const Tensor<S>& x);
template <typename S> Tensor<S> mean(const Tensor<S>& x);
/// Mean along one axis, kept as a singleton.
template <typename S> Tensor<S> mean_axis(const Tensor<S>& x, int axis);
/// Max along one axis, kept as a singleton. Ties route gradient to the first maximum.
template <typename S> Tensor<S> max_axis(const Tensor<S>& x, int axis);

// ---- layout

template <typename S> Tensor<S> reshape(const Tensor<S>& x, Shape shape);
template <typename S> Tensor<S> permute(const Tensor<S>& x, const std::vector<int>& dims);
template <typename S> Tensor<S> concat(const std::vector<Tensor<S>>& xs, int axis);
/// Elements [start, start+length) along `axis`.
template <typename S> Tensor<S> narrow(const Tensor<S>& x, int axis, Index start, Index length);
/// Appends `count` zeros at the end of `axis`.
template <typename S> Tensor<S> pad_end(const Tensor<S>& x, int axis, Index count);
/// Toroidal roll: out[i] = x[(i - shift) mod n] on each listed axis.
template <typename S> Tensor<S> roll(const Tensor<S>& x, const std::vector<int>& axes, const std::vector<Index>& shifts);
/// out[i] = table[indices[i]] for a 1-D table; result has `shape`.
template <typename S> Tensor<S> gather(const Tensor<S>& table, const std::vector<Index>& indices, Shape shape);

// ---- linear algebra

/// Batched matmul over rank-3 operands [batch, rows, cols].
template <typename S> Tensor<S> bmm(const Tensor<S>& a, const Tensor<S>& b, bool transpose_a = false, bool transpose_b = false);
/// Affine map along the last axis: x W^T + b. Weight is [Dout, Din].
template <typename S> Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias);

// ---- image ops on [B, C, H, W]

/// Zero-padded cross-correlation. `bias` may be undefined.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias, Conv2dOptions opt = {});
template <typename S>
Tensor<S> batch_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, BatchNormStats<S>& stats, Mode mode,
                     S eps = S(kBatchNormEps), S momentum = S(kBatchNormMomentum));
/// Normalizes over the last axis.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps = S(kLayerNormEps));
template <typename S> Tensor<S> max_pool2d(const Tensor<S>& x, Index kernel, Index stride);
/// [B, C, H, W] -> [B, C].
template <typename S> Tensor<S> global_avg_pool(const Tensor<S>& x);
/// Bilinear 2x upsampling, half-pixel (align_corners = false) sampling.
template <typename S> Tensor<S> upsample_bilinear2x(const Tensor<S>& x);

/// Output extent of a convolution / pooling along one axis.
Index conv_out_size(Index in, Index kernel, Index stride, Index padding, Index dilation);

}  // namespace resformer
