#pragma once

#include "resformer/layers.hpp"

#include <optional>
#include <vector>

namespace resformer {

/// Conv-BN-ReLU-Conv-BN with an identity shortcut; channel count preserved.
template <typename S>
struct ResNetBlock {
    Conv2d<S> conv1, conv2;
    BatchNorm2d<S> bn1, bn2;

    ResNetBlock() = default;
    ResNetBlock(Index channels, Rng& rng)
        : conv1(channels, channels, 3, {1, 1, 1}, false, rng),
          conv2(channels, channels, 3, {1, 1, 1}, false, rng),
          bn1(channels),
          bn2(channels) {}

    Index channels() const { return conv1.weight.dim(0); }

    template <typename V>
    void visit(V& v, const std::string& prefix) {
        conv1.visit(v, scoped(prefix, "conv1"));
        bn1.visit(v, scoped(prefix, "bn1"));
        conv2.visit(v, scoped(prefix, "conv2"));
        bn2.visit(v, scoped(prefix, "bn2"));
    }
};

/// relu(x + bn2(conv2(relu(bn1(conv1(x)))))) on [B, C, H, W].
template <typename S>
Tensor<S> resnet_block_forward(const Tensor<S>& x, ResNetBlock<S>& p, Mode mode);

struct WindowConfig {
    Index window_size = 8;
    Index shift = 4;

    static WindowConfig standard(Index m) { return {m, m / 2}; }
    void validate() const;
};

/// [B, H, W, C] -> [B * (H/M) * (W/M), M*M, C]; windows in raster order per batch item.
template <typename S>
Tensor<S> window_partition(const Tensor<S>& tokens, Index window);
/// Inverse of window_partition.
template <typename S>
Tensor<S> window_reverse(const Tensor<S>& windows, Index window, Index batch, Index height, Index width);

/// Rolls the token grid [B, H, W, C] by (-s, -s).
template <typename S>
Tensor<S> cyclic_shift(const Tensor<S>& tokens, Index shift);
/// Rolls the token grid by (+s, +s).
template <typename S>
Tensor<S> cyclic_unshift(const Tensor<S>& tokens, Index shift);

/// Flat index into the ((2M-1)^2)-row bias table for every (query, key)
/// token pair of an M x M window; length M^4.
std::vector<Index> relative_position_index(Index window);

/// Additive attention mask [nW, M*M, M*M] for a cyclically shifted H x W grid:
/// 0 for token pairs from the same image region, -100 otherwise.
template <typename S>
Tensor<S> shifted_window_mask(Index height, Index width, Index window, Index shift);

inline constexpr double kShiftMaskValue = -100.0;

template <typename S>
struct WindowAttention {
    Linear<S> qkv;   // C -> 3C
    Linear<S> proj;  // C -> C
    Parameter<S> position_bias;  // [(2M-1)^2, heads]; undefined when disabled
    Index heads = 1;
    Index window = 1;

    WindowAttention() = default;
    WindowAttention(Index channels, Index num_heads, Index window_size, bool use_position_bias, Rng& rng);

    template <typename V>
    void visit(V& v, const std::string& prefix) {
        qkv.visit(v, scoped(prefix, "qkv"));
        proj.visit(v, scoped(prefix, "proj"));
        if (position_bias.defined()) v.param(scoped(prefix, "position_bias"), position_bias);
    }
};

/// Multi-head self-attention inside each window.
///
/// `tokens` is [Nw, M*M, C]. `mask`, when given, is [nW, M*M, M*M] and is
/// added to the scores of window w at index w mod nW. When `attention_out`
/// is non-null it receives the softmax weights as [Nw, heads, M*M, M*M].
template <typename S>
Tensor<S> window_attention(const Tensor<S>& tokens, const WindowAttention<S>& p, const Tensor<S>* mask = nullptr,
                           Tensor<S>* attention_out = nullptr);

/// Linear(C, 4C) -> GELU -> Linear(4C, C).
template <typename S>
struct FeedForward {
    Linear<S> fc1, fc2;

    FeedForward() = default;
    FeedForward(Index channels, Index expansion, Rng& rng)
        : fc1(channels, channels * expansion, rng), fc2(channels * expansion, channels, rng) {}

    Tensor<S> operator()(const Tensor<S>& x) const { return fc2(gelu(fc1(x))); }

    template <typename V>
    void visit(V& v, const std::string& prefix) {
        fc1.visit(v, scoped(prefix, "fc1"));
        fc2.visit(v, scoped(prefix, "fc2"));
    }
};

inline constexpr Index kFfnExpansion = 4;

/// One W-MSA / SW-MSA pair, each followed by a feed-forward sublayer.
template <typename S>
struct SwinBlock {
    LayerNorm<S> ln1, ln2, ln3, ln4;
    WindowAttention<S> wmsa, swmsa;
    FeedForward<S> ffn1, ffn2;

    SwinBlock() = default;
    SwinBlock(Index channels, Index heads, Index window, bool use_position_bias, Rng& rng)
        : ln1(channels), ln2(channels), ln3(channels), ln4(channels),
          wmsa(channels, heads, window, use_position_bias, rng),
          swmsa(channels, heads, window, use_position_bias, rng),
          ffn1(channels, kFfnExpansion, rng),
          ffn2(channels, kFfnExpansion, rng) {}

    template <typename V>
    void visit(V& v, const std::string& prefix) {
        ln1.visit(v, scoped(prefix, "ln1"));
        wmsa.visit(v, scoped(prefix, "wmsa"));
        ln2.visit(v, scoped(prefix, "ln2"));
        ffn1.visit(v, scoped(prefix, "ffn1"));
        ln3.visit(v, scoped(prefix, "ln3"));
        swmsa.visit(v, scoped(prefix, "swmsa"));
        ln4.visit(v, scoped(prefix, "ln4"));
        ffn2.visit(v, scoped(prefix, "ffn2"));
    }
};

/// Swin block on a token grid [B, H, W, C] with H and W multiples of the window:
///   a = x + W-MSA(LN1(x));  b = a + FFN1(LN2(a))
///   c = b + unshift(SW-MSA(shift(LN3(b))));  out = c + FFN2(LN4(c))
template <typename S>
Tensor<S> swin_block_forward(const Tensor<S>& tokens, const SwinBlock<S>& p, const WindowConfig& w);

}  // namespace resformer
