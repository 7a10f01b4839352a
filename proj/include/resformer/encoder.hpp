#pragma once

#include "resformer/blocks.hpp"
#include "resformer/config.hpp"

#include <array>

namespace resformer {

/// 3x3 conv -> BN -> ReLU -> 2x2 max-pool: [B, 3, H, W] -> [B, C0, H/2, W/2].
template <typename S>
struct Stem {
    Conv2d<S> conv;
    BatchNorm2d<S> bn;

    Stem() = default;
    Stem(Index in_channels, Index out_channels, Rng& rng)
        : conv(in_channels, out_channels, 3, {1, 1, 1}, false, rng), bn(out_channels) {}

    template <typename V>
    void visit(V& v, const std::string& prefix) {
        conv.visit(v, scoped(prefix, "conv"));
        bn.visit(v, scoped(prefix, "bn"));
    }
};

template <typename S>
Tensor<S> stem_forward(const Tensor<S>& image, Stem<S>& p, Mode mode);

/// 3x3 stride-2 convolution halving resolution between encoder levels.
template <typename S>
struct PatchMerging {
    Conv2d<S> conv;

    PatchMerging() = default;
    PatchMerging(Index in_channels, Index out_channels, Rng& rng)
        : conv(in_channels, out_channels, 3, {2, 1, 1}, true, rng) {}

    template <typename V>
    void visit(V& v, const std::string& prefix) {
        conv.visit(v, scoped(prefix, "conv"));
    }
};

template <typename S>
Tensor<S> patch_merging(const Tensor<S>& x, const PatchMerging<S>& p);

/// One encoder level: residual conv block plus Swin block.
template <typename S>
struct ResFormerLevel {
    ResNetBlock<S> resnet;
    SwinBlock<S> swin;

    ResFormerLevel() = default;
    ResFormerLevel(Index channels, Index heads, Index window, bool use_position_bias, Rng& rng)
        : resnet(channels, rng), swin(channels, heads, window, use_position_bias, rng) {}

    template <typename V>
    void visit(V& v, const std::string& prefix) {
        resnet.visit(v, scoped(prefix, "resnet"));
        swin.visit(v, scoped(prefix, "swin"));
    }
};

/// Runs a Swin block on a feature map [B, C, H, W]: tokens are 1x1 patches,
/// the grid is zero-padded bottom/right to a window multiple and cropped back.
template <typename S>
Tensor<S> swin_on_feature_map(const Tensor<S>& x, const SwinBlock<S>& p, const WindowConfig& w);

/// sequential: Swin(ResNet(x)); parallel: ResNet(x) + Swin(x).
template <typename S>
Tensor<S> resformer_forward(const Tensor<S>& x, ResFormerLevel<S>& p, const ModelConfig& cfg, Mode mode);

template <typename S>
struct EncoderOutput {
    /// Level outputs at 1/2, 1/4, 1/8, 1/16 of the input resolution.
    std::array<Tensor<S>, 4> features;
};

template <typename S>
struct Encoder {
    Stem<S> stem;
    std::array<ResFormerLevel<S>, 4> levels;
    std::array<PatchMerging<S>, 3> merges;

    Encoder() = default;
    Encoder(const ModelConfig& cfg, Rng& rng);

    template <typename V>
    void visit(V& v, const std::string& prefix) {
        stem.visit(v, scoped(prefix, "stem"));
        for (std::size_t i = 0; i < 4; ++i) {
            levels[i].visit(v, scoped(prefix, "level" + std::to_string(i + 1)));
            if (i < 3) merges[i].visit(v, scoped(prefix, "merge" + std::to_string(i + 1)));
        }
    }
};

template <typename S>
EncoderOutput<S> encoder_forward(const Tensor<S>& image, Encoder<S>& p, const ModelConfig& cfg, Mode mode);

}  // namespace resformer
