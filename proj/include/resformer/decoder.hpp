#pragma once

#include "resformer/config.hpp"
#include "resformer/encoder.hpp"

#include <array>
#include <vector>

namespace resformer {

/// Dilated 3x3 conv -> BN -> 1x1 conv -> BN, all C -> C.
template <typename S>
struct DfeBranch {
    Conv2d<S> dilated;
    BatchNorm2d<S> bn1;
    Conv2d<S> pointwise;
    BatchNorm2d<S> bn2;

    DfeBranch() = default;
    DfeBranch(Index channels, Index dilation, Rng& rng)
        : dilated(channels, channels, 3, {1, dilation, dilation}, false, rng),
          bn1(channels),
          pointwise(channels, channels, 1, {1, 0, 1}, false, rng),
          bn2(channels) {}

    Index dilation() const { return dilated.options.dilation; }

    template <typename V>
    void visit(V& v, const std::string& prefix) {
        dilated.visit(v, scoped(prefix, "dilated"));
        bn1.visit(v, scoped(prefix, "bn1"));
        pointwise.visit(v, scoped(prefix, "pointwise"));
        bn2.visit(v, scoped(prefix, "bn2"));
    }
};

/// Gate from channel-wise mean and max maps through a 7x7 conv and sigmoid.
template <typename S>
struct SpatialAttention {
    Conv2d<S> conv;  // 2 -> 1, 7x7, padding 3

    SpatialAttention() = default;
    explicit SpatialAttention(Rng& rng) : conv(2, 1, 7, {1, 3, 1}, true, rng) {}

    template <typename V>
    void visit(V& v, const std::string& prefix) {
        conv.visit(v, scoped(prefix, "conv"));
    }
};

template <typename S>
struct Dfe {
    std::vector<DfeBranch<S>> branches;
    SpatialAttention<S> attention;

    Dfe() = default;
    Dfe(Index channels, const std::vector<Index>& dilations, Rng& rng);

    template <typename V>
    void visit(V& v, const std::string& prefix) {
        for (auto& b : branches) b.visit(v, scoped(prefix, "branch_d" + std::to_string(b.dilation())));
        attention.visit(v, scoped(prefix, "attention"));
    }
};

template <typename S>
Tensor<S> dfe_branch(const Tensor<S>& x, DfeBranch<S>& p, Mode mode);
/// x * sigmoid(conv([mean_c(x), max_c(x)])). `gate_out` receives the [B,1,H,W] gate.
template <typename S>
Tensor<S> spatial_attention(const Tensor<S>& x, const SpatialAttention<S>& p, Tensor<S>* gate_out = nullptr);
/// SA(ReLU(sum of branches)).
template <typename S>
Tensor<S> dfe_forward(const Tensor<S>& x, Dfe<S>& p, Mode mode);

/// 3x3 conv -> BN -> ReLU over concat(skip, incoming), then 2x upsample.
template <typename S>
struct DecoderLevel {
    Conv2d<S> conv;
    BatchNorm2d<S> bn;

    DecoderLevel() = default;
    DecoderLevel(Index in_channels, Index out_channels, Rng& rng)
        : conv(in_channels, out_channels, 3, {1, 1, 1}, false, rng), bn(out_channels) {}

    template <typename V>
    void visit(V& v, const std::string& prefix) {
        conv.visit(v, scoped(prefix, "conv"));
        bn.visit(v, scoped(prefix, "bn"));
    }
};

template <typename S>
Tensor<S> decoder_level_forward(const Tensor<S>& skip, const Tensor<S>& incoming, DecoderLevel<S>& p, Mode mode,
                                int level = 0);

template <typename S>
struct Decoder {
    // One per encoder level; empty when DFE is disabled.
    std::vector<Dfe<S>> dfe;
    // Decoder levels 2, 3, 4.
    std::array<DecoderLevel<S>, 3> levels;

    Decoder() = default;
    Decoder(const ModelConfig& cfg, Rng& rng);

    template <typename V>
    void visit(V& v, const std::string& prefix) {
        for (std::size_t i = 0; i < dfe.size(); ++i) dfe[i].visit(v, scoped(prefix, "dfe" + std::to_string(i + 1)));
        for (std::size_t i = 0; i < 3; ++i) levels[i].visit(v, scoped(prefix, "level" + std::to_string(i + 2)));
    }
};

/// Seeds with upsample(enhanced level 4), then fuses enhanced levels 3, 2, 1.
/// Returns features at the input resolution.
template <typename S>
Tensor<S> decoder_forward(const EncoderOutput<S>& enc, Decoder<S>& p, Mode mode);

}  // namespace resformer
