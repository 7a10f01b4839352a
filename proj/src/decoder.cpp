#include "resformer/decoder.hpp"

#include "ops_common.hpp"

namespace resformer {

template <typename S>
Dfe<S>::Dfe(Index channels, const std::vector<Index>& dilations, Rng& rng) : attention() {
    for (Index d : dilations) branches.emplace_back(channels, d, rng);
    attention = SpatialAttention<S>(rng);
}

template <typename S>
Tensor<S> dfe_branch(const Tensor<S>& x, DfeBranch<S>& p, Mode mode) {
    return p.bn2(p.pointwise(p.bn1(p.dilated(x), mode)), mode);
}

template <typename S>
Tensor<S> spatial_attention(const Tensor<S>& x, const SpatialAttention<S>& p, Tensor<S>* gate_out) {
    detail::require_rank(x.shape(), 4, "spatial_attention", "input");
    const Tensor<S> pooled = concat<S>({mean_axis(x, 1), max_axis(x, 1)}, 1);
    const Tensor<S> gate = sigmoid(p.conv(pooled));
    if (gate_out) *gate_out = gate;
    return mul(x, gate);
}

template <typename S>
Tensor<S> dfe_forward(const Tensor<S>& x, Dfe<S>& p, Mode mode) {
    if (p.branches.empty()) throw std::logic_error("dfe_forward: no branches");
    Tensor<S> total = dfe_branch(x, p.branches.front(), mode);
    for (std::size_t i = 1; i < p.branches.size(); ++i) total = add(total, dfe_branch(x, p.branches[i], mode));
    return spatial_attention(relu(total), p.attention);
}

template <typename S>
Tensor<S> decoder_level_forward(const Tensor<S>& skip, const Tensor<S>& incoming, DecoderLevel<S>& p, Mode mode, int level) {
    detail::require_rank(skip.shape(), 4, "decoder", "skip features");
    detail::require_rank(incoming.shape(), 4, "decoder", "incoming features");
    if (skip.dim(0) != incoming.dim(0) || skip.dim(2) != incoming.dim(2) || skip.dim(3) != incoming.dim(3))
        throw ShapeError("decoder level " + std::to_string(level) + ": skip " + shape_str(skip.shape()) +
                         " and upsampled " + shape_str(incoming.shape()) + " differ in resolution");
    const Tensor<S> fused = relu(p.bn(p.conv(concat<S>({skip, incoming}, 1)), mode));
    return upsample_bilinear2x(fused);
}

template <typename S>
Decoder<S>::Decoder(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    if (cfg.use_dfe)
        for (std::size_t i = 0; i < 4; ++i) dfe.emplace_back(cfg.channels[i], cfg.dilation_rates, rng);
    Index incoming = cfg.channels[3];
    for (std::size_t i = 0; i < 3; ++i) {
        const Index skip = cfg.channels[2 - i];
        levels[i] = DecoderLevel<S>(skip + incoming, cfg.decoder_channels[i], rng);
        incoming = cfg.decoder_channels[i];
    }
}

template <typename S>
Tensor<S> decoder_forward(const EncoderOutput<S>& enc, Decoder<S>& p, Mode mode) {
    auto enhanced = [&](std::size_t i) { return p.dfe.empty() ? enc.features[i] : dfe_forward(enc.features[i], p.dfe[i], mode); };
    Tensor<S> h = upsample_bilinear2x(enhanced(3));
    for (std::size_t i = 0; i < 3; ++i) h = decoder_level_forward(enhanced(2 - i), h, p.levels[i], mode, static_cast<int>(i) + 2);
    return h;
}

#define INSTANTIATE(S)                                                                                        \
    template struct Dfe<S>;                                                                                   \
    template Tensor<S> dfe_branch<S>(const Tensor<S>&, DfeBranch<S>&, Mode);                                  \
    template Tensor<S> spatial_attention<S>(const Tensor<S>&, const SpatialAttention<S>&, Tensor<S>*);        \
    template Tensor<S> dfe_forward<S>(const Tensor<S>&, Dfe<S>&, Mode);                                       \
    template Tensor<S> decoder_level_forward<S>(const Tensor<S>&, const Tensor<S>&, DecoderLevel<S>&, Mode, int); \
    template struct Decoder<S>;                                                                               \
    template Tensor<S> decoder_forward<S>(const EncoderOutput<S>&, Decoder<S>&, Mode);
RESFORMER_FOR_EACH_SCALAR(INSTANTIATE)

}  // namespace resformer
