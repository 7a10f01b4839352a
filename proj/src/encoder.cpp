#include "resformer/encoder.hpp"

#include "ops_common.hpp"

namespace resformer {

template <typename S>
Tensor<S> stem_forward(const Tensor<S>& image, Stem<S>& p, Mode mode) {
    detail::require_rank(image.shape(), 4, "stem_forward", "image");
    if (image.dim(2) % 2 != 0) throw ShapeError("stem_forward: axis 2 (height " + std::to_string(image.dim(2)) + ") is odd");
    if (image.dim(3) % 2 != 0) throw ShapeError("stem_forward: axis 3 (width " + std::to_string(image.dim(3)) + ") is odd");
    return max_pool2d(relu(p.bn(p.conv(image), mode)), 2, 2);
}

template <typename S>
Tensor<S> patch_merging(const Tensor<S>& x, const PatchMerging<S>& p) {
    detail::require_rank(x.shape(), 4, "patch_merging", "input");
    if (x.dim(2) % 2 != 0) throw ShapeError("patch_merging: axis 2 (height " + std::to_string(x.dim(2)) + ") is odd");
    if (x.dim(3) % 2 != 0) throw ShapeError("patch_merging: axis 3 (width " + std::to_string(x.dim(3)) + ") is odd");
    return p.conv(x);
}

template <typename S>
Tensor<S> swin_on_feature_map(const Tensor<S>& x, const SwinBlock<S>& p, const WindowConfig& w) {
    detail::require_rank(x.shape(), 4, "swin_on_feature_map", "input");
    const Index H = x.dim(2), W = x.dim(3), M = w.window_size;
    const Index pad_h = (M - H % M) % M, pad_w = (M - W % M) % M;
    Tensor<S> tokens = permute(x, {0, 2, 3, 1});  // split: [B, H, W, C]
    if (pad_h > 0) tokens = pad_end(tokens, 1, pad_h);
    if (pad_w > 0) tokens = pad_end(tokens, 2, pad_w);
    tokens = swin_block_forward(tokens, p, w);
    if (pad_h > 0) tokens = narrow(tokens, 1, 0, H);
    if (pad_w > 0) tokens = narrow(tokens, 2, 0, W);
    return permute(tokens, {0, 3, 1, 2});  // merge: back to [B, C, H, W]
}

template <typename S>
Tensor<S> resformer_forward(const Tensor<S>& x, ResFormerLevel<S>& p, const ModelConfig& cfg, Mode mode) {
    if (cfg.variant == Variant::Sequential)
        return swin_on_feature_map(resnet_block_forward(x, p.resnet, mode), p.swin, cfg.window());
    return add(resnet_block_forward(x, p.resnet, mode), swin_on_feature_map(x, p.swin, cfg.window()));
}

template <typename S>
Encoder<S>::Encoder(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    stem = Stem<S>(cfg.in_channels, cfg.channels[0], rng);
    for (std::size_t i = 0; i < 4; ++i) {
        levels[i] = ResFormerLevel<S>(cfg.channels[i], cfg.heads[i], cfg.window_size, cfg.use_position_bias, rng);
        if (i < 3) merges[i] = PatchMerging<S>(cfg.channels[i], cfg.channels[i + 1], rng);
    }
}

template <typename S>
EncoderOutput<S> encoder_forward(const Tensor<S>& image, Encoder<S>& p, const ModelConfig& cfg, Mode mode) {
    detail::require_rank(image.shape(), 4, "encoder_forward", "image");
    if (image.dim(2) % 16 != 0 || image.dim(3) % 16 != 0)
        throw ShapeError("encoder_forward: spatial size " + std::to_string(image.dim(2)) + "x" + std::to_string(image.dim(3)) +
                         " is not divisible by 16");
    EncoderOutput<S> out;
    Tensor<S> h = stem_forward(image, p.stem, mode);
    for (std::size_t i = 0; i < 4; ++i) {
        if (i > 0) h = patch_merging(h, p.merges[i - 1]);
        h = resformer_forward(h, p.levels[i], cfg, mode);
        out.features[i] = h;
    }
    return out;
}

#define INSTANTIATE(S)                                                                                   \
    template Tensor<S> stem_forward<S>(const Tensor<S>&, Stem<S>&, Mode);                                \
    template Tensor<S> patch_merging<S>(const Tensor<S>&, const PatchMerging<S>&);                       \
    template Tensor<S> swin_on_feature_map<S>(const Tensor<S>&, const SwinBlock<S>&, const WindowConfig&); \
    template Tensor<S> resformer_forward<S>(const Tensor<S>&, ResFormerLevel<S>&, const ModelConfig&, Mode); \
    template struct Encoder<S>;                                                                          \
    template EncoderOutput<S> encoder_forward<S>(const Tensor<S>&, Encoder<S>&, const ModelConfig&, Mode);
RESFORMER_FOR_EACH_SCALAR(INSTANTIATE)

}  // namespace resformer
