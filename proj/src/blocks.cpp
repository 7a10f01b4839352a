#include "resformer/blocks.hpp"

#include "ops_common.hpp"

#include <cmath>
#include <stdexcept>

namespace resformer {

template <typename S>
Tensor<S> resnet_block_forward(const Tensor<S>& x, ResNetBlock<S>& p, Mode mode) {
    detail::require_rank(x.shape(), 4, "resnet_block_forward", "input");
    if (x.dim(1) != p.channels())
        throw ShapeError("resnet_block_forward: axis 1 (channels) is " + std::to_string(x.dim(1)) + ", block expects " +
                         std::to_string(p.channels()));
    Tensor<S> h = relu(p.bn1(p.conv1(x), mode));
    h = p.bn2(p.conv2(h), mode);
    return relu(add(x, h));
}

void WindowConfig::validate() const {
    if (window_size < 1) throw std::invalid_argument("window size must be >= 1");
    if (shift < 0 || shift >= window_size) throw std::invalid_argument("window shift must satisfy 0 <= shift < window size");
}

template <typename S>
Tensor<S> window_partition(const Tensor<S>& tokens, Index window) {
    detail::require_rank(tokens.shape(), 4, "window_partition", "token grid");
    const Index B = tokens.dim(0), H = tokens.dim(1), W = tokens.dim(2), C = tokens.dim(3);
    if (window < 1) throw ShapeError("window_partition: window must be >= 1");
    if (H % window != 0) throw ShapeError("window_partition: axis 1 (height " + std::to_string(H) + ") not divisible by window " + std::to_string(window));
    if (W % window != 0) throw ShapeError("window_partition: axis 2 (width " + std::to_string(W) + ") not divisible by window " + std::to_string(window));
    const Index nh = H / window, nw = W / window;
    Tensor<S> t = reshape(tokens, {B, nh, window, nw, window, C});
    t = permute(t, {0, 1, 3, 2, 4, 5});
    return reshape(t, {B * nh * nw, window * window, C});
}

template <typename S>
Tensor<S> window_reverse(const Tensor<S>& windows, Index window, Index batch, Index height, Index width) {
    detail::require_rank(windows.shape(), 3, "window_reverse", "windows");
    if (height % window != 0 || width % window != 0)
        throw ShapeError("window_reverse: grid " + std::to_string(height) + "x" + std::to_string(width) +
                         " not divisible by window " + std::to_string(window));
    const Index nh = height / window, nw = width / window, C = windows.dim(2);
    if (windows.dim(0) != batch * nh * nw || windows.dim(1) != window * window)
        throw ShapeError("window_reverse: windows " + shape_str(windows.shape()) + " do not tile the grid");
    Tensor<S> t = reshape(windows, {batch, nh, nw, window, window, C});
    t = permute(t, {0, 1, 3, 2, 4, 5});
    return reshape(t, {batch, height, width, C});
}

template <typename S>
Tensor<S> cyclic_shift(const Tensor<S>& tokens, Index shift) {
    detail::require_rank(tokens.shape(), 4, "cyclic_shift", "token grid");
    return roll(tokens, {1, 2}, {-shift, -shift});
}

template <typename S>
Tensor<S> cyclic_unshift(const Tensor<S>& tokens, Index shift) {
    detail::require_rank(tokens.shape(), 4, "cyclic_unshift", "token grid");
    return roll(tokens, {1, 2}, {shift, shift});
}

std::vector<Index> relative_position_index(Index window) {
    const Index n = window * window, span = 2 * window - 1;
    std::vector<Index> idx(static_cast<std::size_t>(n * n));
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) {
            const Index dy = i / window - j / window + window - 1;
            const Index dx = i % window - j % window + window - 1;
            idx[static_cast<std::size_t>(i * n + j)] = dy * span + dx;
        }
    return idx;
}

namespace {

// Region id of a coordinate along one axis of the shifted grid: the last
// `window` positions are split at `shift` into two regions.
Index shift_region(Index pos, Index extent, Index window, Index shift) {
    if (pos < extent - window) return 0;
    if (pos < extent - shift) return 1;
    return 2;
}

}  // namespace

template <typename S>
Tensor<S> shifted_window_mask(Index height, Index width, Index window, Index shift) {
    if (height % window != 0 || width % window != 0)
        throw ShapeError("shifted_window_mask: grid not divisible by window");
    const Index nh = height / window, nw = width / window, n = window * window;
    std::vector<S> mask(static_cast<std::size_t>(nh * nw * n * n), S(0));
    std::vector<Index> region(static_cast<std::size_t>(n));
    for (Index wy = 0; wy < nh; ++wy)
        for (Index wx = 0; wx < nw; ++wx) {
            for (Index t = 0; t < n; ++t) {
                const Index y = wy * window + t / window, x = wx * window + t % window;
                region[static_cast<std::size_t>(t)] =
                    shift_region(y, height, window, shift) * 3 + shift_region(x, width, window, shift);
            }
            S* m = mask.data() + (wy * nw + wx) * n * n;
            for (Index i = 0; i < n; ++i)
                for (Index j = 0; j < n; ++j)
                    if (region[static_cast<std::size_t>(i)] != region[static_cast<std::size_t>(j)])
                        m[i * n + j] = S(kShiftMaskValue);
        }
    return Tensor<S>(Shape{nh * nw, n, n}, std::move(mask));
}

template <typename S>
WindowAttention<S>::WindowAttention(Index channels, Index num_heads, Index window_size, bool use_position_bias, Rng& rng)
    : qkv(channels, 3 * channels, rng), proj(channels, channels, rng), heads(num_heads), window(window_size) {
    if (num_heads < 1 || channels % num_heads != 0)
        throw std::invalid_argument("attention heads (" + std::to_string(num_heads) + ") must divide channels (" +
                                    std::to_string(channels) + ")");
    if (use_position_bias) {
        const Index span = 2 * window_size - 1;
        position_bias = Parameter<S>({span * span, num_heads});
        for (S& v : position_bias.mutable_values()) v = S(rng.uniform(-0.02, 0.02));
        position_bias.set_requires_grad(true);
    }
}

template <typename S>
Tensor<S> window_attention(const Tensor<S>& tokens, const WindowAttention<S>& p, const Tensor<S>* mask,
                           Tensor<S>* attention_out) {
    detail::require_rank(tokens.shape(), 3, "window_attention", "tokens");
    const Index nwin = tokens.dim(0), n = tokens.dim(1), C = tokens.dim(2), heads = p.heads;
    if (C % heads != 0) throw ShapeError("window_attention: heads do not divide channels");
    const Index dh = C / heads;
    if (p.position_bias.defined() && n != p.window * p.window)
        throw ShapeError("window_attention: axis 1 holds " + std::to_string(n) + " tokens, window needs " +
                         std::to_string(p.window * p.window));

    Tensor<S> qkv = reshape(p.qkv(tokens), {nwin, n, 3, heads, dh});
    qkv = permute(qkv, {2, 0, 3, 1, 4});  // [3, Nw, heads, N, dh]
    auto part = [&](Index k) { return reshape(narrow(qkv, 0, k, 1), {nwin * heads, n, dh}); };
    const Tensor<S> q = part(0), k = part(1), v = part(2);

    Tensor<S> scores = scale(bmm(q, k, false, true), S(1) / std::sqrt(S(dh)));
    scores = reshape(scores, {nwin, heads, n, n});
    if (p.position_bias.defined()) {
        const auto rpi = relative_position_index(p.window);
        std::vector<Index> idx(static_cast<std::size_t>(heads * n * n));
        for (Index h = 0; h < heads; ++h)
            for (Index ij = 0; ij < n * n; ++ij) idx[static_cast<std::size_t>(h * n * n + ij)] = rpi[static_cast<std::size_t>(ij)] * heads + h;
        scores = add(scores, gather(p.position_bias, idx, {1, heads, n, n}));
    }
    if (mask) {
        if (mask->rank() != 3 || mask->dim(1) != n || mask->dim(2) != n || mask->dim(0) < 1 || nwin % mask->dim(0) != 0)
            throw ShapeError("window_attention: mask " + shape_str(mask->shape()) + " does not match " +
                             std::to_string(nwin) + " windows of " + std::to_string(n) + " tokens");
        const Index nw = mask->dim(0);
        scores = reshape(scores, {nwin / nw, nw, heads, n, n});
        scores = add(scores, reshape(*mask, {1, nw, 1, n, n}));
        scores = reshape(scores, {nwin, heads, n, n});
    }
    Tensor<S> attn = softmax(scores, -1);
    if (attention_out) *attention_out = attn;
    Tensor<S> out = bmm(reshape(attn, {nwin * heads, n, n}), v);  // [Nw*heads, N, dh]
    out = permute(reshape(out, {nwin, heads, n, dh}), {0, 2, 1, 3});
    return p.proj(reshape(out, {nwin, n, C}));
}

template <typename S>
Tensor<S> swin_block_forward(const Tensor<S>& tokens, const SwinBlock<S>& p, const WindowConfig& w) {
    w.validate();
    detail::require_rank(tokens.shape(), 4, "swin_block_forward", "token grid");
    const Index B = tokens.dim(0), H = tokens.dim(1), W = tokens.dim(2);
    const Index M = w.window_size, s = w.shift;
    if (H % M != 0 || W % M != 0)
        throw ShapeError("swin_block_forward: grid " + std::to_string(H) + "x" + std::to_string(W) +
                         " is not a multiple of window " + std::to_string(M));
    auto attend = [&](const Tensor<S>& t, const WindowAttention<S>& a, const Tensor<S>* mask) {
        return window_reverse(window_attention(window_partition(t, M), a, mask), M, B, H, W);
    };
    const Tensor<S> fw = add(tokens, attend(p.ln1(tokens), p.wmsa, nullptr));
    const Tensor<S> fw2 = add(fw, p.ffn1(p.ln2(fw)));
    Tensor<S> fsw;
    if (s > 0) {
        const Tensor<S> mask = shifted_window_mask<S>(H, W, M, s);
        fsw = add(fw2, cyclic_unshift(attend(cyclic_shift(p.ln3(fw2), s), p.swmsa, &mask), s));
    } else {
        fsw = add(fw2, attend(p.ln3(fw2), p.swmsa, nullptr));
    }
    return add(fsw, p.ffn2(p.ln4(fsw)));
}

#define INSTANTIATE(S)                                                                                             \
    template Tensor<S> resnet_block_forward<S>(const Tensor<S>&, ResNetBlock<S>&, Mode);                           \
    template Tensor<S> window_partition<S>(const Tensor<S>&, Index);                                               \
    template Tensor<S> window_reverse<S>(const Tensor<S>&, Index, Index, Index, Index);                            \
    template Tensor<S> cyclic_shift<S>(const Tensor<S>&, Index);                                                   \
    template Tensor<S> cyclic_unshift<S>(const Tensor<S>&, Index);                                                 \
    template Tensor<S> shifted_window_mask<S>(Index, Index, Index, Index);                                         \
    template struct WindowAttention<S>;                                                                            \
    template Tensor<S> window_attention<S>(const Tensor<S>&, const WindowAttention<S>&, const Tensor<S>*, Tensor<S>*); \
    template Tensor<S> swin_block_forward<S>(const Tensor<S>&, const SwinBlock<S>&, const WindowConfig&);
RESFORMER_FOR_EACH_SCALAR(INSTANTIATE)

}  // namespace resformer
