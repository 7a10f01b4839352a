#pragma once

// Step-by-step reference implementations used as test oracles. Everything
// here is plain loops over flat double arrays and shares no code with the
// library's ops; only parameter values are read from the library structs.

#include "resformer/decoder.hpp"
#include "resformer/encoder.hpp"
#include "resformer/heads.hpp"
#include "resformer/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

namespace resformer::reference {

struct Array {
    std::vector<Index> shape;
    std::vector<double> v;

    Array() = default;
    explicit Array(std::vector<Index> s, double fill = 0.0) : shape(std::move(s)) {
        Index n = 1;
        for (Index d : shape) n *= d;
        v.assign(static_cast<std::size_t>(n), fill);
    }
    Index dim(std::size_t i) const { return shape[i]; }
    double& operator[](Index i) { return v[static_cast<std::size_t>(i)]; }
    double operator[](Index i) const { return v[static_cast<std::size_t>(i)]; }
};

inline Array from(const Tensor<double>& t) {
    Array a(t.shape());
    std::copy(t.values().begin(), t.values().end(), a.v.begin());
    return a;
}

inline Tensor<double> to_tensor(const Array& a) { return Tensor<double>(a.shape, a.v); }

inline double max_abs_diff(const Array& a, const Tensor<double>& t) {
    if (a.shape != t.shape()) return std::numeric_limits<double>::infinity();
    double m = 0;
    for (std::size_t i = 0; i < a.v.size(); ++i) m = std::max(m, std::abs(a.v[i] - t.values()[i]));
    return m;
}

inline double w_at(const Tensor<double>& t, Index i) { return t.values()[static_cast<std::size_t>(i)]; }

// ---------------------------------------------------------------- primitives

inline Array conv2d(const Array& x, const Tensor<double>& w, const Tensor<double>* bias, Index stride, Index pad, Index dil) {
    const Index B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const Index Co = w.dim(0), k = w.dim(2);
    const Index Ho = (H + 2 * pad - dil * (k - 1) - 1) / stride + 1;
    const Index Wo = (W + 2 * pad - dil * (k - 1) - 1) / stride + 1;
    Array out({B, Co, Ho, Wo});
    for (Index b = 0; b < B; ++b)
        for (Index o = 0; o < Co; ++o)
            for (Index y = 0; y < Ho; ++y)
                for (Index xo = 0; xo < Wo; ++xo) {
                    double acc = (bias && bias->defined()) ? w_at(*bias, o) : 0.0;
                    for (Index c = 0; c < Ci; ++c)
                        for (Index ky = 0; ky < k; ++ky)
                            for (Index kx = 0; kx < k; ++kx) {
                                const Index iy = y * stride - pad + ky * dil;
                                const Index ix = xo * stride - pad + kx * dil;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += w_at(w, ((o * Ci + c) * k + ky) * k + kx) * x[((b * Ci + c) * H + iy) * W + ix];
                            }
                    out[((b * Co + o) * Ho + y) * Wo + xo] = acc;
                }
    return out;
}

/// Train: batch statistics with biased variance. Eval: the given running stats.
inline Array batch_norm(const Array& x, const BatchNorm2d<double>& bn, Mode mode, double eps = 1e-5) {
    const Index B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    Array out(x.shape);
    for (Index c = 0; c < C; ++c) {
        double mean = 0, var = 0;
        if (mode == Mode::Train) {
            for (Index b = 0; b < B; ++b)
                for (Index i = 0; i < HW; ++i) mean += x[(b * C + c) * HW + i];
            mean /= static_cast<double>(B * HW);
            for (Index b = 0; b < B; ++b)
                for (Index i = 0; i < HW; ++i) var += std::pow(x[(b * C + c) * HW + i] - mean, 2);
            var /= static_cast<double>(B * HW);
        } else {
            mean = bn.stats.mean[static_cast<std::size_t>(c)];
            var = bn.stats.var[static_cast<std::size_t>(c)];
        }
        for (Index b = 0; b < B; ++b)
            for (Index i = 0; i < HW; ++i) {
                const Index j = (b * C + c) * HW + i;
                out[j] = w_at(bn.gamma, c) * (x[j] - mean) / std::sqrt(var + eps) + w_at(bn.beta, c);
            }
    }
    return out;
}

inline Array relu(Array x) {
    for (double& e : x.v) e = e > 0 ? e : 0.0;
    return x;
}

inline Array gelu(Array x) {
    for (double& e : x.v) e = 0.5 * e * (1.0 + std::erf(e / std::sqrt(2.0)));
    return x;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline Array add(Array a, const Array& b) {
    for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
    return a;
}

inline Array max_pool2(const Array& x) {
    const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Array out({B, C, H / 2, W / 2});
    for (Index bc = 0; bc < B * C; ++bc)
        for (Index y = 0; y < H / 2; ++y)
            for (Index xo = 0; xo < W / 2; ++xo) {
                double m = -std::numeric_limits<double>::infinity();
                for (Index dy = 0; dy < 2; ++dy)
                    for (Index dx = 0; dx < 2; ++dx) m = std::max(m, x[(bc * H + 2 * y + dy) * W + 2 * xo + dx]);
                out[(bc * (H / 2) + y) * (W / 2) + xo] = m;
            }
    return out;
}

/// Bilinear 2x with half-pixel centers: src = (dst + 0.5) / 2 - 0.5, clamped at 0.
inline Array upsample2x(const Array& x) {
    const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Array out({B, C, 2 * H, 2 * W});
    auto coord = [](Index d, Index n, Index& i0, Index& i1, double& f) {
        const double s = std::max(0.0, (static_cast<double>(d) + 0.5) / 2.0 - 0.5);
        i0 = static_cast<Index>(std::floor(s));
        i1 = std::min(i0 + 1, n - 1);
        f = s - static_cast<double>(i0);
    };
    for (Index bc = 0; bc < B * C; ++bc)
        for (Index y = 0; y < 2 * H; ++y)
            for (Index xo = 0; xo < 2 * W; ++xo) {
                Index y0, y1, x0, x1;
                double fy, fx;
                coord(y, H, y0, y1, fy);
                coord(xo, W, x0, x1, fx);
                auto at = [&](Index yy, Index xx) { return x[(bc * H + yy) * W + xx]; };
                out[(bc * 2 * H + y) * 2 * W + xo] = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
                                                     fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
            }
    return out;
}

inline Array gap(const Array& x) {
    const Index B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    Array out({B, C});
    for (Index bc = 0; bc < B * C; ++bc) {
        double s = 0;
        for (Index i = 0; i < HW; ++i) s += x[bc * HW + i];
        out[bc] = s / static_cast<double>(HW);
    }
    return out;
}

/// x [..., in] -> [..., out].
inline Array linear(const Array& x, const Linear<double>& l) {
    const Index in = l.weight.dim(1), outd = l.weight.dim(0), rows = static_cast<Index>(x.v.size()) / in;
    auto shape = x.shape;
    shape.back() = outd;
    Array out(shape);
    for (Index r = 0; r < rows; ++r)
        for (Index o = 0; o < outd; ++o) {
            double acc = w_at(l.bias, o);
            for (Index i = 0; i < in; ++i) acc += w_at(l.weight, o * in + i) * x[r * in + i];
            out[r * outd + o] = acc;
        }
    return out;
}

inline Array layer_norm(const Array& x, const LayerNorm<double>& ln, double eps = 1e-5) {
    const Index C = x.shape.back(), rows = static_cast<Index>(x.v.size()) / C;
    Array out(x.shape);
    for (Index r = 0; r < rows; ++r) {
        double mean = 0, var = 0;
        for (Index c = 0; c < C; ++c) mean += x[r * C + c];
        mean /= static_cast<double>(C);
        for (Index c = 0; c < C; ++c) var += std::pow(x[r * C + c] - mean, 2);
        var /= static_cast<double>(C);
        for (Index c = 0; c < C; ++c)
            out[r * C + c] = w_at(ln.gamma, c) * (x[r * C + c] - mean) / std::sqrt(var + eps) + w_at(ln.beta, c);
    }
    return out;
}

inline std::vector<double> softmax(std::vector<double> z) {
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0;
    for (double& e : z) s += (e = std::exp(e - m));
    for (double& e : z) e /= s;
    return z;
}

// ---------------------------------------------------------------- attention

/// Dense multi-head attention over each window of tokens [Nw, N, C]. The
/// relative position bias is looked up from token coordinates inside the
/// window; `mask`, if given, is [nW, N, N] and applies to window w at w mod nW.
inline Array window_attention(const Array& tokens, const WindowAttention<double>& p, const Array* mask = nullptr,
                              Array* attention = nullptr) {
    const Index Nw = tokens.dim(0), N = tokens.dim(1), C = tokens.dim(2), heads = p.heads, dh = C / heads;
    const Index M = p.window;
    const Array qkv = linear(tokens, p.qkv);  // [Nw, N, 3C]
    Array mixed({Nw, N, C});
    if (attention) *attention = Array({Nw, heads, N, N});
    for (Index w = 0; w < Nw; ++w)
        for (Index h = 0; h < heads; ++h)
            for (Index i = 0; i < N; ++i) {
                std::vector<double> scores(static_cast<std::size_t>(N));
                for (Index j = 0; j < N; ++j) {
                    double dot = 0;
                    for (Index d = 0; d < dh; ++d)
                        dot += qkv[(w * N + i) * 3 * C + h * dh + d] * qkv[(w * N + j) * 3 * C + C + h * dh + d];
                    double s = dot / std::sqrt(static_cast<double>(dh));
                    if (p.position_bias.defined()) {
                        const Index ry = i / M - j / M + (M - 1), rx = i % M - j % M + (M - 1);
                        s += w_at(p.position_bias, (ry * (2 * M - 1) + rx) * heads + h);
                    }
                    if (mask) s += (*mask)[((w % mask->dim(0)) * N + i) * N + j];
                    scores[static_cast<std::size_t>(j)] = s;
                }
                const auto a = softmax(scores);
                for (Index j = 0; j < N; ++j) {
                    if (attention) (*attention)[((w * heads + h) * N + i) * N + j] = a[static_cast<std::size_t>(j)];
                    for (Index d = 0; d < dh; ++d)
                        mixed[(w * N + i) * C + h * dh + d] += a[static_cast<std::size_t>(j)] * qkv[(w * N + j) * 3 * C + 2 * C + h * dh + d];
                }
            }
    return linear(mixed, p.proj);
}

/// Mask for a grid rolled by -s: two tokens of one window may attend to each
/// other only if neither or both wrapped around, separately per axis.
inline Array shift_mask(Index H, Index W, Index M, Index s) {
    const Index nh = H / M, nw = W / M, N = M * M;
    Array mask({nh * nw, N, N});
    for (Index wy = 0; wy < nh; ++wy)
        for (Index wx = 0; wx < nw; ++wx)
            for (Index i = 0; i < N; ++i)
                for (Index j = 0; j < N; ++j) {
                    const Index yi = wy * M + i / M, xi = wx * M + i % M;
                    const Index yj = wy * M + j / M, xj = wx * M + j % M;
                    const bool same = ((yi + s >= H) == (yj + s >= H)) && ((xi + s >= W) == (xj + s >= W));
                    mask[((wy * nw + wx) * N + i) * N + j] = same ? 0.0 : -100.0;
                }
    return mask;
}

/// Attention over the windows of a grid [B, H, W, C]; returns the same layout.
inline Array grid_attention(const Array& grid, const WindowAttention<double>& p, Index M, Index s) {
    const Index B = grid.dim(0), H = grid.dim(1), W = grid.dim(2), C = grid.dim(3);
    const Index nh = H / M, nw = W / M, N = M * M;
    // Gather rolled windows: window token (wy, wx, t) reads grid[(y + s) % H, (x + s) % W].
    Array windows({B * nh * nw, N, C});
    for (Index b = 0; b < B; ++b)
        for (Index wy = 0; wy < nh; ++wy)
            for (Index wx = 0; wx < nw; ++wx)
                for (Index t = 0; t < N; ++t) {
                    const Index y = (wy * M + t / M + s) % H, x = (wx * M + t % M + s) % W;
                    for (Index c = 0; c < C; ++c)
                        windows[(((b * nh + wy) * nw + wx) * N + t) * C + c] = grid[((b * H + y) * W + x) * C + c];
                }
    const Array mask = shift_mask(H, W, M, s);
    const Array out = window_attention(windows, p, s > 0 ? &mask : nullptr);
    Array result(grid.shape);
    for (Index b = 0; b < B; ++b)
        for (Index wy = 0; wy < nh; ++wy)
            for (Index wx = 0; wx < nw; ++wx)
                for (Index t = 0; t < N; ++t) {
                    const Index y = (wy * M + t / M + s) % H, x = (wx * M + t % M + s) % W;
                    for (Index c = 0; c < C; ++c)
                        result[((b * H + y) * W + x) * C + c] = out[(((b * nh + wy) * nw + wx) * N + t) * C + c];
                }
    return result;
}

inline Array feed_forward(const Array& x, const FeedForward<double>& f) { return linear(gelu(linear(x, f.fc1)), f.fc2); }

inline Array swin_block(const Array& grid, const SwinBlock<double>& p, Index M, Index s) {
    const Array a = add(grid, grid_attention(layer_norm(grid, p.ln1), p.wmsa, M, 0));
    const Array b = add(a, feed_forward(layer_norm(a, p.ln2), p.ffn1));
    const Array c = add(b, grid_attention(layer_norm(b, p.ln3), p.swmsa, M, s));
    return add(c, feed_forward(layer_norm(c, p.ln4), p.ffn2));
}

/// [B, C, H, W] feature map through a Swin block with zero padding to a window multiple.
inline Array swin_on_map(const Array& x, const SwinBlock<double>& p, Index M, Index s) {
    const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const Index Hp = (H + M - 1) / M * M, Wp = (W + M - 1) / M * M;
    Array grid({B, Hp, Wp, C});
    for (Index b = 0; b < B; ++b)
        for (Index c = 0; c < C; ++c)
            for (Index y = 0; y < H; ++y)
                for (Index xx = 0; xx < W; ++xx) grid[((b * Hp + y) * Wp + xx) * C + c] = x[((b * C + c) * H + y) * W + xx];
    const Array g = swin_block(grid, p, M, s);
    Array out(x.shape);
    for (Index b = 0; b < B; ++b)
        for (Index c = 0; c < C; ++c)
            for (Index y = 0; y < H; ++y)
                for (Index xx = 0; xx < W; ++xx) out[((b * C + c) * H + y) * W + xx] = g[((b * Hp + y) * Wp + xx) * C + c];
    return out;
}

// ---------------------------------------------------------------- composites

inline Array resnet_block(const Array& x, const ResNetBlock<double>& p, Mode mode) {
    Array h = relu(batch_norm(conv2d(x, p.conv1.weight, nullptr, 1, 1, 1), p.bn1, mode));
    h = batch_norm(conv2d(h, p.conv2.weight, nullptr, 1, 1, 1), p.bn2, mode);
    return relu(add(h, x));
}

inline Array resformer(const Array& x, const ResFormerLevel<double>& p, Variant variant, Index M, Index s, Mode mode) {
    if (variant == Variant::Sequential) return swin_on_map(resnet_block(x, p.resnet, mode), p.swin, M, s);
    return add(resnet_block(x, p.resnet, mode), swin_on_map(x, p.swin, M, s));
}

inline Array dfe(const Array& x, const Dfe<double>& p, Mode mode) {
    Array sum(x.shape);
    for (const auto& br : p.branches) {
        const Index d = br.dilated.options.dilation;
        Array h = batch_norm(conv2d(x, br.dilated.weight, nullptr, 1, d, d), br.bn1, mode);
        h = batch_norm(conv2d(h, br.pointwise.weight, nullptr, 1, 0, 1), br.bn2, mode);
        sum = add(sum, h);
    }
    const Array f = relu(sum);
    const Index B = f.dim(0), C = f.dim(1), H = f.dim(2), W = f.dim(3);
    Array pooled({B, 2, H, W});
    for (Index b = 0; b < B; ++b)
        for (Index i = 0; i < H * W; ++i) {
            double mean = 0, mx = -std::numeric_limits<double>::infinity();
            for (Index c = 0; c < C; ++c) {
                mean += f[(b * C + c) * H * W + i];
                mx = std::max(mx, f[(b * C + c) * H * W + i]);
            }
            pooled[(b * 2) * H * W + i] = mean / static_cast<double>(C);
            pooled[(b * 2 + 1) * H * W + i] = mx;
        }
    const Array gate = conv2d(pooled, p.attention.conv.weight, &p.attention.conv.bias, 1, 3, 1);
    Array out(f.shape);
    for (Index b = 0; b < B; ++b)
        for (Index c = 0; c < C; ++c)
            for (Index i = 0; i < H * W; ++i) out[(b * C + c) * H * W + i] = f[(b * C + c) * H * W + i] * sigmoid(gate[b * H * W + i]);
    return out;
}

inline Array concat_channels(const Array& a, const Array& b) {
    const Index B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), HW = a.dim(2) * a.dim(3);
    Array out({B, Ca + Cb, a.dim(2), a.dim(3)});
    for (Index n = 0; n < B; ++n) {
        for (Index c = 0; c < Ca; ++c)
            for (Index i = 0; i < HW; ++i) out[(n * (Ca + Cb) + c) * HW + i] = a[(n * Ca + c) * HW + i];
        for (Index c = 0; c < Cb; ++c)
            for (Index i = 0; i < HW; ++i) out[(n * (Ca + Cb) + Ca + c) * HW + i] = b[(n * Cb + c) * HW + i];
    }
    return out;
}

inline Array decoder_level(const Array& skip, const Array& incoming, const DecoderLevel<double>& p, Mode mode) {
    const Array h = relu(batch_norm(conv2d(concat_channels(skip, incoming), p.conv.weight, nullptr, 1, 1, 1), p.bn, mode));
    return upsample2x(h);
}

inline Array classification_head(const Array& f3, const Array& f4, const ClassificationHead<double>& p) {
    const Array g3 = gap(f3), g4 = gap(f4);
    const Index B = g3.dim(0), C3 = g3.dim(1), C4 = g4.dim(1);
    Array z({B, C3 + C4});
    for (Index b = 0; b < B; ++b) {
        for (Index c = 0; c < C3; ++c) z[b * (C3 + C4) + c] = g3[b * C3 + c];
        for (Index c = 0; c < C4; ++c) z[b * (C3 + C4) + C3 + c] = g4[b * C4 + c];
    }
    return linear(relu(linear(z, p.fc1)), p.fc2);
}

inline Array segmentation_head(const Array& x, const SegmentationHead<double>& p) {
    const Array z = conv2d(x, p.conv.weight, &p.conv.bias, 1, 0, 1);
    const Index B = z.dim(0), K = z.dim(1), HW = z.dim(2) * z.dim(3);
    Array out(z.shape);
    for (Index b = 0; b < B; ++b)
        for (Index i = 0; i < HW; ++i) {
            std::vector<double> col(static_cast<std::size_t>(K));
            for (Index k = 0; k < K; ++k) col[static_cast<std::size_t>(k)] = z[(b * K + k) * HW + i];
            const auto sm = softmax(col);
            for (Index k = 0; k < K; ++k) out[(b * K + k) * HW + i] = sm[static_cast<std::size_t>(k)];
        }
    return out;
}

inline Array stem(const Array& x, const Stem<double>& p, Mode mode) {
    return max_pool2(relu(batch_norm(conv2d(x, p.conv.weight, nullptr, 1, 1, 1), p.bn, mode)));
}

inline std::array<Array, 4> encoder(const Array& image, const Encoder<double>& p, const ModelConfig& cfg, Mode mode) {
    const auto w = cfg.window();
    std::array<Array, 4> f;
    Array h = stem(image, p.stem, mode);
    for (std::size_t i = 0; i < 4; ++i) {
        if (i > 0) h = conv2d(h, p.merges[i - 1].conv.weight, &p.merges[i - 1].conv.bias, 2, 1, 1);
        h = resformer(h, p.levels[i], cfg.variant, w.window_size, w.shift, mode);
        f[i] = h;
    }
    return f;
}

/// Decoder with each skip optionally passed through its DFE (identity when `p.dfe` is empty).
inline Array decoder(const std::array<Array, 4>& f, const Decoder<double>& p, Mode mode) {
    auto skip = [&](std::size_t i) { return p.dfe.empty() ? f[i] : dfe(f[i], p.dfe[i], mode); };
    Array h = upsample2x(skip(3));
    for (std::size_t i = 0; i < 3; ++i) h = decoder_level(skip(2 - i), h, p.levels[i], mode);
    return h;
}

struct ModelOutput {
    Array cls_logits;
    Array seg_probs;
};

inline ModelOutput model(const Array& image, const MtlModel<double>& m, Mode mode) {
    const auto f = encoder(image, m.encoder, m.config, mode);
    return {classification_head(f[2], f[3], m.cls_head), segmentation_head(decoder(f, m.decoder, mode), m.seg_head)};
}

// ---------------------------------------------------------------- losses

inline double weighted_bce(const Array& logits, const Array& labels, const std::vector<double>& w) {
    const Index B = logits.dim(0), n = logits.dim(1);
    double s = 0;
    for (Index b = 0; b < B; ++b)
        for (Index c = 0; c < n; ++c) {
            const double z = logits[b * n + c], y = labels[b * n + c];
            const double p = std::max(sigmoid(z), 1e-7), q = std::max(sigmoid(-z), 1e-7);
            s += (w.empty() ? 1.0 : w[static_cast<std::size_t>(c)]) * -(y * std::log(p) + (1 - y) * std::log(q));
        }
    return s / static_cast<double>(B * n);
}

inline double dice(const Array& probs, const Array& onehot) {
    const Index B = probs.dim(0), K = probs.dim(1), HW = probs.dim(2) * probs.dim(3);
    double s = 0;
    for (Index b = 0; b < B; ++b)
        for (Index k = 1; k < K; ++k) {
            double inter = 0, sp = 0, sg = 0;
            for (Index i = 0; i < HW; ++i) {
                inter += probs[(b * K + k) * HW + i] * onehot[(b * K + k) * HW + i];
                sp += probs[(b * K + k) * HW + i];
                sg += onehot[(b * K + k) * HW + i];
            }
            s += 1.0 - (2 * inter + 1.0) / (sp + sg + 1.0);
        }
    return s / static_cast<double>(B * (K - 1));
}

}  // namespace resformer::reference
