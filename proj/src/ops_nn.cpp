#include "ops_common.hpp"

#include <algorithm>
#include <cmath>

namespace resformer {

using detail::ConstMatMap;
using detail::grad_of;
using detail::MatMap;
using detail::RowMatrix;

Index conv_out_size(Index in, Index kernel, Index stride, Index padding, Index dilation) {
    const Index span = in + 2 * padding - dilation * (kernel - 1) - 1;
    if (span < 0) return 0;
    return span / stride + 1;
}

// ---------------------------------------------------------------- matmuls

template <typename S>
Tensor<S> bmm(const Tensor<S>& a, const Tensor<S>& b, bool transpose_a, bool transpose_b) {
    detail::require_rank(a.shape(), 3, "bmm", "lhs");
    detail::require_rank(b.shape(), 3, "bmm", "rhs");
    const Index n = a.dim(0);
    if (b.dim(0) != n) throw ShapeError("bmm: axis 0 (batch) differs: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const Index ar = a.dim(1), ac = a.dim(2), br = b.dim(1), bc = b.dim(2);
    const Index m = transpose_a ? ac : ar;
    const Index k = transpose_a ? ar : ac;
    const Index kb = transpose_b ? bc : br;
    const Index p = transpose_b ? br : bc;
    if (k != kb) throw ShapeError("bmm: contraction axis differs (" + std::to_string(k) + " vs " + std::to_string(kb) + ")");
    Storage<S> out(static_cast<std::size_t>(n * m * p));
    for (Index i = 0; i < n; ++i) {
        ConstMatMap<S> A(a.values().data() + i * ar * ac, ar, ac);
        ConstMatMap<S> B(b.values().data() + i * br * bc, br, bc);
        MatMap<S> C(out.data() + i * m * p, m, p);
        if (!transpose_a && !transpose_b) C.noalias() = A * B;
        else if (!transpose_a && transpose_b) C.noalias() = A * B.transpose();
        else if (transpose_a && !transpose_b) C.noalias() = A.transpose() * B;
        else C.noalias() = A.transpose() * B.transpose();
    }
    return detail::make_result<S>(Shape{n, m, p}, std::move(out), {a, b},
                                  [a, b, transpose_a, transpose_b, n, m, p](TensorNode<S>& self) {
        const Index ar = a.dim(1), ac = a.dim(2), br = b.dim(1), bc = b.dim(2);
        for (Index i = 0; i < n; ++i) {
            ConstMatMap<S> G(self.grad.data() + i * m * p, m, p);
            ConstMatMap<S> A(a.values().data() + i * ar * ac, ar, ac);
            ConstMatMap<S> B(b.values().data() + i * br * bc, br, bc);
            if (a.requires_grad()) {
                MatMap<S> dA(grad_of(a).data() + i * ar * ac, ar, ac);
                // op(A) = G op(B)^T
                if (!transpose_a && !transpose_b) dA.noalias() += G * B.transpose();
                else if (!transpose_a && transpose_b) dA.noalias() += G * B;
                else if (transpose_a && !transpose_b) dA.noalias() += B * G.transpose();
                else dA.noalias() += B.transpose() * G.transpose();
            }
            if (b.requires_grad()) {
                MatMap<S> dB(grad_of(b).data() + i * br * bc, br, bc);
                // op(B) = op(A)^T G
                if (!transpose_a && !transpose_b) dB.noalias() += A.transpose() * G;
                else if (!transpose_a && transpose_b) dB.noalias() += G.transpose() * A;
                else if (transpose_a && !transpose_b) dB.noalias() += A * G;
                else dB.noalias() += G.transpose() * A.transpose();
            }
        }
    });
}

template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias) {
    detail::require_rank(weight.shape(), 2, "linear", "weight");
    if (x.rank() < 1) throw ShapeError("linear: input must have rank >= 1");
    const Index din = weight.dim(1), dout = weight.dim(0);
    if (x.dim(-1) != din)
        throw ShapeError("linear: last axis of input is " + std::to_string(x.dim(-1)) + ", weight expects " + std::to_string(din));
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != dout))
        throw ShapeError("linear: bias must have shape [" + std::to_string(dout) + "], got " + shape_str(bias.shape()));
    const Index rows = x.numel() / std::max<Index>(din, 1);
    Shape shape = x.shape();
    shape.back() = dout;
    Storage<S> out(static_cast<std::size_t>(rows * dout));
    ConstMatMap<S> X(x.values().data(), rows, din);
    ConstMatMap<S> W(weight.values().data(), dout, din);
    MatMap<S> Y(out.data(), rows, dout);
    Y.noalias() = X * W.transpose();
    if (bias.defined()) {
        Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>> bv(bias.values().data(), dout);
        Y.rowwise() += bv;
    }
    return detail::make_result<S>(std::move(shape), std::move(out), {x, weight, bias},
                                  [x, weight, bias, rows, din, dout](TensorNode<S>& self) {
        ConstMatMap<S> G(self.grad.data(), rows, dout);
        if (x.requires_grad()) {
            MatMap<S> dX(grad_of(x).data(), rows, din);
            dX.noalias() += G * ConstMatMap<S>(weight.values().data(), dout, din);
        }
        if (weight.requires_grad()) {
            MatMap<S> dW(grad_of(weight).data(), dout, din);
            dW.noalias() += G.transpose() * ConstMatMap<S>(x.values().data(), rows, din);
        }
        if (bias.defined() && bias.requires_grad()) {
            Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>> db(grad_of(bias).data(), dout);
            db += G.colwise().sum();
        }
    });
}

// ---------------------------------------------------------------- conv2d

namespace {

struct ConvGeometry {
    Index batch, cin, h, w, cout, kh, kw, ho, wo, stride, pad, dil;
    Index taps() const { return cin * kh * kw; }
    Index positions() const { return ho * wo; }
    bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

// Output positions per GEMM tile; bounds the im2col buffer.
Index conv_tile(const ConvGeometry& g) {
    constexpr Index kBudget = Index(1) << 21;
    return std::clamp<Index>(kBudget / std::max<Index>(g.taps(), 1), 1, std::max<Index>(g.positions(), 1));
}

template <typename S>
void im2col(const ConvGeometry& g, const S* img, Index p0, Index count, S* cols) {
    for (Index c = 0; c < g.cin; ++c)
        for (Index ki = 0; ki < g.kh; ++ki)
            for (Index kj = 0; kj < g.kw; ++kj) {
                S* row = cols + ((c * g.kh + ki) * g.kw + kj) * count;
                const S* plane = img + c * g.h * g.w;
                for (Index t = 0; t < count; ++t) {
                    const Index p = p0 + t;
                    const Index y = (p / g.wo) * g.stride - g.pad + ki * g.dil;
                    const Index x = (p % g.wo) * g.stride - g.pad + kj * g.dil;
                    row[t] = (y >= 0 && y < g.h && x >= 0 && x < g.w) ? plane[y * g.w + x] : S(0);
                }
            }
}

template <typename S>
void col2im(const ConvGeometry& g, const S* cols, Index p0, Index count, S* img) {
    for (Index c = 0; c < g.cin; ++c)
        for (Index ki = 0; ki < g.kh; ++ki)
            for (Index kj = 0; kj < g.kw; ++kj) {
                const S* row = cols + ((c * g.kh + ki) * g.kw + kj) * count;
                S* plane = img + c * g.h * g.w;
                for (Index t = 0; t < count; ++t) {
                    const Index p = p0 + t;
                    const Index y = (p / g.wo) * g.stride - g.pad + ki * g.dil;
                    const Index x = (p % g.wo) * g.stride - g.pad + kj * g.dil;
                    if (y >= 0 && y < g.h && x >= 0 && x < g.w) plane[y * g.w + x] += row[t];
                }
            }
}

}  // namespace

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias, Conv2dOptions opt) {
    detail::require_rank(x.shape(), 4, "conv2d", "input");
    detail::require_rank(weight.shape(), 4, "conv2d", "weight");
    if (opt.stride < 1 || opt.dilation < 1 || opt.padding < 0)
        throw std::invalid_argument("conv2d: stride and dilation must be >= 1, padding >= 0");
    ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), weight.dim(3), 0, 0,
                   opt.stride, opt.padding, opt.dilation};
    if (weight.dim(1) != g.cin)
        throw ShapeError("conv2d: axis 1 (input channels) is " + std::to_string(g.cin) + " but weight expects " +
                         std::to_string(weight.dim(1)));
    if (g.kh < 1 || g.kw < 1) throw ShapeError("conv2d: kernel extent must be >= 1");
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.cout))
        throw ShapeError("conv2d: bias must have shape [" + std::to_string(g.cout) + "], got " + shape_str(bias.shape()));
    g.ho = conv_out_size(g.h, g.kh, g.stride, g.pad, g.dil);
    g.wo = conv_out_size(g.w, g.kw, g.stride, g.pad, g.dil);
    if (g.ho < 1) throw ShapeError("conv2d: axis 2 (height) too small for kernel");
    if (g.wo < 1) throw ShapeError("conv2d: axis 3 (width) too small for kernel");

    const Index P = g.positions(), K = g.taps();
    Storage<S> out(static_cast<std::size_t>(g.batch * g.cout * P));
    ConstMatMap<S> Wm(weight.values().data(), g.cout, K);
    using Strided = Eigen::Map<RowMatrix<S>, 0, Eigen::OuterStride<>>;
    using ConstStrided = Eigen::Map<const RowMatrix<S>, 0, Eigen::OuterStride<>>;
    const Index tile = conv_tile(g);
    Storage<S> cols;
    if (!g.pointwise()) cols.resize(static_cast<std::size_t>(K * tile));
    for (Index b = 0; b < g.batch; ++b) {
        const S* img = x.values().data() + b * g.cin * g.h * g.w;
        for (Index p0 = 0; p0 < P; p0 += tile) {
            const Index n = std::min(tile, P - p0);
            Strided Y(out.data() + b * g.cout * P + p0, g.cout, n, Eigen::OuterStride<>(P));
            if (g.pointwise()) {
                Y.noalias() = Wm * ConstStrided(img + p0, K, n, Eigen::OuterStride<>(P));
            } else {
                im2col(g, img, p0, n, cols.data());
                Y.noalias() = Wm * ConstMatMap<S>(cols.data(), K, n);
            }
        }
        if (bias.defined())
            for (Index c = 0; c < g.cout; ++c) {
                S* row = out.data() + (b * g.cout + c) * P;
                const S bc = bias.values()[static_cast<std::size_t>(c)];
                for (Index p = 0; p < P; ++p) row[p] += bc;
            }
    }
    Shape shape{g.batch, g.cout, g.ho, g.wo};
    return detail::make_result<S>(std::move(shape), std::move(out), {x, weight, bias},
                                  [x, weight, bias, g](TensorNode<S>& self) {
        const Index P = g.positions(), K = g.taps();
        const Index tile = conv_tile(g);
        Storage<S> cols, dcols;
        if (!g.pointwise()) cols.resize(static_cast<std::size_t>(K * tile));
        dcols.resize(static_cast<std::size_t>(K * tile));
        ConstMatMap<S> Wm(weight.values().data(), g.cout, K);
        for (Index b = 0; b < g.batch; ++b) {
            const S* img = x.values().data() + b * g.cin * g.h * g.w;
            for (Index p0 = 0; p0 < P; p0 += tile) {
                const Index n = std::min(tile, P - p0);
                ConstStrided G(self.grad.data() + b * g.cout * P + p0, g.cout, n, Eigen::OuterStride<>(P));
                if (weight.requires_grad()) {
                    MatMap<S> dW(grad_of(weight).data(), g.cout, K);
                    if (g.pointwise()) {
                        dW.noalias() += G * ConstStrided(img + p0, K, n, Eigen::OuterStride<>(P)).transpose();
                    } else {
                        im2col(g, img, p0, n, cols.data());
                        dW.noalias() += G * ConstMatMap<S>(cols.data(), K, n).transpose();
                    }
                }
                if (x.requires_grad()) {
                    S* dimg = grad_of(x).data() + b * g.cin * g.h * g.w;
                    if (g.pointwise()) {
                        Strided(dimg + p0, K, n, Eigen::OuterStride<>(P)).noalias() += Wm.transpose() * G;
                    } else {
                        MatMap<S> dC(dcols.data(), K, n);
                        dC.noalias() = Wm.transpose() * G;
                        col2im(g, dcols.data(), p0, n, dimg);
                    }
                }
            }
            if (bias.defined() && bias.requires_grad()) {
                auto& db = grad_of(bias);
                for (Index c = 0; c < g.cout; ++c) {
                    const S* row = self.grad.data() + (b * g.cout + c) * P;
                    S acc = 0;
                    for (Index p = 0; p < P; ++p) acc += row[p];
                    db[static_cast<std::size_t>(c)] += acc;
                }
            }
        }
    });
}

// ---------------------------------------------------------------- normalization

template <typename S>
Tensor<S> batch_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, BatchNormStats<S>& stats, Mode mode,
                     S eps, S momentum) {
    detail::require_rank(x.shape(), 4, "batch_norm", "input");
    const Index B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    if (gamma.numel() != C || beta.numel() != C)
        throw ShapeError("batch_norm: axis 1 (channels) is " + std::to_string(C) + " but affine parameters have " +
                         std::to_string(gamma.numel()));
    const Index n = B * HW;
    std::vector<S> mu(static_cast<std::size_t>(C)), invstd(static_cast<std::size_t>(C));
    const auto xv = x.values();
    if (mode == Mode::Train) {
        if (n <= 1) throw std::domain_error("batch_norm: degenerate variance, batch*height*width == 1 in train mode");
        if (static_cast<Index>(stats.mean.size()) != C) stats = BatchNormStats<S>(C);
        for (Index c = 0; c < C; ++c) {
            S s = 0;
            for (Index b = 0; b < B; ++b)
                for (Index p = 0; p < HW; ++p) s += xv[(b * C + c) * HW + p];
            const S m = s / S(n);
            S ss = 0;
            for (Index b = 0; b < B; ++b)
                for (Index p = 0; p < HW; ++p) {
                    const S d = xv[(b * C + c) * HW + p] - m;
                    ss += d * d;
                }
            const S var = ss / S(n);
            mu[c] = m;
            invstd[c] = S(1) / std::sqrt(var + eps);
            stats.mean[c] = (S(1) - momentum) * stats.mean[c] + momentum * m;
            stats.var[c] = (S(1) - momentum) * stats.var[c] + momentum * (ss / S(n - 1));
        }
    } else {
        if (static_cast<Index>(stats.mean.size()) != C || static_cast<Index>(stats.var.size()) != C)
            throw std::logic_error("batch_norm: eval mode needs running statistics for " + std::to_string(C) + " channels");
        for (Index c = 0; c < C; ++c) {
            mu[c] = stats.mean[c];
            invstd[c] = S(1) / std::sqrt(stats.var[c] + eps);
        }
    }
    std::vector<S> xhat(xv.size());
    Storage<S> out(xv.size());
    const auto gv = gamma.values(), bv = beta.values();
    for (Index b = 0; b < B; ++b)
        for (Index c = 0; c < C; ++c)
            for (Index p = 0; p < HW; ++p) {
                const Index i = (b * C + c) * HW + p;
                xhat[i] = (xv[i] - mu[c]) * invstd[c];
                out[i] = gv[c] * xhat[i] + bv[c];
            }
    return detail::make_result<S>(x.shape(), std::move(out), {x, gamma, beta},
                                  [x, gamma, beta, mode, B, C, HW, n, invstd = std::move(invstd),
                                   xhat = std::move(xhat)](TensorNode<S>& self) {
        const auto& g = self.grad;
        const auto gv = gamma.values();
        for (Index c = 0; c < C; ++c) {
            S sg = 0, sgx = 0;
            for (Index b = 0; b < B; ++b)
                for (Index p = 0; p < HW; ++p) {
                    const Index i = (b * C + c) * HW + p;
                    sg += g[i];
                    sgx += g[i] * xhat[i];
                }
            if (gamma.requires_grad()) grad_of(gamma)[c] += sgx;
            if (beta.requires_grad()) grad_of(beta)[c] += sg;
            if (!x.requires_grad()) continue;
            auto& dx = grad_of(x);
            const S k = gv[c] * invstd[c];
            for (Index b = 0; b < B; ++b)
                for (Index p = 0; p < HW; ++p) {
                    const Index i = (b * C + c) * HW + p;
                    if (mode == Mode::Train)
                        dx[i] += k * (g[i] - sg / S(n) - xhat[i] * sgx / S(n));
                    else
                        dx[i] += k * g[i];
                }
        }
    });
}

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps) {
    if (x.rank() < 1) throw ShapeError("layer_norm: input must have rank >= 1");
    const Index C = x.dim(-1);
    if (C == 0) throw ShapeError("layer_norm: last axis is empty");
    if (gamma.numel() != C || beta.numel() != C)
        throw ShapeError("layer_norm: last axis is " + std::to_string(C) + " but affine parameters have " +
                         std::to_string(gamma.numel()));
    const Index rows = x.numel() / C;
    const auto xv = x.values(), gv = gamma.values(), bv = beta.values();
    std::vector<S> xhat(xv.size()), invstd(static_cast<std::size_t>(rows));
    Storage<S> out(xv.size());
    for (Index r = 0; r < rows; ++r) {
        const S* row = xv.data() + r * C;
        S m = 0;
        for (Index c = 0; c < C; ++c) m += row[c];
        m /= S(C);
        S v = 0;
        for (Index c = 0; c < C; ++c) v += (row[c] - m) * (row[c] - m);
        v /= S(C);
        const S is = S(1) / std::sqrt(v + eps);
        invstd[r] = is;
        for (Index c = 0; c < C; ++c) {
            const Index i = r * C + c;
            xhat[i] = (row[c] - m) * is;
            out[i] = gv[c] * xhat[i] + bv[c];
        }
    }
    return detail::make_result<S>(x.shape(), std::move(out), {x, gamma, beta},
                                  [x, gamma, beta, rows, C, invstd = std::move(invstd), xhat = std::move(xhat)](TensorNode<S>& self) {
        const auto& g = self.grad;
        const auto gv = gamma.values();
        for (Index r = 0; r < rows; ++r) {
            S sdy = 0, sdyx = 0;
            for (Index c = 0; c < C; ++c) {
                const Index i = r * C + c;
                const S dy = g[i] * gv[c];
                sdy += dy;
                sdyx += dy * xhat[i];
                if (gamma.requires_grad()) grad_of(gamma)[c] += g[i] * xhat[i];
                if (beta.requires_grad()) grad_of(beta)[c] += g[i];
            }
            if (!x.requires_grad()) continue;
            auto& dx = grad_of(x);
            for (Index c = 0; c < C; ++c) {
                const Index i = r * C + c;
                dx[i] += invstd[r] * (g[i] * gv[c] - sdy / S(C) - xhat[i] * sdyx / S(C));
            }
        }
    });
}

// ---------------------------------------------------------------- pooling / resampling

template <typename S>
Tensor<S> max_pool2d(const Tensor<S>& x, Index kernel, Index stride) {
    detail::require_rank(x.shape(), 4, "max_pool2d", "input");
    if (kernel < 1 || stride < 1) throw ShapeError("max_pool2d: empty window");
    const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (kernel > H) throw ShapeError("max_pool2d: window larger than axis 2 (height)");
    if (kernel > W) throw ShapeError("max_pool2d: window larger than axis 3 (width)");
    const Index Ho = (H - kernel) / stride + 1, Wo = (W - kernel) / stride + 1;
    const auto xv = x.values();
    Storage<S> out(static_cast<std::size_t>(B * C * Ho * Wo));
    std::vector<Index> arg(out.size());
    for (Index bc = 0; bc < B * C; ++bc)
        for (Index i = 0; i < Ho; ++i)
            for (Index j = 0; j < Wo; ++j) {
                Index best = bc * H * W + (i * stride) * W + j * stride;
                for (Index a = 0; a < kernel; ++a)
                    for (Index b = 0; b < kernel; ++b) {
                        const Index idx = bc * H * W + (i * stride + a) * W + j * stride + b;
                        if (xv[idx] > xv[best]) best = idx;
                    }
                const Index o = (bc * Ho + i) * Wo + j;
                out[o] = xv[best];
                arg[o] = best;
            }
    return detail::make_result<S>(Shape{B, C, Ho, Wo}, std::move(out), {x}, [x, arg = std::move(arg)](TensorNode<S>& self) {
        auto& dx = grad_of(x);
        for (std::size_t o = 0; o < arg.size(); ++o) dx[arg[o]] += self.grad[o];
    });
}

template <typename S>
Tensor<S> global_avg_pool(const Tensor<S>& x) {
    detail::require_rank(x.shape(), 4, "global_avg_pool", "input");
    const Index B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    if (HW == 0) throw ShapeError("global_avg_pool: empty spatial extent");
    const auto xv = x.values();
    Storage<S> out(static_cast<std::size_t>(B * C));
    for (Index bc = 0; bc < B * C; ++bc) {
        S s = 0;
        for (Index p = 0; p < HW; ++p) s += xv[bc * HW + p];
        out[bc] = s / S(HW);
    }
    return detail::make_result<S>(Shape{B, C}, std::move(out), {x}, [x, HW](TensorNode<S>& self) {
        auto& dx = grad_of(x);
        for (std::size_t bc = 0; bc < self.grad.size(); ++bc) {
            const S g = self.grad[bc] / S(HW);
            for (Index p = 0; p < HW; ++p) dx[bc * HW + p] += g;
        }
    });
}

namespace {

struct LerpTap {
    Index lo, hi;
    double frac;
};

// Half-pixel source coordinates for an exact 2x upscale.
std::vector<LerpTap> upsample_taps(Index in) {
    std::vector<LerpTap> taps(static_cast<std::size_t>(2 * in));
    for (Index o = 0; o < 2 * in; ++o) {
        double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
        if (src < 0) src = 0;
        const auto lo = static_cast<Index>(std::floor(src));
        const Index hi = std::min(lo + 1, in - 1);
        taps[static_cast<std::size_t>(o)] = {lo, hi, src - static_cast<double>(lo)};
    }
    return taps;
}

}  // namespace

template <typename S>
Tensor<S> upsample_bilinear2x(const Tensor<S>& x) {
    detail::require_rank(x.shape(), 4, "upsample_bilinear2x", "input");
    const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H < 1 || W < 1) throw ShapeError("upsample_bilinear2x: empty spatial extent");
    const auto ty = upsample_taps(H), tx = upsample_taps(W);
    const Index Ho = 2 * H, Wo = 2 * W;
    const auto xv = x.values();
    Storage<S> out(static_cast<std::size_t>(B * C * Ho * Wo));
    for (Index bc = 0; bc < B * C; ++bc) {
        const S* plane = xv.data() + bc * H * W;
        for (Index i = 0; i < Ho; ++i) {
            const auto& a = ty[static_cast<std::size_t>(i)];
            const S fy = S(a.frac);
            for (Index j = 0; j < Wo; ++j) {
                const auto& b = tx[static_cast<std::size_t>(j)];
                const S fx = S(b.frac);
                const S top = plane[a.lo * W + b.lo] * (S(1) - fx) + plane[a.lo * W + b.hi] * fx;
                const S bot = plane[a.hi * W + b.lo] * (S(1) - fx) + plane[a.hi * W + b.hi] * fx;
                out[(bc * Ho + i) * Wo + j] = top * (S(1) - fy) + bot * fy;
            }
        }
    }
    return detail::make_result<S>(Shape{B, C, Ho, Wo}, std::move(out), {x}, [x, ty, tx, B, C, H, W](TensorNode<S>& self) {
        auto& dx = grad_of(x);
        const Index Ho = 2 * H, Wo = 2 * W;
        for (Index bc = 0; bc < B * C; ++bc) {
            S* plane = dx.data() + bc * H * W;
            for (Index i = 0; i < Ho; ++i) {
                const auto& a = ty[static_cast<std::size_t>(i)];
                const S fy = S(a.frac);
                for (Index j = 0; j < Wo; ++j) {
                    const auto& b = tx[static_cast<std::size_t>(j)];
                    const S fx = S(b.frac);
                    const S g = self.grad[(bc * Ho + i) * Wo + j];
                    plane[a.lo * W + b.lo] += g * (S(1) - fy) * (S(1) - fx);
                    plane[a.lo * W + b.hi] += g * (S(1) - fy) * fx;
                    plane[a.hi * W + b.lo] += g * fy * (S(1) - fx);
                    plane[a.hi * W + b.hi] += g * fy * fx;
                }
            }
        }
    });
}

#define INSTANTIATE(S)                                                                                                  \
    template Tensor<S> bmm<S>(const Tensor<S>&, const Tensor<S>&, bool, bool);                                          \
    template Tensor<S> linear<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);                                 \
    template Tensor<S> conv2d<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Conv2dOptions);                  \
    template Tensor<S> batch_norm<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, BatchNormStats<S>&, Mode, S, \
                                     S);                                                                                \
    template Tensor<S> layer_norm<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S);                          \
    template Tensor<S> max_pool2d<S>(const Tensor<S>&, Index, Index);                                                   \
    template Tensor<S> global_avg_pool<S>(const Tensor<S>&);                                                            \
    template Tensor<S> upsample_bilinear2x<S>(const Tensor<S>&);
RESFORMER_FOR_EACH_SCALAR(INSTANTIATE)

}  // namespace resformer
