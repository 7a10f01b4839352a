#include "ops_common.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace resformer {

using detail::grad_of;

namespace {

struct BroadcastPlan {
    Shape out;
    std::vector<Index> stride_a, stride_b;
    bool same = false;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
    if (a.size() != b.size())
        throw ShapeError(std::string(op) + ": rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    BroadcastPlan p;
    p.same = a == b;
    p.out.resize(a.size());
    const auto sa = detail::strides_of(a);
    const auto sb = detail::strides_of(b);
    p.stride_a.resize(a.size());
    p.stride_b.resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] != b[i] && a[i] != 1 && b[i] != 1)
            throw ShapeError(std::string(op) + ": axis " + std::to_string(i) + " has extents " + std::to_string(a[i]) +
                             " and " + std::to_string(b[i]) + " (" + shape_str(a) + " vs " + shape_str(b) + ")");
        p.out[i] = std::max(a[i], b[i]);
        p.stride_a[i] = a[i] == 1 ? 0 : sa[i];
        p.stride_b[i] = b[i] == 1 ? 0 : sb[i];
    }
    return p;
}

// Calls f(out_index, a_index, b_index) in row-major order of the output.
template <typename F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
    const Index n = numel_of(p.out);
    const int r = static_cast<int>(p.out.size());
    if (p.same) {
        for (Index o = 0; o < n; ++o) f(o, o, o);
        return;
    }
    std::vector<Index> idx(static_cast<std::size_t>(r), 0);
    Index ia = 0, ib = 0;
    for (Index o = 0; o < n; ++o) {
        f(o, ia, ib);
        for (int d = r - 1; d >= 0; --d) {
            const auto du = static_cast<std::size_t>(d);
            if (++idx[du] < p.out[du]) {
                ia += p.stride_a[du];
                ib += p.stride_b[du];
                break;
            }
            ia -= p.stride_a[du] * (p.out[du] - 1);
            ib -= p.stride_b[du] * (p.out[du] - 1);
            idx[du] = 0;
        }
    }
}

enum class BinaryKind { Add, Sub, Mul };

template <typename S>
Tensor<S> binary(const Tensor<S>& a, const Tensor<S>& b, BinaryKind kind, const char* name) {
    auto plan = plan_broadcast(a.shape(), b.shape(), name);
    Storage<S> out(static_cast<std::size_t>(numel_of(plan.out)));
    const auto av = a.values();
    const auto bv = b.values();
    switch (kind) {
        case BinaryKind::Add: for_each_broadcast(plan, [&](Index o, Index i, Index j) { out[o] = av[i] + bv[j]; }); break;
        case BinaryKind::Sub: for_each_broadcast(plan, [&](Index o, Index i, Index j) { out[o] = av[i] - bv[j]; }); break;
        case BinaryKind::Mul: for_each_broadcast(plan, [&](Index o, Index i, Index j) { out[o] = av[i] * bv[j]; }); break;
    }
    Shape shape = plan.out;
    return detail::make_result<S>(std::move(shape), std::move(out), {a, b},
                                  [a, b, plan = std::move(plan), kind](TensorNode<S>& self) {
        const auto& g = self.grad;
        const bool ga = a.requires_grad(), gb = b.requires_grad();
        auto& da = grad_of(a);
        auto& db = grad_of(b);
        const auto av = a.values();
        const auto bv = b.values();
        for_each_broadcast(plan, [&](Index o, Index i, Index j) {
            switch (kind) {
                case BinaryKind::Add:
                    if (ga) da[i] += g[o];
                    if (gb) db[j] += g[o];
                    break;
                case BinaryKind::Sub:
                    if (ga) da[i] += g[o];
                    if (gb) db[j] -= g[o];
                    break;
                case BinaryKind::Mul:
                    if (ga) da[i] += g[o] * bv[j];
                    if (gb) db[j] += g[o] * av[i];
                    break;
            }
        });
    });
}

// Elementwise unary op; `deriv(x, y)` is dy/dx given input and output.
template <typename S, typename F, typename D>
Tensor<S> unary(const Tensor<S>& x, F&& f, D deriv) {
    const auto xv = x.values();
    Storage<S> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    return detail::make_result<S>(x.shape(), std::move(out), {x}, [x, deriv](TensorNode<S>& self) {
        auto& dx = grad_of(x);
        const auto xv = x.values();
        for (std::size_t i = 0; i < xv.size(); ++i) dx[i] += self.grad[i] * deriv(xv[i], self.value[i]);
    });
}

}  // namespace

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    return binary(a, b, BinaryKind::Add, "add");
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    return binary(a, b, BinaryKind::Sub, "sub");
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    return binary(a, b, BinaryKind::Mul, "mul");
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S factor) {
    return unary(a, [factor](S v) { return v * factor; }, [factor](S, S) { return factor; });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
    // Subgradient at exactly 0 is 0. NaN passes through.
    return unary(x, [](S v) { return v < S(0) ? S(0) : v; }, [](S v, S) { return v > S(0) ? S(1) : S(0); });
}

template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
    constexpr S inv_sqrt2 = S(1) / std::numbers::sqrt2_v<S>;
    constexpr S inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<S> * inv_sqrt2;
    return unary(
        x, [](S v) { return S(0.5) * v * (S(1) + std::erf(v * inv_sqrt2)); },
        [](S v, S) { return S(0.5) * (S(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(S(-0.5) * v * v); });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
    return unary(
        x,
        [](S v) {
            if (v >= S(0)) return S(1) / (S(1) + std::exp(-v));
            const S e = std::exp(v);
            return e / (S(1) + e);
        },
        [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Tensor<S> softmax(const Tensor<S>& x, int axis) {
    const int ax = detail::normalize_axis(axis, x.rank(), "softmax");
    const auto sp = detail::split_at(x.shape(), ax);
    const auto xv = x.values();
    Storage<S> out(xv.size());
    for (Index o = 0; o < sp.outer; ++o)
        for (Index in = 0; in < sp.inner; ++in) {
            const Index base = o * sp.extent * sp.inner + in;
            S mx = -std::numeric_limits<S>::infinity();
            for (Index k = 0; k < sp.extent; ++k) mx = std::max(mx, xv[base + k * sp.inner]);
            S total = 0;
            for (Index k = 0; k < sp.extent; ++k) {
                const S e = std::exp(xv[base + k * sp.inner] - mx);
                out[base + k * sp.inner] = e;
                total += e;
            }
            for (Index k = 0; k < sp.extent; ++k) out[base + k * sp.inner] /= total;
        }
    return detail::make_result<S>(x.shape(), std::move(out), {x}, [x, sp](TensorNode<S>& self) {
        auto& dx = grad_of(x);
        const auto& y = self.value;
        const auto& g = self.grad;
        for (Index o = 0; o < sp.outer; ++o)
            for (Index in = 0; in < sp.inner; ++in) {
                const Index base = o * sp.extent * sp.inner + in;
                S dot = 0;
                for (Index k = 0; k < sp.extent; ++k) dot += g[base + k * sp.inner] * y[base + k * sp.inner];
                for (Index k = 0; k < sp.extent; ++k) {
                    const Index i = base + k * sp.inner;
                    dx[i] += y[i] * (g[i] - dot);
                }
            }
    });
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
    S total = 0;
    for (S v : x.values()) total += v;
    return detail::make_result<S>(Shape{1}, {total}, {x}, [x](TensorNode<S>& self) {
        auto& dx = grad_of(x);
        for (auto& d : dx) d += self.grad[0];
    });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
    const S n = S(x.numel());
    S total = 0;
    for (S v : x.values()) total += v;
    return detail::make_result<S>(Shape{1}, {total / n}, {x}, [x, n](TensorNode<S>& self) {
        auto& dx = grad_of(x);
        const S g = self.grad[0] / n;
        for (auto& d : dx) d += g;
    });
}

template <typename S>
Tensor<S> mean_axis(const Tensor<S>& x, int axis) {
    const int ax = detail::normalize_axis(axis, x.rank(), "mean_axis");
    const auto sp = detail::split_at(x.shape(), ax);
    Shape shape = x.shape();
    shape[static_cast<std::size_t>(ax)] = 1;
    const auto xv = x.values();
    Storage<S> out(static_cast<std::size_t>(sp.outer * sp.inner), S(0));
    for (Index o = 0; o < sp.outer; ++o)
        for (Index k = 0; k < sp.extent; ++k)
            for (Index in = 0; in < sp.inner; ++in) out[o * sp.inner + in] += xv[(o * sp.extent + k) * sp.inner + in];
    for (auto& v : out) v /= S(sp.extent);
    return detail::make_result<S>(std::move(shape), std::move(out), {x}, [x, sp](TensorNode<S>& self) {
        auto& dx = grad_of(x);
        const S inv = S(1) / S(sp.extent);
        for (Index o = 0; o < sp.outer; ++o)
            for (Index k = 0; k < sp.extent; ++k)
                for (Index in = 0; in < sp.inner; ++in)
                    dx[(o * sp.extent + k) * sp.inner + in] += self.grad[o * sp.inner + in] * inv;
    });
}

template <typename S>
Tensor<S> max_axis(const Tensor<S>& x, int axis) {
    const int ax = detail::normalize_axis(axis, x.rank(), "max_axis");
    const auto sp = detail::split_at(x.shape(), ax);
    if (sp.extent == 0) throw ShapeError("max_axis: empty axis");
    Shape shape = x.shape();
    shape[static_cast<std::size_t>(ax)] = 1;
    const auto xv = x.values();
    Storage<S> out(static_cast<std::size_t>(sp.outer * sp.inner));
    std::vector<Index> arg(out.size());
    for (Index o = 0; o < sp.outer; ++o)
        for (Index in = 0; in < sp.inner; ++in) {
            Index best = o * sp.extent * sp.inner + in;
            for (Index k = 1; k < sp.extent; ++k) {
                const Index i = (o * sp.extent + k) * sp.inner + in;
                if (xv[i] > xv[best]) best = i;
            }
            out[o * sp.inner + in] = xv[best];
            arg[o * sp.inner + in] = best;
        }
    return detail::make_result<S>(std::move(shape), std::move(out), {x}, [x, arg = std::move(arg)](TensorNode<S>& self) {
        auto& dx = grad_of(x);
        for (std::size_t i = 0; i < arg.size(); ++i) dx[arg[i]] += self.grad[i];
    });
}

#define INSTANTIATE(S)                                                    \
    template Tensor<S> add<S>(const Tensor<S>&, const Tensor<S>&);        \
    template Tensor<S> sub<S>(const Tensor<S>&, const Tensor<S>&);        \
    template Tensor<S> mul<S>(const Tensor<S>&, const Tensor<S>&);        \
    template Tensor<S> scale<S>(const Tensor<S>&, S);                     \
    template Tensor<S> relu<S>(const Tensor<S>&);                         \
    template Tensor<S> gelu<S>(const Tensor<S>&);                         \
    template Tensor<S> sigmoid<S>(const Tensor<S>&);                      \
    template Tensor<S> softmax<S>(const Tensor<S>&, int);                 \
    template Tensor<S> sum<S>(const Tensor<S>&);                          \
    template Tensor<S> mean<S>(const Tensor<S>&);                         \
    template Tensor<S> mean_axis<S>(const Tensor<S>&, int);               \
    template Tensor<S> max_axis<S>(const Tensor<S>&, int);
RESFORMER_FOR_EACH_SCALAR(INSTANTIATE)

}  // namespace resformer
