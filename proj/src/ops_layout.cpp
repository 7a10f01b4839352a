#include "ops_common.hpp"

#include <algorithm>
#include <numeric>

namespace resformer {

using detail::grad_of;

namespace {

// Source index for every output element of a gather-style op. Backward
// scatters along the same map.
template <typename S>
Tensor<S> index_map_op(const Tensor<S>& x, Shape shape, std::vector<Index> src) {
    const auto xv = x.values();
    Storage<S> out(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) out[i] = src[i] < 0 ? S(0) : xv[static_cast<std::size_t>(src[i])];
    return detail::make_result<S>(std::move(shape), std::move(out), {x}, [x, src = std::move(src)](TensorNode<S>& self) {
        auto& dx = grad_of(x);
        for (std::size_t i = 0; i < src.size(); ++i)
            if (src[i] >= 0) dx[static_cast<std::size_t>(src[i])] += self.grad[i];
    });
}

// Visits every multi-index of `shape` in row-major order.
template <typename F>
void for_each_index(const Shape& shape, F&& f) {
    const Index n = numel_of(shape);
    std::vector<Index> idx(shape.size(), 0);
    for (Index o = 0; o < n; ++o) {
        f(o, idx);
        for (int d = static_cast<int>(shape.size()) - 1; d >= 0; --d) {
            const auto du = static_cast<std::size_t>(d);
            if (++idx[du] < shape[du]) break;
            idx[du] = 0;
        }
    }
}

}  // namespace

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
    if (numel_of(shape) != x.numel())
        throw ShapeError("reshape: " + shape_str(x.shape()) + " cannot become " + shape_str(shape));
    Storage<S> out(x.values().begin(), x.values().end());
    return detail::make_result<S>(std::move(shape), std::move(out), {x}, [x](TensorNode<S>& self) {
        auto& dx = grad_of(x);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i];
    });
}

template <typename S>
Tensor<S> permute(const Tensor<S>& x, const std::vector<int>& dims) {
    const int r = x.rank();
    if (static_cast<int>(dims.size()) != r) throw ShapeError("permute: expected " + std::to_string(r) + " axes");
    std::vector<int> seen(dims);
    std::sort(seen.begin(), seen.end());
    for (int i = 0; i < r; ++i)
        if (seen[static_cast<std::size_t>(i)] != i) throw ShapeError("permute: axes are not a permutation");
    const auto in_strides = detail::strides_of(x.shape());
    Shape shape(static_cast<std::size_t>(r));
    std::vector<Index> src_stride(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) {
        shape[static_cast<std::size_t>(i)] = x.shape()[static_cast<std::size_t>(dims[static_cast<std::size_t>(i)])];
        src_stride[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(dims[static_cast<std::size_t>(i)])];
    }
    std::vector<Index> src(static_cast<std::size_t>(x.numel()));
    for_each_index(shape, [&](Index o, const std::vector<Index>& idx) {
        Index s = 0;
        for (std::size_t d = 0; d < idx.size(); ++d) s += idx[d] * src_stride[d];
        src[static_cast<std::size_t>(o)] = s;
    });
    return index_map_op(x, std::move(shape), std::move(src));
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& xs, int axis) {
    if (xs.empty()) throw ShapeError("concat: no inputs");
    const int r = xs.front().rank();
    const int ax = detail::normalize_axis(axis, r, "concat");
    Shape shape = xs.front().shape();
    Index total = 0;
    for (std::size_t t = 0; t < xs.size(); ++t) {
        const Shape& s = xs[t].shape();
        if (static_cast<int>(s.size()) != r) throw ShapeError("concat: rank mismatch at input " + std::to_string(t));
        for (int d = 0; d < r; ++d)
            if (d != ax && s[static_cast<std::size_t>(d)] != shape[static_cast<std::size_t>(d)])
                throw ShapeError("concat: axis " + std::to_string(d) + " differs at input " + std::to_string(t) + " (" +
                                 shape_str(s) + " vs " + shape_str(shape) + ")");
        total += s[static_cast<std::size_t>(ax)];
    }
    shape[static_cast<std::size_t>(ax)] = total;
    const auto sp = detail::split_at(shape, ax);
    Storage<S> out(static_cast<std::size_t>(numel_of(shape)));
    std::vector<Index> offsets;
    Index offset = 0;
    for (const auto& t : xs) {
        offsets.push_back(offset);
        const Index ext = t.shape()[static_cast<std::size_t>(ax)];
        const auto tv = t.values();
        for (Index o = 0; o < sp.outer; ++o)
            std::copy_n(tv.begin() + o * ext * sp.inner, ext * sp.inner,
                        out.begin() + (o * sp.extent + offset) * sp.inner);
        offset += ext;
    }
    return detail::make_result<S>(std::move(shape), std::move(out), xs, [xs, offsets, sp, ax](TensorNode<S>& self) {
        for (std::size_t t = 0; t < xs.size(); ++t) {
            if (!xs[t].requires_grad()) continue;
            auto& dx = grad_of(xs[t]);
            const Index ext = xs[t].shape()[static_cast<std::size_t>(ax)];
            for (Index o = 0; o < sp.outer; ++o)
                for (Index i = 0; i < ext * sp.inner; ++i)
                    dx[o * ext * sp.inner + i] += self.grad[(o * sp.extent + offsets[t]) * sp.inner + i];
        }
    });
}

template <typename S>
Tensor<S> narrow(const Tensor<S>& x, int axis, Index start, Index length) {
    const int ax = detail::normalize_axis(axis, x.rank(), "narrow");
    const auto sp = detail::split_at(x.shape(), ax);
    if (start < 0 || length < 0 || start + length > sp.extent)
        throw ShapeError("narrow: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") exceeds axis " + std::to_string(ax) + " of extent " + std::to_string(sp.extent));
    Shape shape = x.shape();
    shape[static_cast<std::size_t>(ax)] = length;
    std::vector<Index> src;
    src.reserve(static_cast<std::size_t>(sp.outer * length * sp.inner));
    for (Index o = 0; o < sp.outer; ++o)
        for (Index k = 0; k < length; ++k)
            for (Index in = 0; in < sp.inner; ++in) src.push_back((o * sp.extent + start + k) * sp.inner + in);
    return index_map_op(x, std::move(shape), std::move(src));
}

template <typename S>
Tensor<S> pad_end(const Tensor<S>& x, int axis, Index count) {
    const int ax = detail::normalize_axis(axis, x.rank(), "pad_end");
    if (count < 0) throw ShapeError("pad_end: negative count");
    const auto sp = detail::split_at(x.shape(), ax);
    Shape shape = x.shape();
    shape[static_cast<std::size_t>(ax)] += count;
    const Index ext = sp.extent + count;
    std::vector<Index> src;
    src.reserve(static_cast<std::size_t>(sp.outer * ext * sp.inner));
    for (Index o = 0; o < sp.outer; ++o)
        for (Index k = 0; k < ext; ++k)
            for (Index in = 0; in < sp.inner; ++in) src.push_back(k < sp.extent ? (o * sp.extent + k) * sp.inner + in : -1);
    return index_map_op(x, std::move(shape), std::move(src));
}

template <typename S>
Tensor<S> roll(const Tensor<S>& x, const std::vector<int>& axes, const std::vector<Index>& shifts) {
    if (axes.size() != shifts.size()) throw ShapeError("roll: axes and shifts differ in length");
    const int r = x.rank();
    std::vector<Index> shift(static_cast<std::size_t>(r), 0);
    for (std::size_t i = 0; i < axes.size(); ++i) {
        const int ax = detail::normalize_axis(axes[i], r, "roll");
        shift[static_cast<std::size_t>(ax)] += shifts[i];
    }
    const auto strides = detail::strides_of(x.shape());
    std::vector<Index> src(static_cast<std::size_t>(x.numel()));
    const Shape& shape = x.shape();
    for_each_index(shape, [&](Index o, const std::vector<Index>& idx) {
        Index s = 0;
        for (std::size_t d = 0; d < idx.size(); ++d) {
            const Index n = shape[d];
            Index j = (idx[d] - shift[d]) % n;
            if (j < 0) j += n;
            s += j * strides[d];
        }
        src[static_cast<std::size_t>(o)] = s;
    });
    return index_map_op(x, shape, std::move(src));
}

template <typename S>
Tensor<S> gather(const Tensor<S>& table, const std::vector<Index>& indices, Shape shape) {
    if (numel_of(shape) != static_cast<Index>(indices.size()))
        throw ShapeError("gather: " + std::to_string(indices.size()) + " indices for shape " + shape_str(shape));
    for (Index i : indices)
        if (i < 0 || i >= table.numel()) throw ShapeError("gather: index " + std::to_string(i) + " out of range");
    return index_map_op(table, std::move(shape), indices);
}

#define INSTANTIATE(S)                                                                                       \
    template Tensor<S> reshape<S>(const Tensor<S>&, Shape);                                                  \
    template Tensor<S> permute<S>(const Tensor<S>&, const std::vector<int>&);                                \
    template Tensor<S> concat<S>(const std::vector<Tensor<S>>&, int);                                        \
    template Tensor<S> narrow<S>(const Tensor<S>&, int, Index, Index);                                       \
    template Tensor<S> pad_end<S>(const Tensor<S>&, int, Index);                                             \
    template Tensor<S> roll<S>(const Tensor<S>&, const std::vector<int>&, const std::vector<Index>&);         \
    template Tensor<S> gather<S>(const Tensor<S>&, const std::vector<Index>&, Shape);
RESFORMER_FOR_EACH_SCALAR(INSTANTIATE)

}  // namespace resformer
