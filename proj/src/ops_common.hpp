#pragma once

#include "resformer/ops.hpp"

#include <Eigen/Core>

#include <string>
#include <utility>

namespace resformer::detail {

template <typename S>
using RowMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMatrix<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMatrix<S>>;

inline int normalize_axis(int axis, int rank, const char* op) {
    const int a = axis < 0 ? axis + rank : axis;
    if (a < 0 || a >= rank)
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for rank " + std::to_string(rank));
    return a;
}

/// Splits a shape around `axis` into (outer, extent, inner).
struct AxisSplit {
    Index outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& shape, int axis) {
    AxisSplit s;
    for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
    s.extent = shape[static_cast<std::size_t>(axis)];
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

inline std::vector<Index> strides_of(const Shape& shape) {
    std::vector<Index> st(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
        st[static_cast<std::size_t>(i)] = st[static_cast<std::size_t>(i) + 1] * shape[static_cast<std::size_t>(i) + 1];
    return st;
}

inline void require_rank(const Shape& shape, int rank, const char* op, const char* what) {
    if (static_cast<int>(shape.size()) != rank)
        throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                         shape_str(shape));
}

template <typename S>
Storage<S>& grad_of(const Tensor<S>& t) {
    return t.node()->grad;
}

}  // namespace resformer::detail

#define RESFORMER_FOR_EACH_SCALAR(M) \
    M(float)                         \
    M(double)
