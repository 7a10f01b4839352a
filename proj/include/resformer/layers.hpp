#pragma once

#include "resformer/ops.hpp"
#include "resformer/rng.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace resformer {

inline std::string scoped(const std::string& prefix, const std::string& name) {
    return prefix.empty() ? name : prefix + "." + name;
}

/// Named view of one trainable tensor.
template <typename S>
struct NamedParameter {
    std::string name;
    Parameter<S> tensor;
};

/// Named view of a non-trainable state vector (batch-norm running stats).
template <typename S>
struct NamedBuffer {
    std::string name;
    std::vector<S>* values;
};

/// Collects parameters and buffers as modules report them via visit().
template <typename S>
struct ParameterCollector {
    std::vector<NamedParameter<S>> params;
    std::vector<NamedBuffer<S>> buffers;

    void param(const std::string& name, Parameter<S>& p) { params.push_back({name, p}); }
    void buffer(const std::string& name, std::vector<S>& b) { buffers.push_back({name, &b}); }
};

/// Fan-in scaled uniform draw in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
template <typename S>
Parameter<S> uniform_parameter(Shape shape, Index fan_in, Rng& rng) {
    Parameter<S> p(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Index>(fan_in, 1)));
    for (S& v : p.mutable_values()) v = S(rng.uniform(-bound, bound));
    p.set_requires_grad(true);
    return p;
}

template <typename S>
Parameter<S> constant_parameter(Shape shape, S value) {
    Parameter<S> p(std::move(shape), value);
    p.set_requires_grad(true);
    return p;
}

template <typename S>
struct Conv2d {
    Parameter<S> weight;  // [out, in, k, k]
    Parameter<S> bias;    // [out], undefined when the layer has no bias
    Conv2dOptions options;

    Conv2d() = default;
    Conv2d(Index in, Index out, Index kernel, Conv2dOptions opt, bool with_bias, Rng& rng)
        : weight(uniform_parameter<S>({out, in, kernel, kernel}, in * kernel * kernel, rng)), options(opt) {
        if (with_bias) bias = uniform_parameter<S>({out}, in * kernel * kernel, rng);
    }

    Tensor<S> operator()(const Tensor<S>& x) const { return conv2d(x, weight, bias, options); }

    template <typename V>
    void visit(V& v, const std::string& prefix) {
        v.param(scoped(prefix, "weight"), weight);
        if (bias.defined()) v.param(scoped(prefix, "bias"), bias);
    }
};

template <typename S>
struct BatchNorm2d {
    Parameter<S> gamma;
    Parameter<S> beta;
    BatchNormStats<S> stats;

    BatchNorm2d() = default;
    explicit BatchNorm2d(Index channels)
        : gamma(constant_parameter<S>({channels}, S(1))), beta(constant_parameter<S>({channels}, S(0))), stats(channels) {}

    Tensor<S> operator()(const Tensor<S>& x, Mode mode) { return batch_norm(x, gamma, beta, stats, mode); }

    template <typename V>
    void visit(V& v, const std::string& prefix) {
        v.param(scoped(prefix, "gamma"), gamma);
        v.param(scoped(prefix, "beta"), beta);
        v.buffer(scoped(prefix, "running_mean"), stats.mean);
        v.buffer(scoped(prefix, "running_var"), stats.var);
    }
};

template <typename S>
struct LayerNorm {
    Parameter<S> gamma;
    Parameter<S> beta;

    LayerNorm() = default;
    explicit LayerNorm(Index channels)
        : gamma(constant_parameter<S>({channels}, S(1))), beta(constant_parameter<S>({channels}, S(0))) {}

    Tensor<S> operator()(const Tensor<S>& x) const { return layer_norm(x, gamma, beta); }

    template <typename V>
    void visit(V& v, const std::string& prefix) {
        v.param(scoped(prefix, "gamma"), gamma);
        v.param(scoped(prefix, "beta"), beta);
    }
};

template <typename S>
struct Linear {
    Parameter<S> weight;  // [out, in]
    Parameter<S> bias;    // [out]

    Linear() = default;
    Linear(Index in, Index out, Rng& rng)
        : weight(uniform_parameter<S>({out, in}, in, rng)), bias(uniform_parameter<S>({out}, in, rng)) {}

    Tensor<S> operator()(const Tensor<S>& x) const { return linear(x, weight, bias); }

    template <typename V>
    void visit(V& v, const std::string& prefix) {
        v.param(scoped(prefix, "weight"), weight);
        v.param(scoped(prefix, "bias"), bias);
    }
};

/// Every trainable tensor of a module, in a stable order.
template <typename S, typename Module>
std::vector<NamedParameter<S>> parameters_of(Module& m) {
    ParameterCollector<S> c;
    m.visit(c, "");
    return std::move(c.params);
}

template <typename S, typename Module>
Index parameter_count(Module& m) {
    Index n = 0;
    for (const auto& p : parameters_of<S>(m)) n += p.tensor.numel();
    return n;
}

}  // namespace resformer
