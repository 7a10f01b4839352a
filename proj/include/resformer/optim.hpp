#pragma once

#include "resformer/layers.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace resformer {

struct AdamWConfig {
    double lr = 0.003;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;

    void validate() const;
};

/// Adam moments with decoupled weight decay:
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
template <typename S>
class AdamW {
public:
    AdamW() = default;
    AdamW(std::vector<NamedParameter<S>> params, AdamWConfig cfg)
        : params_(std::move(params)), cfg_(cfg) {
        cfg_.validate();
        for (const auto& p : params_) {
            m_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), S(0));
            v_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), S(0));
        }
    }

    void step() {
        ++step_;
        const double t = static_cast<double>(step_);
        const S c1 = S(1.0 - std::pow(cfg_.beta1, t));
        const S c2 = S(1.0 - std::pow(cfg_.beta2, t));
        const S b1 = S(cfg_.beta1), b2 = S(cfg_.beta2), lr = S(cfg_.lr), eps = S(cfg_.eps), wd = S(cfg_.weight_decay);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i].tensor;
            auto value = p.mutable_values();
            auto grad = p.grad();
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t k = 0; k < value.size(); ++k) {
                const S g = grad[k];
                m[k] = b1 * m[k] + (S(1) - b1) * g;
                v[k] = b2 * v[k] + (S(1) - b2) * g * g;
                const S m_hat = m[k] / c1;
                const S v_hat = v[k] / c2;
                value[k] -= lr * (m_hat / (std::sqrt(v_hat) + eps) + wd * value[k]);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    const AdamWConfig& config() const { return cfg_; }
    std::int64_t steps() const { return step_; }
    void set_steps(std::int64_t s) { step_ = s; }
    std::vector<NamedParameter<S>>& params() { return params_; }
    const std::vector<NamedParameter<S>>& params() const { return params_; }
    std::vector<std::vector<S>>& first_moments() { return m_; }
    std::vector<std::vector<S>>& second_moments() { return v_; }

private:
    std::vector<NamedParameter<S>> params_;
    std::vector<std::vector<S>> m_, v_;
    AdamWConfig cfg_;
    std::int64_t step_ = 0;
};

}  // namespace resformer
