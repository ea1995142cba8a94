#pragma once
#include <cmath>
#include <vector>

#include "sal/tensor.hpp"

namespace sal {

struct OptimizerConfig {
    std::string type = "adam";
    double lr = 1e-3;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const {
        require(type == "adam", "OptimizerConfig: unsupported optimizer '", type, "'");
        require(lr > 0.0, "OptimizerConfig: lr must be positive");
        require(weight_decay >= 0.0, "OptimizerConfig: weight_decay must be nonnegative");
    }
};

// Adam over a flat list of (value, grad) tensor pairs; moments are exposed so
// checkpoints can resume bit-compatibly.
template <typename T>
class Adam {
public:
    Adam() = default;
    explicit Adam(OptimizerConfig cfg) : cfg_(cfg) { cfg_.validate(); }

    const OptimizerConfig& config() const { return cfg_; }
    long long step_count() const { return step_; }

    std::vector<Tensor<T>>& moment1() { return m_; }
    std::vector<Tensor<T>>& moment2() { return v_; }
    void set_step_count(long long s) { step_ = s; }

    template <typename Params> // Params: iterable of {value, grad} accessors
    void step(Params& params) {
        ensure_state(params);
        ++step_;
        const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
        const T bc1 = T(1) - static_cast<T>(std::pow(cfg_.beta1, static_cast<double>(step_)));
        const T bc2 = T(1) - static_cast<T>(std::pow(cfg_.beta2, static_cast<double>(step_)));
        const T lr = static_cast<T>(cfg_.lr);
        const T wd = static_cast<T>(cfg_.weight_decay);
        const T eps = static_cast<T>(cfg_.eps);

        std::size_t idx = 0;
        for (auto& p : params) {
            Tensor<T>& w = p.value;
            Tensor<T>& g = p.grad;
            Tensor<T>& m = m_[idx];
            Tensor<T>& v = v_[idx];
            for (long long i = 0; i < w.numel(); ++i) {
                T grad = g[i] + wd * w[i];
                m[i] = b1 * m[i] + (T(1) - b1) * grad;
                v[i] = b2 * v[i] + (T(1) - b2) * grad * grad;
                const T mhat = m[i] / bc1;
                const T vhat = v[i] / bc2;
                w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
            ++idx;
        }
    }

private:
    template <typename Params>
    void ensure_state(Params& params) {
        if (!m_.empty()) return;
        for (auto& p : params) {
            m_.emplace_back(Tensor<T>::zeros_like(p.value));
            v_.emplace_back(Tensor<T>::zeros_like(p.value));
        }
    }

    OptimizerConfig cfg_;
    long long step_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

} // namespace sal
