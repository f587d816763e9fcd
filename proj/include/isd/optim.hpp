#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "isd/tensor.hpp"

namespace isd {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Decoupled-weight-decay Adam. Moment buffers are indexed by the caller's
// fixed parameter order; that order is part of the checkpoint contract.
template <typename T>
class AdamW {
public:
    AdamW() = default;
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    const AdamWConfig& config() const { return cfg_; }
    std::uint64_t step_count() const { return step_; }

    void step(const std::vector<Tensor<T>*>& params, T lr) {
        if (m_.empty()) {
            m_.resize(params.size());
            v_.resize(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                m_[i].assign(params[i]->numel(), T(0));
                v_[i].assign(params[i]->numel(), T(0));
            }
        }
        if (m_.size() != params.size()) throw ShapeError("adamw: parameter list changed size");
        ++step_;
        const T b1 = T(cfg_.beta1), b2 = T(cfg_.beta2);
        const T bc1 = T(1) - T(std::pow(cfg_.beta1, double(step_)));
        const T bc2 = T(1) - T(std::pow(cfg_.beta2, double(step_)));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor<T>& p = *params[i];
            if (!p.requires_grad()) throw ShapeError("adamw: parameter without gradient");
            if (m_[i].size() != p.numel()) throw ShapeError("adamw: moment/parameter shape mismatch");
            const auto g = p.grad();
            auto data = p.data_mut();
            for (std::size_t j = 0; j < data.size(); ++j) {
                m_[i][j] = b1 * m_[i][j] + (T(1) - b1) * g[j];
                v_[i][j] = b2 * v_[i][j] + (T(1) - b2) * g[j] * g[j];
                const T m_hat = m_[i][j] / bc1;
                const T v_hat = v_[i][j] / bc2;
                data[j] -= lr * (T(cfg_.weight_decay) * data[j] + m_hat / (std::sqrt(v_hat) + T(cfg_.eps)));
            }
        }
    }

    // Checkpoint access.
    std::vector<std::vector<T>>& moments1() { return m_; }
    std::vector<std::vector<T>>& moments2() { return v_; }
    void restore(std::uint64_t step, std::vector<std::vector<T>> m, std::vector<std::vector<T>> v) {
        step_ = step;
        m_ = std::move(m);
        v_ = std::move(v);
    }

private:
    AdamWConfig cfg_;
    std::uint64_t step_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

enum class LrUnit { BatchStep, Epoch };

struct LrSchedule {
    double base_lr = 1e-3;
    double gamma = 1.0;
    std::uint64_t step_size = 1;
    LrUnit unit = LrUnit::BatchStep;
};

inline double lr_at(const LrSchedule& s, std::uint64_t n) {
    return s.base_lr * std::pow(s.gamma, double(n / s.step_size));
}

}  // namespace isd
