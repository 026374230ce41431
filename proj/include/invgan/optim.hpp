#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "invgan/model.hpp"

namespace invgan {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 10.0; // global gradient norm; <= 0 disables
    friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

/// Adaptive-moment gradient descent with bias correction and global-norm
/// clipping.
template <class T>
class Adam {
public:
    Adam() = default;
    Adam(const ParamSet<T>& ps, AdamConfig cfg) : cfg_(cfg)
    {
        for (const auto& p : ps.items()) {
            m_.emplace_back(p.var->size(), T(0));
            v_.emplace_back(p.var->size(), T(0));
        }
    }

    /// Applies one update from the accumulated gradients. Returns the
    /// pre-clipping gradient norm.
    double step(ParamSet<T>& ps)
    {
        auto& items = ps.items();
        double sq = 0;
        for (const auto& p : items)
            for (T g : p.var->grad.data)
                sq += static_cast<double>(g) * static_cast<double>(g);
        const double norm = std::sqrt(sq);
        if (!std::isfinite(norm))
            throw NumericalError("optimizer: non-finite gradient norm");
        const double clip = cfg_.clip_norm > 0 && norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;

        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
        const T step = static_cast<T>(cfg_.lr / bc1);
        const T inv_bc2 = static_cast<T>(1.0 / bc2);
        const T eps = static_cast<T>(cfg_.eps);
        for (std::size_t i = 0; i < items.size(); ++i) {
            auto& var = *items[i].var;
            if (var.grad.size() != var.size())
                continue; // untouched this step
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t n = 0; n < var.size(); ++n) {
                const T g = static_cast<T>(static_cast<double>(var.grad.data[n]) * clip);
                m[n] = b1 * m[n] + (T(1) - b1) * g;
                v[n] = b2 * v[n] + (T(1) - b2) * g * g;
                var.value.data[n] -= step * m[n] / (std::sqrt(v[n] * inv_bc2) + eps);
            }
        }
        return norm;
    }

    const AdamConfig& config() const noexcept { return cfg_; }
    std::int64_t steps() const noexcept { return t_; }
    std::vector<std::vector<T>>& first_moments() noexcept { return m_; }
    std::vector<std::vector<T>>& second_moments() noexcept { return v_; }
    const std::vector<std::vector<T>>& first_moments() const noexcept { return m_; }
    const std::vector<std::vector<T>>& second_moments() const noexcept { return v_; }
    void set_steps(std::int64_t t) noexcept { t_ = t; }

private:
    AdamConfig cfg_;
    std::vector<std::vector<T>> m_, v_;
    std::int64_t t_ = 0;
};

} // namespace invgan
