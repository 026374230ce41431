#pragma once

#include <cmath>
#include <numeric>
#include <set>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "invgan/invgan.hpp"

namespace invgan::test {

inline Volume random_volume(Dims d, std::uint64_t seed, float lo = 0.0f, float hi = 1.0f)
{
    Volume v(d);
    Rng rng(seed);
    for (auto& x : v.voxels)
        x = static_cast<float>(rng.uniform(lo, hi));
    return v;
}

inline Volume ramp_x(Dims d, float slope = 1.0f, float offset = 0.0f)
{
    Volume v(d);
    for (int k = 0; k < d.nz; ++k)
        for (int j = 0; j < d.ny; ++j)
            for (int i = 0; i < d.nx; ++i)
                v(i, j, k) = offset + slope * static_cast<float>(i);
    return v;
}

inline DisplacementField constant_field(Dims d, float ux, float uy, float uz)
{
    DisplacementField f(d);
    std::fill(f.u[0].begin(), f.u[0].end(), ux);
    std::fill(f.u[1].begin(), f.u[1].end(), uy);
    std::fill(f.u[2].begin(), f.u[2].end(), uz);
    return f;
}

template <class T>
Tensor<T> random_tensor(std::vector<int> shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0)
{
    Tensor<T> t(std::move(shape));
    Rng rng(seed);
    for (auto& x : t.data)
        x = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

struct GradCheck {
    double worst = 0;  // largest relative error over checked entries
    std::size_t checked = 0;
};

/// Compares analytic gradients of `f(leaves)` against central differences on up
/// to `per_leaf` entries of each leaf.
inline GradCheck check_gradients(std::vector<ag::Var<double>> leaves,
                                 const std::function<ag::Var<double>(const std::vector<ag::Var<double>>&)>& f,
                                 std::size_t per_leaf = 40, double h = 1e-6, std::uint64_t seed = 99)
{
    for (auto& l : leaves)
        l->grad = Tensor<double>{};
    auto y = f(leaves);
    ag::backward(y);
    std::vector<Tensor<double>> analytic;
    for (auto& l : leaves)
        analytic.push_back(l->grad.size() == l->size() ? l->grad : Tensor<double>(l->value.shape, 0.0));

    GradCheck out;
    Rng rng(seed);
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& data = leaves[li]->value.data;
        const std::size_t n = data.size();
        const std::size_t m = std::min(per_leaf, n);
        for (std::size_t c = 0; c < m; ++c) {
            const std::size_t idx = m == n ? c : static_cast<std::size_t>(rng.below(n));
            const double saved = data[idx];
            data[idx] = saved + h;
            const double fp = f(leaves)->value.data[0];
            data[idx] = saved - h;
            const double fm = f(leaves)->value.data[0];
            data[idx] = saved;
            const double num = (fp - fm) / (2 * h);
            const double ana = analytic[li].data[idx];
            const double rel = std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-6});
            out.worst = std::max(out.worst, rel);
            ++out.checked;
        }
    }
    return out;
}

} // namespace invgan::test
