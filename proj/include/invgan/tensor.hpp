#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "invgan/error.hpp"

namespace invgan {

/// Dense row-major tensor. Volumetric tensors use shape {C, Z, Y, X}.
template <class T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s, T fill = T(0)) : shape(std::move(s)), data(count(shape), fill) {}
    Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d))
    {
        if (data.size() != count(shape))
            throw ShapeError("tensor data does not match shape " + shape_str(shape));
    }

    static std::size_t count(const std::vector<int>& s)
    {
        return std::accumulate(s.begin(), s.end(), std::size_t{1},
                               [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
    }
    static std::string shape_str(const std::vector<int>& s)
    {
        std::string out = "[";
        for (std::size_t i = 0; i < s.size(); ++i)
            out += (i ? "," : "") + std::to_string(s[i]);
        return out + "]";
    }

    std::size_t size() const noexcept { return data.size(); }
    bool empty() const noexcept { return data.empty(); }
    int dim(std::size_t i) const { return shape.at(i); }
    std::string shape_str() const { return shape_str(shape); }

    T* ptr() noexcept { return data.data(); }
    const T* ptr() const noexcept { return data.data(); }
};

/// Process-wide worker count for the convolution kernels. Work is split over
/// independent output slices, so results do not depend on the count.
inline int& thread_count()
{
    static int n = 1;
    return n;
}

inline void set_thread_count(int n) { thread_count() = std::max(1, n); }

template <class Fn>
void parallel_for(int begin, int end, Fn&& fn)
{
    const int n = end - begin;
    const int workers = std::min(thread_count(), n);
    if (workers <= 1) {
        for (int i = begin; i < end; ++i)
            fn(i);
        return;
    }
    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            for (int i = begin + w; i < end; i += workers)
                fn(i);
        });
}

} // namespace invgan
