#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "invgan/error.hpp"

namespace invgan {

/// Voxel counts along x, y, z. Storage order is x fastest, then y, then z.
struct Dims {
    int nx = 0;
    int ny = 0;
    int nz = 0;

    constexpr std::size_t count() const noexcept
    {
        return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) * static_cast<std::size_t>(nz);
    }
    constexpr std::size_t index(int i, int j, int k) const noexcept
    {
        return static_cast<std::size_t>(i) +
               static_cast<std::size_t>(nx) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(ny) * k);
    }
    constexpr bool contains(int i, int j, int k) const noexcept
    {
        return i >= 0 && j >= 0 && k >= 0 && i < nx && j < ny && k < nz;
    }
    constexpr int operator[](int axis) const noexcept { return axis == 0 ? nx : axis == 1 ? ny : nz; }
    constexpr bool valid() const noexcept { return nx >= 1 && ny >= 1 && nz >= 1; }
    friend constexpr bool operator==(const Dims&, const Dims&) = default;

    std::string str() const
    {
        return std::to_string(nx) + "x" + std::to_string(ny) + "x" + std::to_string(nz);
    }
};

/// Millimetres per voxel.
struct Spacing {
    float sx = 1.0f;
    float sy = 1.0f;
    float sz = 1.0f;

    constexpr float operator[](int axis) const noexcept { return axis == 0 ? sx : axis == 1 ? sy : sz; }
    constexpr bool valid() const noexcept { return sx > 0 && sy > 0 && sz > 0; }
    friend constexpr bool operator==(const Spacing&, const Spacing&) = default;
};

/// Dense scalar image.
struct Volume {
    Dims dims;
    Spacing spacing;
    std::vector<float> voxels;

    Volume() = default;
    explicit Volume(Dims d, Spacing s = {}, float fill = 0.0f) : dims(d), spacing(s), voxels(d.count(), fill)
    {
        if (!d.valid())
            throw DataError("volume dims must be >= 1, got " + d.str());
        if (!s.valid())
            throw DataError("volume spacing must be > 0");
    }

    float& operator()(int i, int j, int k) { return voxels[dims.index(i, j, k)]; }
    float operator()(int i, int j, int k) const { return voxels[dims.index(i, j, k)]; }
    std::size_t size() const noexcept { return voxels.size(); }
};

/// Per-voxel displacement in voxel units. Warping reads the input at x + u(x).
struct DisplacementField {
    Dims dims;
    Spacing spacing;
    std::array<std::vector<float>, 3> u;

    DisplacementField() = default;
    explicit DisplacementField(Dims d, Spacing s = {}) : dims(d), spacing(s)
    {
        if (!d.valid())
            throw DataError("field dims must be >= 1, got " + d.str());
        if (!s.valid())
            throw DataError("field spacing must be > 0");
        for (auto& c : u)
            c.assign(d.count(), 0.0f);
    }

    std::array<float, 3> at(std::size_t idx) const { return {u[0][idx], u[1][idx], u[2][idx]}; }
    std::array<float, 3> at(int i, int j, int k) const { return at(dims.index(i, j, k)); }
    void set(std::size_t idx, std::array<float, 3> v)
    {
        u[0][idx] = v[0];
        u[1][idx] = v[1];
        u[2][idx] = v[2];
    }

    bool finite() const
    {
        for (const auto& c : u)
            for (float v : c)
                if (!std::isfinite(v))
                    return false;
        return true;
    }
};

struct Landmark {
    std::string name;
    double x = 0;
    double y = 0;
    double z = 0;
    // Set by transport when a trilinear sample touched the zero-padded exterior.
    bool outside = false;
};

/// Ordered landmark list in continuous voxel coordinates.
struct LandmarkSet {
    std::vector<Landmark> points;
    Spacing spacing;

    std::size_t size() const noexcept { return points.size(); }
};

inline void require_same_dims(const Dims& a, const Dims& b, const char* what)
{
    if (!(a == b))
        throw ShapeError(std::string(what) + ": dims mismatch " + a.str() + " vs " + b.str());
}

} // namespace invgan
