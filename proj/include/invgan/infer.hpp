#pragma once

// Whole-volume registration by overlapping tiles. Each tile's flow pair is
// predicted from the co-located patches, weighted by a separable
// raised-cosine window that ramps only where tiles overlap, accumulated, and
// normalized. Each volume is then warped once by its blended field.

#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "invgan/eval.hpp"
#include "invgan/losses.hpp"
#include "invgan/model.hpp"
#include "invgan/sampler.hpp"
#include "invgan/volume.hpp"
#include "invgan/warp.hpp"

namespace invgan {

struct TilingPlan {
    Dims dims;
    int patch_size = 0;
    int overlap = 0;
    std::array<std::vector<int>, 3> origins;                  // per axis
    std::array<std::vector<std::vector<double>>, 3> profiles; // per axis, per origin, length P
    std::vector<PatchSpec> tiles;                             // x fastest, then y, then z

    /// Blend weight of tile `t` at offset (a, b, c) inside the tile.
    double weight(std::size_t t, int a, int b, int c) const
    {
        const auto [ix, iy, iz] = tile_axes(t);
        return profiles[0][ix][a] * profiles[1][iy][b] * profiles[2][iz][c];
    }

    std::array<std::size_t, 3> tile_axes(std::size_t t) const
    {
        const std::size_t nx = origins[0].size(), ny = origins[1].size();
        return {t % nx, (t / nx) % ny, t / (nx * ny)};
    }
};

namespace detail {

inline std::vector<int> tile_origins(int n, int P, int O)
{
    std::vector<int> out;
    for (int o = 0; o + P < n; o += P - O)
        out.push_back(o);
    if (out.empty() || out.back() != n - P)
        out.push_back(n - P);
    return out;
}

/// Unit weight except for sin^2 / cos^2 ramps across the overlap with the
/// previous and next tile. Adjacent ramps over a shared overlap sum to one.
inline std::vector<double> tile_profile(const std::vector<int>& origins, std::size_t m, int P, int O)
{
    std::vector<double> w(static_cast<std::size_t>(P), 1.0);
    if (O == 0)
        return w;
    const auto ramp = [](int t, int len) {
        const double s = std::sin(std::numbers::pi * (t + 0.5) / (2.0 * len));
        return s * s;
    };
    if (m > 0) {
        const int ov = origins[m - 1] + P - origins[m];
        for (int t = 0; t < ov && t < P; ++t)
            w[t] *= ramp(t, ov);
    }
    if (m + 1 < origins.size()) {
        const int ov = origins[m] + P - origins[m + 1];
        for (int t = 0; t < ov && t < P; ++t)
            w[P - ov + t] *= 1.0 - ramp(t, ov);
    }
    return w;
}

} // namespace detail

/// Stride P - O grid per axis; the last tile is clamped flush to the far
/// boundary.
inline TilingPlan plan_tiling(const Dims& dims, int P, int O)
{
    if (P < 1)
        throw ConfigError("plan_tiling: patch size must be >= 1");
    if (O < 0 || O >= P)
        throw ConfigError("plan_tiling: overlap must satisfy 0 <= O < P");
    for (int a = 0; a < 3; ++a)
        if (P > dims[a])
            throw DataError("plan_tiling: patch size " + std::to_string(P) + " exceeds volume " + dims.str());
    TilingPlan plan;
    plan.dims = dims;
    plan.patch_size = P;
    plan.overlap = O;
    for (int a = 0; a < 3; ++a) {
        const auto& origins = plan.origins[a] = detail::tile_origins(dims[a], P, O);
        auto& profiles = plan.profiles[a];
        for (std::size_t m = 0; m < origins.size(); ++m)
            profiles.push_back(detail::tile_profile(origins, m, P, O));
        // Where three or more tiles overlap the ramps alone do not sum to one.
        std::vector<double> sum(static_cast<std::size_t>(dims[a]), 0.0);
        for (std::size_t m = 0; m < origins.size(); ++m)
            for (int t = 0; t < P; ++t)
                sum[origins[m] + t] += profiles[m][t];
        for (std::size_t m = 0; m < origins.size(); ++m)
            for (int t = 0; t < P; ++t)
                profiles[m][t] /= sum[origins[m] + t];
    }
    for (int z : plan.origins[2])
        for (int y : plan.origins[1])
            for (int x : plan.origins[0])
                plan.tiles.push_back({{x, y, z}, P});
    return plan;
}

/// Sum of raw blend weights at every voxel (before normalization).
inline std::vector<double> accumulated_weights(const TilingPlan& plan)
{
    const Dims d = plan.dims;
    const int P = plan.patch_size;
    std::vector<double> w(d.count(), 0.0);
    for (std::size_t t = 0; t < plan.tiles.size(); ++t) {
        const auto& o = plan.tiles[t].origin;
        for (int c = 0; c < P; ++c)
            for (int b = 0; b < P; ++b)
                for (int a = 0; a < P; ++a)
                    w[d.index(o[0] + a, o[1] + b, o[2] + c)] += plan.weight(t, a, b, c);
    }
    return w;
}

struct PatchFlows {
    Tensor<float> forward;  // {3,P,P,P}
    Tensor<float> backward; // {3,P,P,P}
};

/// Called once per tile with the co-located patches and the tile index.
using FlowPredictor = std::function<PatchFlows(const Volume&, const Volume&, std::size_t)>;

enum class BlendMode {
    raised_cosine, // weighted average of overlapping tiles
    overwrite,     // later tiles replace earlier ones (hard seams)
};

struct FullFields {
    DisplacementField forward;
    DisplacementField backward;
};

/// Peak extra memory is seven volume-sized double buffers (two 3-component
/// fields and one weight grid) plus one tile, independent of the tile count.
inline FullFields predict_full_field(const FlowPredictor& predict, const Volume& source, const Volume& target,
                                     const TilingPlan& plan, BlendMode mode = BlendMode::raised_cosine)
{
    require_same_dims(source.dims, target.dims, "predict_full_field");
    require_same_dims(plan.dims, source.dims, "predict_full_field (plan)");
    const Dims d = plan.dims;
    const int P = plan.patch_size;
    const std::size_t plane = static_cast<std::size_t>(P) * P * P;
    std::array<std::vector<double>, 6> acc;
    for (auto& a : acc)
        a.assign(d.count(), 0.0);
    std::vector<double> wsum(d.count(), 0.0);

    for (std::size_t t = 0; t < plan.tiles.size(); ++t) {
        const auto& spec = plan.tiles[t];
        const PatchFlows f = predict(extract_patch(source, spec), extract_patch(target, spec), t);
        const std::vector<int> expect{3, P, P, P};
        if (f.forward.shape != expect || f.backward.shape != expect)
            throw ShapeError("predict_full_field: predictor returned " + f.forward.shape_str() + " / " +
                             f.backward.shape_str() + ", expected " + Tensor<float>::shape_str(expect));
        const auto& o = spec.origin;
        for (int c = 0; c < P; ++c)
            for (int b = 0; b < P; ++b)
                for (int a = 0; a < P; ++a) {
                    const std::size_t v = d.index(o[0] + a, o[1] + b, o[2] + c);
                    const std::size_t p = (static_cast<std::size_t>(c) * P + b) * P + a;
                    const double w = mode == BlendMode::overwrite ? 1.0 : plan.weight(t, a, b, c);
                    for (int k = 0; k < 3; ++k) {
                        const double fv = w * f.forward.data[k * plane + p];
                        const double bv = w * f.backward.data[k * plane + p];
                        if (mode == BlendMode::overwrite) {
                            acc[k][v] = fv;
                            acc[3 + k][v] = bv;
                        } else {
                            acc[k][v] += fv;
                            acc[3 + k][v] += bv;
                        }
                    }
                    wsum[v] = mode == BlendMode::overwrite ? 1.0 : wsum[v] + w;
                }
    }

    FullFields out{DisplacementField(d, source.spacing), DisplacementField(d, source.spacing)};
    for (std::size_t v = 0; v < d.count(); ++v) {
        if (!(wsum[v] > 0))
            throw DataError("predict_full_field: voxel not covered by any tile");
        for (int k = 0; k < 3; ++k) {
            out.forward.u[k][v] = static_cast<float>(acc[k][v] / wsum[v]);
            out.backward.u[k][v] = static_cast<float>(acc[3 + k][v] / wsum[v]);
        }
    }
    return out;
}

/// Runs the generator on one tile without recording a graph.
inline FlowPredictor generator_predictor(const Generator<float>& gen)
{
    return [&gen](const Volume& s, const Volume& t, std::size_t) {
        const auto& items = gen.params().items();
        std::vector<bool> saved;
        for (const auto& p : items) {
            saved.push_back(p.var->requires_grad);
            p.var->requires_grad = false;
        }
        auto flows = gen.forward(to_var<float>(s), to_var<float>(t));
        for (std::size_t i = 0; i < items.size(); ++i)
            items[i].var->requires_grad = saved[i];
        return PatchFlows{std::move(flows.forward->value), std::move(flows.backward->value)};
    };
}

inline FullFields predict_full_field(const Generator<float>& gen, const Volume& source, const Volume& target,
                                     const TilingPlan& plan)
{
    return predict_full_field(generator_predictor(gen), source, target, plan);
}

struct RegistrationMetrics {
    double cc_before = 0;
    double cc_after = 0;  // cc(S o phi_ST, T)
    double mi_before = 0;
    double mi_after = 0;
    double cc_after_backward = 0; // cc(T o phi_TS, S)
    double mi_after_backward = 0;
};

struct RegistrationResult {
    Volume warped_source; // S o phi_ST, aligned to the target
    Volume warped_target; // T o phi_TS, aligned to the source
    DisplacementField flow_forward;
    DisplacementField flow_backward;
    RegistrationMetrics metrics;
};

inline RegistrationResult register_volumes(const FlowPredictor& predict, const Volume& source, const Volume& target,
                                           const TilingPlan& plan, int mi_bins = 32)
{
    auto fields = predict_full_field(predict, source, target, plan);
    RegistrationResult r;
    r.warped_source = warp_volume(source, fields.forward);
    r.warped_target = warp_volume(target, fields.backward);
    r.flow_forward = std::move(fields.forward);
    r.flow_backward = std::move(fields.backward);
    r.metrics.cc_before = global_cc(source, target);
    r.metrics.mi_before = mutual_information(source, target, mi_bins);
    r.metrics.cc_after = global_cc(r.warped_source, target);
    r.metrics.mi_after = mutual_information(r.warped_source, target, mi_bins);
    r.metrics.cc_after_backward = global_cc(r.warped_target, source);
    r.metrics.mi_after_backward = mutual_information(r.warped_target, source, mi_bins);
    return r;
}

inline RegistrationResult register_volumes(const Generator<float>& gen, const Volume& source, const Volume& target,
                                           const TilingPlan& plan, int mi_bins = 32)
{
    return register_volumes(generator_predictor(gen), source, target, plan, mi_bins);
}

/// Largest absolute component jump between neighbouring voxel planes that
/// straddle an interior tile face.
inline double seam_score(const DisplacementField& field, const TilingPlan& plan)
{
    require_same_dims(field.dims, plan.dims, "seam_score");
    const Dims d = field.dims;
    const int P = plan.patch_size;
    double worst = 0;
    for (int axis = 0; axis < 3; ++axis) {
        std::vector<int> faces; // plane index q such that (q, q+1) straddles a face
        for (int o : plan.origins[axis]) {
            if (o > 0)
                faces.push_back(o - 1);
            if (o + P - 1 < d[axis] - 1)
                faces.push_back(o + P - 1);
        }
        std::sort(faces.begin(), faces.end());
        faces.erase(std::unique(faces.begin(), faces.end()), faces.end());
        for (int q : faces)
            for (int k = 0; k < d.nz; ++k)
                for (int j = 0; j < d.ny; ++j)
                    for (int i = 0; i < d.nx; ++i) {
                        const int pos[3] = {i, j, k};
                        if (pos[axis] != q)
                            continue;
                        int nb[3] = {i, j, k};
                        ++nb[axis];
                        const auto a = d.index(i, j, k), b = d.index(nb[0], nb[1], nb[2]);
                        for (int c = 0; c < 3; ++c)
                            worst = std::max(worst, static_cast<double>(std::abs(field.u[c][a] - field.u[c][b])));
                    }
    }
    return worst;
}

} // namespace invgan
