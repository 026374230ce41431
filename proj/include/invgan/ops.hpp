#pragma once

// Differentiable operators on volumetric tensors {C, Z, Y, X}.

#include <algorithm>
#include <array>
#include <memory>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "invgan/autograd.hpp"

namespace invgan::ag {

namespace detail {

inline void require(bool ok, const std::string& msg)
{
    if (!ok)
        throw ShapeError(msg);
}

inline void require_volumetric(const std::vector<int>& s, const char* op)
{
    require(s.size() == 4, std::string(op) + ": expected {C,Z,Y,X}, got " + Tensor<float>::shape_str(s));
}

inline int conv_out(int n, int k, int stride, int pad) { return (n + 2 * pad - k) / stride + 1; }

/// Output index range [lo, hi) whose input index o*stride + tap - pad lies in [0, n).
inline void valid_range(int n_out, int n_in, int stride, int tap, int pad, int& lo, int& hi)
{
    const int shift = tap - pad;
    lo = shift >= 0 ? 0 : (-shift + stride - 1) / stride;
    hi = n_in - 1 - shift < 0 ? 0 : std::min(n_out, (n_in - 1 - shift) / stride + 1);
    if (hi < lo)
        hi = lo;
}

} // namespace detail

/// 3D convolution, cubic kernel, zero padding.
/// x {Ci,Z,Y,X}; w {Co,Ci,K,K,K}; b {Co}.
/// Lowered to a GEMM over an im2col buffer; the buffer is rebuilt in backward instead of kept alive.
template <class T>
Var<T> conv3d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad)
{
    detail::require_volumetric(x->shape(), "conv3d");
    const auto& ws = w->shape();
    detail::require(ws.size() == 5 && ws[2] == ws[3] && ws[3] == ws[4], "conv3d: bad weight shape");
    const int Ci = x->shape()[0], Z = x->shape()[1], Y = x->shape()[2], X = x->shape()[3];
    const int Co = ws[0], K = ws[2];
    detail::require(ws[1] == Ci, "conv3d: weight expects " + std::to_string(ws[1]) + " input channels, got " +
                                     std::to_string(Ci));
    detail::require(b->size() == static_cast<std::size_t>(Co), "conv3d: bias size mismatch");
    const int Zo = detail::conv_out(Z, K, stride, pad), Yo = detail::conv_out(Y, K, stride, pad),
              Xo = detail::conv_out(X, K, stride, pad);
    detail::require(Zo > 0 && Yo > 0 && Xo > 0, "conv3d: input too small");

    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using Map = Eigen::Map<Mat>;
    using CMap = Eigen::Map<const Mat>;

    const std::size_t in_plane = static_cast<std::size_t>(Z) * Y * X;
    const std::size_t out_plane = static_cast<std::size_t>(Zo) * Yo * Xo;
    const int ksz = K * K * K;
    const Eigen::Index rows = static_cast<Eigen::Index>(Ci) * ksz;
    const Eigen::Index cols = static_cast<Eigen::Index>(out_plane);

    // Visit every (tap, output row, input row) triple.
    auto for_each_row = [=](auto&& row_fn) {
        for (int kz = 0; kz < K; ++kz) {
            int zlo, zhi;
            detail::valid_range(Zo, Z, stride, kz, pad, zlo, zhi);
            for (int ky = 0; ky < K; ++ky) {
                int ylo, yhi;
                detail::valid_range(Yo, Y, stride, ky, pad, ylo, yhi);
                for (int kx = 0; kx < K; ++kx) {
                    int xlo, xhi;
                    detail::valid_range(Xo, X, stride, kx, pad, xlo, xhi);
                    if (xlo >= xhi)
                        continue;
                    const int tap = (kz * K + ky) * K + kx;
                    for (int oz = zlo; oz < zhi; ++oz) {
                        const int iz = oz * stride + kz - pad;
                        for (int oy = ylo; oy < yhi; ++oy) {
                            const int iy = oy * stride + ky - pad;
                            const std::size_t orow = (static_cast<std::size_t>(oz) * Yo + oy) * Xo;
                            const std::size_t irow = (static_cast<std::size_t>(iz) * Y + iy) * X;
                            row_fn(tap, orow, irow, xlo, xhi, kx - pad);
                        }
                    }
                }
            }
        }
    };

    auto im2col = [=](const T* xp, std::vector<T>& col) {
        col.assign(static_cast<std::size_t>(rows) * out_plane, T(0));
        parallel_for(0, Ci, [&](int ci) {
            const T* in = xp + ci * in_plane;
            T* cc = col.data() + static_cast<std::size_t>(ci) * ksz * out_plane;
            for_each_row([&](int tap, std::size_t orow, std::size_t irow, int xlo, int xhi, int shift) {
                T* __restrict dst = cc + tap * out_plane + orow;
                const T* __restrict src = in + irow;
                if (stride == 1)
                    std::copy(src + xlo + shift, src + xhi + shift, dst + xlo);
                else
                    for (int ox = xlo; ox < xhi; ++ox)
                        dst[ox] = src[ox * stride + shift];
            });
        });
    };

    Tensor<T> out({Co, Zo, Yo, Xo});
    {
        std::vector<T> col;
        im2col(x->value.ptr(), col);
        Map o(out.ptr(), Co, cols);
        o.noalias() = CMap(w->value.ptr(), Co, rows) * CMap(col.data(), rows, cols);
        const T* bp = b->value.ptr();
        for (int co = 0; co < Co; ++co)
            o.row(co).array() += bp[co];
    }

    return make_node<T>(std::move(out), {x, w, b}, [=](Node<T>& self) {
        CMap g(self.grad.ptr(), Co, cols);
        if (self.inputs[2]->requires_grad) {
            // fixed order, independent of alignment
            T* gb = self.inputs[2]->grad_ptr();
            const T* gp = self.grad.ptr();
            for (int co = 0; co < Co; ++co) {
                T acc = 0;
                for (Eigen::Index n = 0; n < cols; ++n)
                    acc += gp[co * cols + n];
                gb[co] += acc;
            }
        }
        const bool need_w = self.inputs[1]->requires_grad, need_x = self.inputs[0]->requires_grad;
        if (!need_w && !need_x)
            return;
        std::vector<T> col;
        if (need_w) {
            im2col(self.inputs[0]->value.ptr(), col);
            Map gw(self.inputs[1]->grad_ptr(), Co, rows);
            gw.noalias() += g * CMap(col.data(), rows, cols).transpose();
        }
        if (need_x) {
            col.resize(static_cast<std::size_t>(rows) * out_plane);
            Map gc(col.data(), rows, cols);
            gc.noalias() = CMap(self.inputs[1]->value.ptr(), Co, rows).transpose() * g;
            T* gx = self.inputs[0]->grad_ptr();
            parallel_for(0, Ci, [&](int ci) {
                T* gin = gx + ci * in_plane;
                const T* cc = col.data() + static_cast<std::size_t>(ci) * ksz * out_plane;
                for_each_row([&](int tap, std::size_t orow, std::size_t irow, int xlo, int xhi, int shift) {
                    const T* __restrict s = cc + tap * out_plane + orow;
                    T* __restrict d = gin + irow;
                    if (stride == 1)
                        for (int ox = xlo; ox < xhi; ++ox)
                            d[ox + shift] += s[ox];
                    else
                        for (int ox = xlo; ox < xhi; ++ox)
                            d[ox * stride + shift] += s[ox];
                });
            });
        }
    });
}

template <class T>
Var<T> leaky_relu(const Var<T>& x, T slope)
{
    Tensor<T> out = x->value;
    for (auto& v : out.data)
        v = v > T(0) ? v : slope * v;
    return make_node<T>(std::move(out), {x}, [slope](Node<T>& self) {
        auto& in = *self.inputs[0];
        T* gx = in.grad_ptr();
        const T* g = self.grad.ptr();
        const T* xv = in.value.ptr();
        for (std::size_t n = 0; n < self.size(); ++n)
            gx[n] += xv[n] > T(0) ? g[n] : slope * g[n];
    });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b)
{
    detail::require(a->shape() == b->shape(), "add: shape mismatch " + a->value.shape_str() + " vs " +
                                                  b->value.shape_str());
    Tensor<T> out = a->value;
    for (std::size_t n = 0; n < out.size(); ++n)
        out.data[n] += b->value.data[n];
    return make_node<T>(std::move(out), {a, b}, [](Node<T>& self) {
        const T* g = self.grad.ptr();
        for (int s = 0; s < 2; ++s) {
            if (!self.inputs[s]->requires_grad)
                continue;
            T* gi = self.inputs[s]->grad_ptr();
            for (std::size_t n = 0; n < self.size(); ++n)
                gi[n] += g[n];
        }
    });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b)
{
    detail::require(a->shape() == b->shape(), "sub: shape mismatch " + a->value.shape_str() + " vs " +
                                                  b->value.shape_str());
    Tensor<T> out = a->value;
    for (std::size_t n = 0; n < out.size(); ++n)
        out.data[n] -= b->value.data[n];
    return make_node<T>(std::move(out), {a, b}, [](Node<T>& self) {
        const T* g = self.grad.ptr();
        if (self.inputs[0]->requires_grad) {
            T* ga = self.inputs[0]->grad_ptr();
            for (std::size_t n = 0; n < self.size(); ++n)
                ga[n] += g[n];
        }
        if (self.inputs[1]->requires_grad) {
            T* gb = self.inputs[1]->grad_ptr();
            for (std::size_t n = 0; n < self.size(); ++n)
                gb[n] -= g[n];
        }
    });
}

/// Elementwise product.
template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b)
{
    detail::require(a->shape() == b->shape(), "mul: shape mismatch " + a->value.shape_str() + " vs " +
                                                  b->value.shape_str());
    Tensor<T> out = a->value;
    for (std::size_t n = 0; n < out.size(); ++n)
        out.data[n] *= b->value.data[n];
    return make_node<T>(std::move(out), {a, b}, [](Node<T>& self) {
        const T* g = self.grad.ptr();
        const auto& av = self.inputs[0]->value.data;
        const auto& bv = self.inputs[1]->value.data;
        if (self.inputs[0]->requires_grad) {
            T* ga = self.inputs[0]->grad_ptr();
            for (std::size_t n = 0; n < self.size(); ++n)
                ga[n] += g[n] * bv[n];
        }
        if (self.inputs[1]->requires_grad) {
            T* gb = self.inputs[1]->grad_ptr();
            for (std::size_t n = 0; n < self.size(); ++n)
                gb[n] += g[n] * av[n];
        }
    });
}

/// Channel concatenation of two {C,Z,Y,X} tensors.
template <class T>
Var<T> concat(const Var<T>& a, const Var<T>& b)
{
    detail::require_volumetric(a->shape(), "concat");
    detail::require_volumetric(b->shape(), "concat");
    detail::require(std::equal(a->shape().begin() + 1, a->shape().end(), b->shape().begin() + 1),
                    "concat: spatial mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
    auto shape = a->shape();
    shape[0] += b->shape()[0];
    Tensor<T> out(shape);
    std::copy(a->value.data.begin(), a->value.data.end(), out.data.begin());
    std::copy(b->value.data.begin(), b->value.data.end(), out.data.begin() + static_cast<long>(a->size()));
    const std::size_t na = a->size();
    return make_node<T>(std::move(out), {a, b}, [na](Node<T>& self) {
        const T* g = self.grad.ptr();
        if (self.inputs[0]->requires_grad) {
            T* ga = self.inputs[0]->grad_ptr();
            for (std::size_t n = 0; n < na; ++n)
                ga[n] += g[n];
        }
        if (self.inputs[1]->requires_grad) {
            T* gb = self.inputs[1]->grad_ptr();
            for (std::size_t n = 0; n < self.size() - na; ++n)
                gb[n] += g[na + n];
        }
    });
}

namespace detail {

/// Linear ×2 resampling weights along one axis with half-pixel centers and
/// edge clamping: output o reads input (o + 0.5) / 2 - 0.5.
struct Upsample1D {
    std::vector<int> i0, i1;
    std::vector<double> t;

    explicit Upsample1D(int n)
    {
        const int m = 2 * n;
        i0.resize(m);
        i1.resize(m);
        t.resize(m);
        for (int o = 0; o < m; ++o) {
            const double src = std::clamp((o + 0.5) / 2.0 - 0.5, 0.0, static_cast<double>(n - 1));
            const int f = static_cast<int>(std::floor(src));
            i0[o] = f;
            i1[o] = std::min(f + 1, n - 1);
            t[o] = src - f;
        }
    }
};

} // namespace detail

/// Doubles one spatial axis (1 = z, 2 = y, 3 = x) by linear interpolation.
template <class T>
Var<T> upsample_axis(const Var<T>& x, int axis)
{
    detail::require_volumetric(x->shape(), "upsample");
    const auto in_shape = x->shape();
    auto shape = in_shape;
    shape[axis] *= 2;
    const int n = in_shape[axis];
    const detail::Upsample1D lut(n);

    // View as {outer, n, inner}.
    std::size_t outer = 1, inner = 1;
    for (int a = 0; a < axis; ++a)
        outer *= static_cast<std::size_t>(in_shape[a]);
    for (int a = axis + 1; a < 4; ++a)
        inner *= static_cast<std::size_t>(in_shape[a]);
    const int m = 2 * n;

    Tensor<T> out(shape);
    const T* xp = x->value.ptr();
    T* op = out.ptr();
    for (std::size_t o = 0; o < outer; ++o)
        for (int q = 0; q < m; ++q) {
            const T w1 = static_cast<T>(lut.t[q]), w0 = T(1) - w1;
            const T* r0 = xp + (o * n + lut.i0[q]) * inner;
            const T* r1 = xp + (o * n + lut.i1[q]) * inner;
            T* dst = op + (o * m + q) * inner;
            for (std::size_t s = 0; s < inner; ++s)
                dst[s] = w0 * r0[s] + w1 * r1[s];
        }

    return make_node<T>(std::move(out), {x}, [=](Node<T>& self) {
        T* gx = self.inputs[0]->grad_ptr();
        const T* g = self.grad.ptr();
        for (std::size_t o = 0; o < outer; ++o)
            for (int q = 0; q < m; ++q) {
                const T w1 = static_cast<T>(lut.t[q]), w0 = T(1) - w1;
                const T* src = g + (o * m + q) * inner;
                T* r0 = gx + (o * n + lut.i0[q]) * inner;
                T* r1 = gx + (o * n + lut.i1[q]) * inner;
                for (std::size_t s = 0; s < inner; ++s) {
                    r0[s] += w0 * src[s];
                    r1[s] += w1 * src[s];
                }
            }
    });
}

/// Trilinear ×2 upsampling of all three spatial axes.
template <class T>
Var<T> upsample2(const Var<T>& x)
{
    return upsample_axis(upsample_axis(upsample_axis(x, 3), 2), 1);
}

/// Spatial transformer: out[c](p) = img[c](p + flow(p)), trilinear, zero
/// padding. flow {3,Z,Y,X} holds (ux, uy, uz) in voxels.
template <class T>
Var<T> warp(const Var<T>& img, const Var<T>& flow)
{
    detail::require_volumetric(img->shape(), "warp");
    detail::require_volumetric(flow->shape(), "warp");
    detail::require(flow->shape()[0] == 3, "warp: flow must have 3 channels");
    detail::require(std::equal(img->shape().begin() + 1, img->shape().end(), flow->shape().begin() + 1),
                    "warp: spatial mismatch " + img->value.shape_str() + " vs " + flow->value.shape_str());
    const int C = img->shape()[0], Z = img->shape()[1], Y = img->shape()[2], X = img->shape()[3];
    const std::size_t plane = static_cast<std::size_t>(Z) * Y * X;

    struct Corner {
        int x0, y0, z0;
        T tx, ty, tz;
    };
    auto locate = [=](const T* fp, int i, int j, int k, std::size_t idx) {
        const T px = static_cast<T>(i) + fp[idx];
        const T py = static_cast<T>(j) + fp[plane + idx];
        const T pz = static_cast<T>(k) + fp[2 * plane + idx];
        const T fx = std::floor(px), fy = std::floor(py), fz = std::floor(pz);
        return Corner{static_cast<int>(fx), static_cast<int>(fy), static_cast<int>(fz), px - fx, py - fy, pz - fz};
    };
    auto at = [=](int a, int b, int c) -> long {
        if (a < 0 || b < 0 || c < 0 || a >= X || b >= Y || c >= Z)
            return -1;
        return (static_cast<long>(c) * Y + b) * X + a;
    };

    Tensor<T> out(img->shape());
    const T* ip = img->value.ptr();
    const T* fp = flow->value.ptr();
    for (int k = 0; k < Z; ++k)
        for (int j = 0; j < Y; ++j)
            for (int i = 0; i < X; ++i) {
                const std::size_t idx = (static_cast<std::size_t>(k) * Y + j) * X + i;
                const Corner q = locate(fp, i, j, k, idx);
                for (int c = 0; c < C; ++c) {
                    const T* src = ip + c * plane;
                    T acc = 0;
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const long n = at(q.x0 + dx, q.y0 + dy, q.z0 + dz);
                                if (n < 0)
                                    continue;
                                const T w = (dx ? q.tx : T(1) - q.tx) * (dy ? q.ty : T(1) - q.ty) *
                                            (dz ? q.tz : T(1) - q.tz);
                                if (w != T(0))
                                    acc += w * src[n];
                            }
                    out.data[c * plane + idx] = acc;
                }
            }

    return make_node<T>(std::move(out), {img, flow}, [=](Node<T>& self) {
        const Node<T>& in = *self.inputs[0];
        const Node<T>& fl = *self.inputs[1];
        const bool want_img = in.requires_grad, want_flow = fl.requires_grad;
        T* gi = want_img ? self.inputs[0]->grad_ptr() : nullptr;
        T* gf = want_flow ? self.inputs[1]->grad_ptr() : nullptr;
        const T* g = self.grad.ptr();
        const T* ip = in.value.ptr();
        const T* fp = fl.value.ptr();
        for (int k = 0; k < Z; ++k)
            for (int j = 0; j < Y; ++j)
                for (int i = 0; i < X; ++i) {
                    const std::size_t idx = (static_cast<std::size_t>(k) * Y + j) * X + i;
                    const Corner q = locate(fp, i, j, k, idx);
                    T dfx = 0, dfy = 0, dfz = 0;
                    for (int c = 0; c < C; ++c) {
                        const T go = g[c * plane + idx];
                        if (go == T(0))
                            continue;
                        const T* src = ip + c * plane;
                        for (int dz = 0; dz < 2; ++dz)
                            for (int dy = 0; dy < 2; ++dy)
                                for (int dx = 0; dx < 2; ++dx) {
                                    const long n = at(q.x0 + dx, q.y0 + dy, q.z0 + dz);
                                    if (n < 0)
                                        continue;
                                    const T wx = dx ? q.tx : T(1) - q.tx;
                                    const T wy = dy ? q.ty : T(1) - q.ty;
                                    const T wz = dz ? q.tz : T(1) - q.tz;
                                    if (want_img)
                                        gi[c * plane + n] += go * wx * wy * wz;
                                    if (want_flow) {
                                        const T v = go * src[n];
                                        dfx += v * (dx ? T(1) : T(-1)) * wy * wz;
                                        dfy += v * wx * (dy ? T(1) : T(-1)) * wz;
                                        dfz += v * wx * wy * (dz ? T(1) : T(-1));
                                    }
                                }
                    }
                    if (want_flow) {
                        gf[idx] += dfx;
                        gf[plane + idx] += dfy;
                        gf[2 * plane + idx] += dfz;
                    }
                }
    });
}

namespace detail {

/// In-place clipped box sum of radius r along each axis of a Z*Y*X grid:
/// g(p) <- sum of g(q) over |q - p|_inf <= r, q inside the grid.
inline void box_sum(std::vector<double>& g, int Z, int Y, int X, int r)
{
    std::vector<double> line, prefix;
    const int dims[3] = {X, Y, Z};
    const std::size_t stride[3] = {1, static_cast<std::size_t>(X), static_cast<std::size_t>(X) * Y};
    for (int axis = 0; axis < 3; ++axis) {
        const int n = dims[axis];
        line.resize(n);
        prefix.resize(n + 1);
        const std::size_t s = stride[axis];
        const int o1 = axis == 0 ? Y : X, o2 = axis == 2 ? Y : Z;
        const std::size_t s1 = axis == 0 ? stride[1] : stride[0];
        const std::size_t s2 = axis == 2 ? stride[1] : stride[2];
        for (int b = 0; b < o2; ++b)
            for (int a = 0; a < o1; ++a) {
                const std::size_t base = a * s1 + b * s2;
                prefix[0] = 0;
                for (int t = 0; t < n; ++t)
                    prefix[t + 1] = prefix[t] + g[base + t * s];
                for (int t = 0; t < n; ++t) {
                    const int lo = std::max(0, t - r), hi = std::min(n - 1, t + r);
                    g[base + t * s] = prefix[hi + 1] - prefix[lo];
                }
            }
    }
}

inline std::vector<double> box_count(int Z, int Y, int X, int r)
{
    std::vector<double> c(static_cast<std::size_t>(Z) * Y * X, 1.0);
    box_sum(c, Z, Y, X, r);
    return c;
}

} // namespace detail

/// Mean over voxels of the windowed normalized cross-correlation
///   r(p) = cov(p) / sqrt(max(var_a(p), eps) * max(var_b(p), eps))
/// with cubic windows of edge `window` centered at p and clipped to the
/// volume. Statistics are per-window means. Inputs must be single-channel.
template <class T>
Var<T> ncc(const Var<T>& a, const Var<T>& b, int window, double eps)
{
    detail::require_volumetric(a->shape(), "ncc");
    detail::require(a->shape() == b->shape(), "ncc: shape mismatch " + a->value.shape_str() + " vs " +
                                                  b->value.shape_str());
    detail::require(a->shape()[0] == 1, "ncc: expects single-channel inputs");
    if (window < 1 || window % 2 == 0)
        throw ConfigError("ncc: window must be odd and positive");
    const int Z = a->shape()[1], Y = a->shape()[2], X = a->shape()[3], r = window / 2;
    const std::size_t N = static_cast<std::size_t>(Z) * Y * X;

    auto stats = std::make_shared<std::array<std::vector<double>, 6>>();
    auto& [Sa, Sb, Saa, Sbb, Sab, cnt] = *stats;
    Sa.resize(N), Sb.resize(N), Saa.resize(N), Sbb.resize(N), Sab.resize(N);
    const T* ap = a->value.ptr();
    const T* bp = b->value.ptr();
    for (std::size_t n = 0; n < N; ++n) {
        const double x = ap[n], y = bp[n];
        Sa[n] = x, Sb[n] = y, Saa[n] = x * x, Sbb[n] = y * y, Sab[n] = x * y;
    }
    for (auto* s : {&Sa, &Sb, &Saa, &Sbb, &Sab})
        detail::box_sum(*s, Z, Y, X, r);
    cnt = detail::box_count(Z, Y, X, r);

    double total = 0;
    for (std::size_t n = 0; n < N; ++n) {
        const double inv = 1.0 / cnt[n];
        const double ma = Sa[n] * inv, mb = Sb[n] * inv;
        const double cov = Sab[n] * inv - ma * mb;
        const double va = std::max(Saa[n] * inv - ma * ma, eps);
        const double vb = std::max(Sbb[n] * inv - mb * mb, eps);
        total += cov / std::sqrt(va * vb);
    }
    Tensor<T> out({1}, static_cast<T>(total / static_cast<double>(N)));

    return make_node<T>(std::move(out), {a, b}, [=](Node<T>& self) {
        auto& [Sa, Sb, Saa, Sbb, Sab, cnt] = *stats;
        const double up = static_cast<double>(self.grad.data[0]) / static_cast<double>(N);
        std::vector<double> gSa(N), gSb(N), gSaa(N), gSbb(N), gSab(N);
        for (std::size_t n = 0; n < N; ++n) {
            const double inv = 1.0 / cnt[n];
            const double ma = Sa[n] * inv, mb = Sb[n] * inv;
            const double cov = Sab[n] * inv - ma * mb;
            const double va_raw = Saa[n] * inv - ma * ma, vb_raw = Sbb[n] * inv - mb * mb;
            const double va = std::max(va_raw, eps), vb = std::max(vb_raw, eps);
            const double den = std::sqrt(va * vb);
            const double rr = cov / den;
            const double d_cov = up / den;
            const double d_va = va_raw > eps ? -0.5 * up * rr / va : 0.0;
            const double d_vb = vb_raw > eps ? -0.5 * up * rr / vb : 0.0;
            gSab[n] = d_cov * inv;
            gSa[n] = (-d_cov * mb - 2.0 * d_va * ma) * inv;
            gSb[n] = (-d_cov * ma - 2.0 * d_vb * mb) * inv;
            gSaa[n] = d_va * inv;
            gSbb[n] = d_vb * inv;
        }
        for (auto* s : {&gSa, &gSb, &gSaa, &gSbb, &gSab})
            detail::box_sum(*s, Z, Y, X, r);
        const T* ap = self.inputs[0]->value.ptr();
        const T* bp = self.inputs[1]->value.ptr();
        if (self.inputs[0]->requires_grad) {
            T* ga = self.inputs[0]->grad_ptr();
            for (std::size_t n = 0; n < N; ++n)
                ga[n] += static_cast<T>(gSa[n] + 2.0 * ap[n] * gSaa[n] + bp[n] * gSab[n]);
        }
        if (self.inputs[1]->requires_grad) {
            T* gb = self.inputs[1]->grad_ptr();
            for (std::size_t n = 0; n < N; ++n)
                gb[n] += static_cast<T>(gSb[n] + 2.0 * bp[n] * gSbb[n] + ap[n] * gSab[n]);
        }
    });
}

/// mean |a - b|
template <class T>
Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b)
{
    detail::require(a->shape() == b->shape(), "mean_abs_diff: shape mismatch");
    const std::size_t N = a->size();
    double s = 0;
    for (std::size_t n = 0; n < N; ++n)
        s += std::abs(static_cast<double>(a->value.data[n]) - static_cast<double>(b->value.data[n]));
    Tensor<T> out({1}, static_cast<T>(s / static_cast<double>(N)));
    return make_node<T>(std::move(out), {a, b}, [N](Node<T>& self) {
        const T up = self.grad.data[0] / static_cast<T>(N);
        const T* av = self.inputs[0]->value.ptr();
        const T* bv = self.inputs[1]->value.ptr();
        T* ga = self.inputs[0]->requires_grad ? self.inputs[0]->grad_ptr() : nullptr;
        T* gb = self.inputs[1]->requires_grad ? self.inputs[1]->grad_ptr() : nullptr;
        for (std::size_t n = 0; n < N; ++n) {
            const T d = av[n] - bv[n];
            const T s = d > T(0) ? up : d < T(0) ? -up : T(0);
            if (ga)
                ga[n] += s;
            if (gb)
                gb[n] -= s;
        }
    });
}

/// Mean over all elements.
template <class T>
Var<T> mean(const Var<T>& x)
{
    const std::size_t N = x->size();
    double s = 0;
    for (T v : x->value.data)
        s += static_cast<double>(v);
    Tensor<T> out({1}, static_cast<T>(s / static_cast<double>(N)));
    return make_node<T>(std::move(out), {x}, [N](Node<T>& self) {
        const T up = self.grad.data[0] / static_cast<T>(N);
        T* gx = self.inputs[0]->grad_ptr();
        for (std::size_t n = 0; n < N; ++n)
            gx[n] += up;
    });
}

/// Stable binary cross-entropy on a scalar logit:
///   max(z, 0) - z*y + log(1 + exp(-|z|)).
template <class T>
Var<T> bce_with_logits(const Var<T>& logit, double label)
{
    detail::require(logit->size() == 1, "bce_with_logits: expects a scalar logit");
    const double z = static_cast<double>(logit->value.data[0]);
    const double loss = std::max(z, 0.0) - z * label + std::log1p(std::exp(-std::abs(z)));
    Tensor<T> out({1}, static_cast<T>(loss));
    return make_node<T>(std::move(out), {logit}, [label](Node<T>& self) {
        const double z = static_cast<double>(self.inputs[0]->value.data[0]);
        const double sig = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        self.inputs[0]->grad_ptr()[0] += static_cast<T>(static_cast<double>(self.grad.data[0]) * (sig - label));
    });
}

/// sum_i coeff[i] * terms[i] over scalar terms.
template <class T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<T>& coeff)
{
    detail::require(terms.size() == coeff.size() && !terms.empty(), "weighted_sum: size mismatch");
    T s = 0;
    for (std::size_t i = 0; i < terms.size(); ++i) {
        detail::require(terms[i]->size() == 1, "weighted_sum: terms must be scalars");
        s += coeff[i] * terms[i]->value.data[0];
    }
    return make_node<T>(Tensor<T>({1}, s), terms, [coeff](Node<T>& self) {
        const T up = self.grad.data[0];
        for (std::size_t i = 0; i < self.inputs.size(); ++i)
            if (self.inputs[i]->requires_grad)
                self.inputs[i]->grad_ptr()[0] += coeff[i] * up;
    });
}

} // namespace invgan::ag
