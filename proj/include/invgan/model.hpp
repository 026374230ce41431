#pragma once

// Dual-decoder registration generator and patch discriminator.
//
// Generator dataflow for a P^3 patch pair (C = base_channels, F = fine_channels):
//   input {2,P^3} -> 4 x [conv s2 + lrelu]   -> e1..e4 at P/2, P/4, P/8, P/16 (C each)
//   per decoder:   conv + lrelu at P/16 (C)
//     block(e3, C) -> P/8,  block(e2, C) -> P/4,  block(e1, F) -> P/2
//       block: u = up2(x); s = u + skip (forward) or u - skip (backward);
//              out = lrelu(conv(concat(u, s)))
//     conv + lrelu (F), linear conv (3) -> flow at P/2, then up2 -> flow at P
// Discriminator: 6 x [conv s2 + lrelu] (C) -> 1x1x1 conv to one channel ->
// mean over the remaining cells -> logit.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "invgan/autograd.hpp"
#include "invgan/ops.hpp"
#include "invgan/random.hpp"

namespace invgan {

struct ModelConfig {
    int patch_size = 64;
    int base_channels = 32;
    int fine_channels = 8;
    double leaky_slope = 0.2;
    double flow_init_std = 1e-3;
    std::uint64_t seed = 0;

    void validate() const
    {
        if (patch_size <= 0 || patch_size % 16 != 0)
            throw ConfigError("model: patch size must be a positive multiple of 16, got " + std::to_string(patch_size));
        if (base_channels < 1 || fine_channels < 1)
            throw ConfigError("model: channel counts must be >= 1");
        if (!(leaky_slope >= 0) || !(flow_init_std >= 0))
            throw ConfigError("model: leaky_slope and flow_init_std must be >= 0");
    }
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <class T>
struct NamedParam {
    std::string name;
    ag::Var<T> var;
};

/// Ordered collection of trainable tensors.
template <class T>
class ParamSet {
public:
    ag::Var<T> add(std::string name, Tensor<T> value)
    {
        auto v = ag::leaf(std::move(value));
        params_.push_back({std::move(name), v});
        return v;
    }

    void zero_grad()
    {
        for (auto& p : params_)
            p.var->grad = Tensor<T>();
    }

    void set_trainable(bool on)
    {
        for (auto& p : params_)
            p.var->requires_grad = on;
    }

    std::size_t count() const
    {
        std::size_t n = 0;
        for (const auto& p : params_)
            n += p.var->size();
        return n;
    }

    /// FNV-1a over the raw parameter bytes.
    std::uint64_t hash() const
    {
        std::uint64_t h = 1469598103934665603ull;
        for (const auto& p : params_) {
            const auto* bytes = reinterpret_cast<const unsigned char*>(p.var->value.ptr());
            for (std::size_t i = 0; i < p.var->size() * sizeof(T); ++i)
                h = (h ^ bytes[i]) * 1099511628211ull;
        }
        return h;
    }

    std::vector<NamedParam<T>>& items() noexcept { return params_; }
    const std::vector<NamedParam<T>>& items() const noexcept { return params_; }

private:
    std::vector<NamedParam<T>> params_;
};

template <class T>
struct ConvLayer {
    ag::Var<T> weight; // {Co, Ci, K, K, K}
    ag::Var<T> bias;   // {Co}
    int stride = 1;
    int pad = 1;

    ag::Var<T> operator()(const ag::Var<T>& x) const { return ag::conv3d(x, weight, bias, stride, pad); }
    std::vector<int> weight_shape() const { return weight->shape(); }
};

namespace detail {

/// Fan-in scaled normal init (leaky-ReLU gain), or a fixed std when given.
template <class T>
ConvLayer<T> make_conv(ParamSet<T>& ps, const std::string& name, int ci, int co, int k, int stride, Rng& rng,
                       double slope, double fixed_std = -1)
{
    const int fan_in = ci * k * k * k;
    const double std = fixed_std >= 0 ? fixed_std : std::sqrt(2.0 / ((1.0 + slope * slope) * fan_in));
    Tensor<T> w({co, ci, k, k, k});
    for (auto& v : w.data)
        v = static_cast<T>(std * rng.normal());
    ConvLayer<T> layer;
    layer.weight = ps.add(name + ".weight", std::move(w));
    layer.bias = ps.add(name + ".bias", Tensor<T>({co}, T(0)));
    layer.stride = stride;
    layer.pad = k / 2;
    return layer;
}

inline std::vector<int> spatial(const std::vector<int>& s) { return {s.begin() + 1, s.end()}; }

} // namespace detail

/// Copies the parameter values of `src` into `dst` (same architecture,
/// possibly different scalar type).
template <class To, class From>
void copy_params(ParamSet<To>& dst, const ParamSet<From>& src)
{
    auto& d = dst.items();
    const auto& s = src.items();
    if (d.size() != s.size())
        throw ShapeError("copy_params: parameter count mismatch");
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d[i].var->shape() != s[i].var->shape())
            throw ShapeError("copy_params: shape mismatch at " + s[i].name);
        for (std::size_t n = 0; n < d[i].var->size(); ++n)
            d[i].var->value.data[n] = static_cast<To>(s[i].var->value.data[n]);
    }
}

enum class FusionMode { add, subtract };

template <class T>
struct Decoder {
    FusionMode mode = FusionMode::add;
    ConvLayer<T> bottleneck;
    ConvLayer<T> blocks[3];
    ConvLayer<T> refine;
    ConvLayer<T> flow;
};

struct GeneratorTrace {
    std::vector<std::vector<int>> encoder_shapes; // {C,Z,Y,X} per stage
    std::vector<std::vector<int>> block_shapes;   // forward decoder, per fusion block
    std::vector<int> half_flow_shape;
};

template <class T>
struct FlowPair {
    ag::Var<T> forward;  // phi_ST: warps source onto target
    ag::Var<T> backward; // phi_TS: warps target onto source
    GeneratorTrace trace;
};

/// Shared encoder with forward (additive skip) and backward (subtractive skip)
/// decoders.
template <class T>
class Generator {
public:
    Generator() = default;
    Generator(Generator&&) noexcept = default;
    Generator& operator=(Generator&&) noexcept = default;

    /// Deep copy: parameters are duplicated, not shared.
    Generator(const Generator& other) : cfg_(other.cfg_)
    {
        if (!other.params_.items().empty()) {
            *this = Generator(other.cfg_);
            copy_params(params_, other.params_);
        }
    }
    Generator& operator=(const Generator& other)
    {
        if (this != &other)
            *this = Generator(other);
        return *this;
    }

    explicit Generator(const ModelConfig& cfg) : cfg_(cfg)
    {
        cfg.validate();
        const double slope = cfg.leaky_slope;
        const int C = cfg.base_channels, F = cfg.fine_channels;
        Rng rng(derive_seed(cfg.seed, 0x67656e));
        int in = 2;
        for (int s = 0; s < 4; ++s) {
            encoder_[s] = detail::make_conv(params_, "enc" + std::to_string(s), in, C, 3, 2, rng, slope);
            in = C;
        }
        for (int d = 0; d < 2; ++d) {
            const std::string p = d == 0 ? "fwd." : "bwd.";
            auto& dec = decoders_[d];
            dec.mode = d == 0 ? FusionMode::add : FusionMode::subtract;
            dec.bottleneck = detail::make_conv(params_, p + "bottleneck", C, C, 3, 1, rng, slope);
            const int outs[3] = {C, C, F};
            for (int b = 0; b < 3; ++b)
                dec.blocks[b] =
                    detail::make_conv(params_, p + "block" + std::to_string(b), 2 * C, outs[b], 3, 1, rng, slope);
            dec.refine = detail::make_conv(params_, p + "refine", F, F, 3, 1, rng, slope);
            dec.flow = detail::make_conv(params_, p + "flow", F, 3, 3, 1, rng, slope, cfg.flow_init_std);
        }
    }

    const ModelConfig& config() const noexcept { return cfg_; }
    ParamSet<T>& params() noexcept { return params_; }
    const ParamSet<T>& params() const noexcept { return params_; }
    const Decoder<T>& decoder(int d) const { return decoders_[d]; }

    /// source, target: {1,P,P,P}. Returns flows {3,P,P,P}.
    FlowPair<T> forward(const ag::Var<T>& source, const ag::Var<T>& target) const
    {
        const int P = cfg_.patch_size;
        const std::vector<int> expect{1, P, P, P};
        if (source->shape() != expect || target->shape() != expect)
            throw ShapeError("generator: expected patches " + Tensor<T>::shape_str(expect) + ", got " +
                             source->value.shape_str() + " and " + target->value.shape_str());
        const T slope = static_cast<T>(cfg_.leaky_slope);

        FlowPair<T> out;
        ag::Var<T> skips[4];
        ag::Var<T> h = ag::concat(source, target);
        for (int s = 0; s < 4; ++s) {
            h = ag::leaky_relu(encoder_[s](h), slope);
            skips[s] = h;
            out.trace.encoder_shapes.push_back(h->shape());
        }
        for (int d = 0; d < 2; ++d) {
            const auto& dec = decoders_[d];
            ag::Var<T> x = ag::leaky_relu(dec.bottleneck(skips[3]), slope);
            for (int b = 0; b < 3; ++b) {
                const auto& skip = skips[2 - b];
                auto u = ag::upsample2(x);
                auto s = dec.mode == FusionMode::add ? ag::add(u, skip) : ag::sub(u, skip);
                x = ag::leaky_relu(dec.blocks[b](ag::concat(u, s)), slope);
                if (d == 0)
                    out.trace.block_shapes.push_back(x->shape());
            }
            x = ag::leaky_relu(dec.refine(x), slope);
            auto half = dec.flow(x);
            if (d == 0)
                out.trace.half_flow_shape = half->shape();
            (d == 0 ? out.forward : out.backward) = ag::upsample2(half);
        }
        return out;
    }

private:
    ModelConfig cfg_;
    ParamSet<T> params_;
    ConvLayer<T> encoder_[4];
    Decoder<T> decoders_[2];
};

struct DiscriminatorTrace {
    std::vector<int> spatial_sizes; // edge length after each strided stage
    int cells = 0;                  // logits averaged into the score
};

template <class T>
struct DiscriminatorOutput {
    ag::Var<T> logit; // {1}
    DiscriminatorTrace trace;
};

/// Six stride-2 stages and a 1x1x1 projection. For P > 64 the remaining
/// m^3 cells are averaged into one score.
template <class T>
class Discriminator {
public:
    static constexpr int kStages = 6;

    Discriminator() = default;
    Discriminator(Discriminator&&) noexcept = default;
    Discriminator& operator=(Discriminator&&) noexcept = default;

    Discriminator(const Discriminator& other) : cfg_(other.cfg_), stream_(other.stream_)
    {
        if (!other.params_.items().empty()) {
            *this = Discriminator(other.cfg_, other.stream_);
            copy_params(params_, other.params_);
        }
    }
    Discriminator& operator=(const Discriminator& other)
    {
        if (this != &other)
            *this = Discriminator(other);
        return *this;
    }

    Discriminator(const ModelConfig& cfg, std::uint64_t stream) : cfg_(cfg), stream_(stream)
    {
        cfg.validate();
        Rng rng(derive_seed(cfg.seed, stream));
        int in = 2;
        for (int s = 0; s < kStages; ++s) {
            stages_[s] = detail::make_conv(params_, "stage" + std::to_string(s), in, cfg.base_channels, 3, 2, rng,
                                           cfg.leaky_slope);
            in = cfg.base_channels;
        }
        head_ = detail::make_conv(params_, "head", in, 1, 1, 1, rng, cfg.leaky_slope);
    }

    const ModelConfig& config() const noexcept { return cfg_; }
    ParamSet<T>& params() noexcept { return params_; }
    const ParamSet<T>& params() const noexcept { return params_; }

    /// a, b: {1,P,P,P}; the input is their channel concatenation.
    DiscriminatorOutput<T> forward(const ag::Var<T>& a, const ag::Var<T>& b) const
    {
        if (a->shape() != b->shape() || a->shape().size() != 4 || a->shape()[0] != 1)
            throw ShapeError("discriminator: expected two {1,Z,Y,X} patches of equal shape, got " +
                             a->value.shape_str() + " and " + b->value.shape_str());
        const T slope = static_cast<T>(cfg_.leaky_slope);
        DiscriminatorOutput<T> out;
        ag::Var<T> h = ag::concat(a, b);
        for (int s = 0; s < kStages; ++s) {
            h = ag::leaky_relu(stages_[s](h), slope);
            out.trace.spatial_sizes.push_back(h->shape()[1]);
        }
        h = head_(h);
        out.trace.cells = static_cast<int>(h->size());
        out.logit = ag::mean(h);
        return out;
    }

private:
    ModelConfig cfg_;
    std::uint64_t stream_ = 0;
    ParamSet<T> params_;
    ConvLayer<T> stages_[kStages];
    ConvLayer<T> head_;
};

inline constexpr std::uint64_t kTargetDiscriminatorStream = 0x64745f;
inline constexpr std::uint64_t kSourceDiscriminatorStream = 0x64735f;

} // namespace invgan
