#pragma once

// Alternating adversarial optimization over co-located patch pairs.
//
// One step on a batch:
//   1. generator forward -> flows -> warped patches
//   2. update D_T on (T, T) as real and (T, S o phi_ST) as generated
//   3. update D_S on (S, S) as real and (S, T o phi_TS) as generated
//   4. update the generator on similarity + cycle + lambda * adversarial with
//      both discriminators frozen
// With adversarial training disabled, steps 2-3 are skipped and the
// adversarial term is dropped.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string_view>
#include <string>
#include <utility>
#include <vector>

#include "invgan/losses.hpp"
#include "invgan/model.hpp"
#include "invgan/optim.hpp"
#include "invgan/random.hpp"
#include "invgan/sampler.hpp"
#include "invgan/volume.hpp"

namespace invgan {

struct TrainConfig {
    std::int64_t iterations = 1000;
    int batch_size = 4;
    double lr_generator = 1e-4;
    double lr_discriminator = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double clip_norm = 10.0;
    int patches_per_pair = 2500;
    bool adversarial_enabled = true;
    std::int64_t checkpoint_every = 0; // 0: only at the end
    std::uint64_t seed = 0;
    ModelConfig model;
    LossConfig loss;
    SamplerConfig sampler;

    void validate() const
    {
        if (iterations <= 0)
            throw ConfigError("train: iterations must be > 0");
        if (batch_size < 1)
            throw ConfigError("train: batch size must be >= 1");
        if (patches_per_pair < 1)
            throw ConfigError("train: patches_per_pair must be >= 1");
        if (!(lr_generator > 0) || !(lr_discriminator > 0))
            throw ConfigError("train: learning rates must be > 0");
        if (checkpoint_every < 0)
            throw ConfigError("train: checkpoint_every must be >= 0");
        model.validate();
        loss.validate();
        sampler.validate();
        if (sampler.patch_size != model.patch_size)
            throw ConfigError("train: sampler patch size " + std::to_string(sampler.patch_size) +
                              " differs from model patch size " + std::to_string(model.patch_size));
    }

    AdamConfig generator_optimizer() const { return {lr_generator, beta1, beta2, 1e-8, clip_norm}; }
    AdamConfig discriminator_optimizer() const { return {lr_discriminator, beta1, beta2, 1e-8, clip_norm}; }

    /// Keeps the derived seeds and the sampler patch size consistent with the
    /// top-level fields.
    TrainConfig resolved() const
    {
        TrainConfig c = *this;
        c.model.seed = derive_seed(seed, 0x6d6f64656c);
        c.sampler.seed = derive_seed(seed, 0x73616d706c);
        c.sampler.patch_size = c.model.patch_size;
        return c;
    }
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct TrainState {
    TrainConfig config;
    Generator<float> generator;
    Discriminator<float> d_target;
    Discriminator<float> d_source;
    Adam<float> opt_generator;
    Adam<float> opt_d_target;
    Adam<float> opt_d_source;
    std::int64_t iteration = 0;

    static TrainState create(const TrainConfig& cfg_in)
    {
        const TrainConfig cfg = cfg_in.resolved();
        cfg.validate();
        TrainState s;
        s.config = cfg;
        s.generator = Generator<float>(cfg.model);
        s.d_target = Discriminator<float>(cfg.model, kTargetDiscriminatorStream);
        s.d_source = Discriminator<float>(cfg.model, kSourceDiscriminatorStream);
        s.opt_generator = Adam<float>(s.generator.params(), cfg.generator_optimizer());
        s.opt_d_target = Adam<float>(s.d_target.params(), cfg.discriminator_optimizer());
        s.opt_d_source = Adam<float>(s.d_source.params(), cfg.discriminator_optimizer());
        return s;
    }
};

struct PatchPair {
    PatchSpec spec;
    Volume source;
    Volume target;
};

struct StepMetrics {
    std::int64_t iteration = 0; // count after the step
    double similarity = 0;
    double cycle = 0;
    double adversarial = 0;
    double total = 0;
    double d_target_loss = 0;
    double d_source_loss = 0;
    double generator_grad_norm = 0;
    double wall_seconds = 0;
};

namespace detail {

inline ag::Var<float> patch_var(const Volume& v) { return to_var<float>(v); }

inline void require_finite(double v, const char* what, const TrainState& s, const StepMetrics& m)
{
    if (!std::isfinite(v))
        throw NumericalError(std::string("non-finite ") + what + " at iteration " + std::to_string(s.iteration) +
                             " (similarity=" + std::to_string(m.similarity) + ", cycle=" + std::to_string(m.cycle) +
                             ", adversarial=" + std::to_string(m.adversarial) +
                             ", d_target=" + std::to_string(m.d_target_loss) +
                             ", d_source=" + std::to_string(m.d_source_loss) + ")");
}

} // namespace detail

/// Called after each update phase ("d_target", "d_source", "generator").
using PhaseObserver = std::function<void(std::string_view phase, const TrainState&)>;

inline StepMetrics train_step(TrainState& state, std::span<const PatchPair> batch, const PhaseObserver& observe = {})
{
    if (batch.empty())
        throw DataError("train_step: empty batch");
    const auto t0 = std::chrono::steady_clock::now();
    const auto& cfg = state.config;
    const int P = cfg.model.patch_size;
    const std::size_t B = batch.size();
    StepMetrics m;

    auto& gen = state.generator;
    gen.params().zero_grad();
    gen.params().set_trainable(true);

    std::vector<ag::Var<float>> src(B), tgt(B), ws(B), wt(B);
    std::vector<FlowPair<float>> flows(B);
    for (std::size_t b = 0; b < B; ++b) {
        if (batch[b].source.dims != Dims{P, P, P} || batch[b].target.dims != Dims{P, P, P})
            throw ShapeError("train_step: patch " + std::to_string(b) + " is not " + std::to_string(P) + "^3");
        src[b] = detail::patch_var(batch[b].source);
        tgt[b] = detail::patch_var(batch[b].target);
        flows[b] = gen.forward(src[b], tgt[b]);
        ws[b] = ag::warp(src[b], flows[b].forward);
        wt[b] = ag::warp(tgt[b], flows[b].backward);
    }

    const bool adversarial = cfg.adversarial_enabled;
    if (adversarial) {
        // reference patch, its real partner, its generated partner
        auto update = [&](Discriminator<float>& disc, Adam<float>& opt, const std::vector<ag::Var<float>>& ref,
                          const std::vector<ag::Var<float>>& fake) {
            disc.params().zero_grad();
            disc.params().set_trainable(true);
            std::vector<ag::Var<float>> real_logits, fake_logits;
            for (std::size_t b = 0; b < B; ++b) {
                real_logits.push_back(disc.forward(ref[b], ref[b]).logit);
                fake_logits.push_back(disc.forward(ref[b], ag::detach(fake[b])).logit);
            }
            auto loss = discriminator_loss(real_logits, fake_logits);
            const double value = loss->value.data[0];
            if (!std::isfinite(value))
                return value;
            ag::backward(loss);
            opt.step(disc.params());
            disc.params().zero_grad();
            return value;
        };
        m.d_target_loss = update(state.d_target, state.opt_d_target, tgt, ws);
        detail::require_finite(m.d_target_loss, "target discriminator loss", state, m);
        if (observe)
            observe("d_target", state);
        m.d_source_loss = update(state.d_source, state.opt_d_source, src, wt);
        detail::require_finite(m.d_source_loss, "source discriminator loss", state, m);
        if (observe)
            observe("d_source", state);
    }
    state.d_target.params().set_trainable(false);
    state.d_source.params().set_trainable(false);

    LossConfig loss_cfg = cfg.loss;
    if (!adversarial)
        loss_cfg.lambda_adv = 0.0;

    std::vector<ag::Var<float>> totals;
    for (std::size_t b = 0; b < B; ++b) {
        GeneratorLossInputs<float> in{src[b], tgt[b], flows[b].forward, flows[b].backward, ws[b], wt[b], nullptr,
                                      nullptr};
        if (adversarial) {
            in.d_target_fake_logit = state.d_target.forward(tgt[b], ws[b]).logit;
            in.d_source_fake_logit = state.d_source.forward(src[b], wt[b]).logit;
        }
        auto l = generator_loss(in, loss_cfg);
        m.similarity += l.similarity / static_cast<double>(B);
        m.cycle += l.cycle / static_cast<double>(B);
        m.adversarial += l.adversarial / static_cast<double>(B);
        totals.push_back(l.total);
    }
    auto total = ag::weighted_sum(totals, std::vector<float>(B, 1.0f / static_cast<float>(B)));
    m.total = total->value.data[0];
    detail::require_finite(m.total, "generator loss", state, m);

    ag::backward(total);
    m.generator_grad_norm = state.opt_generator.step(gen.params());
    gen.params().zero_grad();
    if (observe)
        observe("generator", state);
    state.d_target.params().set_trainable(true);
    state.d_source.params().set_trainable(true);

    ++state.iteration;
    m.iteration = state.iteration;
    m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return m;
}

/// Source of training patches grouped by ordered volume pair.
class PatchProvider {
public:
    virtual ~PatchProvider() = default;
    virtual std::size_t pair_count() const = 0;
    virtual std::size_t patch_count(std::size_t pair) = 0;
    virtual PatchPair patch(std::size_t pair, std::size_t index) = 0;
};

/// All ordered pairs (i, j), i != j, of in-memory volumes. Patch windows for
/// a pair are drawn by the sampler on first use, with a seed derived from the
/// pair index.
class VolumePairProvider : public PatchProvider {
public:
    VolumePairProvider(std::vector<Volume> volumes, SamplerConfig sampler, int patches_per_pair)
        : volumes_(std::move(volumes)), sampler_(sampler), per_pair_(patches_per_pair)
    {
        if (volumes_.size() < 2)
            throw DataError("training needs at least two volumes, got " + std::to_string(volumes_.size()));
        for (const auto& v : volumes_)
            require_same_dims(volumes_.front().dims, v.dims, "training volumes");
        for (std::size_t i = 0; i < volumes_.size(); ++i)
            for (std::size_t j = 0; j < volumes_.size(); ++j)
                if (i != j)
                    pairs_.emplace_back(i, j);
    }

    std::size_t pair_count() const override { return pairs_.size(); }
    std::size_t patch_count(std::size_t) override { return static_cast<std::size_t>(per_pair_); }

    PatchPair patch(std::size_t pair, std::size_t index) override
    {
        const auto& specs = windows(pair);
        const auto& [si, ti] = pairs_.at(pair);
        const auto& spec = specs.at(index);
        return {spec, extract_patch(volumes_[si], spec), extract_patch(volumes_[ti], spec)};
    }

    const std::vector<PatchSpec>& windows(std::size_t pair)
    {
        auto it = cache_.find(pair);
        if (it == cache_.end()) {
            SamplerConfig sc = sampler_;
            sc.seed = derive_seed(sampler_.seed, pair);
            const auto& [si, ti] = pairs_.at(pair);
            it = cache_.emplace(pair, sample_patches(volumes_[si], volumes_[ti], per_pair_, sc)).first;
        }
        return it->second;
    }

    std::pair<std::size_t, std::size_t> ordered_pair(std::size_t pair) const { return pairs_.at(pair); }

private:
    std::vector<Volume> volumes_;
    SamplerConfig sampler_;
    int per_pair_;
    std::vector<std::pair<std::size_t, std::size_t>> pairs_;
    std::map<std::size_t, std::vector<PatchSpec>> cache_;
};

/// Which (pair, patch) entries make up the batch of iteration t. A pure
/// function of (t, config, provider sizes): pairs are visited in order, each
/// for ceil(patches / batch) steps, and patch order within a visit is a
/// seeded permutation.
inline std::vector<std::pair<std::size_t, std::size_t>> batch_indices(PatchProvider& provider, std::int64_t t,
                                                                      const TrainConfig& cfg)
{
    const std::size_t pairs = provider.pair_count();
    if (pairs == 0)
        throw DataError("provider has no pairs");
    const auto B = static_cast<std::size_t>(cfg.batch_size);
    // Visit length is set by the first pair so the schedule is uniform.
    const std::size_t per_visit = (provider.patch_count(0) + B - 1) / B;
    const auto ut = static_cast<std::uint64_t>(t);
    const std::uint64_t visit = ut / per_visit;
    const std::size_t pair = visit % pairs;
    const std::uint64_t within = ut % per_visit;
    const std::size_t count = provider.patch_count(pair);

    std::vector<std::size_t> perm(count);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, 0x7065726d0000ull + visit));
    for (std::size_t i = count; i > 1; --i)
        std::swap(perm[i - 1], perm[rng.below(i)]);

    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t b = 0; b < B; ++b)
        out.emplace_back(pair, perm[(within * B + b) % count]);
    return out;
}

inline std::vector<PatchPair> make_batch(PatchProvider& provider, std::int64_t t, const TrainConfig& cfg)
{
    std::vector<PatchPair> batch;
    for (const auto& [pair, idx] : batch_indices(provider, t, cfg))
        batch.push_back(provider.patch(pair, idx));
    return batch;
}

} // namespace invgan
