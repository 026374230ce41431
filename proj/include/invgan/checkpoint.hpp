#pragma once

// Checkpoint container:
//   "IVCK" | uint32 version | uint64 n | n bytes of JSON metadata |
//   float32 blocks (generator, D_T, D_S parameters, then first and second
//   moments of the three optimizers, in parameter order) |
//   uint64 FNV-1a checksum of every preceding byte.
// All integers and floats little-endian.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "invgan/config_json.hpp"
#include "invgan/trainer.hpp"
#include "invgan/volio.hpp"

namespace invgan {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline std::uint64_t fnv1a(const unsigned char* p, std::size_t n)
{
    std::uint64_t h = 1469598103934665603ull;
    for (std::size_t i = 0; i < n; ++i)
        h = (h ^ p[i]) * 1099511628211ull;
    return h;
}

inline void put_u64(std::vector<unsigned char>& out, std::uint64_t v)
{
    for (int b = 0; b < 8; ++b)
        out.push_back(static_cast<unsigned char>((v >> (8 * b)) & 0xffu));
}

inline std::uint64_t get_u64(const unsigned char* p)
{
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b)
        v |= static_cast<std::uint64_t>(p[b]) << (8 * b);
    return v;
}

template <class Fn>
void for_each_block(TrainState& s, Fn&& fn)
{
    ParamSet<float>* sets[3] = {&s.generator.params(), &s.d_target.params(), &s.d_source.params()};
    for (auto* ps : sets)
        for (auto& p : ps->items())
            fn(p.var->value.data);
    Adam<float>* opts[3] = {&s.opt_generator, &s.opt_d_target, &s.opt_d_source};
    for (auto* o : opts) {
        for (auto& m : o->first_moments())
            fn(m);
        for (auto& v : o->second_moments())
            fn(v);
    }
}

} // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const TrainState& state)
{
    auto& s = const_cast<TrainState&>(state);
    nlohmann::json meta;
    meta["config"] = s.config;
    meta["iteration"] = s.iteration;
    meta["optimizer_steps"] = {s.opt_generator.steps(), s.opt_d_target.steps(), s.opt_d_source.steps()};
    nlohmann::json shapes = nlohmann::json::array();
    for (const auto* ps : {&s.generator.params(), &s.d_target.params(), &s.d_source.params()})
        for (const auto& p : ps->items())
            shapes.push_back({{"name", p.name}, {"shape", p.var->shape()}});
    meta["parameters"] = shapes;
    const std::string text = meta.dump();

    std::vector<unsigned char> out{'I', 'V', 'C', 'K'};
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u64(out, text.size());
    out.insert(out.end(), text.begin(), text.end());
    detail::for_each_block(s, [&](const std::vector<float>& block) {
        for (float v : block)
            detail::put_f32(out, v);
    });
    detail::put_u64(out, detail::fnv1a(out.data(), out.size()));
    return out;
}

inline TrainState decode_checkpoint(const std::vector<unsigned char>& bytes)
{
    if (bytes.size() < 24 || bytes[0] != 'I' || bytes[1] != 'V' || bytes[2] != 'C' || bytes[3] != 'K')
        throw FormatError("not a checkpoint (bad magic)", 0);
    const std::uint32_t version = detail::get_u32(&bytes[4]);
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint version " + std::to_string(version) + ", expected " +
                              std::to_string(kCheckpointVersion),
                          4);
    const std::size_t body = bytes.size() - 8;
    if (detail::get_u64(&bytes[body]) != detail::fnv1a(bytes.data(), body))
        throw FormatError("checkpoint checksum mismatch (corrupted file)", static_cast<std::int64_t>(body));
    const std::uint64_t n = detail::get_u64(&bytes[8]);
    if (16 + n > body)
        throw FormatError("truncated checkpoint metadata", 8);

    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<long>(n));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint metadata: ") + e.what(), 16);
    }

    TrainState s = TrainState::create(meta.at("config").get<TrainConfig>());
    s.iteration = meta.at("iteration").get<std::int64_t>();
    const auto steps = meta.at("optimizer_steps").get<std::vector<std::int64_t>>();
    s.opt_generator.set_steps(steps.at(0));
    s.opt_d_target.set_steps(steps.at(1));
    s.opt_d_source.set_steps(steps.at(2));

    std::size_t pos = 16 + n;
    detail::for_each_block(s, [&](std::vector<float>& block) {
        if (pos + 4 * block.size() > body)
            throw FormatError("truncated checkpoint payload", static_cast<std::int64_t>(pos));
        for (auto& v : block) {
            v = detail::get_f32(&bytes[pos]);
            pos += 4;
        }
    });
    if (pos != body)
        throw FormatError("checkpoint payload size mismatch", static_cast<std::int64_t>(pos));
    return s;
}

inline void save_checkpoint(const TrainState& state, const std::filesystem::path& path)
{
    // Written under a temporary name, then renamed into place.
    auto tmp = path;
    tmp += ".tmp";
    detail::spit(tmp, encode_checkpoint(state));
    std::filesystem::rename(tmp, path);
}

inline TrainState load_checkpoint(const std::filesystem::path& path)
{
    return decode_checkpoint(detail::slurp(path));
}

struct TrainOptions {
    std::filesystem::path checkpoint_path = "invgan.ckpt";
    std::function<void(const StepMetrics&)> on_step;
};

/// Runs state.iteration .. config.iterations, checkpointing every
/// `checkpoint_every` iterations and at the end. Returns the checkpoint path.
inline std::filesystem::path train(TrainState& state, PatchProvider& provider, const TrainOptions& opt = {})
{
    const auto& cfg = state.config;
    while (state.iteration < cfg.iterations) {
        const auto batch = make_batch(provider, state.iteration, cfg);
        const auto m = train_step(state, batch);
        if (opt.on_step)
            opt.on_step(m);
        if (cfg.checkpoint_every > 0 && state.iteration % cfg.checkpoint_every == 0 &&
            state.iteration < cfg.iterations)
            save_checkpoint(state, opt.checkpoint_path);
    }
    save_checkpoint(state, opt.checkpoint_path);
    return opt.checkpoint_path;
}

/// Fresh run over all ordered pairs of `volumes`.
inline std::filesystem::path train(const TrainConfig& config, std::vector<Volume> volumes,
                                   const TrainOptions& opt = {})
{
    TrainState state = TrainState::create(config);
    VolumePairProvider provider(std::move(volumes), state.config.sampler, state.config.patches_per_pair);
    return train(state, provider, opt);
}

} // namespace invgan
