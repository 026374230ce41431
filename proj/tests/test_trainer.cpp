#include "support.hpp"

#include <map>

using namespace invgan;

namespace {

SyntheticPair small_pair(std::uint64_t seed = 1)
{
    SynthConfig c;
    c.dims = {32, 32, 32};
    c.blob_count = 600;
    c.seed = seed;
    return make_pair(c);
}

TrainConfig tiny_config()
{
    TrainConfig c;
    c.model.patch_size = 16;
    c.model.base_channels = 4;
    c.model.fine_channels = 4;
    c.sampler.patch_size = 16;
    c.batch_size = 2;
    c.patches_per_pair = 6;
    c.iterations = 4;
    c.lr_generator = c.lr_discriminator = 1e-3;
    c.seed = 11;
    return c;
}

struct Hashes {
    std::uint64_t g, dt, ds;
    friend bool operator==(const Hashes&, const Hashes&) = default;
};

Hashes hashes(const TrainState& s)
{
    return {s.generator.params().hash(), s.d_target.params().hash(), s.d_source.params().hash()};
}

void run(TrainState& s, PatchProvider& p, int steps)
{
    for (int i = 0; i < steps; ++i)
        train_step(s, make_batch(p, s.iteration, s.config));
}

} // namespace

TEST(Trainer, ConfigValidation)
{
    auto c = tiny_config();
    c.iterations = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny_config();
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny_config();
    c.lr_generator = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Trainer, ResolvedConfigSyncsPatchSizeAndSeeds)
{
    auto c = tiny_config();
    c.sampler.patch_size = 64;
    const auto r = c.resolved();
    EXPECT_EQ(r.sampler.patch_size, 16);
    EXPECT_EQ(r.resolved(), r);
}

TEST(Trainer, IdenticalSeedsGiveIdenticalTrajectories)
{
    const auto p = small_pair();
    const int saved = thread_count();
    set_thread_count(1);
    std::vector<Hashes> a, b;
    for (auto* out : {&a, &b}) {
        auto s = TrainState::create(tiny_config());
        VolumePairProvider prov({p.source, p.target}, s.config.sampler, s.config.patches_per_pair);
        for (int i = 0; i < 4; ++i) {
            train_step(s, make_batch(prov, s.iteration, s.config));
            out->push_back(hashes(s));
        }
    }
    set_thread_count(saved);
    EXPECT_EQ(a, b);
    EXPECT_NE(a[0].g, a[1].g);
}

TEST(Trainer, ThreadCountDoesNotChangeTrajectory)
{
    const auto p = small_pair();
    const int saved = thread_count();
    std::vector<Hashes> out;
    for (int threads : {1, 4}) {
        set_thread_count(threads);
        auto s = TrainState::create(tiny_config());
        VolumePairProvider prov({p.source, p.target}, s.config.sampler, s.config.patches_per_pair);
        run(s, prov, 2);
        out.push_back(hashes(s));
    }
    set_thread_count(saved);
    EXPECT_EQ(out[0], out[1]);
}

TEST(Trainer, DisabledAdversaryLeavesDiscriminatorsUntouched)
{
    const auto p = small_pair();
    auto c = tiny_config();
    c.adversarial_enabled = false;
    auto s = TrainState::create(c);
    const auto before = hashes(s);
    VolumePairProvider prov({p.source, p.target}, s.config.sampler, s.config.patches_per_pair);
    run(s, prov, 5);
    const auto after = hashes(s);
    EXPECT_EQ(after.dt, before.dt);
    EXPECT_EQ(after.ds, before.ds);
    EXPECT_NE(after.g, before.g);
    EXPECT_EQ(s.opt_d_target.steps(), 0);
}

TEST(Trainer, DisabledAdversaryEqualsLambdaZero)
{
    const auto p = small_pair();
    std::vector<std::uint64_t> g;
    for (bool enabled : {false, true}) {
        auto c = tiny_config();
        c.adversarial_enabled = enabled;
        c.loss.lambda_adv = enabled ? 0.0 : 0.1;
        auto s = TrainState::create(c);
        VolumePairProvider prov({p.source, p.target}, s.config.sampler, s.config.patches_per_pair);
        run(s, prov, 4);
        g.push_back(s.generator.params().hash());
    }
    EXPECT_EQ(g[0], g[1]);
}

TEST(Trainer, PhasesOnlyTouchTheirOwnNetwork)
{
    const auto p = small_pair();
    auto s = TrainState::create(tiny_config());
    VolumePairProvider prov({p.source, p.target}, s.config.sampler, s.config.patches_per_pair);
    for (int step = 0; step < 3; ++step) {
        Hashes prev = hashes(s);
        std::vector<std::string> phases;
        train_step(s, make_batch(prov, s.iteration, s.config), [&](std::string_view phase, const TrainState& st) {
            const auto now = hashes(st);
            phases.emplace_back(phase);
            if (phase == "d_target") {
                EXPECT_EQ(now.g, prev.g);
                EXPECT_EQ(now.ds, prev.ds);
                EXPECT_NE(now.dt, prev.dt);
            } else if (phase == "d_source") {
                EXPECT_EQ(now.g, prev.g);
                EXPECT_EQ(now.dt, prev.dt);
                EXPECT_NE(now.ds, prev.ds);
            } else {
                EXPECT_EQ(now.dt, prev.dt);
                EXPECT_EQ(now.ds, prev.ds);
                EXPECT_NE(now.g, prev.g);
            }
            prev = now;
        });
        EXPECT_EQ(phases, (std::vector<std::string>{"d_target", "d_source", "generator"}));
    }
}

TEST(Trainer, StepMetricsAreFinite)
{
    const auto p = small_pair();
    auto s = TrainState::create(tiny_config());
    VolumePairProvider prov({p.source, p.target}, s.config.sampler, s.config.patches_per_pair);
    for (int i = 0; i < 10; ++i) {
        const auto m = train_step(s, make_batch(prov, s.iteration, s.config));
        for (double v : {m.similarity, m.cycle, m.adversarial, m.total, m.d_target_loss, m.d_source_loss,
                         m.generator_grad_norm})
            EXPECT_TRUE(std::isfinite(v));
        EXPECT_EQ(m.iteration, i + 1);
        EXPECT_NEAR(m.total, m.similarity + m.cycle + s.config.loss.lambda_adv * m.adversarial, 1e-4);
    }
}

TEST(Trainer, RejectsBadBatches)
{
    auto s = TrainState::create(tiny_config());
    EXPECT_THROW(train_step(s, {}), DataError);
    std::vector<PatchPair> b{{PatchSpec{{0, 0, 0}, 8}, Volume({8, 8, 8}), Volume({8, 8, 8})}};
    EXPECT_THROW(train_step(s, b), ShapeError);
}

TEST(Trainer, ThreeVolumesGiveSixOrderedPairs)
{
    const auto v = small_pair().source;
    VolumePairProvider prov({v, v, v}, tiny_config().resolved().sampler, 4);
    ASSERT_EQ(prov.pair_count(), 6u);
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (std::size_t p = 0; p < 6; ++p) {
        const auto [i, j] = prov.ordered_pair(p);
        EXPECT_NE(i, j);
        seen.insert({i, j});
    }
    EXPECT_EQ(seen.size(), 6u);
    EXPECT_THROW(VolumePairProvider({v}, tiny_config().sampler, 4), DataError);
}

TEST(Trainer, ScheduleVisitsEveryPairAndPatch)
{
    const auto v = small_pair().source;
    auto c = tiny_config().resolved();
    c.patches_per_pair = 5;
    c.batch_size = 2;
    VolumePairProvider prov({v, v, v}, c.sampler, c.patches_per_pair);
    // ceil(5/2) = 3 steps per visit, 6 pairs
    std::map<std::size_t, std::set<std::size_t>> seen;
    for (int t = 0; t < 18; ++t) {
        const auto idx = batch_indices(prov, t, c);
        ASSERT_EQ(idx.size(), 2u);
        EXPECT_EQ(idx[0].first, static_cast<std::size_t>(t / 3));
        for (const auto& [pair, patch] : idx)
            seen[pair].insert(patch);
    }
    ASSERT_EQ(seen.size(), 6u);
    for (const auto& [pair, patches] : seen)
        EXPECT_EQ(patches.size(), 5u);
    // wraps to the first pair
    EXPECT_EQ(batch_indices(prov, 18, c)[0].first, 0u);
    EXPECT_EQ(batch_indices(prov, 7, c), batch_indices(prov, 7, c));
}

TEST(Trainer, ProviderPatchesAreColocated)
{
    const auto p = small_pair();
    const auto c = tiny_config().resolved();
    VolumePairProvider prov({p.source, p.target}, c.sampler, 3);
    const auto pp = prov.patch(0, 1);
    EXPECT_EQ(pp.source.voxels, extract_patch(p.source, pp.spec).voxels);
    EXPECT_EQ(pp.target.voxels, extract_patch(p.target, pp.spec).voxels);
    const auto swapped = prov.patch(1, 1);
    EXPECT_EQ(swapped.source.voxels, extract_patch(p.target, swapped.spec).voxels);
}

TEST(Trainer, OverfitSinglePair)
{
    // dissimilarity (2 + similarity, i.e. the sum of 1 - ncc) halves within 200 steps
    SynthConfig sc;
    sc.dims = {32, 32, 32};
    sc.blob_count = 500;
    sc.field_amplitude = 2.0;
    const auto p = make_pair(sc);
    TrainConfig c;
    c.model.patch_size = 32;
    c.model.base_channels = 8;
    c.sampler.patch_size = 32;
    c.loss.lambda_adv = 0;
    c.adversarial_enabled = false;
    c.lr_generator = 1e-3;
    c.batch_size = 1;
    auto s = TrainState::create(c);
    const PatchSpec whole{{0, 0, 0}, 32};
    const std::vector<PatchPair> batch{{whole, p.source, p.target}};
    const double first = 2 + train_step(s, batch).similarity;
    double last = first;
    for (int i = 1; i < 200; ++i)
        last = 2 + train_step(s, batch).similarity;
    EXPECT_LE(last, 0.5 * first) << "first " << first << " last " << last;
}

TEST(Trainer, CheckpointRoundTripIsBitExact)
{
    test::TempDir dir("ckpt");
    const auto p = small_pair();
    auto s = TrainState::create(tiny_config());
    VolumePairProvider prov({p.source, p.target}, s.config.sampler, s.config.patches_per_pair);
    run(s, prov, 2);
    save_checkpoint(s, dir / "a.ckpt");
    const auto r = load_checkpoint(dir / "a.ckpt");
    EXPECT_EQ(hashes(r), hashes(s));
    EXPECT_EQ(r.iteration, 2);
    EXPECT_EQ(r.config, s.config);
    EXPECT_EQ(r.opt_generator.steps(), s.opt_generator.steps());
    const auto& m1 = s.opt_generator.second_moments();
    const auto& m2 = r.opt_generator.second_moments();
    ASSERT_EQ(m1.size(), m2.size());
    for (std::size_t i = 0; i < m1.size(); ++i)
        EXPECT_EQ(m1[i], m2[i]);
    EXPECT_FALSE(std::filesystem::exists(dir / "a.ckpt.tmp"));
}

TEST(Trainer, CheckpointVersionAndCorruptionDetected)
{
    auto s = TrainState::create(tiny_config());
    auto bytes = encode_checkpoint(s);
    auto wrong = bytes;
    wrong[4] = 9;
    try {
        decode_checkpoint(wrong);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
    }
    auto corrupt = bytes;
    corrupt[corrupt.size() / 2] ^= 0x10;
    EXPECT_THROW(decode_checkpoint(corrupt), FormatError);
    auto magic = bytes;
    magic[0] = 'X';
    EXPECT_THROW(decode_checkpoint(magic), FormatError);
    bytes.resize(bytes.size() - 9);
    EXPECT_THROW(decode_checkpoint(bytes), FormatError);
}

TEST(Trainer, LoadedStateTakesIdenticalStep)
{
    const auto p = small_pair();
    auto s = TrainState::create(tiny_config());
    VolumePairProvider prov({p.source, p.target}, s.config.sampler, s.config.patches_per_pair);
    run(s, prov, 1);
    auto loaded = decode_checkpoint(encode_checkpoint(s));
    const auto batch = make_batch(prov, s.iteration, s.config);
    train_step(s, batch);
    train_step(loaded, batch);
    EXPECT_EQ(hashes(s), hashes(loaded));
}

TEST(Trainer, ResumeMatchesUninterruptedRun)
{
    test::TempDir dir("resume");
    const auto p = small_pair();
    auto c = tiny_config();
    c.iterations = 6;
    c.checkpoint_every = 3;

    auto full = TrainState::create(c);
    VolumePairProvider prov_a({p.source, p.target}, full.config.sampler, full.config.patches_per_pair);
    train(full, prov_a, {dir / "full.ckpt", {}});

    auto part_cfg = c;
    part_cfg.iterations = 3;
    auto part = TrainState::create(part_cfg);
    VolumePairProvider prov_b({p.source, p.target}, part.config.sampler, part.config.patches_per_pair);
    train(part, prov_b, {dir / "part.ckpt", {}});
    auto resumed = load_checkpoint(dir / "part.ckpt");
    EXPECT_EQ(resumed.iteration, 3);
    resumed.config.iterations = 6;
    VolumePairProvider prov_c({p.source, p.target}, resumed.config.sampler, resumed.config.patches_per_pair);
    train(resumed, prov_c, {dir / "resumed.ckpt", {}});
    EXPECT_EQ(hashes(resumed), hashes(full));
    EXPECT_EQ(load_checkpoint(dir / "full.ckpt").iteration, 6);
}

TEST(Trainer, PatchArchiveFeedsTraining)
{
    test::TempDir dir("archive");
    const auto p = small_pair();
    auto c = tiny_config().resolved();
    const auto specs = sample_patches(p.source, p.target, 5, c.sampler);
    write_patch_archive(p.source, p.target, specs, dir / "a.ivp");
    PatchArchive archive(dir / "a.ivp");
    ASSERT_EQ(archive.pair_count(), 1u);
    ASSERT_EQ(archive.patch_count(0), 5u);
    for (std::size_t i = 0; i < 5; ++i) {
        const auto pp = archive.patch(0, i);
        EXPECT_EQ(pp.spec, specs[i]);
        EXPECT_EQ(pp.source.voxels, extract_patch(p.source, specs[i]).voxels);
        EXPECT_EQ(pp.target.voxels, extract_patch(p.target, specs[i]).voxels);
    }
    auto s = TrainState::create(c);
    const auto m = train_step(s, make_batch(archive, 0, s.config));
    EXPECT_TRUE(std::isfinite(m.total));
}

TEST(Trainer, DeskScaleRunImprovesHeldOutNcc)
{
    SynthConfig sc;  // 64^3 defaults
    const auto train_pair = make_pair(sc);
    sc.seed = 2;
    const auto held_out = make_pair(sc);
    TrainConfig c;
    c.model.patch_size = 32;
    c.model.base_channels = 8;
    c.sampler.patch_size = 32;
    c.iterations = 500;
    c.patches_per_pair = 250;
    c.lr_generator = 3e-3;
    c.lr_discriminator = 1e-4;
    c.seed = 3;
    auto s = TrainState::create(c);
    VolumePairProvider prov({train_pair.source, train_pair.target}, s.config.sampler, s.config.patches_per_pair);
    train(s, prov, {std::filesystem::temp_directory_path() / "invgan_desk_scale.ckpt", {}});
    const auto r = register_volumes(s.generator, held_out.source, held_out.target, plan_tiling(sc.dims, 32, 8));
    const double before = ncc_local(held_out.source, held_out.target);
    const double after = ncc_local(r.warped_source, held_out.target);
    EXPECT_GT(after, before);
    std::filesystem::remove(std::filesystem::temp_directory_path() / "invgan_desk_scale.ckpt");
}
