// Acceptance suite: one PASS/FAIL line per criterion. Optional arguments
// select criteria by number, e.g. `invgan_acceptance 1 3 8`.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"

using namespace invgan;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what)
    {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

DisplacementField shift(Dims d, float ux, float uy, float uz)
{
    return test::constant_field(d, ux, uy, uz);
}

// 1 -------------------------------------------------------------------------
void warp_oracle(Outcome& o)
{
    const Dims d{12, 11, 10};
    const auto v = test::random_volume(d, 1);
    o.require(warp_volume(v, DisplacementField(d)).voxels == v.voxels, "zero field not bit-identical");

    std::size_t mismatches = 0;
    for (const auto& s : std::vector<std::array<int, 3>>{{1, 0, 0}, {0, -2, 0}, {0, 0, 3}, {-1, 2, -3}}) {
        const auto out = warp_volume(v, shift(d, float(s[0]), float(s[1]), float(s[2])));
        for (int k = 0; k < d.nz; ++k)
            for (int j = 0; j < d.ny; ++j)
                for (int i = 0; i < d.nx; ++i) {
                    const int x = i + s[0], y = j + s[1], z = k + s[2];
                    if (x < 0 || y < 0 || z < 0 || x >= d.nx || y >= d.ny || z >= d.nz)
                        continue;
                    mismatches += out(i, j, k) != v(x, y, z);
                }
    }
    o.require(mismatches == 0, "integer shift differs from array shift on the interior");

    double worst = 0;
    const auto ramp = test::ramp_x({16, 5, 5}, 0.05f, 0.1f);
    for (float frac : {0.25f, 0.5f, 0.75f}) {
        const auto out = warp_volume(ramp, shift(ramp.dims, frac, 0, 0));
        for (int k = 0; k < 5; ++k)
            for (int j = 0; j < 5; ++j)
                for (int i = 0; i + 1 < 16; ++i)
                    worst = std::max(worst, std::abs(out(i, j, k) - (0.1 + 0.05 * (i + double(frac)))));
    }
    o.require(worst <= 1e-6, "fractional ramp shift");
    o.detail << "integer mismatches " << mismatches << ", ramp error " << worst;
}

// 2 -------------------------------------------------------------------------
ag::Var<double> leaf(std::vector<int> shape, std::uint64_t seed, double lo, double hi)
{
    return ag::leaf(test::random_tensor<double>(std::move(shape), seed, lo, hi));
}

void gradient_suite(Outcome& o)
{
    double worst_all = 0;
    auto check = [&](const std::string& name, double worst) {
        worst_all = std::max(worst_all, worst);
        o.require(worst < 1e-3, name);
    };
    for (int n : {6, 16}) {
        const std::size_t per = n == 6 ? 120 : 40;
        const std::string tag = " " + std::to_string(n) + "^3";
        {
            auto img = leaf({1, n, n, n}, 1, 0, 1), flow = leaf({3, n, n, n}, 2, -1.7, 1.7);
            check("warp" + tag, test::check_gradients({img, flow}, [](const auto& l) {
                auto w = ag::warp(l[0], l[1]);
                return ag::mean(ag::mul(w, w));
            }, per).worst);
        }
        {
            auto a = leaf({1, n, n, n}, 3, 0, 1), b = leaf({1, n, n, n}, 4, 0, 1);
            check("ncc_local" + tag,
                  test::check_gradients({a, b}, [](const auto& l) { return ag::ncc(l[0], l[1], 9, 1e-5); }, per).worst);
        }
        {
            auto s = leaf({1, n, n, n}, 5, 0, 1), t = leaf({1, n, n, n}, 6, 0, 1);
            auto fst = leaf({3, n, n, n}, 7, -1.3, 1.3), fts = leaf({3, n, n, n}, 8, -1.3, 1.3);
            check("cycle_loss" + tag, test::check_gradients({s, t, fst, fts}, [](const auto& l) {
                return cycle_loss(l[0], l[1], l[2], l[3]);
            }, per).worst);

            auto zs = ag::leaf(Tensor<double>({1}, 0.4)), zt = ag::leaf(Tensor<double>({1}, -1.1));
            LossConfig c;
            c.lambda_adv = 0.1;
            check("generator_loss" + tag, test::check_gradients({s, t, fst, fts, zs, zt}, [&](const auto& l) {
                return generator_loss<double>({l[0], l[1], l[2], l[3], nullptr, nullptr, l[4], l[5]}, c).total;
            }, per).worst);
        }
    }
    for (double z : {-25.0, -3.0, 0.0, 0.7, 30.0})
        for (double y : {0.0, 1.0}) {
            auto l = ag::leaf(Tensor<double>({1}, z));
            check("bce_with_logits",
                  test::check_gradients({l}, [y](const auto& v) { return ag::bce_with_logits(v[0], y); }, 1, 1e-5)
                      .worst);
        }
    o.detail << "worst relative error " << worst_all;
}

// 3 -------------------------------------------------------------------------
void sampler_acceptance(Outcome& o)
{
    constexpr int draws = 100000;
    struct Case {
        float mu;
        double expected;
    };
    const Case cases[] = {{0.05f, 0.0}, {0.2f, 1.0}, {0.4f, 10.0 * std::exp(-2.64)}};
    for (const auto& c : cases) {
        const Volume v({24, 24, 24}, {}, c.mu);
        SamplerConfig cfg;
        cfg.patch_size = 8;
        cfg.seed = 17;
        PatchSampler sampler(v, v, cfg);
        int accepted = 0;
        for (int i = 0; i < draws; ++i)
            accepted += sampler.draw().accepted;
        const double rate = double(accepted) / draws;
        const double sigma = std::sqrt(c.expected * (1 - c.expected) / draws);
        const bool ok = sigma == 0 ? rate == c.expected : std::abs(rate - c.expected) <= 3 * sigma;
        o.require(ok, "mu " + std::to_string(c.mu));
        o.detail << "mu " << c.mu << ": " << rate << " (expected " << c.expected << ")  ";
    }
}

// 4 -------------------------------------------------------------------------
void shape_laws(Outcome& o)
{
    for (int P : {16, 32, 64}) {
        ModelConfig mc;
        mc.patch_size = P;
        mc.base_channels = 6;
        mc.fine_channels = 4;
        Generator<float> g(mc);
        for (auto& p : g.params().items())
            p.var->requires_grad = false;
        auto in = [P](std::uint64_t seed) { return ag::constant(test::random_tensor<float>({1, P, P, P}, seed, 0, 1)); };
        const auto f = g.forward(in(1), in(2));
        const std::vector<int> flow{3, P, P, P};
        const std::string tag = "P=" + std::to_string(P);
        o.require(f.forward->shape() == flow && f.backward->shape() == flow, tag + " flow shape");
        o.require(f.trace.encoder_shapes.size() == 4, tag + " encoder depth");
        for (std::size_t s = 0; s < f.trace.encoder_shapes.size(); ++s) {
            const int n = P >> (s + 1);
            o.require(f.trace.encoder_shapes[s] == std::vector<int>{mc.base_channels, n, n, n}, tag + " encoder stage");
        }
        if (P == 64)
            o.require(f.trace.encoder_shapes.back() == std::vector<int>{mc.base_channels, 4, 4, 4}, "deepest 4^3");

        Discriminator<float> d(mc, kTargetDiscriminatorStream);
        const auto out = d.forward(in(3), in(4));
        o.require(out.logit->size() == 1, tag + " single logit");
        std::vector<int> expected;
        for (int n = P, s = 0; s < 6; ++s)
            expected.push_back(n = (n + 1) / 2);
        o.require(out.trace.spatial_sizes == expected, tag + " discriminator sizes");
        if (P == 64)
            o.require(out.trace.spatial_sizes == std::vector<int>{32, 16, 8, 4, 2, 1}, "64 -> 32..1");
    }
    o.detail << "P in {16, 32, 64}";
}

// 5 -------------------------------------------------------------------------
PatchFlows constant_flows(int P, float fwd, float bwd)
{
    return {Tensor<float>({3, P, P, P}, fwd), Tensor<float>({3, P, P, P}, bwd)};
}

void stitching(Outcome& o)
{
    double worst = 0;
    for (const auto& [d, P, O] : std::vector<std::tuple<Dims, int, int>>{
             {{64, 64, 64}, 32, 8}, {{70, 50, 33}, 16, 4}, {{100, 40, 40}, 32, 12}, {{37, 37, 37}, 16, 15},
             {{160, 64, 64}, 64, 16}})
        for (double w : accumulated_weights(plan_tiling(d, P, O)))
            worst = std::max(worst, std::abs(w - 1.0));
    o.require(worst <= 1e-6, "partition of unity");

    const Dims d{70, 50, 40};
    const auto s = test::random_volume(d, 1), t = test::random_volume(d, 2);
    const auto f = predict_full_field([](const Volume&, const Volume&, std::size_t) { return constant_flows(16, 0.37f, -1.25f); },
                                      s, t, plan_tiling(d, 16, 5));
    bool constant = true;
    for (int c = 0; c < 3; ++c) {
        for (float v : f.forward.u[c])
            constant &= v == 0.37f;
        for (float v : f.backward.u[c])
            constant &= v == -1.25f;
    }
    o.require(constant, "constant stub");

    const Dims d2{48, 32, 32};
    const auto v = test::random_volume(d2, 5);
    const auto plan = plan_tiling(d2, 32, 16);
    const FlowPredictor stub = [](const Volume&, const Volume&, std::size_t tile) {
        return constant_flows(32, tile == 0 ? 0.0f : 1.0f, 0.0f);
    };
    const double blended = seam_score(predict_full_field(stub, v, v, plan).forward, plan);
    const double hard = seam_score(predict_full_field(stub, v, v, plan, BlendMode::overwrite).forward, plan);
    o.require(blended < hard, "blended seam below concatenation");
    o.detail << "unity deviation " << worst << ", seam blended " << blended << " vs concatenated " << hard;
}

// 6 -------------------------------------------------------------------------
SyntheticPair small_pair()
{
    SynthConfig c;
    c.dims = {32, 32, 32};
    c.blob_count = 600;
    c.seed = 1;
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
    c.patches_per_pair = 8;
    c.iterations = 100;
    c.lr_generator = c.lr_discriminator = 1e-3;
    c.seed = 11;
    return c;
}

std::array<std::uint64_t, 3> hashes(const TrainState& s)
{
    return {s.generator.params().hash(), s.d_target.params().hash(), s.d_source.params().hash()};
}

void adversary_switch(Outcome& o)
{
    const auto p = small_pair();
    std::vector<std::uint64_t> trajectory[2];
    for (int run = 0; run < 2; ++run) {
        auto c = tiny_config();
        c.adversarial_enabled = run == 1;
        c.loss.lambda_adv = run == 1 ? 0.0 : 0.1;
        auto s = TrainState::create(c);
        const auto before = hashes(s);
        VolumePairProvider prov({p.source, p.target}, s.config.sampler, s.config.patches_per_pair);
        for (int i = 0; i < 100; ++i) {
            train_step(s, make_batch(prov, s.iteration, s.config));
            trajectory[run].push_back(s.generator.params().hash());
        }
        if (run == 0) {
            const auto after = hashes(s);
            o.require(after[1] == before[1] && after[2] == before[2], "discriminators changed");
        }
    }
    o.require(trajectory[0] == trajectory[1], "generator trajectory differs from lambda = 0");
    o.detail << "100 steps, generator hash " << std::hex << trajectory[0].back() << std::dec;
}

// 7 -------------------------------------------------------------------------
void desk_scale(Outcome& o)
{
    SynthConfig sc;
    sc.field_amplitude = 2.0;
    const auto pair = make_pair(sc);
    const double identity_error =
        landmark_report(pair.landmarks_source, pair.landmarks_target, DisplacementField(sc.dims), pair.source.spacing).mean;
    for (double lambda : {0.0, 0.1}) {
        TrainConfig c;
        c.model.patch_size = 32;
        c.model.base_channels = 8;
        c.sampler.patch_size = 32;
        c.iterations = 1500;
        c.batch_size = 4;
        c.patches_per_pair = 500;
        c.lr_generator = 3e-3;
        c.lr_discriminator = 1e-4;
        c.loss.lambda_adv = lambda;
        c.adversarial_enabled = lambda > 0;
        c.seed = 7;
        auto s = TrainState::create(c);
        VolumePairProvider prov({pair.source, pair.target}, s.config.sampler, s.config.patches_per_pair);
        for (int i = 0; i < c.iterations; ++i)
            train_step(s, make_batch(prov, s.iteration, s.config));
        const auto r = register_volumes(s.generator, pair.source, pair.target, plan_tiling(sc.dims, 32, 8));
        const double error =
            landmark_report(pair.landmarks_source, pair.landmarks_target, r.flow_forward, pair.source.spacing).mean;
        const double gain = r.metrics.cc_after - r.metrics.cc_before;
        const double drop = 1.0 - error / identity_error;
        o.require(gain >= 0.05, "cc gain at lambda " + std::to_string(lambda));
        o.require(drop >= 0.30, "landmark drop at lambda " + std::to_string(lambda));
        o.detail << "lambda " << lambda << ": cc " << r.metrics.cc_before << " -> " << r.metrics.cc_after
                 << ", landmarks " << identity_error << " -> " << error << " mm  ";
    }
}

// 8 -------------------------------------------------------------------------
void metric_identities(Outcome& o)
{
    const auto x = test::random_volume({20, 18, 16}, 9);
    const double cc = global_cc(x, x);
    const double gap = std::abs(mutual_information(x, x) - entropy(x));
    o.require(std::abs(cc - 1.0) <= 1e-12, "cc(x, x)");
    o.require(gap <= 1e-9, "MI(x, x) = H(x)");

    Volume a({5, 1, 1}), b({5, 1, 1});
    a.voxels = {0.3f, 1.0f, 0.0f, 0.75f, 0.5f};
    b.voxels = {0.3f, 0.0f, 1.0f, 0.25f, 1.0f};
    const auto diff = difference_image(a, b);
    o.require(diff.voxels == std::vector<std::uint8_t>{255, 0, 0, 128, 128}, "difference image mapping");
    o.detail << "cc " << cc << ", |MI - H| " << gap;
}

// 9 -------------------------------------------------------------------------
void reproducibility(Outcome& o)
{
    const auto p = small_pair();
    auto c = tiny_config();
    c.iterations = 15;
    std::vector<std::array<std::uint64_t, 3>> runs[2];
    for (auto& out : runs) {
        auto s = TrainState::create(c);
        VolumePairProvider prov({p.source, p.target}, s.config.sampler, s.config.patches_per_pair);
        for (int i = 0; i < c.iterations; ++i) {
            train_step(s, make_batch(prov, s.iteration, s.config));
            out.push_back(hashes(s));
        }
    }
    o.require(runs[0] == runs[1], "fixed-seed runs differ");

    const auto dir = std::filesystem::temp_directory_path() / "invgan_acceptance_resume";
    std::filesystem::create_directories(dir);
    auto part = TrainState::create(c);
    {
        VolumePairProvider prov({p.source, p.target}, part.config.sampler, part.config.patches_per_pair);
        for (int i = 0; i < 5; ++i)
            train_step(part, make_batch(prov, part.iteration, part.config));
    }
    save_checkpoint(part, dir / "part.ckpt");
    auto resumed = load_checkpoint(dir / "part.ckpt");
    std::filesystem::remove_all(dir);
    VolumePairProvider prov({p.source, p.target}, resumed.config.sampler, resumed.config.patches_per_pair);
    bool same = resumed.iteration == 5;
    for (int i = 5; i < c.iterations; ++i) {
        train_step(resumed, make_batch(prov, resumed.iteration, resumed.config));
        same &= hashes(resumed) == runs[0][i];
    }
    o.require(same, "resumed run diverges");
    o.detail << "10 steps after resume match";
}

struct Criterion {
    int id;
    const char* name;
    double budget_seconds; // 0: no hard limit
    std::function<void(Outcome&)> run;
};

} // namespace

int main(int argc, char** argv)
{
    set_thread_count(1);
    const std::vector<Criterion> criteria{
        {1, "warp oracle", 10, warp_oracle},
        {2, "gradient suite", 120, gradient_suite},
        {3, "sampler acceptance", 30, sampler_acceptance},
        {4, "shape laws", 60, shape_laws},
        {5, "stitching", 30, stitching},
        {6, "adversary switch", 0, adversary_switch},
        {7, "desk-scale registration", 0, desk_scale},
        {8, "metric identities", 0, metric_identities},
        {9, "reproducibility and resume", 0, reproducibility},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i)
        selected.insert(std::atoi(argv[i]));

    bool all = true;
    for (const auto& c : criteria) {
        if (!selected.empty() && !selected.count(c.id))
            continue;
        Outcome o;
        const auto t0 = Clock::now();
        try {
            c.run(o);
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << " [exception: " << e.what() << "]";
        }
        const double secs = seconds_since(t0);
        if (c.budget_seconds > 0 && secs > c.budget_seconds)
            o.require(false, "over the " + std::to_string(int(c.budget_seconds)) + " s budget");
        all &= o.pass;
        std::printf("%s %d %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, secs, o.detail.str().c_str());
        std::fflush(stdout);
    }
    return all ? 0 : 1;
}
