#include "support.hpp"

using namespace invgan;
using test::constant_field;

namespace {

ag::Var<double> field_var(const DisplacementField& f, bool grad)
{
    Tensor<double> t({3, f.dims.nz, f.dims.ny, f.dims.nx});
    const std::size_t n = f.dims.count();
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < n; ++i)
            t.data[c * n + i] = f.u[c][i];
    return grad ? ag::leaf(std::move(t)) : ag::constant(std::move(t));
}

DisplacementField smooth_field(Dims d, double amplitude, std::uint64_t seed)
{
    SynthConfig c;
    c.dims = d;
    c.field_amplitude = amplitude;
    c.field_smoothness = 4.0;
    c.seed = seed;
    return make_smooth_field(c);
}

} // namespace

TEST(Warp, SampleAtVoxelCenterIsExact)
{
    const auto v = test::random_volume({5, 4, 3}, 1);
    for (int k = 0; k < 3; ++k)
        for (int j = 0; j < 4; ++j)
            for (int i = 0; i < 5; ++i)
                EXPECT_EQ(trilinear_sample(v, {double(i), double(j), double(k)}), v(i, j, k));
}

TEST(Warp, SampleMidpointInterpolates)
{
    Volume v({2, 1, 1});
    v.voxels = {0.0f, 1.0f};
    EXPECT_DOUBLE_EQ(trilinear_sample(v, {0.5, 0, 0}), 0.5);
    EXPECT_DOUBLE_EQ(trilinear_sample(v, {0.25, 0, 0}), 0.25);
}

TEST(Warp, SampleFarOutsideIsZero)
{
    const Volume v({4, 4, 4}, {}, 1.0f);
    EXPECT_EQ(trilinear_sample(v, {-5, -5, -5}), 0.0);
    EXPECT_EQ(trilinear_sample(v, {4, 1, 1}), 0.0);
    // half a voxel past the edge blends with the zero padding
    EXPECT_DOUBLE_EQ(trilinear_sample(v, {3.5, 1, 1}), 0.5);
    EXPECT_DOUBLE_EQ(trilinear_sample(v, {-0.5, 1, 1}), 0.5);
}

TEST(Warp, ZeroFieldIsBitIdentical)
{
    const auto v = test::random_volume({7, 6, 5}, 2);
    EXPECT_EQ(warp_volume(v, DisplacementField(v.dims)).voxels, v.voxels);
}

TEST(Warp, UnitShiftMatchesArrayShift)
{
    const auto v = test::random_volume({8, 7, 6}, 3);
    const auto out = warp_volume(v, constant_field(v.dims, 1, 0, 0));
    for (int k = 0; k < 6; ++k)
        for (int j = 0; j < 7; ++j) {
            for (int i = 0; i < 7; ++i)
                EXPECT_EQ(out(i, j, k), v(i + 1, j, k));
            EXPECT_EQ(out(7, j, k), 0.0f);
        }
}

TEST(Warp, IntegerShiftsOnEveryAxis)
{
    const auto v = test::random_volume({9, 8, 7}, 4);
    const auto out = warp_volume(v, constant_field(v.dims, -2, 1, 3));
    for (int k = 0; k + 3 < 7; ++k)
        for (int j = 0; j + 1 < 8; ++j)
            for (int i = 2; i < 9; ++i)
                EXPECT_EQ(out(i, j, k), v(i - 2, j + 1, k + 3));
}

TEST(Warp, HalfShiftOnRampIsAnalytic)
{
    const auto v = test::ramp_x({10, 4, 4}, 0.1f, 0.05f);
    const auto out = warp_volume(v, constant_field(v.dims, 0.5f, 0, 0));
    for (int k = 0; k < 4; ++k)
        for (int j = 0; j < 4; ++j)
            for (int i = 0; i < 9; ++i)
                EXPECT_NEAR(out(i, j, k), 0.05 + 0.1 * (i + 0.5), 1e-6);
}

TEST(Warp, DimsMismatchRejected)
{
    EXPECT_THROW(warp_volume(Volume({4, 4, 4}), DisplacementField({4, 4, 5})), DataError);
    EXPECT_THROW(compose_fields(DisplacementField({4, 4, 4}), DisplacementField({4, 4, 5})), DataError);
}

TEST(Warp, ComposeWithZeroIsExact)
{
    const auto phi = smooth_field({12, 12, 12}, 2.0, 5);
    const DisplacementField zero(phi.dims);
    const auto a = compose_fields(phi, zero), b = compose_fields(zero, phi);
    for (int c = 0; c < 3; ++c) {
        EXPECT_EQ(a.u[c], phi.u[c]);
        EXPECT_EQ(b.u[c], phi.u[c]);
    }
}

TEST(Warp, ComposeConstantsAdds)
{
    const Dims d{10, 10, 10};
    const auto c = compose_fields(constant_field(d, 1.0f, -0.5f, 0.25f), constant_field(d, 0.5f, 2.0f, -1.0f));
    for (int k = 2; k < 7; ++k)
        for (int j = 2; j < 7; ++j)
            for (int i = 2; i < 7; ++i) {
                const auto u = c.at(d.index(i, j, k));
                EXPECT_NEAR(u[0], 1.5, 1e-6);
                EXPECT_NEAR(u[1], 1.5, 1e-6);
                EXPECT_NEAR(u[2], -0.75, 1e-6);
            }
}

TEST(Warp, ComposedFieldWarpsLikeSequentialWarps)
{
    const auto v = test::ramp_x({12, 12, 12}, 0.05f);
    const Dims d = v.dims;
    const auto outer = constant_field(d, 1.0f, 0, 0), inner = constant_field(d, 2.0f, 0, 0);
    const auto once = warp_volume(v, compose_fields(outer, inner));
    const auto twice = warp_volume(warp_volume(v, outer), inner);
    for (int k = 0; k < 12; ++k)
        for (int j = 0; j < 12; ++j)
            for (int i = 0; i < 9; ++i)
                EXPECT_NEAR(once(i, j, k), twice(i, j, k), 1e-6);
}

TEST(Warp, ComposeIsAssociativeUpToInterpolationError)
{
    const Dims d{24, 24, 24};
    const auto gap = [&](double amplitude) {
        const auto a = smooth_field(d, amplitude, 1), b = smooth_field(d, amplitude, 2), c = smooth_field(d, amplitude, 3);
        const auto left = compose_fields(compose_fields(a, b), c);
        const auto right = compose_fields(a, compose_fields(b, c));
        double worst = 0;
        for (int k = 0; k < 3; ++k)
            for (std::size_t n = 0; n < d.count(); ++n)
                worst = std::max(worst, static_cast<double>(std::abs(left.u[k][n] - right.u[k][n])));
        return worst;
    };
    const double big = gap(2.0), small = gap(0.5);
    EXPECT_LT(big, 0.15);
    // second order in the displacement scale
    EXPECT_LT(small, big / 8);
}

TEST(Warp, LandmarksZeroField)
{
    LandmarkSet s;
    s.points = {{"a", 1.5, 2.25, 3}, {"b", 0, 0, 0}};
    const auto out = warp_landmarks(s, DisplacementField({8, 8, 8}));
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(out.points[i].x, s.points[i].x);
        EXPECT_EQ(out.points[i].y, s.points[i].y);
        EXPECT_EQ(out.points[i].z, s.points[i].z);
        EXPECT_FALSE(out.points[i].outside);
    }
}

TEST(Warp, LandmarksConstantTranslation)
{
    LandmarkSet s;
    s.points = {{"a", 1.5, 2.25, 3}, {"b", 6, 0.5, 7}};
    const auto out = warp_landmarks(s, constant_field({8, 8, 8}, 1, 2, 3));
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_NEAR(out.points[i].x, s.points[i].x + 1, 1e-6);
        EXPECT_NEAR(out.points[i].y, s.points[i].y + 2, 1e-6);
        EXPECT_NEAR(out.points[i].z, s.points[i].z + 3, 1e-6);
    }
}

TEST(Warp, LandmarkUnderLinearFieldMatchesClosedForm)
{
    // u(x,y,z) = (0.1x + 0.2y, -0.05z, 0.3) is reproduced exactly by trilinear sampling.
    const Dims d{10, 10, 10};
    DisplacementField f(d);
    for (int k = 0; k < 10; ++k)
        for (int j = 0; j < 10; ++j)
            for (int i = 0; i < 10; ++i)
                f.set(d.index(i, j, k), {0.1f * i + 0.2f * j, -0.05f * k, 0.3f});
    LandmarkSet s;
    s.points = {{"p", 3.3, 4.7, 5.55}};
    const auto p = warp_landmarks(s, f).points[0];
    EXPECT_NEAR(p.x, 3.3 + 0.1 * 3.3 + 0.2 * 4.7, 1e-5);
    EXPECT_NEAR(p.y, 4.7 - 0.05 * 5.55, 1e-5);
    EXPECT_NEAR(p.z, 5.55 + 0.3, 1e-5);
}

TEST(Warp, NearestLandmarkModeRoundsSamplePosition)
{
    const Dims d{6, 6, 6};
    DisplacementField f(d);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j)
            for (int k = 0; k < 6; ++k)
                f.set(d.index(i, j, k), {static_cast<float>(i), 0, 0});
    LandmarkSet s;
    s.points = {{"p", 2.4, 1, 1}};
    EXPECT_NEAR(warp_landmarks(s, f, LandmarkSampling::nearest).points[0].x, 2.4 + 2, 1e-9);
    EXPECT_NEAR(warp_landmarks(s, f, LandmarkSampling::trilinear).points[0].x, 2.4 + 2.4, 1e-6);
}

TEST(Warp, LandmarkOutsideIsFlagged)
{
    LandmarkSet s;
    s.points = {{"p", 9.5, 1, 1}};
    EXPECT_TRUE(warp_landmarks(s, DisplacementField({8, 8, 8})).points[0].outside);
}

TEST(Warp, DifferentiableWarpMatchesWarpVolume)
{
    const auto v = test::random_volume({7, 6, 5}, 6);
    auto f = smooth_field({8, 8, 8}, 1.5, 7);
    DisplacementField g(v.dims);
    for (int k = 0; k < 5; ++k)
        for (int j = 0; j < 6; ++j)
            for (int i = 0; i < 7; ++i)
                g.set(v.dims.index(i, j, k), f.at(f.dims.index(i, j, k)));
    for (int c = 0; c < 3; ++c)
        for (auto& x : g.u[c])
            x += 0.3f;
    const auto ref = warp_volume(v, g);
    const auto out = ag::warp(to_var<double>(v), field_var(g, false));
    for (std::size_t n = 0; n < v.size(); ++n)
        EXPECT_NEAR(out->value.data[n], ref.voxels[n], 1e-6);
}

TEST(Warp, GradientMatchesFiniteDifferences)
{
    // mean squared warp output, gradients w.r.t. image and flow
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        auto img = ag::leaf(test::random_tensor<double>({1, 6, 6, 6}, seed, 0, 1));
        auto flow = ag::leaf(test::random_tensor<double>({3, 6, 6, 6}, seed + 10, -1.7, 1.7));
        const auto r = test::check_gradients({img, flow}, [](const auto& l) {
            auto w = ag::warp(l[0], l[1]);
            return ag::mean(ag::mul(w, w));
        }, 200);
        EXPECT_LT(r.worst, 1e-3) << "seed " << seed;
    }
}
