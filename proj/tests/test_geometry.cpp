#include <gtest/gtest.h>

#include "di3cl/geometry.hpp"

using namespace di3cl;

namespace {

ViewParams view(int x, int y, int w, int h, int out, bool flip = false) {
    ViewParams p;
    p.crop = {x, y, w, h};
    p.output_size = out;
    p.hflip = flip;
    return p;
}

void expect_box(const Box& a, const Box& b, double tol = 1e-12) {
    EXPECT_NEAR(a.x, b.x, tol);
    EXPECT_NEAR(a.y, b.y, tol);
    EXPECT_NEAR(a.w, b.w, tol);
    EXPECT_NEAR(a.h, b.h, tol);
}

}  // namespace

TEST(ViewSampling, FullScaleWithoutFlipIsIdentityCrop) {
    AugmentConfig cfg;
    cfg.scale_min = cfg.scale_max = 1.0;
    cfg.ratio_min = cfg.ratio_max = 1.0;
    cfg.hflip_prob = 0.0;
    Rng rng(1);
    const auto p = sample_view_params(rng, cfg, 512, 512);
    EXPECT_EQ(p.crop, (CropRect{0, 0, 512, 512}));
    EXPECT_FALSE(p.hflip);
    EXPECT_EQ(p.output_size, 512);
}

TEST(ViewSampling, DeterministicUnderSeed) {
    AugmentConfig cfg;
    Rng a(42), b(42);
    EXPECT_EQ(sample_view_params(a, cfg, 300, 400), sample_view_params(b, cfg, 300, 400));
}

TEST(ViewSampling, AreaFractionStaysInRangeAndCropInsideImage) {
    AugmentConfig cfg;
    Rng rng(7);
    for (int i = 0; i < 10000; ++i) {
        const auto p = sample_view_params(rng, cfg, 512, 512);
        const double frac = double(p.crop.w) * p.crop.h / (512.0 * 512.0);
        ASSERT_GE(frac, 0.2 - 1e-9);
        ASSERT_LE(frac, 1.0 + 1e-9);
        ASSERT_GE(p.crop.x, 0);
        ASSERT_GE(p.crop.y, 0);
        ASSERT_LE(p.crop.x + p.crop.w, 512);
        ASSERT_LE(p.crop.y + p.crop.h, 512);
    }
}

TEST(ViewSampling, InvalidScaleRangeIsConfigError) {
    AugmentConfig cfg;
    cfg.scale_min = 0.9;
    cfg.scale_max = 0.5;
    Rng rng(0);
    EXPECT_THROW(sample_view_params(rng, cfg, 64, 64), ConfigError);
}

TEST(ApplyView, IdentityAndDoubleFlip) {
    auto sq = make_image<double>(5, 5);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x) sq(0, 0, y, x) = y * 10 + x;
    const auto id = apply_view(sq, view(0, 0, 5, 5, 5));
    EXPECT_EQ(id.storage(), sq.storage());
    const auto once = apply_view(sq, view(0, 0, 5, 5, 5, true));
    EXPECT_EQ(once(0, 0, 2, 0), sq(0, 0, 2, 4));
    const auto twice = apply_view(once, view(0, 0, 5, 5, 5, true));
    EXPECT_EQ(twice.storage(), sq.storage());
}

TEST(ApplyView, RampSubBlock) {
    auto img = make_image<double>(4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) img(0, 0, y, x) = 4 * y + x;
    const auto out = apply_view(img, view(1, 1, 2, 2, 2));
    EXPECT_DOUBLE_EQ(out(0, 0, 0, 0), 5);
    EXPECT_DOUBLE_EQ(out(0, 0, 0, 1), 6);
    EXPECT_DOUBLE_EQ(out(0, 0, 1, 0), 9);
    EXPECT_DOUBLE_EQ(out(0, 0, 1, 1), 10);
}

TEST(ApplyView, CropOutsideImageIsGeometryError) {
    auto img = make_image<double>(4, 4);
    EXPECT_THROW(apply_view(img, view(2, 2, 4, 4, 4)), GeometryError);
}

TEST(Intersection, WorkedExamples) {
    expect_box(*intersection_region(view(0, 0, 100, 100, 10), view(50, 50, 100, 100, 10)), {50, 50, 50, 50});
    EXPECT_FALSE(intersection_region(view(0, 0, 50, 50, 10), view(60, 60, 50, 50, 10)).has_value());
    expect_box(*intersection_region(view(10, 20, 300, 200, 10), view(100, 0, 300, 300, 10)), {100, 20, 210, 200});
}

TEST(Intersection, BelowMinimumSideIsNoOverlap) {
    EXPECT_FALSE(intersection_region(view(0, 0, 100, 100, 10), view(90, 0, 100, 100, 10), 32).has_value());
}

TEST(SampleBoxes, ForcedRegionRepeatsRegion) {
    Rng rng(3);
    const Box region{5, 6, 32, 32};
    const auto boxes = sample_boxes(region, 3, 32, rng);
    ASSERT_EQ(boxes.size(), 3u);
    for (const auto& b : boxes) expect_box(b, region);
}

TEST(SampleBoxes, ContainmentAndSideBounds) {
    Rng rng(11);
    const Box region{0, 0, 256, 256};
    const auto boxes = sample_boxes(region, 8, 32, rng);
    ASSERT_EQ(boxes.size(), 8u);
    for (const auto& b : boxes) {
        EXPECT_GE(b.w, 32);
        EXPECT_GE(b.h, 32);
        EXPECT_GE(b.x, 0);
        EXPECT_GE(b.y, 0);
        EXPECT_LE(b.x + b.w, 256);
        EXPECT_LE(b.y + b.h, 256);
    }
}

TEST(SampleBoxes, DegenerateRegionThrows) {
    Rng rng(0);
    EXPECT_THROW(sample_boxes({0, 0, 10, 40}, 2, 32, rng), GeometryError);
    EXPECT_THROW(sample_boxes({0, 0, 40, 40}, 0, 32, rng), GeometryError);
}

TEST(MapBox, WorkedExamples) {
    const Box b{13, 17, 40, 20};
    expect_box(map_box_to_view(b, view(0, 0, 100, 100, 100)), b);
    expect_box(map_box_to_view({60, 60, 20, 20}, view(50, 50, 100, 100, 100)), {10, 10, 20, 20});
    expect_box(map_box_to_view({0, 0, 10, 10}, view(0, 0, 100, 100, 100, true)), {90, 0, 10, 10});
}

TEST(MapBox, RoundTripWithScalingAndFlip) {
    Rng rng(5);
    for (int i = 0; i < 1000; ++i) {
        const auto p = view(static_cast<int>(uniform_index(rng, 50)), static_cast<int>(uniform_index(rng, 50)),
                            20 + static_cast<int>(uniform_index(rng, 200)), 20 + static_cast<int>(uniform_index(rng, 200)),
                            8 + static_cast<int>(uniform_index(rng, 300)), bernoulli(rng, 0.5));
        const Box b{p.crop.x + uniform(rng, 0.0, 10.0), p.crop.y + uniform(rng, 0.0, 10.0), uniform(rng, 1.0, 10.0), uniform(rng, 1.0, 10.0)};
        expect_box(map_box_to_source(map_box_to_view(b, p), p), b, 1e-9);
    }
}

TEST(FeatureCoords, Division) {
    const Box b{7, 9, 3, 4};
    expect_box(box_to_feature_coords(b, 1), b);
    expect_box(box_to_feature_coords({32, 64, 32, 32}, 32), {1, 2, 1, 1});
    expect_box(box_to_feature_coords({48, 16, 24, 40}, 32), {1.5, 0.5, 0.75, 1.25});
    EXPECT_THROW(box_to_feature_coords(b, 0), GeometryError);
}

TEST(RoiAlign, ConstantMap) {
    Tensor<double> f(2, 1, 5, 6, 3.0);
    for (const Box& b : {Box{0, 0, 6, 5}, Box{1.3, 0.2, 2.1, 3.7}, Box{4.9, 4.1, 0.3, 0.2}}) {
        for (double v : roi_align_1x1(f, b)) EXPECT_DOUBLE_EQ(v, 3.0);
    }
}

TEST(RoiAlign, TwoByTwoWholeMapIsSampleAverage) {
    Tensor<double> f(1, 1, 2, 2);
    f(0, 0, 0, 1) = 1;
    f(0, 0, 1, 0) = 2;
    f(0, 0, 1, 1) = 3;
    // Quarter points of the whole-map box land on the four cell centers.
    EXPECT_DOUBLE_EQ(roi_align_1x1(f, Box{0, 0, 2, 2})[0], 1.5);
}

TEST(RoiAlign, RampEqualsCenterValue) {
    Tensor<double> f(1, 1, 8, 8);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) f(0, 0, y, x) = 2.0 * x + 0.5 * y;
    // Box of side 2 centered on cell (3, 4): center coordinate (x 4.5, y 3.5).
    EXPECT_NEAR(roi_align_1x1(f, Box{3.5, 2.5, 2, 2})[0], 2.0 * 4 + 0.5 * 3, 1e-12);
}

TEST(RoiAlign, LinearityAndFlipEquivariance) {
    Rng rng(9);
    Tensor<double> f(1, 1, 6, 7), g(1, 1, 6, 7), mix(1, 1, 6, 7), flipped(1, 1, 6, 7);
    for (std::size_t i = 0; i < f.size(); ++i) {
        f[i] = uniform(rng, -1.0, 1.0);
        g[i] = uniform(rng, -1.0, 1.0);
        mix[i] = 2.0 * f[i] - 0.5 * g[i];
    }
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 7; ++x) flipped(0, 0, y, x) = f(0, 0, y, 6 - x);
    for (int i = 0; i < 200; ++i) {
        const Box b{uniform(rng, 0.0, 5.0), uniform(rng, 0.0, 4.0), uniform(rng, 0.5, 2.0), uniform(rng, 0.5, 2.0)};
        EXPECT_NEAR(roi_align_1x1(mix, b)[0], 2.0 * roi_align_1x1(f, b)[0] - 0.5 * roi_align_1x1(g, b)[0], 1e-12);
        const Box mirrored{7 - (b.x + b.w), b.y, b.w, b.h};
        EXPECT_NEAR(roi_align_1x1(flipped, mirrored)[0], roi_align_1x1(f, b)[0], 1e-12);
    }
}

TEST(RoiAlign, OutsideGridThrows) {
    Tensor<double> f(1, 1, 4, 4);
    EXPECT_THROW(roi_align_1x1(f, Box{5, 0, 1, 1}), GeometryError);
    EXPECT_THROW(roi_align_1x1(f, Box{-3, -3, 2, 2}), GeometryError);
}

TEST(RoiAlign, BackwardIsAdjointOfForward) {
    Rng rng(4);
    Tensor<double> f(3, 2, 5, 5);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = uniform(rng, -1.0, 1.0);
    const Box b{0.7, 1.1, 2.3, 1.9};
    std::vector<double> up{0.3, -1.2, 0.8};
    const auto y = roi_align_1x1(f, 1, b);
    Tensor<double> gf(3, 2, 5, 5);
    roi_align_1x1_backward<double>(gf, 1, b, up);
    double lhs = 0, rhs = 0;
    for (std::size_t c = 0; c < 3; ++c) lhs += y[c] * up[c];
    for (std::size_t i = 0; i < f.size(); ++i) rhs += f[i] * gf[i];
    EXPECT_NEAR(lhs, rhs, 1e-12);
}

TEST(ViewPair, SharedRegionMapsInsideBothViews) {
    AugmentConfig cfg;
    cfg.output_size = 64;
    Rng rng(21);
    for (int i = 0; i < 500; ++i) {
        const auto vp = sample_view_pair(rng, cfg, 128, 160, 16);
        for (const auto& b : sample_boxes(vp.region, 4, 16, rng))
            for (const auto* p : {&vp.first, &vp.second}) {
                const Box m = map_box_to_view(b, *p);
                EXPECT_GE(m.x, -1e-9);
                EXPECT_GE(m.y, -1e-9);
                EXPECT_LE(m.x + m.w, 64 + 1e-9);
                EXPECT_LE(m.y + m.h, 64 + 1e-9);
            }
    }
}

TEST(ViewPair, FallbackUsesIdenticalCenterCrops) {
    AugmentConfig cfg;
    cfg.scale_min = cfg.scale_max = 0.2;
    cfg.max_resample = 0;
    Rng rng(2);
    // A minimum side larger than any 0.2-scale crop forces the fallback.
    const auto vp = sample_view_pair(rng, cfg, 100, 100, 60);
    EXPECT_TRUE(vp.fallback);
    EXPECT_EQ(vp.first.crop, (CropRect{0, 0, 100, 100}));
    EXPECT_EQ(vp.second.crop, vp.first.crop);
}
