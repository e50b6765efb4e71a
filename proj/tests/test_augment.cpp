#include "multimix/augment.hpp"

#include <cmath>

#include "doctest.h"

using namespace multimix;

namespace {

Image random_image(int64_t s, uint64_t seed) {
    Rng rng(seed);
    Image img({1, s, s});
    for (int64_t i = 0; i < img.numel(); ++i) img[i] = static_cast<float>(rng.next_double());
    return img;
}

// quantized to the 8-bit grid, as PGM-decoded images are
Image random_image_q8(int64_t s, uint64_t seed) {
    Image img = random_image(s, seed);
    for (int64_t i = 0; i < img.numel(); ++i)
        img[i] = std::round(img[i] * 255.0f) / 255.0f;
    return img;
}

bool in_range01(const Image& img) {
    for (int64_t i = 0; i < img.numel(); ++i)
        if (img[i] < 0.0f || img[i] > 1.0f) return false;
    return true;
}

}  // namespace

TEST_CASE("weak_augment: identity under no-flip centered crop, shape preserved") {
    const auto img = random_image(64, 1);
    // find a seed whose draws are (no flip, dy=0, dx=0)
    uint64_t seed = 0;
    bool found = false;
    for (uint64_t cand = 0; cand < 20000 && !found; ++cand) {
        Rng probe(cand);
        if (probe.bernoulli(0.5)) continue;
        if (probe.uniform_int(-8, 8) != 0) continue;
        if (probe.uniform_int(-8, 8) != 0) continue;
        seed = cand;
        found = true;
    }
    REQUIRE(found);
    Rng rng(seed);
    CHECK(weak_augment(img, rng).vec() == img.vec());

    Rng any(123);
    const auto out = weak_augment(img, any);
    CHECK(out.shape() == img.shape());
}

TEST_CASE("double horizontal flip is the identity") {
    const auto img = random_image(32, 2);
    const auto once = apply_transform(img, {TransformKind::hflip, 0.0});
    CHECK(apply_transform(once, {TransformKind::hflip, 0.0}).vec() == img.vec());
}

TEST_CASE("strong_augment: determinism, range, shape, applied-list bounds") {
    const auto img = random_image_q8(64, 3);
    AugmentRanges ranges;
    for (uint64_t seed = 0; seed < 40; ++seed) {
        Rng a(seed), b(seed);
        const auto ra = strong_augment(img, a, ranges);
        const auto rb = strong_augment(img, b, ranges);
        CHECK(ra.image.vec() == rb.image.vec());  // bitwise determinism
        CHECK(ra.image.shape() == img.shape());
        CHECK(in_range01(ra.image));
        CHECK(ra.applied.size() >= 1);
        CHECK(ra.applied.size() <= 4);
        for (const auto& spec : ra.applied) {
            if (spec.kind == TransformKind::rotate) CHECK(std::fabs(spec.magnitude) <= 30.0);
            if (spec.kind == TransformKind::translate_x || spec.kind == TransformKind::translate_y)
                CHECK(std::fabs(spec.magnitude) <= 0.3);
            if (spec.kind == TransformKind::shear_x || spec.kind == TransformKind::shear_y)
                CHECK(std::fabs(spec.magnitude) <= 0.3);
        }
        // distinct kinds
        for (size_t i = 0; i < ra.applied.size(); ++i)
            for (size_t j = i + 1; j < ra.applied.size(); ++j)
                CHECK(ra.applied[i].kind != ra.applied[j].kind);
    }
}

TEST_CASE("strong_augment with identity-only pool returns the input") {
    const auto img = random_image(32, 4);
    AugmentRanges ranges;
    ranges.pool = {TransformKind::identity};
    Rng rng(9);
    CHECK(strong_augment(img, rng, ranges).image.vec() == img.vec());
}

TEST_CASE("per-kind identity magnitudes") {
    const auto img = random_image_q8(32, 5);
    CHECK(apply_transform(img, {TransformKind::identity, 0.0}).vec() == img.vec());
    CHECK(apply_transform(img, {TransformKind::brightness, 1.0}).vec() == img.vec());
    CHECK(apply_transform(img, {TransformKind::contrast, 1.0}).vec() == img.vec());
    CHECK(apply_transform(img, {TransformKind::sharpness, 1.0}).vec() == img.vec());
    CHECK(apply_transform(img, {TransformKind::solarize, 1.0}).vec() == img.vec());
    CHECK(apply_transform(img, {TransformKind::rotate, 0.0}).vec() == img.vec());
    CHECK(apply_transform(img, {TransformKind::shear_x, 0.0}).vec() == img.vec());
    CHECK(apply_transform(img, {TransformKind::shear_y, 0.0}).vec() == img.vec());
    CHECK(apply_transform(img, {TransformKind::translate_x, 0.0}).vec() == img.vec());
    CHECK(apply_transform(img, {TransformKind::translate_y, 0.0}).vec() == img.vec());
    // posterize at 8 bits is the identity on the 8-bit grid
    const auto post = apply_transform(img, {TransformKind::posterize, 8.0});
    for (int64_t i = 0; i < img.numel(); ++i)
        CHECK(post[i] == doctest::Approx(img[i]).epsilon(1e-6));
    // crop32: the lattice center cell is the zero offset
    const int64_t p = 4;  // 32 * 32/256
    const int64_t cells = (2 * p + 1) * (2 * p + 1);
    const double center = (static_cast<double>(p * (2 * p + 1) + p) + 0.5) /
                          static_cast<double>(cells);
    CHECK(apply_transform(img, {TransformKind::crop32, center}).vec() == img.vec());
    // autocontrast is the identity when the range is already [0,1]
    Image spread = img;
    spread[0] = 0.0f;
    spread[1] = 1.0f;
    CHECK(apply_transform(spread, {TransformKind::autocontrast, 0.0}).vec() == spread.vec());
    // equalize is the identity on an already-uniform histogram
    Image ramp({1, 16, 16});
    for (int64_t i = 0; i < 256; ++i) ramp[i] = static_cast<float>(i) / 255.0f;
    const auto eq = apply_transform(ramp, {TransformKind::equalize, 0.0});
    for (int64_t i = 0; i < 256; ++i)
        CHECK(eq[i] == doctest::Approx(ramp[i]).epsilon(1e-6));
}

TEST_CASE("posterize matches the quantization oracle") {
    const auto img = random_image(16, 6);
    const auto out = apply_transform(img, {TransformKind::posterize, 4.0});
    for (int64_t i = 0; i < img.numel(); ++i)
        CHECK(out[i] == doctest::Approx(std::floor(img[i] * 15.0f) / 15.0f));
}

TEST_CASE("solarize inverts only above the threshold") {
    Image img({1, 2, 2}, {0.2f, 0.5f, 0.8f, 1.0f});
    const auto out = apply_transform(img, {TransformKind::solarize, 0.5});
    CHECK(out[0] == 0.2f);
    CHECK(out[1] == 0.5f);
    CHECK(out[2] == doctest::Approx(0.2f));
    CHECK(out[3] == doctest::Approx(0.0f));
}

TEST_CASE("translate shifts by the pixel-rounded fraction with zero fill") {
    Image img({1, 4, 4});
    for (int64_t i = 0; i < 16; ++i) img[i] = static_cast<float>(i) / 16.0f;
    const auto out = apply_transform(img, {TransformKind::translate_x, 0.25});  // 1 px right
    for (int64_t r = 0; r < 4; ++r) {
        CHECK(out[r * 4 + 0] == 0.0f);
        for (int64_t c = 1; c < 4; ++c) CHECK(out[r * 4 + c] == img[r * 4 + c - 1]);
    }
}

TEST_CASE("all transforms keep shape and [0,1] range") {
    const auto img = random_image_q8(32, 7);
    Rng rng(11);
    AugmentRanges ranges;
    for (int trial = 0; trial < 100; ++trial) {
        const auto res = strong_augment(img, rng, ranges);
        CHECK(res.image.shape() == img.shape());
        CHECK(in_range01(res.image));
    }
}
