#pragma once

#include <string>
#include <vector>

#include "multimix/rng.hpp"
#include "multimix/tensor.hpp"

namespace multimix {

// The 15-kind strong-augmentation pool. Geometric transforms use nearest
// resampling with zero fill; intensity transforms clamp to [0,1].
enum class TransformKind {
    hflip,
    crop32,
    autocontrast,
    brightness,
    contrast,
    equalize,
    identity,
    posterize,
    rotate,
    sharpness,
    shear_x,
    shear_y,
    solarize,
    translate_x,
    translate_y,
};

const char* transform_kind_name(TransformKind kind);
TransformKind transform_kind_from_name(const std::string& name);

struct TransformSpec {
    TransformKind kind;
    double magnitude = 0.0;  // per-kind semantics, see apply_transform
};

// Magnitude ranges per kind. brightness/contrast/sharpness are blend factors
// with identity 1.0; posterize stores the kept bit count; solarize the invert
// threshold; shear a slope; rotate degrees; translate a width/height fraction;
// crop32 a single uniform u in [0,1) encoding the (dy,dx) jitter cell.
struct AugmentRanges {
    double factor_lo = 0.5, factor_hi = 1.5;  // brightness / contrast / sharpness
    int posterize_bits_lo = 4, posterize_bits_hi = 8;
    double solarize_lo = 0.5, solarize_hi = 1.0;
    double shear_max = 0.3;
    double rotate_max_deg = 30.0;
    double translate_max_frac = 0.3;
    int k_min = 1, k_max = 4;  // number of transforms per strong augmentation
    std::vector<TransformKind> pool;  // defaults to all 15 kinds

    const std::vector<TransformKind>& effective_pool() const;
};

// Images are [1,S,S] single-channel tensors with values in [0,1].
using Image = Tensor<float>;

Image apply_transform(const Image& x, const TransformSpec& spec);

// Random horizontal flip then pad-and-crop translation jitter. The pad is
// 32*S/256 pixels per side (the published 32-pixel crop scaled to the image),
// with zero fill.
Image weak_augment(const Image& x, Rng& rng);

struct StrongAugmentResult {
    Image image;
    std::vector<TransformSpec> applied;
};

// k ~ U{k_min..k_max} distinct kinds sampled from the pool, applied in sample
// order with uniformly drawn magnitudes, output clamped to [0,1].
StrongAugmentResult strong_augment(const Image& x, Rng& rng, const AugmentRanges& ranges);

}  // namespace multimix
