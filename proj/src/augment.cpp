#include "multimix/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "multimix/errors.hpp"

namespace multimix {

namespace {

constexpr std::array<TransformKind, 15> kAllKinds = {
    TransformKind::hflip,     TransformKind::crop32,      TransformKind::autocontrast,
    TransformKind::brightness, TransformKind::contrast,   TransformKind::equalize,
    TransformKind::identity,  TransformKind::posterize,   TransformKind::rotate,
    TransformKind::sharpness, TransformKind::shear_x,     TransformKind::shear_y,
    TransformKind::solarize,  TransformKind::translate_x, TransformKind::translate_y,
};

constexpr std::array<const char*, 15> kKindNames = {
    "hflip",     "crop32",   "autocontrast", "brightness", "contrast",
    "equalize",  "identity", "posterize",    "rotate",     "sharpness",
    "shearX",    "shearY",   "solarize",     "translateX", "translateY",
};

int64_t extent_of(const Image& x) {
    expect_rank(x, 3, "augment image");
    if (x.dim(1) != x.dim(2)) throw ShapeError("augment: image must be square");
    return x.dim(1);
}

float px(const Image& x, int64_t r, int64_t c) { return x[r * x.dim(2) + c]; }

// inverse affine map with nearest resampling and zero fill, rotation/shear
// about the image center
Image inverse_warp(const Image& x, double a, double b, double c, double d, double tx, double ty) {
    const int64_t s = extent_of(x);
    const double cx = (static_cast<double>(s) - 1.0) / 2.0;
    const double cy = cx;
    Image out({1, s, s});
    for (int64_t r = 0; r < s; ++r) {
        for (int64_t col = 0; col < s; ++col) {
            const double xr = static_cast<double>(col) - cx - tx;
            const double yr = static_cast<double>(r) - cy - ty;
            const double sx = a * xr + b * yr + cx;
            const double sy = c * xr + d * yr + cy;
            const int64_t si = static_cast<int64_t>(std::lround(sy));
            const int64_t sj = static_cast<int64_t>(std::lround(sx));
            out[r * s + col] =
                (si >= 0 && si < s && sj >= 0 && sj < s) ? px(x, si, sj) : 0.0f;
        }
    }
    return out;
}

Image translate_pixels(const Image& x, int64_t dy, int64_t dx) {
    const int64_t s = extent_of(x);
    Image out({1, s, s});
    for (int64_t r = 0; r < s; ++r)
        for (int64_t c = 0; c < s; ++c) {
            const int64_t sr = r - dy, sc = c - dx;
            out[r * s + c] = (sr >= 0 && sr < s && sc >= 0 && sc < s) ? px(x, sr, sc) : 0.0f;
        }
    return out;
}

Image clamp01(Image x) {
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = std::clamp(x[i], 0.0f, 1.0f);
    return x;
}

int64_t crop_pad(int64_t s) {
    return std::max<int64_t>(1, static_cast<int64_t>(std::lround(32.0 * static_cast<double>(s) / 256.0)));
}

}  // namespace

const char* transform_kind_name(TransformKind kind) {
    return kKindNames[static_cast<size_t>(kind)];
}

TransformKind transform_kind_from_name(const std::string& name) {
    for (size_t i = 0; i < kKindNames.size(); ++i)
        if (name == kKindNames[i]) return kAllKinds[i];
    throw ConfigError("unknown transform kind: " + name);
}

const std::vector<TransformKind>& AugmentRanges::effective_pool() const {
    static const std::vector<TransformKind> all(kAllKinds.begin(), kAllKinds.end());
    return pool.empty() ? all : pool;
}

Image apply_transform(const Image& x, const TransformSpec& spec) {
    const int64_t s = extent_of(x);
    switch (spec.kind) {
        case TransformKind::identity:
            return x;
        case TransformKind::hflip: {
            Image out({1, s, s});
            for (int64_t r = 0; r < s; ++r)
                for (int64_t c = 0; c < s; ++c) out[r * s + c] = px(x, r, s - 1 - c);
            return out;
        }
        case TransformKind::crop32: {
            // magnitude in [0,1) picks a cell in the (2p+1)^2 offset lattice
            const int64_t p = crop_pad(s);
            const int64_t cells = (2 * p + 1) * (2 * p + 1);
            int64_t cell = static_cast<int64_t>(spec.magnitude * static_cast<double>(cells));
            cell = std::clamp<int64_t>(cell, 0, cells - 1);
            const int64_t dy = cell / (2 * p + 1) - p;
            const int64_t dx = cell % (2 * p + 1) - p;
            return translate_pixels(x, dy, dx);
        }
        case TransformKind::autocontrast: {
            float lo = x[0], hi = x[0];
            for (int64_t i = 0; i < x.numel(); ++i) {
                lo = std::min(lo, x[i]);
                hi = std::max(hi, x[i]);
            }
            if (hi <= lo) return x;
            Image out({1, s, s});
            for (int64_t i = 0; i < x.numel(); ++i) out[i] = (x[i] - lo) / (hi - lo);
            return out;
        }
        case TransformKind::brightness: {
            Image out({1, s, s});
            for (int64_t i = 0; i < x.numel(); ++i)
                out[i] = static_cast<float>(x[i] * spec.magnitude);
            return clamp01(std::move(out));
        }
        case TransformKind::contrast: {
            double mean = 0;
            for (int64_t i = 0; i < x.numel(); ++i) mean += x[i];
            mean /= static_cast<double>(x.numel());
            Image out({1, s, s});
            for (int64_t i = 0; i < x.numel(); ++i)
                out[i] = static_cast<float>(mean + spec.magnitude * (x[i] - mean));
            return clamp01(std::move(out));
        }
        case TransformKind::equalize: {
            // 256-bin histogram equalization on the quantized image
            std::array<int64_t, 256> hist{};
            for (int64_t i = 0; i < x.numel(); ++i) {
                const int q = std::clamp(static_cast<int>(std::lround(x[i] * 255.0f)), 0, 255);
                hist[static_cast<size_t>(q)]++;
            }
            std::array<int64_t, 256> cdf{};
            int64_t run = 0;
            int64_t cdf_min = 0;
            bool seen = false;
            for (int v = 0; v < 256; ++v) {
                run += hist[static_cast<size_t>(v)];
                cdf[static_cast<size_t>(v)] = run;
                if (!seen && hist[static_cast<size_t>(v)] > 0) {
                    cdf_min = run;
                    seen = true;
                }
            }
            const int64_t n = x.numel();
            if (n == cdf_min) return x;  // single gray level: leave unchanged
            Image out({1, s, s});
            for (int64_t i = 0; i < x.numel(); ++i) {
                const int q = std::clamp(static_cast<int>(std::lround(x[i] * 255.0f)), 0, 255);
                const double lut =
                    std::round(255.0 * static_cast<double>(cdf[static_cast<size_t>(q)] - cdf_min) /
                               static_cast<double>(n - cdf_min));
                out[i] = static_cast<float>(lut / 255.0);
            }
            return out;
        }
        case TransformKind::posterize: {
            const int bits = std::clamp(static_cast<int>(std::lround(spec.magnitude)), 1, 8);
            const float levels = static_cast<float>((1 << bits) - 1);
            Image out({1, s, s});
            for (int64_t i = 0; i < x.numel(); ++i)
                out[i] = std::floor(x[i] * levels) / levels;
            return out;
        }
        case TransformKind::rotate: {
            const double rad = spec.magnitude * 3.14159265358979323846 / 180.0;
            const double cs = std::cos(rad), sn = std::sin(rad);
            // inverse rotation matrix
            return inverse_warp(x, cs, sn, -sn, cs, 0.0, 0.0);
        }
        case TransformKind::sharpness: {
            // blend against a 3x3 smoothing kernel [[1,1,1],[1,5,1],[1,1,1]]/13,
            // border pixels kept from the source
            Image blur({1, s, s});
            for (int64_t r = 0; r < s; ++r)
                for (int64_t c = 0; c < s; ++c) {
                    if (r == 0 || c == 0 || r == s - 1 || c == s - 1) {
                        blur[r * s + c] = px(x, r, c);
                        continue;
                    }
                    float acc = 0.0f;
                    for (int64_t dy = -1; dy <= 1; ++dy)
                        for (int64_t dx = -1; dx <= 1; ++dx)
                            acc += px(x, r + dy, c + dx) * ((dy == 0 && dx == 0) ? 5.0f : 1.0f);
                    blur[r * s + c] = acc / 13.0f;
                }
            Image out({1, s, s});
            for (int64_t i = 0; i < x.numel(); ++i)
                out[i] = static_cast<float>(blur[i] + spec.magnitude * (x[i] - blur[i]));
            return clamp01(std::move(out));
        }
        case TransformKind::shear_x:
            return inverse_warp(x, 1.0, spec.magnitude, 0.0, 1.0, 0.0, 0.0);
        case TransformKind::shear_y:
            return inverse_warp(x, 1.0, 0.0, spec.magnitude, 1.0, 0.0, 0.0);
        case TransformKind::solarize: {
            Image out({1, s, s});
            for (int64_t i = 0; i < x.numel(); ++i)
                out[i] = x[i] <= static_cast<float>(spec.magnitude) ? x[i] : 1.0f - x[i];
            return out;
        }
        case TransformKind::translate_x: {
            const int64_t dx = static_cast<int64_t>(
                std::lround(spec.magnitude * static_cast<double>(s)));
            return translate_pixels(x, 0, dx);
        }
        case TransformKind::translate_y: {
            const int64_t dy = static_cast<int64_t>(
                std::lround(spec.magnitude * static_cast<double>(s)));
            return translate_pixels(x, dy, 0);
        }
    }
    throw ConfigError("apply_transform: unknown kind");
}

Image weak_augment(const Image& x, Rng& rng) {
    const int64_t s = extent_of(x);
    Image cur = x;
    if (rng.bernoulli(0.5)) cur = apply_transform(cur, {TransformKind::hflip, 0.0});
    const int64_t p = crop_pad(s);
    const int64_t dy = rng.uniform_int(-p, p);
    const int64_t dx = rng.uniform_int(-p, p);
    return translate_pixels(cur, dy, dx);
}

StrongAugmentResult strong_augment(const Image& x, Rng& rng, const AugmentRanges& ranges) {
    const auto& pool = ranges.effective_pool();
    const int64_t k =
        rng.uniform_int(ranges.k_min, std::min<int64_t>(ranges.k_max,
                                                        static_cast<int64_t>(pool.size())));
    // partial Fisher-Yates draw of k distinct kinds, applied in draw order
    std::vector<TransformKind> bag(pool);
    StrongAugmentResult out;
    out.image = x;
    for (int64_t i = 0; i < k; ++i) {
        const int64_t j = rng.uniform_int(i, static_cast<int64_t>(bag.size()) - 1);
        std::swap(bag[static_cast<size_t>(i)], bag[static_cast<size_t>(j)]);
        const TransformKind kind = bag[static_cast<size_t>(i)];
        TransformSpec spec{kind, 0.0};
        switch (kind) {
            case TransformKind::brightness:
            case TransformKind::contrast:
            case TransformKind::sharpness:
                spec.magnitude = rng.uniform(ranges.factor_lo, ranges.factor_hi);
                break;
            case TransformKind::posterize:
                spec.magnitude = static_cast<double>(
                    rng.uniform_int(ranges.posterize_bits_lo, ranges.posterize_bits_hi));
                break;
            case TransformKind::solarize:
                spec.magnitude = rng.uniform(ranges.solarize_lo, ranges.solarize_hi);
                break;
            case TransformKind::shear_x:
            case TransformKind::shear_y:
                spec.magnitude = rng.uniform(-ranges.shear_max, ranges.shear_max);
                break;
            case TransformKind::rotate:
                spec.magnitude = rng.uniform(-ranges.rotate_max_deg, ranges.rotate_max_deg);
                break;
            case TransformKind::translate_x:
            case TransformKind::translate_y:
                spec.magnitude =
                    rng.uniform(-ranges.translate_max_frac, ranges.translate_max_frac);
                break;
            case TransformKind::crop32:
                spec.magnitude = rng.next_double();
                break;
            case TransformKind::hflip:
            case TransformKind::autocontrast:
            case TransformKind::equalize:
            case TransformKind::identity:
                break;
        }
        out.image = apply_transform(out.image, spec);
        out.applied.push_back(spec);
    }
    out.image = clamp01(std::move(out.image));
    return out;
}

}  // namespace multimix
