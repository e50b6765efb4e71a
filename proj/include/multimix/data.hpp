#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "multimix/tensor.hpp"

namespace multimix {

enum class StreamTag { cls_labeled, cls_unlabeled, seg_labeled, seg_unlabeled };

const char* stream_tag_name(StreamTag tag);

struct ManifestRow {
    std::filesystem::path image;  // resolved against the manifest directory
    std::optional<int> label;
    std::optional<std::filesystem::path> mask;
};

struct Manifest {
    StreamTag tag = StreamTag::cls_labeled;
    std::vector<ManifestRow> rows;
};

// CSV with header `path,label,mask`. Labeled classification rows must carry a
// label in {0,1}; labeled segmentation rows a mask path; unlabeled rows
// neither.
Manifest load_manifest(const std::filesystem::path& path, StreamTag tag);

// Binary PGM (P5), 8-bit only. Values map to [0,1] by v/255.
Tensor<float> decode_pgm(const std::filesystem::path& path);
// Writes v*255 rounded half-up.
void encode_pgm(const std::filesystem::path& path, const Tensor<float>& image);

// Bilinear resize (corner-aligned) to target x target, then per-image min-max
// normalization to [0,1]; a constant image maps to all zeros.
Tensor<float> normalize_resize(const Tensor<float>& image, int target);

// Nearest resize + 0.5 threshold: keeps masks binary.
Tensor<float> resize_mask(const Tensor<float>& mask, int target);

struct Sample {
    Tensor<float> image;  // [1,S,S] in [0,1]
    int label = -1;
    Tensor<float> mask;  // empty unless seg_labeled
};

struct Dataset {
    StreamTag tag = StreamTag::cls_labeled;
    std::vector<Sample> samples;
    int extent = 0;
};

Dataset load_dataset(const Manifest& manifest, int extent);

// Desk-scale synthetic stand-in for multi-source chest data: two elliptical
// "lung" regions per image (their union is the mask), abnormal class adds a
// bright opacity blob inside one lung, and the classification- vs
// segmentation-stream sources carry different intensity offsets and noise.
struct SynthConfig {
    int extent = 64;
    int cls_labeled = 50;
    int cls_unlabeled = 100;
    int seg_labeled = 20;
    int seg_unlabeled = 100;
    double abnormal_fraction = 0.5;
    double blob_probability = 1.0;  // P(blob | abnormal)
    double cls_intensity_shift = 0.05;
    double seg_intensity_shift = -0.05;
    double cls_noise = 0.02;
    double seg_noise = 0.03;
    uint64_t seed = 1;
};

struct SynthOutput {
    std::filesystem::path cls_labeled;
    std::filesystem::path cls_unlabeled;
    std::filesystem::path seg_labeled;
    std::filesystem::path seg_unlabeled;
};

SynthOutput synth_generate(const SynthConfig& cfg, const std::filesystem::path& outdir);

}  // namespace multimix
