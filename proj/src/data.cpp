#include "multimix/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "multimix/errors.hpp"
#include "multimix/rng.hpp"

namespace multimix {

const char* stream_tag_name(StreamTag tag) {
    switch (tag) {
        case StreamTag::cls_labeled: return "cls_labeled";
        case StreamTag::cls_unlabeled: return "cls_unlabeled";
        case StreamTag::seg_labeled: return "seg_labeled";
        case StreamTag::seg_unlabeled: return "seg_unlabeled";
    }
    return "?";
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

Manifest load_manifest(const std::filesystem::path& path, StreamTag tag) {
    std::ifstream is(path);
    if (!is) throw DataError("manifest: cannot open " + path.string());
    const auto dir = path.parent_path();
    std::string line;
    if (!std::getline(is, line)) throw DataError("manifest: empty file " + path.string());
    if (split_csv_line(line) != std::vector<std::string>{"path", "label", "mask"})
        throw DataError("manifest: expected header `path,label,mask` in " + path.string());
    Manifest m;
    m.tag = tag;
    size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 3)
            throw DataError("manifest: malformed row " + std::to_string(lineno) + " in " +
                            path.string());
        ManifestRow row;
        row.image = fields[0].empty() ? std::filesystem::path() : dir / fields[0];
        if (row.image.empty())
            throw DataError("manifest: missing image path at row " + std::to_string(lineno));
        if (!fields[1].empty()) {
            if (fields[1] != "0" && fields[1] != "1")
                throw DataError("manifest: label must be 0 or 1 at row " +
                                std::to_string(lineno));
            row.label = fields[1] == "1" ? 1 : 0;
        }
        if (!fields[2].empty()) row.mask = dir / fields[2];

        switch (tag) {
            case StreamTag::cls_labeled:
                if (!row.label)
                    throw DataError("manifest: cls_labeled row without label at row " +
                                    std::to_string(lineno));
                break;
            case StreamTag::seg_labeled:
                if (!row.mask)
                    throw DataError("manifest: seg_labeled row without mask at row " +
                                    std::to_string(lineno));
                break;
            case StreamTag::cls_unlabeled:
            case StreamTag::seg_unlabeled:
                if (row.label || row.mask)
                    throw DataError("manifest: unlabeled row carries annotations at row " +
                                    std::to_string(lineno));
                break;
        }
        m.rows.push_back(std::move(row));
    }
    return m;
}

Tensor<float> decode_pgm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("pgm: cannot open " + path.string());
    std::string magic;
    is >> magic;
    if (magic == "P2") throw DataError("pgm: ASCII P2 not supported, use binary P5: " + path.string());
    if (magic != "P5") throw DataError("pgm: bad magic in " + path.string());
    auto next_int = [&]() -> int64_t {
        // skip whitespace and # comments
        while (true) {
            int c = is.peek();
            if (c == '#') {
                std::string comment;
                std::getline(is, comment);
            } else if (std::isspace(c)) {
                is.get();
            } else {
                break;
            }
        }
        int64_t v;
        if (!(is >> v)) throw DataError("pgm: malformed header in " + path.string());
        return v;
    };
    const int64_t w = next_int();
    const int64_t h = next_int();
    const int64_t maxval = next_int();
    if (w <= 0 || h <= 0) throw DataError("pgm: bad dimensions in " + path.string());
    if (maxval != 255) throw DataError("pgm: only maxval 255 supported, got " +
                                       std::to_string(maxval) + " in " + path.string());
    is.get();  // single whitespace after maxval
    std::vector<unsigned char> raw(static_cast<size_t>(w * h));
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!is) throw DataError("pgm: truncated pixel data in " + path.string());
    Tensor<float> img({1, h, w});
    for (int64_t i = 0; i < h * w; ++i)
        img[i] = static_cast<float>(raw[static_cast<size_t>(i)]) / 255.0f;
    return img;
}

void encode_pgm(const std::filesystem::path& path, const Tensor<float>& image) {
    expect_rank(image, 3, "encode_pgm image");
    const int64_t h = image.dim(1), w = image.dim(2);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("pgm: cannot open " + path.string() + " for writing");
    os << "P5\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> raw(static_cast<size_t>(h * w));
    for (int64_t i = 0; i < h * w; ++i) {
        const double v = std::floor(static_cast<double>(image[i]) * 255.0 + 0.5);  // half-up
        raw[static_cast<size_t>(i)] = static_cast<unsigned char>(std::clamp(v, 0.0, 255.0));
    }
    os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!os) throw DataError("pgm: write failure on " + path.string());
}

Tensor<float> normalize_resize(const Tensor<float>& image, int target) {
    expect_rank(image, 3, "normalize_resize image");
    const int64_t h = image.dim(1), w = image.dim(2);
    if (h == 0 || w == 0) throw DataError("normalize_resize: zero-extent input");
    const int64_t s = target;
    Tensor<float> out({1, s, s});
    for (int64_t r = 0; r < s; ++r) {
        // corner-aligned mapping keeps corner pixels exact
        const double sy = (s == 1) ? 0.0
                                   : static_cast<double>(r) * static_cast<double>(h - 1) /
                                         static_cast<double>(s - 1);
        const int64_t y0 = std::min<int64_t>(static_cast<int64_t>(sy), h - 1);
        const int64_t y1 = std::min<int64_t>(y0 + 1, h - 1);
        const double fy = sy - static_cast<double>(y0);
        for (int64_t c = 0; c < s; ++c) {
            const double sx = (s == 1) ? 0.0
                                       : static_cast<double>(c) * static_cast<double>(w - 1) /
                                             static_cast<double>(s - 1);
            const int64_t x0 = std::min<int64_t>(static_cast<int64_t>(sx), w - 1);
            const int64_t x1 = std::min<int64_t>(x0 + 1, w - 1);
            const double fx = sx - static_cast<double>(x0);
            const double v00 = image[y0 * w + x0], v01 = image[y0 * w + x1];
            const double v10 = image[y1 * w + x0], v11 = image[y1 * w + x1];
            out[r * s + c] = static_cast<float>((1 - fy) * ((1 - fx) * v00 + fx * v01) +
                                                fy * ((1 - fx) * v10 + fx * v11));
        }
    }
    float lo = out[0], hi = out[0];
    for (int64_t i = 0; i < out.numel(); ++i) {
        lo = std::min(lo, out[i]);
        hi = std::max(hi, out[i]);
    }
    if (hi > lo) {
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = (out[i] - lo) / (hi - lo);
    } else {
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = 0.0f;  // constant image rule
    }
    return out;
}

Tensor<float> resize_mask(const Tensor<float>& mask, int target) {
    expect_rank(mask, 3, "resize_mask mask");
    const int64_t h = mask.dim(1), w = mask.dim(2);
    const int64_t s = target;
    Tensor<float> out({1, s, s});
    for (int64_t r = 0; r < s; ++r)
        for (int64_t c = 0; c < s; ++c) {
            const int64_t sy = std::min<int64_t>(
                h - 1, static_cast<int64_t>(std::lround(
                           (s == 1) ? 0.0
                                    : static_cast<double>(r) * static_cast<double>(h - 1) /
                                          static_cast<double>(s - 1))));
            const int64_t sx = std::min<int64_t>(
                w - 1, static_cast<int64_t>(std::lround(
                           (s == 1) ? 0.0
                                    : static_cast<double>(c) * static_cast<double>(w - 1) /
                                          static_cast<double>(s - 1))));
            out[r * s + c] = mask[sy * w + sx] >= 0.5f ? 1.0f : 0.0f;
        }
    return out;
}

Dataset load_dataset(const Manifest& manifest, int extent) {
    Dataset ds;
    ds.tag = manifest.tag;
    ds.extent = extent;
    for (const auto& row : manifest.rows) {
        Sample s;
        s.image = normalize_resize(decode_pgm(row.image), extent);
        if (row.label) s.label = *row.label;
        if (row.mask) s.mask = resize_mask(decode_pgm(*row.mask), extent);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

// ---- synthetic generator -----------------------------------------------------

namespace {

struct Ellipse {
    double cy, cx, ry, rx;
    bool contains(double y, double x) const {
        const double dy = (y - cy) / ry, dx = (x - cx) / rx;
        return dy * dy + dx * dx <= 1.0;
    }
};

struct SynthImage {
    Tensor<float> image;
    Tensor<float> mask;
    int label = 0;
};

SynthImage make_image(const SynthConfig& cfg, Rng& rng, bool cls_stream) {
    const int64_t s = cfg.extent;
    const double S = static_cast<double>(s);
    // two lung ellipses with jittered centers and axes
    auto lung = [&](double cx_frac) {
        Ellipse e;
        e.cy = S * (0.52 + rng.uniform(-0.03, 0.03));
        e.cx = S * (cx_frac + rng.uniform(-0.02, 0.02));
        e.ry = S * (0.27 + rng.uniform(-0.03, 0.03));
        e.rx = S * (0.15 + rng.uniform(-0.02, 0.02));
        return e;
    };
    const Ellipse left = lung(0.31);
    const Ellipse right = lung(0.69);

    const int label = rng.bernoulli(cfg.abnormal_fraction) ? 1 : 0;
    const bool blob = label == 1 && rng.bernoulli(cfg.blob_probability);
    Ellipse opacity{0, 0, 1, 1};
    if (blob) {
        const Ellipse& host = rng.bernoulli(0.5) ? left : right;
        opacity.ry = S * rng.uniform(0.06, 0.1);
        opacity.rx = S * rng.uniform(0.055, 0.09);
        opacity.cy = host.cy + rng.uniform(-0.4, 0.4) * (host.ry - opacity.ry);
        opacity.cx = host.cx + rng.uniform(-0.4, 0.4) * (host.rx - opacity.rx);
    }

    const double shift = cls_stream ? cfg.cls_intensity_shift : cfg.seg_intensity_shift;
    const double noise = cls_stream ? cfg.cls_noise : cfg.seg_noise;

    SynthImage out;
    out.image = Tensor<float>({1, s, s});
    out.mask = Tensor<float>({1, s, s});
    out.label = label;
    for (int64_t r = 0; r < s; ++r)
        for (int64_t c = 0; c < s; ++c) {
            const double y = static_cast<double>(r), x = static_cast<double>(c);
            const bool in_lung = left.contains(y, x) || right.contains(y, x);
            double v = 0.2 + shift;
            if (in_lung) v = 0.62 + shift;
            if (blob && opacity.contains(y, x)) v += 0.3;
            v += noise * rng.normal();
            out.image[r * s + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
            out.mask[r * s + c] = in_lung ? 1.0f : 0.0f;
        }
    return out;
}

void write_manifest(const std::filesystem::path& path,
                    const std::vector<std::array<std::string, 3>>& rows) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("synth: cannot write " + path.string());
    os << "path,label,mask\n";
    for (const auto& r : rows) os << r[0] << "," << r[1] << "," << r[2] << "\n";
}

}  // namespace

SynthOutput synth_generate(const SynthConfig& cfg, const std::filesystem::path& outdir) {
    std::filesystem::create_directories(outdir / "images");
    std::filesystem::create_directories(outdir / "masks");

    SynthOutput out;
    out.cls_labeled = outdir / "cls_labeled.csv";
    out.cls_unlabeled = outdir / "cls_unlabeled.csv";
    out.seg_labeled = outdir / "seg_labeled.csv";
    out.seg_unlabeled = outdir / "seg_unlabeled.csv";

    struct StreamSpec {
        StreamTag tag;
        int count;
        const std::filesystem::path* manifest;
    };
    const StreamSpec streams[] = {
        {StreamTag::cls_labeled, cfg.cls_labeled, &out.cls_labeled},
        {StreamTag::cls_unlabeled, cfg.cls_unlabeled, &out.cls_unlabeled},
        {StreamTag::seg_labeled, cfg.seg_labeled, &out.seg_labeled},
        {StreamTag::seg_unlabeled, cfg.seg_unlabeled, &out.seg_unlabeled},
    };

    for (const auto& stream : streams) {
        std::vector<std::array<std::string, 3>> rows;
        const bool cls_stream =
            stream.tag == StreamTag::cls_labeled || stream.tag == StreamTag::cls_unlabeled;
        for (int i = 0; i < stream.count; ++i) {
            // per-sample stream keeps generation order-independent
            Rng rng(hash_mix(cfg.seed, hash_mix(hash_str(stream_tag_name(stream.tag)),
                                                static_cast<uint64_t>(i))));
            const SynthImage img = make_image(cfg, rng, cls_stream);
            const std::string base =
                std::string(stream_tag_name(stream.tag)) + "_" + std::to_string(i);
            const std::string img_rel = "images/" + base + ".pgm";
            encode_pgm(outdir / img_rel, img.image);
            std::array<std::string, 3> row{img_rel, "", ""};
            if (stream.tag == StreamTag::cls_labeled) row[1] = std::to_string(img.label);
            if (stream.tag == StreamTag::seg_labeled) {
                const std::string mask_rel = "masks/" + base + ".pgm";
                encode_pgm(outdir / mask_rel, img.mask);
                row[2] = mask_rel;
            }
            rows.push_back(std::move(row));
        }
        write_manifest(*stream.manifest, rows);
    }

    std::ofstream summary(outdir / "dataset.txt", std::ios::trunc);
    summary << "extent = " << cfg.extent << "\n"
            << "seed = " << cfg.seed << "\n"
            << "cls_labeled = " << cfg.cls_labeled << "\n"
            << "cls_unlabeled = " << cfg.cls_unlabeled << "\n"
            << "seg_labeled = " << cfg.seg_labeled << "\n"
            << "seg_unlabeled = " << cfg.seg_unlabeled << "\n"
            << "abnormal_fraction = " << cfg.abnormal_fraction << "\n"
            << "cls_intensity_shift = " << cfg.cls_intensity_shift << "\n"
            << "seg_intensity_shift = " << cfg.seg_intensity_shift << "\n"
            << "cls_noise = " << cfg.cls_noise << "\n"
            << "seg_noise = " << cfg.seg_noise << "\n";
    return out;
}

}  // namespace multimix
