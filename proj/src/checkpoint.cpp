#include "multimix/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include "multimix/errors.hpp"

namespace multimix {

namespace {

constexpr uint32_t kFormatVersion = 1;

void put_u16(std::ostream& os, uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}
void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}
void put_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

uint16_t get_u16(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    if (!is) throw DataError("checkpoint: truncated file");
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}
uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw DataError("checkpoint: truncated file");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}
uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw DataError("checkpoint: truncated file");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

void put_record(std::ostream& os, const std::string& name, const Tensor<float>& t) {
    if (name.size() > 65535) throw DataError("checkpoint: parameter name too long");
    put_u16(os, static_cast<uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    os.put(static_cast<char>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_u32(os, static_cast<uint32_t>(t.dim(i)));
    // float32 little-endian payload; assumes a little-endian host (checked below)
    for (int64_t i = 0; i < t.numel(); ++i) {
        uint32_t bits;
        float v = t[i];
        std::memcpy(&bits, &v, 4);
        put_u32(os, bits);
    }
}

std::pair<std::string, Tensor<float>> get_record(std::istream& is) {
    const uint16_t len = get_u16(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    if (!is) throw DataError("checkpoint: truncated name");
    const int rank = is.get();
    if (rank < 0 || rank > 8) throw DataError("checkpoint: bad tensor rank");
    Shape shape;
    for (int i = 0; i < rank; ++i) shape.push_back(static_cast<int64_t>(get_u32(is)));
    Tensor<float> t(shape);
    for (int64_t i = 0; i < t.numel(); ++i) {
        const uint32_t bits = get_u32(is);
        float v;
        std::memcpy(&v, &bits, 4);
        t[i] = v;
    }
    return {std::move(name), std::move(t)};
}

// The architecture is fully determined by the parameter inventory: block count
// from encoder prefixes, base width from the first conv, bridge from the first
// decoder conv input width.
ArchDescriptor arch_from_tensors(const std::map<std::string, Tensor<float>>& tensors,
                                 uint32_t extent_hint) {
    ArchDescriptor arch;
    int blocks = 0;
    while (tensors.count("enc.block" + std::to_string(blocks + 1) + ".conv1.weight")) ++blocks;
    if (blocks < 2) throw DataError("checkpoint: encoder blocks missing");
    arch.blocks = blocks;
    arch.base_width = static_cast<int>(tensors.at("enc.block1.conv1.weight").dim(0));
    auto head = tensors.find("head.fc.weight");
    if (head == tensors.end()) throw DataError("checkpoint: head missing");
    arch.classes = static_cast<int>(head->second.dim(0));
    auto dec1 = tensors.find("dec.block1.conv1.weight");
    if (dec1 == tensors.end()) throw DataError("checkpoint: decoder missing");
    const int64_t dec1_in = dec1->second.dim(1);
    const int64_t no_bridge_in =
        static_cast<int64_t>(arch.base_width) * ((1 << (blocks - 1)) + (1 << (blocks - 2)));
    if (dec1_in == no_bridge_in)
        arch.bridge_enabled = false;
    else if (dec1_in == no_bridge_in + 2)
        arch.bridge_enabled = true;
    else
        throw DataError("checkpoint: decoder width inconsistent with encoder");
    arch.extent = extent_hint > 0 ? static_cast<int>(extent_hint) : (1 << blocks);
    return arch;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params,
                     const CheckpointExtras* extras) {
    static_assert(std::endian::native == std::endian::little,
                  "checkpoint writer assumes a little-endian host");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("checkpoint: cannot open " + path.string() + " for writing");
    os.write("MMIX", 4);
    put_u32(os, kFormatVersion);
    put_u32(os, static_cast<uint32_t>(params.tensors.size()));
    for (const auto& [name, t] : params.tensors) put_record(os, name, t);
    if (extras) {
        os.write("MMOP", 4);
        put_u64(os, static_cast<uint64_t>(extras->opt.step));
        put_u32(os, static_cast<uint32_t>(extras->opt.m.size() + extras->opt.v.size()));
        for (const auto& [name, t] : extras->opt.m) put_record(os, "adam.m." + name, t);
        for (const auto& [name, t] : extras->opt.v) put_record(os, "adam.v." + name, t);
        put_u64(os, extras->train_step);
        put_u32(os, extras->extent);
    }
    if (!os) throw DataError("checkpoint: write failure on " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "MMIX", 4) != 0)
        throw DataError("checkpoint: bad magic in " + path.string());
    const uint32_t version = get_u32(is);
    if (version != kFormatVersion)
        throw DataError("checkpoint: unsupported format version " + std::to_string(version));
    const uint32_t count = get_u32(is);
    LoadedCheckpoint out;
    for (uint32_t i = 0; i < count; ++i) {
        auto [name, t] = get_record(is);
        if (out.params.tensors.count(name))
            throw DataError("checkpoint: duplicate parameter name " + name);
        out.params.tensors[name] = std::move(t);
    }
    uint32_t extent_hint = 0;
    char opt_magic[4];
    if (is.read(opt_magic, 4)) {
        if (std::memcmp(opt_magic, "MMOP", 4) != 0)
            throw DataError("checkpoint: bad optimizer section magic");
        CheckpointExtras extras;
        extras.opt.step = static_cast<int64_t>(get_u64(is));
        const uint32_t moments = get_u32(is);
        for (uint32_t i = 0; i < moments; ++i) {
            auto [name, t] = get_record(is);
            if (name.rfind("adam.m.", 0) == 0)
                extras.opt.m[name.substr(7)] = std::move(t);
            else if (name.rfind("adam.v.", 0) == 0)
                extras.opt.v[name.substr(7)] = std::move(t);
            else
                throw DataError("checkpoint: unexpected moment record " + name);
        }
        extras.train_step = get_u64(is);
        extras.extent = get_u32(is);
        extent_hint = extras.extent;
        out.extras = std::move(extras);
    }
    out.params.arch = arch_from_tensors(out.params.tensors, extent_hint);
    return out;
}

}  // namespace multimix
