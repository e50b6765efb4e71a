#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "multimix/model.hpp"
#include "multimix/optim.hpp"

namespace multimix {

// Little-endian binary checkpoint:
//   magic "MMIX", format version u32, param count u32,
//   per param: name length u16, UTF-8 name, rank u8, extents u32 each,
//              float32 data.
// Trainer checkpoints append an optimizer section:
//   magic "MMOP", adam step u64, moment count u32, then first- and
//   second-moment tensors in the same record format under "adam.m."/"adam.v."
//   prefixes, plus the training step u64 and input extent u32.
// Byte-exact roundtrip is part of the contract.

struct CheckpointExtras {
    AdamState opt;
    uint64_t train_step = 0;
    uint32_t extent = 0;
};

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params,
                     const CheckpointExtras* extras = nullptr);

struct LoadedCheckpoint {
    ModelParams<float> params;  // arch reconstructed from the parameter inventory
    std::optional<CheckpointExtras> extras;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace multimix
