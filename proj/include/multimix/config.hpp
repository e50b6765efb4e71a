#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "multimix/augment.hpp"
#include "multimix/losses.hpp"
#include "multimix/model.hpp"

namespace multimix {

// Flat `key = value` UTF-8 text with `#` comments.
std::map<std::string, std::string> parse_kv_file(const std::filesystem::path& path);

// `key=value` strings from --set flags; later entries win.
void apply_overrides(std::map<std::string, std::string>& kv,
                     const std::vector<std::string>& overrides);

struct TrainConfig {
    ArchDescriptor arch;
    HyperParams hp;
    double width_multiplier = 1.0;

    double lr = 1e-4;
    double lr_decay_factor = 0.1;
    int64_t lr_decay_epochs = 8;  // 0 disables decay
    int64_t epochs = 10;
    int64_t max_steps = 0;  // 0: run epochs * steps-per-epoch
    uint64_t seed = 1;
    int64_t checkpoint_every = 0;  // steps; 0 disables periodic checkpoints
    bool strict_deterministic = false;

    int64_t budget_cls = -1;  // -1: full labeled stream
    int64_t budget_seg = -1;

    std::filesystem::path cls_labeled, cls_unlabeled, seg_labeled, seg_unlabeled;
    std::filesystem::path out_dir;

    AugmentRanges aug;

    void validate() const;
};

// Builds a TrainConfig from parsed keys; unknown keys are config errors.
// Relative manifest paths resolve against base_dir.
TrainConfig make_train_config(const std::map<std::string, std::string>& kv,
                              const std::filesystem::path& base_dir);

// Full resolved `key = value` echo, stable ordering; the run header block.
std::string render_config(const TrainConfig& cfg);

}  // namespace multimix
