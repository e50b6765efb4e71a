#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "multimix/config.hpp"
#include "multimix/data.hpp"
#include "multimix/losses.hpp"
#include "multimix/metrics.hpp"
#include "multimix/model.hpp"
#include "multimix/optim.hpp"

namespace multimix {

struct DatasetBundle {
    Dataset cls_labeled;
    Dataset cls_unlabeled;  // may be empty
    Dataset seg_labeled;
    Dataset seg_unlabeled;  // may be empty
};

// Loads the four manifests named by the config and applies the label budgets
// (first N rows of the labeled streams).
DatasetBundle load_bundle(const TrainConfig& cfg);

struct LossRow {
    int64_t step = 0;
    double lr = 0;
    LossReport report;
};

struct TrainResult {
    ModelParams<float> params;
    AdamState opt;
    std::vector<LossRow> log;  // rows for the steps this call executed
    int64_t steps = 0;         // total steps completed (including resumed ones)
};

struct ResumeState {
    ModelParams<float> params;
    AdamState opt;
    int64_t step = 0;
};

// Runs Algorithm-1-style minibatch training: four m-sized draws per step,
// pseudo-labels from the weak views, saliency bridge for the segmentation
// streams, combined loss, backward, Adam. One epoch is one pass over the
// larger labeled stream; shorter streams cycle with their own per-epoch
// reshuffles. All randomness hashes (seed, purpose, position), so a resumed
// run reproduces the uninterrupted one exactly.
TrainResult train(const TrainConfig& cfg, const DatasetBundle& data,
                  const ResumeState* resume = nullptr);

enum class Task { classification, segmentation };

MetricsReport evaluate(const ModelParams<float>& params, const Dataset& dataset, Task task);

// step,L_total,L_c_sup,L_c_unsup,L_s_dice,L_s_kl,retained_count  (+ lr)
std::string loss_log_csv(const std::vector<LossRow>& rows);

std::string metrics_csv(const MetricsReport& report, const std::string& dataset_name);
std::string roc_csv(const MetricsReport& report);
std::string bland_altman_csv(const MetricsReport& report);
std::string per_image_dice_csv(const MetricsReport& report);

}  // namespace multimix
