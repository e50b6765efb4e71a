#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "multimix/tensor.hpp"

namespace multimix {

struct ConfusionCounts {
    int64_t tp = 0, fp = 0, tn = 0, fn = 0;
};

struct ClassificationMetrics {
    double acc = 0;
    std::vector<double> f1;  // per class
    std::vector<ConfusionCounts> counts;
};

ClassificationMetrics classification_metrics(const std::vector<int>& pred,
                                             const std::vector<int>& truth, int classes = 2);

// Binary masks as {0,1} float tensors of shape [h,w] (or any matching shape
// with the last two dims spatial for hausdorff).
struct MaskPairScores {
    double ds = 0, js = 0;
};

MaskPairScores dice_jaccard(const Tensor<float>& pred, const Tensor<float>& ref);

// 7x7 uniform window, C1=0.01^2, C2=0.03^2 for data range 1, mean over valid
// windows only.
double ssim(const Tensor<float>& a, const Tensor<float>& b);

// Symmetric mean of nearest-neighbour Euclidean distances between foreground
// pixel sets. Conventions: both empty -> 0; exactly one empty -> length of the
// pixel-grid diagonal (max possible pixel distance), a documented sentinel for
// degenerate predictions.
double avg_hausdorff(const Tensor<float>& pred, const Tensor<float>& ref);

// Pixelwise precision/recall; 0/0 resolves to 1 when both masks are empty,
// else 0.
std::pair<double, double> precision_recall(const Tensor<float>& pred, const Tensor<float>& ref);

struct RocPoint {
    double fpr = 0, tpr = 0, threshold = 0;
};

struct RocResult {
    double auc = 0;
    std::vector<RocPoint> points;
};

// Rank (Mann-Whitney) AUC with midranks for ties; points from sweeping the
// unique score thresholds. Throws DataError when only one class is present.
RocResult roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct BlandAltmanRow {
    double mean = 0;  // (|pred| + |ref|) / 2 in pixels
    double diff = 0;  // |pred| - |ref|
};

struct BlandAltmanSummary {
    std::vector<BlandAltmanRow> rows;
    double mean_diff = 0;
    double lower_limit = 0;  // mean - 1.96 sd
    double upper_limit = 0;  // mean + 1.96 sd
};

BlandAltmanSummary bland_altman(const std::vector<Tensor<float>>& preds,
                                const std::vector<Tensor<float>>& refs);

// Per-run evaluation record; unpopulated fields stay NaN in CSV output.
struct MetricsReport {
    double acc = 0;
    double f1_normal = 0;
    double f1_abnormal = 0;
    double ds = 0;
    double js = 0;
    double ssim = 0;
    double hd = 0;
    double precision = 0;
    double recall = 0;
    double auc = 0;
    std::vector<RocPoint> roc_rows;
    std::vector<BlandAltmanRow> bland_altman_rows;
    std::vector<double> per_image_dice;
    bool has_classification = false;
    bool has_segmentation = false;
};

Tensor<float> binarize(const Tensor<float>& probs, float threshold = 0.5f);

}  // namespace multimix
