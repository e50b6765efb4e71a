#include "multimix/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "multimix/errors.hpp"

namespace multimix {

ClassificationMetrics classification_metrics(const std::vector<int>& pred,
                                             const std::vector<int>& truth, int classes) {
    if (pred.empty() || pred.size() != truth.size())
        throw DataError("classification_metrics: empty or mismatched inputs");
    ClassificationMetrics out;
    out.counts.assign(static_cast<size_t>(classes), ConfusionCounts{});
    int64_t correct = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] == truth[i]) ++correct;
        for (int c = 0; c < classes; ++c) {
            auto& cc = out.counts[static_cast<size_t>(c)];
            const bool p = pred[i] == c, t = truth[i] == c;
            cc.tp += (p && t);
            cc.fp += (p && !t);
            cc.fn += (!p && t);
            cc.tn += (!p && !t);
        }
    }
    out.acc = static_cast<double>(correct) / static_cast<double>(pred.size());
    out.f1.resize(static_cast<size_t>(classes));
    for (int c = 0; c < classes; ++c) {
        const auto& cc = out.counts[static_cast<size_t>(c)];
        const double denom = static_cast<double>(2 * cc.tp + cc.fp + cc.fn);
        out.f1[static_cast<size_t>(c)] =
            denom == 0 ? 0.0 : 2.0 * static_cast<double>(cc.tp) / denom;
    }
    return out;
}

namespace {

void expect_binary_pair(const Tensor<float>& a, const Tensor<float>& b, const char* what) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(what) + ": mask shapes differ, " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

}  // namespace

MaskPairScores dice_jaccard(const Tensor<float>& pred, const Tensor<float>& ref) {
    expect_binary_pair(pred, ref, "dice_jaccard");
    int64_t inter = 0, a = 0, b = 0, uni = 0;
    for (int64_t i = 0; i < pred.numel(); ++i) {
        const bool p = pred[i] != 0.0f, r = ref[i] != 0.0f;
        inter += (p && r);
        uni += (p || r);
        a += p;
        b += r;
    }
    MaskPairScores out;
    out.ds = (a + b == 0) ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
    out.js = (uni == 0) ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    return out;
}

double ssim(const Tensor<float>& a, const Tensor<float>& b) {
    expect_binary_pair(a, b, "ssim");
    const int win = 7;
    const int64_t h = a.dim(a.rank() - 2), w = a.dim(a.rank() - 1);
    if (h < win || w < win) throw ShapeError("ssim: image smaller than 7x7 window");
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const double n = static_cast<double>(win * win);
    double total = 0;
    int64_t windows = 0;
    for (int64_t i = 0; i + win <= h; ++i) {
        for (int64_t j = 0; j + win <= w; ++j) {
            double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
            for (int64_t y = 0; y < win; ++y)
                for (int64_t x = 0; x < win; ++x) {
                    const double va = a[(i + y) * w + (j + x)];
                    const double vb = b[(i + y) * w + (j + x)];
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            const double mua = sa / n, mub = sb / n;
            const double vara = saa / n - mua * mua;
            const double varb = sbb / n - mub * mub;
            const double cov = sab / n - mua * mub;
            total += ((2 * mua * mub + c1) * (2 * cov + c2)) /
                     ((mua * mua + mub * mub + c1) * (vara + varb + c2));
            ++windows;
        }
    }
    return total / static_cast<double>(windows);
}

double avg_hausdorff(const Tensor<float>& pred, const Tensor<float>& ref) {
    expect_binary_pair(pred, ref, "avg_hausdorff");
    const int64_t h = pred.dim(pred.rank() - 2), w = pred.dim(pred.rank() - 1);
    std::vector<std::pair<int64_t, int64_t>> fa, fb;
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) {
            if (pred[i * w + j] != 0.0f) fa.emplace_back(i, j);
            if (ref[i * w + j] != 0.0f) fb.emplace_back(i, j);
        }
    if (fa.empty() && fb.empty()) return 0.0;
    if (fa.empty() || fb.empty())
        return std::sqrt(static_cast<double>((h - 1) * (h - 1) + (w - 1) * (w - 1)));
    auto directed = [](const auto& from, const auto& to) {
        double total = 0;
        for (const auto& p : from) {
            double best = std::numeric_limits<double>::max();
            for (const auto& q : to) {
                const double dr = static_cast<double>(p.first - q.first);
                const double dc = static_cast<double>(p.second - q.second);
                best = std::min(best, dr * dr + dc * dc);
            }
            total += std::sqrt(best);
        }
        return total / static_cast<double>(from.size());
    };
    return 0.5 * (directed(fa, fb) + directed(fb, fa));
}

std::pair<double, double> precision_recall(const Tensor<float>& pred, const Tensor<float>& ref) {
    expect_binary_pair(pred, ref, "precision_recall");
    int64_t tp = 0, fp = 0, fn = 0;
    for (int64_t i = 0; i < pred.numel(); ++i) {
        const bool p = pred[i] != 0.0f, r = ref[i] != 0.0f;
        tp += (p && r);
        fp += (p && !r);
        fn += (!p && r);
    }
    const bool both_empty = (tp + fp == 0) && (tp + fn == 0);
    const double precision =
        (tp + fp == 0) ? (both_empty ? 1.0 : 0.0)
                       : static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall = (tp + fn == 0)
                              ? (both_empty ? 1.0 : 0.0)
                              : static_cast<double>(tp) / static_cast<double>(tp + fn);
    return {precision, recall};
}

RocResult roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw DataError("roc_auc: empty or mismatched inputs");
    int64_t pos = 0, neg = 0;
    for (int v : labels) (v == 1 ? pos : neg)++;
    if (pos == 0 || neg == 0) throw DataError("roc_auc: both classes must be present");

    // Mann-Whitney with midranks
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    double rank_sum_pos = 0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;  // ranks are 1-based
        for (size_t k = i; k <= j; ++k)
            if (labels[order[k]] == 1) rank_sum_pos += midrank;
        i = j + 1;
    }
    RocResult out;
    out.auc = (rank_sum_pos - static_cast<double>(pos) * (static_cast<double>(pos) + 1.0) / 2.0) /
              (static_cast<double>(pos) * static_cast<double>(neg));

    // threshold sweep, descending: predict positive when score >= threshold
    std::vector<double> uniq(scores);
    std::sort(uniq.begin(), uniq.end(), std::greater<>());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    out.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    for (double thr : uniq) {
        int64_t tp = 0, fp = 0;
        for (size_t k = 0; k < scores.size(); ++k) {
            if (scores[k] >= thr) (labels[k] == 1 ? tp : fp)++;
        }
        out.points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                              static_cast<double>(tp) / static_cast<double>(pos), thr});
    }
    return out;
}

BlandAltmanSummary bland_altman(const std::vector<Tensor<float>>& preds,
                                const std::vector<Tensor<float>>& refs) {
    if (preds.size() != refs.size()) throw DataError("bland_altman: unpaired masks");
    BlandAltmanSummary out;
    for (size_t i = 0; i < preds.size(); ++i) {
        int64_t a = 0, b = 0;
        for (int64_t j = 0; j < preds[i].numel(); ++j) a += preds[i][j] != 0.0f;
        for (int64_t j = 0; j < refs[i].numel(); ++j) b += refs[i][j] != 0.0f;
        out.rows.push_back({0.5 * static_cast<double>(a + b), static_cast<double>(a - b)});
    }
    if (!out.rows.empty()) {
        double sum = 0;
        for (const auto& r : out.rows) sum += r.diff;
        out.mean_diff = sum / static_cast<double>(out.rows.size());
        double var = 0;
        for (const auto& r : out.rows) {
            const double d = r.diff - out.mean_diff;
            var += d * d;
        }
        const double sd = std::sqrt(var / static_cast<double>(out.rows.size()));
        out.lower_limit = out.mean_diff - 1.96 * sd;
        out.upper_limit = out.mean_diff + 1.96 * sd;
    }
    return out;
}

Tensor<float> binarize(const Tensor<float>& probs, float threshold) {
    Tensor<float> out(probs.shape());
    for (int64_t i = 0; i < probs.numel(); ++i) out[i] = probs[i] >= threshold ? 1.0f : 0.0f;
    return out;
}

}  // namespace multimix
