#include "multimix/losses.hpp"

#include "multimix/errors.hpp"

namespace multimix {

void HyperParams::validate() const {
    if (!(t > 0.5 && t <= 1.0)) throw ConfigError("hp.t must lie in (0.5, 1]");
    if (lambda < 0 || alpha < 0 || beta < 0)
        throw ConfigError("hp weights lambda/alpha/beta must be >= 0");
    if (m < 1) throw ConfigError("hp.m must be >= 1");
}

template <typename T>
PseudoLabelBatch pseudo_label(const Tensor<T>& probs, double threshold) {
    expect_rank(probs, 2, "pseudo_label probs");
    const int64_t m = probs.dim(0), k = probs.dim(1);
    PseudoLabelBatch out;
    out.labels.resize(static_cast<size_t>(m));
    out.mask.resize(static_cast<size_t>(m));
    out.confidence.resize(static_cast<size_t>(m));
    for (int64_t i = 0; i < m; ++i) {
        int best = 0;
        for (int64_t j = 1; j < k; ++j)
            if (probs.at2(i, j) > probs.at2(i, best)) best = static_cast<int>(j);
        const double conf = static_cast<double>(probs.at2(i, best));
        out.labels[static_cast<size_t>(i)] = best;
        out.confidence[static_cast<size_t>(i)] = conf;
        out.mask[static_cast<size_t>(i)] = conf >= threshold ? 1 : 0;
    }
    return out;
}

template <typename T>
ClassificationObjective<T> classification_objective(Tape<T>& tape,
                                                    typename Tape<T>::Var logits_labeled,
                                                    const std::vector<int>& labels,
                                                    typename Tape<T>::Var logits_strong,
                                                    const PseudoLabelBatch& pseudo,
                                                    double lambda) {
    ClassificationObjective<T> out;
    out.supervised = tape.cross_entropy(logits_labeled, labels, nullptr);
    out.total = out.supervised;
    if (logits_strong.valid()) {
        out.unsupervised = tape.scale(
            tape.cross_entropy(logits_strong, pseudo.labels, &pseudo.mask), static_cast<T>(lambda));
        out.total = tape.add(out.supervised, out.unsupervised);
    }
    return out;
}

template <typename T>
SegmentationObjective<T> segmentation_objective(Tape<T>& tape, const Tensor<T>& mask,
                                                typename Tape<T>::Var pred_labeled,
                                                typename Tape<T>::Var pred_unlabeled,
                                                double alpha, double beta, double eps_dice) {
    SegmentationObjective<T> out;
    out.dice = tape.scale(tape.dice_loss(pred_labeled, mask, static_cast<T>(eps_dice)),
                          static_cast<T>(alpha));
    out.total = out.dice;
    if (pred_unlabeled.valid()) {
        // labeled prediction is the target; only the unlabeled side gets gradient
        Tensor<T> target = tape.value(pred_labeled);
        out.kl = tape.scale(tape.kl_consistency(target, pred_unlabeled), static_cast<T>(beta));
        out.total = tape.add(out.dice, out.kl);
    }
    return out;
}

template <typename T>
TotalLoss<T> total_loss(Tape<T>& tape, const ClassificationObjective<T>& cls,
                        const SegmentationObjective<T>& seg, int retained) {
    TotalLoss<T> out;
    out.loss = tape.add(cls.total, seg.total);
    out.report.c_sup = static_cast<double>(tape.value(cls.supervised)[0]);
    out.report.c_unsup =
        cls.unsupervised.valid() ? static_cast<double>(tape.value(cls.unsupervised)[0]) : 0.0;
    out.report.s_dice = static_cast<double>(tape.value(seg.dice)[0]);
    out.report.s_kl = seg.kl.valid() ? static_cast<double>(tape.value(seg.kl)[0]) : 0.0;
    out.report.total = static_cast<double>(tape.value(out.loss)[0]);
    out.report.retained = retained;
    return out;
}

template PseudoLabelBatch pseudo_label<float>(const Tensor<float>&, double);
template PseudoLabelBatch pseudo_label<double>(const Tensor<double>&, double);
template struct ClassificationObjective<float>;
template struct ClassificationObjective<double>;
template ClassificationObjective<float> classification_objective<float>(
    Tape<float>&, Tape<float>::Var, const std::vector<int>&, Tape<float>::Var,
    const PseudoLabelBatch&, double);
template ClassificationObjective<double> classification_objective<double>(
    Tape<double>&, Tape<double>::Var, const std::vector<int>&, Tape<double>::Var,
    const PseudoLabelBatch&, double);
template SegmentationObjective<float> segmentation_objective<float>(Tape<float>&,
                                                                    const Tensor<float>&,
                                                                    Tape<float>::Var,
                                                                    Tape<float>::Var, double,
                                                                    double, double);
template SegmentationObjective<double> segmentation_objective<double>(Tape<double>&,
                                                                      const Tensor<double>&,
                                                                      Tape<double>::Var,
                                                                      Tape<double>::Var, double,
                                                                      double, double);
template TotalLoss<float> total_loss<float>(Tape<float>&, const ClassificationObjective<float>&,
                                            const SegmentationObjective<float>&, int);
template TotalLoss<double> total_loss<double>(Tape<double>&,
                                              const ClassificationObjective<double>&,
                                              const SegmentationObjective<double>&, int);

}  // namespace multimix
