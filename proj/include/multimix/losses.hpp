#pragma once

#include <cstdint>
#include <vector>

#include "multimix/tape.hpp"
#include "multimix/tensor.hpp"

namespace multimix {

struct HyperParams {
    double t = 0.7;        // pseudo-label confidence threshold
    double lambda = 0.25;  // unsupervised classification weight
    double alpha = 5.0;    // supervised segmentation weight
    double beta = 0.01;    // consistency weight
    int m = 10;            // minibatch size per stream
    double eps_dice = 1e-6;
    double eps_kl = 1e-6;

    void validate() const;
};

struct PseudoLabelBatch {
    std::vector<int> labels;          // argmax class, lowest index on ties
    std::vector<uint8_t> mask;        // retained iff confidence >= t
    std::vector<double> confidence;   // max softmax probability
    int retained_count() const {
        int n = 0;
        for (uint8_t v : mask) n += v;
        return n;
    }
};

// No gradient flows through pseudo-labels: this takes plain probabilities.
template <typename T>
PseudoLabelBatch pseudo_label(const Tensor<T>& probs, double threshold);

// Weighted loss components as logged and composed: total = c_sup + c_unsup +
// s_dice + s_kl, where c_unsup/s_dice/s_kl already include lambda/alpha/beta.
struct LossReport {
    double total = 0;
    double c_sup = 0;
    double c_unsup = 0;
    double s_dice = 0;
    double s_kl = 0;
    int retained = 0;
};

template <typename T>
struct ClassificationObjective {
    typename Tape<T>::Var total;
    typename Tape<T>::Var supervised;
    typename Tape<T>::Var unsupervised;  // invalid when no unlabeled term
};

// CE(c_l, logits_l) + lambda * CE_masked(c_p, logits_g). Pass an invalid
// logits_g Var to drop the unsupervised term entirely.
template <typename T>
ClassificationObjective<T> classification_objective(Tape<T>& tape,
                                                    typename Tape<T>::Var logits_labeled,
                                                    const std::vector<int>& labels,
                                                    typename Tape<T>::Var logits_strong,
                                                    const PseudoLabelBatch& pseudo,
                                                    double lambda);

template <typename T>
struct SegmentationObjective {
    typename Tape<T>::Var total;
    typename Tape<T>::Var dice;  // already scaled by alpha
    typename Tape<T>::Var kl;    // already scaled by beta; invalid when absent
};

// alpha * dice(pred_l, mask) + beta * KL(detach(pred_l) || pred_u). Pass an
// invalid pred_u to drop the consistency term (ablations, empty stream).
template <typename T>
SegmentationObjective<T> segmentation_objective(Tape<T>& tape, const Tensor<T>& mask,
                                                typename Tape<T>::Var pred_labeled,
                                                typename Tape<T>::Var pred_unlabeled,
                                                double alpha, double beta, double eps_dice);

// Composes the classification and segmentation objectives into the minibatch
// loss scalar plus its logged report.
template <typename T>
struct TotalLoss {
    typename Tape<T>::Var loss;
    LossReport report;
};

template <typename T>
TotalLoss<T> total_loss(Tape<T>& tape, const ClassificationObjective<T>& cls,
                        const SegmentationObjective<T>& seg, int retained);

}  // namespace multimix
