#include "multimix/metrics.hpp"

#include <cmath>

#include "doctest.h"
#include "multimix/rng.hpp"
#include "oracles.hpp"

using namespace multimix;

namespace {

Tensor<float> mask_from(const std::vector<uint8_t>& bits, int64_t h, int64_t w) {
    Tensor<float> m({h, w});
    for (int64_t i = 0; i < h * w; ++i) m[i] = bits[static_cast<size_t>(i)] ? 1.0f : 0.0f;
    return m;
}

std::vector<uint8_t> random_bits(int64_t n, Rng& rng, double p) {
    std::vector<uint8_t> out(static_cast<size_t>(n));
    for (auto& b : out) b = rng.bernoulli(p) ? 1 : 0;
    return out;
}

}  // namespace

TEST_CASE("classification metrics closed forms") {
    auto all_right = classification_metrics({0, 1, 0, 1}, {0, 1, 0, 1});
    CHECK(all_right.acc == 1.0);
    CHECK(all_right.f1[0] == 1.0);
    CHECK(all_right.f1[1] == 1.0);

    // class 1: TP=2 FP=1 FN=1 -> F1 = 2/3
    auto mixed = classification_metrics({1, 1, 1, 0, 0}, {1, 1, 0, 1, 0});
    CHECK(mixed.counts[1].tp == 2);
    CHECK(mixed.counts[1].fp == 1);
    CHECK(mixed.counts[1].fn == 1);
    CHECK(mixed.f1[1] == doctest::Approx(2.0 / 3.0));

    auto all_wrong = classification_metrics({1, 0}, {0, 1});
    CHECK(all_wrong.acc == 0.0);

    CHECK_THROWS_AS(classification_metrics({}, {}), DataError);
}

TEST_CASE("dice and jaccard closed forms") {
    const auto a = mask_from({1, 0, 0, 0}, 2, 2);
    const auto b = mask_from({1, 1, 0, 0}, 2, 2);
    const auto s = dice_jaccard(a, b);
    CHECK(s.ds == doctest::Approx(2.0 / 3.0));
    CHECK(s.js == doctest::Approx(0.5));

    const auto same = dice_jaccard(b, b);
    CHECK(same.ds == 1.0);
    CHECK(same.js == 1.0);

    const auto disjoint = dice_jaccard(mask_from({1, 0, 0, 0}, 2, 2),
                                       mask_from({0, 1, 0, 0}, 2, 2));
    CHECK(disjoint.ds == 0.0);
    CHECK(disjoint.js == 0.0);

    const auto empty = dice_jaccard(mask_from({0, 0, 0, 0}, 2, 2),
                                    mask_from({0, 0, 0, 0}, 2, 2));
    CHECK(empty.ds == 1.0);  // both-empty convention
    CHECK(empty.js == 1.0);
}

TEST_CASE("ssim closed forms and symmetry") {
    Rng rng(3);
    Tensor<float> img({8, 8});
    for (int64_t i = 0; i < 64; ++i) img[i] = static_cast<float>(rng.next_double());
    CHECK(ssim(img, img) == doctest::Approx(1.0));

    const auto zeros = Tensor<float>::full({8, 8}, 0.0f);
    const auto ones = Tensor<float>::full({8, 8}, 1.0f);
    const double c1 = 1e-4;
    CHECK(ssim(zeros, ones) == doctest::Approx(c1 / (1.0 + c1)).epsilon(1e-6));

    Tensor<float> other({8, 8});
    for (int64_t i = 0; i < 64; ++i) other[i] = static_cast<float>(rng.next_double());
    CHECK(ssim(img, other) == doctest::Approx(ssim(other, img)));

    CHECK_THROWS_AS(ssim(Tensor<float>({4, 4}), Tensor<float>({4, 4})), ShapeError);
}

TEST_CASE("average hausdorff closed forms") {
    Tensor<float> a({4, 4}), b({4, 4});
    a[0] = 1.0f;  // (0,0)
    b[3] = 1.0f;  // (0,3)
    CHECK(avg_hausdorff(a, b) == doctest::Approx(3.0));
    CHECK(avg_hausdorff(a, a) == 0.0);
    CHECK(avg_hausdorff(a, b) == doctest::Approx(avg_hausdorff(b, a)));

    // A={(0,0),(0,2)}, B={(0,0)} -> 0.5*((0+2)/2 + 0) = 0.5
    Tensor<float> c({4, 4}), d({4, 4});
    c[0] = 1.0f;
    c[2] = 1.0f;
    d[0] = 1.0f;
    CHECK(avg_hausdorff(c, d) == doctest::Approx(0.5));

    // conventions: both empty 0; one empty -> grid diagonal
    Tensor<float> empty({4, 4});
    CHECK(avg_hausdorff(empty, empty) == 0.0);
    CHECK(avg_hausdorff(a, empty) == doctest::Approx(std::sqrt(9.0 + 9.0)));
}

TEST_CASE("precision and recall closed forms") {
    const auto ref = mask_from({1, 1, 0, 0}, 2, 2);
    auto same = precision_recall(ref, ref);
    CHECK(same.first == 1.0);
    CHECK(same.second == 1.0);

    // prediction strictly contains the reference at double the area
    const auto super = mask_from({1, 1, 1, 1}, 2, 2);
    auto cover = precision_recall(super, ref);
    CHECK(cover.first == doctest::Approx(0.5));
    CHECK(cover.second == 1.0);

    auto degenerate = precision_recall(mask_from({0, 0, 0, 0}, 2, 2), ref);
    CHECK(degenerate.first == 0.0);  // empty prediction, non-empty reference
    CHECK(degenerate.second == 0.0);
}

TEST_CASE("roc auc closed forms, ties, and rank invariance") {
    CHECK(roc_auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}).auc == 1.0);
    CHECK(roc_auc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}).auc == doctest::Approx(0.5));
    CHECK(roc_auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}).auc == doctest::Approx(0.75));
    CHECK_THROWS_AS(roc_auc({0.1, 0.2}, {1, 1}), DataError);

    // invariant under strictly monotone transforms of the scores
    Rng rng(11);
    std::vector<double> scores;
    std::vector<int> labels;
    for (int i = 0; i < 40; ++i) {
        scores.push_back(rng.next_double());
        labels.push_back(rng.bernoulli(0.5) ? 1 : 0);
    }
    labels[0] = 0;
    labels[1] = 1;
    std::vector<double> warped;
    for (double s : scores) warped.push_back(std::exp(3.0 * s) + 7.0);
    CHECK(roc_auc(scores, labels).auc == doctest::Approx(roc_auc(warped, labels).auc));
}

TEST_CASE("bland altman rows and summary") {
    std::vector<Tensor<float>> preds, refs;
    preds.push_back(mask_from({1, 1, 1, 1}, 2, 2));  // 4 px... pred 10 px needs bigger grid
    refs.push_back(mask_from({1, 1, 1, 1}, 2, 2));
    auto same = bland_altman(preds, refs);
    CHECK(same.rows[0].diff == 0.0);

    // pred 10 px, ref 6 px -> (8, 4)
    std::vector<uint8_t> p(16, 0), r(16, 0);
    for (int i = 0; i < 10; ++i) p[static_cast<size_t>(i)] = 1;
    for (int i = 0; i < 6; ++i) r[static_cast<size_t>(i)] = 1;
    auto mixed = bland_altman({mask_from(p, 4, 4)}, {mask_from(r, 4, 4)});
    CHECK(mixed.rows[0].mean == doctest::Approx(8.0));
    CHECK(mixed.rows[0].diff == doctest::Approx(4.0));

    // summary mean equals the mean of the diffs
    auto multi = bland_altman({mask_from(p, 4, 4), mask_from(r, 4, 4)},
                              {mask_from(r, 4, 4), mask_from(p, 4, 4)});
    CHECK(multi.mean_diff == doctest::Approx((4.0 - 4.0) / 2.0));
}

TEST_CASE("set metrics match brute-force oracles on random 16x16 masks") {
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        const auto bits_a = random_bits(256, rng, 0.3);
        const auto bits_b = random_bits(256, rng, 0.3);
        const auto ma = mask_from(bits_a, 16, 16);
        const auto mb = mask_from(bits_b, 16, 16);

        const auto scores = dice_jaccard(ma, mb);
        CHECK(scores.ds == oracles::dice_sets(bits_a, bits_b));
        CHECK(scores.js == oracles::jaccard_sets(bits_a, bits_b));

        CHECK(avg_hausdorff(ma, mb) ==
              doctest::Approx(oracles::avg_hausdorff_sets(bits_a, bits_b, 16, 16))
                  .epsilon(1e-12));

        const auto pr = precision_recall(ma, mb);
        const auto pr_oracle = oracles::precision_recall_sets(bits_a, bits_b);
        CHECK(pr.first == pr_oracle.first);
        CHECK(pr.second == pr_oracle.second);

        // DS >= JS with equality only at the extremes
        CHECK(scores.ds >= scores.js);
        if (scores.ds != 0.0 && scores.ds != 1.0) CHECK(scores.ds > scores.js);
    }
}

TEST_CASE("set metrics are invariant under a shared pixel permutation") {
    Rng rng(19);
    const auto bits_a = random_bits(64, rng, 0.4);
    const auto bits_b = random_bits(64, rng, 0.4);
    std::vector<int64_t> perm(64);
    for (int64_t i = 0; i < 64; ++i) perm[static_cast<size_t>(i)] = i;
    fisher_yates_shuffle(perm, rng);
    std::vector<uint8_t> pa(64), pb(64);
    for (int64_t i = 0; i < 64; ++i) {
        pa[static_cast<size_t>(perm[static_cast<size_t>(i)])] = bits_a[static_cast<size_t>(i)];
        pb[static_cast<size_t>(perm[static_cast<size_t>(i)])] = bits_b[static_cast<size_t>(i)];
    }
    const auto orig = dice_jaccard(mask_from(bits_a, 8, 8), mask_from(bits_b, 8, 8));
    const auto moved = dice_jaccard(mask_from(pa, 8, 8), mask_from(pb, 8, 8));
    CHECK(orig.ds == moved.ds);
    CHECK(orig.js == moved.js);
    const auto pr0 = precision_recall(mask_from(bits_a, 8, 8), mask_from(bits_b, 8, 8));
    const auto pr1 = precision_recall(mask_from(pa, 8, 8), mask_from(pb, 8, 8));
    CHECK(pr0 == pr1);
}

TEST_CASE("auc matches the pairwise-counting oracle on random vectors") {
    Rng rng(23);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> scores;
        std::vector<int> labels;
        for (int i = 0; i < 30; ++i) {
            // quantized scores force tie handling
            scores.push_back(std::floor(rng.next_double() * 8.0) / 8.0);
            labels.push_back(rng.bernoulli(0.5) ? 1 : 0);
        }
        labels[0] = 0;
        labels[1] = 1;
        CHECK(roc_auc(scores, labels).auc ==
              doctest::Approx(oracles::auc_pairs(scores, labels)).epsilon(1e-12));
    }
}

TEST_CASE("binarize thresholds at one half") {
    Tensor<float> probs({1, 4}, {0.2f, 0.5f, 0.7f, 0.49f});
    const auto m = binarize(probs);
    CHECK(m[0] == 0.0f);
    CHECK(m[1] == 1.0f);
    CHECK(m[2] == 1.0f);
    CHECK(m[3] == 0.0f);
}
