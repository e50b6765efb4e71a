#include "multimix/losses.hpp"

#include <cmath>

#include "doctest.h"
#include "multimix/rng.hpp"

using namespace multimix;

TEST_CASE("hyperparameter invariants") {
    HyperParams hp;
    CHECK_NOTHROW(hp.validate());  // published defaults
    hp.t = 0.5;
    CHECK_THROWS_AS(hp.validate(), ConfigError);
    hp.t = 0.7;
    hp.lambda = -1;
    CHECK_THROWS_AS(hp.validate(), ConfigError);
}

TEST_CASE("cross_entropy point values") {
    TapeD tape;
    // confident and correct -> near zero
    auto l1 = tape.cross_entropy(tape.constant(Tensor<double>({1, 2}, {10.0, -10.0})), {0});
    CHECK(tape.value(l1)[0] == doctest::Approx(0.0).epsilon(1e-6));
    // uniform -> ln 2
    auto l2 = tape.cross_entropy(tape.constant(Tensor<double>({1, 2}, {0.0, 0.0})), {0});
    CHECK(tape.value(l2)[0] == doctest::Approx(std::log(2.0)));
    // everything masked out -> exactly zero
    std::vector<uint8_t> mask = {0, 0};
    auto l3 = tape.cross_entropy(tape.constant(Tensor<double>({2, 2}, {1.0, 2.0, 3.0, 4.0})),
                                 {0, 1}, &mask);
    CHECK(tape.value(l3)[0] == 0.0);
    // empty batch errors
    CHECK_THROWS_AS(tape.cross_entropy(tape.constant(Tensor<double>({0, 2})), {}), ShapeError);
}

TEST_CASE("pseudo_label threshold and tie semantics") {
    Tensor<float> probs({3, 2}, {0.8f, 0.2f, 0.6f, 0.4f, 0.5f, 0.5f});
    const auto plb = pseudo_label(probs, 0.7);
    CHECK(plb.labels[0] == 0);
    CHECK(plb.mask[0] == 1);  // 0.8 >= 0.7 retained
    CHECK(plb.mask[1] == 0);  // 0.6 rejected
    CHECK(plb.retained_count() == 1);

    const auto tie = pseudo_label(probs, 0.5);
    CHECK(tie.labels[2] == 0);  // lowest index wins the tie
    CHECK(tie.mask[2] == 1);    // 0.5 >= 0.5 retained
}

TEST_CASE("pseudo-label retention is non-increasing in the threshold") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor<float> probs({20, 2});
        for (int64_t i = 0; i < 20; ++i) {
            const float p = static_cast<float>(rng.next_double());
            probs.at2(i, 0) = p;
            probs.at2(i, 1) = 1.0f - p;
        }
        int prev = 21;
        for (double t = 0.5; t <= 0.96; t += 0.05) {
            const int count = pseudo_label(probs, t).retained_count();
            CHECK(count <= prev);
            prev = count;
        }
    }
}

TEST_CASE("classification objective composes supervised and pseudo-label terms") {
    TapeD tape;
    auto logits_l = tape.constant(Tensor<double>({1, 2}, {0.0, 0.0}));
    auto logits_g = tape.constant(Tensor<double>({1, 2}, {0.0, 0.0}));
    PseudoLabelBatch plb;
    plb.labels = {0};
    plb.mask = {1};
    plb.confidence = {0.9};

    auto with = classification_objective(tape, logits_l, {0}, logits_g, plb, 0.25);
    CHECK(tape.value(with.supervised)[0] == doctest::Approx(std::log(2.0)));
    CHECK(tape.value(with.unsupervised)[0] == doctest::Approx(0.25 * std::log(2.0)));
    CHECK(tape.value(with.total)[0] == doctest::Approx(1.25 * std::log(2.0)));
    CHECK(tape.value(with.total)[0] == doctest::Approx(0.8664).epsilon(1e-4));

    // lambda 0 leaves only the supervised term's value
    auto zero = classification_objective(tape, logits_l, {0}, logits_g, plb, 0.0);
    CHECK(tape.value(zero.total)[0] == doctest::Approx(std::log(2.0)));

    // nothing retained -> unsupervised term identically 0
    plb.mask = {0};
    auto none = classification_objective(tape, logits_l, {0}, logits_g, plb, 0.25);
    CHECK(tape.value(none.unsupervised)[0] == 0.0);
}

TEST_CASE("dice loss closed forms") {
    TapeD tape;
    // hard identical masks -> ~0
    Tensor<double> hard({1, 1, 2, 2}, {1.0, 0.0, 1.0, 0.0});
    auto l_same = tape.dice_loss(tape.constant(hard), hard);
    CHECK(tape.value(l_same)[0] == doctest::Approx(0.0).epsilon(1e-6));
    // disjoint: prediction ~0 where the target is all ones -> ~1
    Tensor<double> tiny = Tensor<double>::full({1, 1, 2, 2}, 1e-9);
    Tensor<double> ones = Tensor<double>::full({1, 1, 2, 2}, 1.0);
    auto l_disjoint = tape.dice_loss(tape.constant(tiny), ones);
    CHECK(tape.value(l_disjoint)[0] == doctest::Approx(1.0).epsilon(1e-5));
    // constant 0.5 vs half-ones 2x2: 1 - (2*1)/(2+2) = 0.5
    Tensor<double> half = Tensor<double>::full({1, 1, 2, 2}, 0.5);
    Tensor<double> half_mask({1, 1, 2, 2}, {1.0, 1.0, 0.0, 0.0});
    auto l_half = tape.dice_loss(tape.constant(half), half_mask);
    CHECK(tape.value(l_half)[0] == doctest::Approx(0.5).epsilon(1e-5));
}

TEST_CASE("dice loss stays within [0,1] under the stabilizer") {
    Rng rng(7);
    TapeD tape;
    for (int trial = 0; trial < 1000; ++trial) {
        Tensor<double> pred({1, 1, 4, 4});
        Tensor<double> target({1, 1, 4, 4});
        for (int64_t i = 0; i < 16; ++i) {
            pred[i] = rng.uniform(1e-6, 1.0 - 1e-6);
            target[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
        }
        const double v = tape.value(tape.dice_loss(tape.constant(pred), target))[0];
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("kl consistency closed forms and nonnegativity") {
    TapeD tape;
    Tensor<double> p = Tensor<double>::full({1, 1, 1, 2}, 0.75);
    Tensor<double> q = Tensor<double>::full({1, 1, 1, 2}, 0.5);
    auto v = tape.kl_consistency(p, tape.constant(q));
    CHECK(tape.value(v)[0] ==
          doctest::Approx(0.75 * std::log(1.5) + 0.25 * std::log(0.5)).epsilon(1e-9));
    CHECK(tape.value(v)[0] == doctest::Approx(0.13081).epsilon(1e-4));

    auto zero = tape.kl_consistency(q, tape.constant(q));
    CHECK(tape.value(zero)[0] == doctest::Approx(0.0));

    Rng rng(9);
    for (int trial = 0; trial < 1000; ++trial) {
        Tensor<double> a({1, 1, 1, 4}), b({1, 1, 1, 4});
        for (int64_t i = 0; i < 4; ++i) {
            a[i] = rng.next_double();
            b[i] = rng.next_double();
        }
        CHECK(tape.value(tape.kl_consistency(a, tape.constant(b)))[0] >= 0.0);
    }
}

TEST_CASE("kl target is detached: no gradient reaches the labeled prediction") {
    TapeD tape;
    auto pred_l = tape.leaf(Tensor<double>::full({1, 1, 1, 4}, 0.6));
    auto pred_u = tape.leaf(Tensor<double>::full({1, 1, 1, 4}, 0.4));
    // the objective snapshots pred_l's value as a constant target
    auto obj = segmentation_objective(tape, Tensor<double>::full({1, 1, 1, 4}, 1.0), pred_l,
                                      pred_u, 0.0, 1.0, 1e-6);
    tape.backward(obj.total);
    for (int64_t i = 0; i < 4; ++i) {
        CHECK(tape.grad(pred_l)[i] == 0.0);  // alpha=0 kills dice; KL must not leak
        CHECK(tape.grad(pred_u)[i] != 0.0);
    }
}

TEST_CASE("segmentation objective composes weighted terms") {
    TapeD tape;
    // labeled prediction constant 0.5 against a half-ones mask gives dice 0.5;
    // labeled 0.75 against unlabeled 0.5 gives the KL 0.13081 closed form
    Tensor<double> half = Tensor<double>::full({1, 1, 2, 2}, 0.5);
    Tensor<double> mask({1, 1, 2, 2}, {1.0, 1.0, 0.0, 0.0});

    auto dice_only = segmentation_objective(tape, mask, tape.constant(half),
                                            typename TapeD::Var{}, 5.0, 0.01, 1e-6);
    CHECK(tape.value(dice_only.total)[0] == doctest::Approx(2.5).epsilon(1e-5));
    CHECK(!dice_only.kl.valid());  // unlabeled stream absent: KL term dropped

    auto kl_part = segmentation_objective(tape, mask,
                                          tape.constant(Tensor<double>::full({1, 1, 2, 2}, 0.75)),
                                          tape.constant(half), 0.0, 0.01, 1e-6);
    CHECK(tape.value(kl_part.kl)[0] == doctest::Approx(0.01 * 0.13081).epsilon(1e-3));

    // alpha*dice + beta*KL = 5*0.5 + 0.01*0.13081 = 2.5013081
    const double combined = tape.value(dice_only.dice)[0] + tape.value(kl_part.kl)[0];
    CHECK(combined == doctest::Approx(2.5013081).epsilon(1e-4));
}

TEST_CASE("total loss composes and doubles with lambda at the report level") {
    TapeD tape;
    auto logits_l = tape.constant(Tensor<double>({1, 2}, {0.0, 0.0}));
    auto logits_g = tape.constant(Tensor<double>({1, 2}, {0.0, 0.0}));
    PseudoLabelBatch plb;
    plb.labels = {0};
    plb.mask = {1};
    plb.confidence = {0.9};
    Tensor<double> half = Tensor<double>::full({1, 1, 2, 2}, 0.5);
    Tensor<double> mask({1, 1, 2, 2}, {1.0, 1.0, 0.0, 0.0});

    auto build = [&](double lambda) {
        auto cls = classification_objective(tape, logits_l, {0}, logits_g, plb, lambda);
        auto seg = segmentation_objective(tape, mask, tape.constant(half),
                                          typename TapeD::Var{}, 5.0, 0.01, 1e-6);
        return total_loss(tape, cls, seg, plb.retained_count());
    };
    const auto base = build(0.25);
    CHECK(base.report.total ==
          doctest::Approx(base.report.c_sup + base.report.c_unsup + base.report.s_dice +
                          base.report.s_kl)
              .epsilon(1e-6));
    const auto doubled = build(0.5);
    CHECK(doubled.report.c_unsup == doctest::Approx(2.0 * base.report.c_unsup));
    CHECK(doubled.report.c_sup == base.report.c_sup);
    CHECK(base.report.retained == 1);

    // addition example: 0.8664 + 2.5013 = 3.3677
    CHECK(0.8664 + 2.5013 == doctest::Approx(3.3677));
}

TEST_CASE("pseudo-labels carry no gradient through the label path") {
    // perturbing the weak logits changes only the labels/mask inputs, which are
    // plain integers; with both fixed, gradients w.r.t. strong logits match
    TapeD t1, t2;
    PseudoLabelBatch plb;
    plb.labels = {1, 0};
    plb.mask = {1, 1};
    plb.confidence = {0.9, 0.8};
    Tensor<double> strong({2, 2}, {0.3, -0.2, 0.1, 0.4});
    auto g1 = [&] {
        auto v = t1.leaf(strong);
        auto ce = t1.cross_entropy(v, plb.labels, &plb.mask);
        t1.backward(ce);
        return t1.grad(v).vec();
    }();
    auto g2 = [&] {
        auto v = t2.leaf(strong);
        auto ce = t2.cross_entropy(v, plb.labels, &plb.mask);
        t2.backward(ce);
        return t2.grad(v).vec();
    }();
    CHECK(g1 == g2);
}
