#include "multimix/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>

#include "multimix/augment.hpp"
#include "multimix/checkpoint.hpp"
#include "multimix/errors.hpp"
#include "multimix/kernels.hpp"
#include "multimix/saliency.hpp"

namespace multimix {

namespace {

// Per-stream sampling without replacement: a fresh permutation per stream
// epoch, derived from (seed, stream tag, epoch) so streams never interact.
class StreamCycler {
  public:
    StreamCycler(uint64_t seed, const char* tag, int64_t n)
        : seed_(hash_mix(seed, hash_str(tag))), n_(n) {}

    int64_t index_at(int64_t global_pos) {
        const int64_t epoch = global_pos / n_;
        if (epoch != cached_epoch_) {
            perm_.resize(static_cast<size_t>(n_));
            std::iota(perm_.begin(), perm_.end(), int64_t{0});
            Rng rng(hash_mix(seed_, static_cast<uint64_t>(epoch)));
            fisher_yates_shuffle(perm_, rng);
            cached_epoch_ = epoch;
        }
        return perm_[static_cast<size_t>(global_pos % n_)];
    }

  private:
    uint64_t seed_;
    int64_t n_;
    int64_t cached_epoch_ = -1;
    std::vector<int64_t> perm_;
};

Tensor<float> stack_images(const std::vector<Tensor<float>>& images) {
    const int64_t m = static_cast<int64_t>(images.size());
    const int64_t h = images[0].dim(1), w = images[0].dim(2);
    Tensor<float> out({m, 1, h, w});
    for (int64_t i = 0; i < m; ++i)
        std::copy(images[static_cast<size_t>(i)].data(),
                  images[static_cast<size_t>(i)].data() + h * w, out.data() + i * h * w);
    return out;
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

DatasetBundle load_bundle(const TrainConfig& cfg) {
    DatasetBundle b;
    b.cls_labeled = load_dataset(load_manifest(cfg.cls_labeled, StreamTag::cls_labeled),
                                 cfg.arch.extent);
    b.seg_labeled = load_dataset(load_manifest(cfg.seg_labeled, StreamTag::seg_labeled),
                                 cfg.arch.extent);
    if (!cfg.cls_unlabeled.empty())
        b.cls_unlabeled = load_dataset(load_manifest(cfg.cls_unlabeled, StreamTag::cls_unlabeled),
                                       cfg.arch.extent);
    if (!cfg.seg_unlabeled.empty())
        b.seg_unlabeled = load_dataset(load_manifest(cfg.seg_unlabeled, StreamTag::seg_unlabeled),
                                       cfg.arch.extent);
    if (cfg.budget_cls >= 0) {
        if (cfg.budget_cls > static_cast<int64_t>(b.cls_labeled.samples.size()))
            throw ConfigError("data.budget_cls exceeds labeled classification stream size");
        b.cls_labeled.samples.resize(static_cast<size_t>(cfg.budget_cls));
    }
    if (cfg.budget_seg >= 0) {
        if (cfg.budget_seg > static_cast<int64_t>(b.seg_labeled.samples.size()))
            throw ConfigError("data.budget_seg exceeds labeled segmentation stream size");
        b.seg_labeled.samples.resize(static_cast<size_t>(cfg.budget_seg));
    }
    if (b.cls_labeled.samples.empty() || b.seg_labeled.samples.empty())
        throw DataError("train: labeled streams must be non-empty");
    return b;
}

TrainResult train(const TrainConfig& cfg, const DatasetBundle& data, const ResumeState* resume) {
    cfg.validate();
    if (cfg.strict_deterministic) kernels::set_exec_mode(kernels::Exec::serial);

    const int64_t m = cfg.hp.m;
    const int64_t n_cls = static_cast<int64_t>(data.cls_labeled.samples.size());
    const int64_t n_seg = static_cast<int64_t>(data.seg_labeled.samples.size());
    const int64_t n_cls_u = static_cast<int64_t>(data.cls_unlabeled.samples.size());
    const int64_t n_seg_u = static_cast<int64_t>(data.seg_unlabeled.samples.size());
    const bool use_ssl_cls = cfg.arch.ssl_classification_enabled && n_cls_u > 0;
    const bool use_ssl_seg = cfg.arch.ssl_segmentation_enabled && n_seg_u > 0;

    const int64_t epoch_len = (std::max(n_cls, n_seg) + m - 1) / m;
    const int64_t total_steps = cfg.max_steps > 0 ? cfg.max_steps : cfg.epochs * epoch_len;

    TrainResult result;
    if (resume) {
        result.params = resume->params;
        result.opt = resume->opt;
    } else {
        result.params = init_params<float>(cfg.seed, cfg.arch);
    }
    const int64_t start_step = resume ? resume->step : 0;

    StreamCycler cyc_cls(cfg.seed, "stream.cls_labeled", n_cls);
    StreamCycler cyc_seg(cfg.seed, "stream.seg_labeled", n_seg);
    StreamCycler cyc_cls_u(cfg.seed, "stream.cls_unlabeled", std::max<int64_t>(1, n_cls_u));
    StreamCycler cyc_seg_u(cfg.seed, "stream.seg_unlabeled", std::max<int64_t>(1, n_seg_u));

    for (int64_t step = start_step; step < total_steps; ++step) {
        const int64_t epoch = step / epoch_len;
        const double lr = lr_schedule(epoch, cfg.lr, cfg.lr_decay_factor, cfg.lr_decay_epochs);
        const uint64_t step_seed = hash_mix(cfg.seed, static_cast<uint64_t>(step));

        // ---- assemble the four m-sized draws ----
        std::vector<Tensor<float>> cls_imgs;
        std::vector<int> cls_labels;
        for (int64_t i = 0; i < m; ++i) {
            const int64_t pos = step * m + i;
            const auto& s = data.cls_labeled.samples[static_cast<size_t>(cyc_cls.index_at(pos))];
            Rng rng(hash_mix(cfg.seed, hash_mix(hash_str("aug.cls_labeled"),
                                                static_cast<uint64_t>(pos))));
            cls_imgs.push_back(weak_augment(s.image, rng));  // weak aug on labeled data too
            cls_labels.push_back(s.label);
        }

        std::vector<Tensor<float>> seg_imgs, seg_masks;
        for (int64_t i = 0; i < m; ++i) {
            const int64_t pos = step * m + i;
            const auto& s = data.seg_labeled.samples[static_cast<size_t>(cyc_seg.index_at(pos))];
            seg_imgs.push_back(s.image);
            seg_masks.push_back(s.mask);
        }

        std::vector<Tensor<float>> weak_imgs, strong_imgs;
        if (use_ssl_cls) {
            for (int64_t i = 0; i < m; ++i) {
                const int64_t pos = step * m + i;
                const auto& s =
                    data.cls_unlabeled.samples[static_cast<size_t>(cyc_cls_u.index_at(pos))];
                Rng rw(hash_mix(cfg.seed,
                                hash_mix(hash_str("aug.cls_weak"), static_cast<uint64_t>(pos))));
                weak_imgs.push_back(weak_augment(s.image, rw));
                Rng rg(hash_mix(cfg.seed, hash_mix(hash_str("aug.cls_strong"),
                                                   static_cast<uint64_t>(pos))));
                strong_imgs.push_back(strong_augment(s.image, rg, cfg.aug).image);
            }
        }

        std::vector<Tensor<float>> seg_u_imgs;
        if (use_ssl_seg) {
            for (int64_t i = 0; i < m; ++i) {
                const int64_t pos = step * m + i;
                seg_u_imgs.push_back(
                    data.seg_unlabeled.samples[static_cast<size_t>(cyc_seg_u.index_at(pos))]
                        .image);
            }
        }

        auto run_step = [&]() {
            Tape<float> tape;
            MultiMixNet<float> net(tape, result.params, /*params_need_grad=*/true);

            Rng r_cls(hash_mix(step_seed, hash_str("pass.cls_labeled")));
            auto logits_l =
                net.classify(net.encode(tape.constant(stack_images(cls_imgs)), Mode::train,
                                        r_cls));

            PseudoLabelBatch plb;
            typename Tape<float>::Var logits_g;  // invalid unless SSL classification runs
            if (use_ssl_cls) {
                {
                    // pseudo-label pass carries no gradient
                    Tape<float> weak_tape;
                    MultiMixNet<float> weak_net(weak_tape, result.params, false);
                    Rng r_weak(hash_mix(step_seed, hash_str("pass.cls_weak")));
                    auto weak_logits = weak_net.classify(
                        weak_net.encode(weak_tape.constant(stack_images(weak_imgs)), Mode::train,
                                        r_weak));
                    plb = pseudo_label(weak_tape.value(weak_tape.softmax(weak_logits)), cfg.hp.t);
                }
                Rng r_strong(hash_mix(step_seed, hash_str("pass.cls_strong")));
                logits_g = net.classify(net.encode(tape.constant(stack_images(strong_imgs)),
                                                   Mode::train, r_strong));
            }

            auto seg_pass = [&](const std::vector<Tensor<float>>& images, const char* tag) {
                const Tensor<float> stacked = stack_images(images);
                std::optional<typename Tape<float>::Var> bridge;
                if (cfg.arch.bridge_enabled) {
                    auto sal = compute_saliency(result.params, stacked);
                    bridge = tape.constant(
                        build_bridge(sal.map, stacked, cfg.arch.bridge_pool_steps()));
                }
                Rng rng(hash_mix(step_seed, hash_str(tag)));
                auto cache = net.encode(tape.constant(stacked), Mode::train, rng);
                return net.decode(cache, bridge, Mode::train, rng);
            };

            auto pred_l = seg_pass(seg_imgs, "pass.seg_labeled");
            typename Tape<float>::Var pred_u;
            if (use_ssl_seg) pred_u = seg_pass(seg_u_imgs, "pass.seg_unlabeled");

            auto cls_obj = classification_objective(tape, logits_l, cls_labels, logits_g, plb,
                                                    cfg.hp.lambda);
            auto seg_obj =
                segmentation_objective(tape, stack_images(seg_masks), pred_l, pred_u,
                                       cfg.hp.alpha, cfg.hp.beta, cfg.hp.eps_dice);
            auto tot = total_loss(tape, cls_obj, seg_obj, plb.retained_count());

            tape.backward(tot.loss);
            std::map<std::string, Tensor<float>> grads;
            for (const auto& [name, var] : net.param_vars()) grads[name] = tape.grad(var);
            adam_step(result.params, grads, result.opt, lr);
            return tot.report;
        };

        LossRow row;
        row.step = step;
        row.lr = lr;
        try {
            row.report = run_step();
        } catch (const NumericError&) {
            if (!cfg.out_dir.empty()) {
                std::filesystem::create_directories(cfg.out_dir);
                CheckpointExtras extras{result.opt, static_cast<uint64_t>(step),
                                        static_cast<uint32_t>(cfg.arch.extent)};
                save_checkpoint(cfg.out_dir / "diagnostic.ckpt", result.params, &extras);
            }
            throw;
        }
        if (!std::isfinite(row.report.total))
            throw NumericError("train: non-finite loss at step " + std::to_string(step));
        result.log.push_back(row);

        if (cfg.checkpoint_every > 0 && !cfg.out_dir.empty() &&
            (step + 1) % cfg.checkpoint_every == 0 && step + 1 < total_steps) {
            std::filesystem::create_directories(cfg.out_dir);
            CheckpointExtras extras{result.opt, static_cast<uint64_t>(step + 1),
                                    static_cast<uint32_t>(cfg.arch.extent)};
            save_checkpoint(cfg.out_dir / ("checkpoint_" + std::to_string(step + 1) + ".ckpt"),
                            result.params, &extras);
        }
    }
    result.steps = total_steps;
    return result;
}

MetricsReport evaluate(const ModelParams<float>& params, const Dataset& dataset, Task task) {
    if (dataset.samples.empty()) throw DataError("evaluate: empty dataset");
    MetricsReport report;
    const int64_t batch = 16;
    const int64_t n = static_cast<int64_t>(dataset.samples.size());

    if (task == Task::classification) {
        report.has_classification = true;
        std::vector<int> preds, truth;
        std::vector<double> scores;
        for (int64_t at = 0; at < n; at += batch) {
            const int64_t take = std::min(batch, n - at);
            std::vector<Tensor<float>> images;
            for (int64_t i = 0; i < take; ++i) {
                images.push_back(dataset.samples[static_cast<size_t>(at + i)].image);
                truth.push_back(dataset.samples[static_cast<size_t>(at + i)].label);
            }
            Tape<float> tape;
            MultiMixNet<float> net(tape, params, false);
            Rng rng(0);
            auto logits =
                net.classify(net.encode(tape.constant(stack_images(images)), Mode::eval, rng));
            const auto& probs = tape.value(tape.softmax(logits));
            for (int64_t i = 0; i < take; ++i) {
                preds.push_back(probs.at2(i, 1) > probs.at2(i, 0) ? 1 : 0);
                scores.push_back(static_cast<double>(probs.at2(i, 1)));  // abnormal-class prob
            }
        }
        const auto cm = classification_metrics(preds, truth, params.arch.classes);
        report.acc = cm.acc;
        report.f1_normal = cm.f1[0];
        report.f1_abnormal = cm.f1[1];
        const bool both = std::count(truth.begin(), truth.end(), 1) > 0 &&
                          std::count(truth.begin(), truth.end(), 0) > 0;
        if (both) {
            const auto roc = roc_auc(scores, truth);
            report.auc = roc.auc;
            report.roc_rows = roc.points;
        } else {
            report.auc = std::nan("");
        }
        report.ds = report.js = report.ssim = report.hd = std::nan("");
        report.precision = report.recall = std::nan("");
        return report;
    }

    report.has_segmentation = true;
    std::vector<Tensor<float>> pred_masks, ref_masks;
    double sum_ds = 0, sum_js = 0, sum_ssim = 0, sum_hd = 0, sum_p = 0, sum_r = 0;
    for (int64_t at = 0; at < n; at += batch) {
        const int64_t take = std::min(batch, n - at);
        std::vector<Tensor<float>> images;
        for (int64_t i = 0; i < take; ++i)
            images.push_back(dataset.samples[static_cast<size_t>(at + i)].image);
        const Tensor<float> stacked = stack_images(images);

        Tape<float> tape;
        MultiMixNet<float> net(tape, params, false);
        Rng rng(0);
        std::optional<typename Tape<float>::Var> bridge;
        if (params.arch.bridge_enabled) {
            auto sal = compute_saliency(params, stacked);
            bridge = tape.constant(build_bridge(sal.map, stacked, params.arch.bridge_pool_steps()));
        }
        auto cache = net.encode(tape.constant(stacked), Mode::eval, rng);
        auto pred = net.decode(cache, bridge, Mode::eval, rng);
        const auto& pv = tape.value(pred);

        const int64_t hw = pv.dim(2) * pv.dim(3);
        for (int64_t i = 0; i < take; ++i) {
            Tensor<float> prob({1, pv.dim(2), pv.dim(3)});
            std::copy(pv.data() + i * hw, pv.data() + (i + 1) * hw, prob.data());
            Tensor<float> mask_pred = binarize(prob, 0.5f);
            const auto& sample = dataset.samples[static_cast<size_t>(at + i)];
            Tensor<float> mask_ref({1, sample.mask.dim(1), sample.mask.dim(2)});
            std::copy(sample.mask.data(), sample.mask.data() + sample.mask.numel(),
                      mask_ref.data());

            const auto scores = dice_jaccard(mask_pred, mask_ref);
            sum_ds += scores.ds;
            sum_js += scores.js;
            sum_ssim += ssim(mask_pred, mask_ref);
            sum_hd += avg_hausdorff(mask_pred, mask_ref);
            const auto pr = precision_recall(mask_pred, mask_ref);
            sum_p += pr.first;
            sum_r += pr.second;
            report.per_image_dice.push_back(scores.ds);
            pred_masks.push_back(std::move(mask_pred));
            ref_masks.push_back(std::move(mask_ref));
        }
    }
    const double count = static_cast<double>(n);
    report.ds = sum_ds / count;
    report.js = sum_js / count;
    report.ssim = sum_ssim / count;
    report.hd = sum_hd / count;
    report.precision = sum_p / count;
    report.recall = sum_r / count;
    report.bland_altman_rows = bland_altman(pred_masks, ref_masks).rows;
    report.acc = report.f1_normal = report.f1_abnormal = report.auc = std::nan("");
    return report;
}

std::string loss_log_csv(const std::vector<LossRow>& rows) {
    std::string out = "step,L_total,L_c_sup,L_c_unsup,L_s_dice,L_s_kl,retained_count\n";
    for (const auto& r : rows) {
        out += std::to_string(r.step) + "," + fmt_double(r.report.total) + "," +
               fmt_double(r.report.c_sup) + "," + fmt_double(r.report.c_unsup) + "," +
               fmt_double(r.report.s_dice) + "," + fmt_double(r.report.s_kl) + "," +
               std::to_string(r.report.retained) + "\n";
    }
    return out;
}

std::string metrics_csv(const MetricsReport& r, const std::string& dataset_name) {
    std::string out = "dataset,acc,f1_normal,f1_abnormal,auc,ds,js,ssim,hd,precision,recall\n";
    out += dataset_name + "," + fmt_double(r.acc) + "," + fmt_double(r.f1_normal) + "," +
           fmt_double(r.f1_abnormal) + "," + fmt_double(r.auc) + "," + fmt_double(r.ds) + "," +
           fmt_double(r.js) + "," + fmt_double(r.ssim) + "," + fmt_double(r.hd) + "," +
           fmt_double(r.precision) + "," + fmt_double(r.recall) + "\n";
    return out;
}

std::string roc_csv(const MetricsReport& r) {
    std::string out = "fpr,tpr,threshold\n";
    for (const auto& p : r.roc_rows)
        out += fmt_double(p.fpr) + "," + fmt_double(p.tpr) + "," + fmt_double(p.threshold) + "\n";
    return out;
}

std::string bland_altman_csv(const MetricsReport& r) {
    // summary columns repeat per row to keep the schema flat
    double mean_diff = 0, sd = 0;
    if (!r.bland_altman_rows.empty()) {
        for (const auto& row : r.bland_altman_rows) mean_diff += row.diff;
        mean_diff /= static_cast<double>(r.bland_altman_rows.size());
        for (const auto& row : r.bland_altman_rows)
            sd += (row.diff - mean_diff) * (row.diff - mean_diff);
        sd = std::sqrt(sd / static_cast<double>(r.bland_altman_rows.size()));
    }
    std::string out = "mean,diff,mean_diff,lower_limit,upper_limit\n";
    for (const auto& row : r.bland_altman_rows)
        out += fmt_double(row.mean) + "," + fmt_double(row.diff) + "," + fmt_double(mean_diff) +
               "," + fmt_double(mean_diff - 1.96 * sd) + "," + fmt_double(mean_diff + 1.96 * sd) +
               "\n";
    return out;
}

std::string per_image_dice_csv(const MetricsReport& r) {
    std::string out = "index,dice\n";
    for (size_t i = 0; i < r.per_image_dice.size(); ++i)
        out += std::to_string(i) + "," + fmt_double(r.per_image_dice[i]) + "\n";
    return out;
}

}  // namespace multimix
