#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "multimix/checkpoint.hpp"
#include "multimix/config.hpp"
#include "multimix/data.hpp"
#include "multimix/errors.hpp"
#include "multimix/kernels.hpp"
#include "multimix/saliency.hpp"
#include "multimix/trainer.hpp"

namespace fs = std::filesystem;
using namespace multimix;

namespace {

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot write " + path.string());
    os << content;
}

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> sets;
    std::string out_dir;
    bool force = false;
    long long seed = -1;
    bool strict = false;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required) {
    auto* opt = cmd->add_option("--config", args.config_path, "config file (key = value)");
    if (config_required) opt->required();
    cmd->add_option("--set", args.sets, "override config entries, key=value")->take_all();
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_flag("--force", args.force, "allow overwriting existing checkpoints");
    cmd->add_option("--seed", args.seed, "run seed (overrides config)");
    cmd->add_flag("--strict-deterministic", args.strict,
                  "serial reference kernels, no reassociation");
}

TrainConfig resolve_config(const CommonArgs& args) {
    std::map<std::string, std::string> kv;
    fs::path base = fs::current_path();
    if (!args.config_path.empty()) {
        kv = parse_kv_file(args.config_path);
        base = fs::absolute(fs::path(args.config_path)).parent_path();
    }
    apply_overrides(kv, args.sets);
    TrainConfig cfg = make_train_config(kv, base);
    if (args.seed >= 0) cfg.seed = static_cast<uint64_t>(args.seed);
    if (args.strict) cfg.strict_deterministic = true;
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    return cfg;
}

std::string run_header(const TrainConfig& cfg) {
    return "# multimix run header\n" + render_config(cfg);
}

int cmd_train(const CommonArgs& args, const std::string& resume_path) {
    TrainConfig cfg = resolve_config(args);
    if (cfg.out_dir.empty()) throw ConfigError("train: --out (or out.dir) is required");
    fs::create_directories(cfg.out_dir);
    const fs::path final_ckpt = cfg.out_dir / "final.ckpt";
    if (fs::exists(final_ckpt) && !args.force)
        throw ConfigError("train: " + final_ckpt.string() + " exists; pass --force to overwrite");

    const DatasetBundle data = load_bundle(cfg);

    ResumeState resume;
    const ResumeState* resume_ptr = nullptr;
    if (!resume_path.empty()) {
        auto loaded = load_checkpoint(resume_path);
        if (!loaded.extras) throw DataError("train: checkpoint has no optimizer state to resume");
        resume.params = std::move(loaded.params);
        resume.params.arch = cfg.arch;  // run config governs toggles and extent
        resume.opt = std::move(loaded.extras->opt);
        resume.step = static_cast<int64_t>(loaded.extras->train_step);
        resume_ptr = &resume;
    }

    write_file(cfg.out_dir / "run_header.txt", run_header(cfg));
    TrainResult result = train(cfg, data, resume_ptr);
    write_file(cfg.out_dir / "training_log.csv", loss_log_csv(result.log));
    CheckpointExtras extras{result.opt, static_cast<uint64_t>(result.steps),
                            static_cast<uint32_t>(cfg.arch.extent)};
    save_checkpoint(final_ckpt, result.params, &extras);
    std::cout << "trained " << result.steps << " steps; final checkpoint at "
              << final_ckpt.string() << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& manifest_path,
             const std::string& task_name, int extent, const CommonArgs& args) {
    auto loaded = load_checkpoint(ckpt_path);
    if (extent > 0) loaded.params.arch.extent = extent;
    const Task task = task_name == "classification" ? Task::classification : Task::segmentation;
    const StreamTag tag =
        task == Task::classification ? StreamTag::cls_labeled : StreamTag::seg_labeled;
    const Dataset ds =
        load_dataset(load_manifest(manifest_path, tag), loaded.params.arch.extent);

    const fs::path out = args.out_dir.empty() ? fs::path(".") : fs::path(args.out_dir);
    fs::create_directories(out);
    const MetricsReport report = evaluate(loaded.params, ds, task);
    write_file(out / "metrics.csv", metrics_csv(report, fs::path(manifest_path).stem().string()));
    if (report.has_classification) write_file(out / "roc.csv", roc_csv(report));
    if (report.has_segmentation) {
        write_file(out / "bland_altman.csv", bland_altman_csv(report));
        write_file(out / "dice.csv", per_image_dice_csv(report));
    }
    write_file(out / "run_header.txt",
               "# multimix eval\ncheckpoint = " + ckpt_path + "\nmanifest = " + manifest_path +
                   "\ntask = " + task_name + "\nextent = " +
                   std::to_string(loaded.params.arch.extent) + "\nformat.checkpoint = 1\n");
    std::cout << "metrics written to " << (out / "metrics.csv").string() << "\n";
    return 0;
}

int cmd_saliency(const std::string& ckpt_path, const std::string& manifest_path,
                 const std::string& stream_name, int extent, const CommonArgs& args) {
    auto loaded = load_checkpoint(ckpt_path);
    if (extent > 0) loaded.params.arch.extent = extent;
    StreamTag tag = StreamTag::cls_unlabeled;
    for (StreamTag t : {StreamTag::cls_labeled, StreamTag::cls_unlabeled, StreamTag::seg_labeled,
                        StreamTag::seg_unlabeled})
        if (stream_name == stream_tag_name(t)) tag = t;
    const Manifest manifest = load_manifest(manifest_path, tag);
    const Dataset ds = load_dataset(manifest, loaded.params.arch.extent);
    if (ds.samples.empty()) throw DataError("saliency: empty dataset");

    const fs::path out = args.out_dir.empty() ? fs::path(".") : fs::path(args.out_dir);
    fs::create_directories(out);
    std::string index = "path,predicted_class,confidence\n";
    for (size_t i = 0; i < ds.samples.size(); ++i) {
        Tensor<float> one({1, 1, ds.extent, ds.extent});
        std::copy(ds.samples[i].image.data(), ds.samples[i].image.data() + ds.extent * ds.extent,
                  one.data());
        const auto sal = compute_saliency(loaded.params, one);
        // softmax confidence of the argmax class
        const double l0 = sal.logits.at2(0, 0), l1 = sal.logits.at2(0, 1);
        const double mx = std::max(l0, l1);
        const double p0 = std::exp(l0 - mx), p1 = std::exp(l1 - mx);
        const int pred = l1 > l0 ? 1 : 0;
        const double conf = (pred == 1 ? p1 : p0) / (p0 + p1);
        Tensor<float> map({1, ds.extent, ds.extent});
        std::copy(sal.map.data(), sal.map.data() + map.numel(), map.data());
        const std::string name =
            manifest.rows[i].image.stem().string() + "_saliency.pgm";
        encode_pgm(out / name, map);
        char conf_buf[32];
        std::snprintf(conf_buf, sizeof(conf_buf), "%.6f", conf);
        index += manifest.rows[i].image.string() + "," + std::to_string(pred) + "," + conf_buf +
                 "\n";
    }
    write_file(out / "index.csv", index);
    std::cout << "saliency maps for " << ds.samples.size() << " images written to "
              << out.string() << "\n";
    return 0;
}

int cmd_synth(const CommonArgs& args) {
    if (args.out_dir.empty()) throw ConfigError("synth: --out is required");
    SynthConfig cfg;
    std::map<std::string, std::string> kv;
    if (!args.config_path.empty()) kv = parse_kv_file(args.config_path);
    apply_overrides(kv, args.sets);
    for (const auto& [key, v] : kv) {
        auto as_int = [&](const std::string& s) { return std::stoll(s); };
        auto as_double = [&](const std::string& s) { return std::stod(s); };
        if (key == "synth.extent") cfg.extent = static_cast<int>(as_int(v));
        else if (key == "synth.cls_labeled") cfg.cls_labeled = static_cast<int>(as_int(v));
        else if (key == "synth.cls_unlabeled") cfg.cls_unlabeled = static_cast<int>(as_int(v));
        else if (key == "synth.seg_labeled") cfg.seg_labeled = static_cast<int>(as_int(v));
        else if (key == "synth.seg_unlabeled") cfg.seg_unlabeled = static_cast<int>(as_int(v));
        else if (key == "synth.abnormal_fraction") cfg.abnormal_fraction = as_double(v);
        else if (key == "synth.blob_probability") cfg.blob_probability = as_double(v);
        else if (key == "synth.cls_intensity_shift") cfg.cls_intensity_shift = as_double(v);
        else if (key == "synth.seg_intensity_shift") cfg.seg_intensity_shift = as_double(v);
        else if (key == "synth.cls_noise") cfg.cls_noise = as_double(v);
        else if (key == "synth.seg_noise") cfg.seg_noise = as_double(v);
        else throw ConfigError("synth: unknown key " + key);
    }
    if (args.seed >= 0) cfg.seed = static_cast<uint64_t>(args.seed);
    if (cfg.extent < 8) throw ConfigError("synth: extent too small");
    synth_generate(cfg, args.out_dir);
    std::cout << "synthetic dataset written to " << args.out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    if (const char* threads = std::getenv("MULTIMIX_THREADS")) {
        const int cap = std::atoi(threads);
        if (cap > 0) kernels::set_thread_cap(cap);
    }

    CLI::App app{"MultiMix: joint semi-supervised classification and segmentation"};
    app.require_subcommand(1);

    CommonArgs train_args;
    std::string resume_path;
    auto* train_cmd = app.add_subcommand("train", "run the training loop");
    add_common(train_cmd, train_args, /*config_required=*/true);
    train_cmd->add_option("--resume", resume_path, "checkpoint to resume from");

    CommonArgs eval_args;
    std::string eval_ckpt, eval_manifest, eval_task = "segmentation";
    int eval_extent = 0;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
    eval_cmd->add_option("--checkpoint", eval_ckpt)->required();
    eval_cmd->add_option("--manifest", eval_manifest)->required();
    eval_cmd->add_option("--task", eval_task)
        ->check(CLI::IsMember({"classification", "segmentation"}));
    eval_cmd->add_option("--extent", eval_extent, "input extent (default: from checkpoint)");
    add_common(eval_cmd, eval_args, /*config_required=*/false);

    CommonArgs sal_args;
    std::string sal_ckpt, sal_manifest, sal_stream = "cls_unlabeled";
    int sal_extent = 0;
    auto* sal_cmd = app.add_subcommand("saliency", "dump saliency heatmaps as PGM");
    sal_cmd->add_option("--checkpoint", sal_ckpt)->required();
    sal_cmd->add_option("--manifest", sal_manifest)->required();
    sal_cmd->add_option("--stream", sal_stream, "manifest stream tag");
    sal_cmd->add_option("--extent", sal_extent);
    add_common(sal_cmd, sal_args, /*config_required=*/false);

    CommonArgs synth_args;
    auto* synth_cmd = app.add_subcommand("synth", "generate the synthetic dataset");
    add_common(synth_cmd, synth_args, /*config_required=*/false);

    try {
        app.parse(argc, argv);
        if (train_cmd->parsed()) return cmd_train(train_args, resume_path);
        if (eval_cmd->parsed())
            return cmd_eval(eval_ckpt, eval_manifest, eval_task, eval_extent, eval_args);
        if (sal_cmd->parsed())
            return cmd_saliency(sal_ckpt, sal_manifest, sal_stream, sal_extent, sal_args);
        if (synth_cmd->parsed()) return cmd_synth(synth_args);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);  // CLI11 prints usage; nonzero on error
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const ShapeError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
