// Command-line front end: dataset synthesis, training, evaluation, ablation,
// sigma sweeps, complexity stats, and embedding export.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <memory>

#include "cdsr/evalmod.hpp"
#include "cdsr/image_io.hpp"
#include "cdsr/model.hpp"
#include "cdsr/trainer.hpp"

namespace fs = std::filesystem;
using namespace cdsr;

namespace {

/// Every TrainConfig key doubles as a --flag; flags override config files.
struct ConfigFlags {
    std::map<std::string, std::string> given;

    void attach(CLI::App* app) {
        for (const auto& key : config_field_names()) {
            app->add_option_function<std::string>(
                   "--" + key, [this, key](const std::string& v) { given[key] = v; },
                   "config key " + key)
                ->group("Config overrides");
        }
    }
    void apply(TrainConfig& cfg) const {
        for (const auto& [k, v] : given) cfg.set_field(k, v);
    }
};

TrainConfig assemble_config(const std::string& config_path, const std::string& preset,
                            const ConfigFlags& flags) {
    TrainConfig cfg;
    if (!config_path.empty()) cfg = read_config_file(config_path);
    if (preset == "desk") cfg.apply_desk_preset();
    else if (!preset.empty())
        throw ParameterError("unknown preset: " + preset);
    flags.apply(cfg);
    cfg.validate();
    return cfg;
}

std::shared_ptr<const std::vector<ImagePlane>> load_pool(const std::string& hr_dir,
                                                         const std::string& manifest) {
    std::vector<std::string> paths;
    if (!manifest.empty()) paths = read_manifest(manifest);
    else if (!hr_dir.empty())
        paths = list_image_files(hr_dir);
    else
        throw ParameterError("provide --hr-dir or --hr-manifest");
    return std::make_shared<const std::vector<ImagePlane>>(load_hr_pool(paths));
}

ImagePlane center_crop_multiple(const ImagePlane& img, int multiple) {
    const Eigen::Index h = img.height() - img.height() % multiple;
    const Eigen::Index w = img.width() - img.width() % multiple;
    CDSR_REQUIRE(h > 0 && w > 0, "image smaller than the required multiple");
    return img.crop((img.height() - h) / 2, (img.width() - w) / 2, h, w);
}

/// Query-tower embedding of one LR image (eval mode).
Eigen::VectorXd embed_one(Trainer<float>& trainer, const ImagePlane& lr) {
    const TensorF t = trainer.embed_eval(lr.to_tensor<float>());
    Eigen::VectorXd e(t.size());
    for (Eigen::Index i = 0; i < t.size(); ++i) e[i] = t.data[i];
    return e;
}

int run_degrade(const std::string& hr_dir, const std::string& out_dir, int scale, double noise,
                std::uint64_t seed) {
    BenchmarkSpec spec = BenchmarkSpec::standard(scale, noise);
    const std::string manifest = build_benchmark(hr_dir, spec, out_dir, seed);
    std::cout << "benchmark written; manifest: " << manifest << "\n";
    return 0;
}

int run_train(TrainConfig cfg, const std::string& hr_dir, const std::string& manifest,
              const std::string& out_dir, const std::string& resume) {
    fs::create_directories(out_dir);
    std::unique_ptr<Trainer<float>> trainer;
    if (!resume.empty()) {
        trainer = Trainer<float>::load_checkpoint(resume);
        std::cout << "resumed from " << resume << " at step " << trainer->step() << "\n";
    } else {
        trainer = std::make_unique<Trainer<float>>(cfg);
    }
    trainer->set_pool(load_pool(hr_dir, manifest));
    {
        std::ofstream cfg_out(out_dir + "/config.txt");
        cfg_out << trainer->config().serialize();
    }
    auto last = run_training(*trainer, out_dir, 25);
    std::cout << "finished at step " << last.step << " total loss " << last.total << "\n";
    std::cout << "checkpoint: " << out_dir << "/checkpoint.ckpt\n";
    return 0;
}

int run_eval(const std::string& ckpt, bool bicubic_baseline, const std::string& manifest,
             const std::string& hr_dir, const std::string& out_prefix, int scale, int border) {
    SrFn fn;
    std::unique_ptr<Trainer<float>> trainer;
    if (bicubic_baseline) {
        fn = [scale](const ImagePlane& lr) { return bicubic_upscale(lr, scale); };
    } else {
        CDSR_REQUIRE(!ckpt.empty(), "provide --checkpoint or --bicubic");
        trainer = Trainer<float>::load_checkpoint(ckpt);
        scale = trainer->config().scale;
        fn = [&trainer](const ImagePlane& lr) { return trainer->super_resolve(lr); };
    }
    EvalReport report = evaluate_benchmark(fn, manifest, hr_dir, scale, border);
    report.write_csv(out_prefix + ".csv");
    report.write_json(out_prefix + ".json");
    std::cout << "overall PSNR " << report.overall_psnr << " dB, SSIM " << report.overall_ssim
              << "\n";
    for (std::size_t k = 0; k < report.per_kernel.size(); ++k)
        std::cout << "  k" << k + 1 << ": " << report.per_kernel[k].mean_psnr << " dB / "
                  << report.per_kernel[k].mean_ssim << "\n";
    return 0;
}

int run_acc(const std::string& ckpt, const std::string& pool_dir, int scale, std::uint64_t seed,
            int workers) {
    auto trainer = Trainer<float>::load_checkpoint(ckpt);
    const int mult = trainer->config().patch_size * scale;
    std::vector<ImagePlane> pool;
    for (const auto& p : list_image_files(pool_dir))
        pool.push_back(center_crop_multiple(read_png(p), mult));
    LabeledEmbedFn embed = [&](const ImagePlane& lr, int) { return embed_one(*trainer, lr); };
    const double acc =
        classification_accuracy(embed, pool, accuracy_protocol_degradations(scale), seed, workers);
    std::cout << "classification accuracy: " << acc << "\n";
    return 0;
}

int run_sweep(const std::string& ckpt, bool bicubic_baseline, const std::string& test_dir,
              int scale, double smin, double smax, double sstep, const std::string& out,
              std::uint64_t seed, int workers) {
    SrFn fn;
    std::unique_ptr<Trainer<float>> trainer;
    if (bicubic_baseline) {
        fn = [scale](const ImagePlane& lr) { return bicubic_upscale(lr, scale); };
    } else {
        CDSR_REQUIRE(!ckpt.empty(), "provide --checkpoint or --bicubic");
        trainer = Trainer<float>::load_checkpoint(ckpt);
        scale = trainer->config().scale;
        fn = [&trainer](const ImagePlane& lr) { return trainer->super_resolve(lr); };
    }
    std::vector<double> sigmas;
    for (double s = smin; s <= smax + 1e-9; s += sstep) sigmas.push_back(s);
    std::vector<ImagePlane> test_hr;
    for (const auto& p : list_image_files(test_dir)) test_hr.push_back(read_png(p));
    auto curve = psnr_sweep(fn, test_hr, sigmas, scale, seed, 21, workers);
    write_sweep_csv(out, curve);
    for (const auto& [s, p] : curve) std::cout << "sigma " << s << ": " << p << " dB\n";
    return 0;
}

int run_export(const std::string& ckpt, const std::string& lr_dir, const std::string& labels_path,
               const std::string& out) {
    auto trainer = Trainer<float>::load_checkpoint(ckpt);
    std::vector<ImagePlane> images;
    const auto paths = list_image_files(lr_dir);
    const int mult = trainer->config().patch_size;
    for (const auto& p : paths) images.push_back(center_crop_multiple(read_png(p), mult));
    std::vector<int> labels(images.size());
    if (!labels_path.empty()) {
        auto lines = read_manifest(labels_path);
        CDSR_REQUIRE(lines.size() == images.size(), "label count does not match image count");
        for (std::size_t i = 0; i < lines.size(); ++i) labels[i] = std::stoi(lines[i]);
    } else {
        for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i);
    }
    EmbedFn embed = [&](const ImagePlane& lr) { return embed_one(*trainer, lr); };
    export_embeddings(embed, images, labels, out);
    std::cout << "wrote " << images.size() << " embeddings to " << out << "\n";
    return 0;
}

int run_stats(TrainConfig cfg, int input_size) {
    Rng rng(cfg.seed);
    CdsrModel<float> model;
    model.init(rng, cfg.lpe_config(), cfg.sr_config(), cfg.codebook_length, cfg.use_CSC,
               cfg.use_LPE_P, cfg.use_LPE_L);
    const ModelStats st = model_stats(model, input_size, input_size);
    std::cout << "input " << input_size << "x" << input_size << " scale " << cfg.scale << "\n";
    std::cout << "parameters: " << st.params << " (" << st.params / 1e6 << " M)\n";
    std::cout << "flops: " << st.flops << " (" << st.flops / 1e9 << " G)\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CDSR blind super-resolution toolkit"};
    app.require_subcommand(1);

    ConfigFlags flags;
    std::string config_path, preset, kernels_tag;
    std::string hr_dir, hr_manifest, out_dir = "out", resume, ckpt, pool_dir, test_dir;
    std::string labels_path, out_file = "out.csv", out_prefix = "report", bench_manifest;
    std::uint64_t seed = 0;
    int scale = 2, input_size = 48, model_id = 1, border = -1, workers = 1;
    double noise = 0.0, smin = 1.0, smax = 10.0, sstep = 1.0;
    bool bicubic_baseline = false;

    auto add_config_opts = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "key = value config file");
        cmd->add_option("--preset", preset, "named preset (desk)");
        flags.attach(cmd);
    };

    CLI::App* degrade_cmd = app.add_subcommand("degrade", "build a 9-kernel LR benchmark");
    degrade_cmd->add_option("--hr-dir", hr_dir, "directory of HR PNGs")->required();
    degrade_cmd->add_option("--out", out_dir, "output benchmark directory")->required();
    degrade_cmd->add_option("--scale", scale, "scale factor in {2,3,4}");
    degrade_cmd->add_option("--kernels", kernels_tag, "kernel set tag (x2|x3|x4); defaults to the scale");
    degrade_cmd->add_option("--noise-level", noise, "benchmark noise std on the 0-255 scale");
    degrade_cmd->add_option("--seed", seed, "noise seed");

    CLI::App* train_cmd = app.add_subcommand("train", "train the full model");
    train_cmd->add_option("--hr-dir", hr_dir, "directory of HR PNGs");
    train_cmd->add_option("--hr-manifest", hr_manifest, "manifest of HR image paths");
    train_cmd->add_option("--out", out_dir, "output directory (metrics, checkpoints)");
    train_cmd->add_option("--resume", resume, "checkpoint to resume from");
    add_config_opts(train_cmd);

    CLI::App* ablate_cmd = app.add_subcommand("ablate", "train one ablation model (1-5)");
    ablate_cmd->add_option("--model", model_id, "ablation model id")->required();
    ablate_cmd->add_option("--hr-dir", hr_dir, "directory of HR PNGs");
    ablate_cmd->add_option("--hr-manifest", hr_manifest, "manifest of HR image paths");
    ablate_cmd->add_option("--out", out_dir, "output directory");
    add_config_opts(ablate_cmd);

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate on a built benchmark");
    eval_cmd->add_option("--checkpoint", ckpt, "trained checkpoint");
    eval_cmd->add_flag("--bicubic", bicubic_baseline, "evaluate the bicubic baseline instead");
    eval_cmd->add_option("--manifest", bench_manifest, "benchmark manifest")->required();
    eval_cmd->add_option("--hr-dir", hr_dir, "directory of HR originals")->required();
    eval_cmd->add_option("--out", out_prefix, "report prefix (.csv/.json)");
    eval_cmd->add_option("--scale", scale, "scale (bicubic baseline only)");
    eval_cmd->add_option("--border-crop", border, "PSNR border crop, default = scale");

    CLI::App* acc_cmd = app.add_subcommand("acc", "degradation classification accuracy");
    acc_cmd->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
    acc_cmd->add_option("--pool-dir", pool_dir, "directory of HR pool images")->required();
    acc_cmd->add_option("--scale", scale, "scale factor (protocol default 4)")->default_val(4);
    acc_cmd->add_option("--seed", seed, "split seed");
    acc_cmd->add_option("--workers", workers, "embedding workers");

    CLI::App* sweep_cmd = app.add_subcommand("sweep", "mean PSNR versus kernel width");
    sweep_cmd->add_option("--checkpoint", ckpt, "trained checkpoint");
    sweep_cmd->add_flag("--bicubic", bicubic_baseline, "sweep the bicubic baseline");
    sweep_cmd->add_option("--test-dir", test_dir, "directory of HR test images")->required();
    sweep_cmd->add_option("--scale", scale, "scale (bicubic baseline only)")->default_val(4);
    sweep_cmd->add_option("--sigma-min", smin, "first sigma");
    sweep_cmd->add_option("--sigma-max", smax, "last sigma");
    sweep_cmd->add_option("--sigma-step", sstep, "sigma step");
    sweep_cmd->add_option("--out", out_file, "output CSV");
    sweep_cmd->add_option("--seed", seed, "noise seed");
    sweep_cmd->add_option("--workers", workers, "sweep workers");

    CLI::App* export_cmd = app.add_subcommand("export-emb", "export embeddings as CSV");
    export_cmd->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
    export_cmd->add_option("--lr-dir", test_dir, "directory of LR PNGs")->required();
    export_cmd->add_option("--labels", labels_path, "label file, one integer per line");
    export_cmd->add_option("--out", out_file, "output CSV")->required();

    CLI::App* stats_cmd = app.add_subcommand("stats", "parameter and flop accounting");
    stats_cmd->add_option("--input-size", input_size, "square input side");
    add_config_opts(stats_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (degrade_cmd->parsed()) {
            if (kernels_tag == "x2") scale = 2;
            else if (kernels_tag == "x3") scale = 3;
            else if (kernels_tag == "x4") scale = 4;
            else if (!kernels_tag.empty())
                throw ParameterError("unknown kernel set tag: " + kernels_tag);
            return run_degrade(hr_dir, out_dir, scale, noise, seed);
        }
        if (train_cmd->parsed())
            return run_train(assemble_config(config_path, preset, flags), hr_dir, hr_manifest,
                             out_dir, resume);
        if (ablate_cmd->parsed()) {
            TrainConfig cfg =
                run_ablation(model_id, assemble_config(config_path, preset, flags));
            return run_train(cfg, hr_dir, hr_manifest, out_dir, "");
        }
        if (eval_cmd->parsed())
            return run_eval(ckpt, bicubic_baseline, bench_manifest, hr_dir, out_prefix, scale,
                            border);
        if (acc_cmd->parsed()) return run_acc(ckpt, pool_dir, scale, seed, workers);
        if (sweep_cmd->parsed())
            return run_sweep(ckpt, bicubic_baseline, test_dir, scale, smin, smax, sstep, out_file,
                             seed, workers);
        if (export_cmd->parsed()) return run_export(ckpt, test_dir, labels_path, out_file);
        if (stats_cmd->parsed())
            return run_stats(assemble_config(config_path, preset, flags), input_size);
    } catch (const ParameterError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
