#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "crowdcount/errors.hpp"
#include "crowdcount/evaluate.hpp"
#include "crowdcount/pipeline.hpp"
#include "crowdcount/png_io.hpp"
#include "crowdcount/probe.hpp"
#include "crowdcount/rng.hpp"
#include "crowdcount/run_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace crowdcount;

namespace {

std::string default_run_dir() {
    if (const char* env = std::getenv("CROWDCOUNT_ARTIFACT_ROOT")) return env;
    return "runs/default";
}

// Labels for evaluation: a .jsonl dataset manifest, or a point-annotation
// JSON whose image paths resolve relative to the file.
std::vector<data::LabeledImage> load_labels(const std::string& path) {
    if (path.ends_with(".jsonl")) {
        return data::load_labeled_images(data::load_manifest(path));
    }
    const auto annotations = data::load_point_annotations(path);
    const fs::path root = fs::path(path).parent_path();
    std::vector<data::LabeledImage> out;
    out.reserve(annotations.size());
    for (const auto& [image_path, count] : annotations) {
        data::LabeledImage item;
        auto img = std::make_shared<Image>(read_png((root / image_path).string()));
        img->source_id = image_path;
        item.image = std::move(img);
        item.truth = count;
        item.id = image_path;
        out.push_back(std::move(item));
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-stage unsupervised crowd counting on synthetic scenes: "
                 "ranking pre-training plus linear probing on noisy counts."};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = default_run_dir();
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool force = false;

    app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    app.add_option("--out", out_dir, "run directory for artifacts");
    app.add_option_function<std::uint64_t>(
           "--seed", [&](std::uint64_t v) { seed = v; seed_set = true; },
           "seed governing all stochastic stages");
    app.add_flag("--force", force, "re-run stages whose outputs already exist");
    for (auto* opt : app.get_options()) opt->configurable(false);

    json flags = json::object();
    auto resolve_config = [&]() {
        if (seed_set) flags["seed"] = seed;
        return cli::RunConfig::resolve(config_path, flags);
    };

    // generate-ranking
    auto* cmd_gen_rank = app.add_subcommand("generate-ranking", "synthesize the ranking pair dataset");
    int gen_sources = -1;
    cmd_gen_rank->add_option("--sources", gen_sources, "number of source scenes");

    // generate-noisy
    auto* cmd_gen_noisy = app.add_subcommand("generate-noisy", "synthesize noisy count data and eval scenes");
    double noise_sigma = -1.0;
    cmd_gen_noisy->add_option("--noise-sigma", noise_sigma, "label noise sigma");

    // pretrain
    auto* cmd_pretrain = app.add_subcommand("pretrain", "ranking pre-training of the encoder");
    std::string train_manifest, pretrain_out;
    double val_fraction = -1.0, lr = -1.0;
    int epochs = -1;
    cmd_pretrain->add_option("--train-manifest", train_manifest, "ranking manifest (default: <run>/ranking.jsonl)");
    cmd_pretrain->add_option("--val-fraction", val_fraction, "validation split fraction");
    cmd_pretrain->add_option("--epochs", epochs, "training epochs");
    cmd_pretrain->add_option("--lr", lr, "learning rate");
    cmd_pretrain->add_option("--out", pretrain_out, "output checkpoint (default: <run>/checkpoints/rank.json)");

    // probe
    auto* cmd_probe = app.add_subcommand("probe", "linear probing on the noisy count dataset");
    std::string rank_ckpt, noisy_manifest, probe_out;
    cmd_probe->add_option("--rank-checkpoint", rank_ckpt, "rank checkpoint (default: <run>/checkpoints/rank.json)");
    cmd_probe->add_option("--noisy-manifest", noisy_manifest, "noisy manifest (default: <run>/noisy.jsonl)");
    cmd_probe->add_option("--out", probe_out, "output checkpoint (default: <run>/checkpoints/probe.json)");

    // infer
    auto* cmd_infer = app.add_subcommand("infer", "predict the count for one image");
    std::string infer_probe, infer_image_path;
    int infer_k = -1;
    cmd_infer->add_option("--probe", infer_probe, "probe checkpoint")->required();
    cmd_infer->add_option("--image", infer_image_path, "PNG image")->required()->check(CLI::ExistingFile);
    cmd_infer->add_option("--patch-k", infer_k, "patch grid size");

    // evaluate
    auto* cmd_eval = app.add_subcommand("evaluate", "report MAE/MSE over labeled images");
    std::string eval_probe, eval_labels, eval_report;
    int eval_k = -1;
    cmd_eval->add_option("--probe", eval_probe, "probe checkpoint (default: <out>/checkpoints/probe.json)");
    cmd_eval->add_option("--labels", eval_labels, "labels: manifest .jsonl or point-annotation .json");
    cmd_eval->add_option("--patch-k", eval_k, "patch grid size");
    cmd_eval->add_option("--report", eval_report, "also write the report JSON here");

    // sweep
    auto* cmd_sweep = app.add_subcommand("sweep", "evaluate across patch grid sizes");
    std::string sweep_probe, sweep_labels, sweep_ks, sweep_report;
    cmd_sweep->add_option("--probe", sweep_probe, "probe checkpoint (default: <out>/checkpoints/probe.json)");
    cmd_sweep->add_option("--labels", sweep_labels, "labels: manifest .jsonl or point-annotation .json");
    cmd_sweep->add_option("--ks", sweep_ks, "comma-separated grid sizes, e.g. 1,2,3,4");
    cmd_sweep->add_option("--report", sweep_report, "also write the sweep JSON here");

    // pipeline
    auto* cmd_pipeline = app.add_subcommand("pipeline", "run all stages in order");

    // show-config
    auto* cmd_show = app.add_subcommand("show-config", "print the resolved config with provenance");
    bool show_json = false;
    cmd_show->add_flag("--json", show_json, "print the resolved config as JSON");

    // Global options may appear after the subcommand name.
    for (auto* sub : {cmd_gen_rank, cmd_gen_noisy, cmd_pretrain, cmd_probe, cmd_infer, cmd_eval, cmd_sweep,
                      cmd_pipeline, cmd_show}) {
        sub->fallthrough();
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : UsageError::exit_code;
    }

    try {
        const cli::RunPaths paths{out_dir};

        if (cmd_gen_rank->parsed()) {
            if (gen_sources >= 0) flags["ranking"]["sources"] = gen_sources;
            cli::stage_generate_ranking(resolve_config(), paths, force, std::cout);
        } else if (cmd_gen_noisy->parsed()) {
            if (noise_sigma >= 0.0) flags["noisy"]["noise_sigma"] = noise_sigma;
            cli::stage_generate_noisy(resolve_config(), paths, force, std::cout);
        } else if (cmd_pretrain->parsed()) {
            if (epochs >= 0) flags["pretrain"]["epochs"] = epochs;
            if (lr >= 0.0) flags["pretrain"]["learning_rate"] = lr;
            if (val_fraction >= 0.0) flags["ranking"]["val_fraction"] = val_fraction;
            const auto cfg = resolve_config();
            const std::string manifest_path = train_manifest.empty() ? paths.ranking_manifest() : train_manifest;
            const std::string ckpt_path = pretrain_out.empty() ? paths.rank_checkpoint() : pretrain_out;

            const auto manifest = data::load_manifest(manifest_path);
            data::SplitConfig split_cfg;
            split_cfg.validation_fraction = cfg.validation_fraction();
            split_cfg.seed = mix_seed(cfg.seed(), 0x56);
            const auto [train, val] = data::split(manifest, split_cfg);
            const auto model =
                rank::train_ranker(train, val, cfg.encoder_config(), cfg.pretrain_config(), cfg.augment_config());
            fs::create_directories(fs::path(ckpt_path).parent_path());
            rank::save_rank_checkpoint(model, ckpt_path, cfg.resolved());
            std::cout << "[pretrain] wrote " << ckpt_path << " (selected epoch "
                      << model.provenance.selected_epoch << ", validation accuracy "
                      << model.provenance.validation_rank_accuracy << ")\n";
        } else if (cmd_probe->parsed()) {
            const auto cfg = resolve_config();
            const std::string rank_path = rank_ckpt.empty() ? paths.rank_checkpoint() : rank_ckpt;
            const std::string noisy_path = noisy_manifest.empty() ? paths.noisy_manifest() : noisy_manifest;
            const std::string ckpt_path = probe_out.empty() ? paths.probe_checkpoint() : probe_out;

            const auto rank_model = rank::load_rank_checkpoint(rank_path);
            const auto noisy = data::load_noisy_examples(data::load_manifest(noisy_path));
            const auto model = probe::fit_probe(rank_model, noisy, cfg.probe_config());
            fs::create_directories(fs::path(ckpt_path).parent_path());
            probe::save_probe_checkpoint(model, ckpt_path, cfg.resolved());
            std::cout << "[probe] wrote " << ckpt_path << "\n";
        } else if (cmd_infer->parsed()) {
            if (infer_k >= 1) flags["eval"]["patch_k"] = infer_k;
            const auto cfg = resolve_config();
            const auto model = probe::load_probe_checkpoint(infer_probe);
            const Image image = read_png(infer_image_path);
            const double count = eval::infer_image(model, image, cfg.patch_k());
            std::cout << count << "\n";
        } else if (cmd_eval->parsed()) {
            if (eval_k >= 1) flags["eval"]["patch_k"] = eval_k;
            const auto cfg = resolve_config();
            const std::string probe_path = eval_probe.empty() ? paths.probe_checkpoint() : eval_probe;
            const std::string labels_path = eval_labels.empty() ? paths.eval_manifest() : eval_labels;

            const auto model = probe::load_probe_checkpoint(probe_path);
            const auto labeled = load_labels(labels_path);
            const auto report = eval::evaluate(model, labeled, cfg.patch_k());
            std::cout << eval::report_table({report});
            if (!eval_report.empty()) {
                std::ofstream out(eval_report);
                out << eval::report_to_json(report, cfg.resolved()).dump(1) << '\n';
            }
        } else if (cmd_sweep->parsed()) {
            if (!sweep_ks.empty()) {
                json ks = json::array();
                std::stringstream ss(sweep_ks);
                std::string item;
                while (std::getline(ss, item, ',')) ks.push_back(std::stoi(item));
                flags["eval"]["sweep_ks"] = ks;
            }
            const auto cfg = resolve_config();
            const std::string probe_path = sweep_probe.empty() ? paths.probe_checkpoint() : sweep_probe;
            const std::string labels_path = sweep_labels.empty() ? paths.eval_manifest() : sweep_labels;

            const auto model = probe::load_probe_checkpoint(probe_path);
            const auto labeled = load_labels(labels_path);
            const auto reports = eval::patch_sweep(model, labeled, cfg.sweep_ks());
            std::cout << eval::report_table(reports);
            if (!sweep_report.empty()) {
                json out_json = json::array();
                for (const auto& r : reports) out_json.push_back(eval::report_to_json(r, json()));
                std::ofstream out(sweep_report);
                out << out_json.dump(1) << '\n';
            }
        } else if (cmd_pipeline->parsed()) {
            cli::run_pipeline(resolve_config(), out_dir, force, std::cout);
        } else if (cmd_show->parsed()) {
            const auto cfg = resolve_config();
            if (show_json) {
                std::cout << cfg.resolved().dump(1) << "\n";
            } else {
                std::cout << cfg.dump_with_provenance();
            }
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return UsageError::exit_code;
    } catch (const DigestError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return DigestError::exit_code;
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return DivergenceError::exit_code;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return DataError::exit_code;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return DataError::exit_code;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return UsageError::exit_code;
    }
    return 0;
}
