#include "crowdcount/pipeline.hpp"

#include <filesystem>
#include <fstream>

#include "crowdcount/errors.hpp"
#include "crowdcount/evaluate.hpp"
#include "crowdcount/probe.hpp"
#include "crowdcount/rng.hpp"

namespace fs = std::filesystem;

namespace crowdcount::cli {

namespace {

std::string join(const std::string& root, const std::string& rel) { return (fs::path(root) / rel).string(); }

bool all_exist(std::initializer_list<std::string> paths) {
    for (const auto& p : paths) {
        if (!fs::exists(p)) return false;
    }
    return true;
}

}  // namespace

std::string RunPaths::ranking_manifest() const { return join(root, "ranking.jsonl"); }
std::string RunPaths::noisy_manifest() const { return join(root, "noisy.jsonl"); }
std::string RunPaths::eval_manifest() const { return join(root, "eval.jsonl"); }
std::string RunPaths::rank_checkpoint() const { return join(root, "checkpoints/rank.json"); }
std::string RunPaths::probe_checkpoint() const { return join(root, "checkpoints/probe.json"); }
std::string RunPaths::metrics_json() const { return join(root, "reports/metrics.json"); }
std::string RunPaths::metrics_table() const { return join(root, "reports/metrics.txt"); }
std::string RunPaths::diagnostics_json() const { return join(root, "reports/diagnostics.json"); }
std::string RunPaths::features_csv() const { return join(root, "reports/features.csv"); }

void stage_generate_ranking(const RunConfig& cfg, const RunPaths& paths, bool force, std::ostream& log) {
    if (!force && all_exist({paths.ranking_manifest()})) {
        log << "[generate-ranking] outputs exist, skipping\n";
        return;
    }
    if (!cfg.diffusion_backend().empty()) {
        // The pipeline ships only the deterministic scene synthesizer; an
        // external generator is reachable through the library adapter.
        if (!synth::has_diffusion_backend(cfg.diffusion_backend())) {
            throw DataError("backend not configured");
        }
        throw UsageError("pipeline generation supports only the built-in synthesizer; unset diffusion.backend");
    }

    const std::uint64_t seed = cfg.seed();
    const synth::SceneParams params = cfg.scene_params();
    const int n_sources = cfg.ranking_sources();

    std::vector<synth::SceneSpec> sources;
    sources.reserve(n_sources);
    for (int i = 0; i < n_sources; ++i) {
        Rng rng(mix_seed(seed, 0x51, static_cast<std::uint64_t>(i)));
        const int count = static_cast<int>(rng.uniform_int(0, cfg.scene_max_count()));
        sources.push_back(synth::sample_scene(params, count, rng.next()));
    }

    const auto pairs = synth::make_ranking_dataset(sources, cfg.variants_per_source(), cfg.removal_range(),
                                                   mix_seed(seed, 0x52));
    fs::create_directories(paths.root);
    data::write_ranking_dataset(pairs, paths.root, "images/rank", "ranking.jsonl");
    log << "[generate-ranking] " << pairs.size() << " pairs from " << n_sources << " sources\n";
}

void stage_generate_noisy(const RunConfig& cfg, const RunPaths& paths, bool force, std::ostream& log) {
    if (!force && all_exist({paths.noisy_manifest(), paths.eval_manifest()})) {
        log << "[generate-noisy] outputs exist, skipping\n";
        return;
    }
    const std::uint64_t seed = cfg.seed();
    const auto noisy = synth::make_noisy_count_dataset(cfg.noisy_config(), mix_seed(seed, 0x53));
    fs::create_directories(paths.root);
    data::write_noisy_dataset(noisy, paths.root, "images/noisy", "noisy.jsonl");

    // Held-out labeled scenes for the evaluation stage; truth counts are
    // carried as hidden counts and only the evaluator reads them.
    const synth::SceneParams params = cfg.scene_params();
    std::vector<synth::NoisyCountExample> eval_scenes(cfg.eval_scenes());
    std::vector<long long> counts(cfg.eval_scenes());
    for (int i = 0; i < cfg.eval_scenes(); ++i) {
        Rng rng(mix_seed(seed, 0x54, static_cast<std::uint64_t>(i)));
        counts[i] = rng.uniform_int(0, cfg.scene_max_count());
    }
    parallel_for(cfg.eval_scenes(), [&](int i) {
        Rng rng(mix_seed(seed, 0x55, static_cast<std::uint64_t>(i)));
        const auto spec = synth::sample_scene(params, static_cast<int>(counts[i]), rng.next());
        auto img = std::make_shared<Image>(synth::render_scene(spec));
        img->source_id = "eval" + std::to_string(i);
        eval_scenes[i].image = std::move(img);
        eval_scenes[i].prompt_count = 0;
        eval_scenes[i].hidden_true_count = BlindedCount(counts[i]);
        eval_scenes[i].id = "eval" + std::to_string(i);
    });
    data::write_noisy_dataset(eval_scenes, paths.root, "images/eval", "eval.jsonl");
    log << "[generate-noisy] " << noisy.size() << " noisy examples, " << eval_scenes.size() << " eval scenes\n";
}

void stage_pretrain(const RunConfig& cfg, const RunPaths& paths, bool force, std::ostream& log) {
    if (!force && all_exist({paths.rank_checkpoint()})) {
        log << "[pretrain] outputs exist, skipping\n";
        return;
    }
    const auto manifest = data::load_manifest(paths.ranking_manifest());
    data::SplitConfig split_cfg;
    split_cfg.validation_fraction = cfg.validation_fraction();
    split_cfg.seed = mix_seed(cfg.seed(), 0x56);
    const auto [train, val] = data::split(manifest, split_cfg);

    const auto model =
        rank::train_ranker(train, val, cfg.encoder_config(), cfg.pretrain_config(), cfg.augment_config());
    fs::create_directories(fs::path(paths.rank_checkpoint()).parent_path());
    rank::save_rank_checkpoint(model, paths.rank_checkpoint(), cfg.resolved());
    log << "[pretrain] selected epoch " << model.provenance.selected_epoch << " with validation accuracy "
        << model.provenance.validation_rank_accuracy << "\n";
}

void stage_probe(const RunConfig& cfg, const RunPaths& paths, bool force, std::ostream& log) {
    if (!force && all_exist({paths.probe_checkpoint()})) {
        log << "[probe] outputs exist, skipping\n";
        return;
    }
    const auto rank_model = rank::load_rank_checkpoint(paths.rank_checkpoint());
    const auto noisy = data::load_noisy_examples(data::load_manifest(paths.noisy_manifest()));
    const auto model = probe::fit_probe(rank_model, noisy, cfg.probe_config());
    fs::create_directories(fs::path(paths.probe_checkpoint()).parent_path());
    probe::save_probe_checkpoint(model, paths.probe_checkpoint(), cfg.resolved());
    log << "[probe] fitted on " << noisy.size() << " examples\n";
}

void stage_evaluate(const RunConfig& cfg, const RunPaths& paths, bool force, std::ostream& log) {
    if (!force && all_exist({paths.metrics_json(), paths.metrics_table(), paths.diagnostics_json()})) {
        log << "[evaluate] outputs exist, skipping\n";
        return;
    }
    const auto probe_model = probe::load_probe_checkpoint(paths.probe_checkpoint());
    const auto rank_model = rank::load_rank_checkpoint(paths.rank_checkpoint());
    if (probe_model.encoder_digest != rank::encoder_digest(*rank_model.encoder)) {
        throw DigestError(paths.probe_checkpoint() + ": probe was fit on a different encoder than " +
                          paths.rank_checkpoint());
    }
    const auto labeled = data::load_labeled_images(data::load_manifest(paths.eval_manifest()));

    const auto report = eval::evaluate(probe_model, labeled, cfg.patch_k());
    fs::create_directories(fs::path(paths.metrics_json()).parent_path());
    {
        std::ofstream out(paths.metrics_json());
        out << eval::report_to_json(report, cfg.resolved()).dump(1) << '\n';
    }
    {
        std::ofstream out(paths.metrics_table());
        out << eval::report_table({report});
    }

    const auto diag = eval::rank_diagnostics(rank_model, labeled, paths.features_csv());
    nlohmann::json dj;
    dj["spearman"] = diag.spearman ? nlohmann::json(*diag.spearman) : nlohmann::json();
    dj["pairwise_accuracy"] = diag.pairwise_accuracy;
    dj["n_images"] = diag.n_images;
    dj["feature_csv"] = "reports/features.csv";
    dj["encoder_digest"] = rank::encoder_digest(*rank_model.encoder);
    dj["run_config"] = cfg.resolved();
    {
        std::ofstream out(paths.diagnostics_json());
        out << dj.dump(1) << '\n';
    }
    log << "[evaluate] mae " << report.mae << " mse " << report.mse << " over " << report.n_images
        << " images (k=" << report.patch_k << ")\n";
}

namespace {

// Stage failures surface with a stage tag and their original type, so the
// CLI exit code still reflects the error class.
template <class Fn>
void run_stage(const char* name, Fn&& fn) {
    auto tag = [name](const char* what) { return "[" + std::string(name) + "] " + what; };
    try {
        fn();
    } catch (const UsageError& e) {
        throw UsageError(tag(e.what()));
    } catch (const DigestError& e) {
        throw DigestError(tag(e.what()));
    } catch (const DivergenceError& e) {
        throw DivergenceError(tag(e.what()));
    } catch (const DataError& e) {
        throw DataError(tag(e.what()));
    } catch (const std::invalid_argument& e) {
        throw DataError(tag(e.what()));
    }
}

}  // namespace

void run_pipeline(const RunConfig& cfg, const std::string& out_dir, bool force, std::ostream& log) {
    const RunPaths paths{out_dir};
    run_stage("generate-ranking", [&] { stage_generate_ranking(cfg, paths, force, log); });
    run_stage("generate-noisy", [&] { stage_generate_noisy(cfg, paths, force, log); });
    run_stage("pretrain", [&] { stage_pretrain(cfg, paths, force, log); });
    run_stage("probe", [&] { stage_probe(cfg, paths, force, log); });
    run_stage("evaluate", [&] { stage_evaluate(cfg, paths, force, log); });
}

}  // namespace crowdcount::cli
