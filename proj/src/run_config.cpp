#include "crowdcount/run_config.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "crowdcount/errors.hpp"
#include "crowdcount/rng.hpp"

using nlohmann::json;

namespace crowdcount::cli {

namespace {

void deep_merge(json& base, const json& overlay) {
    if (!overlay.is_object() || !base.is_object()) {
        base = overlay;
        return;
    }
    for (auto it = overlay.begin(); it != overlay.end(); ++it) {
        if (base.contains(it.key()) && base[it.key()].is_object() && it.value().is_object()) {
            deep_merge(base[it.key()], it.value());
        } else {
            base[it.key()] = it.value();
        }
    }
}

bool contains_path(const json& tree, const std::string& dotted) {
    const json* node = &tree;
    std::size_t start = 0;
    for (;;) {
        const std::size_t dot = dotted.find('.', start);
        const std::string key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!node->is_object() || !node->contains(key)) return false;
        node = &(*node)[key];
        if (dot == std::string::npos) return true;
        start = dot + 1;
    }
}

void collect_leaves(const json& tree, const std::string& prefix, std::map<std::string, json>& out) {
    if (tree.is_object()) {
        for (auto it = tree.begin(); it != tree.end(); ++it) {
            collect_leaves(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
        }
    } else {
        out[prefix] = tree;
    }
}

}  // namespace

json RunConfig::defaults() {
    return json{
        {"seed", 1},
        {"scene",
         {{"width", 96},
          {"height", 96},
          {"perspective", 0.4},
          {"scale_min", 0.8},
          {"scale_max", 1.6},
          {"distractors_min", 0},
          {"distractors_max", 12},
          {"max_count", 200}}},
        {"ranking",
         {{"sources", 400},
          {"variants_per_source", 4},
          {"removal_low", 0.3},
          {"removal_high", 0.95},
          {"val_fraction", 0.15}}},
        {"noisy",
         {{"counts", json::array({1, 5, 10, 50, 100, 200})},
          {"per_count", 60},
          {"empty_scenes", 60},
          {"noise_sigma", 0.5}}},
        {"encoder",
         {{"architecture", "toy_cnn"},
          {"feature_dim", 64},
          {"input_height", 64},
          {"input_width", 64},
          {"adapter_name", ""}}},
        {"pretrain", {{"epochs", 40}, {"learning_rate", 5e-5}, {"batch_size", 8}}},
        {"probe", {{"epochs", 40}, {"learning_rate", 5e-5}, {"batch_size", 8}}},
        {"augment",
         {{"horizontal_flip_prob", 0.5},
          {"brightness_jitter", 0.2},
          {"resize_height", 0},  // 0 = match the encoder input
          {"resize_width", 0}}},
        {"eval", {{"scenes", 100}, {"patch_k", 1}, {"sweep_ks", json::array({1, 2, 3, 4})}}},
        {"diffusion", {{"backend", ""}, {"strength", 0.45}, {"guidance_scale", 7.5}, {"steps", 50}}},
    };
}

RunConfig RunConfig::resolve(const std::string& config_path, const json& flag_overrides) {
    RunConfig cfg;
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw UsageError("cannot open config file: " + config_path);
        cfg.file_ = json::parse(in, nullptr, false);
        if (cfg.file_.is_discarded()) throw UsageError("malformed config JSON: " + config_path);
        if (!cfg.file_.is_object()) throw UsageError("config file must hold a JSON object: " + config_path);
    } else {
        cfg.file_ = json::object();
    }
    cfg.flags_ = flag_overrides.is_null() ? json::object() : flag_overrides;

    cfg.resolved_ = defaults();
    deep_merge(cfg.resolved_, cfg.file_);
    deep_merge(cfg.resolved_, cfg.flags_);
    cfg.validate();
    return cfg;
}

std::string RunConfig::provenance(const std::string& dotted_key) const {
    if (contains_path(flags_, dotted_key)) return "flag";
    if (contains_path(file_, dotted_key)) return "file";
    return "default";
}

std::string RunConfig::dump_with_provenance() const {
    std::map<std::string, json> leaves;
    collect_leaves(resolved_, "", leaves);
    std::ostringstream out;
    for (const auto& [key, value] : leaves) {
        out << key << " = " << value.dump() << "  [" << provenance(key) << "]\n";
    }
    return out.str();
}

void RunConfig::validate() const {
    const auto& r = resolved_;
    auto fail = [](const std::string& what) { throw UsageError("config validation: " + what); };

    if (r.at("scene").at("width").get<int>() <= 0 || r.at("scene").at("height").get<int>() <= 0) {
        fail("scene dimensions must be positive");
    }
    const double frac = r.at("ranking").at("val_fraction").get<double>();
    if (frac < 0.0 || frac >= 1.0) fail("ranking.val_fraction must be in [0, 1)");
    const double lo = r.at("ranking").at("removal_low").get<double>();
    const double hi = r.at("ranking").at("removal_high").get<double>();
    if (lo < 0.0 || hi > 1.0 || lo > hi) fail("ranking removal range must satisfy 0 <= low <= high <= 1");
    rank::architecture_from_name(r.at("encoder").at("architecture").get<std::string>());
    for (const auto& c : r.at("noisy").at("counts")) {
        if (c.get<int>() <= 0) fail("noisy.counts must be positive");
    }
    if (r.at("noisy").at("noise_sigma").get<double>() < 0.0) fail("noisy.noise_sigma must be >= 0");

    const int rh = r.at("augment").at("resize_height").get<int>();
    const int rw = r.at("augment").at("resize_width").get<int>();
    const int ih = r.at("encoder").at("input_height").get<int>();
    const int iw = r.at("encoder").at("input_width").get<int>();
    if ((rh != 0 && rh != ih) || (rw != 0 && rw != iw)) {
        fail("augment resize target must be 0 (match encoder) or equal to the encoder input shape");
    }
    for (const auto& k : r.at("eval").at("sweep_ks")) {
        if (k.get<int>() < 1) fail("eval.sweep_ks entries must be >= 1");
    }
    if (r.at("eval").at("patch_k").get<int>() < 1) fail("eval.patch_k must be >= 1");
}

std::uint64_t RunConfig::seed() const { return resolved_.at("seed").get<std::uint64_t>(); }

synth::SceneParams RunConfig::scene_params() const {
    const auto& s = resolved_.at("scene");
    synth::SceneParams params;
    params.width = s.at("width").get<int>();
    params.height = s.at("height").get<int>();
    params.perspective = s.at("perspective").get<float>();
    params.scale_min = s.at("scale_min").get<float>();
    params.scale_max = s.at("scale_max").get<float>();
    params.distractors_min = s.at("distractors_min").get<int>();
    params.distractors_max = s.at("distractors_max").get<int>();
    return params;
}

int RunConfig::scene_max_count() const { return resolved_.at("scene").at("max_count").get<int>(); }

int RunConfig::ranking_sources() const { return resolved_.at("ranking").at("sources").get<int>(); }

int RunConfig::variants_per_source() const {
    return resolved_.at("ranking").at("variants_per_source").get<int>();
}

std::pair<double, double> RunConfig::removal_range() const {
    return {resolved_.at("ranking").at("removal_low").get<double>(),
            resolved_.at("ranking").at("removal_high").get<double>()};
}

double RunConfig::validation_fraction() const { return resolved_.at("ranking").at("val_fraction").get<double>(); }

synth::NoisyDatasetConfig RunConfig::noisy_config() const {
    const auto& n = resolved_.at("noisy");
    synth::NoisyDatasetConfig cfg;
    cfg.scene = scene_params();
    cfg.counts = n.at("counts").get<std::vector<int>>();
    cfg.per_count = n.at("per_count").get<int>();
    cfg.empty_scenes = n.at("empty_scenes").get<int>();
    cfg.noise_sigma = n.at("noise_sigma").get<double>();
    return cfg;
}

rank::EncoderConfig RunConfig::encoder_config() const {
    const auto& e = resolved_.at("encoder");
    rank::EncoderConfig cfg;
    cfg.architecture = rank::architecture_from_name(e.at("architecture").get<std::string>());
    cfg.feature_dim = e.at("feature_dim").get<int>();
    cfg.input_height = e.at("input_height").get<int>();
    cfg.input_width = e.at("input_width").get<int>();
    cfg.adapter_name = e.at("adapter_name").get<std::string>();
    return cfg;
}

namespace {

rank::TrainConfig train_config_from(const json& section, std::uint64_t seed) {
    rank::TrainConfig cfg;
    cfg.epochs = section.at("epochs").get<int>();
    cfg.learning_rate = section.at("learning_rate").get<double>();
    cfg.batch_size = section.at("batch_size").get<int>();
    cfg.seed = seed;
    return cfg;
}

}  // namespace

rank::TrainConfig RunConfig::pretrain_config() const {
    return train_config_from(resolved_.at("pretrain"), mix_seed(seed(), 0x11));
}

rank::TrainConfig RunConfig::probe_config() const {
    return train_config_from(resolved_.at("probe"), mix_seed(seed(), 0x12));
}

data::AugmentationConfig RunConfig::augment_config() const {
    const auto& a = resolved_.at("augment");
    data::AugmentationConfig cfg;
    cfg.horizontal_flip_prob = a.at("horizontal_flip_prob").get<double>();
    cfg.brightness_jitter = a.at("brightness_jitter").get<double>();
    cfg.resize_height = a.at("resize_height").get<int>();
    cfg.resize_width = a.at("resize_width").get<int>();
    if (cfg.resize_height == 0) cfg.resize_height = resolved_.at("encoder").at("input_height").get<int>();
    if (cfg.resize_width == 0) cfg.resize_width = resolved_.at("encoder").at("input_width").get<int>();
    return cfg;
}

int RunConfig::eval_scenes() const { return resolved_.at("eval").at("scenes").get<int>(); }

int RunConfig::patch_k() const { return resolved_.at("eval").at("patch_k").get<int>(); }

std::vector<int> RunConfig::sweep_ks() const {
    return resolved_.at("eval").at("sweep_ks").get<std::vector<int>>();
}

std::string RunConfig::diffusion_backend() const {
    return resolved_.at("diffusion").at("backend").get<std::string>();
}

synth::PromptSpec RunConfig::ranking_prompt() const {
    synth::PromptSpec prompt = synth::ranking_prompt_defaults();
    const auto& d = resolved_.at("diffusion");
    prompt.strength = d.at("strength").get<double>();
    prompt.guidance_scale = d.at("guidance_scale").get<double>();
    prompt.steps = d.at("steps").get<int>();
    return prompt;
}

}  // namespace crowdcount::cli
