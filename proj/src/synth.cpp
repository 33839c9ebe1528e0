#include "crowdcount/synth.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>

#include "crowdcount/errors.hpp"

namespace crowdcount::synth {

PromptSpec ranking_prompt_defaults() {
    PromptSpec p;
    p.prompt = "An empty outside space. Nobody around. High resolution DSLR photography.";
    p.negative_prompt = "people, crowds, pedestrians, humans, 3d, cartoon, anime, painting";
    return p;
}

PromptSpec noisy_count_prompt_defaults(int n) {
    PromptSpec p;
    p.prompt = "A group of " + std::to_string(n) + " people. High angle";
    p.negative_prompt = "B&W, cartoon, anime, 3D, watercolor, artistic, geometric";
    p.strength = 1.0;  // text-to-image, no source to preserve
    return p;
}

PromptSpec empty_scene_prompt_defaults() {
    PromptSpec p;
    p.prompt = "an empty urban environment";
    p.negative_prompt = "Humans, people, pedestrians, crowds, B&W, cartoon, anime, 3D, watercolor, artistic, geometric";
    p.strength = 1.0;
    return p;
}

std::vector<RankingPair> make_ranking_dataset(const std::vector<SceneSpec>& sources, int variants_per_source,
                                              std::pair<double, double> removal_range, std::uint64_t rng_seed) {
    const auto [low, high] = removal_range;
    if (low < 0.0 || high > 1.0 || low > high) {
        throw std::invalid_argument("removal_range must satisfy 0 <= low <= high <= 1");
    }
    if (variants_per_source < 1) throw std::invalid_argument("variants_per_source must be >= 1");

    std::vector<RankingPair> pairs(sources.size() * static_cast<std::size_t>(variants_per_source));
    parallel_for(static_cast<int>(sources.size()), [&](int i) {
        const SceneSpec& source = sources[i];
        const std::string source_id = "src" + std::to_string(i);
        auto real = std::make_shared<Image>(render_scene(source));
        real->source_id = source_id;
        for (int v = 0; v < variants_per_source; ++v) {
            Rng rng(mix_seed(rng_seed, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(v)));
            const double fraction = rng.uniform(low, high);
            const SceneSpec reduced = remove_pedestrians(source, fraction, rng.next());
            auto syn = std::make_shared<Image>(render_scene(reduced));
            syn->source_id = source_id + "_v" + std::to_string(v);

            RankingPair& pair = pairs[static_cast<std::size_t>(i) * variants_per_source + v];
            pair.real = real;
            pair.synthetic = std::move(syn);
            pair.hidden_real_count = BlindedCount(source.pedestrian_count());
            pair.hidden_syn_count = BlindedCount(reduced.pedestrian_count());
            pair.source_id = source_id;
            pair.variant_index = v;
        }
    });
    return pairs;
}

long long sample_noisy_true_count(int prompt_count, double noise_sigma, Rng& rng) {
    if (noise_sigma < 0.0) throw std::invalid_argument("noise_sigma must be >= 0");
    if (prompt_count <= 0) return 0;
    const double eta = rng.normal(0.0, noise_sigma);
    const auto value = static_cast<long long>(std::llround(prompt_count * std::exp(eta)));
    return value < 0 ? 0 : value;
}

std::vector<NoisyCountExample> make_noisy_count_dataset(const NoisyDatasetConfig& cfg, std::uint64_t rng_seed) {
    if (cfg.noise_sigma < 0.0) throw std::invalid_argument("noise_sigma must be >= 0");
    for (int c : cfg.counts) {
        if (c <= 0) throw std::invalid_argument("prompt counts must be positive");
    }
    if (cfg.per_count < 0 || cfg.empty_scenes < 0) throw std::invalid_argument("dataset sizes must be >= 0");

    struct Slot {
        int prompt = 0;
        long long true_count = 0;
        std::uint64_t scene_seed = 0;
    };
    std::vector<Slot> slots;
    slots.reserve(cfg.counts.size() * cfg.per_count + cfg.empty_scenes);

    // Labels first, sequentially, so the noise stream does not depend on
    // render parallelism.
    for (std::size_t ci = 0; ci < cfg.counts.size(); ++ci) {
        for (int j = 0; j < cfg.per_count; ++j) {
            Rng rng(mix_seed(rng_seed, ci + 1, static_cast<std::uint64_t>(j)));
            Slot s;
            s.prompt = cfg.counts[ci];
            s.true_count = sample_noisy_true_count(s.prompt, cfg.noise_sigma, rng);
            s.scene_seed = rng.next();
            slots.push_back(s);
        }
    }
    for (int j = 0; j < cfg.empty_scenes; ++j) {
        Rng rng(mix_seed(rng_seed, 0, static_cast<std::uint64_t>(j)));
        slots.push_back({0, 0, rng.next()});
    }

    std::vector<NoisyCountExample> out(slots.size());
    parallel_for(static_cast<int>(slots.size()), [&](int i) {
        const Slot& s = slots[i];
        const SceneSpec spec = sample_scene(cfg.scene, static_cast<int>(s.true_count), s.scene_seed);
        auto img = std::make_shared<Image>(render_scene(spec));
        img->source_id = "noisy" + std::to_string(i);
        out[i].image = std::move(img);
        out[i].prompt_count = s.prompt;
        out[i].hidden_true_count = BlindedCount(s.true_count);
        out[i].id = "noisy" + std::to_string(i);
    });
    return out;
}

namespace {

std::map<std::string, DiffusionBackend>& backend_registry() {
    static std::map<std::string, DiffusionBackend> registry;
    return registry;
}

std::mutex& backend_mutex() {
    static std::mutex mu;
    return mu;
}

}  // namespace

void register_diffusion_backend(const std::string& name, DiffusionBackend backend) {
    std::lock_guard<std::mutex> lock(backend_mutex());
    backend_registry()[name] = std::move(backend);
}

bool has_diffusion_backend(const std::string& name) {
    std::lock_guard<std::mutex> lock(backend_mutex());
    return backend_registry().count(name) > 0;
}

void clear_diffusion_backends() {
    std::lock_guard<std::mutex> lock(backend_mutex());
    backend_registry().clear();
}

Image diffusion_generate(const Image* source, const PromptSpec& prompt, const std::string& backend) {
    DiffusionBackend fn;
    {
        std::lock_guard<std::mutex> lock(backend_mutex());
        auto it = backend_registry().find(backend);
        if (backend.empty() || it == backend_registry().end()) {
            throw DataError("backend not configured");
        }
        fn = it->second;
    }
    return fn(source, prompt);
}

}  // namespace crowdcount::synth
