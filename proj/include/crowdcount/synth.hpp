#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "crowdcount/blinded.hpp"
#include "crowdcount/image.hpp"
#include "crowdcount/rng.hpp"
#include "crowdcount/scene.hpp"

namespace crowdcount::synth {

// Generation recipe handed verbatim to a diffusion backend. The defaults
// describe the pedestrian-removal / count-prompt setup so a real backend
// reproduces it with no code change; `seed` carries the stochasticity.
struct PromptSpec {
    std::string prompt;
    std::string negative_prompt;
    double strength = 0.45;
    double guidance_scale = 7.5;
    int steps = 50;
    std::int64_t seed = 0;
};

PromptSpec ranking_prompt_defaults();
PromptSpec noisy_count_prompt_defaults(int n);
PromptSpec empty_scene_prompt_defaults();

// (real, synthetic) image pair with the count guarantee
// hidden_real_count >= hidden_syn_count. Hidden counts are evaluation-only.
struct RankingPair {
    std::shared_ptr<const Image> real;
    std::shared_ptr<const Image> synthetic;
    BlindedCount hidden_real_count;
    BlindedCount hidden_syn_count;
    std::string source_id;
    int variant_index = 0;
};

struct NoisyCountExample {
    std::shared_ptr<const Image> image;
    int prompt_count = 0;
    BlindedCount hidden_true_count;
    std::string id;
};

// Renders every source once, then derives `variants_per_source` synthetic
// images per source with removal fractions drawn uniformly from
// removal_range. Output is grouped by source, variants in order.
std::vector<RankingPair> make_ranking_dataset(const std::vector<SceneSpec>& sources, int variants_per_source,
                                              std::pair<double, double> removal_range, std::uint64_t rng_seed);

// True count drawn as round(prompt * exp(eta)), eta ~ N(0, sigma^2),
// clamped at 0. The multiplicative form keeps the median at the prompt.
long long sample_noisy_true_count(int prompt_count, double noise_sigma, Rng& rng);

struct NoisyDatasetConfig {
    SceneParams scene;
    std::vector<int> counts = {1, 5, 10, 50, 100, 200};
    int per_count = 60;
    int empty_scenes = 60;
    double noise_sigma = 0.5;
};

std::vector<NoisyCountExample> make_noisy_count_dataset(const NoisyDatasetConfig& cfg, std::uint64_t rng_seed);

// Diffusion backend adapter. The shipped project registers nothing; an
// embedding application registers its generator by name and the config
// selects it. `source` is null for text-to-image generation.
using DiffusionBackend = std::function<Image(const Image* source, const PromptSpec& prompt)>;

void register_diffusion_backend(const std::string& name, DiffusionBackend backend);
bool has_diffusion_backend(const std::string& name);
void clear_diffusion_backends();

// Throws DataError("backend not configured") when `backend` is empty or
// unknown; backend exceptions propagate verbatim.
Image diffusion_generate(const Image* source, const PromptSpec& prompt, const std::string& backend);

}  // namespace crowdcount::synth
