#pragma once

#include <json.hpp>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "crowdcount/dataset.hpp"
#include "crowdcount/encoder.hpp"
#include "crowdcount/rank.hpp"
#include "crowdcount/scene.hpp"
#include "crowdcount/synth.hpp"

namespace crowdcount::cli {

// Layered configuration: shipped defaults, then an optional JSON config
// file, then explicitly set CLI flags. The fully resolved tree is embedded
// in every checkpoint and report.
class RunConfig {
  public:
    static nlohmann::json defaults();

    static RunConfig resolve(const std::string& config_path, const nlohmann::json& flag_overrides);

    const nlohmann::json& resolved() const { return resolved_; }

    // "default", "file" or "flag" for a dotted key like "pretrain.epochs".
    std::string provenance(const std::string& dotted_key) const;

    // One "key = value  [provenance]" line per leaf, sorted by key.
    std::string dump_with_provenance() const;

    void validate() const;

    std::uint64_t seed() const;
    synth::SceneParams scene_params() const;
    int scene_max_count() const;

    int ranking_sources() const;
    int variants_per_source() const;
    std::pair<double, double> removal_range() const;
    double validation_fraction() const;

    synth::NoisyDatasetConfig noisy_config() const;

    rank::EncoderConfig encoder_config() const;
    rank::TrainConfig pretrain_config() const;
    rank::TrainConfig probe_config() const;

    // resize fields of 0 resolve to the encoder input shape.
    data::AugmentationConfig augment_config() const;

    int eval_scenes() const;
    int patch_k() const;
    std::vector<int> sweep_ks() const;

    std::string diffusion_backend() const;
    synth::PromptSpec ranking_prompt() const;

  private:
    nlohmann::json file_;
    nlohmann::json flags_;
    nlohmann::json resolved_;
};

}  // namespace crowdcount::cli
