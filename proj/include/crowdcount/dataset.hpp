#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "crowdcount/blinded.hpp"
#include "crowdcount/image.hpp"
#include "crowdcount/synth.hpp"

namespace crowdcount::data {

enum class Role { rank_real, rank_syn, noisy };

std::string role_name(Role role);
Role role_from_name(const std::string& name);

// One JSON-lines record. image_path is relative to the manifest's root_dir;
// pair_id groups one rank_real record with its rank_syn variants.
struct ManifestRecord {
    std::string id;
    Role role = Role::noisy;
    std::string image_path;
    std::optional<std::string> pair_id;
    std::optional<int> prompt_count;
    BlindedCount hidden_count;
};

struct DatasetManifest {
    std::vector<ManifestRecord> records;
    std::string root_dir;
    std::uint64_t split_seed = 0;

    std::string resolve_path(const ManifestRecord& rec) const;
    // Grouping key used for source-level splits: pair_id when present,
    // otherwise the record id.
    static const std::string& source_key(const ManifestRecord& rec);
};

// Eagerly validates: JSON-lines shape, role values, pair_id linkage
// (exactly one rank_real and at least one rank_syn per pair), and that
// every referenced image exists and decodes. Errors name the record index
// or pair_id. root_dir is the manifest file's directory.
DatasetManifest load_manifest(const std::string& path);

void save_manifest(const DatasetManifest& manifest, const std::string& path);

// Writers used by the generation stages: images land under
// root_dir/image_subdir as PNG, the manifest at root_dir/manifest_name.
DatasetManifest write_ranking_dataset(const std::vector<synth::RankingPair>& pairs, const std::string& root_dir,
                                      const std::string& image_subdir, const std::string& manifest_name);
DatasetManifest write_noisy_dataset(const std::vector<synth::NoisyCountExample>& examples,
                                    const std::string& root_dir, const std::string& image_subdir,
                                    const std::string& manifest_name);

struct SplitConfig {
    double validation_fraction = 0.15;
    std::uint64_t seed = 0;
};

// Splits by source: a source and all of its synthetic variants land on the
// same side. |validation sources| = round(fraction * |sources|).
std::pair<DatasetManifest, DatasetManifest> split(const DatasetManifest& manifest, const SplitConfig& cfg);

struct AugmentationConfig {
    double horizontal_flip_prob = 0.5;
    double brightness_jitter = 0.2;  // multiplicative range [1-j, 1+j]
    int resize_height = 640;
    int resize_width = 853;
};

// Resize, then one flip draw and one brightness draw applied identically
// to both images of the pair. Hidden counts and ids are unchanged.
synth::RankingPair augment(const synth::RankingPair& pair, const AugmentationConfig& cfg, std::uint64_t rng_seed);

// In-memory loaders; images are decoded once and shared.
std::vector<synth::RankingPair> load_ranking_pairs(const DatasetManifest& manifest);
std::vector<synth::NoisyCountExample> load_noisy_examples(const DatasetManifest& manifest);

struct LabeledImage {
    std::shared_ptr<const Image> image;
    long long truth = 0;
    std::string id;
};

// Evaluation-side loader; this is the one place manifests reveal hidden counts.
std::vector<LabeledImage> load_labeled_images(const DatasetManifest& manifest);

// Generic point-annotation reader: a JSON array of
// {"image_path": ..., "points": [[x, y], ...]} objects, reduced to counts.
std::vector<std::pair<std::string, long long>> load_point_annotations(const std::string& path);

}  // namespace crowdcount::data
