#include "crowdcount/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "crowdcount/errors.hpp"
#include "crowdcount/png_io.hpp"
#include "crowdcount/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace crowdcount::data {

std::string role_name(Role role) {
    switch (role) {
        case Role::rank_real: return "rank_real";
        case Role::rank_syn: return "rank_syn";
        case Role::noisy: return "noisy";
    }
    return "noisy";
}

Role role_from_name(const std::string& name) {
    if (name == "rank_real") return Role::rank_real;
    if (name == "rank_syn") return Role::rank_syn;
    if (name == "noisy") return Role::noisy;
    throw DataError("unknown manifest role: " + name);
}

std::string DatasetManifest::resolve_path(const ManifestRecord& rec) const {
    if (root_dir.empty()) return rec.image_path;
    return (fs::path(root_dir) / rec.image_path).string();
}

const std::string& DatasetManifest::source_key(const ManifestRecord& rec) {
    return rec.pair_id ? *rec.pair_id : rec.id;
}

namespace {

json record_to_json(const ManifestRecord& rec) {
    json j;
    j["id"] = rec.id;
    j["role"] = role_name(rec.role);
    j["image_path"] = rec.image_path;
    if (rec.pair_id) j["pair_id"] = *rec.pair_id;
    if (rec.prompt_count) j["prompt_count"] = *rec.prompt_count;
    j["hidden_count"] = rec.hidden_count.reveal();
    return j;
}

ManifestRecord record_from_json(const json& j, std::size_t index) {
    auto fail = [index](const std::string& what) {
        throw DataError("manifest record " + std::to_string(index) + ": " + what);
    };
    if (!j.is_object()) fail("not a JSON object");
    ManifestRecord rec;
    try {
        rec.id = j.at("id").get<std::string>();
        rec.role = role_from_name(j.at("role").get<std::string>());
        rec.image_path = j.at("image_path").get<std::string>();
        if (j.contains("pair_id")) rec.pair_id = j.at("pair_id").get<std::string>();
        if (j.contains("prompt_count")) rec.prompt_count = j.at("prompt_count").get<int>();
        rec.hidden_count = BlindedCount(j.at("hidden_count").get<long long>());
    } catch (const json::exception& e) {
        fail(e.what());
    }
    if (rec.id.empty()) fail("empty id");
    if (rec.image_path.empty()) fail("empty image_path");
    return rec;
}

void validate_manifest(const DatasetManifest& manifest) {
    std::map<std::string, int> reals_per_pair;
    std::map<std::string, int> syns_per_pair;
    std::set<std::string> ids;

    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        const auto& rec = manifest.records[i];
        if (!ids.insert(rec.id).second) {
            throw DataError("manifest record " + std::to_string(i) + ": duplicate id " + rec.id);
        }
        if (rec.role == Role::rank_real || rec.role == Role::rank_syn) {
            if (!rec.pair_id) {
                throw DataError("manifest record " + std::to_string(i) + ": ranking record without pair_id");
            }
            (rec.role == Role::rank_real ? reals_per_pair : syns_per_pair)[*rec.pair_id] += 1;
        }
        const std::string path = manifest.resolve_path(rec);
        if (!fs::exists(path)) {
            throw DataError("manifest record " + std::to_string(i) + ": missing image file " + path);
        }
        read_png(path);  // must decode
    }
    for (const auto& [pair_id, n_real] : reals_per_pair) {
        if (n_real != 1) {
            throw DataError("pair_id " + pair_id + ": expected exactly 1 rank_real record, found " +
                            std::to_string(n_real));
        }
        if (syns_per_pair.find(pair_id) == syns_per_pair.end()) {
            throw DataError("pair_id " + pair_id + ": rank_real without any rank_syn record");
        }
    }
    for (const auto& [pair_id, n_syn] : syns_per_pair) {
        if (reals_per_pair.find(pair_id) == reals_per_pair.end()) {
            throw DataError("pair_id " + pair_id + ": rank_syn without a rank_real record");
        }
    }
}

}  // namespace

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest: " + path);

    DatasetManifest manifest;
    manifest.root_dir = fs::path(path).parent_path().string();

    std::string line;
    std::size_t index = 0;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            ++index;
            continue;
        }
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            throw DataError("manifest record " + std::to_string(index) + ": malformed JSON");
        }
        manifest.records.push_back(record_from_json(j, index));
        ++index;
    }
    validate_manifest(manifest);
    return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest: " + path);
    for (const auto& rec : manifest.records) {
        out << record_to_json(rec).dump() << '\n';
    }
    if (!out) throw DataError("write failure for manifest: " + path);
}

DatasetManifest write_ranking_dataset(const std::vector<synth::RankingPair>& pairs, const std::string& root_dir,
                                      const std::string& image_subdir, const std::string& manifest_name) {
    fs::create_directories(fs::path(root_dir) / image_subdir);

    DatasetManifest manifest;
    manifest.root_dir = root_dir;

    std::set<std::string> written_sources;
    for (const auto& pair : pairs) {
        if (written_sources.insert(pair.source_id).second) {
            const std::string rel = image_subdir + "/" + pair.source_id + ".png";
            write_png(*pair.real, (fs::path(root_dir) / rel).string());
            ManifestRecord rec;
            rec.id = pair.source_id;
            rec.role = Role::rank_real;
            rec.image_path = rel;
            rec.pair_id = pair.source_id;
            rec.hidden_count = pair.hidden_real_count;
            manifest.records.push_back(rec);
        }
        const std::string syn_id = pair.source_id + "_v" + std::to_string(pair.variant_index);
        const std::string rel = image_subdir + "/" + syn_id + ".png";
        write_png(*pair.synthetic, (fs::path(root_dir) / rel).string());
        ManifestRecord rec;
        rec.id = syn_id;
        rec.role = Role::rank_syn;
        rec.image_path = rel;
        rec.pair_id = pair.source_id;
        rec.hidden_count = pair.hidden_syn_count;
        manifest.records.push_back(rec);
    }
    save_manifest(manifest, (fs::path(root_dir) / manifest_name).string());
    return manifest;
}

DatasetManifest write_noisy_dataset(const std::vector<synth::NoisyCountExample>& examples,
                                    const std::string& root_dir, const std::string& image_subdir,
                                    const std::string& manifest_name) {
    fs::create_directories(fs::path(root_dir) / image_subdir);

    DatasetManifest manifest;
    manifest.root_dir = root_dir;
    for (const auto& ex : examples) {
        const std::string rel = image_subdir + "/" + ex.id + ".png";
        write_png(*ex.image, (fs::path(root_dir) / rel).string());
        ManifestRecord rec;
        rec.id = ex.id;
        rec.role = Role::noisy;
        rec.image_path = rel;
        rec.prompt_count = ex.prompt_count;
        rec.hidden_count = ex.hidden_true_count;
        manifest.records.push_back(rec);
    }
    save_manifest(manifest, (fs::path(root_dir) / manifest_name).string());
    return manifest;
}

std::pair<DatasetManifest, DatasetManifest> split(const DatasetManifest& manifest, const SplitConfig& cfg) {
    if (manifest.records.empty()) throw DataError("split: manifest is empty");
    if (cfg.validation_fraction < 0.0 || cfg.validation_fraction >= 1.0) {
        throw std::invalid_argument("validation_fraction must be in [0, 1)");
    }

    std::vector<std::string> sources;
    std::set<std::string> seen;
    for (const auto& rec : manifest.records) {
        const std::string& key = DatasetManifest::source_key(rec);
        if (seen.insert(key).second) sources.push_back(key);
    }
    std::sort(sources.begin(), sources.end());
    Rng rng(cfg.seed);
    rng.shuffle(sources);

    const auto n_val = static_cast<std::size_t>(std::lround(cfg.validation_fraction * sources.size()));
    std::set<std::string> val_sources(sources.begin(), sources.begin() + n_val);

    DatasetManifest train, val;
    train.root_dir = val.root_dir = manifest.root_dir;
    train.split_seed = val.split_seed = cfg.seed;
    for (const auto& rec : manifest.records) {
        (val_sources.count(DatasetManifest::source_key(rec)) ? val : train).records.push_back(rec);
    }
    return {std::move(train), std::move(val)};
}

synth::RankingPair augment(const synth::RankingPair& pair, const AugmentationConfig& cfg, std::uint64_t rng_seed) {
    Rng rng(rng_seed);
    const bool flip = rng.uniform01() < cfg.horizontal_flip_prob;
    const auto factor =
        static_cast<float>(rng.uniform(1.0 - cfg.brightness_jitter, 1.0 + cfg.brightness_jitter));

    auto transform = [&](const Image& src) {
        Image out = resize_bilinear(src, cfg.resize_height, cfg.resize_width);
        if (flip) flip_horizontal_inplace(out);
        scale_brightness_inplace(out, factor);
        return out;
    };

    synth::RankingPair out = pair;
    out.real = std::make_shared<Image>(transform(*pair.real));
    out.synthetic = std::make_shared<Image>(transform(*pair.synthetic));
    return out;
}

std::vector<synth::RankingPair> load_ranking_pairs(const DatasetManifest& manifest) {
    std::map<std::string, const ManifestRecord*> reals;
    for (const auto& rec : manifest.records) {
        if (rec.role == Role::rank_real) reals[*rec.pair_id] = &rec;
    }

    std::vector<const ManifestRecord*> syn_records;
    std::vector<int> variant_indices;
    std::map<std::string, int> variants_seen;
    for (const auto& rec : manifest.records) {
        if (rec.role == Role::rank_syn) {
            syn_records.push_back(&rec);
            variant_indices.push_back(variants_seen[*rec.pair_id]++);
        }
    }

    std::map<std::string, std::shared_ptr<const Image>> real_images;
    for (const auto& [pair_id, rec] : reals) {
        auto img = std::make_shared<Image>(read_png(manifest.resolve_path(*rec)));
        img->source_id = rec->id;
        real_images[pair_id] = std::move(img);
    }

    std::vector<synth::RankingPair> pairs(syn_records.size());
    parallel_for(static_cast<int>(syn_records.size()), [&](int i) {
        const ManifestRecord& rec = *syn_records[i];
        auto it = reals.find(*rec.pair_id);
        if (it == reals.end()) throw DataError("pair_id " + *rec.pair_id + ": no rank_real record");
        auto syn = std::make_shared<Image>(read_png(manifest.resolve_path(rec)));
        syn->source_id = rec.id;

        synth::RankingPair& pair = pairs[i];
        pair.real = real_images.at(*rec.pair_id);
        pair.synthetic = std::move(syn);
        pair.hidden_real_count = it->second->hidden_count;
        pair.hidden_syn_count = rec.hidden_count;
        pair.source_id = *rec.pair_id;
        pair.variant_index = variant_indices[i];
    });
    return pairs;
}

std::vector<synth::NoisyCountExample> load_noisy_examples(const DatasetManifest& manifest) {
    std::vector<const ManifestRecord*> recs;
    for (const auto& rec : manifest.records) {
        if (rec.role == Role::noisy) recs.push_back(&rec);
    }
    std::vector<synth::NoisyCountExample> out(recs.size());
    parallel_for(static_cast<int>(recs.size()), [&](int i) {
        const ManifestRecord& rec = *recs[i];
        auto img = std::make_shared<Image>(read_png(manifest.resolve_path(rec)));
        img->source_id = rec.id;
        out[i].image = std::move(img);
        out[i].prompt_count = rec.prompt_count.value_or(0);
        out[i].hidden_true_count = rec.hidden_count;
        out[i].id = rec.id;
    });
    return out;
}

std::vector<LabeledImage> load_labeled_images(const DatasetManifest& manifest) {
    std::vector<LabeledImage> out(manifest.records.size());
    parallel_for(static_cast<int>(manifest.records.size()), [&](int i) {
        const ManifestRecord& rec = manifest.records[i];
        auto img = std::make_shared<Image>(read_png(manifest.resolve_path(rec)));
        img->source_id = rec.id;
        out[i].image = std::move(img);
        out[i].truth = rec.hidden_count.reveal();
        out[i].id = rec.id;
    });
    return out;
}

std::vector<std::pair<std::string, long long>> load_point_annotations(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open annotation file: " + path);
    json root = json::parse(in, nullptr, false);
    if (root.is_discarded()) throw DataError("malformed annotation JSON: " + path);
    if (!root.is_array()) throw DataError("annotation JSON must be an array: " + path);

    std::vector<std::pair<std::string, long long>> out;
    for (std::size_t i = 0; i < root.size(); ++i) {
        const json& entry = root[i];
        try {
            const auto image_path = entry.at("image_path").get<std::string>();
            const json& points = entry.at("points");
            if (!points.is_array()) throw DataError("points must be an array");
            for (const auto& pt : points) {
                if (!pt.is_array() || pt.size() != 2) {
                    throw DataError("each point must be an [x, y] pair");
                }
                if (pt[0].get<double>() < 0.0 || pt[1].get<double>() < 0.0) {
                    throw DataError("negative point coordinate");
                }
            }
            out.emplace_back(image_path, static_cast<long long>(points.size()));
        } catch (const json::exception& e) {
            throw DataError("annotation entry " + std::to_string(i) + ": " + e.what());
        } catch (const DataError& e) {
            throw DataError("annotation entry " + std::to_string(i) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace crowdcount::data
