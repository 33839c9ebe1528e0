#pragma once

#include <ostream>
#include <string>

#include "crowdcount/run_config.hpp"

namespace crowdcount::cli {

// Artifact layout under a run directory. Stages communicate only through
// these files, never in memory, so any stage can be re-run independently.
struct RunPaths {
    std::string root;

    std::string ranking_manifest() const;
    std::string noisy_manifest() const;
    std::string eval_manifest() const;
    std::string rank_checkpoint() const;
    std::string probe_checkpoint() const;
    std::string metrics_json() const;
    std::string metrics_table() const;
    std::string diagnostics_json() const;
    std::string features_csv() const;
};

// Each stage skips itself when its outputs already exist, unless `force`.
void stage_generate_ranking(const RunConfig& cfg, const RunPaths& paths, bool force, std::ostream& log);
void stage_generate_noisy(const RunConfig& cfg, const RunPaths& paths, bool force, std::ostream& log);
void stage_pretrain(const RunConfig& cfg, const RunPaths& paths, bool force, std::ostream& log);
void stage_probe(const RunConfig& cfg, const RunPaths& paths, bool force, std::ostream& log);
void stage_evaluate(const RunConfig& cfg, const RunPaths& paths, bool force, std::ostream& log);

// generate-ranking -> generate-noisy -> pretrain -> probe -> evaluate.
void run_pipeline(const RunConfig& cfg, const std::string& out_dir, bool force, std::ostream& log);

}  // namespace crowdcount::cli
