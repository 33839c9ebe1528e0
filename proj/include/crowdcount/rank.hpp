#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "crowdcount/dataset.hpp"
#include "crowdcount/encoder.hpp"
#include "crowdcount/synth.hpp"

namespace crowdcount::rank {

double sigmoid(double x);

// Pairwise ranking loss -log(sigmoid(c_real_hat - c_syn_hat)), evaluated
// through the softplus identity so it stays finite for |diff| up to 1e4.
// Throws std::invalid_argument on non-finite inputs.
double ranking_loss(double c_real_hat, double c_syn_hat);

// Analytic d/d(c_real_hat) and d/d(c_syn_hat).
std::pair<double, double> ranking_loss_grads(double c_real_hat, double c_syn_hat);

// Linear rank decoder with non-negative weights and no bias (a bias would
// cancel in the pairwise difference and break the c >= 0 guarantee).
class RankDecoder {
  public:
    RankDecoder() = default;
    RankDecoder(int feature_dim, std::uint64_t init_seed);

    double apply(const Eigen::VectorXf& z) const;
    void project_nonneg();

    Eigen::VectorXf weights;
    Eigen::VectorXf grads;
};

// Projection onto the non-negative orthant; idempotent.
RankDecoder project_nonneg(RankDecoder decoder);

struct TrainConfig {
    int epochs = 40;
    double learning_rate = 5e-5;
    int batch_size = 8;
    std::uint64_t seed = 0;
};

struct TrainProvenance {
    int epochs_trained = 0;
    int selected_epoch = 0;  // 1-based epoch of the returned checkpoint
    double validation_rank_accuracy = 0.0;
};

struct RankModel {
    std::shared_ptr<Encoder> encoder;
    RankDecoder decoder;
    TrainProvenance provenance;
};

RankModel init_rank_model(const EncoderConfig& cfg, std::uint64_t seed);

// Theta . f(x); >= 0 whenever the decoder constraint holds. Throws on
// input shape mismatch.
double proxy_count(const RankModel& model, const Image& image);

struct StepInfo {
    int epoch = 0;        // 1-based
    int batch = 0;        // 0-based within epoch
    long long step = 0;   // global optimizer step, 1-based
    double batch_loss = 0.0;
    float decoder_min_weight = 0.0f;
};
using StepObserver = std::function<void(const StepInfo&)>;

// Siamese pre-training on ranking pairs. Per-pair augmentation (resize to
// the encoder input plus flip/brightness) is derived from the seed; the
// decoder is projected to the non-negative orthant after every optimizer
// step; the checkpoint with the best validation ranking accuracy is
// returned. No hidden count is read anywhere on this path.
RankModel train_ranker(const std::vector<synth::RankingPair>& train, const std::vector<synth::RankingPair>& val,
                       const EncoderConfig& enc_cfg, const TrainConfig& cfg,
                       const data::AugmentationConfig& aug, StepObserver observer = {});

RankModel train_ranker(const data::DatasetManifest& train, const data::DatasetManifest& val,
                       const EncoderConfig& enc_cfg, const TrainConfig& cfg,
                       const data::AugmentationConfig& aug, StepObserver observer = {});

// Fraction of pairs ranked correctly (proxy(real) > proxy(syn)); ties
// count 0.5. Images are resized to the encoder input when needed.
double validation_rank_accuracy(const RankModel& model, const std::vector<synth::RankingPair>& val);

void save_rank_checkpoint(const RankModel& model, const std::string& path, const nlohmann::json& run_config);
RankModel load_rank_checkpoint(const std::string& path);

}  // namespace crowdcount::rank
