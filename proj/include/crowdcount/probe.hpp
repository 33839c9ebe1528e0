#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <memory>
#include <string>
#include <vector>

#include "crowdcount/rank.hpp"

namespace crowdcount::probe {

// Squared error against the prompt count.
double count_loss(double pred, long long prompt_count);
double count_loss_grad(double pred, long long prompt_count);  // d/dpred

struct CountPrediction {
    double raw = 0.0;
    double clamped = 0.0;  // max(raw, 0)
};

// Linear count head over a frozen encoder. Unlike the rank decoder the
// weights are unconstrained and a bias is kept: a count offset is
// meaningful and the squared loss does not cancel it.
struct ProbeModel {
    std::shared_ptr<const rank::Encoder> encoder;
    Eigen::VectorXf weights;
    float bias = 0.0f;
    std::string encoder_digest;  // digest of the rank encoder this probe was fit on
    int epochs_trained = 0;
};

// Fits the head on (image, prompt_count) pairs with the encoder frozen:
// features are extracted once (images resized to the encoder input) and
// only (weights, bias) receive gradient. Hidden true counts are never read.
ProbeModel fit_probe(const rank::RankModel& rank_model, const std::vector<synth::NoisyCountExample>& noisy,
                     const rank::TrainConfig& cfg);

// rho_w . f(x) + rho_b; requires the image to match the encoder input shape.
CountPrediction predict_count(const ProbeModel& model, const Image& image);

std::string probe_digest(const ProbeModel& model);

// The checkpoint embeds a copy of the frozen encoder plus its digest so a
// single file reconstructs the joint model and the pairing stays checkable.
void save_probe_checkpoint(const ProbeModel& model, const std::string& path, const nlohmann::json& run_config);
ProbeModel load_probe_checkpoint(const std::string& path);

}  // namespace crowdcount::probe
