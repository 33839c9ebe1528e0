#include "crowdcount/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "crowdcount/adam.hpp"
#include "crowdcount/digest.hpp"
#include "crowdcount/errors.hpp"
#include "crowdcount/rng.hpp"

using nlohmann::json;

namespace crowdcount::probe {

double count_loss(double pred, long long prompt_count) {
    if (!std::isfinite(pred)) throw std::invalid_argument("count_loss requires a finite prediction");
    const double diff = pred - static_cast<double>(prompt_count);
    return diff * diff;
}

double count_loss_grad(double pred, long long prompt_count) {
    if (!std::isfinite(pred)) throw std::invalid_argument("count_loss requires a finite prediction");
    return 2.0 * (pred - static_cast<double>(prompt_count));
}

namespace {

json vector_to_json(const Eigen::VectorXf& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(static_cast<double>(v[i]));
    return out;
}

Eigen::VectorXf vector_from_json(const json& j) {
    Eigen::VectorXf v(static_cast<Eigen::Index>(j.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = static_cast<float>(j[i].get<double>());
    return v;
}

std::string payload_digest(const std::string& encoder_digest_hex, const Eigen::VectorXf& weights, float bias) {
    Fnv1a64 digest;
    digest.update_string("crowdcount-probe-v1|" + encoder_digest_hex + "|");
    digest.update_floats(weights.data(), static_cast<std::size_t>(weights.size()));
    digest.update_float(bias);
    return digest.hex();
}

}  // namespace

ProbeModel fit_probe(const rank::RankModel& rank_model, const std::vector<synth::NoisyCountExample>& noisy,
                     const rank::TrainConfig& cfg) {
    if (noisy.empty()) throw DataError("fit_probe: noisy dataset is empty");
    if (!rank_model.encoder) throw DataError("fit_probe: rank model has no encoder");
    if (cfg.epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (cfg.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");

    const auto& enc_cfg = rank_model.encoder->config();

    // Frozen encoder: features are extracted once, up front.
    std::vector<Eigen::VectorXf> features(noisy.size());
    parallel_for(static_cast<int>(noisy.size()), [&](int i) {
        const Image resized = resize_bilinear(*noisy[i].image, enc_cfg.input_height, enc_cfg.input_width);
        features[i] = rank_model.encoder->forward(resized);
    });

    ProbeModel model;
    model.encoder = rank_model.encoder;
    model.weights = Eigen::VectorXf::Zero(enc_cfg.feature_dim);
    model.bias = 0.0f;
    model.encoder_digest = rank::encoder_digest(*rank_model.encoder);
    model.epochs_trained = cfg.epochs;

    Eigen::VectorXf w_grad = Eigen::VectorXf::Zero(enc_cfg.feature_dim);
    float b_grad = 0.0f;

    Adam opt(cfg.learning_rate);
    opt.register_params(model.weights.data(), w_grad.data(), static_cast<int>(model.weights.size()));
    opt.register_params(&model.bias, &b_grad, 1);

    std::vector<int> order(noisy.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(cfg.seed, 0xF0, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        const int n_batches = (static_cast<int>(order.size()) + cfg.batch_size - 1) / cfg.batch_size;
        for (int b = 0; b < n_batches; ++b) {
            const int lo = b * cfg.batch_size;
            const int hi = std::min<int>(lo + cfg.batch_size, static_cast<int>(order.size()));
            const auto batch_n = static_cast<double>(hi - lo);

            w_grad.setZero();
            b_grad = 0.0f;
            double batch_loss = 0.0;
            for (int s = lo; s < hi; ++s) {
                const int idx = order[s];
                const double pred = static_cast<double>(model.weights.dot(features[idx])) + model.bias;
                if (!std::isfinite(pred)) {
                    throw DivergenceError("fit_probe diverged at epoch " + std::to_string(epoch) + ", batch " +
                                          std::to_string(b) + ": non-finite prediction");
                }
                batch_loss += count_loss(pred, noisy[idx].prompt_count);
                const auto g = static_cast<float>(count_loss_grad(pred, noisy[idx].prompt_count) / batch_n);
                w_grad += g * features[idx];
                b_grad += g;
            }
            batch_loss /= batch_n;
            if (!std::isfinite(batch_loss)) {
                throw DivergenceError("fit_probe diverged at epoch " + std::to_string(epoch) + ", batch " +
                                      std::to_string(b));
            }
            opt.step();
        }
    }
    return model;
}

CountPrediction predict_count(const ProbeModel& model, const Image& image) {
    const Eigen::VectorXf z = model.encoder->forward(image);
    if (z.size() != model.weights.size()) {
        throw DataError("probe expects " + std::to_string(model.weights.size()) + " features, got " +
                        std::to_string(z.size()));
    }
    CountPrediction pred;
    pred.raw = static_cast<double>(model.weights.dot(z)) + model.bias;
    pred.clamped = std::max(pred.raw, 0.0);
    return pred;
}

std::string probe_digest(const ProbeModel& model) {
    Fnv1a64 digest;
    digest.update_floats(model.weights.data(), static_cast<std::size_t>(model.weights.size()));
    digest.update_float(model.bias);
    return digest.hex();
}

void save_probe_checkpoint(const ProbeModel& model, const std::string& path, const json& run_config) {
    json j;
    j["format"] = "crowdcount-probe-v1";
    j["encoder"] = model.encoder->to_json();
    j["rank_encoder_digest"] = model.encoder_digest;
    j["probe"] = {{"weights", vector_to_json(model.weights)}, {"bias", static_cast<double>(model.bias)}};
    j["provenance"] = {{"epochs_trained", model.epochs_trained}, {"run_config", run_config}};
    j["payload_digest"] = payload_digest(model.encoder_digest, model.weights, model.bias);

    std::ofstream out(path);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out << j.dump(1) << '\n';
}

ProbeModel load_probe_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw DataError("malformed checkpoint JSON: " + path);
    if (j.value("format", "") != "crowdcount-probe-v1") {
        throw DataError("unexpected checkpoint format in " + path);
    }

    ProbeModel model;
    model.encoder = std::shared_ptr<const rank::Encoder>(rank::encoder_from_json(j.at("encoder")));
    model.weights = vector_from_json(j.at("probe").at("weights"));
    model.bias = static_cast<float>(j.at("probe").at("bias").get<double>());
    model.encoder_digest = j.value("rank_encoder_digest", "");
    model.epochs_trained = j.at("provenance").value("epochs_trained", 0);

    // The embedded encoder must still match the digest recorded at fit time,
    // and the payload digest guards the whole file.
    if (rank::encoder_digest(*model.encoder) != model.encoder_digest) {
        throw DigestError(path + ": embedded encoder does not match rank_encoder_digest");
    }
    if (j.value("payload_digest", "") != payload_digest(model.encoder_digest, model.weights, model.bias)) {
        throw DigestError(path + ": checkpoint digest mismatch");
    }
    return model;
}

}  // namespace crowdcount::probe
