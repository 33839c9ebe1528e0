#include "crowdcount/rank.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "crowdcount/adam.hpp"
#include "crowdcount/digest.hpp"
#include "crowdcount/errors.hpp"
#include "crowdcount/rng.hpp"

using nlohmann::json;

namespace crowdcount::rank {

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

namespace {

// softplus(x) = max(x, 0) + log1p(exp(-|x|))
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

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

std::string decoder_digest(const RankDecoder& decoder) {
    Fnv1a64 digest;
    digest.update_floats(decoder.weights.data(), static_cast<std::size_t>(decoder.weights.size()));
    return digest.hex();
}

std::string checkpoint_payload_digest(const std::string& encoder_digest_hex, const std::string& decoder_hex) {
    Fnv1a64 digest;
    digest.update_string("crowdcount-rank-v1|" + encoder_digest_hex + "|" + decoder_hex);
    return digest.hex();
}

}  // namespace

double ranking_loss(double c_real_hat, double c_syn_hat) {
    if (!std::isfinite(c_real_hat) || !std::isfinite(c_syn_hat)) {
        throw std::invalid_argument("ranking_loss requires finite proxy counts");
    }
    return softplus(-(c_real_hat - c_syn_hat));
}

std::pair<double, double> ranking_loss_grads(double c_real_hat, double c_syn_hat) {
    if (!std::isfinite(c_real_hat) || !std::isfinite(c_syn_hat)) {
        throw std::invalid_argument("ranking_loss requires finite proxy counts");
    }
    const double g = sigmoid(c_real_hat - c_syn_hat) - 1.0;
    return {g, -g};
}

RankDecoder::RankDecoder(int feature_dim, std::uint64_t init_seed) {
    if (feature_dim <= 0) throw std::invalid_argument("feature_dim must be positive");
    Rng rng(init_seed);
    weights.resize(feature_dim);
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
        weights[i] = static_cast<float>(rng.uniform(0.0, 0.1));
    }
    grads = Eigen::VectorXf::Zero(feature_dim);
}

double RankDecoder::apply(const Eigen::VectorXf& z) const {
    if (z.size() != weights.size()) {
        throw DataError("rank decoder expects " + std::to_string(weights.size()) + " features, got " +
                        std::to_string(z.size()));
    }
    return static_cast<double>(weights.dot(z));
}

void RankDecoder::project_nonneg() { weights = weights.cwiseMax(0.0f); }

RankDecoder project_nonneg(RankDecoder decoder) {
    decoder.project_nonneg();
    return decoder;
}

RankModel init_rank_model(const EncoderConfig& cfg, std::uint64_t seed) {
    RankModel model;
    model.encoder = make_encoder(cfg, mix_seed(seed, 0x0e));
    model.decoder = RankDecoder(cfg.feature_dim, mix_seed(seed, 0x0d));
    return model;
}

double proxy_count(const RankModel& model, const Image& image) {
    return model.decoder.apply(model.encoder->forward(image));
}

namespace {

Image fit_to_input(const Image& img, const EncoderConfig& cfg) {
    return resize_bilinear(img, cfg.input_height, cfg.input_width);
}

double resized_accuracy(const Encoder& encoder, const RankDecoder& decoder,
                        const std::vector<std::pair<Image, Image>>& val) {
    double score = 0.0;
    for (const auto& [real, syn] : val) {
        const double cr = decoder.apply(encoder.forward(real));
        const double cs = decoder.apply(encoder.forward(syn));
        if (cr > cs) {
            score += 1.0;
        } else if (cr == cs) {
            score += 0.5;
        }
    }
    return score / static_cast<double>(val.size());
}

}  // namespace

double validation_rank_accuracy(const RankModel& model, const std::vector<synth::RankingPair>& val) {
    if (val.empty()) throw std::invalid_argument("validation set is empty");
    const auto& cfg = model.encoder->config();
    std::vector<std::pair<Image, Image>> resized;
    resized.reserve(val.size());
    for (const auto& pair : val) {
        resized.emplace_back(fit_to_input(*pair.real, cfg), fit_to_input(*pair.synthetic, cfg));
    }
    return resized_accuracy(*model.encoder, model.decoder, resized);
}

RankModel train_ranker(const std::vector<synth::RankingPair>& train, const std::vector<synth::RankingPair>& val,
                       const EncoderConfig& enc_cfg, const TrainConfig& cfg,
                       const data::AugmentationConfig& aug, StepObserver observer) {
    if (train.empty()) throw DataError("train_ranker: training set is empty");
    if (val.empty()) throw DataError("train_ranker: validation set is empty");
    if (cfg.epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (cfg.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (aug.resize_height != enc_cfg.input_height || aug.resize_width != enc_cfg.input_width) {
        throw DataError("augmentation resize target must match the encoder input shape");
    }

    RankModel model = init_rank_model(enc_cfg, cfg.seed);
    auto* cnn = dynamic_cast<ToyCnn*>(model.encoder.get());

    Adam opt(cfg.learning_rate);
    if (cnn) {
        cnn->visit_params([&opt](float* w, float* g, int n) { opt.register_params(w, g, n); });
    }
    opt.register_params(model.decoder.weights.data(), model.decoder.grads.data(),
                        static_cast<int>(model.decoder.weights.size()));

    // Validation pairs are resized once; no augmentation on that path.
    std::vector<std::pair<Image, Image>> val_resized;
    val_resized.reserve(val.size());
    for (const auto& pair : val) {
        val_resized.emplace_back(fit_to_input(*pair.real, enc_cfg), fit_to_input(*pair.synthetic, enc_cfg));
    }

    std::unique_ptr<Encoder> best_encoder;
    RankDecoder best_decoder;
    double best_accuracy = -1.0;
    int best_epoch = 0;

    std::vector<int> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    ToyCnn::Tape tape_real, tape_syn;
    long long global_step = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(cfg.seed, 0xE0, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        const int n_batches = (static_cast<int>(order.size()) + cfg.batch_size - 1) / cfg.batch_size;
        for (int b = 0; b < n_batches; ++b) {
            const int lo = b * cfg.batch_size;
            const int hi = std::min<int>(lo + cfg.batch_size, static_cast<int>(order.size()));
            const auto batch_n = static_cast<double>(hi - lo);

            if (cnn) cnn->zero_grads();
            model.decoder.grads.setZero();

            double batch_loss = 0.0;
            for (int s = lo; s < hi; ++s) {
                const int idx = order[s];
                const synth::RankingPair aug_pair =
                    data::augment(train[idx], aug, mix_seed(cfg.seed, 0xA0 + static_cast<std::uint64_t>(epoch),
                                                            static_cast<std::uint64_t>(idx)));

                Eigen::VectorXf z_real, z_syn;
                if (cnn) {
                    z_real = cnn->forward(*aug_pair.real, tape_real);
                    z_syn = cnn->forward(*aug_pair.synthetic, tape_syn);
                } else {
                    z_real = model.encoder->forward(*aug_pair.real);
                    z_syn = model.encoder->forward(*aug_pair.synthetic);
                }

                const double c_real = model.decoder.apply(z_real);
                const double c_syn = model.decoder.apply(z_syn);
                if (!std::isfinite(c_real) || !std::isfinite(c_syn)) {
                    throw DivergenceError("train_ranker diverged at epoch " + std::to_string(epoch) +
                                          ", batch " + std::to_string(b) + ": non-finite proxy count");
                }
                batch_loss += ranking_loss(c_real, c_syn);

                const auto [g_real, g_syn] = ranking_loss_grads(c_real, c_syn);
                const auto w_real = static_cast<float>(g_real / batch_n);
                const auto w_syn = static_cast<float>(g_syn / batch_n);

                model.decoder.grads += w_real * z_real + w_syn * z_syn;
                if (cnn) {
                    cnn->backward(model.decoder.weights * w_real, tape_real);
                    cnn->backward(model.decoder.weights * w_syn, tape_syn);
                }
            }
            batch_loss /= batch_n;
            if (!std::isfinite(batch_loss)) {
                throw DivergenceError("train_ranker diverged at epoch " + std::to_string(epoch) + ", batch " +
                                      std::to_string(b));
            }

            opt.step();
            model.decoder.project_nonneg();
            ++global_step;

            if (observer) {
                observer({epoch, b, global_step, batch_loss, model.decoder.weights.minCoeff()});
            }
        }

        const double accuracy = resized_accuracy(*model.encoder, model.decoder, val_resized);
        if (accuracy > best_accuracy) {
            best_accuracy = accuracy;
            best_epoch = epoch;
            best_encoder = model.encoder->clone();
            best_decoder = model.decoder;
        }
    }

    RankModel out;
    out.encoder = std::shared_ptr<Encoder>(std::move(best_encoder));
    out.decoder = std::move(best_decoder);
    out.provenance.epochs_trained = cfg.epochs;
    out.provenance.selected_epoch = best_epoch;
    out.provenance.validation_rank_accuracy = best_accuracy;
    return out;
}

RankModel train_ranker(const data::DatasetManifest& train, const data::DatasetManifest& val,
                       const EncoderConfig& enc_cfg, const TrainConfig& cfg,
                       const data::AugmentationConfig& aug, StepObserver observer) {
    return train_ranker(data::load_ranking_pairs(train), data::load_ranking_pairs(val), enc_cfg, cfg, aug,
                        std::move(observer));
}

void save_rank_checkpoint(const RankModel& model, const std::string& path, const json& run_config) {
    json j;
    j["format"] = "crowdcount-rank-v1";
    j["encoder"] = model.encoder->to_json();
    j["decoder"] = {{"weights", vector_to_json(model.decoder.weights)}};
    j["provenance"] = {{"epochs_trained", model.provenance.epochs_trained},
                       {"selected_epoch", model.provenance.selected_epoch},
                       {"validation_rank_accuracy", model.provenance.validation_rank_accuracy},
                       {"run_config", run_config}};
    const std::string enc_digest = encoder_digest(*model.encoder);
    j["encoder_digest"] = enc_digest;
    j["payload_digest"] = checkpoint_payload_digest(enc_digest, decoder_digest(model.decoder));

    std::ofstream out(path);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out << j.dump(1) << '\n';
}

RankModel load_rank_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw DataError("malformed checkpoint JSON: " + path);
    if (j.value("format", "") != "crowdcount-rank-v1") {
        throw DataError("unexpected checkpoint format in " + path);
    }

    RankModel model;
    model.encoder = std::shared_ptr<Encoder>(encoder_from_json(j.at("encoder")));
    model.decoder.weights = vector_from_json(j.at("decoder").at("weights"));
    model.decoder.grads = Eigen::VectorXf::Zero(model.decoder.weights.size());

    const std::string expected = checkpoint_payload_digest(encoder_digest(*model.encoder), decoder_digest(model.decoder));
    if (j.value("payload_digest", "") != expected ||
        j.value("encoder_digest", "") != encoder_digest(*model.encoder)) {
        throw DigestError(path + ": checkpoint digest mismatch");
    }

    const json& prov = j.at("provenance");
    model.provenance.epochs_trained = prov.value("epochs_trained", 0);
    model.provenance.selected_epoch = prov.value("selected_epoch", 0);
    model.provenance.validation_rank_accuracy = prov.value("validation_rank_accuracy", 0.0);
    return model;
}

}  // namespace crowdcount::rank
