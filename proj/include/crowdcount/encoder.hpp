#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "crowdcount/image.hpp"

namespace crowdcount::rank {

struct EncoderConfig {
    enum class Architecture { toy_cnn, backbone_adapter };

    Architecture architecture = Architecture::toy_cnn;
    int feature_dim = 64;  // 2048 for backbone_adapter
    int input_height = 64;
    int input_width = 64;
    std::string adapter_name;  // backbone_adapter only

    static EncoderConfig toy_cnn_default();
    static EncoderConfig backbone_adapter_default(std::string adapter_name, int feature_dim = 2048);
};

std::string architecture_name(EncoderConfig::Architecture arch);
EncoderConfig::Architecture architecture_from_name(const std::string& name);

// Image encoder f: x -> z with z >= 0 componentwise (the final activation
// is a rectification, so downstream non-negative decoders stay valid).
class Encoder {
  public:
    virtual ~Encoder() = default;

    virtual const EncoderConfig& config() const = 0;

    // Throws DataError on input shape mismatch.
    virtual Eigen::VectorXf forward(const Image& img) const = 0;

    virtual bool trainable() const = 0;

    // Visits (weights, grads, count) spans in a fixed order. No-op when the
    // encoder has no trainable parameters.
    virtual void visit_params(const std::function<void(float*, float*, int)>& fn) = 0;
    virtual void zero_grads() = 0;

    virtual nlohmann::json to_json() const = 0;
    virtual std::unique_ptr<Encoder> clone() const = 0;
};

std::unique_ptr<Encoder> make_encoder(const EncoderConfig& cfg, std::uint64_t init_seed);
std::unique_ptr<Encoder> encoder_from_json(const nlohmann::json& j);

// Content digest over architecture and parameters; the frozen-encoder
// pairing between checkpoints compares these.
std::string encoder_digest(const Encoder& enc);

// Four stride-2 conv blocks, global average pooling, and a rectified
// linear projection to feature_dim.
class ToyCnn final : public Encoder {
  public:
    struct Tape {
        std::vector<Eigen::MatrixXf> cols;  // im2col per conv layer
        std::vector<Eigen::MatrixXf> pre;   // pre-activation per conv layer
        std::vector<int> out_h, out_w;
        Eigen::VectorXf pooled;
        Eigen::VectorXf proj_pre;
    };

    ToyCnn(const EncoderConfig& cfg, std::uint64_t init_seed);
    explicit ToyCnn(const nlohmann::json& j);

    const EncoderConfig& config() const override { return cfg_; }
    Eigen::VectorXf forward(const Image& img) const override;
    bool trainable() const override { return true; }
    void visit_params(const std::function<void(float*, float*, int)>& fn) override;
    void zero_grads() override;
    nlohmann::json to_json() const override;
    std::unique_ptr<Encoder> clone() const override;

    // Training-path forward retaining activations for backward.
    Eigen::VectorXf forward(const Image& img, Tape& tape) const;
    // Accumulates parameter gradients for one image; dz is dLoss/dz.
    void backward(const Eigen::VectorXf& dz, const Tape& tape);

    static const std::vector<int>& conv_channels();

  private:
    struct ConvLayer {
        Eigen::MatrixXf w;   // out_c x (in_c * 9)
        Eigen::VectorXf b;   // out_c
        Eigen::MatrixXf dw;
        Eigen::VectorXf db;
    };

    Eigen::MatrixXf planar_input(const Image& img) const;

    EncoderConfig cfg_;
    std::vector<ConvLayer> convs_;
    Eigen::MatrixXf proj_w_;  // feature_dim x last_channels
    Eigen::VectorXf proj_b_;
    Eigen::MatrixXf proj_dw_;
    Eigen::VectorXf proj_db_;
};

// Externally supplied feature extractor (e.g. a pretrained backbone). The
// callable is registered by name; outputs are rectified to keep z >= 0.
using FeatureBackend = std::function<std::vector<float>(const Image&)>;

void register_feature_backend(const std::string& name, FeatureBackend backend);
bool has_feature_backend(const std::string& name);
void clear_feature_backends();

class AdapterEncoder final : public Encoder {
  public:
    explicit AdapterEncoder(const EncoderConfig& cfg);

    const EncoderConfig& config() const override { return cfg_; }
    Eigen::VectorXf forward(const Image& img) const override;
    bool trainable() const override { return false; }
    void visit_params(const std::function<void(float*, float*, int)>&) override {}
    void zero_grads() override {}
    nlohmann::json to_json() const override;
    std::unique_ptr<Encoder> clone() const override;

  private:
    EncoderConfig cfg_;
};

}  // namespace crowdcount::rank
