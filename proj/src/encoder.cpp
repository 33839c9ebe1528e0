#include "crowdcount/encoder.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>

#include "crowdcount/digest.hpp"
#include "crowdcount/errors.hpp"
#include "crowdcount/rng.hpp"

using nlohmann::json;

namespace crowdcount::rank {

namespace {

constexpr int kKernel = 3;
constexpr int kStride = 2;
constexpr int kPad = 1;

int conv_out_dim(int in) { return (in + 2 * kPad - kKernel) / kStride + 1; }

// Gathers 3x3 stride-2 neighborhoods into a (in_c*9) x (out_h*out_w) matrix.
Eigen::MatrixXf im2col(const Eigen::MatrixXf& input, int in_h, int in_w, int out_h, int out_w) {
    const auto in_c = static_cast<int>(input.rows());
    Eigen::MatrixXf cols(in_c * kKernel * kKernel, out_h * out_w);
    for (int oy = 0; oy < out_h; ++oy) {
        for (int ox = 0; ox < out_w; ++ox) {
            const int col = oy * out_w + ox;
            for (int ky = 0; ky < kKernel; ++ky) {
                const int iy = oy * kStride + ky - kPad;
                for (int kx = 0; kx < kKernel; ++kx) {
                    const int ix = ox * kStride + kx - kPad;
                    const int row_base = (ky * kKernel + kx) * in_c;
                    if (iy < 0 || iy >= in_h || ix < 0 || ix >= in_w) {
                        cols.block(row_base, col, in_c, 1).setZero();
                    } else {
                        cols.block(row_base, col, in_c, 1) = input.col(iy * in_w + ix);
                    }
                }
            }
        }
    }
    return cols;
}

// Scatter-adds column gradients back to the input layout.
void col2im_accumulate(const Eigen::MatrixXf& dcols, int in_c, int in_h, int in_w, int out_h, int out_w,
                       Eigen::MatrixXf& dinput) {
    for (int oy = 0; oy < out_h; ++oy) {
        for (int ox = 0; ox < out_w; ++ox) {
            const int col = oy * out_w + ox;
            for (int ky = 0; ky < kKernel; ++ky) {
                const int iy = oy * kStride + ky - kPad;
                if (iy < 0 || iy >= in_h) continue;
                for (int kx = 0; kx < kKernel; ++kx) {
                    const int ix = ox * kStride + kx - kPad;
                    if (ix < 0 || ix >= in_w) continue;
                    const int row_base = (ky * kKernel + kx) * in_c;
                    dinput.col(iy * in_w + ix) += dcols.block(row_base, col, in_c, 1);
                }
            }
        }
    }
}

json matrix_to_json(const Eigen::MatrixXf& m) {
    json out = json::array();
    for (Eigen::Index i = 0; i < m.size(); ++i) out.push_back(static_cast<double>(m.data()[i]));
    return out;
}

void matrix_from_json(const json& j, Eigen::MatrixXf& m) {
    if (static_cast<Eigen::Index>(j.size()) != m.size()) throw DataError("encoder parameter size mismatch");
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(j[i].get<double>());
}

void vector_from_json(const json& j, Eigen::VectorXf& v) {
    if (static_cast<Eigen::Index>(j.size()) != v.size()) throw DataError("encoder parameter size mismatch");
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = static_cast<float>(j[i].get<double>());
}

}  // namespace

EncoderConfig EncoderConfig::toy_cnn_default() {
    EncoderConfig cfg;
    cfg.architecture = Architecture::toy_cnn;
    cfg.feature_dim = 64;
    cfg.input_height = 64;
    cfg.input_width = 64;
    return cfg;
}

EncoderConfig EncoderConfig::backbone_adapter_default(std::string adapter_name, int feature_dim) {
    EncoderConfig cfg;
    cfg.architecture = Architecture::backbone_adapter;
    cfg.feature_dim = feature_dim;
    cfg.adapter_name = std::move(adapter_name);
    return cfg;
}

std::string architecture_name(EncoderConfig::Architecture arch) {
    return arch == EncoderConfig::Architecture::toy_cnn ? "toy_cnn" : "backbone_adapter";
}

EncoderConfig::Architecture architecture_from_name(const std::string& name) {
    if (name == "toy_cnn") return EncoderConfig::Architecture::toy_cnn;
    if (name == "backbone_adapter") return EncoderConfig::Architecture::backbone_adapter;
    throw DataError("unknown encoder architecture: " + name);
}

const std::vector<int>& ToyCnn::conv_channels() {
    static const std::vector<int> channels = {8, 16, 32, 64};
    return channels;
}

ToyCnn::ToyCnn(const EncoderConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
    if (cfg_.feature_dim <= 0) throw std::invalid_argument("feature_dim must be positive");
    if (cfg_.input_height < 16 || cfg_.input_width < 16) {
        throw std::invalid_argument("toy_cnn requires input dimensions >= 16");
    }
    Rng rng(init_seed);
    auto he_init = [&rng](Eigen::MatrixXf& m, int fan_in) {
        const double stddev = std::sqrt(2.0 / fan_in);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.normal(0.0, stddev));
    };

    int in_c = 3;
    for (int out_c : conv_channels()) {
        ConvLayer layer;
        layer.w.resize(out_c, in_c * kKernel * kKernel);
        he_init(layer.w, in_c * kKernel * kKernel);
        layer.b = Eigen::VectorXf::Zero(out_c);
        layer.dw = Eigen::MatrixXf::Zero(out_c, in_c * kKernel * kKernel);
        layer.db = Eigen::VectorXf::Zero(out_c);
        convs_.push_back(std::move(layer));
        in_c = out_c;
    }

    proj_w_.resize(cfg_.feature_dim, in_c);
    he_init(proj_w_, in_c);
    proj_b_ = Eigen::VectorXf::Zero(cfg_.feature_dim);
    proj_dw_ = Eigen::MatrixXf::Zero(cfg_.feature_dim, in_c);
    proj_db_ = Eigen::VectorXf::Zero(cfg_.feature_dim);
}

ToyCnn::ToyCnn(const json& j) : ToyCnn([&j] {
                                    EncoderConfig cfg;
                                    cfg.architecture = EncoderConfig::Architecture::toy_cnn;
                                    cfg.feature_dim = j.at("feature_dim").get<int>();
                                    cfg.input_height = j.at("input_height").get<int>();
                                    cfg.input_width = j.at("input_width").get<int>();
                                    return cfg;
                                }(),
                                0) {
    const json& layers = j.at("conv_layers");
    if (layers.size() != convs_.size()) throw DataError("unexpected conv layer count in checkpoint");
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        matrix_from_json(layers[i].at("w"), convs_[i].w);
        vector_from_json(layers[i].at("b"), convs_[i].b);
    }
    matrix_from_json(j.at("proj").at("w"), proj_w_);
    vector_from_json(j.at("proj").at("b"), proj_b_);
}

Eigen::MatrixXf ToyCnn::planar_input(const Image& img) const {
    if (img.height != cfg_.input_height || img.width != cfg_.input_width) {
        throw DataError("encoder input shape mismatch: got " + std::to_string(img.height) + "x" +
                        std::to_string(img.width) + ", expected " + std::to_string(cfg_.input_height) + "x" +
                        std::to_string(cfg_.input_width));
    }
    Eigen::MatrixXf input(3, img.height * img.width);
    for (int i = 0; i < img.height * img.width; ++i) {
        input(0, i) = img.pixels[static_cast<std::size_t>(i) * 3 + 0] - 0.5f;
        input(1, i) = img.pixels[static_cast<std::size_t>(i) * 3 + 1] - 0.5f;
        input(2, i) = img.pixels[static_cast<std::size_t>(i) * 3 + 2] - 0.5f;
    }
    return input;
}

Eigen::VectorXf ToyCnn::forward(const Image& img) const {
    Tape tape;
    return forward(img, tape);
}

Eigen::VectorXf ToyCnn::forward(const Image& img, Tape& tape) const {
    Eigen::MatrixXf act = planar_input(img);
    int h = cfg_.input_height;
    int w = cfg_.input_width;

    tape.cols.clear();
    tape.pre.clear();
    tape.out_h.clear();
    tape.out_w.clear();

    for (const auto& layer : convs_) {
        const int oh = conv_out_dim(h);
        const int ow = conv_out_dim(w);
        Eigen::MatrixXf cols = im2col(act, h, w, oh, ow);
        Eigen::MatrixXf pre = (layer.w * cols).colwise() + layer.b;
        act = pre.cwiseMax(0.0f);
        tape.cols.push_back(std::move(cols));
        tape.pre.push_back(std::move(pre));
        tape.out_h.push_back(oh);
        tape.out_w.push_back(ow);
        h = oh;
        w = ow;
    }

    tape.pooled = act.rowwise().mean();
    tape.proj_pre = proj_w_ * tape.pooled + proj_b_;
    return tape.proj_pre.cwiseMax(0.0f);
}

void ToyCnn::backward(const Eigen::VectorXf& dz, const Tape& tape) {
    // Projection head.
    Eigen::VectorXf dproj_pre =
        dz.cwiseProduct((tape.proj_pre.array() > 0.0f).cast<float>().matrix());
    proj_dw_ += dproj_pre * tape.pooled.transpose();
    proj_db_ += dproj_pre;
    Eigen::VectorXf dpooled = proj_w_.transpose() * dproj_pre;

    // Global average pooling.
    const int last = static_cast<int>(convs_.size()) - 1;
    const int n_cells = tape.out_h[last] * tape.out_w[last];
    Eigen::MatrixXf dact = (dpooled / static_cast<float>(n_cells)).replicate(1, n_cells);

    for (int l = last; l >= 0; --l) {
        Eigen::MatrixXf dpre = dact.cwiseProduct((tape.pre[l].array() > 0.0f).cast<float>().matrix());
        convs_[l].dw += dpre * tape.cols[l].transpose();
        convs_[l].db += dpre.rowwise().sum();
        if (l == 0) break;  // input gradients unused
        Eigen::MatrixXf dcols = convs_[l].w.transpose() * dpre;
        const int in_h = tape.out_h[l - 1];
        const int in_w = tape.out_w[l - 1];
        const auto in_c = static_cast<int>(convs_[l - 1].w.rows());
        Eigen::MatrixXf dinput = Eigen::MatrixXf::Zero(in_c, in_h * in_w);
        col2im_accumulate(dcols, in_c, in_h, in_w, tape.out_h[l], tape.out_w[l], dinput);
        dact = std::move(dinput);
    }
}

void ToyCnn::visit_params(const std::function<void(float*, float*, int)>& fn) {
    for (auto& layer : convs_) {
        fn(layer.w.data(), layer.dw.data(), static_cast<int>(layer.w.size()));
        fn(layer.b.data(), layer.db.data(), static_cast<int>(layer.b.size()));
    }
    fn(proj_w_.data(), proj_dw_.data(), static_cast<int>(proj_w_.size()));
    fn(proj_b_.data(), proj_db_.data(), static_cast<int>(proj_b_.size()));
}

void ToyCnn::zero_grads() {
    for (auto& layer : convs_) {
        layer.dw.setZero();
        layer.db.setZero();
    }
    proj_dw_.setZero();
    proj_db_.setZero();
}

json ToyCnn::to_json() const {
    json j;
    j["architecture"] = "toy_cnn";
    j["feature_dim"] = cfg_.feature_dim;
    j["input_height"] = cfg_.input_height;
    j["input_width"] = cfg_.input_width;
    j["conv_layers"] = json::array();
    for (const auto& layer : convs_) {
        json lj;
        lj["w"] = matrix_to_json(layer.w);
        lj["b"] = matrix_to_json(layer.b);
        j["conv_layers"].push_back(std::move(lj));
    }
    j["proj"] = {{"w", matrix_to_json(proj_w_)}, {"b", matrix_to_json(proj_b_)}};
    return j;
}

std::unique_ptr<Encoder> ToyCnn::clone() const { return std::make_unique<ToyCnn>(*this); }

namespace {

std::map<std::string, FeatureBackend>& feature_registry() {
    static std::map<std::string, FeatureBackend> registry;
    return registry;
}

std::mutex& feature_mutex() {
    static std::mutex mu;
    return mu;
}

}  // namespace

void register_feature_backend(const std::string& name, FeatureBackend backend) {
    std::lock_guard<std::mutex> lock(feature_mutex());
    feature_registry()[name] = std::move(backend);
}

bool has_feature_backend(const std::string& name) {
    std::lock_guard<std::mutex> lock(feature_mutex());
    return feature_registry().count(name) > 0;
}

void clear_feature_backends() {
    std::lock_guard<std::mutex> lock(feature_mutex());
    feature_registry().clear();
}

AdapterEncoder::AdapterEncoder(const EncoderConfig& cfg) : cfg_(cfg) {
    if (cfg_.feature_dim <= 0) throw std::invalid_argument("feature_dim must be positive");
    if (cfg_.adapter_name.empty()) throw std::invalid_argument("backbone_adapter requires adapter_name");
}

Eigen::VectorXf AdapterEncoder::forward(const Image& img) const {
    FeatureBackend fn;
    {
        std::lock_guard<std::mutex> lock(feature_mutex());
        auto it = feature_registry().find(cfg_.adapter_name);
        if (it == feature_registry().end()) {
            throw DataError("feature backend not registered: " + cfg_.adapter_name);
        }
        fn = it->second;
    }
    const std::vector<float> raw = fn(img);
    if (static_cast<int>(raw.size()) != cfg_.feature_dim) {
        throw DataError("feature backend " + cfg_.adapter_name + " returned " + std::to_string(raw.size()) +
                        " features, expected " + std::to_string(cfg_.feature_dim));
    }
    Eigen::VectorXf z(cfg_.feature_dim);
    for (int i = 0; i < cfg_.feature_dim; ++i) z[i] = raw[i] > 0.0f ? raw[i] : 0.0f;
    return z;
}

json AdapterEncoder::to_json() const {
    json j;
    j["architecture"] = "backbone_adapter";
    j["feature_dim"] = cfg_.feature_dim;
    j["input_height"] = cfg_.input_height;
    j["input_width"] = cfg_.input_width;
    j["adapter_name"] = cfg_.adapter_name;
    return j;
}

std::unique_ptr<Encoder> AdapterEncoder::clone() const { return std::make_unique<AdapterEncoder>(*this); }

std::unique_ptr<Encoder> make_encoder(const EncoderConfig& cfg, std::uint64_t init_seed) {
    if (cfg.architecture == EncoderConfig::Architecture::toy_cnn) {
        return std::make_unique<ToyCnn>(cfg, init_seed);
    }
    return std::make_unique<AdapterEncoder>(cfg);
}

std::unique_ptr<Encoder> encoder_from_json(const json& j) {
    const auto arch = architecture_from_name(j.at("architecture").get<std::string>());
    if (arch == EncoderConfig::Architecture::toy_cnn) return std::make_unique<ToyCnn>(j);
    EncoderConfig cfg;
    cfg.architecture = arch;
    cfg.feature_dim = j.at("feature_dim").get<int>();
    cfg.input_height = j.at("input_height").get<int>();
    cfg.input_width = j.at("input_width").get<int>();
    cfg.adapter_name = j.at("adapter_name").get<std::string>();
    return std::make_unique<AdapterEncoder>(cfg);
}

std::string encoder_digest(const Encoder& enc) {
    Fnv1a64 digest;
    const auto& cfg = enc.config();
    digest.update_string(architecture_name(cfg.architecture));
    digest.update_string("|" + std::to_string(cfg.feature_dim) + "|" + std::to_string(cfg.input_height) + "|" +
                         std::to_string(cfg.input_width) + "|" + cfg.adapter_name);
    // visit_params is a mutable surface, so digest through a clone.
    auto copy = enc.clone();
    copy->visit_params([&digest](float* w, float*, int n) { digest.update_floats(w, static_cast<std::size_t>(n)); });
    return digest.hex();
}

}  // namespace crowdcount::rank
