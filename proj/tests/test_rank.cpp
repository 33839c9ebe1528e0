#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "crowdcount/errors.hpp"
#include "crowdcount/rank.hpp"
#include "crowdcount/rng.hpp"
#include "support/test_util.hpp"

using namespace crowdcount;
using namespace crowdcount::rank;

namespace {

// 1x1 images whose channels carry feature values for adapter-backed tests.
std::shared_ptr<const Image> feature_image(float r, float g = 0.0f, float b = 0.0f) {
    Image img = make_image(1, 1);
    img.at(0, 0, 0) = r;
    img.at(0, 0, 1) = g;
    img.at(0, 0, 2) = b;
    return std::make_shared<Image>(std::move(img));
}

EncoderConfig pixel_adapter_config(const std::string& name, int feature_dim) {
    EncoderConfig cfg = EncoderConfig::backbone_adapter_default(name, feature_dim);
    cfg.input_height = 1;
    cfg.input_width = 1;
    return cfg;
}

data::AugmentationConfig plain_augment(int h, int w) {
    data::AugmentationConfig aug;
    aug.horizontal_flip_prob = 0.0;
    aug.brightness_jitter = 0.0;
    aug.resize_height = h;
    aug.resize_width = w;
    return aug;
}

EncoderConfig small_cnn_config() {
    EncoderConfig cfg = EncoderConfig::toy_cnn_default();
    cfg.input_height = 32;
    cfg.input_width = 32;
    cfg.feature_dim = 32;
    return cfg;
}

std::vector<synth::RankingPair> toy_pairs(int n_sources, int variants, int width = 48) {
    synth::SceneParams params;
    params.width = width;
    params.height = width;
    params.distractors_max = 4;
    std::vector<synth::SceneSpec> sources;
    for (int i = 0; i < n_sources; ++i) {
        Rng rng(mix_seed(31337, i));
        sources.push_back(synth::sample_scene(params, static_cast<int>(rng.uniform_int(0, 30)), rng.next()));
    }
    return synth::make_ranking_dataset(sources, variants, {0.3, 0.9}, 404);
}

}  // namespace

TEST_CASE("training defaults") {
    const TrainConfig cfg;
    CHECK(cfg.epochs == 40);
    CHECK(cfg.learning_rate == doctest::Approx(5e-5));
    const EncoderConfig toy = EncoderConfig::toy_cnn_default();
    CHECK(toy.feature_dim == 64);
    const EncoderConfig adapter = EncoderConfig::backbone_adapter_default("x");
    CHECK(adapter.feature_dim == 2048);
}

TEST_CASE("ranking loss exactness") {
    CHECK(ranking_loss(0.0, 0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    // diff = -ln 3 puts sigma at 1/4, so the loss is ln 4.
    CHECK(ranking_loss(0.0, std::log(3.0)) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    SUBCASE("large positive differences underflow gracefully") {
        const double loss = ranking_loss(100.0, 0.0);
        CHECK(loss > 0.0);
        CHECK(loss < 1e-40);
    }

    SUBCASE("no NaN or overflow across the stated range") {
        for (double d : {-1e4, -700.0, -30.0, 0.0, 30.0, 700.0, 1e4}) {
            const double loss = ranking_loss(d, 0.0);
            CHECK(std::isfinite(loss));
            CHECK(loss >= 0.0);
        }
        CHECK(ranking_loss(-1e4, 0.0) == doctest::Approx(1e4).epsilon(1e-9));
    }

    SUBCASE("matches the closed form on a grid") {
        for (int i = 0; i < 20; ++i) {
            const double d = -28.0 + 3.0 * i;  // within exp range
            const double direct = std::log1p(std::exp(-d));
            CHECK(ranking_loss(d, 0.0) == doctest::Approx(direct).epsilon(1e-12));
        }
    }

    SUBCASE("non-finite inputs are rejected") {
        CHECK_THROWS_AS(ranking_loss(std::nan(""), 0.0), std::invalid_argument);
        CHECK_THROWS_AS(ranking_loss(0.0, std::numeric_limits<double>::infinity()), std::invalid_argument);
    }

    SUBCASE("strictly decreasing in the difference") {
        double prev = ranking_loss(-5.0, 0.0);
        for (double d = -4.5; d <= 5.0; d += 0.5) {
            const double cur = ranking_loss(d, 0.0);
            CHECK(cur < prev);
            prev = cur;
        }
    }
}

TEST_CASE("ranking loss gradients match finite differences") {
    Rng rng(606);
    const double h = 1e-5;
    for (int i = 0; i < 10; ++i) {
        const double cr = rng.uniform(-5.0, 5.0);
        const double cs = rng.uniform(-5.0, 5.0);
        const auto [g_real, g_syn] = ranking_loss_grads(cr, cs);
        const double fd_real = (ranking_loss(cr + h, cs) - ranking_loss(cr - h, cs)) / (2 * h);
        const double fd_syn = (ranking_loss(cr, cs + h) - ranking_loss(cr, cs - h)) / (2 * h);
        CHECK(std::abs(g_real - fd_real) / std::max(1e-12, std::abs(fd_real)) < 1e-4);
        CHECK(std::abs(g_syn - fd_syn) / std::max(1e-12, std::abs(fd_syn)) < 1e-4);
    }
}

TEST_CASE("adding a constant to both proxy counts cancels") {
    Rng rng(77);
    for (int i = 0; i < 20; ++i) {
        const double a = rng.uniform(-10.0, 10.0);
        const double b = rng.uniform(-10.0, 10.0);
        const double k = rng.uniform(-1e3, 1e3);
        CHECK(ranking_loss(a + k, b + k) == doctest::Approx(ranking_loss(a, b)).epsilon(1e-9));
    }
}

TEST_CASE("project_nonneg") {
    RankDecoder d(3, 1);
    d.weights << -1.0f, 2.0f, 0.0f;
    const RankDecoder p = project_nonneg(d);
    CHECK(p.weights[0] == 0.0f);
    CHECK(p.weights[1] == 2.0f);
    CHECK(p.weights[2] == 0.0f);

    SUBCASE("non-negative input is untouched") {
        const RankDecoder q = project_nonneg(p);
        CHECK(q.weights == p.weights);
    }

    SUBCASE("idempotent on random vectors") {
        Rng rng(9);
        for (int trial = 0; trial < 50; ++trial) {
            RankDecoder r(8, 0);
            for (int i = 0; i < 8; ++i) r.weights[i] = static_cast<float>(rng.uniform(-2.0, 2.0));
            const RankDecoder once = project_nonneg(r);
            const RankDecoder twice = project_nonneg(once);
            CHECK(once.weights == twice.weights);
            CHECK(once.weights.minCoeff() >= 0.0f);
        }
    }
}

TEST_CASE("rank decoder apply") {
    RankDecoder d(2, 0);
    d.weights << 1.0f, 0.5f;
    Eigen::VectorXf z(2);
    z << 3.0f, 4.0f;
    CHECK(d.apply(z) == doctest::Approx(5.0));

    SUBCASE("zero weights give zero proxy counts") {
        d.weights.setZero();
        CHECK(d.apply(z) == 0.0);
    }

    SUBCASE("matches an independent dot product") {
        Rng rng(55);
        RankDecoder r(16, 0);
        Eigen::VectorXf zz(16);
        for (int i = 0; i < 16; ++i) {
            r.weights[i] = static_cast<float>(rng.uniform(0.0, 2.0));
            zz[i] = static_cast<float>(rng.uniform(0.0, 5.0));
        }
        double expected = 0.0;
        for (int i = 0; i < 16; ++i) expected += static_cast<double>(r.weights[i]) * zz[i];
        CHECK(r.apply(zz) == doctest::Approx(expected).epsilon(1e-6));
    }

    SUBCASE("feature size mismatch is rejected") {
        Eigen::VectorXf wrong(3);
        wrong.setZero();
        CHECK_THROWS_AS(d.apply(wrong), DataError);
    }
}

TEST_CASE("proxy_count matches an independent recomputation") {
    clear_feature_backends();
    register_feature_backend("pixel3", [](const Image& img) {
        return std::vector<float>{img.at(0, 0, 0) * 10.0f, img.at(0, 0, 1) * 10.0f, img.at(0, 0, 2) * 10.0f};
    });

    RankModel model = init_rank_model(pixel_adapter_config("pixel3", 3), 3);
    Rng rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        const auto r = static_cast<float>(rng.uniform(0.0, 1.0));
        const auto g = static_cast<float>(rng.uniform(0.0, 1.0));
        const auto b = static_cast<float>(rng.uniform(0.0, 1.0));
        const double expected = static_cast<double>(model.decoder.weights[0]) * (r * 10.0f) +
                                static_cast<double>(model.decoder.weights[1]) * (g * 10.0f) +
                                static_cast<double>(model.decoder.weights[2]) * (b * 10.0f);
        CHECK(proxy_count(model, *feature_image(r, g, b)) == doctest::Approx(expected).epsilon(1e-6));
        CHECK(proxy_count(model, *feature_image(r, g, b)) >= 0.0);
    }
    clear_feature_backends();
}

TEST_CASE("toy cnn backward matches finite differences on sampled parameters") {
    EncoderConfig cfg = EncoderConfig::toy_cnn_default();
    cfg.input_height = 16;
    cfg.input_width = 16;
    cfg.feature_dim = 8;
    ToyCnn cnn(cfg, 51);

    Rng rng(52);
    Image img = make_image(16, 16);
    for (float& v : img.pixels) v = static_cast<float>(rng.uniform01());
    Eigen::VectorXf probe_vec(cfg.feature_dim);
    for (int i = 0; i < cfg.feature_dim; ++i) probe_vec[i] = static_cast<float>(rng.uniform(-1.0, 1.0));

    auto loss_of = [&](ToyCnn& net) {
        return static_cast<double>(probe_vec.dot(net.forward(img)));
    };

    ToyCnn::Tape tape;
    cnn.zero_grads();
    cnn.forward(img, tape);
    cnn.backward(probe_vec, tape);

    // Sample a handful of parameters per tensor. A perturbation can push a
    // pre-activation across a ReLU kink, where the central difference no
    // longer estimates the one-sided derivative; the second-difference
    // filter skips those points.
    const float h = 1e-3f;
    int checked = 0;
    cnn.visit_params([&](float* w, float* g, int n) {
        for (int trial = 0; trial < 4; ++trial) {
            const int idx = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(n)));
            const float keep = w[idx];
            w[idx] = keep + h;
            const double up = loss_of(cnn);
            w[idx] = keep - h;
            const double down = loss_of(cnn);
            w[idx] = keep;
            const double mid = loss_of(cnn);
            const double fd = (up - down) / (2.0 * h);
            const double analytic = g[idx];
            if (std::abs(fd) < 1e-3) continue;                // dead region or tiny signal
            if (std::abs(up + down - 2.0 * mid) > 1e-6) continue;  // kink inside the interval
            CHECK(std::abs(analytic - fd) / std::max(1e-6, std::abs(fd)) < 0.03);
            ++checked;
        }
    });
    CHECK(checked >= 12);
}

TEST_CASE("training with lr 0 returns the initialization") {
    auto pairs = toy_pairs(1, 1);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.learning_rate = 0.0;
    cfg.batch_size = 1;
    cfg.seed = 5;

    const EncoderConfig enc_cfg = small_cnn_config();
    const RankModel trained = train_ranker(pairs, pairs, enc_cfg, cfg, plain_augment(32, 32));
    const RankModel init = init_rank_model(enc_cfg, cfg.seed);

    CHECK(encoder_digest(*trained.encoder) == encoder_digest(*init.encoder));
    CHECK(trained.decoder.weights == init.decoder.weights);
}

TEST_CASE("decoder-only training separates linearly separable features") {
    clear_feature_backends();
    // f1 carries the ordering signal, f2 is noise; theta* = e1 separates.
    register_feature_backend("sep", [](const Image& img) {
        return std::vector<float>{img.at(0, 0, 0) * 10.0f, img.at(0, 0, 1) * 10.0f};
    });

    Rng rng(2025);
    std::vector<synth::RankingPair> pairs;
    for (int i = 0; i < 60; ++i) {
        const auto f1_syn = static_cast<float>(rng.uniform(0.0, 0.4));
        const auto f1_real = f1_syn + static_cast<float>(rng.uniform(0.1, 0.5));
        synth::RankingPair pair;
        pair.real = feature_image(f1_real, static_cast<float>(rng.uniform(0.0, 1.0)));
        pair.synthetic = feature_image(f1_syn, static_cast<float>(rng.uniform(0.0, 1.0)));
        pair.source_id = "s" + std::to_string(i);
        pairs.push_back(std::move(pair));
    }
    std::vector<synth::RankingPair> train(pairs.begin(), pairs.begin() + 40);
    std::vector<synth::RankingPair> val(pairs.begin() + 40, pairs.end());

    TrainConfig cfg;
    cfg.epochs = 60;
    cfg.learning_rate = 0.05;
    cfg.batch_size = 4;
    cfg.seed = 8;

    const RankModel model =
        train_ranker(train, val, pixel_adapter_config("sep", 2), cfg, plain_augment(1, 1));
    CHECK(model.provenance.validation_rank_accuracy == doctest::Approx(1.0));
    CHECK(validation_rank_accuracy(model, val) == doctest::Approx(1.0));
    clear_feature_backends();
}

TEST_CASE("decoder weights stay non-negative through training") {
    auto pairs = toy_pairs(16, 2, 40);
    std::vector<synth::RankingPair> train(pairs.begin(), pairs.begin() + 24);
    std::vector<synth::RankingPair> val(pairs.begin() + 24, pairs.end());

    TrainConfig cfg;
    cfg.epochs = 9;  // 9 epochs x 24 steps > 200 optimizer steps
    cfg.learning_rate = 1e-3;
    cfg.batch_size = 1;
    cfg.seed = 14;

    long long steps = 0;
    float min_seen = 0.0f;
    const RankModel model = train_ranker(train, val, small_cnn_config(), cfg, plain_augment(32, 32),
                                         [&](const StepInfo& info) {
                                             ++steps;
                                             min_seen = std::min(min_seen, info.decoder_min_weight);
                                             CHECK(info.decoder_min_weight >= 0.0f);
                                         });
    CHECK(steps >= 200);
    CHECK(min_seen >= 0.0f);

    // Proxy counts stay non-negative on fresh scenes.
    synth::SceneParams params;
    params.width = 32;
    params.height = 32;
    for (int i = 0; i < 100; ++i) {
        Rng rng(mix_seed(61, i));
        const auto spec = synth::sample_scene(params, static_cast<int>(rng.uniform_int(0, 20)), rng.next());
        CHECK(proxy_count(model, synth::render_scene(spec)) >= 0.0);
    }
}

TEST_CASE("validation accuracy conventions") {
    clear_feature_backends();
    register_feature_backend("count-pixel", [](const Image& img) {
        return std::vector<float>{img.at(0, 0, 0) * 255.0f};
    });
    const EncoderConfig cfg = pixel_adapter_config("count-pixel", 1);

    std::vector<synth::RankingPair> pairs;
    Rng rng(99);
    for (int i = 0; i < 40; ++i) {
        const auto real_count = static_cast<float>(rng.uniform_int(10, 50));
        const auto syn_count = static_cast<float>(rng.uniform_int(0, 9));
        synth::RankingPair pair;
        pair.real = feature_image(real_count / 255.0f);
        pair.synthetic = feature_image(syn_count / 255.0f);
        pairs.push_back(std::move(pair));
    }

    SUBCASE("all-zero decoder ties everywhere, accuracy one half") {
        RankModel model = init_rank_model(cfg, 0);
        model.decoder.weights.setZero();
        CHECK(validation_rank_accuracy(model, pairs) == doctest::Approx(0.5));
    }

    SUBCASE("an oracle decoder scores 1.0 on strict pairs") {
        RankModel model = init_rank_model(cfg, 0);
        model.decoder.weights[0] = 1.0f;
        CHECK(validation_rank_accuracy(model, pairs) == doctest::Approx(1.0));
    }

    SUBCASE("a random model on symmetric pairs sits near one half") {
        Rng mc(123);
        std::vector<synth::RankingPair> symmetric;
        for (int i = 0; i < 1000; ++i) {
            synth::RankingPair pair;
            pair.real = feature_image(static_cast<float>(mc.uniform(0.0, 1.0)));
            pair.synthetic = feature_image(static_cast<float>(mc.uniform(0.0, 1.0)));
            symmetric.push_back(std::move(pair));
        }
        RankModel model = init_rank_model(cfg, 3);
        const double acc = validation_rank_accuracy(model, symmetric);
        CHECK(acc > 0.45);
        CHECK(acc < 0.55);
    }
    clear_feature_backends();
}

TEST_CASE("training never reveals hidden counts") {
    auto pairs = toy_pairs(6, 2, 40);
    std::vector<synth::RankingPair> train(pairs.begin(), pairs.begin() + 8);
    std::vector<synth::RankingPair> val(pairs.begin() + 8, pairs.end());

    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.learning_rate = 1e-4;
    cfg.batch_size = 4;
    cfg.seed = 2;

    const auto before = BlindedCount::reveals();
    const RankModel model = train_ranker(train, val, small_cnn_config(), cfg, plain_augment(32, 32));
    CHECK(BlindedCount::reveals() == before);
    CHECK(model.provenance.epochs_trained == 2);
}

TEST_CASE("training is bit-deterministic under a fixed seed") {
    auto pairs = toy_pairs(8, 2, 40);
    std::vector<synth::RankingPair> train(pairs.begin(), pairs.begin() + 12);
    std::vector<synth::RankingPair> val(pairs.begin() + 12, pairs.end());

    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.learning_rate = 5e-4;
    cfg.batch_size = 4;
    cfg.seed = 31;

    std::vector<double> curve_a, curve_b;
    const RankModel model_a = train_ranker(train, val, small_cnn_config(), cfg, plain_augment(32, 32),
                                           [&](const StepInfo& info) { curve_a.push_back(info.batch_loss); });
    const RankModel model_b = train_ranker(train, val, small_cnn_config(), cfg, plain_augment(32, 32),
                                           [&](const StepInfo& info) { curve_b.push_back(info.batch_loss); });
    CHECK(curve_a == curve_b);
    CHECK(encoder_digest(*model_a.encoder) == encoder_digest(*model_b.encoder));
    CHECK(model_a.decoder.weights == model_b.decoder.weights);
}

TEST_CASE("divergence aborts with the failing step") {
    auto pairs = toy_pairs(4, 1, 40);
    std::vector<synth::RankingPair> train(pairs.begin(), pairs.begin() + 2);
    std::vector<synth::RankingPair> val(pairs.begin() + 2, pairs.end());

    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.learning_rate = 1e30;
    cfg.batch_size = 1;
    cfg.seed = 7;

    CHECK_THROWS_AS(train_ranker(train, val, small_cnn_config(), cfg, plain_augment(32, 32)),
                    DivergenceError);
}

TEST_CASE("rank checkpoints round-trip and detect tampering") {
    testutil::TempDir dir("rank_ckpt");
    auto pairs = toy_pairs(4, 2, 40);
    std::vector<synth::RankingPair> train(pairs.begin(), pairs.begin() + 6);
    std::vector<synth::RankingPair> val(pairs.begin() + 6, pairs.end());

    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.learning_rate = 1e-4;
    cfg.batch_size = 2;
    cfg.seed = 12;

    const RankModel model = train_ranker(train, val, small_cnn_config(), cfg, plain_augment(32, 32));
    const std::string path = dir.str("rank.json");
    save_rank_checkpoint(model, path, nlohmann::json{{"note", "test"}});

    SUBCASE("round trip preserves predictions bit-exactly") {
        const RankModel loaded = load_rank_checkpoint(path);
        CHECK(loaded.provenance.selected_epoch == model.provenance.selected_epoch);
        for (int i = 0; i < 5; ++i) {
            Rng rng(mix_seed(17, i));
            const auto spec = synth::sample_scene({32, 32}, static_cast<int>(rng.uniform_int(0, 15)), rng.next());
            const Image img = synth::render_scene(spec);
            CHECK(proxy_count(loaded, img) == proxy_count(model, img));
        }
    }

    SUBCASE("a corrupted parameter trips the digest check") {
        std::ifstream in(path);
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        const auto pos = text.find("\"decoder\"");
        REQUIRE(pos != std::string::npos);
        for (std::size_t i = pos; i < text.size(); ++i) {
            if (text[i] >= '1' && text[i] <= '8') {
                text[i] = static_cast<char>(text[i] + 1);
                break;
            }
        }
        std::ofstream(path) << text;
        CHECK_THROWS_WITH_AS(load_rank_checkpoint(path), doctest::Contains(path.c_str()), DigestError);
    }
}
