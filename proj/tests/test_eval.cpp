#include <doctest.h>

#include <cmath>
#include <fstream>

#include "crowdcount/errors.hpp"
#include "crowdcount/evaluate.hpp"
#include "crowdcount/rng.hpp"
#include "support/test_util.hpp"

using namespace crowdcount;
using namespace crowdcount::eval;

namespace {

Image random_image(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    Image img = make_image(h, w);
    for (float& v : img.pixels) v = static_cast<float>(rng.uniform01());
    return img;
}

// Probe whose prediction is pixel(0,0,0) * 1024 for constant images. The
// power-of-two scale keeps integer-valued predictions exact in float, so
// metric assertions can run at 1e-9.
struct ValueProbe {
    probe::ProbeModel model;
    explicit ValueProbe(const std::string& backend_name) {
        rank::register_feature_backend(backend_name, [](const Image& img) {
            return std::vector<float>{img.at(0, 0, 0) * 1024.0f};
        });
        rank::EncoderConfig cfg = rank::EncoderConfig::backbone_adapter_default(backend_name, 1);
        cfg.input_height = 4;
        cfg.input_width = 4;
        const auto rank_model = rank::init_rank_model(cfg, 0);
        model.encoder = rank_model.encoder;
        model.weights = Eigen::VectorXf::Ones(1);
        model.bias = 0.0f;
        model.encoder_digest = rank::encoder_digest(*rank_model.encoder);
    }
};

data::LabeledImage labeled_constant(double value, double truth, const std::string& id) {
    Image img = make_image(8, 8, id);
    for (float& v : img.pixels) v = static_cast<float>(value / 1024.0);
    data::LabeledImage item;
    item.image = std::make_shared<Image>(std::move(img));
    item.truth = static_cast<long long>(truth);
    item.id = id;
    return item;
}

}  // namespace

TEST_CASE("split_patches") {
    SUBCASE("k = 1 returns the input") {
        const Image img = random_image(13, 9, 1);
        const auto patches = split_patches(img, 1);
        REQUIRE(patches.size() == 1);
        CHECK(patches[0].pixels == img.pixels);
    }

    SUBCASE("floor-rule boundaries at H = 853, k = 2") {
        const Image img = random_image(853, 6, 2);
        const auto patches = split_patches(img, 2);
        REQUIRE(patches.size() == 4);
        CHECK(patches[0].height == 426);
        CHECK(patches[2].height == 427);
    }

    SUBCASE("patch dimensions differ by at most one pixel") {
        const Image img = random_image(50, 37, 3);
        for (int k : {2, 3, 4, 6}) {
            int min_h = 1 << 20, max_h = 0, min_w = 1 << 20, max_w = 0;
            for (const auto& p : split_patches(img, k)) {
                min_h = std::min(min_h, p.height);
                max_h = std::max(max_h, p.height);
                min_w = std::min(min_w, p.width);
                max_w = std::max(max_w, p.width);
            }
            CHECK(max_h - min_h <= 1);
            CHECK(max_w - min_w <= 1);
        }
    }

    SUBCASE("200 random cases reconstruct bit-exactly") {
        Rng rng(2020);
        for (int trial = 0; trial < 200; ++trial) {
            const int h = static_cast<int>(rng.uniform_int(6, 80));
            const int w = static_cast<int>(rng.uniform_int(6, 80));
            const int k = static_cast<int>(rng.uniform_int(1, 6));
            if (k > std::min(h, w)) continue;
            const Image img = random_image(h, w, rng.next());
            const auto patches = split_patches(img, k);
            REQUIRE(patches.size() == static_cast<std::size_t>(k) * k);

            Image rebuilt = make_image(h, w);
            int idx = 0;
            for (int i = 0; i < k; ++i) {
                const int y_lo = static_cast<int>(static_cast<long long>(i) * h / k);
                for (int j = 0; j < k; ++j) {
                    const int x_lo = static_cast<int>(static_cast<long long>(j) * w / k);
                    const auto& p = patches[idx++];
                    for (int y = 0; y < p.height; ++y) {
                        for (int x = 0; x < p.width; ++x) {
                            for (int c = 0; c < 3; ++c) rebuilt.at(y_lo + y, x_lo + x, c) = p.at(y, x, c);
                        }
                    }
                }
            }
            CHECK(rebuilt.pixels == img.pixels);
        }
    }

    SUBCASE("oversized k is rejected") {
        const Image img = random_image(5, 5, 4);
        CHECK_THROWS_AS(split_patches(img, 6), std::invalid_argument);
        CHECK_THROWS_AS(split_patches(img, 0), std::invalid_argument);
    }
}

TEST_CASE("infer_image") {
    rank::clear_feature_backends();
    ValueProbe vp("infer-backend");

    SUBCASE("constant-bias probe reveals the k^2 pitfall") {
        probe::ProbeModel biased = vp.model;
        biased.weights.setZero();
        biased.bias = 3.0f;
        const Image img = random_image(24, 24, 5);
        for (int k : {1, 2, 3, 4}) {
            CHECK(infer_image(biased, img, k) == doctest::Approx(k * k * 3.0));
        }
    }

    SUBCASE("k = 1 equals the whole-image prediction") {
        Image img = make_image(4, 4);  // already at encoder input size
        for (float& v : img.pixels) v = 0.25f;
        const double whole = probe::predict_count(vp.model, img).clamped;
        CHECK(infer_image(vp.model, img, 1) == whole);
    }
    rank::clear_feature_backends();
}

TEST_CASE("evaluate metric arithmetic") {
    rank::clear_feature_backends();
    ValueProbe vp("eval-backend");

    SUBCASE("hand-checked MAE and MSE") {
        std::vector<data::LabeledImage> labeled{
            labeled_constant(10, 12, "a"),
            labeled_constant(20, 18, "b"),
            labeled_constant(30, 33, "c"),
        };
        const auto report = evaluate(vp.model, labeled, 1);
        CHECK(report.mae == doctest::Approx(7.0 / 3.0).epsilon(1e-9));
        CHECK(report.mse == doctest::Approx(std::sqrt(17.0 / 3.0)).epsilon(1e-9));
        CHECK(report.n_images == 3);
        REQUIRE(report.per_image.size() == 3);
        CHECK(report.per_image[0].id == "a");
        CHECK(report.per_image[0].error == doctest::Approx(-2.0).epsilon(1e-9));
    }

    SUBCASE("perfect predictions score zero") {
        std::vector<data::LabeledImage> labeled{labeled_constant(40, 40, "a"), labeled_constant(5, 5, "b")};
        const auto report = evaluate(vp.model, labeled, 1);
        CHECK(report.mae == doctest::Approx(0.0).epsilon(1e-4));
        CHECK(report.mse == doctest::Approx(0.0).epsilon(1e-4));
    }

    SUBCASE("single image: MAE equals MSE equals the absolute error") {
        std::vector<data::LabeledImage> labeled{labeled_constant(25, 30, "a")};
        const auto report = evaluate(vp.model, labeled, 1);
        CHECK(report.mae == doctest::Approx(report.mse).epsilon(1e-9));
        CHECK(report.mae == doctest::Approx(5.0).epsilon(1e-3));
    }

    SUBCASE("mae <= mse on random instances") {
        Rng rng(606);
        for (int trial = 0; trial < 1000; ++trial) {
            std::vector<data::LabeledImage> labeled;
            const int n = static_cast<int>(rng.uniform_int(2, 6));
            for (int i = 0; i < n; ++i) {
                labeled.push_back(labeled_constant(rng.uniform(0.0, 500.0), rng.uniform_int(0, 500),
                                                   "i" + std::to_string(i)));
            }
            const auto report = evaluate(vp.model, labeled, 1);
            CHECK(report.mae <= report.mse + 1e-9);
        }
    }
    rank::clear_feature_backends();
}

TEST_CASE("spearman correlation") {
    SUBCASE("identity and negation") {
        const std::vector<double> truth{3, 1, 4, 1.5, 9, 2.6};
        std::vector<double> neg;
        for (double t : truth) neg.push_back(-t);
        CHECK(*spearman_correlation(truth, truth) == doctest::Approx(1.0));
        CHECK(*spearman_correlation(neg, truth) == doctest::Approx(-1.0));
    }

    SUBCASE("invariant under strictly increasing transforms") {
        Rng rng(11);
        std::vector<double> a, b;
        for (int i = 0; i < 50; ++i) {
            a.push_back(rng.uniform(-3.0, 3.0));
            b.push_back(rng.uniform(0.0, 100.0));
        }
        const double base = *spearman_correlation(a, b);
        std::vector<double> transformed;
        for (double v : a) transformed.push_back(std::exp(v));
        CHECK(*spearman_correlation(transformed, b) == doctest::Approx(base).epsilon(1e-12));
    }

    SUBCASE("degenerate inputs are undefined") {
        CHECK(!spearman_correlation({1, 1, 1}, {2, 3, 4}).has_value());
        CHECK(!spearman_correlation({1}, {2}).has_value());
    }

    SUBCASE("random proxies have mean correlation near zero") {
        Rng rng(8080);
        double sum = 0.0;
        const int trials = 1000;
        std::vector<double> a(500), b(500);
        for (int t = 0; t < trials; ++t) {
            for (int i = 0; i < 500; ++i) {
                a[i] = rng.uniform01();
                b[i] = rng.uniform01();
            }
            sum += *spearman_correlation(a, b);
        }
        const double mean = sum / trials;
        CHECK(std::abs(mean) < 0.1);
    }
}

TEST_CASE("rank_diagnostics") {
    rank::clear_feature_backends();
    rank::register_feature_backend("diag-backend", [](const Image& img) {
        return std::vector<float>{img.at(0, 0, 0) * 1024.0f};
    });
    rank::EncoderConfig cfg = rank::EncoderConfig::backbone_adapter_default("diag-backend", 1);
    cfg.input_height = 4;
    cfg.input_width = 4;
    rank::RankModel model = rank::init_rank_model(cfg, 0);
    model.decoder.weights[0] = 1.0f;  // proxy = encoded value

    testutil::TempDir dir("diag");

    SUBCASE("perfect ordering") {
        std::vector<data::LabeledImage> labeled;
        for (int i = 0; i < 10; ++i) labeled.push_back(labeled_constant(10.0 * i, 10.0 * i, "d" + std::to_string(i)));
        const auto diag = rank_diagnostics(model, labeled, dir.str("features.csv"));
        REQUIRE(diag.spearman.has_value());
        CHECK(*diag.spearman == doctest::Approx(1.0));
        CHECK(diag.pairwise_accuracy == doctest::Approx(1.0));

        std::ifstream csv(dir.str("features.csv"));
        std::string header;
        std::getline(csv, header);
        CHECK(header == "id,truth,c_proxy,f1");
        int rows = 0;
        for (std::string line; std::getline(csv, line);) ++rows;
        CHECK(rows == 10);
    }

    SUBCASE("inverted ordering") {
        std::vector<data::LabeledImage> labeled;
        for (int i = 0; i < 10; ++i) {
            labeled.push_back(labeled_constant(10.0 * (10 - i), 10.0 * i, "d" + std::to_string(i)));
        }
        const auto diag = rank_diagnostics(model, labeled, "");
        REQUIRE(diag.spearman.has_value());
        CHECK(*diag.spearman == doctest::Approx(-1.0));
        CHECK(diag.pairwise_accuracy == doctest::Approx(0.0));
    }

    SUBCASE("all-equal truths report an undefined correlation") {
        std::vector<data::LabeledImage> labeled;
        for (int i = 0; i < 5; ++i) labeled.push_back(labeled_constant(10.0 * i, 7, "d" + std::to_string(i)));
        const auto diag = rank_diagnostics(model, labeled, "");
        CHECK(!diag.spearman.has_value());
    }
    rank::clear_feature_backends();
}

TEST_CASE("patch_sweep") {
    rank::clear_feature_backends();
    ValueProbe vp("sweep-backend");

    std::vector<data::LabeledImage> labeled;
    for (int i = 0; i < 6; ++i) labeled.push_back(labeled_constant(5.0 * i, 2.0 * i, "s" + std::to_string(i)));

    SUBCASE("single k equals evaluate") {
        const auto reports = patch_sweep(vp.model, labeled, {1});
        REQUIRE(reports.size() == 1);
        const auto direct = evaluate(vp.model, labeled, 1);
        CHECK(reports[0].mae == direct.mae);
        CHECK(reports[0].mse == direct.mse);
    }

    SUBCASE("constant-bias probe degrades monotonically in k") {
        probe::ProbeModel biased = vp.model;
        biased.weights.setZero();
        biased.bias = 4.0f;
        // Truths below k^2 * bias for every k, so each extra patch adds error.
        std::vector<data::LabeledImage> small_truths;
        for (int i = 0; i < 4; ++i) small_truths.push_back(labeled_constant(0, 2, "t" + std::to_string(i)));
        const auto reports = patch_sweep(biased, small_truths, {1, 2, 3, 4});
        for (std::size_t i = 1; i < reports.size(); ++i) {
            CHECK(reports[i].mae > reports[i - 1].mae);
        }
    }

    SUBCASE("sweep output is reproducible and renders a table") {
        const auto a = patch_sweep(vp.model, labeled, {1, 2});
        const auto b = patch_sweep(vp.model, labeled, {1, 2});
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].mae == b[i].mae);
            CHECK(a[i].mse == b[i].mse);
        }
        const std::string table = report_table(a);
        CHECK(table.find("MAE") != std::string::npos);
        CHECK(table.find("MSE") != std::string::npos);
    }
    rank::clear_feature_backends();
}

TEST_CASE("report json carries digests and config") {
    rank::clear_feature_backends();
    ValueProbe vp("json-backend");
    std::vector<data::LabeledImage> labeled{labeled_constant(10, 10, "a"), labeled_constant(20, 25, "b")};
    const auto report = evaluate(vp.model, labeled, 1);
    const auto j = report_to_json(report, nlohmann::json{{"seed", 1}});
    CHECK(j.at("mae").get<double>() == doctest::Approx(report.mae));
    CHECK(j.at("digests").at("probe").get<std::string>() == report.probe_digest);
    CHECK(j.at("per_image").size() == 2);
    CHECK(j.at("run_config").at("seed").get<int>() == 1);
    rank::clear_feature_backends();
}
