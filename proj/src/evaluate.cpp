#include "crowdcount/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "crowdcount/errors.hpp"

using nlohmann::json;

namespace crowdcount::eval {

std::vector<Image> split_patches(const Image& image, int k) {
    if (k < 1) throw std::invalid_argument("patch grid k must be >= 1");
    if (k > image.height || k > image.width) {
        throw std::invalid_argument("patch grid k exceeds image dimensions");
    }

    std::vector<Image> patches;
    patches.reserve(static_cast<std::size_t>(k) * k);
    for (int i = 0; i < k; ++i) {
        const int y_lo = static_cast<int>(static_cast<long long>(i) * image.height / k);
        const int y_hi = static_cast<int>(static_cast<long long>(i + 1) * image.height / k);
        for (int j = 0; j < k; ++j) {
            const int x_lo = static_cast<int>(static_cast<long long>(j) * image.width / k);
            const int x_hi = static_cast<int>(static_cast<long long>(j + 1) * image.width / k);
            Image patch = make_image(y_hi - y_lo, x_hi - x_lo,
                                     image.source_id + "#r" + std::to_string(i) + "c" + std::to_string(j));
            for (int y = y_lo; y < y_hi; ++y) {
                for (int x = x_lo; x < x_hi; ++x) {
                    for (int c = 0; c < 3; ++c) patch.at(y - y_lo, x - x_lo, c) = image.at(y, x, c);
                }
            }
            patches.push_back(std::move(patch));
        }
    }
    return patches;
}

double infer_image(const probe::ProbeModel& model, const Image& image, int k) {
    const auto& cfg = model.encoder->config();
    double total = 0.0;
    for (const Image& patch : split_patches(image, k)) {
        const Image resized = resize_bilinear(patch, cfg.input_height, cfg.input_width);
        total += probe::predict_count(model, resized).clamped;
    }
    return total;
}

MetricsReport evaluate(const probe::ProbeModel& model, const std::vector<data::LabeledImage>& labeled, int k) {
    if (labeled.empty()) throw DataError("evaluate: no labeled images");

    MetricsReport report;
    report.patch_k = k;
    report.n_images = static_cast<int>(labeled.size());
    report.encoder_digest = rank::encoder_digest(*model.encoder);
    report.probe_digest = probe_digest(model);
    report.per_image.resize(labeled.size());

    parallel_for(static_cast<int>(labeled.size()), [&](int i) {
        const auto& item = labeled[i];
        PerImageError& row = report.per_image[i];
        row.id = item.id.empty() ? item.image->source_id : item.id;
        row.predicted = infer_image(model, *item.image, k);
        row.truth = static_cast<double>(item.truth);
        row.error = row.predicted - row.truth;
    });

    double abs_sum = 0.0;
    double sq_sum = 0.0;
    for (const auto& row : report.per_image) {
        abs_sum += std::abs(row.error);
        sq_sum += row.error * row.error;
    }
    report.mae = abs_sum / report.n_images;
    report.mse = std::sqrt(sq_sum / report.n_images);
    return report;
}

json report_to_json(const MetricsReport& report, const json& run_config) {
    json j;
    j["mae"] = report.mae;
    j["mse"] = report.mse;
    j["n_images"] = report.n_images;
    j["patch_k"] = report.patch_k;
    j["digests"] = {{"encoder", report.encoder_digest}, {"probe", report.probe_digest}};
    j["per_image"] = json::array();
    for (const auto& row : report.per_image) {
        j["per_image"].push_back(
            {{"id", row.id}, {"predicted", row.predicted}, {"truth", row.truth}, {"error", row.error}});
    }
    if (!run_config.is_null()) j["run_config"] = run_config;
    return j;
}

std::string report_table(const std::vector<MetricsReport>& reports) {
    std::ostringstream out;
    char line[96];
    std::snprintf(line, sizeof line, "%6s %12s %12s %8s\n", "k", "MAE", "MSE", "images");
    out << line;
    for (const auto& r : reports) {
        std::snprintf(line, sizeof line, "%6d %12.4f %12.4f %8d\n", r.patch_k, r.mae, r.mse, r.n_images);
        out << line;
    }
    return out.str();
}

namespace {

// Ranks with ties averaged, 1-based.
std::vector<double> average_ranks(const std::vector<double>& values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });

    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[idx[j + 1]] == values[idx[i]]) ++j;
        const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = rank;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

std::optional<double> spearman_correlation(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("spearman: size mismatch");
    if (a.size() < 2) return std::nullopt;
    const std::vector<double> ra = average_ranks(a);
    const std::vector<double> rb = average_ranks(b);
    const auto n = static_cast<double>(a.size());

    double mean_a = 0.0, mean_b = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        mean_a += ra[i];
        mean_b += rb[i];
    }
    mean_a /= n;
    mean_b /= n;

    double cov = 0.0, var_a = 0.0, var_b = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = ra[i] - mean_a;
        const double db = rb[i] - mean_b;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if (var_a == 0.0 || var_b == 0.0) return std::nullopt;
    return cov / std::sqrt(var_a * var_b);
}

RankDiagnostics rank_diagnostics(const rank::RankModel& model, const std::vector<data::LabeledImage>& labeled,
                                 const std::string& feature_csv_path) {
    if (labeled.size() < 2) throw DataError("rank_diagnostics: need at least 2 labeled images");

    const auto& cfg = model.encoder->config();
    const auto n = static_cast<int>(labeled.size());

    std::vector<Eigen::VectorXf> features(n);
    std::vector<double> proxies(n), truths(n);
    parallel_for(n, [&](int i) {
        const Image resized = resize_bilinear(*labeled[i].image, cfg.input_height, cfg.input_width);
        features[i] = model.encoder->forward(resized);
        proxies[i] = model.decoder.apply(features[i]);
        truths[i] = static_cast<double>(labeled[i].truth);
    });

    RankDiagnostics diag;
    diag.n_images = n;
    diag.spearman = spearman_correlation(proxies, truths);

    double score = 0.0;
    long long strict_pairs = 0;
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            if (truths[i] == truths[j]) continue;
            ++strict_pairs;
            const double t = truths[i] - truths[j];
            const double p = proxies[i] - proxies[j];
            if (p == 0.0) {
                score += 0.5;
            } else if ((t > 0) == (p > 0)) {
                score += 1.0;
            }
        }
    }
    diag.pairwise_accuracy = strict_pairs > 0 ? score / static_cast<double>(strict_pairs) : 0.0;

    if (!feature_csv_path.empty()) {
        std::ofstream csv(feature_csv_path);
        if (!csv) throw DataError("cannot write feature export: " + feature_csv_path);
        csv << "id,truth,c_proxy";
        for (int d = 1; d <= cfg.feature_dim; ++d) csv << ",f" << d;
        csv << '\n';
        char num[32];
        for (int i = 0; i < n; ++i) {
            csv << labeled[i].id << ',' << static_cast<long long>(truths[i]) << ',';
            std::snprintf(num, sizeof num, "%.7g", proxies[i]);
            csv << num;
            for (int d = 0; d < cfg.feature_dim; ++d) {
                std::snprintf(num, sizeof num, "%.7g", static_cast<double>(features[i][d]));
                csv << ',' << num;
            }
            csv << '\n';
        }
        diag.feature_csv_path = feature_csv_path;
    }
    return diag;
}

std::vector<MetricsReport> patch_sweep(const probe::ProbeModel& model,
                                       const std::vector<data::LabeledImage>& labeled,
                                       const std::vector<int>& ks) {
    std::vector<MetricsReport> reports;
    reports.reserve(ks.size());
    for (int k : ks) reports.push_back(evaluate(model, labeled, k));
    return reports;
}

}  // namespace crowdcount::eval
