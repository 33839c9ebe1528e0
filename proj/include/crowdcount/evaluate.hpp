#pragma once

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

#include "crowdcount/dataset.hpp"
#include "crowdcount/probe.hpp"
#include "crowdcount/rank.hpp"

namespace crowdcount::eval {

// k x k tiling with floor boundaries: row i spans
// [floor(i*H/k), floor((i+1)*H/k)). Patches are disjoint, cover the image
// exactly, and differ by at most one pixel in size. Row-major order.
std::vector<Image> split_patches(const Image& image, int k);

// Sum of clamped per-patch predictions; each patch is resized to the
// encoder input independently.
double infer_image(const probe::ProbeModel& model, const Image& image, int k);

struct PerImageError {
    std::string id;
    double predicted = 0.0;
    double truth = 0.0;
    double error = 0.0;  // predicted - truth
};

// mse follows the crowd-counting convention: root of the mean squared
// count error, so mae <= mse always holds.
struct MetricsReport {
    double mae = 0.0;
    double mse = 0.0;
    int n_images = 0;
    int patch_k = 1;
    std::string encoder_digest;
    std::string probe_digest;
    std::vector<PerImageError> per_image;
};

MetricsReport evaluate(const probe::ProbeModel& model, const std::vector<data::LabeledImage>& labeled, int k);

nlohmann::json report_to_json(const MetricsReport& report, const nlohmann::json& run_config);
std::string report_table(const std::vector<MetricsReport>& reports);

// Spearman rank correlation with average ranks on ties; empty when either
// side is constant.
std::optional<double> spearman_correlation(const std::vector<double>& a, const std::vector<double>& b);

struct RankDiagnostics {
    std::optional<double> spearman;    // empty on degenerate (all-equal) truths
    double pairwise_accuracy = 0.0;    // over strict-inequality truth pairs; proxy ties count 0.5
    int n_images = 0;
    std::string feature_csv_path;
};

// Proxy-count ordering diagnostics plus a feature export
// (id,truth,c_proxy,f1..fD) for external embedding tools. Images are
// resized to the encoder input.
RankDiagnostics rank_diagnostics(const rank::RankModel& model, const std::vector<data::LabeledImage>& labeled,
                                 const std::string& feature_csv_path);

std::vector<MetricsReport> patch_sweep(const probe::ProbeModel& model,
                                       const std::vector<data::LabeledImage>& labeled,
                                       const std::vector<int>& ks);

}  // namespace crowdcount::eval
