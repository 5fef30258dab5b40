#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "anyctl/datagen.hpp"
#include "anyctl/model_config.hpp"
#include "anyctl/tensor.hpp"

namespace anyctl {

// Root-mean-square over elementwise differences, accumulated in double.
double rmse_map(const Tensor& a, const Tensor& b);

// Mean pixel accuracy over the classes present in gt. Both maps hold
// integral labels in [0, num_classes).
double seg_mpa(const Tensor& pred, const Tensor& gt, int64_t num_classes);

struct FeatureStats {
    std::vector<double> mean;  // [d]
    std::vector<double> cov;   // [d*d] row-major, symmetric, ddof = 1
    int64_t count = 0;
};

// Sample mean and covariance over feature rows; needs at least two rows.
FeatureStats feature_stats(const std::vector<std::vector<double>>& rows);

// ||mu1-mu2||^2 + Tr(S1 + S2 - 2 sqrt(S1 S2)), covariances regularized
// with 1e-6*I so the product square root exists.
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

struct BenchmarkSpec {
    int64_t count = 200;
    uint64_t seed = 1;
    DataConfig data;  // scene-generator settings; seed above wins

    void validate() const;
};

// Emits `count` unaligned records under dir; returns the manifest path.
std::string build_benchmark(const BenchmarkSpec& spec, const std::string& dir,
                            bool force = false);

// Nearest-color pixel classification against the scene's object colors and
// the canvas background. Colors are sampled without replacement per scene,
// so this recovers the exact visibility labels on rendered targets.
// image is [3,H,W] in [0,1]; the result holds labels 0..n as floats.
Tensor classify_labels(const Tensor& image, const SceneSpec& scene);

// 1 where any 4-neighbor holds a different label, matching the dataset's
// edge extraction.
Tensor labels_to_edge(const Tensor& labels);

// value[k] is the depth for label k (value[0] = background 0).
Tensor labels_to_depth(const Tensor& labels, const std::vector<double>& value);

// Depth value per label for a scene: rank/n with the nearest object at 1.
std::vector<double> depth_values(const SceneSpec& scene);

struct EvalConfig {
    int64_t ddim_steps = 20;
    double guidance = 7.5;
    int64_t max_samples = 0;    // 0 = every manifest record
    bool passthrough = false;   // score target images instead of sampling
    bool with_unconditional = true;
    bool with_frechet = true;
    uint64_t feature_seed = 1234;  // frozen feature-encoder weights

    void validate() const;
};

struct MetricReport {
    std::map<std::string, double> metrics;
    std::vector<std::string> per_sample_header;
    std::vector<std::vector<double>> per_sample;
};

// For each record: sample with its caption plus an [edge, depth] condition
// pair (aligned records use the scene maps, unaligned ones the foreground
// edge and background depth) at the record's own seed, then score the
// result against the conditioning maps and the scene's visibility labels.
// passthrough scores the stored target image and needs no checkpoint.
MetricReport run_eval(const ModelConfig& cfg, const std::string& checkpoint_dir,
                      const std::string& manifest_path, const EvalConfig& ec);

// report.json (metrics + meta) and per_sample.csv under out_dir.
void write_report(const MetricReport& report, const std::string& out_dir,
                  const nlohmann::json& meta);

}  // namespace anyctl
