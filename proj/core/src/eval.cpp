#include "anyctl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>

#include "anyctl/checkpoint.hpp"
#include "anyctl/parallel.hpp"
#include "anyctl/pipeline.hpp"
#include "anyctl/sampler.hpp"

namespace anyctl {
namespace {

namespace fs = std::filesystem;

void check_same_shape(const Tensor& a, const Tensor& b, const char* who) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(who) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

// Labels travel as float tensors; every value must be a small exact integer.
int64_t label_at(const Tensor& t, int64_t i, int64_t num_classes,
                 const char* who) {
    const double v = t[i];
    const double r = std::nearbyint(v);
    if (std::abs(v - r) > 1e-6 || r < 0 || r >= static_cast<double>(num_classes))
        throw ContractError(std::string(who) + ": label " + std::to_string(v) +
                            " outside [0," + std::to_string(num_classes) + ")");
    return static_cast<int64_t>(r);
}

// Per-class pixel accuracy; classes absent from gt get -1.
std::vector<double> class_accuracy(const Tensor& pred, const Tensor& gt,
                                   int64_t num_classes) {
    check_same_shape(pred, gt, "seg_mpa");
    if (num_classes < 1) throw ContractError("seg_mpa: num_classes < 1");
    std::vector<int64_t> total(static_cast<size_t>(num_classes), 0);
    std::vector<int64_t> hit(static_cast<size_t>(num_classes), 0);
    for (int64_t i = 0; i < gt.numel(); ++i) {
        const int64_t g = label_at(gt, i, num_classes, "seg_mpa");
        const int64_t p = label_at(pred, i, num_classes, "seg_mpa");
        ++total[static_cast<size_t>(g)];
        if (p == g) ++hit[static_cast<size_t>(g)];
    }
    std::vector<double> acc(static_cast<size_t>(num_classes), -1.0);
    for (int64_t c = 0; c < num_classes; ++c)
        if (total[static_cast<size_t>(c)] > 0)
            acc[static_cast<size_t>(c)] =
                static_cast<double>(hit[static_cast<size_t>(c)]) /
                static_cast<double>(total[static_cast<size_t>(c)]);
    return acc;
}

// Cyclic Jacobi eigendecomposition of a symmetric matrix. a is row-major
// d*d and is destroyed; eigenvalues land in w.
void jacobi_eig(std::vector<double>& a, int64_t d, std::vector<double>& w,
                std::vector<double>& v) {
    v.assign(static_cast<size_t>(d * d), 0.0);
    for (int64_t i = 0; i < d; ++i) v[static_cast<size_t>(i * d + i)] = 1.0;
    auto A = [&](int64_t r, int64_t c) -> double& {
        return a[static_cast<size_t>(r * d + c)];
    };
    auto V = [&](int64_t r, int64_t c) -> double& {
        return v[static_cast<size_t>(r * d + c)];
    };
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0;
        for (int64_t p = 0; p < d; ++p)
            for (int64_t q = p + 1; q < d; ++q) off += A(p, q) * A(p, q);
        if (off < 1e-26) break;
        for (int64_t p = 0; p < d; ++p)
            for (int64_t q = p + 1; q < d; ++q) {
                const double apq = A(p, q);
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (A(q, q) - A(p, p)) / (2 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) +
                                  std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int64_t k = 0; k < d; ++k) {
                    const double akp = A(k, p), akq = A(k, q);
                    A(k, p) = c * akp - s * akq;
                    A(k, q) = s * akp + c * akq;
                }
                for (int64_t k = 0; k < d; ++k) {
                    const double apk = A(p, k), aqk = A(q, k);
                    A(p, k) = c * apk - s * aqk;
                    A(q, k) = s * apk + c * aqk;
                }
                for (int64_t k = 0; k < d; ++k) {
                    const double vkp = V(k, p), vkq = V(k, q);
                    V(k, p) = c * vkp - s * vkq;
                    V(k, q) = s * vkp + c * vkq;
                }
            }
    }
    w.resize(static_cast<size_t>(d));
    for (int64_t i = 0; i < d; ++i) w[static_cast<size_t>(i)] = a[static_cast<size_t>(i * d + i)];
}

// B = V f(w) V^T for a symmetric eigensystem.
std::vector<double> eig_apply(const std::vector<double>& w,
                              const std::vector<double>& v, int64_t d,
                              double (*f)(double)) {
    std::vector<double> out(static_cast<size_t>(d * d), 0.0);
    for (int64_t i = 0; i < d; ++i)
        for (int64_t j = 0; j < d; ++j) {
            double s = 0;
            for (int64_t k = 0; k < d; ++k)
                s += v[static_cast<size_t>(i * d + k)] *
                     f(w[static_cast<size_t>(k)]) *
                     v[static_cast<size_t>(j * d + k)];
            out[static_cast<size_t>(i * d + j)] = s;
        }
    return out;
}

double sqrt_clamped(double x) { return x > 0 ? std::sqrt(x) : 0.0; }

Tensor plane_tensor(const Pnm& map) {
    auto t = Tensor::zeros({map.height, map.width});
    const float inv = 1.0f / static_cast<float>(map.maxval);
    for (int64_t i = 0; i < t.numel(); ++i)
        t[i] = static_cast<float>(map.pixels[static_cast<size_t>(i)]) * inv;
    return t;
}

size_t nearest_index(const SceneSpec& scene) {
    size_t best = 0;
    for (size_t i = 1; i < scene.objects.size(); ++i)
        if (scene.objects[i].z > scene.objects[best].z) best = i;
    return best;
}

}  // namespace

double rmse_map(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "rmse_map");
    if (a.numel() == 0) throw ContractError("rmse_map: empty input");
    double acc = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(a.numel()));
}

double seg_mpa(const Tensor& pred, const Tensor& gt, int64_t num_classes) {
    const auto acc = class_accuracy(pred, gt, num_classes);
    double sum = 0;
    int64_t present = 0;
    for (const double a : acc)
        if (a >= 0) {
            sum += a;
            ++present;
        }
    if (present == 0) throw ContractError("seg_mpa: gt holds no labels");
    return sum / static_cast<double>(present);
}

FeatureStats feature_stats(const std::vector<std::vector<double>>& rows) {
    if (rows.size() < 2)
        throw ContractError("feature_stats: need at least 2 rows");
    const size_t d = rows[0].size();
    if (d == 0) throw ContractError("feature_stats: empty feature vector");
    for (const auto& r : rows)
        if (r.size() != d)
            throw ContractError("feature_stats: ragged feature rows");
    FeatureStats s;
    s.count = static_cast<int64_t>(rows.size());
    s.mean.assign(d, 0.0);
    for (const auto& r : rows)
        for (size_t j = 0; j < d; ++j) s.mean[j] += r[j];
    for (size_t j = 0; j < d; ++j) s.mean[j] /= static_cast<double>(s.count);
    s.cov.assign(d * d, 0.0);
    for (const auto& r : rows)
        for (size_t i = 0; i < d; ++i) {
            const double di = r[i] - s.mean[i];
            for (size_t j = i; j < d; ++j)
                s.cov[i * d + j] += di * (r[j] - s.mean[j]);
        }
    const double norm = 1.0 / static_cast<double>(s.count - 1);
    for (size_t i = 0; i < d; ++i)
        for (size_t j = i; j < d; ++j) {
            s.cov[i * d + j] *= norm;
            s.cov[j * d + i] = s.cov[i * d + j];
        }
    return s;
}

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
    const int64_t d = static_cast<int64_t>(a.mean.size());
    if (d == 0 || b.mean.size() != a.mean.size())
        throw ContractError("frechet_distance: dimension mismatch");
    if (a.cov.size() != static_cast<size_t>(d * d) ||
        b.cov.size() != static_cast<size_t>(d * d))
        throw ContractError("frechet_distance: covariance size mismatch");
    for (const double x : a.mean)
        if (!std::isfinite(x)) throw NumericError("frechet_distance: non-finite mean");
    for (const double x : b.mean)
        if (!std::isfinite(x)) throw NumericError("frechet_distance: non-finite mean");
    for (const double x : a.cov)
        if (!std::isfinite(x)) throw NumericError("frechet_distance: non-finite cov");
    for (const double x : b.cov)
        if (!std::isfinite(x)) throw NumericError("frechet_distance: non-finite cov");

    std::vector<double> s1 = a.cov, s2 = b.cov;
    for (int64_t i = 0; i < d; ++i) {
        s1[static_cast<size_t>(i * d + i)] += 1e-6;
        s2[static_cast<size_t>(i * d + i)] += 1e-6;
    }

    double dist = 0;
    for (int64_t i = 0; i < d; ++i) {
        const double dm = a.mean[static_cast<size_t>(i)] -
                          b.mean[static_cast<size_t>(i)];
        dist += dm * dm;
        dist += s1[static_cast<size_t>(i * d + i)] +
                s2[static_cast<size_t>(i * d + i)];
    }

    // Tr sqrt(S1 S2) = sum of sqrt eigenvalues of sqrt(S1) S2 sqrt(S1),
    // which is symmetric PSD and similar to S1 S2.
    std::vector<double> w, v, work = s1;
    jacobi_eig(work, d, w, v);
    const auto root1 = eig_apply(w, v, d, sqrt_clamped);
    std::vector<double> m(static_cast<size_t>(d * d), 0.0);
    std::vector<double> tmp(static_cast<size_t>(d * d), 0.0);
    for (int64_t i = 0; i < d; ++i)
        for (int64_t k = 0; k < d; ++k) {
            const double r = root1[static_cast<size_t>(i * d + k)];
            if (r == 0) continue;
            for (int64_t j = 0; j < d; ++j)
                tmp[static_cast<size_t>(i * d + j)] +=
                    r * s2[static_cast<size_t>(k * d + j)];
        }
    for (int64_t i = 0; i < d; ++i)
        for (int64_t k = 0; k < d; ++k) {
            const double r = tmp[static_cast<size_t>(i * d + k)];
            if (r == 0) continue;
            for (int64_t j = 0; j < d; ++j)
                m[static_cast<size_t>(i * d + j)] +=
                    r * root1[static_cast<size_t>(k * d + j)];
        }
    for (int64_t i = 0; i < d; ++i)
        for (int64_t j = i + 1; j < d; ++j) {
            const double s = 0.5 * (m[static_cast<size_t>(i * d + j)] +
                                    m[static_cast<size_t>(j * d + i)]);
            m[static_cast<size_t>(i * d + j)] = s;
            m[static_cast<size_t>(j * d + i)] = s;
        }
    jacobi_eig(m, d, w, v);
    for (const double lam : w) dist -= 2.0 * sqrt_clamped(lam);
    if (!std::isfinite(dist)) throw NumericError("frechet_distance: non-finite result");
    return std::max(dist, 0.0);
}

void BenchmarkSpec::validate() const {
    if (count < 1) throw ConfigError("benchmark: count must be >= 1");
    data.validate();
}

std::string build_benchmark(const BenchmarkSpec& spec, const std::string& dir,
                            bool force) {
    spec.validate();
    DataConfig dc = spec.data;
    dc.seed = spec.seed;
    return generate_benchmark(dc, spec.count, dir, force);
}

Tensor classify_labels(const Tensor& image, const SceneSpec& scene) {
    if (image.shape().size() != 3 || image.shape()[0] != 3)
        throw ShapeError("classify_labels: want [3,H,W], got " +
                         shape_str(image.shape()));
    const int64_t h = image.shape()[1], w = image.shape()[2];
    std::vector<std::array<double, 3>> colors;
    colors.push_back({kBackground.r / 255.0, kBackground.g / 255.0,
                      kBackground.b / 255.0});
    for (const auto& o : scene.objects) {
        const Rgb c = kPalette[static_cast<size_t>(o.palette)].color;
        colors.push_back({c.r / 255.0, c.g / 255.0, c.b / 255.0});
    }
    auto labels = Tensor::zeros({h, w});
    for (int64_t i = 0; i < h * w; ++i) {
        const double r = image[i];
        const double g = image[h * w + i];
        const double b = image[2 * h * w + i];
        size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (size_t c = 0; c < colors.size(); ++c) {
            const double dr = r - colors[c][0], dg = g - colors[c][1],
                         db = b - colors[c][2];
            const double d2 = dr * dr + dg * dg + db * db;
            if (d2 < best_d) {
                best_d = d2;
                best = c;
            }
        }
        labels[i] = static_cast<float>(best);
    }
    return labels;
}

Tensor labels_to_edge(const Tensor& labels) {
    if (labels.shape().size() != 2)
        throw ShapeError("labels_to_edge: want [H,W], got " +
                         shape_str(labels.shape()));
    const int64_t h = labels.shape()[0], w = labels.shape()[1];
    auto edge = Tensor::zeros({h, w});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            const int64_t i = y * w + x;
            const float v = labels[i];
            const bool boundary =
                (x > 0 && labels[i - 1] != v) ||
                (x + 1 < w && labels[i + 1] != v) ||
                (y > 0 && labels[i - w] != v) ||
                (y + 1 < h && labels[i + w] != v);
            edge[i] = boundary ? 1.0f : 0.0f;
        }
    return edge;
}

Tensor labels_to_depth(const Tensor& labels,
                       const std::vector<double>& value) {
    if (labels.shape().size() != 2)
        throw ShapeError("labels_to_depth: want [H,W], got " +
                         shape_str(labels.shape()));
    auto depth = Tensor::zeros(labels.shape());
    for (int64_t i = 0; i < labels.numel(); ++i) {
        const int64_t k = label_at(labels, i,
                                   static_cast<int64_t>(value.size()),
                                   "labels_to_depth");
        depth[i] = static_cast<float>(value[static_cast<size_t>(k)]);
    }
    return depth;
}

std::vector<double> depth_values(const SceneSpec& scene) {
    const size_t n = scene.objects.size();
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return scene.objects[a].z < scene.objects[b].z;
    });
    std::vector<double> value(n + 1, 0.0);
    for (size_t pos = 0; pos < n; ++pos)
        value[order[pos] + 1] =
            static_cast<double>(pos + 1) / static_cast<double>(n);
    return value;
}

void EvalConfig::validate() const {
    if (ddim_steps < 1) throw ConfigError("eval: ddim_steps must be >= 1");
    if (guidance < 0) throw ConfigError("eval: guidance must be >= 0");
    if (max_samples < 0) throw ConfigError("eval: max_samples must be >= 0");
}

namespace {

struct SampleScore {
    double edge_rmse = 0, depth_rmse = 0, mpa = 0, recall = 0;
};

SampleScore score_image(const Tensor& image, const SampleRecord& rec,
                        const Tensor& cond_edge, const Tensor& cond_depth,
                        const Tensor& gt_labels,
                        const std::vector<double>& depth_value) {
    const int64_t classes = static_cast<int64_t>(rec.scene.objects.size()) + 1;
    const auto labels = classify_labels(image, rec.scene);
    SampleScore s;
    s.edge_rmse = rmse_map(labels_to_edge(labels), cond_edge);
    s.depth_rmse = rmse_map(labels_to_depth(labels, depth_value), cond_depth);
    const auto acc = class_accuracy(labels, gt_labels, classes);
    double sum = 0, hits = 0;
    int64_t present = 0;
    for (size_t c = 0; c < acc.size(); ++c)
        if (acc[c] >= 0) {
            sum += acc[c];
            ++present;
            if (c > 0 && acc[c] >= 0.5) hits += 1;
        }
    s.mpa = sum / static_cast<double>(present);
    int64_t objects_present = 0;
    for (size_t c = 1; c < acc.size(); ++c)
        if (acc[c] >= 0) ++objects_present;
    s.recall = objects_present > 0
                   ? hits / static_cast<double>(objects_present)
                   : 1.0;
    return s;
}

std::vector<double> image_features(const VisionEncoder& enc,
                                   const Tensor& image) {
    ConditionImage cond;
    cond.modality = Modality::edge;  // unused: modality embedding is off
    cond.channels = image;
    const auto pyramid = enc.encode(cond, false);
    const auto& deep = pyramid.levels.back();
    const int64_t m = deep.shape()[0], d = deep.shape()[1];
    std::vector<double> f(static_cast<size_t>(d), 0.0);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < d; ++j)
            f[static_cast<size_t>(j)] += deep[i * d + j];
    for (auto& x : f) x /= static_cast<double>(m);
    return f;
}

}  // namespace

MetricReport run_eval(const ModelConfig& cfg, const std::string& checkpoint_dir,
                      const std::string& manifest_path, const EvalConfig& ec) {
    ec.validate();
    cfg.validate();
    auto records = load_manifest(manifest_path);
    if (records.empty()) throw ConfigError("eval: manifest has no records");
    if (ec.max_samples > 0 &&
        static_cast<int64_t>(records.size()) > ec.max_samples)
        records.resize(static_cast<size_t>(ec.max_samples));
    const int64_t n = static_cast<int64_t>(records.size());
    if (ec.with_frechet && n < 2)
        throw ConfigError("eval: frechet needs at least 2 samples");

    Pipeline pipe(cfg, 0);
    if (!ec.passthrough) {
        if (checkpoint_dir.empty())
            throw ConfigError("eval: sampling needs a checkpoint");
        load_checkpoint(checkpoint_dir, pipe.store);
    }
    const VisionEncoder features(cfg, SeededRng(ec.feature_seed));

    const bool uncond_arm = ec.with_unconditional && !ec.passthrough;
    MetricReport report;
    report.per_sample_header = {"id",       "aligned",    "edge_rmse",
                                "depth_rmse", "seg_mpa",  "color_recall"};
    if (uncond_arm)
        for (const char* k : {"uncond_edge_rmse", "uncond_depth_rmse",
                              "uncond_seg_mpa", "uncond_color_recall"})
            report.per_sample_header.push_back(k);
    report.per_sample.assign(static_cast<size_t>(n), {});

    std::vector<std::vector<double>> gen_f(static_cast<size_t>(n));
    std::vector<std::vector<double>> target_f(static_cast<size_t>(n));

    std::mutex err_mu;
    std::exception_ptr first_error;
    parallel_for(n, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            try {
                const auto& rec = records[static_cast<size_t>(i)];
                const bool benchmark = !rec.aligned;
                const Pnm& edge_map = rec.conditions.edge;
                const Pnm& depth_map = benchmark ? rec.bg_conditions.depth
                                                 : rec.conditions.depth;
                const auto cond_edge = plane_tensor(edge_map);
                const auto cond_depth = plane_tensor(depth_map);

                const auto vis = visibility_map(rec.scene);
                auto gt_labels = Tensor::zeros(
                    {rec.target.height, rec.target.width});
                for (int64_t p = 0; p < gt_labels.numel(); ++p)
                    gt_labels[p] =
                        static_cast<float>(vis[static_cast<size_t>(p)]);

                // Depth targets come from the scene that drew the
                // conditioning map; the unaligned foreground sits nearest,
                // everything else keeps its background-scene rank.
                std::vector<double> depth_value;
                if (!benchmark) {
                    depth_value = depth_values(rec.scene);
                } else {
                    const size_t fg = nearest_index(rec.scene);
                    SceneSpec bg;
                    bg.canvas = rec.scene.canvas;
                    for (size_t k = 0; k < rec.scene.objects.size(); ++k)
                        if (k != fg) bg.objects.push_back(rec.scene.objects[k]);
                    const auto bg_value = depth_values(bg);
                    depth_value.assign(rec.scene.objects.size() + 1, 0.0);
                    size_t bg_k = 1;
                    for (size_t k = 0; k < rec.scene.objects.size(); ++k)
                        depth_value[k + 1] =
                            k == fg ? 1.0 : bg_value[bg_k++];
                }

                Tensor gen;
                if (ec.passthrough) {
                    gen = pnm_to_tensor(rec.target);
                } else {
                    SampleRequest req;
                    req.prompt = rec.caption;
                    req.conditions.push_back(
                        condition_tensor(edge_map, Modality::edge));
                    req.conditions.push_back(
                        condition_tensor(depth_map, Modality::depth));
                    req.guidance = ec.guidance;
                    req.ddim_steps = ec.ddim_steps;
                    req.seed = rec.seed;
                    gen = sample(pipe, req);
                }

                const auto s = score_image(gen, rec, cond_edge, cond_depth,
                                           gt_labels, depth_value);
                auto& row = report.per_sample[static_cast<size_t>(i)];
                row = {static_cast<double>(rec.id),
                       rec.aligned ? 1.0 : 0.0,
                       s.edge_rmse,
                       s.depth_rmse,
                       s.mpa,
                       s.recall};

                if (uncond_arm) {
                    SampleRequest req;
                    req.guidance = ec.guidance;
                    req.ddim_steps = ec.ddim_steps;
                    req.seed = rec.seed;
                    const auto gen_u = sample(pipe, req);
                    const auto u = score_image(gen_u, rec, cond_edge,
                                               cond_depth, gt_labels,
                                               depth_value);
                    row.push_back(u.edge_rmse);
                    row.push_back(u.depth_rmse);
                    row.push_back(u.mpa);
                    row.push_back(u.recall);
                }

                if (ec.with_frechet) {
                    NoGradGuard ng;
                    gen_f[static_cast<size_t>(i)] = image_features(features, gen);
                    target_f[static_cast<size_t>(i)] =
                        image_features(features, pnm_to_tensor(rec.target));
                }
            } catch (...) {
                std::lock_guard<std::mutex> lk(err_mu);
                if (!first_error) first_error = std::current_exception();
            }
        }
    });
    if (first_error) std::rethrow_exception(first_error);

    const size_t cols = report.per_sample_header.size();
    std::vector<double> sums(cols, 0.0);
    for (const auto& row : report.per_sample) {
        if (row.size() != cols)
            throw NumericError("eval: incomplete per-sample row");
        for (size_t c = 0; c < cols; ++c) sums[c] += row[c];
    }
    for (size_t c = 2; c < cols; ++c)
        report.metrics[report.per_sample_header[c]] =
            sums[c] / static_cast<double>(n);
    report.metrics["samples"] = static_cast<double>(n);
    if (ec.with_frechet)
        report.metrics["frechet"] =
            frechet_distance(feature_stats(gen_f), feature_stats(target_f));
    for (const auto& [k, val] : report.metrics)
        if (!std::isfinite(val))
            throw NumericError("eval: metric " + k + " is not finite");
    return report;
}

void write_report(const MetricReport& report, const std::string& out_dir,
                  const nlohmann::json& meta) {
    fs::create_directories(out_dir);
    nlohmann::json j;
    j["metrics"] = report.metrics;
    j["meta"] = meta;
    {
        std::ofstream f(fs::path(out_dir) / "report.json");
        if (!f) throw IoError("cannot write " + out_dir + "/report.json");
        f << j.dump(2) << "\n";
    }
    std::ofstream csv(fs::path(out_dir) / "per_sample.csv");
    if (!csv) throw IoError("cannot write " + out_dir + "/per_sample.csv");
    csv.precision(10);
    for (size_t c = 0; c < report.per_sample_header.size(); ++c)
        csv << (c ? "," : "") << report.per_sample_header[c];
    csv << "\n";
    for (const auto& row : report.per_sample) {
        for (size_t c = 0; c < row.size(); ++c) csv << (c ? "," : "") << row[c];
        csv << "\n";
    }
    if (!csv.good()) throw IoError("short write in " + out_dir);
}

}  // namespace anyctl
