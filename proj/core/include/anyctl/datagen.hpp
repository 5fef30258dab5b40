#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "anyctl/encoders.hpp"
#include "anyctl/netpbm.hpp"
#include "anyctl/rng.hpp"

namespace anyctl {

struct Rgb {
    uint8_t r, g, b;
};

struct PaletteEntry {
    const char* name;
    Rgb color;
};

// Object colors are sampled without replacement per scene so that
// nearest-color classification recovers exact labels at evaluation time.
inline constexpr std::array<PaletteEntry, 8> kPalette = {{
    {"red", {220, 40, 40}},
    {"green", {40, 180, 70}},
    {"blue", {50, 90, 220}},
    {"yellow", {235, 200, 40}},
    {"magenta", {200, 60, 200}},
    {"cyan", {60, 200, 210}},
    {"orange", {240, 140, 40}},
    {"white", {240, 240, 240}},
}};
inline constexpr Rgb kBackground = {30, 30, 34};

// Depth maps quantize rank/n onto this maxval; 60 is divisible by every
// object count we emit, so the byte file holds rank/n exactly.
inline constexpr int kDepthMaxval = 60;

enum class ShapeKind { circle = 0, square = 1, triangle = 2 };
inline constexpr std::array<const char*, 3> kShapeNames = {"circle", "square",
                                                           "triangle"};

struct ObjectSpec {
    ShapeKind shape = ShapeKind::circle;
    int palette = 0;       // index into kPalette
    int64_t cx = 0, cy = 0;
    int64_t scale = 1;     // radius / half-side, pixels
    int64_t z = 0;         // larger = nearer
};

struct SceneSpec {
    int64_t canvas = 64;
    std::vector<ObjectSpec> objects;
};

// Integer-exact membership test, no anti-aliasing anywhere downstream.
bool object_covers(const ObjectSpec& o, int64_t x, int64_t y);

std::string caption_for(const SceneSpec& spec);

// Per-pixel index of the visible object (painter's order by z), 0 = none.
std::vector<uint8_t> visibility_map(const SceneSpec& spec);

Pnm render_scene(const SceneSpec& spec);

struct ConditionMaps {
    Pnm edge;   // maxval 1, values {0,1}
    Pnm depth;  // maxval kDepthMaxval, value = 60 * rank / n
    Pnm seg;    // maxval = object count + 1, value = visible object index + 1
};

ConditionMaps extract_conditions(const SceneSpec& spec);

const Pnm& condition_map(const ConditionMaps& maps, Modality m);
Pnm& condition_map(ConditionMaps& maps, Modality m);

struct UnalignedSample {
    SceneSpec full;          // the composite target scene
    SceneSpec fg;            // the chosen object alone
    SceneSpec bg;            // everything else
    size_t chosen = 0;       // index into full.objects
    double fg_area_ratio = 0;
};

// The chosen object must be the nearest one so compositing its render over
// the background render reproduces the target exactly. Throws
// GenerationError when the visible-area ratio leaves [0.1, 0.4].
UnalignedSample make_unaligned(const SceneSpec& spec, size_t chosen);

// One dataset record, mirroring a manifest line. Condition pixel data is
// kept in Pnm form; tensors are cut on demand.
struct SampleRecord {
    int64_t id = 0;
    bool aligned = true;
    std::string caption;
    Pnm target;
    ConditionMaps conditions;      // aligned: scene maps; unaligned: fg maps
    ConditionMaps bg_conditions;   // unaligned only
    Pnm bg_image;                  // unaligned only
    double fg_area_ratio = 0;
    SceneSpec scene;
    uint64_t seed = 0;
};

struct DataConfig {
    int64_t canvas = 64;
    int64_t aligned_count = 2000;
    int64_t unaligned_count = 400;
    int64_t min_objects = 1;
    int64_t max_objects = 3;
    int64_t unaligned_min_objects = 2;
    int64_t scale_min = 8;
    int64_t scale_max = 20;
    uint64_t seed = 1;
    double drop_all_rate = 0.05;
    double drop_text_rate = 0.05;
    double condition_noise = 0.0;  // additive noise applied at load time
    int64_t rejection_budget = 200;

    void validate() const;
};

SceneSpec random_scene(const DataConfig& cfg, int64_t min_objects,
                       int64_t max_objects, SeededRng rng);

// Deterministic per (cfg.seed, index); retries until the area filter passes.
SampleRecord make_aligned_record(const DataConfig& cfg, int64_t index);
SampleRecord make_unaligned_record(const DataConfig& cfg, int64_t index,
                                   std::string_view stream = "unaligned");

// Writes PPM/PGM files plus manifest.jsonl and config.json under dir.
// Returns the manifest path. Refuses to touch an existing manifest unless
// force is set.
std::string generate_dataset(const DataConfig& cfg, const std::string& dir,
                             bool force = false);

// 200-sample unaligned benchmark (separate stream from training data).
std::string generate_benchmark(const DataConfig& cfg, int64_t count,
                               const std::string& dir, bool force = false);

std::vector<SampleRecord> load_manifest(const std::string& manifest_path);

// Map pixels to [0,1] floats; target images to [3,H,W].
TensorT<float> pnm_to_tensor(const Pnm& img);
ConditionImageT<float> condition_tensor(const Pnm& map, Modality m,
                                        double noise_std = 0.0,
                                        SeededRng* rng = nullptr);

struct DrawnConditions {
    std::vector<ConditionImageT<float>> conditions;
    std::vector<Modality> tasks;
    std::string text;
};

// Training-time condition selection: aligned records contribute two
// distinct modalities, unaligned ones a foreground and a background map;
// all conditions drop together w.p. drop_all, the caption w.p. drop_text.
DrawnConditions sample_training_conditions(const SampleRecord& rec,
                                           SeededRng rng,
                                           double drop_all_rate = 0.05,
                                           double drop_text_rate = 0.05,
                                           double condition_noise = 0.0);

}  // namespace anyctl
