#include "anyctl/datagen.hpp"

#include "anyctl/config_io.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace anyctl {

void DataConfig::validate() const {
    if (canvas < 8) throw ConfigError("data: canvas must be >= 8");
    if (aligned_count < 0 || unaligned_count < 0)
        throw ConfigError("data: negative sample count");
    if (min_objects < 1 || max_objects < min_objects)
        throw ConfigError("data: object count range invalid");
    if (unaligned_min_objects < 1)
        throw ConfigError("data: unaligned_min_objects must be >= 1");
    if (max_objects > static_cast<int64_t>(kPalette.size()))
        throw ConfigError("data: more objects than palette colors");
    if (scale_min < 1 || scale_max < scale_min ||
        2 * scale_max >= canvas)
        throw ConfigError("data: scale range does not fit the canvas");
    if (drop_all_rate < 0 || drop_all_rate > 1 || drop_text_rate < 0 ||
        drop_text_rate > 1)
        throw ConfigError("data: drop rates must be within [0,1]");
    if (condition_noise < 0) throw ConfigError("data: negative noise");
    if (rejection_budget < 1) throw ConfigError("data: rejection budget < 1");
}

bool object_covers(const ObjectSpec& o, int64_t x, int64_t y) {
    const int64_t dx = x - o.cx, dy = y - o.cy;
    switch (o.shape) {
        case ShapeKind::circle:
            return dx * dx + dy * dy <= o.scale * o.scale;
        case ShapeKind::square:
            return std::abs(dx) <= o.scale && std::abs(dy) <= o.scale;
        case ShapeKind::triangle:
            // Apex at cy - scale, base at cy + scale, integer-exact sides.
            return dy >= -o.scale && dy <= o.scale &&
                   2 * std::abs(dx) <= dy + o.scale;
    }
    return false;
}

std::string caption_for(const SceneSpec& spec) {
    std::string out;
    for (size_t i = 0; i < spec.objects.size(); ++i) {
        if (i > 0) out += " and ";
        out += "a ";
        out += kPalette[static_cast<size_t>(spec.objects[i].palette)].name;
        out += " ";
        out += kShapeNames[static_cast<size_t>(spec.objects[i].shape)];
    }
    return out;
}

namespace {

std::vector<size_t> painter_order(const SceneSpec& spec) {
    std::vector<size_t> order(spec.objects.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return spec.objects[a].z < spec.objects[b].z;
    });
    return order;
}

}  // namespace

std::vector<uint8_t> visibility_map(const SceneSpec& spec) {
    const int64_t n = spec.canvas;
    std::vector<uint8_t> vis(static_cast<size_t>(n * n), 0);
    for (size_t idx : painter_order(spec)) {
        const auto& o = spec.objects[idx];
        const int64_t y0 = std::max<int64_t>(0, o.cy - o.scale);
        const int64_t y1 = std::min<int64_t>(n - 1, o.cy + o.scale);
        const int64_t x0 = std::max<int64_t>(0, o.cx - o.scale);
        const int64_t x1 = std::min<int64_t>(n - 1, o.cx + o.scale);
        for (int64_t y = y0; y <= y1; ++y)
            for (int64_t x = x0; x <= x1; ++x)
                if (object_covers(o, x, y))
                    vis[static_cast<size_t>(y * n + x)] =
                        static_cast<uint8_t>(idx + 1);
    }
    return vis;
}

Pnm render_scene(const SceneSpec& spec) {
    const int64_t n = spec.canvas;
    Pnm img;
    img.width = n;
    img.height = n;
    img.channels = 3;
    img.maxval = 255;
    img.pixels.assign(static_cast<size_t>(3 * n * n), 0);
    const auto vis = visibility_map(spec);
    for (int64_t y = 0; y < n; ++y)
        for (int64_t x = 0; x < n; ++x) {
            const uint8_t v = vis[static_cast<size_t>(y * n + x)];
            const Rgb c =
                v == 0 ? kBackground
                       : kPalette[static_cast<size_t>(
                                      spec.objects[v - 1].palette)]
                             .color;
            img.at(y, x, 0) = c.r;
            img.at(y, x, 1) = c.g;
            img.at(y, x, 2) = c.b;
        }
    return img;
}

ConditionMaps extract_conditions(const SceneSpec& spec) {
    const int64_t n = spec.canvas;
    const int64_t count = static_cast<int64_t>(spec.objects.size());
    const auto vis = visibility_map(spec);

    // Rank objects by z ascending: nearest gets rank `count`.
    std::vector<int64_t> rank(spec.objects.size());
    const auto order = painter_order(spec);
    for (size_t pos = 0; pos < order.size(); ++pos)
        rank[order[pos]] = static_cast<int64_t>(pos) + 1;

    ConditionMaps maps;
    auto init = [n](Pnm& p, int maxval) {
        p.width = n;
        p.height = n;
        p.channels = 1;
        p.maxval = maxval;
        p.pixels.assign(static_cast<size_t>(n * n), 0);
    };
    init(maps.edge, 1);
    init(maps.depth, kDepthMaxval);
    init(maps.seg, static_cast<int>(count) + 1);

    for (int64_t y = 0; y < n; ++y)
        for (int64_t x = 0; x < n; ++x) {
            const size_t i = static_cast<size_t>(y * n + x);
            const uint8_t v = vis[i];
            maps.seg.pixels[i] = v;
            if (v != 0)
                maps.depth.pixels[i] = static_cast<uint8_t>(
                    kDepthMaxval * rank[v - 1] / count);
            const bool boundary =
                (x > 0 && vis[i - 1] != v) || (x + 1 < n && vis[i + 1] != v) ||
                (y > 0 && vis[i - static_cast<size_t>(n)] != v) ||
                (y + 1 < n && vis[i + static_cast<size_t>(n)] != v);
            maps.edge.pixels[i] = boundary ? 1 : 0;
        }
    return maps;
}

const Pnm& condition_map(const ConditionMaps& maps, Modality m) {
    switch (m) {
        case Modality::edge: return maps.edge;
        case Modality::depth: return maps.depth;
        case Modality::seg: return maps.seg;
    }
    throw ContractError("condition_map: unknown modality");
}

Pnm& condition_map(ConditionMaps& maps, Modality m) {
    return const_cast<Pnm&>(
        condition_map(static_cast<const ConditionMaps&>(maps), m));
}

UnalignedSample make_unaligned(const SceneSpec& spec, size_t chosen) {
    if (chosen >= spec.objects.size())
        throw ContractError("make_unaligned: object index out of range");
    for (const auto& o : spec.objects)
        if (o.z > spec.objects[chosen].z)
            throw ContractError(
                "make_unaligned: chosen object must be the nearest one");

    const auto vis = visibility_map(spec);
    const int64_t covered = std::count(
        vis.begin(), vis.end(), static_cast<uint8_t>(chosen + 1));
    const double ratio = static_cast<double>(covered) /
                         static_cast<double>(spec.canvas * spec.canvas);
    if (ratio < 0.1 || ratio > 0.4)
        throw GenerationError("unaligned sample rejected: area ratio " +
                              std::to_string(ratio) + " outside [0.1, 0.4]");

    UnalignedSample s;
    s.full = spec;
    s.chosen = chosen;
    s.fg_area_ratio = ratio;
    s.fg.canvas = spec.canvas;
    s.fg.objects = {spec.objects[chosen]};
    s.bg.canvas = spec.canvas;
    for (size_t i = 0; i < spec.objects.size(); ++i)
        if (i != chosen) s.bg.objects.push_back(spec.objects[i]);
    return s;
}

SceneSpec random_scene(const DataConfig& cfg, int64_t min_objects,
                       int64_t max_objects, SeededRng rng) {
    SceneSpec spec;
    spec.canvas = cfg.canvas;
    const int64_t n =
        min_objects +
        static_cast<int64_t>(rng.next_below(
            static_cast<uint64_t>(max_objects - min_objects + 1)));

    std::array<int, kPalette.size()> colors{};
    std::iota(colors.begin(), colors.end(), 0);
    for (size_t i = colors.size(); i > 1; --i)
        std::swap(colors[i - 1], colors[rng.next_below(i)]);

    std::vector<int64_t> zs(static_cast<size_t>(n));
    std::iota(zs.begin(), zs.end(), int64_t{0});
    for (size_t i = zs.size(); i > 1; --i)
        std::swap(zs[i - 1], zs[rng.next_below(i)]);

    for (int64_t j = 0; j < n; ++j) {
        ObjectSpec o;
        o.shape = static_cast<ShapeKind>(rng.next_below(3));
        o.palette = colors[static_cast<size_t>(j)];
        o.scale = cfg.scale_min +
                  static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(
                      cfg.scale_max - cfg.scale_min + 1)));
        const uint64_t span =
            static_cast<uint64_t>(cfg.canvas - 2 * o.scale);
        o.cx = o.scale + static_cast<int64_t>(rng.next_below(span));
        o.cy = o.scale + static_cast<int64_t>(rng.next_below(span));
        o.z = zs[static_cast<size_t>(j)];
        spec.objects.push_back(o);
    }
    return spec;
}

SampleRecord make_aligned_record(const DataConfig& cfg, int64_t index) {
    auto rng = SeededRng(cfg.seed).split("aligned").split(
        static_cast<uint64_t>(index));
    SampleRecord rec;
    rec.id = index;
    rec.aligned = true;
    rec.seed = rng.split("id").next_u64();
    rec.scene = random_scene(cfg, cfg.min_objects, cfg.max_objects, rng);
    rec.caption = caption_for(rec.scene);
    rec.target = render_scene(rec.scene);
    rec.conditions = extract_conditions(rec.scene);
    return rec;
}

SampleRecord make_unaligned_record(const DataConfig& cfg, int64_t index,
                                   std::string_view stream) {
    auto base = SeededRng(cfg.seed).split(stream).split(
        static_cast<uint64_t>(index));
    for (int64_t attempt = 0; attempt < cfg.rejection_budget; ++attempt) {
        auto rng = base.split(static_cast<uint64_t>(attempt));
        auto scene = random_scene(cfg, cfg.unaligned_min_objects,
                                  cfg.max_objects, rng);
        size_t chosen = 0;
        for (size_t i = 1; i < scene.objects.size(); ++i)
            if (scene.objects[i].z > scene.objects[chosen].z) chosen = i;
        try {
            auto s = make_unaligned(scene, chosen);
            SampleRecord rec;
            rec.id = index;
            rec.aligned = false;
            rec.seed = base.split("id").next_u64();
            rec.scene = s.full;
            rec.caption = caption_for(s.full);
            rec.target = render_scene(s.full);
            rec.conditions = extract_conditions(s.fg);
            rec.bg_conditions = extract_conditions(s.bg);
            rec.bg_image = render_scene(s.bg);
            rec.fg_area_ratio = s.fg_area_ratio;
            return rec;
        } catch (const GenerationError&) {
            continue;
        }
    }
    throw GenerationError("unaligned sample " + std::to_string(index) +
                          ": rejection budget exhausted");
}

namespace {

json scene_to_json(const SceneSpec& spec) {
    json objs = json::array();
    for (const auto& o : spec.objects)
        objs.push_back({{"shape", kShapeNames[static_cast<size_t>(o.shape)]},
                        {"color", kPalette[static_cast<size_t>(o.palette)].name},
                        {"cx", o.cx},
                        {"cy", o.cy},
                        {"scale", o.scale},
                        {"z", o.z}});
    return json{{"canvas", spec.canvas}, {"objects", objs}};
}

SceneSpec scene_from_json(const json& j) {
    SceneSpec spec;
    spec.canvas = j.at("canvas").get<int64_t>();
    for (const auto& jo : j.at("objects")) {
        ObjectSpec o;
        const std::string shape = jo.at("shape").get<std::string>();
        const std::string color = jo.at("color").get<std::string>();
        bool found = false;
        for (size_t s = 0; s < kShapeNames.size(); ++s)
            if (shape == kShapeNames[s]) {
                o.shape = static_cast<ShapeKind>(s);
                found = true;
            }
        if (!found) throw IoError("manifest: unknown shape " + shape);
        found = false;
        for (size_t p = 0; p < kPalette.size(); ++p)
            if (color == kPalette[p].name) {
                o.palette = static_cast<int>(p);
                found = true;
            }
        if (!found) throw IoError("manifest: unknown color " + color);
        o.cx = jo.at("cx").get<int64_t>();
        o.cy = jo.at("cy").get<int64_t>();
        o.scale = jo.at("scale").get<int64_t>();
        o.z = jo.at("z").get<int64_t>();
        spec.objects.push_back(o);
    }
    return spec;
}

std::string zero_pad(int64_t v, int width) {
    std::string s = std::to_string(v);
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

json write_record_files(const SampleRecord& rec, const fs::path& root,
                        const std::string& subdir) {
    const std::string stem = subdir + "/" + zero_pad(rec.id, 5);
    json line{{"kind", rec.aligned ? "aligned" : "unaligned"},
              {"id", rec.id},
              {"seed", rec.seed},
              {"caption", rec.caption},
              {"scene", scene_to_json(rec.scene)}};

    auto emit = [&](const std::string& rel, const Pnm& img) {
        write_pnm((root / rel).string(), img);
        return rel;
    };
    line["target"] = emit(stem + ".target.ppm", rec.target);
    const char* prefix = rec.aligned ? "" : "fg_";
    json conds;
    for (Modality m : kAllModalities)
        conds[modality_name(m)] =
            emit(stem + "." + prefix + modality_name(m) + ".pgm",
                 condition_map(rec.conditions, m));
    line["conditions"] = conds;
    if (!rec.aligned) {
        json bg;
        for (Modality m : kAllModalities)
            bg[modality_name(m)] =
                emit(stem + ".bg_" + std::string(modality_name(m)) + ".pgm",
                     condition_map(rec.bg_conditions, m));
        line["bg_conditions"] = bg;
        line["bg_image"] = emit(stem + ".bg.ppm", rec.bg_image);
        line["fg_area_ratio"] = rec.fg_area_ratio;
    }
    return line;
}

}  // namespace

std::string generate_dataset(const DataConfig& cfg, const std::string& dir,
                             bool force) {
    cfg.validate();
    const fs::path root(dir);
    const fs::path manifest = root / "manifest.jsonl";
    if (fs::exists(manifest) && !force)
        throw IoError("dataset exists at " + manifest.string() +
                      " (use force to regenerate)");
    fs::create_directories(root / "aligned");
    fs::create_directories(root / "unaligned");

    std::ofstream cfg_out(root / "config.json");
    cfg_out << data_config_to_json(cfg).dump(2) << "\n";

    std::ofstream out(manifest);
    if (!out) throw IoError("cannot write " + manifest.string());
    for (int64_t i = 0; i < cfg.aligned_count; ++i)
        out << write_record_files(make_aligned_record(cfg, i), root,
                                  "aligned")
                   .dump()
            << "\n";
    for (int64_t i = 0; i < cfg.unaligned_count; ++i)
        out << write_record_files(make_unaligned_record(cfg, i), root,
                                  "unaligned")
                   .dump()
            << "\n";
    return manifest.string();
}

std::string generate_benchmark(const DataConfig& cfg, int64_t count,
                               const std::string& dir, bool force) {
    cfg.validate();
    if (count < 1) throw ConfigError("benchmark: count must be >= 1");
    const fs::path root(dir);
    const fs::path manifest = root / "manifest.jsonl";
    if (fs::exists(manifest) && !force)
        throw IoError("benchmark exists at " + manifest.string() +
                      " (use force to regenerate)");
    fs::create_directories(root / "unaligned");
    std::ofstream out(manifest);
    if (!out) throw IoError("cannot write " + manifest.string());
    for (int64_t i = 0; i < count; ++i)
        out << write_record_files(
                   make_unaligned_record(cfg, i, "benchmark"), root,
                   "unaligned")
                   .dump()
            << "\n";
    return manifest.string();
}

std::vector<SampleRecord> load_manifest(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot read " + manifest_path);
    const fs::path root = fs::path(manifest_path).parent_path();
    std::vector<SampleRecord> records;
    std::string line;
    int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw IoError(manifest_path + ":" + std::to_string(line_no) +
                          ": " + e.what());
        }
        SampleRecord rec;
        rec.id = j.at("id").get<int64_t>();
        rec.aligned = j.at("kind").get<std::string>() == "aligned";
        rec.seed = j.at("seed").get<uint64_t>();
        rec.caption = j.at("caption").get<std::string>();
        rec.scene = scene_from_json(j.at("scene"));
        rec.target = read_pnm((root / j.at("target").get<std::string>()).string());
        for (Modality m : kAllModalities) {
            const auto path =
                j.at("conditions").at(modality_name(m)).get<std::string>();
            condition_map(rec.conditions, m) =
                read_pnm((root / path).string());
        }
        if (!rec.aligned) {
            for (Modality m : kAllModalities) {
                const auto path = j.at("bg_conditions")
                                      .at(modality_name(m))
                                      .get<std::string>();
                condition_map(rec.bg_conditions, m) =
                    read_pnm((root / path).string());
            }
            rec.bg_image =
                read_pnm((root / j.at("bg_image").get<std::string>()).string());
            rec.fg_area_ratio = j.at("fg_area_ratio").get<double>();
        }
        records.push_back(std::move(rec));
    }
    return records;
}

TensorT<float> pnm_to_tensor(const Pnm& img) {
    auto out = TensorT<float>::zeros({img.channels, img.height, img.width});
    const float inv = 1.0f / static_cast<float>(img.maxval);
    for (int64_t c = 0; c < img.channels; ++c)
        for (int64_t y = 0; y < img.height; ++y)
            for (int64_t x = 0; x < img.width; ++x)
                out[(c * img.height + y) * img.width + x] =
                    static_cast<float>(img.at(y, x, c)) * inv;
    return out;
}

ConditionImageT<float> condition_tensor(const Pnm& map, Modality m,
                                        double noise_std, SeededRng* rng) {
    if (map.channels != 1)
        throw ContractError("condition_tensor: maps are single-channel");
    ConditionImageT<float> cond;
    cond.modality = m;
    cond.channels = pnm_to_tensor(map);
    if (noise_std > 0) {
        if (!rng) throw ContractError("condition_tensor: noise needs an rng");
        for (int64_t i = 0; i < cond.channels.numel(); ++i) {
            const double v =
                cond.channels[i] + noise_std * rng->next_gaussian();
            cond.channels[i] =
                static_cast<float>(std::min(1.0, std::max(0.0, v)));
        }
    }
    return cond;
}

DrawnConditions sample_training_conditions(const SampleRecord& rec,
                                           SeededRng rng,
                                           double drop_all_rate,
                                           double drop_text_rate,
                                           double condition_noise) {
    DrawnConditions out;
    auto noise_rng = rng.split("noise");
    if (rec.aligned) {
        const uint64_t first = rng.next_below(3);
        const uint64_t second = (first + 1 + rng.next_below(2)) % 3;
        for (uint64_t pick : {first, second}) {
            const Modality m = static_cast<Modality>(pick);
            out.conditions.push_back(
                condition_tensor(condition_map(rec.conditions, m), m,
                                 condition_noise, &noise_rng));
            out.tasks.push_back(m);
        }
    } else {
        const Modality fg = static_cast<Modality>(rng.next_below(3));
        const Modality bg = static_cast<Modality>(rng.next_below(3));
        out.conditions.push_back(
            condition_tensor(condition_map(rec.conditions, fg), fg,
                             condition_noise, &noise_rng));
        out.conditions.push_back(
            condition_tensor(condition_map(rec.bg_conditions, bg), bg,
                             condition_noise, &noise_rng));
        out.tasks = {fg, bg};
    }
    if (rng.next_bernoulli(drop_all_rate)) {
        out.conditions.clear();
        out.tasks.clear();
    }
    out.text = rng.next_bernoulli(drop_text_rate) ? "" : rec.caption;
    return out;
}

}  // namespace anyctl
