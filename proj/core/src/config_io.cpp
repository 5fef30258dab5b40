#include "anyctl/config_io.hpp"

#include <algorithm>
#include <fstream>

using nlohmann::json;

namespace anyctl {

StrictObject::StrictObject(const json& j, std::string where)
    : j_(j.is_null() ? json::object() : j), where_(std::move(where)) {
    if (!j_.is_object())
        throw ConfigError(where_ + ": expected a JSON object");
}

bool StrictObject::has(const char* key) const { return j_.contains(key); }

StrictObject StrictObject::sub(const char* key) {
    mark(key);
    if (!j_.contains(key))
        return StrictObject(json::object(), where_ + "." + key);
    return StrictObject(j_.at(key), where_ + "." + key);
}

void StrictObject::done() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
        if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end())
            throw ConfigError(where_ + ": unknown key \"" + it.key() + "\"");
}

json model_config_to_json(const ModelConfig& c) {
    return json{{"canvas", c.canvas},
                {"patch", c.patch},
                {"d_model", c.d_model},
                {"heads", c.heads},
                {"text_blocks", c.text_blocks},
                {"text_max_len", c.text_max_len},
                {"vision_blocks", c.vision_blocks},
                {"level_taps", c.level_taps},
                {"vision_ff_expansion", c.vision_ff_expansion},
                {"modality_embedding", c.modality_embedding},
                {"mce_self_blocks", c.mce_self_blocks},
                {"mce_ff_expansion", c.mce_ff_expansion},
                {"num_query_tokens", c.num_query_tokens},
                {"enabled_levels", c.enabled_levels},
                {"unet_channels", c.unet_channels},
                {"temb_dim", c.temb_dim},
                {"out_head_channels", c.out_head_channels},
                {"norm_groups", c.norm_groups},
                {"timesteps", c.timesteps},
                {"beta_start", c.beta_start},
                {"beta_end", c.beta_end},
                {"ddim_steps", c.ddim_steps},
                {"cfg_scale", c.cfg_scale}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    StrictObject o(j, "model");
    o.get("canvas", c.canvas);
    o.get("patch", c.patch);
    o.get("d_model", c.d_model);
    o.get("heads", c.heads);
    o.get("text_blocks", c.text_blocks);
    o.get("text_max_len", c.text_max_len);
    o.get("vision_blocks", c.vision_blocks);
    o.get("level_taps", c.level_taps);
    o.get("vision_ff_expansion", c.vision_ff_expansion);
    o.get("modality_embedding", c.modality_embedding);
    o.get("mce_self_blocks", c.mce_self_blocks);
    o.get("mce_ff_expansion", c.mce_ff_expansion);
    o.get("num_query_tokens", c.num_query_tokens);
    o.get("enabled_levels", c.enabled_levels);
    o.get("unet_channels", c.unet_channels);
    o.get("temb_dim", c.temb_dim);
    o.get("out_head_channels", c.out_head_channels);
    o.get("norm_groups", c.norm_groups);
    o.get("timesteps", c.timesteps);
    o.get("beta_start", c.beta_start);
    o.get("beta_end", c.beta_end);
    o.get("ddim_steps", c.ddim_steps);
    o.get("cfg_scale", c.cfg_scale);
    o.done();
    c.validate();
    return c;
}

json data_config_to_json(const DataConfig& c) {
    return json{{"canvas", c.canvas},
                {"aligned_count", c.aligned_count},
                {"unaligned_count", c.unaligned_count},
                {"min_objects", c.min_objects},
                {"max_objects", c.max_objects},
                {"unaligned_min_objects", c.unaligned_min_objects},
                {"scale_min", c.scale_min},
                {"scale_max", c.scale_max},
                {"seed", c.seed},
                {"drop_all_rate", c.drop_all_rate},
                {"drop_text_rate", c.drop_text_rate},
                {"condition_noise", c.condition_noise},
                {"rejection_budget", c.rejection_budget}};
}

DataConfig data_config_from_json(const json& j) {
    DataConfig c;
    StrictObject o(j, "data");
    o.get("canvas", c.canvas);
    o.get("aligned_count", c.aligned_count);
    o.get("unaligned_count", c.unaligned_count);
    o.get("min_objects", c.min_objects);
    o.get("max_objects", c.max_objects);
    o.get("unaligned_min_objects", c.unaligned_min_objects);
    o.get("scale_min", c.scale_min);
    o.get("scale_max", c.scale_max);
    o.get("seed", c.seed);
    o.get("drop_all_rate", c.drop_all_rate);
    o.get("drop_text_rate", c.drop_text_rate);
    o.get("condition_noise", c.condition_noise);
    o.get("rejection_budget", c.rejection_budget);
    o.done();
    c.validate();
    return c;
}

uint64_t config_hash(const json& j) {
    const std::string s = j.dump();
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

}  // namespace anyctl
