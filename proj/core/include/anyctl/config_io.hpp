#pragma once

#include <string>

#include <json.hpp>

#include "anyctl/datagen.hpp"
#include "anyctl/model_config.hpp"

namespace anyctl {

// Strict JSON views: every getter marks its key, done() rejects leftovers,
// so a typo in a config file fails loudly instead of silently defaulting.
class StrictObject {
  public:
    StrictObject(const nlohmann::json& j, std::string where);

    bool has(const char* key) const;

    template <class T>
    void get(const char* key, T& out) {
        if (!j_.contains(key)) return;
        mark(key);
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(where_ + "." + key + ": " + e.what());
        }
    }

    // Subobject view; marks the key. Missing key yields an empty object.
    StrictObject sub(const char* key);

    void done() const;

    const nlohmann::json& raw() const { return j_; }

  private:
    void mark(const char* key) { seen_.push_back(key); }

    nlohmann::json j_;
    std::string where_;
    std::vector<std::string> seen_;
};

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json data_config_to_json(const DataConfig& cfg);
DataConfig data_config_from_json(const nlohmann::json& j);

// 64-bit FNV-1a over a canonical dump; reports embed it so two reports from
// the same configuration are linkable.
uint64_t config_hash(const nlohmann::json& j);

nlohmann::json load_json_file(const std::string& path);

}  // namespace anyctl
