#pragma once

#include <optional>
#include <string>

#include "anyctl/adam.hpp"
#include "anyctl/model_config.hpp"
#include "anyctl/param.hpp"
#include "anyctl/tnsr.hpp"

namespace anyctl {

struct CheckpointInfo {
    int64_t phase = 0;
    int64_t step = 0;
    ModelConfig model;
    bool has_optimizer = false;
};

// Layout: dir/params/<name>.tnsr, dir/opt/{m,v}/<name>.tnsr, plus
// dir/manifest.json with names, shapes, frozen flags, and the model
// configuration. The manifest is written last, so a directory without one
// is an aborted save and is never picked up by latest_checkpoint.
void save_checkpoint(const std::string& dir, const ParamStore& store,
                     const ModelConfig& model, int64_t phase, int64_t step,
                     const Adam* opt = nullptr);

CheckpointInfo read_checkpoint_info(const std::string& dir);

// Loads values and frozen flags into an already-built store; every manifest
// entry must match an existing parameter of the same shape and vice versa.
// Optimizer state is restored when present and opt is non-null.
CheckpointInfo load_checkpoint(const std::string& dir, ParamStore& store,
                               Adam* opt = nullptr);

// Weights only, cast to the store's scalar type; used for float64 sampling
// off float32 training checkpoints.
template <class T>
void load_checkpoint_values(const std::string& dir, ParamStoreT<T>& store) {
    for (auto& [name, param] : store) {
        const Tensor t = read_tnsr(dir + "/params/" + name + ".tnsr");
        if (t.shape() != param->value.shape())
            throw IoError("checkpoint value shape mismatch for " + name);
        for (int64_t i = 0; i < t.numel(); ++i)
            param->value[i] = static_cast<T>(t[i]);
    }
}

// Deepest step_* subdirectory of root that holds a manifest.
std::optional<std::string> latest_checkpoint(const std::string& root);

std::string checkpoint_dir_name(int64_t step);

}  // namespace anyctl
