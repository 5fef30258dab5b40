#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "anyctl/error.hpp"

namespace anyctl {

// Architecture and schedule knobs shared by the encoders, the control
// encoder, and the denoiser. Training-run settings (steps, rates, paths)
// live in the run configuration instead.
struct ModelConfig {
    // Canvas and patching.
    int64_t canvas = 64;
    int64_t patch = 8;

    // Token width shared by text, vision, and query tokens.
    int64_t d_model = 48;
    int64_t heads = 4;

    // Text encoder.
    int64_t text_blocks = 2;
    int64_t text_max_len = 64;

    // Vision encoder; pyramid levels tap these block outputs (1-indexed,
    // shallow to deep).
    int64_t vision_blocks = 6;
    std::vector<int64_t> level_taps = {2, 4, 6};
    int64_t vision_ff_expansion = 2;
    bool modality_embedding = true;

    // Multi-control encoder.
    int64_t mce_self_blocks = 6;
    int64_t mce_ff_expansion = 4;
    int64_t num_query_tokens = 32;
    // How many of the deepest pyramid levels fusion may consume (1..taps).
    int64_t enabled_levels = 3;

    // Denoiser. Widths sized for single-core training runs.
    std::vector<int64_t> unet_channels = {16, 24, 32};
    int64_t temb_dim = 64;
    int64_t out_head_channels = 16;
    int64_t norm_groups = 8;

    // Diffusion schedule and sampling.
    int64_t timesteps = 1000;
    double beta_start = 1e-4;
    double beta_end = 2e-2;
    int64_t ddim_steps = 50;
    double cfg_scale = 7.5;

    int64_t tokens_per_condition() const {
        return (canvas / patch) * (canvas / patch);
    }

    int64_t fusion_blocks() const { return mce_self_blocks / 2; }

    void validate() const {
        if (canvas < 8 || patch < 1 || canvas % patch != 0)
            throw ConfigError("canvas must be a positive multiple of patch");
        if (d_model < 2 || d_model % heads != 0)
            throw ConfigError("d_model must be divisible by heads");
        if (d_model % 2 != 0)
            throw ConfigError("d_model must be even for positional codes");
        if (text_blocks < 1 || text_max_len < 4)
            throw ConfigError("text encoder needs >= 1 block, max_len >= 4");
        if (vision_blocks < 1) throw ConfigError("vision_blocks must be >= 1");
        if (level_taps.empty()) throw ConfigError("level_taps must not be empty");
        for (size_t i = 0; i < level_taps.size(); ++i) {
            if (level_taps[i] < 1 || level_taps[i] > vision_blocks)
                throw ConfigError("level tap outside the encoder depth");
            if (i > 0 && level_taps[i] <= level_taps[i - 1])
                throw ConfigError("level taps must increase shallow to deep");
        }
        if (mce_self_blocks < 2 || mce_self_blocks % 2 != 0)
            throw ConfigError("mce_self_blocks must be a positive even count");
        if (num_query_tokens < 1)
            throw ConfigError("num_query_tokens must be >= 1");
        if (enabled_levels < 1 ||
            enabled_levels > static_cast<int64_t>(level_taps.size()))
            throw ConfigError("enabled_levels must be within 1..level taps");
        if (unet_channels.size() != 3)
            throw ConfigError("unet_channels needs exactly 3 stages");
        for (int64_t c : unet_channels)
            if (c < norm_groups || c % norm_groups != 0)
                throw ConfigError("unet channels must be multiples of " +
                                  std::to_string(norm_groups));
        if (canvas % 8 != 0)
            throw ConfigError("canvas must be divisible by 8 for 3 downsamples");
        if (temb_dim % 2 != 0) throw ConfigError("temb_dim must be even");
        if (out_head_channels < 1 || out_head_channels % norm_groups != 0)
            throw ConfigError("out_head_channels must be a positive multiple "
                              "of norm_groups");
        if (timesteps < 2) throw ConfigError("timesteps must be >= 2");
        if (!(beta_start > 0) || !(beta_end > beta_start) || beta_end >= 1)
            throw ConfigError("betas must satisfy 0 < start < end < 1");
        if (ddim_steps < 1 || ddim_steps > timesteps)
            throw ConfigError("ddim_steps must be within 1..timesteps");
        if (cfg_scale < 0) throw ConfigError("cfg_scale must be >= 0");
    }
};

}  // namespace anyctl
