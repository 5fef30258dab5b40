#pragma once

#include <string>
#include <vector>

#include "anyctl/datagen.hpp"
#include "anyctl/pipeline.hpp"

namespace anyctl {

template <class T>
struct SampleRequestT {
    std::string prompt;
    std::vector<ConditionImageT<T>> conditions;
    double guidance = 7.5;
    int64_t ddim_steps = 50;
    uint64_t seed = 0;
};

using SampleRequest = SampleRequestT<float>;

// Deterministic DDIM sampling with classifier-free guidance. Conditions are
// encoded once; the unconditional arm drops both text and conditions, and a
// request that is already unconditional skips the second denoiser pass since
// cfg_combine(e, e, s) == e.
template <class T>
TensorT<T> sample(const PipelineT<T>& pipe, const SampleRequestT<T>& req) {
    if (req.guidance < 0) throw ConfigError("sample: guidance must be >= 0");
    NoGradGuard ng;
    const auto& cfg = pipe.cfg;

    std::vector<Modality> tasks;
    tasks.reserve(req.conditions.size());
    for (const auto& c : req.conditions) tasks.push_back(c.modality);

    const auto cond_text = pipe.encode_text(req.prompt, tasks);
    const auto cond_mask = additive_pad_mask<T>(0, cond_text.pad_mask);
    const auto pyramids = pipe.encode_conditions(req.conditions);
    const auto mc_cond = pipe.mce.encode(cond_text, pyramids);

    const bool unconditional = req.prompt.empty() && req.conditions.empty();
    TensorT<T> mc_uncond, uncond_mask;
    TextTokensT<T> uncond_text;
    if (!unconditional) {
        uncond_text = pipe.encode_text("", {});
        uncond_mask = additive_pad_mask<T>(0, uncond_text.pad_mask);
        mc_uncond = pipe.mce.encode(uncond_text, {});
    }

    auto x = TensorT<T>::zeros({3, cfg.canvas, cfg.canvas});
    {
        auto rng = SeededRng(req.seed).split("noise");
        for (int64_t i = 0; i < x.numel(); ++i)
            x[i] = static_cast<T>(rng.next_gaussian());
    }

    const auto taus = ddim_taus(cfg.timesteps, req.ddim_steps);
    for (size_t i = taus.size(); i > 0; --i) {
        const int64_t t = taus[i - 1];
        const int64_t t_prev = i >= 2 ? taus[i - 2] : 0;
        auto eps_c = pipe.denoiser.predict_controlled(
            x, t, cond_text.embeddings, &cond_mask, mc_cond);
        if (!unconditional) {
            auto eps_u = pipe.denoiser.predict_controlled(
                x, t, uncond_text.embeddings, &uncond_mask, mc_uncond);
            eps_c = cfg_combine(eps_c, eps_u, static_cast<T>(req.guidance));
        }
        x = ddim_step(x, eps_c, t, t_prev, pipe.schedule);
    }

    for (int64_t i = 0; i < x.numel(); ++i)
        x[i] = std::min(T(1), std::max(T(0), x[i]));
    return x;
}

// [3,H,W] floats in [0,1] to an 8-bit PPM, rounding to nearest.
Pnm tensor_to_pnm(const TensorT<float>& img);

}  // namespace anyctl
