#pragma once

#include <memory>
#include <string>
#include <vector>

#include "anyctl/encoders.hpp"
#include "anyctl/mce.hpp"
#include "anyctl/schedule.hpp"
#include "anyctl/unet.hpp"

namespace anyctl {

// Everything a training step or a sampling run needs, built from one seed.
// The store holds raw pointers into the member blocks, so a pipeline stays
// where it was constructed.
template <class T>
class PipelineT {
  public:
    ModelConfig cfg;
    TextEncoderT<T> text;
    VisionEncoderT<T> vision;
    MultiControlEncoderT<T> mce;
    DenoiserT<T> denoiser;
    NoiseSchedule schedule;
    ParamStoreT<T> store;

    explicit PipelineT(const ModelConfig& cfg_, uint64_t seed = 0)
        : cfg(cfg_),
          text(cfg_, SeededRng(seed)),
          vision(cfg_, SeededRng(seed)),
          mce(cfg_, SeededRng(seed)),
          denoiser(cfg_, SeededRng(seed)),
          schedule(make_schedule(cfg_.timesteps, cfg_.beta_start,
                                 cfg_.beta_end)) {
        cfg.validate();
        text.collect(store);
        vision.collect(store);
        mce.collect(store);
        denoiser.collect(store);
    }

    PipelineT(const PipelineT&) = delete;
    PipelineT& operator=(const PipelineT&) = delete;

    TextTokensT<T> encode_text(const std::string& prompt,
                               const std::vector<Modality>& tasks) const {
        return text.encode(Vocabulary::tokenize(prompt, tasks,
                                                cfg.text_max_len));
    }

    std::vector<VisualTokenPyramidT<T>> encode_conditions(
        const std::vector<ConditionImageT<T>>& conds) const {
        std::vector<VisualTokenPyramidT<T>> out;
        out.reserve(conds.size());
        for (auto& c : conds) out.push_back(vision.encode(c));
        return out;
    }

    // Freeze or thaw every parameter whose name starts with prefix;
    // returns how many were touched.
    int64_t set_frozen_prefix(const std::string& prefix, bool frozen) {
        int64_t n = 0;
        for (auto& [name, param] : store)
            if (name.rfind(prefix, 0) == 0) {
                param->set_frozen(frozen);
                ++n;
            }
        return n;
    }
};

using Pipeline = PipelineT<float>;

}  // namespace anyctl
