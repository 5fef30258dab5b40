#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "anyctl/model_config.hpp"
#include "anyctl/modality.hpp"
#include "anyctl/nn.hpp"
#include "anyctl/vocab.hpp"

// Toy text and vision encoders: a character-level transformer producing
// textual tokens, and a patch transformer producing a pyramid of visual
// tokens tapped at several depths.

namespace anyctl {

template <class T>
struct TextTokensT {
    std::vector<int32_t> ids;
    TensorT<T> embeddings;          // [L, d]
    std::vector<uint8_t> pad_mask;  // 1 marks a PAD position
};

using TextTokens = TextTokensT<float>;

template <class T>
struct ConditionImageT {
    Modality modality = Modality::edge;
    TensorT<T> channels;  // [c, H, W], c in {1, 3}, values in [0, 1]
};

using ConditionImage = ConditionImageT<float>;

template <class T>
struct VisualTokenPyramidT {
    std::vector<TensorT<T>> levels;  // each [M, d]; front = shallowest tap
};

using VisualTokenPyramid = VisualTokenPyramidT<float>;

// Additive attention mask over a token sequence with `lead` always-visible
// positions followed by maskable ones; masked keys get a value no soft
// score survives.
template <class T>
TensorT<T> additive_pad_mask(int64_t lead, const std::vector<uint8_t>& pad) {
    auto m =
        TensorT<T>::zeros({lead + static_cast<int64_t>(pad.size())});
    for (size_t i = 0; i < pad.size(); ++i)
        if (pad[i]) m[lead + static_cast<int64_t>(i)] = T(-1e30);
    return m;
}

template <class T>
class TextEncoderT {
  public:
    TextEncoderT() = default;
    TextEncoderT(const ModelConfig& cfg, SeededRng rng) : cfg_(cfg) {
        token_table_ =
            ParameterT<T>("text.tokens", {Vocabulary::kSize, cfg.d_model});
        init_normal(token_table_, rng.split(token_table_.name()), 0.02);
        pos_table_ =
            ParameterT<T>("text.pos", {cfg.text_max_len, cfg.d_model});
        init_normal(pos_table_, rng.split(pos_table_.name()), 0.02);
        for (int64_t b = 0; b < cfg.text_blocks; ++b)
            blocks_.emplace_back("text.block" + std::to_string(b), cfg.d_model,
                                 cfg.heads, cfg.mce_ff_expansion, rng);
    }

    // PAD keys are hidden from attention, so appending padding never
    // changes the representation of real positions.
    TextTokensT<T> encode(const std::vector<int32_t>& ids,
                          const std::vector<uint8_t>& pad_mask) const {
        if (ids.size() != pad_mask.size())
            throw ContractError("encode_text: ids and pad mask disagree");
        const int64_t len = static_cast<int64_t>(ids.size());
        if (len > cfg_.text_max_len)
            throw ContractError("encode_text: length " + std::to_string(len) +
                                " over max " +
                                std::to_string(cfg_.text_max_len));
        auto x = add(embedding(token_table_.value, ids),
                     slice_rows(pos_table_.value, 0, len));
        auto mask = additive_pad_mask<T>(0, pad_mask);
        for (auto& blk : blocks_) x = blk.forward(x, &mask);
        return TextTokensT<T>{ids, x, pad_mask};
    }

    TextTokensT<T> encode(const std::vector<int32_t>& ids) const {
        return encode(ids, std::vector<uint8_t>(ids.size(), 0));
    }

    void collect(ParamStoreT<T>& store) {
        store.add(token_table_);
        store.add(pos_table_);
        for (auto& b : blocks_) b.collect(store);
    }

  private:
    ModelConfig cfg_;
    ParameterT<T> token_table_;
    ParameterT<T> pos_table_;
    std::vector<SelfAttentionBlockT<T>> blocks_;
};

using TextEncoder = TextEncoderT<float>;

template <class T>
class VisionEncoderT {
  public:
    VisionEncoderT() = default;
    VisionEncoderT(const ModelConfig& cfg, SeededRng rng) : cfg_(cfg) {
        const int64_t grid = cfg.canvas / cfg.patch;
        patch_w_ = ParameterT<T>("vision.patch.w",
                                 {cfg.d_model, 3, cfg.patch, cfg.patch});
        init_he(patch_w_, rng.split(patch_w_.name()));
        patch_b_ = ParameterT<T>("vision.patch.b", {cfg.d_model});
        pos_table_ =
            ParameterT<T>("vision.pos", {grid * grid, cfg.d_model});
        init_normal(pos_table_, rng.split(pos_table_.name()), 0.02);
        modality_table_ = ParameterT<T>(
            "vision.modality",
            {static_cast<int64_t>(kAllModalities.size()), cfg.d_model});
        init_normal(modality_table_, rng.split(modality_table_.name()), 0.02);
        for (int64_t b = 0; b < cfg.vision_blocks; ++b)
            blocks_.emplace_back("vision.block" + std::to_string(b),
                                 cfg.d_model, cfg.heads,
                                 cfg.vision_ff_expansion, rng);
    }

    // use_modality_embedding=false is the ablation hook: identical pixels
    // then yield identical pyramids regardless of the declared modality.
    VisualTokenPyramidT<T> encode(const ConditionImageT<T>& cond,
                                  bool use_modality_embedding) const {
        auto& img = cond.channels;
        if (img.rank() != 3 ||
            (img.size(0) != 1 && img.size(0) != 3) ||
            img.size(1) != cfg_.canvas || img.size(2) != cfg_.canvas)
            throw ConfigError("encode_condition: want [1|3," +
                              std::to_string(cfg_.canvas) + "," +
                              std::to_string(cfg_.canvas) + "], got " +
                              shape_str(img.shape()));
        TensorT<T> rgb = img;
        if (img.size(0) == 1)
            rgb = concat_channels(concat_channels(img, img), img);
        const int64_t grid = cfg_.canvas / cfg_.patch;
        const int64_t m = grid * grid;
        auto patches = conv2d(rgb, patch_w_.value, patch_b_.value, cfg_.patch);
        auto x = add(transpose(reshape(patches, {cfg_.d_model, m})),
                     pos_table_.value);
        if (use_modality_embedding) {
            auto row = reshape(
                embedding(modality_table_.value,
                          {static_cast<int32_t>(cond.modality)}),
                {cfg_.d_model});
            x = add_bias_rows(x, row);
        }
        VisualTokenPyramidT<T> pyramid;
        int64_t next_tap = 0;
        for (size_t b = 0; b < blocks_.size(); ++b) {
            x = blocks_[b].forward(x);
            if (next_tap < static_cast<int64_t>(cfg_.level_taps.size()) &&
                cfg_.level_taps[static_cast<size_t>(next_tap)] ==
                    static_cast<int64_t>(b) + 1) {
                pyramid.levels.push_back(x);
                ++next_tap;
            }
        }
        return pyramid;
    }

    VisualTokenPyramidT<T> encode(const ConditionImageT<T>& cond) const {
        return encode(cond, cfg_.modality_embedding);
    }

    void collect(ParamStoreT<T>& store) {
        store.add(patch_w_);
        store.add(patch_b_);
        store.add(pos_table_);
        store.add(modality_table_);
        for (auto& b : blocks_) b.collect(store);
    }

  private:
    ModelConfig cfg_;
    ParameterT<T> patch_w_, patch_b_;
    ParameterT<T> pos_table_;
    ParameterT<T> modality_table_;
    std::vector<SelfAttentionBlockT<T>> blocks_;
};

using VisionEncoder = VisionEncoderT<float>;

}  // namespace anyctl
