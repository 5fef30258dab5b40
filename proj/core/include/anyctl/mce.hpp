#pragma once

#include <string>
#include <utility>
#include <vector>

#include "anyctl/encoders.hpp"
#include "anyctl/nn.hpp"

namespace anyctl {

// Head- and query-averaged attention mass one fusion block spent on each
// visual token, split per condition. Rows sum to 1 across the whole set, so
// a single condition's share is its row sum.
template <class T>
struct FusionAttentionT {
    int64_t block = 0;  // fusion block index
    int64_t level = 0;  // pyramid level it consumed
    TensorT<T> mass;    // [n_conditions, tokens_per_condition]
};

using FusionAttention = FusionAttentionT<float>;

// Multi-control encoder: learnable query tokens distill the joint content of
// any number of spatial conditions. Alignment blocks run self-attention over
// [queries ; text tokens]; after every second alignment block a fusion block
// cross-attends the queries over all conditions' visual tokens (plus one
// positional embedding shared across conditions) at one pyramid level. The
// output is the final query tokens: fixed arity for every condition count,
// order-free because conditions only ever appear as one concatenated
// key/value set.
template <class T>
class MultiControlEncoderT {
  public:
    MultiControlEncoderT() = default;
    MultiControlEncoderT(const ModelConfig& cfg, SeededRng rng) : cfg_(cfg) {
        query_tokens_ = ParameterT<T>("mce.queries",
                                      {cfg.num_query_tokens, cfg.d_model});
        init_normal(query_tokens_, rng.split(query_tokens_.name()), 0.02);
        shared_pos_ = ParameterT<T>(
            "mce.shared_pos", {cfg.tokens_per_condition(), cfg.d_model});
        init_normal(shared_pos_, rng.split(shared_pos_.name()), 0.02);
        for (int64_t b = 0; b < cfg.mce_self_blocks; ++b)
            align_blocks_.emplace_back("mce.align" + std::to_string(b),
                                       cfg.d_model, cfg.heads,
                                       cfg.mce_ff_expansion, rng);
        for (int64_t k = 0; k < cfg.fusion_blocks(); ++k)
            fusion_blocks_.emplace_back("mce.fuse" + std::to_string(k),
                                        cfg.d_model, cfg.d_model, cfg.heads,
                                        cfg.mce_ff_expansion, rng);
    }

    // Pyramid level consumed by fusion block k: the deepest enabled level
    // first, then successively shallower ones, reusing the deepest when
    // there are more fusion blocks than enabled levels.
    int64_t level_for(int64_t k) const {
        const int64_t taps = static_cast<int64_t>(cfg_.level_taps.size());
        const int64_t e = cfg_.enabled_levels;
        const int64_t f = cfg_.fusion_blocks();
        const int64_t within = (e - 1) - std::max<int64_t>(0, k - (f - e));
        return (taps - e) + std::max<int64_t>(0, within);
    }

    // One fusion step: queries cross-attend over [V_1+P, ..., V_n+P].
    TensorT<T> fuse(int64_t k, const TensorT<T>& q,
                    const std::vector<VisualTokenPyramidT<T>>& pyramids,
                    int64_t level,
                    FusionAttentionT<T>* capture = nullptr) const {
        if (pyramids.empty())
            throw ContractError("fuse: needs at least one condition");
        std::vector<TensorT<T>> keyed;
        keyed.reserve(pyramids.size());
        for (auto& p : pyramids)
            keyed.push_back(
                add(p.levels.at(static_cast<size_t>(level)), shared_pos_.value));
        TensorT<T> probs;
        auto out = fusion_blocks_.at(static_cast<size_t>(k))
                       .forward(q, concat_rows(keyed), nullptr,
                                capture ? &probs : nullptr);
        if (capture) {
            const int64_t n = static_cast<int64_t>(pyramids.size());
            const int64_t nq = probs.size(0);
            const int64_t m = probs.size(1) / n;
            capture->block = k;
            capture->level = level;
            capture->mass = TensorT<T>::zeros({n, m});
            for (int64_t i = 0; i < nq; ++i)
                for (int64_t j = 0; j < probs.size(1); ++j)
                    capture->mass[j] += probs[i * probs.size(1) + j] /
                                        static_cast<T>(nq);
        }
        return out;
    }

    // One alignment step: self-attention over [q ; t], split back apart.
    std::pair<TensorT<T>, TensorT<T>> align(
        int64_t s, const TensorT<T>& q, const TensorT<T>& t,
        const std::vector<uint8_t>& text_pad) const {
        const int64_t nq = q.size(0), lt = t.size(0);
        auto mask = additive_pad_mask<T>(nq, text_pad);
        auto x = align_blocks_.at(static_cast<size_t>(s))
                     .forward(concat_rows<T>({q, t}), &mask);
        return {slice_rows(x, 0, nq), slice_rows(x, nq, nq + lt)};
    }

    TensorT<T> encode(
        const TextTokensT<T>& text,
        const std::vector<VisualTokenPyramidT<T>>& pyramids,
        std::vector<FusionAttentionT<T>>* attention = nullptr) const {
        if (attention) attention->clear();
        TensorT<T> q = query_tokens_.value;
        TensorT<T> t = text.embeddings;
        int64_t k = 0;
        for (size_t s = 0; s < align_blocks_.size(); ++s) {
            std::tie(q, t) = align(static_cast<int64_t>(s), q, t,
                                   text.pad_mask);
            if (s % 2 == 1) {
                if (!pyramids.empty()) {
                    FusionAttentionT<T> cap;
                    q = fuse(k, q, pyramids, level_for(k),
                             attention ? &cap : nullptr);
                    if (attention) attention->push_back(std::move(cap));
                }
                ++k;
            }
        }
        return q;
    }

    void collect(ParamStoreT<T>& store) {
        store.add(query_tokens_);
        store.add(shared_pos_);
        for (auto& b : align_blocks_) b.collect(store);
        for (auto& b : fusion_blocks_) b.collect(store);
    }

    const ParameterT<T>& query_tokens() const { return query_tokens_; }
    const ParameterT<T>& shared_pos() const { return shared_pos_; }

  private:
    ModelConfig cfg_;
    ParameterT<T> query_tokens_;
    ParameterT<T> shared_pos_;
    std::vector<SelfAttentionBlockT<T>> align_blocks_;
    std::vector<CrossAttentionBlockT<T>> fusion_blocks_;
};

using MultiControlEncoder = MultiControlEncoderT<float>;

}  // namespace anyctl
