#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "anyctl/ops.hpp"
#include "anyctl/param.hpp"

// Transformer building blocks over token matrices [n, d]. All blocks are
// pre-norm residual; attention masks are additive row vectors over keys
// (0 = keep, large negative = drop).

namespace anyctl {

template <class T>
struct LinearT {
    ParameterT<T> w;  // [in, out]
    ParameterT<T> b;  // [out]

    LinearT() = default;
    LinearT(const std::string& prefix, int64_t in, int64_t out, SeededRng rng,
            double stddev = 0.02)
        : w(prefix + ".w", {in, out}), b(prefix + ".b", {out}) {
        init_normal(w, rng.split(w.name()), stddev);
    }

    TensorT<T> forward(const TensorT<T>& x) const {
        return add_bias_rows(matmul(x, w.value), b.value);
    }

    void collect(ParamStoreT<T>& store) {
        store.add(w);
        store.add(b);
    }
};

template <class T>
struct LayerNormBlockT {
    ParameterT<T> gain;  // [d]
    ParameterT<T> bias;  // [d]

    LayerNormBlockT() = default;
    LayerNormBlockT(const std::string& prefix, int64_t d)
        : gain(prefix + ".gain", {d}), bias(prefix + ".bias", {d}) {
        for (auto& v : gain.value.data()) v = T(1);
    }

    TensorT<T> forward(const TensorT<T>& x) const {
        return layer_norm(x, gain.value, bias.value);
    }

    void collect(ParamStoreT<T>& store) {
        store.add(gain);
        store.add(bias);
    }
};

template <class T>
struct MultiHeadAttentionT {
    int64_t dim = 0, kv_dim = 0, heads = 0;
    LinearT<T> wq, wk, wv, wo;

    MultiHeadAttentionT() = default;
    MultiHeadAttentionT(const std::string& prefix, int64_t dim_, int64_t kv_dim_,
                        int64_t heads_, SeededRng rng)
        : dim(dim_),
          kv_dim(kv_dim_),
          heads(heads_),
          wq(prefix + ".wq", dim_, dim_, rng),
          wk(prefix + ".wk", kv_dim_, dim_, rng),
          wv(prefix + ".wv", kv_dim_, dim_, rng),
          wo(prefix + ".wo", dim_, dim_, rng) {
        if (dim_ % heads_ != 0)
            throw ConfigError("attention: dim " + std::to_string(dim_) +
                              " not divisible by " + std::to_string(heads_) +
                              " heads");
    }

    // q_in [nq, dim], kv_in [nk, kv_dim], mask optional [nk] additive.
    // mean_probs, when given, receives the head-averaged attention weights
    // [nq, nk] as plain values outside the autodiff graph.
    TensorT<T> forward(const TensorT<T>& q_in, const TensorT<T>& kv_in,
                       const TensorT<T>* mask = nullptr,
                       TensorT<T>* mean_probs = nullptr) const {
        if (q_in.size(1) != dim || kv_in.size(1) != kv_dim)
            throw ShapeError("attention: got q " + shape_str(q_in.shape()) +
                             ", kv " + shape_str(kv_in.shape()));
        auto q = wq.forward(q_in);
        auto k = wk.forward(kv_in);
        auto v = wv.forward(kv_in);
        const int64_t dh = dim / heads;
        const T inv_sqrt_dh = static_cast<T>(1.0 / std::sqrt(double(dh)));
        if (mean_probs)
            *mean_probs = TensorT<T>::zeros({q_in.size(0), kv_in.size(0)});
        std::vector<TensorT<T>> ctx;
        ctx.reserve(static_cast<size_t>(heads));
        for (int64_t h = 0; h < heads; ++h) {
            auto qh = slice_cols(q, h * dh, (h + 1) * dh);
            auto kh = slice_cols(k, h * dh, (h + 1) * dh);
            auto vh = slice_cols(v, h * dh, (h + 1) * dh);
            auto scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
            if (mask) scores = add_bias_rows(scores, *mask);
            auto probs = softmax_rows(scores);
            if (mean_probs) {
                const T inv_heads = static_cast<T>(1.0 / double(heads));
                for (int64_t i = 0; i < probs.numel(); ++i)
                    (*mean_probs)[i] += probs[i] * inv_heads;
            }
            ctx.push_back(attention_context(probs, vh));
        }
        return wo.forward(concat_cols(ctx));
    }

    void collect(ParamStoreT<T>& store) {
        wq.collect(store);
        wk.collect(store);
        wv.collect(store);
        wo.collect(store);
    }
};

template <class T>
struct FeedForwardT {
    LinearT<T> fc1, fc2;

    FeedForwardT() = default;
    FeedForwardT(const std::string& prefix, int64_t d, int64_t expansion,
                 SeededRng rng)
        : fc1(prefix + ".fc1", d, d * expansion, rng),
          fc2(prefix + ".fc2", d * expansion, d, rng) {}

    TensorT<T> forward(const TensorT<T>& x) const {
        return fc2.forward(silu(fc1.forward(x)));
    }

    void collect(ParamStoreT<T>& store) {
        fc1.collect(store);
        fc2.collect(store);
    }
};

// x = x + attn(ln1(x)); x = x + ff(ln2(x)). The mask hides PAD keys.
template <class T>
struct SelfAttentionBlockT {
    LayerNormBlockT<T> ln1, ln2;
    MultiHeadAttentionT<T> attn;
    FeedForwardT<T> ff;

    SelfAttentionBlockT() = default;
    SelfAttentionBlockT(const std::string& prefix, int64_t d, int64_t heads,
                        int64_t ff_expansion, SeededRng rng)
        : ln1(prefix + ".ln1", d),
          ln2(prefix + ".ln2", d),
          attn(prefix + ".attn", d, d, heads, rng),
          ff(prefix + ".ff", d, ff_expansion, rng) {}

    TensorT<T> forward(const TensorT<T>& x,
                       const TensorT<T>* mask = nullptr) const {
        auto h = ln1.forward(x);
        auto y = add(x, attn.forward(h, h, mask));
        return add(y, ff.forward(ln2.forward(y)));
    }

    void collect(ParamStoreT<T>& store) {
        ln1.collect(store);
        ln2.collect(store);
        attn.collect(store);
        ff.collect(store);
    }
};

// q = q + attn(ln_q(q), ln_kv(kv)); q = q + ff(ln2(q)).
template <class T>
struct CrossAttentionBlockT {
    LayerNormBlockT<T> ln_q, ln_kv, ln2;
    MultiHeadAttentionT<T> attn;
    FeedForwardT<T> ff;

    CrossAttentionBlockT() = default;
    CrossAttentionBlockT(const std::string& prefix, int64_t d, int64_t kv_d,
                         int64_t heads, int64_t ff_expansion, SeededRng rng)
        : ln_q(prefix + ".ln_q", d),
          ln_kv(prefix + ".ln_kv", kv_d),
          ln2(prefix + ".ln2", d),
          attn(prefix + ".attn", d, kv_d, heads, rng),
          ff(prefix + ".ff", d, ff_expansion, rng) {}

    TensorT<T> forward(const TensorT<T>& q, const TensorT<T>& kv,
                       const TensorT<T>* mask = nullptr,
                       TensorT<T>* mean_probs = nullptr) const {
        auto y = add(q, attn.forward(ln_q.forward(q), ln_kv.forward(kv), mask,
                                     mean_probs));
        return add(y, ff.forward(ln2.forward(y)));
    }

    void collect(ParamStoreT<T>& store) {
        ln_q.collect(store);
        ln_kv.collect(store);
        ln2.collect(store);
        attn.collect(store);
        ff.collect(store);
    }
};

// Fixed sin/cos position code, one row per position: sin at even feature
// pairs, cos at odd, geometric frequency ladder down to 1/10000.
template <class T>
TensorT<T> sinusoidal_table(int64_t positions, int64_t d) {
    if (d % 2 != 0) throw ConfigError("sinusoidal_table: odd width");
    auto out = TensorT<T>::zeros({positions, d});
    const int64_t half = d / 2;
    for (int64_t p = 0; p < positions; ++p)
        for (int64_t i = 0; i < half; ++i) {
            const double freq =
                std::exp(-std::log(10000.0) * static_cast<double>(i) /
                         static_cast<double>(half));
            out[p * d + i] = static_cast<T>(std::sin(p * freq));
            out[p * d + half + i] = static_cast<T>(std::cos(p * freq));
        }
    return out;
}

// Scalar timestep -> [d] code, same ladder as sinusoidal_table.
template <class T>
TensorT<T> timestep_embedding(int64_t t, int64_t d) {
    if (d % 2 != 0) throw ConfigError("timestep_embedding: odd width");
    auto out = TensorT<T>::zeros({d});
    const int64_t half = d / 2;
    for (int64_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) *
                                     static_cast<double>(i) /
                                     static_cast<double>(half));
        out[i] = static_cast<T>(std::sin(static_cast<double>(t) * freq));
        out[half + i] = static_cast<T>(std::cos(static_cast<double>(t) * freq));
    }
    return out;
}

}  // namespace anyctl
