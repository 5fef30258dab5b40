#pragma once

#include <optional>
#include <string>
#include <vector>

#include "anyctl/model_config.hpp"
#include "anyctl/nn.hpp"

namespace anyctl {

template <class T>
struct GroupNormBlockT {
    ParameterT<T> gain, bias;
    int64_t groups = 1;

    GroupNormBlockT() = default;
    GroupNormBlockT(const std::string& prefix, int64_t c, int64_t groups_)
        : gain(prefix + ".gain", {c}), bias(prefix + ".bias", {c}),
          groups(groups_) {
        for (auto& v : gain.value.data()) v = T(1);
    }

    TensorT<T> forward(const TensorT<T>& x) const {
        return group_norm(x, groups, gain.value, bias.value);
    }

    void collect(ParamStoreT<T>& store) {
        store.add(gain);
        store.add(bias);
    }
};

template <class T>
struct Conv2dBlockT {
    ParameterT<T> w, b;
    int64_t stride = 1, pad = 0;

    Conv2dBlockT() = default;
    Conv2dBlockT(const std::string& prefix, int64_t cin, int64_t cout,
                 int64_t k, int64_t stride_, int64_t pad_, SeededRng rng)
        : w(prefix + ".w", {cout, cin, k, k}), b(prefix + ".b", {cout}),
          stride(stride_), pad(pad_) {
        init_he(w, rng.split(w.name()));
    }

    TensorT<T> forward(const TensorT<T>& x) const {
        return conv2d(x, w.value, b.value, stride, pad);
    }

    void collect(ParamStoreT<T>& store) {
        store.add(w);
        store.add(b);
    }
};

// 1x1 convolution starting at exact zero: the control branch contributes
// nothing until training moves it.
template <class T>
struct ZeroConvT {
    ParameterT<T> w, b;

    ZeroConvT() = default;
    ZeroConvT(const std::string& prefix, int64_t c)
        : w(prefix + ".w", {c, c, 1, 1}), b(prefix + ".b", {c}) {}

    TensorT<T> forward(const TensorT<T>& x) const {
        return conv2d(x, w.value, b.value, 1, 0);
    }

    void collect(ParamStoreT<T>& store) {
        store.add(w);
        store.add(b);
    }
};

// Two 3x3 convolutions around a per-channel timestep bias, residual on the
// outside. The norms are affine; channel count is preserved.
template <class T>
struct ResBlockT {
    GroupNormBlockT<T> gn1, gn2;
    Conv2dBlockT<T> c1, c2;
    LinearT<T> temb;

    ResBlockT() = default;
    ResBlockT(const std::string& prefix, int64_t c, int64_t temb_dim,
              int64_t groups, SeededRng rng)
        : gn1(prefix + ".gn1", c, groups),
          gn2(prefix + ".gn2", c, groups),
          c1(prefix + ".c1", c, c, 3, 1, 1, rng),
          c2(prefix + ".c2", c, c, 3, 1, 1, rng),
          temb(prefix + ".temb", temb_dim, c, rng) {}

    TensorT<T> forward(const TensorT<T>& x, const TensorT<T>& temb_row) const {
        auto h = c1.forward(silu(gn1.forward(x)));
        auto tb = reshape(temb.forward(temb_row), {h.size(0)});
        h = add_bias_channels(h, tb);
        h = c2.forward(silu(gn2.forward(h)));
        return add(x, h);
    }

    void collect(ParamStoreT<T>& store) {
        gn1.collect(store);
        gn2.collect(store);
        c1.collect(store);
        c2.collect(store);
        temb.collect(store);
    }
};

// Attention over the h*w token grid of a feature map.
template <class T>
struct SpatialSelfAttnT {
    SelfAttentionBlockT<T> block;

    SpatialSelfAttnT() = default;
    SpatialSelfAttnT(const std::string& prefix, int64_t c, int64_t heads,
                     SeededRng rng)
        : block(prefix, c, heads, 2, rng) {}

    TensorT<T> forward(const TensorT<T>& x) const {
        const int64_t c = x.size(0), h = x.size(1), w = x.size(2);
        auto tokens = transpose(reshape(x, {c, h * w}));
        return reshape(transpose(block.forward(tokens)), {c, h, w});
    }

    void collect(ParamStoreT<T>& store) { block.collect(store); }
};

template <class T>
struct SpatialCrossAttnT {
    CrossAttentionBlockT<T> block;

    SpatialCrossAttnT() = default;
    SpatialCrossAttnT(const std::string& prefix, int64_t c, int64_t kv_dim,
                      int64_t heads, SeededRng rng)
        : block(prefix, c, kv_dim, heads, 2, rng) {}

    TensorT<T> forward(const TensorT<T>& x, const TensorT<T>& kv,
                       const TensorT<T>* mask = nullptr) const {
        const int64_t c = x.size(0), h = x.size(1), w = x.size(2);
        auto tokens = transpose(reshape(x, {c, h * w}));
        return reshape(transpose(block.forward(tokens, kv, mask)), {c, h, w});
    }

    void collect(ParamStoreT<T>& store) { block.collect(store); }
};

// Features the control branch hands to the decoder, already gated through
// the zero convolutions. Resolutions: i1 at canvas/2, i2 at canvas/4, im at
// canvas/8.
template <class T>
struct ControlInjectionsT {
    TensorT<T> i1, i2, im;
};

// The shared encoder/mid trunk of the denoiser. The base instance
// cross-attends over text tokens; the control copy re-targets the same
// blocks at the multi-control embedding and reports through zero convs.
template <class T>
struct UNetTrunkT {
    LinearT<T> temb_l1, temb_l2;
    Conv2dBlockT<T> stem, down1, down2, down3;
    ResBlockT<T> rb1, rb2, rb3, mid_rb;
    SpatialCrossAttnT<T> xa2, mid_xa;
    SpatialSelfAttnT<T> mid_sa;
    int64_t temb_dim = 0;

    UNetTrunkT() = default;
    UNetTrunkT(const std::string& p, const ModelConfig& cfg, SeededRng rng)
        : temb_l1(p + ".temb.l1", cfg.temb_dim, cfg.temb_dim, rng),
          temb_l2(p + ".temb.l2", cfg.temb_dim, cfg.temb_dim, rng),
          stem(p + ".stem", 3, cfg.unet_channels[0], 3, 1, 1, rng),
          // Kernel 4, stride 2, pad 1 halves even extents exactly.
          down1(p + ".down1", cfg.unet_channels[0], cfg.unet_channels[1], 4, 2,
                1, rng),
          down2(p + ".down2", cfg.unet_channels[1], cfg.unet_channels[2], 4, 2,
                1, rng),
          down3(p + ".down3", cfg.unet_channels[2], cfg.unet_channels[2], 4, 2,
                1, rng),
          rb1(p + ".rb1", cfg.unet_channels[1], cfg.temb_dim, cfg.norm_groups,
              rng),
          rb2(p + ".rb2", cfg.unet_channels[2], cfg.temb_dim, cfg.norm_groups,
              rng),
          rb3(p + ".rb3", cfg.unet_channels[2], cfg.temb_dim, cfg.norm_groups,
              rng),
          mid_rb(p + ".mid.rb", cfg.unet_channels[2], cfg.temb_dim,
                 cfg.norm_groups, rng),
          xa2(p + ".xa2", cfg.unet_channels[2], cfg.d_model, cfg.heads, rng),
          mid_xa(p + ".mid.xa", cfg.unet_channels[2], cfg.d_model, cfg.heads,
                 rng),
          mid_sa(p + ".mid.sa", cfg.unet_channels[2], cfg.heads, rng),
          temb_dim(cfg.temb_dim) {}

    TensorT<T> embed_t(int64_t t) const {
        auto row = reshape(timestep_embedding<T>(t, temb_dim), {1, temb_dim});
        return temb_l2.forward(silu(temb_l1.forward(row)));
    }

    struct Features {
        TensorT<T> e0, e1, e2, mid;
    };

    // kv: text tokens for the base, multi-control embedding for the copy.
    Features forward(const TensorT<T>& x, const TensorT<T>& temb,
                     const TensorT<T>& kv, const TensorT<T>* kv_mask) const {
        Features f;
        f.e0 = stem.forward(x);
        f.e1 = rb1.forward(down1.forward(f.e0), temb);
        auto h = rb2.forward(down2.forward(f.e1), temb);
        f.e2 = xa2.forward(h, kv, kv_mask);
        h = rb3.forward(down3.forward(f.e2), temb);
        h = mid_sa.forward(h);
        h = mid_xa.forward(h, kv, kv_mask);
        f.mid = mid_rb.forward(h, temb);
        return f;
    }

    void collect(ParamStoreT<T>& store) {
        temb_l1.collect(store);
        temb_l2.collect(store);
        stem.collect(store);
        down1.collect(store);
        down2.collect(store);
        down3.collect(store);
        rb1.collect(store);
        rb2.collect(store);
        rb3.collect(store);
        mid_rb.collect(store);
        xa2.collect(store);
        mid_xa.collect(store);
        mid_sa.collect(store);
    }
};

// Epsilon-prediction denoiser: frozen-able base trunk + decoder, plus a
// trainable copy of the trunk whose features enter the decoder through
// zero-initialized 1x1 convolutions at the three skip/mid junctions.
template <class T>
class DenoiserT {
  public:
    DenoiserT() = default;
    DenoiserT(const ModelConfig& cfg, SeededRng rng)
        : cfg_(cfg),
          base_(("base"), cfg, rng),
          ctrl_(("ctrl"), cfg, rng),
          up2_("base.up2", cfg.unet_channels[2], cfg.unet_channels[2], 3, 1, 1,
               rng),
          up1_("base.up1", cfg.unet_channels[2], cfg.unet_channels[1], 3, 1, 1,
               rng),
          up0_("base.up0", cfg.unet_channels[1], cfg.unet_channels[0], 3, 1, 1,
               rng),
          urb2_("base.urb2", cfg.unet_channels[2], cfg.temb_dim,
                cfg.norm_groups, rng),
          urb1_("base.urb1", cfg.unet_channels[1], cfg.temb_dim,
                cfg.norm_groups, rng),
          urb0_("base.urb0", cfg.unet_channels[0], cfg.temb_dim,
                cfg.norm_groups, rng),
          uxa2_("base.uxa2", cfg.unet_channels[2], cfg.d_model, cfg.heads,
                rng),
          out_gn_("base.out.gn", cfg.unet_channels[0], cfg.norm_groups),
          out_c1_("base.out.c1", cfg.unet_channels[0], cfg.out_head_channels,
                  3, 1, 1, rng),
          out_c2_("base.out.c2", cfg.out_head_channels, 3, 1, 1, 0, rng),
          zc1_("ctrl.zc1", cfg.unet_channels[1]),
          zc2_("ctrl.zc2", cfg.unet_channels[2]),
          zcm_("ctrl.zcm", cfg.unet_channels[2]) {}

    // Control trunk on the same x_t, keyed by the multi-control embedding.
    ControlInjectionsT<T> control_features(const TensorT<T>& x, int64_t t,
                                           const TensorT<T>& mc) const {
        auto temb = ctrl_.embed_t(t);
        auto f = ctrl_.forward(x, temb, mc, nullptr);
        return {zc1_.forward(f.e1), zc2_.forward(f.e2), zcm_.forward(f.mid)};
    }

    // eps_hat for x_t at step t. text is [L, d] with an additive PAD mask;
    // inj, when present, comes from control_features.
    TensorT<T> predict(const TensorT<T>& x, int64_t t, const TensorT<T>& text,
                       const TensorT<T>* text_mask,
                       const ControlInjectionsT<T>* inj) const {
        if (x.shape() != Shape{3, cfg_.canvas, cfg_.canvas})
            throw ShapeError("denoiser: x must be [3," +
                             std::to_string(cfg_.canvas) + "," +
                             std::to_string(cfg_.canvas) + "], got " +
                             shape_str(x.shape()));
        auto temb = base_.embed_t(t);
        auto f = base_.forward(x, temb, text, text_mask);
        auto m = inj ? add(f.mid, inj->im) : f.mid;
        auto e2 = inj ? add(f.e2, inj->i2) : f.e2;
        auto e1 = inj ? add(f.e1, inj->i1) : f.e1;
        auto h = add(up2_.forward(upsample_nearest2(m)), e2);
        h = urb2_.forward(h, temb);
        h = uxa2_.forward(h, text, text_mask);
        h = add(up1_.forward(upsample_nearest2(h)), e1);
        h = urb1_.forward(h, temb);
        h = add(up0_.forward(upsample_nearest2(h)), f.e0);
        h = urb0_.forward(h, temb);
        h = silu(out_c1_.forward(silu(out_gn_.forward(h))));
        return out_c2_.forward(h);
    }

    TensorT<T> predict_base(const TensorT<T>& x, int64_t t,
                            const TensorT<T>& text,
                            const TensorT<T>* text_mask) const {
        return predict(x, t, text, text_mask, nullptr);
    }

    TensorT<T> predict_controlled(const TensorT<T>& x, int64_t t,
                                  const TensorT<T>& text,
                                  const TensorT<T>* text_mask,
                                  const TensorT<T>& mc) const {
        auto inj = control_features(x, t, mc);
        return predict(x, t, text, text_mask, &inj);
    }

    void collect(ParamStoreT<T>& store) {
        base_.collect(store);
        up2_.collect(store);
        up1_.collect(store);
        up0_.collect(store);
        urb2_.collect(store);
        urb1_.collect(store);
        urb0_.collect(store);
        uxa2_.collect(store);
        out_gn_.collect(store);
        out_c1_.collect(store);
        out_c2_.collect(store);
        ctrl_.collect(store);
        zc1_.collect(store);
        zc2_.collect(store);
        zcm_.collect(store);
    }

  private:
    ModelConfig cfg_;
    UNetTrunkT<T> base_, ctrl_;
    Conv2dBlockT<T> up2_, up1_, up0_;
    ResBlockT<T> urb2_, urb1_, urb0_;
    SpatialCrossAttnT<T> uxa2_;
    GroupNormBlockT<T> out_gn_;
    Conv2dBlockT<T> out_c1_, out_c2_;
    ZeroConvT<T> zc1_, zc2_, zcm_;
};

}  // namespace anyctl
