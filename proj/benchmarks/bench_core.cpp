#include <benchmark/benchmark.h>

#include <anyctl/gemm.hpp>
#include <anyctl/pipeline.hpp>
#include <anyctl/sampler.hpp>

// Hot paths in rough call-frequency order: gemm backs every linear layer,
// conv2d every denoiser block, attention every encoder block, and the last
// two time one full control-encoder pass and one full sampler step at the
// default model size.

namespace {

using namespace anyctl;

std::vector<float> random_buf(int64_t n, uint64_t seed) {
    SeededRng rng(seed);
    std::vector<float> v(static_cast<size_t>(n));
    for (auto& x : v) x = static_cast<float>(rng.next_gaussian());
    return v;
}

void BM_Gemm(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const auto a = random_buf(int64_t(n) * n, 1);
    const auto b = random_buf(int64_t(n) * n, 2);
    std::vector<float> c(static_cast<size_t>(n) * n, 0.f);
    for (auto _ : state) {
        detail::gemm<float>(false, false, n, n, n, 1.f, a.data(), b.data(),
                            0.f, c.data());
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * 2 * int64_t(n) * n * n);
}
BENCHMARK(BM_Gemm)->Arg(64)->Arg(128)->Arg(256);

void BM_Conv2d(benchmark::State& state) {
    NoGradGuard ng;
    const int64_t c = state.range(0), hw = state.range(1);
    auto x = Tensor::zeros({c, hw, hw});
    auto w = Tensor::zeros({c, c, 3, 3});
    auto b = Tensor::zeros({c});
    auto xv = random_buf(x.numel(), 3);
    auto wv = random_buf(w.numel(), 4);
    std::copy(xv.begin(), xv.end(), x.data().begin());
    std::copy(wv.begin(), wv.end(), w.data().begin());
    for (auto _ : state) {
        auto y = conv2d(x, w, b, 1, 1);
        benchmark::DoNotOptimize(y.data().data());
    }
}
BENCHMARK(BM_Conv2d)->Args({16, 64})->Args({32, 16});

void BM_Attention(benchmark::State& state) {
    NoGradGuard ng;
    const int64_t seq = state.range(0);
    ModelConfig cfg;
    MultiHeadAttentionT<float> attn("bench.attn", cfg.d_model, cfg.d_model,
                                    cfg.heads, SeededRng(5));
    auto x = Tensor::zeros({seq, cfg.d_model});
    auto xv = random_buf(x.numel(), 6);
    std::copy(xv.begin(), xv.end(), x.data().begin());
    for (auto _ : state) {
        auto y = attn.forward(x, x);
        benchmark::DoNotOptimize(y.data().data());
    }
}
BENCHMARK(BM_Attention)->Arg(64)->Arg(256);

void BM_MceEncode(benchmark::State& state) {
    NoGradGuard ng;
    const int64_t n_conds = state.range(0);
    ModelConfig cfg;
    Pipeline pipe(cfg, 7);
    const auto text = pipe.encode_text("a red circle left of a blue square",
                                       {Modality::edge});
    std::vector<ConditionImage> conds;
    for (int64_t i = 0; i < n_conds; ++i) {
        ConditionImage c;
        c.modality = i % 2 == 0 ? Modality::edge : Modality::depth;
        c.channels = Tensor::zeros({1, cfg.canvas, cfg.canvas});
        auto v = random_buf(c.channels.numel(), 8 + static_cast<uint64_t>(i));
        for (auto& x : v) x = std::abs(x) / 3.f;
        std::copy(v.begin(), v.end(), c.channels.data().begin());
        conds.push_back(std::move(c));
    }
    const auto pyramids = pipe.encode_conditions(conds);
    for (auto _ : state) {
        auto out = pipe.mce.encode(text, pyramids);
        benchmark::DoNotOptimize(out.data().data());
    }
}
BENCHMARK(BM_MceEncode)->Arg(1)->Arg(4);

void BM_DdimStep(benchmark::State& state) {
    NoGradGuard ng;
    ModelConfig cfg;
    Pipeline pipe(cfg, 9);
    const auto text = pipe.encode_text("a red circle", {});
    const auto mask = additive_pad_mask<float>(0, text.pad_mask);
    const auto mc = pipe.mce.encode(text, {});
    auto x = Tensor::zeros({3, cfg.canvas, cfg.canvas});
    auto xv = random_buf(x.numel(), 10);
    std::copy(xv.begin(), xv.end(), x.data().begin());
    const int64_t t = cfg.timesteps / 2;
    for (auto _ : state) {
        auto eps = pipe.denoiser.predict_controlled(x, t, text.embeddings,
                                                    &mask, mc);
        auto next = ddim_step(x, eps, t, t - 20, pipe.schedule);
        benchmark::DoNotOptimize(next.data().data());
    }
}
BENCHMARK(BM_DdimStep);

}  // namespace

BENCHMARK_MAIN();
