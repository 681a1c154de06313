#include <benchmark/benchmark.h>

#include <cmarl/policy.hpp>

#include <random>

namespace {

using cmarl::diff::Tape;
using cmarl::diff::Tensor;

cmarl::policy::FusionParams make_fusion(std::size_t d_h, int window, std::mt19937_64& rng) {
    cmarl::policy::FusionParams f;
    f.wq = cmarl::diff::randn({d_h, d_h}, rng, 0.5);
    f.wk = cmarl::diff::randn({d_h, d_h}, rng, 0.5);
    f.wv = cmarl::diff::randn({d_h, d_h}, rng, 0.5);
    f.gamma = Tensor::scalar(0.1);
    f.window = window;
    return f;
}

// Windowed fusion should scale ~linearly in the sequence length at fixed
// window size.
void BM_BchfmFuse(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    const std::size_t d_h = 16;
    std::mt19937_64 rng(7);
    auto fusion = make_fusion(d_h, 8, rng);
    Tensor hf = cmarl::diff::randn({n, d_h}, rng, 0.5);
    Tensor hb = cmarl::diff::randn({n, d_h}, rng, 0.5);
    for (auto _ : state) {
        Tape tape;
        auto out = cmarl::policy::bchfm_fuse(tape.param(hf), tape.param(hb), fusion, tape);
        benchmark::DoNotOptimize(out->value.data().data());
    }
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_BchfmFuse)->Arg(32)->Arg(64)->Arg(128)->Arg(256)->Complexity(benchmark::oN);

void BM_PolicyForward(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    cmarl::policy::PolicyConfig cfg;
    cfg.state_dim = 134;
    auto params = cmarl::policy::PolicyParams::init(cfg, 11);
    std::mt19937_64 rng(13);
    Tensor states = cmarl::diff::randn({n, cfg.state_dim}, rng, 0.5);
    for (auto _ : state) {
        Tape tape;
        auto out = cmarl::policy::policy_forward(states, params, tape);
        benchmark::DoNotOptimize(out.mu->value.data().data());
    }
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_PolicyForward)->Arg(32)->Arg(64)->Arg(128)->Complexity(benchmark::oN);

}  // namespace

BENCHMARK_MAIN();
