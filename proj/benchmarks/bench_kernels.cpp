#include "bimamsleep/bimamba.hpp"
#include "bimamsleep/model.hpp"
#include "bimamsleep/ops.hpp"
#include "bimamsleep/ssm.hpp"

#include <benchmark/benchmark.h>

using namespace bimamsleep;

namespace {

NdArray normal_array(const Shape& shape, Rng& rng)
{
    NdArray x(shape);
    for (auto& v : x.values()) {
        v = standard_normal(rng);
    }
    return x;
}

// First convolution of the desk fine-grained branch on one 30 s epoch.
void BM_Conv1dEpoch(benchmark::State& state)
{
    Rng rng(1);
    const auto batch = static_cast<std::size_t>(state.range(0));
    const auto x = normal_array({batch, 1, 3000}, rng);
    const auto w = normal_array({8, 1, 50}, rng);
    const auto b = normal_array({8}, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(nn::conv1d(x, w, b, 6, 24));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_Conv1dEpoch)->Arg(1)->Arg(16);

void BM_SelectiveScan(benchmark::State& state)
{
    Rng rng(2);
    const auto L = static_cast<std::size_t>(state.range(0));
    const std::size_t D = 128, N = 16;
    const auto xd = normal_array({1, L, D}, rng);
    NdArray delta({1, L, D});
    for (auto& v : delta.values()) {
        v = uniform(rng, 0.001, 0.1);
    }
    NdArray a({D, N});
    for (auto& v : a.values()) {
        v = -uniform(rng, 0.5, 16.0);
    }
    const auto bt = normal_array({1, L, N}, rng);
    const auto ct = normal_array({1, L, N}, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(selective_scan(xd, delta, a, bt, ct));
    }
    state.SetComplexityN(static_cast<std::int64_t>(L));
}
BENCHMARK(BM_SelectiveScan)->RangeMultiplier(2)->Range(256, 4096)->Complexity(benchmark::oN);

void BM_BiMambaBlock(benchmark::State& state)
{
    Rng rng(3);
    MambaConfig cfg;
    cfg.d_model = 64;
    cfg.state_size = 16;
    const auto params = BlockParams::init(cfg, "bench", rng);
    const auto L = static_cast<std::size_t>(state.range(0));
    const auto x = normal_array({1, L, cfg.d_model}, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(bimamba_block(x, params, cfg));
    }
    state.SetComplexityN(static_cast<std::int64_t>(L));
}
BENCHMARK(BM_BiMambaBlock)->RangeMultiplier(2)->Range(256, 4096)->Complexity(benchmark::oN);

void BM_DeskModelForward(benchmark::State& state)
{
    SleepModel model(ModelConfig::desk(), 4);
    Rng rng(4);
    const auto batch = static_cast<std::size_t>(state.range(0));
    const auto x = normal_array({batch, 1, 3000}, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(model.forward(x, nn::Mode::Eval, rng));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_DeskModelForward)->Arg(1)->Arg(64);

} // namespace

BENCHMARK_MAIN();
