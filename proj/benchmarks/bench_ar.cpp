#include <benchmark/benchmark.h>

#include "chaintok/ar.hpp"

using namespace chaintok;

namespace {

ar::ArConfig bench_config() {
    ar::ArConfig cfg;
    cfg.layers = 4;
    cfg.channels = 128;
    cfg.heads = 4;
    cfg.k_max = 128;
    cfg.codebook_size = 1000;
    return cfg;
}

}  // namespace

static void BM_KvCachedRollout(benchmark::State& state) {
    ar::ArModel m(bench_config(), 3);
    ar::SampleRule rule = ar::SampleRule::nucleus(0.9);
    rule.allow_eos = false;
    const int n = static_cast<int>(state.range(0));
    uint64_t seed = 0;
    for (auto _ : state) {
        auto g = m.generate(ar::StopRule::fixed(n), rule, ++seed);
        benchmark::DoNotOptimize(g.tokens.data());
    }
    state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_KvCachedRollout)->Arg(16)->Arg(64)->Arg(128);

static void BM_FullRecomputeLogits(benchmark::State& state) {
    ar::ArModel m(bench_config(), 3);
    Rng rng(1);
    std::vector<int> codes;
    for (int i = 0; i < static_cast<int>(state.range(0)); ++i) {
        codes.push_back(static_cast<int>(rng.uniform_int(0, 999)));
    }
    for (auto _ : state) {
        auto rows = m.full_logits(codes);
        benchmark::DoNotOptimize(rows.data());
    }
}
BENCHMARK(BM_FullRecomputeLogits)->Arg(16)->Arg(64)->Arg(128);

static void BM_PackedTrainStep(benchmark::State& state) {
    ar::ArModel m(bench_config(), 3);
    Adam opt;
    Rng rng(2);
    std::vector<std::vector<int>> docs;
    for (int d = 0; d < 8; ++d) {
        std::vector<int> doc;
        for (int i = 0; i < 24; ++i) doc.push_back(static_cast<int>(rng.uniform_int(0, 999)));
        docs.push_back(std::move(doc));
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(m.train_step(docs, opt, true));
    }
}
BENCHMARK(BM_PackedTrainStep);
