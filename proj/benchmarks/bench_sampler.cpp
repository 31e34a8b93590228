#include <benchmark/benchmark.h>

#include "chaintok/sampler.hpp"

using namespace chaintok;

static void BM_OdeIntegrateAnalyticField(benchmark::State& state) {
    const int steps = static_cast<int>(state.range(0));
    auto field = [](const std::vector<double>& x, double) {
        std::vector<double> v(x.size());
        for (size_t i = 0; i < x.size(); ++i) v[i] = -x[i];
        return v;
    };
    sampler::SamplerConfig cfg;
    cfg.steps = steps;
    cfg.seed = 7;
    for (auto _ : state) {
        auto out = sampler::integrate_ode(field, 3 * 64, cfg);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(BM_OdeIntegrateAnalyticField)->Arg(10)->Arg(20)->Arg(40)->Arg(80);

static void BM_DecodeStructure(benchmark::State& state) {
    model::TokenizerConfig cfg;
    cfg.encoder.layers = 1;
    cfg.encoder.channels = 32;
    cfg.encoder.heads = 2;
    cfg.decoder.layers = 2;
    cfg.decoder.channels = 64;
    cfg.decoder.heads = 2;
    cfg.decoder.time_features = 32;
    cfg.quant.k_max = 16;
    model::TokenizerModel tok(cfg, 5);
    geometry::CoordSet chain = geometry::center(geometry::make_helix(32));
    fsq::TokenSequence tokens = tok.encode(chain);
    sampler::SamplerConfig dec;
    dec.steps = static_cast<int>(state.range(0));
    for (auto _ : state) {
        auto out = sampler::decode_structure(tok, tokens, sampler::SizeSource::Forced, 32, dec);
        benchmark::DoNotOptimize(out.pos.data());
    }
}
BENCHMARK(BM_DecodeStructure)->Arg(20)->Arg(40);
