#include <benchmark/benchmark.h>

#include "chaintok/tensor.hpp"

using namespace chaintok;

static void BM_MatmulForward(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    Rng rng(1);
    Tensor a = Tensor::randn({n, n}, rng);
    Tensor b = Tensor::randn({n, n}, rng);
    for (auto _ : state) {
        Tensor c = matmul(a, b);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}
BENCHMARK(BM_MatmulForward)->Arg(64)->Arg(128)->Arg(256)->Arg(512);

static void BM_AttentionBlock(benchmark::State& state) {
    const int t = static_cast<int>(state.range(0));
    const int c = 128, h = 4;
    Rng rng(2);
    Tensor x = Tensor::randn({t, c}, rng);
    Tensor wqkv = Tensor::randn({c, 3 * c}, rng, 0.02f);
    Tensor wo = Tensor::randn({c, c}, rng, 0.02f);
    std::vector<int> pos(t);
    for (int i = 0; i < t; ++i) pos[i] = i;
    for (auto _ : state) {
        Tensor qkv = matmul(x, wqkv);
        Tensor q = transpose(reshape(narrow(qkv, 1, 0, c), {t, h, c / h}), 0, 1);
        Tensor k = transpose(reshape(narrow(qkv, 1, c, c), {t, h, c / h}), 0, 1);
        Tensor v = transpose(reshape(narrow(qkv, 1, 2 * c, c), {t, h, c / h}), 0, 1);
        q = rope(q, pos);
        k = rope(k, pos);
        Tensor scores = softmax(scale(matmul(q, transpose(k, 1, 2)), 0.125f));
        Tensor out = matmul(matmul(scores, v), Tensor::randn({c / h, c / h}, rng));
        benchmark::DoNotOptimize(out.data());
        (void)wo;
    }
}
BENCHMARK(BM_AttentionBlock)->Arg(64)->Arg(128)->Arg(256);

static void BM_TrainStepTapeOverhead(benchmark::State& state) {
    Rng rng(3);
    Tensor x = Tensor::randn({64, 64}, rng);
    Tensor w = Tensor::randn({64, 64}, rng, 0.1f);
    w.set_requires_grad(true);
    for (auto _ : state) {
        GradTape tape;
        Tensor loss = mean_all(gelu(matmul(x, w)));
        tape.backward(loss);
        w.zero_grad();
        benchmark::DoNotOptimize(loss.item());
    }
}
BENCHMARK(BM_TrainStepTapeOverhead);

BENCHMARK_MAIN();
