#include <benchmark/benchmark.h>

#include "lvc/rng.hpp"
#include "lvc/tensor.hpp"

using namespace lvc;

namespace {

std::vector<float> random_values(size_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return v;
}

}  // namespace

static void BM_MatmulForward(benchmark::State& state) {
    size_t m = state.range(0), k = 32, n = 96;
    std::vector<float> a = random_values(m * k, 1), b = random_values(k * n, 2);
    for (auto _ : state) {
        Tape<float> t;
        Tensor<float> y = t.matmul(t.input({m, k}, a), t.input({k, n}, b));
        benchmark::DoNotOptimize(y.v().data());
    }
    state.SetItemsProcessed(state.iterations() * m * k * n * 2);
}
BENCHMARK(BM_MatmulForward)->Arg(256)->Arg(2048);

static void BM_AttentionForwardBackward(benchmark::State& state) {
    size_t B = 128, S = 16, D = 32;
    std::vector<float> q = random_values(B * S * D, 3);
    for (auto _ : state) {
        Tape<float> t;
        Tensor<float> qt = t.input({B, S, D}, q, true);
        Tensor<float> w = t.attn_weights(qt, qt, 4);
        Tensor<float> loss = t.sum_all(t.mul(t.attn_apply(w, qt), t.attn_apply(w, qt)));
        t.backward(loss);
        benchmark::DoNotOptimize(qt.g().data());
    }
}
BENCHMARK(BM_AttentionForwardBackward);

static void BM_SoftmaxRows(benchmark::State& state) {
    std::vector<float> x = random_values(4096 * 8, 4);
    for (auto _ : state) {
        Tape<float> t;
        Tensor<float> y = t.softmax_last(t.input({4096, 8}, x));
        benchmark::DoNotOptimize(y.v().data());
    }
}
BENCHMARK(BM_SoftmaxRows);
