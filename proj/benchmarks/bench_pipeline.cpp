#include <benchmark/benchmark.h>

#include "lvc/guidance.hpp"

using namespace lvc;

namespace {

struct Pipeline {
    DenoiserModel<float> gen;
    ClassifierModel<float> clf;
    VideoT<float> z;
    PromptSpec prompt;

    Pipeline() {
        RunConfig cfg;
        WorldConfig wc = WorldConfig::from_config(cfg);
        gen = DenoiserModel<float>(wc, GeneratorConfig::from_config(cfg),
                                   DiffusionSchedule::from_config(cfg), 1);
        clf = ClassifierModel<float>(wc, ClassifierConfig::from_config(cfg), gen.config().layers,
                                     gen.config().heads, gen.schedule().total_steps, 2);
        Rng rng(3);
        z = VideoT<float>(wc.frames, wc.height, wc.width, wc.channels);
        for (auto& x : z.v) x = static_cast<float>(rng.normal());
        prompt.tokens = {0, PromptSpec::relation_token(kToward, wc), 3};
        prompt.entity_positions = {0, 2};
        prompt.relation_label = kToward;
    }
};

Pipeline& pipeline() {
    static Pipeline p;
    return p;
}

}  // namespace

static void BM_DenoiseStepForward(benchmark::State& state) {
    Pipeline& p = pipeline();
    for (auto _ : state) {
        auto out = denoise_step(p.gen, p.z, 25, p.prompt, false);
        benchmark::DoNotOptimize(out.first.v.data());
    }
}
BENCHMARK(BM_DenoiseStepForward);

static void BM_DenoiseStepRecorded(benchmark::State& state) {
    Pipeline& p = pipeline();
    for (auto _ : state) {
        auto out = denoise_step(p.gen, p.z, 25, p.prompt, true);
        benchmark::DoNotOptimize(out.second.maps.data());
    }
}
BENCHMARK(BM_DenoiseStepRecorded);

static void BM_CompLossGradient(benchmark::State& state) {
    Pipeline& p = pipeline();
    for (auto _ : state) {
        CompLossResult<float> res = comp_loss_grad(p.gen, p.clf, p.z, 25, p.prompt, kToward);
        benchmark::DoNotOptimize(res.grad.v.data());
    }
}
BENCHMARK(BM_CompLossGradient);

static void BM_UnguidedSample(benchmark::State& state) {
    Pipeline& p = pipeline();
    uint64_t seed = 0;
    for (auto _ : state) {
        VideoT<float> v = sample(p.gen, p.prompt, seed++);
        benchmark::DoNotOptimize(v.v.data());
    }
}
BENCHMARK(BM_UnguidedSample)->Unit(benchmark::kMillisecond);

static void BM_GuidedSampleFirst8(benchmark::State& state) {
    Pipeline& p = pipeline();
    GuidanceSchedule sch = GuidanceSchedule::first_n(8, p.gen.schedule().total_steps);
    uint64_t seed = 0;
    for (auto _ : state) {
        VideoT<float> v = guided_sample(p.gen, p.clf, p.prompt, kToward, seed++, sch);
        benchmark::DoNotOptimize(v.v.data());
    }
}
BENCHMARK(BM_GuidedSampleFirst8)->Unit(benchmark::kMillisecond);
