#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lvc/denoiser.hpp"
#include "test_helpers.hpp"

using namespace lvc;
using namespace lvc::testing;

TEST_CASE("extraction step sets follow the stride rule") {
    // default schedule: stride 5 over 50 steps keeps 11 steps with the final one
    std::vector<int> s = extraction_steps(50, 5);
    CHECK(s.size() == 11);
    CHECK(s.front() == 1);
    CHECK(s.back() == 50);
    CHECK(std::count(s.begin(), s.end(), 45) == 1);
    // stride = T keeps exactly the first and final steps
    CHECK(extraction_steps(50, 50) == std::vector<int>{1, 50});
    CHECK_THROWS_AS(extraction_steps(50, 0), std::runtime_error);
}

TEST_CASE("denoise_step records |L| * |H| * |K| maps at one step") {
    // four layers, four heads, two entity tokens -> 32 maps
    GeneratorConfig g = tiny_gen_config();
    g.layers = 4;
    DenoiserModel<float> model(tiny_world(), g, tiny_schedule(), 3);
    VideoT<float> z = random_video(model.world(), 1);
    auto [eps, maps] = denoise_step(model, z, 4, tiny_prompt(kToward), true);
    CHECK(maps.maps.size() == 4 * 4 * 2);
    CHECK(maps.steps == std::vector<int>{4});
    for (const auto& m : maps.maps) {
        CHECK(m.values.size() == model.world().cells());
        for (float v : m.values) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
}

TEST_CASE("cross-attention weights are row-stochastic over the prompt tokens") {
    DenoiserModel<float> model = tiny_denoiser(5);
    const WorldConfig& wc = model.world();
    Rng rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        Tape<float> tape;
        VideoT<float> z = random_video(wc, 100 + trial);
        Tensor<float> zt = tape.input({1, wc.frames, wc.height, wc.width, wc.channels}, z.v);
        std::vector<Tensor<float>> weights;
        int t = 1 + static_cast<int>(rng.below(model.schedule().total_steps));
        PromptSpec p = tiny_prompt(static_cast<int>(rng.below(8)));
        model.forward(tape, zt, {t}, {p}, false, nullptr, &weights);
        REQUIRE(weights.size() == model.config().layers);
        for (auto& w : weights) {
            const Shape& s = w.shape();  // [1, heads, cells, P]
            size_t P = s[3];
            for (size_t row = 0; row < s[1] * s[2]; ++row) {
                float sum = 0;
                for (size_t k = 0; k < P; ++k) sum += w.v()[row * P + k];
                CHECK(sum == doctest::Approx(1.0f).epsilon(1e-5));
            }
        }
    }
}

TEST_CASE("recording is passive: identical noise estimate with and without maps") {
    DenoiserModel<float> model = tiny_denoiser(9);
    VideoT<float> z = random_video(model.world(), 4);
    auto a = denoise_step(model, z, 3, tiny_prompt(kAbove), false);
    auto b = denoise_step(model, z, 3, tiny_prompt(kAbove), true);
    CHECK(a.first.v == b.first.v);
    CHECK(a.second.maps.empty());
    CHECK_FALSE(b.second.maps.empty());
}

TEST_CASE("entity positions outside the prompt are rejected") {
    DenoiserModel<float> model = tiny_denoiser(2);
    VideoT<float> z = random_video(model.world(), 8);
    PromptSpec p = tiny_prompt(kAbove);
    p.entity_positions = {0, 5};
    CHECK_THROWS_WITH_AS((void)denoise_step(model, z, 2, p, true),
                         doctest::Contains("out of prompt range"), std::runtime_error);
}

TEST_CASE("sampling is deterministic, seed-sensitive and hook-transparent") {
    DenoiserModel<float> model = tiny_denoiser(13);
    PromptSpec p = tiny_prompt(kToward);

    VideoT<float> a = sample(model, p, 42);
    VideoT<float> b = sample(model, p, 42);
    CHECK(a.v == b.v);

    VideoT<float> c = sample(model, p, 43);
    float max_diff = 0;
    for (size_t i = 0; i < a.v.size(); ++i) max_diff = std::max(max_diff, std::fabs(a.v[i] - c.v[i]));
    CHECK(max_diff > 0.0f);

    StepHook<float> identity = [](const VideoT<float>& z, size_t) { return z; };
    CHECK(sample(model, p, 42, identity).v == a.v);

    StepHook<float> add_zero = [](const VideoT<float>& z, size_t) {
        VideoT<float> out = z;
        for (auto& x : out.v) x += 0.0f;
        return out;
    };
    CHECK(sample(model, p, 42, add_zero).v == a.v);

    StepHook<float> bad = [](const VideoT<float>& z, size_t) {
        VideoT<float> out(z.F - 1, z.H, z.W, z.C);
        return out;
    };
    CHECK_THROWS_WITH_AS((void)sample(model, p, 42, bad), doctest::Contains("mismatched shape"),
                         std::runtime_error);
}

TEST_CASE("unconditional prompts sample to finite values") {
    DenoiserModel<float> model = tiny_denoiser(17);
    VideoT<float> v = sample(model, unconditional_prompt(model.world()), 7);
    for (float x : v.v) CHECK(std::isfinite(x));
}

TEST_CASE("inversion round-trips within 0.05 mean absolute error per cell") {
    DenoiserModel<float> model = tiny_denoiser(23);
    const WorldConfig& wc = model.world();
    double worst = 0;
    for (uint64_t s = 0; s < 20; ++s) {
        SceneScript script = sample_scene(static_cast<int>(s % 8), s, wc);
        LatentVideo video = render(script, wc);
        PromptSpec prompt = prompt_for_scene(script, wc);
        Trajectory<float> traj = invert(model, video, prompt, 2);
        CHECK(traj.steps() == model.schedule().total_steps);
        VideoT<float> back = sample(model, prompt, 0, {}, &traj.z(traj.steps()));
        double mae = 0;
        for (size_t i = 0; i < video.v.size(); ++i) mae += std::fabs(back.v[i] - video.v[i]);
        mae /= video.v.size();
        CAPTURE(s);
        CHECK(mae <= 0.05);
        worst = std::max(worst, mae);
    }
    MESSAGE("worst inversion round-trip MAE: ", worst);
}

TEST_CASE("inversion requires the deterministic sampler") {
    DenoiserModel<float> model(tiny_world(), tiny_gen_config(),
                               tiny_schedule(8, SamplerKind::kAncestral), 5);
    VideoT<float> v = random_video(model.world(), 3);
    CHECK_THROWS_WITH_AS((void)invert(model, v, tiny_prompt(kAway), 1),
                         doctest::Contains("deterministic sampler"), std::runtime_error);
}

TEST_CASE("a zero-step schedule inverts to the input alone") {
    DenoiserModel<float> model(tiny_world(), tiny_gen_config(), DiffusionSchedule::linear(0, 0.1, 0.2), 5);
    VideoT<float> v = random_video(model.world(), 3);
    Trajectory<float> traj = invert(model, v, tiny_prompt(kAway), 2);
    REQUIRE(traj.latents.size() == 1);
    CHECK(traj.latents[0].v == v.v);
}

TEST_CASE("inversion trajectories depend on the prompt") {
    DenoiserModel<float> model = tiny_denoiser(31);
    const WorldConfig& wc = model.world();
    SceneScript script = sample_scene(kToward, 6, wc);
    LatentVideo video = render(script, wc);
    PromptSpec pos = prompt_for_scene(script, wc);
    PromptSpec neg = prompt_with_relation(pos, kAway, wc);
    Trajectory<float> ta = invert(model, video, pos, 1);
    Trajectory<float> tb = invert(model, video, neg, 1);
    float max_diff = 0;
    const auto& za = ta.z(model.schedule().total_steps).v;
    const auto& zb = tb.z(model.schedule().total_steps).v;
    for (size_t i = 0; i < za.size(); ++i) max_diff = std::max(max_diff, std::fabs(za[i] - zb[i]));
    CHECK(max_diff > 0.0f);
}

TEST_CASE("extract_maps walks the stride grid of the trajectory") {
    DenoiserModel<float> model = tiny_denoiser(37);
    const WorldConfig& wc = model.world();
    VideoT<float> video = random_video(wc, 12);
    PromptSpec prompt = tiny_prompt(kInside);
    Trajectory<float> traj = invert(model, video, prompt, 1);
    AttentionMapSet<float> maps = extract_maps(model, traj, prompt, 3);
    // T=8, stride 3: {8,5,2} plus the final step 1
    CHECK(maps.steps == std::vector<int>{1, 2, 5, 8});
    size_t per_step = model.config().layers * model.config().heads * 2;
    CHECK(maps.maps.size() == per_step * 4);
    for (const auto& m : maps.maps)
        for (float v : m.values) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    Trajectory<float> empty;
    CHECK_THROWS_WITH_AS((void)extract_maps(model, empty, prompt, 3),
                         doctest::Contains("empty trajectory"), std::runtime_error);
}

TEST_CASE("training overfits a single sample and decreases the loss") {
    TempDir dir("gen_overfit");
    WorldConfig wc = tiny_world();
    make_dataset(1, 3, dir.path(), wc);
    DenoiserModel<float> model(wc, tiny_gen_config(), tiny_schedule(), 7);
    RunConfig cfg;
    cfg.set("gen.train_iters", "500");
    cfg.set("gen.batch", "4");
    cfg.set("gen.lr", "0.004");
    TrainStats stats = train_denoiser(model, dir.path(), cfg, 1);
    CHECK(stats.final_loss < 0.1 * stats.initial_loss);
}

TEST_CASE("training is deterministic in seed and config") {
    TempDir dir("gen_det");
    WorldConfig wc = tiny_world();
    make_dataset(4, 9, dir.path(), wc);
    RunConfig cfg;
    cfg.set("gen.train_iters", "30");
    cfg.set("gen.batch", "2");
    auto run = [&] {
        DenoiserModel<float> model(wc, tiny_gen_config(), tiny_schedule(), 7);
        train_denoiser(model, dir.path(), cfg, 5);
        return model.params().checksum();
    };
    CHECK(run() == run());
}

TEST_CASE("checkpoints round-trip through save and load") {
    TempDir dir("gen_ckpt");
    DenoiserModel<float> model = tiny_denoiser(41);
    model.save(dir.path() / "gen");
    DenoiserModel<float> back = DenoiserModel<float>::load(dir.path() / "gen");
    CHECK(back.params().checksum() == model.params().checksum());
    CHECK(back.schedule().total_steps == model.schedule().total_steps);
    CHECK(back.config().width == model.config().width);
    // forward parity after reload
    VideoT<float> z = random_video(model.world(), 2);
    CHECK(denoise_step(model, z, 2, tiny_prompt(kAbove), false).first.v ==
          denoise_step(back, z, 2, tiny_prompt(kAbove), false).first.v);
}

TEST_CASE("self-attention off disables cross-frame mixing") {
    DenoiserModel<float> model = tiny_denoiser(43, SelfAttnMode::kOff);
    const WorldConfig& wc = model.world();
    VideoT<float> a = random_video(wc, 5);
    VideoT<float> b = a;
    // perturb frame 3 only; frames 0..2 of the output must not move
    size_t frame_sz = wc.height * wc.width * wc.channels;
    for (size_t i = 0; i < frame_sz; ++i) b.v[3 * frame_sz + i] += 0.37f;
    VideoT<float> ea = denoise_step(model, a, 2, tiny_prompt(kToward), false).first;
    VideoT<float> eb = denoise_step(model, b, 2, tiny_prompt(kToward), false).first;
    for (size_t i = 0; i < 3 * frame_sz; ++i) CHECK(ea.v[i] == eb.v[i]);
    float diff = 0;
    for (size_t i = 3 * frame_sz; i < 4 * frame_sz; ++i) diff = std::max(diff, std::fabs(ea.v[i] - eb.v[i]));
    CHECK(diff > 0.0f);
}
