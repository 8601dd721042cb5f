#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lvc/eval.hpp"
#include "lvc/gradcheck.hpp"
#include "test_helpers.hpp"

using namespace lvc;
using namespace lvc::testing;

namespace {

struct Models {
    DenoiserModel<float> gen;
    ClassifierModel<float> clf;
};

Models tiny_models(uint64_t seed = 61, SelfAttnMode mode = SelfAttnMode::kAxial, size_t steps = 8) {
    Models m{tiny_denoiser(seed, mode, steps), {}};
    m.clf = tiny_classifier(m.gen, seed ^ 0xc1);
    return m;
}

}  // namespace

TEST_CASE("comp_loss is the negative log score of the target") {
    Models m = tiny_models();
    VideoT<float> z = random_video(m.gen.world(), 1);

    // zeroed head -> uniform scores -> exactly ln 8
    std::fill(m.clf.trainable().at("head.w").value->begin(), m.clf.trainable().at("head.w").value->end(), 0.f);
    std::fill(m.clf.trainable().at("head.b").value->begin(), m.clf.trainable().at("head.b").value->end(), 0.f);
    double loss = comp_loss(m.gen, m.clf, z, 3, tiny_prompt(kToward), kToward);
    CHECK(loss == doctest::Approx(std::log(8.0)).epsilon(1e-5));

    // and for an arbitrary head it matches -log(classify()[y]) recomputed
    Models m2 = tiny_models(67);
    for (int y : {0, 3, 7}) {
        double l = comp_loss(m2.gen, m2.clf, z, 3, tiny_prompt(kToward), y);
        CHECK(l >= 0.0);
        auto [eps, maps] = denoise_step(m2.gen, z, 3, tiny_prompt(kToward), true);
        Tape<float> tape;
        BoundParams<float> bp = m2.clf.bind(tape, false);
        std::vector<MapRef<float>> refs;
        for (const auto& item : maps.maps)
            refs.push_back({item.meta, tape.input({z.F, z.H, z.W}, item.values)});
        Tensor<float> s = m2.clf.classify(tape, bp, m2.clf.aggregate(tape, bp, refs));
        CHECK(l == doctest::Approx(-std::log(s.v()[y])).epsilon(1e-5));
    }
}

TEST_CASE("guided_update applies z - eta * normalized gradient") {
    Models m = tiny_models(71);
    VideoT<float> z = random_video(m.gen.world(), 2);
    PromptSpec p = tiny_prompt(kAbove);
    GuidanceSchedule sch;
    sch.eta = 0.3;
    sch.normalize_grad = true;
    VideoT<float> z2 = guided_update(m.gen, m.clf, z, 2, p, kAbove, sch);

    CompLossResult<float> res = comp_loss_grad(m.gen, m.clf, z, 2, p, kAbove);
    double rms = 0;
    for (float g : res.grad.v) rms += double(g) * g;
    rms = std::sqrt(rms / res.grad.v.size());
    REQUIRE(rms > 0);
    for (size_t i = 0; i < z.v.size(); ++i) {
        float expect = static_cast<float>(double(z.v[i]) - sch.eta * (double(res.grad.v[i]) / rms));
        CHECK(z2.v[i] == doctest::Approx(expect).epsilon(1e-6));
    }
}

TEST_CASE("eta = 0 and zero gradients leave the latent bit-identical") {
    Models m = tiny_models(73);
    VideoT<float> z = random_video(m.gen.world(), 3);
    PromptSpec p = tiny_prompt(kInside);

    GuidanceSchedule sch;
    sch.eta = 0.0;
    CHECK(guided_update(m.gen, m.clf, z, 2, p, kInside, sch).v == z.v);

    // all-zero constraint weights kill the gradient entirely
    GuidanceSchedule sch2;
    sch2.eta = 0.5;
    CompositionConstraint c{kInside, 0.0, 1.0, 0.0};
    CompLossResult<float> res = multi_loss_grad(m.gen, m.clf, z, 2, p, {c});
    CHECK(res.loss == 0.0);
    for (float g : res.grad.v) CHECK(g == 0.0f);
}

TEST_CASE("non-finite gradients raise the divergence error") {
    Models m = tiny_models(79);
    (*m.clf.trainable().at("head.w").value)[0] = std::numeric_limits<float>::quiet_NaN();
    VideoT<float> z = random_video(m.gen.world(), 4);
    GuidanceSchedule sch;
    CHECK_THROWS_WITH_AS((void)guided_update(m.gen, m.clf, z, 2, tiny_prompt(kAway), kAway, sch),
                         doctest::Contains("guidance diverged at step 2"), std::runtime_error);
}

TEST_CASE("the default schedule touches exactly the first eight steps") {
    // spec default: 50-step schedule, guidance on the first 8 only
    Models m = tiny_models(83, SelfAttnMode::kAxial, 50);
    GuidanceSchedule sch = GuidanceSchedule::first_n(8, 50);
    CHECK(sch.guided_steps == std::set<size_t>{43, 44, 45, 46, 47, 48, 49, 50});
    size_t count = 0;
    guided_sample(m.gen, m.clf, tiny_prompt(kToward), kToward, 5, sch, &count);
    CHECK(count == 8);
}

TEST_CASE("an empty guided set reproduces the unguided sampler bit-exactly") {
    Models m = tiny_models(89);
    PromptSpec p = tiny_prompt(kNextTo);
    VideoT<float> plain = sample(m.gen, p, 17);
    size_t count = 0;
    VideoT<float> guided = guided_sample(m.gen, m.clf, p, kNextTo, 17, GuidanceSchedule::none(), &count);
    CHECK(count == 0);
    CHECK(guided.v == plain.v);
}

TEST_CASE("multi-composition with one full-interval unit constraint reduces to single guidance") {
    Models m = tiny_models(97);
    PromptSpec p = tiny_prompt(kToward);
    VideoT<float> z = random_video(m.gen.world(), 5);
    CompositionConstraint full{kToward, 0.0, 1.0, 1.0};  // 4 frames at 4 fps
    CHECK(full.frames(m.gen.world()) == std::set<size_t>{0, 1, 2, 3});

    double a = comp_loss(m.gen, m.clf, z, 3, p, kToward);
    double b = multi_loss(m.gen, m.clf, z, 3, p, {full});
    CHECK(a == b);  // bitwise: mask is the identity, weight is one

    GuidanceSchedule sch = GuidanceSchedule::first_n(4, 8);
    VideoT<float> single = guided_sample(m.gen, m.clf, p, kToward, 23, sch);
    VideoT<float> multi = multi_guided_sample(m.gen, m.clf, p, {full}, 23, sch);
    CHECK(multi.v == single.v);
}

TEST_CASE("multi_loss sums the weighted per-constraint terms") {
    Models m = tiny_models(101);
    PromptSpec p = tiny_prompt(kToward);
    VideoT<float> z = random_video(m.gen.world(), 6);
    CompositionConstraint c1{kToward, 0.0, 0.5, 0.7};
    CompositionConstraint c2{kAway, 0.5, 1.0, 1.3};
    double combined = multi_loss(m.gen, m.clf, z, 2, p, {c1, c2});

    CompositionConstraint u1 = c1, u2 = c2;
    u1.weight = 1.0;
    u2.weight = 1.0;
    double l1 = multi_loss(m.gen, m.clf, z, 2, p, {u1});
    double l2 = multi_loss(m.gen, m.clf, z, 2, p, {u2});
    CHECK(combined == doctest::Approx(0.7 * l1 + 1.3 * l2).epsilon(1e-6));
}

TEST_CASE("segment losses carry exactly no gradient into the masked-out feature frames") {
    Models m = tiny_models(103, SelfAttnMode::kOff);
    const WorldConfig& wc = m.gen.world();
    Tape<float> tape;
    BoundParams<float> bp = m.clf.bind(tape, false);
    Rng rng(9);
    std::vector<float> phi_v(wc.cells());
    for (auto& x : phi_v) x = static_cast<float>(rng.normal());
    Tensor<float> phi = tape.input({1, wc.frames, wc.height, wc.width}, phi_v, true);
    Tensor<float> masked = mask_features(tape, phi, {0, 1}, wc.frames);
    Tensor<float> s = m.clf.classify(tape, bp, masked);
    Tensor<float> loss = tape.neg(tape.log_(tape.pick(s, kToward)));
    tape.backward(loss);
    size_t hw = wc.height * wc.width;
    double inside = 0;
    for (size_t f = 0; f < wc.frames; ++f)
        for (size_t i = 0; i < hw; ++i) {
            float g = phi.g()[f * hw + i];
            if (f < 2)
                inside += std::fabs(g);
            else
                CHECK(g == 0.0f);  // the temporal mask is absolute
        }
    CHECK(inside > 0.0);
}

TEST_CASE("autoregressive generation with one segment matches single guidance") {
    Models m = tiny_models(107);
    PromptSpec p = tiny_prompt(kToward);
    GuidanceSchedule sch = GuidanceSchedule::first_n(3, 8);
    VideoT<float> single = guided_sample(m.gen, m.clf, p, kToward, 31, sch);
    ARResult<float> ar = ar_guided_sample(m.gen, m.clf, {{p, kToward}}, 31, sch, 2);
    CHECK(ar.batches.size() == 1);
    CHECK(ar.video.v == single.v);
}

TEST_CASE("autoregressive seams share bit-identical context frames") {
    Models m = tiny_models(109);
    const WorldConfig& wc = m.gen.world();
    std::vector<ARSegment> segments = {{tiny_prompt(kToward), kToward},
                                       {tiny_prompt(kAway), kAway},
                                       {tiny_prompt(kNextTo), kNextTo}};
    GuidanceSchedule sch = GuidanceSchedule::first_n(3, 8);
    size_t ctx = 2;
    ARResult<float> ar = ar_guided_sample(m.gen, m.clf, segments, 77, sch, ctx);
    REQUIRE(ar.batches.size() == 3);
    size_t frame_sz = wc.height * wc.width * wc.channels;
    for (size_t mth = 1; mth < 3; ++mth) {
        const auto& prev = ar.batches[mth - 1].v;
        const auto& cur = ar.batches[mth].v;
        for (size_t i = 0; i < ctx * frame_sz; ++i)
            CHECK(cur[i] == prev[(wc.frames - ctx) * frame_sz + i]);
    }
    CHECK(ar.video.F == wc.frames + 2 * (wc.frames - ctx));
    // the concatenation carries batch 0 verbatim, then the new frames of each batch
    for (size_t i = 0; i < wc.frames * frame_sz; ++i) CHECK(ar.video.v[i] == ar.batches[0].v[i]);
}

TEST_CASE("guidance gradient matches central finite differences in 64-bit") {
    Models mf = tiny_models(113);
    DenoiserModel<double> gen = mf.gen.cast<double>();
    ClassifierModel<double> clf = mf.clf.cast<double>();
    const WorldConfig& wc = gen.world();
    double worst = 0;
    for (uint64_t trial = 0; trial < 6; ++trial) {
        Rng rng(mix_seed(0xfdc0ULL, trial));
        VideoT<double> z(wc.frames, wc.height, wc.width, wc.channels);
        for (auto& x : z.v) x = rng.normal();
        size_t t = 1 + rng.below(gen.schedule().total_steps);
        int y = static_cast<int>(rng.below(8));
        PromptSpec p = tiny_prompt(static_cast<int>(rng.below(8)));

        CompLossResult<double> res = comp_loss_grad(gen, clf, z, t, p, y);
        auto f = [&](const std::vector<double>& x) {
            VideoT<double> zz = z;
            zz.v = x;
            return comp_loss(gen, clf, zz, t, p, y);
        };
        double err = finite_diff_check<double>(f, z.v, res.grad.v, 1e-4, 20, trial);
        CAPTURE(trial);
        CHECK(err <= 1e-3);
        worst = std::max(worst, err);
    }
    MESSAGE("worst comp-loss gradient error: ", worst);
}

TEST_CASE("guided sampling leaves every parameter set untouched") {
    Models m = tiny_models(127);
    uint64_t gen_sum = m.gen.params().checksum();
    uint64_t agg_sum = m.clf.trainable().checksum();
    uint64_t bb_sum = m.clf.backbone().checksum();
    GuidanceSchedule sch = GuidanceSchedule::first_n(4, 8);
    guided_sample(m.gen, m.clf, tiny_prompt(kBehind), kBehind, 3, sch);
    multi_guided_sample(m.gen, m.clf, tiny_prompt(kToward),
                        {{kToward, 0.0, 0.5, 1.0}, {kAway, 0.5, 1.0, 1.0}}, 4, sch);
    ar_guided_sample(m.gen, m.clf, {{tiny_prompt(kAway), kAway}, {tiny_prompt(kToward), kToward}}, 5, sch,
                     1);
    CHECK(m.gen.params().checksum() == gen_sum);
    CHECK(m.clf.trainable().checksum() == agg_sum);
    CHECK(m.clf.backbone().checksum() == bb_sum);
}

TEST_CASE("constraint and segment syntax parse as documented") {
    auto cs = parse_constraints("toward:0.0:2.0:1.0,away:2.0:4.0");
    REQUIRE(cs.size() == 2);
    CHECK(cs[0].label == kToward);
    CHECK(cs[0].tau_end == 2.0);
    CHECK(cs[1].weight == 1.0);
    CHECK_THROWS_AS(parse_constraints("toward:0.0"), std::runtime_error);
    CHECK_THROWS_AS(parse_constraints("sideways:0:1"), std::runtime_error);

    CHECK(parse_segments("toward|away|next_to") ==
          std::vector<std::string>{"toward", "away", "next_to"});

    CompositionConstraint reversed{kToward, 2.0, 1.0, 1.0};
    WorldConfig wc = tiny_world();
    CHECK_THROWS_AS((void)reversed.frames(wc), std::runtime_error);
    CompositionConstraint empty{kToward, 0.9, 0.95, 1.0};  // no frame lands inside
    CHECK_THROWS_WITH_AS((void)empty.frames(wc), doctest::Contains("empty constraint interval"),
                         std::runtime_error);
}
