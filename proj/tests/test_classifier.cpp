#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lvc/classifier.hpp"
#include "test_helpers.hpp"

using namespace lvc;
using namespace lvc::testing;

namespace {

// synthetic map set: one step, all (layer, head, position) combinations
std::vector<MapRef<float>> synthetic_maps(Tape<float>& tape, const ClassifierModel<float>& clf,
                                          int step, uint64_t seed) {
    const WorldConfig& wc = clf.world();
    Rng rng(mix_seed(seed, 0x3a95ULL));
    std::vector<MapRef<float>> out;
    for (size_t l = 0; l < clf.gen_layers(); ++l)
        for (size_t h = 0; h < 4; ++h)
            for (int kp : {0, 2}) {
                std::vector<float> v(wc.cells());
                for (auto& x : v) x = static_cast<float>(rng.uniform());
                out.push_back({MapMeta{step, static_cast<int>(l), static_cast<int>(h), kp},
                               tape.input({wc.frames, wc.height, wc.width}, std::move(v))});
            }
    return out;
}

}  // namespace

TEST_CASE("aggregate produces one step slice of the world shape") {
    DenoiserModel<float> gen = tiny_denoiser(3);
    ClassifierModel<float> clf = tiny_classifier(gen, 7);
    Tape<float> tape;
    BoundParams<float> bp = clf.bind(tape, false);
    Tensor<float> phi = clf.aggregate(tape, bp, synthetic_maps(tape, clf, 5, 1));
    CHECK(phi.shape() == Shape{1, 4, 8, 8});
}

TEST_CASE("aggregate is bit-identical under input permutation") {
    DenoiserModel<float> gen = tiny_denoiser(3);
    ClassifierModel<float> clf = tiny_classifier(gen, 7);

    auto run = [&](uint64_t shuffle_seed) {
        Tape<float> tape;
        BoundParams<float> bp = clf.bind(tape, false);
        std::vector<MapRef<float>> maps = synthetic_maps(tape, clf, 5, 1);
        if (shuffle_seed) {
            Rng rng(shuffle_seed);
            for (size_t i = maps.size(); i > 1; --i) std::swap(maps[i - 1], maps[rng.below(i)]);
        }
        Tensor<float> phi = clf.aggregate(tape, bp, std::move(maps));
        return phi.v();
    };
    std::vector<float> base = run(0);
    CHECK(base == run(123));
    CHECK(base == run(999));
}

TEST_CASE("multi-step aggregation concatenates ascending steps") {
    DenoiserModel<float> gen = tiny_denoiser(3);
    ClassifierModel<float> clf = tiny_classifier(gen, 7);
    Tape<float> tape;
    BoundParams<float> bp = clf.bind(tape, false);
    std::vector<MapRef<float>> maps = synthetic_maps(tape, clf, 5, 1);
    auto m2 = synthetic_maps(tape, clf, 2, 2);
    auto m8 = synthetic_maps(tape, clf, 8, 3);
    maps.insert(maps.end(), m2.begin(), m2.end());
    maps.insert(maps.end(), m8.begin(), m8.end());
    Tensor<float> phi = clf.aggregate(tape, bp, maps);
    CHECK(phi.shape() == Shape{3, 4, 8, 8});

    // slice order follows ascending step order: recompute each step alone
    Tape<float> t2;
    BoundParams<float> bp2 = clf.bind(t2, false);
    Tensor<float> phi2 = clf.aggregate(t2, bp2, synthetic_maps(t2, clf, 2, 2));
    for (size_t i = 0; i < phi2.v().size(); ++i) CHECK(phi.v()[i] == phi2.v()[i]);
}

TEST_CASE("classify returns a distribution; zeroed head gives the uniform one") {
    DenoiserModel<float> gen = tiny_denoiser(3);
    ClassifierModel<float> clf = tiny_classifier(gen, 7);
    Tape<float> tape;
    BoundParams<float> bp = clf.bind(tape, false);
    Tensor<float> phi = clf.aggregate(tape, bp, synthetic_maps(tape, clf, 5, 4));
    Tensor<float> s = clf.classify(tape, bp, phi);
    double sum = 0;
    for (float v : s.v()) {
        CHECK(v >= 0.0f);
        sum += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));

    ClassifierModel<float> zeroed = tiny_classifier(gen, 7);
    std::fill(zeroed.trainable().at("head.w").value->begin(), zeroed.trainable().at("head.w").value->end(),
              0.f);
    std::fill(zeroed.trainable().at("head.b").value->begin(), zeroed.trainable().at("head.b").value->end(),
              0.f);
    Tape<float> t2;
    BoundParams<float> bp2 = zeroed.bind(t2, false);
    Tensor<float> s2 = zeroed.classify(t2, bp2, zeroed.aggregate(t2, bp2, synthetic_maps(t2, zeroed, 5, 4)));
    for (float v : s2.v()) CHECK(v == doctest::Approx(0.125f).epsilon(1e-6));
}

TEST_CASE("classify matches an independent scalar softmax recomputation") {
    // 64-bit mode, as for every verification-grade comparison
    DenoiserModel<float> gen = tiny_denoiser(3);
    ClassifierModel<double> clf = tiny_classifier(gen, 42).cast<double>();
    // hand-set head: two feature dims drive the logits
    auto& w = *clf.trainable().at("head.w").value;
    auto& b = *clf.trainable().at("head.b").value;
    std::fill(w.begin(), w.end(), 0.0);
    for (size_t c = 0; c < 8; ++c) {
        w[0 * 8 + c] = 0.25 * static_cast<double>(c);
        w[1 * 8 + c] = c % 2 ? -0.5 : 0.5;
        b[c] = 0.01 * static_cast<double>(c);
    }
    Tape<double> tape;
    BoundParams<double> bp = clf.bind(tape, false);
    Rng rng(mix_seed(9, 0x3a95ULL));
    std::vector<MapRef<double>> maps;
    const WorldConfig& wc = clf.world();
    for (size_t l = 0; l < clf.gen_layers(); ++l)
        for (size_t h = 0; h < 4; ++h)
            for (int kp : {0, 2}) {
                std::vector<double> v(wc.cells());
                for (auto& x : v) x = rng.uniform();
                maps.push_back({MapMeta{3, static_cast<int>(l), static_cast<int>(h), kp},
                                tape.input({wc.frames, wc.height, wc.width}, std::move(v))});
            }
    Tensor<double> phi = clf.aggregate(tape, bp, std::move(maps));
    Tensor<double> h = clf.backbone_forward(tape, bp, tape.reshape(phi, {1, 1, 4, 8, 8}));
    Tensor<double> s = clf.classify(tape, bp, phi);

    // independent recomputation with plain double loops
    std::vector<double> logits(8);
    for (size_t c = 0; c < 8; ++c)
        logits[c] = 0.25 * double(c) * h.v()[0] + (c % 2 ? -0.5 : 0.5) * h.v()[1] + 0.01 * double(c);
    double m = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (double& L : logits) {
        L = std::exp(L - m);
        z += L;
    }
    for (size_t c = 0; c < 8; ++c) CHECK(s.v()[c] == doctest::Approx(logits[c] / z).epsilon(1e-6));
}

TEST_CASE("mask_features zeroes exactly the dropped frames and is idempotent") {
    DenoiserModel<float> gen = tiny_denoiser(3);
    ClassifierModel<float> clf = tiny_classifier(gen, 7);
    Tape<float> tape;
    BoundParams<float> bp = clf.bind(tape, false);
    Tensor<float> phi = clf.aggregate(tape, bp, synthetic_maps(tape, clf, 5, 6));

    std::set<size_t> all = {0, 1, 2, 3};
    CHECK(mask_features(tape, phi, all, 4).v() == phi.v());

    std::set<size_t> first_half = {0, 1};
    Tensor<float> masked = mask_features(tape, phi, first_half, 4);
    size_t hw = 8 * 8;
    for (size_t f = 0; f < 4; ++f)
        for (size_t i = 0; i < hw; ++i) {
            float expect = f < 2 ? phi.v()[f * hw + i] : 0.f;
            CHECK(masked.v()[f * hw + i] == expect);
        }
    Tensor<float> twice = mask_features(tape, masked, first_half, 4);
    CHECK(twice.v() == masked.v());

    CHECK_THROWS_WITH_AS((void)mask_features(tape, phi, {}, 4),
                         doctest::Contains("empty constraint interval"), std::runtime_error);
}

TEST_CASE("training pairs: dual inversion doubles examples under one label") {
    DenoiserModel<float> gen = tiny_denoiser(51);
    const WorldConfig& wc = gen.world();
    SceneScript script = sample_scene(kBehind, 4, wc);
    LatentVideo video = render(script, wc);
    PromptSpec prompt = prompt_for_scene(script, wc);
    ClassifierConfig ccfg = tiny_clf_config();

    auto single = make_training_pairs(gen, video, prompt, false, 5, ccfg);
    CHECK(single.size() == 1);
    CHECK(single[0].label == kBehind);
    CHECK_FALSE(single[0].wrong_prompt);

    auto dual = make_training_pairs(gen, video, prompt, true, 5, ccfg);
    CHECK(dual.size() == 2);
    CHECK(dual[0].label == dual[1].label);
    CHECK(dual[1].wrong_prompt);
    // and the wrong prompt never carries the true relation
    for (uint64_t s = 0; s < 40; ++s) {
        Rng rng(mix_seed(s, 0xd0a1ULL));
        int wrong = static_cast<int>(rng.below(LabelVocab::kCount - 1));
        if (wrong >= prompt.relation_label) ++wrong;
        CHECK(wrong != prompt.relation_label);
    }
}

TEST_CASE("frozen backbone reproduces bit-identical features across instances") {
    DenoiserModel<float> gen = tiny_denoiser(3);
    ClassifierModel<float> a = tiny_classifier(gen, 7);
    ClassifierModel<float> b = tiny_classifier(gen, 99);  // different trainable seed
    CHECK(a.backbone().checksum() == b.backbone().checksum());

    Rng rng(6);
    std::vector<float> phi_v(2 * 1 * 4 * 8 * 8);
    for (auto& x : phi_v) x = static_cast<float>(rng.normal());
    auto run = [&](const ClassifierModel<float>& m) {
        Tape<float> tape;
        BoundParams<float> bp = m.bind(tape, false);
        return m.backbone_forward(tape, bp, tape.input({2, 1, 4, 8, 8}, phi_v)).v();
    };
    CHECK(run(a) == run(b));
}

TEST_CASE("classifier checkpoints round-trip and enforce the label order") {
    TempDir dir("clf_ckpt");
    DenoiserModel<float> gen = tiny_denoiser(3);
    ClassifierModel<float> clf = tiny_classifier(gen, 7);
    clf.save(dir.path() / "clf");
    ClassifierModel<float> back = ClassifierModel<float>::load(dir.path() / "clf");
    CHECK(back.trainable().checksum() == clf.trainable().checksum());
    CHECK(back.backbone().checksum() == clf.backbone().checksum());
    KvFile manifest = KvFile::load(dir.path() / "clf" / "manifest.txt");
    CHECK(manifest.get("labels") == LabelVocab::joined());
    CHECK(manifest.get("steps.policy") == "causal-current-step");
}

TEST_CASE("a 16-sample set is learned to full training accuracy") {
    TempDir dir("clf_overfit");
    WorldConfig wc = tiny_world();
    make_dataset(16, 11, dir.path() / "ds", wc);
    DenoiserModel<float> gen = tiny_denoiser(51);
    {
        // train_classifier assumes a trained generator; a short run is enough
        // for the cross-attention to pick up the entity grounding
        RunConfig gcfg;
        gcfg.set("gen.train_iters", "900");
        gcfg.set("gen.batch", "8");
        gcfg.set("gen.lr", "0.003");
        train_denoiser(gen, dir.path() / "ds", gcfg, 1);
    }
    ClassifierModel<float> clf(wc, tiny_clf_config(), gen.config().layers, gen.config().heads,
                               gen.schedule().total_steps, 13);
    RunConfig cfg;
    cfg.set("clf.epochs", "400");
    cfg.set("clf.batch", "16");
    cfg.set("clf.lr", "0.005");
    cfg.set("clf.holdout", "0");
    cfg.set("clf.mask_augment", "0");
    cfg.set("clf.stride", "3");
    cfg.set("clf.invert_fp_iters", "1");
    ClassifierTrainReport rep = train_classifier(clf, dir.path() / "ds", gen, true, cfg, 3, 2);
    CHECK(rep.train_accuracy == 1.0);
    CHECK(rep.backbone_checksum_before == rep.backbone_checksum_after);
    CHECK(rep.examples_consumed > 0);

    // dual consumes exactly twice the examples of non-dual on the same data
    ClassifierModel<float> clf2(wc, tiny_clf_config(), gen.config().layers, gen.config().heads,
                                gen.schedule().total_steps, 13);
    RunConfig cfg2;
    cfg2.set("clf.epochs", "1");
    cfg2.set("clf.holdout", "0");
    cfg2.set("clf.stride", "3");
    cfg2.set("clf.invert_fp_iters", "1");
    ClassifierTrainReport rep2 = train_classifier(clf2, dir.path() / "ds", gen, false, cfg2, 3, 2);
    CHECK(rep.examples_consumed == 2 * rep2.examples_consumed);
}
