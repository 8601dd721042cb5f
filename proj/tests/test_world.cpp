#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lvc/world.hpp"
#include "test_helpers.hpp"

using namespace lvc;
using lvc::testing::TempDir;

namespace {
const WorldConfig kWorld;  // spec defaults: 8x16x16x4
}

TEST_CASE("label vocabulary is the fixed eight-relation order") {
    CHECK(LabelVocab::kCount == 8);
    CHECK(LabelVocab::joined() == "above,away,behind,beneath,in_front_of,inside,next_to,toward");
    CHECK(LabelVocab::index("toward") == kToward);
    CHECK(LabelVocab::name(kInside) == "inside");
    CHECK_THROWS_WITH_AS(LabelVocab::index("left"), doctest::Contains("unknown relation"),
                         std::runtime_error);
}

TEST_CASE("toward scenes strictly shrink the inter-centroid distance") {
    SceneScript s = sample_scene("toward", 7, kWorld);
    const Entity& sub = s.subject();
    const Entity& obj = s.object();
    double prev = 1e9, total_first = 0, total_last = 0;
    for (size_t f = 0; f < s.frames; ++f) {
        double d = std::hypot(sub.centers[f][0] - obj.centers[f][0], sub.centers[f][1] - obj.centers[f][1]);
        CHECK(d < prev);
        prev = d;
        if (f == 0) total_first = d;
        if (f + 1 == s.frames) total_last = d;
    }
    CHECK(total_first - total_last >= 0.2);
}

TEST_CASE("above scenes keep the subject at least two cells higher in every frame") {
    for (uint64_t seed : {1ull, 9ull, 77ull}) {
        SceneScript s = sample_scene(kAbove, seed, kWorld);
        for (size_t f = 0; f < s.frames; ++f) {
            double sub_row = s.subject().centers[f][1] * kWorld.height;
            double obj_row = s.object().centers[f][1] * kWorld.height;
            CHECK(obj_row - sub_row >= 2.0);
        }
    }
}

TEST_CASE("inside scenes satisfy the containment construction") {
    for (uint64_t seed : {3ull, 14ull}) {
        SceneScript s = sample_scene(kInside, seed, kWorld);
        CHECK(s.subject().radius < 0.6 * s.object().radius);
        for (size_t f = 0; f < s.frames; ++f) {
            double d = std::hypot(s.subject().centers[f][0] - s.object().centers[f][0],
                                  s.subject().centers[f][1] - s.object().centers[f][1]);
            CHECK(d <= 0.4 * s.object().radius);
        }
    }
}

TEST_CASE("unknown relations are rejected") {
    CHECK_THROWS_AS(sample_scene(12, 1, kWorld), std::runtime_error);
}

TEST_CASE("render: empty entity list gives an all-zero occupancy channel") {
    SceneScript s;
    s.frames = kWorld.frames;
    s.relation = kAbove;
    LatentVideo v = render(s, kWorld);
    for (size_t f = 0; f < v.F; ++f)
        for (size_t i = 0; i < v.H; ++i)
            for (size_t j = 0; j < v.W; ++j) {
                CHECK(v.at(f, i, j, 0) == 0.0f);
                CHECK(v.at(f, i, j, 3) == 1.0f);  // bias plane stays one
            }
}

TEST_CASE("render: single centered entity peaks at the center and decays radially") {
    SceneScript s;
    s.frames = 1;
    Entity e;
    e.id = 0;
    e.shape = 2;
    e.radius = 0.12;
    e.depth = 0.4;
    e.centers = {{0.5, 0.5}};
    s.entities = {e};
    s.subject_id = s.object_id = 0;
    LatentVideo v = render(s, kWorld);
    size_t ci = kWorld.height / 2, cj = kWorld.width / 2;
    float peak = 0;
    for (size_t i = 0; i < v.H; ++i)
        for (size_t j = 0; j < v.W; ++j) peak = std::max(peak, v.at(0, i, j, 0));
    // the four cells around (0.5,0.5) tie at the peak
    CHECK(v.at(0, ci, cj, 0) == doctest::Approx(peak));
    CHECK(v.at(0, ci, cj, 0) > v.at(0, ci, cj + 3, 0));
    CHECK(v.at(0, ci, cj + 1, 0) >= v.at(0, ci, cj + 2, 0));
}

TEST_CASE("render: behind scenes put the front entity's depth in overlap cells") {
    SceneScript s = sample_scene(kBehind, 5, kWorld);
    LatentVideo v = render(s, kWorld);
    const Entity& sub = s.subject();
    const Entity& obj = s.object();  // the front entity for "behind"
    REQUIRE(sub.depth > obj.depth);
    size_t overlap_cells = 0;
    for (size_t f = 0; f < v.F; ++f)
        for (size_t i = 0; i < v.H; ++i)
            for (size_t j = 0; j < v.W; ++j) {
                // per-cell recomputation of both footprints
                double x = (j + 0.5) / kWorld.width, y = (i + 0.5) / kWorld.height;
                auto fp = [&](const Entity& e) {
                    double sig = e.radius / 1.6;
                    double dx = x - e.centers[f][0], dy = y - e.centers[f][1];
                    return std::exp(-(dx * dx + dy * dy) / (2 * sig * sig));
                };
                // presence rule of the renderer: support ends at the nominal radius
                if (fp(sub) >= 0.278 && fp(obj) >= 0.278) {
                    ++overlap_cells;
                    CHECK(v.at(f, i, j, 2) == doctest::Approx(obj.depth));
                }
            }
    CHECK(overlap_cells > 0);
}

TEST_CASE("render determinism: identical scripts give bit-identical latents") {
    SceneScript s = sample_scene(kNextTo, 17, kWorld);
    LatentVideo a = render(s, kWorld);
    LatentVideo b = render(s, kWorld);
    CHECK(a.v == b.v);
}

TEST_CASE("oracle: constructed scripts satisfy their own relation and exclude the antisymmetric pair") {
    for (int rel = 0; rel < 8; ++rel) {
        for (uint64_t seed = 0; seed < 20; ++seed) {
            SceneScript s = sample_scene(rel, seed, kWorld);
            CAPTURE(rel);
            CAPTURE(seed);
            CHECK(oracle_check(s, rel));
        }
    }
    for (uint64_t seed = 0; seed < 20; ++seed) {
        CHECK_FALSE(oracle_check(sample_scene(kToward, seed, kWorld), kAway));
        CHECK_FALSE(oracle_check(sample_scene(kAway, seed, kWorld), kToward));
        CHECK_FALSE(oracle_check(sample_scene(kAbove, seed, kWorld), kBeneath));
        CHECK_FALSE(oracle_check(sample_scene(kBeneath, seed, kWorld), kAbove));
        CHECK_FALSE(oracle_check(sample_scene(kInFrontOf, seed, kWorld), kBehind));
        CHECK_FALSE(oracle_check(sample_scene(kBehind, seed, kWorld), kInFrontOf));
    }
}

TEST_CASE("oracle: a static scene is neither toward nor away") {
    SceneScript s = sample_scene(kNextTo, 3, kWorld);
    for (auto& e : s.entities)
        for (size_t f = 1; f < s.frames; ++f) e.centers[f] = e.centers[0];
    CHECK_FALSE(oracle_check(s, kToward));
    CHECK_FALSE(oracle_check(s, kAway));
}

TEST_CASE("oracle round trip: rendered scenes pass the video-path check for all relations") {
    for (int rel = 0; rel < 8; ++rel)
        for (uint64_t seed = 100; seed < 120; ++seed) {
            SceneScript s = sample_scene(rel, seed, kWorld);
            LatentVideo v = render(s, kWorld);
            CAPTURE(rel);
            CAPTURE(seed);
            CHECK(oracle_check(v, rel, s.subject().shape, s.object().shape, kWorld));
        }
}

TEST_CASE("oracle: videos without occupancy mass raise entities-not-found") {
    LatentVideo empty(kWorld.frames, kWorld.height, kWorld.width, kWorld.channels);
    CHECK_THROWS_WITH_AS(oracle_check(empty, kAbove, 0, 3, kWorld), doctest::Contains("entities not found"),
                         std::runtime_error);
}

TEST_CASE("estimated radius tracks the scripted radius") {
    SceneScript s;
    s.frames = 1;
    Entity e;
    e.id = 0;
    e.shape = 4;
    e.radius = 0.15;
    e.depth = 0.4;
    e.centers = {{0.5, 0.5}};
    s.entities = {e};
    s.subject_id = s.object_id = 0;
    LatentVideo v = render(s, kWorld);
    auto track = estimate_track(v, shape_code(4, kWorld), kWorld);
    CHECK(track[0].mass > 1.0);
    CHECK(track[0].radius == doctest::Approx(0.15).epsilon(0.25));
    CHECK(track[0].x == doctest::Approx(0.5).epsilon(0.05));
    CHECK(track[0].depth == doctest::Approx(0.4).epsilon(0.05));
}

TEST_CASE("make_dataset balances labels and is byte-identical across reruns") {
    TempDir dir("world_ds");
    auto d1 = dir.path() / "a";
    auto d2 = dir.path() / "b";
    make_dataset(8, 5, d1, kWorld);
    make_dataset(8, 5, d2, kWorld);
    CHECK(checksum_tree(d1) == checksum_tree(d2));
    CHECK(dataset_count(d1) == 8);
    std::set<int> labels;
    for (size_t i = 0; i < 8; ++i) {
        DatasetSample s = load_sample(d1, i);
        labels.insert(s.label);
        CHECK(s.video.F == kWorld.frames);
        CHECK(s.prompt.entity_positions == std::vector<int>{0, 2});
        CHECK(s.prompt.tokens.size() == 3);
    }
    CHECK(labels.size() == 8);  // one sample per label

    KvFile manifest = KvFile::load(d1 / "manifest.txt");
    CHECK(manifest.get("labels") == LabelVocab::joined());
    CHECK(manifest.get("shapes") == "8x16x16x4");
}

TEST_CASE("make_dataset with 80 samples yields ten per label and supports threads") {
    TempDir dir("world_bal");
    auto d1 = dir.path() / "st";
    auto d2 = dir.path() / "mt";
    make_dataset(80, 9, d1, kWorld, 1);
    make_dataset(80, 9, d2, kWorld, 2);
    CHECK(checksum_tree(d1) == checksum_tree(d2));  // fan-out cannot change bytes
    std::map<int, int> counts;
    for (size_t i = 0; i < 80; ++i) counts[load_sample(d1, i).label]++;
    for (auto& [label, count] : counts) CHECK(count == 10);
}

TEST_CASE("prompt construction withholds the relation token from entity positions") {
    SceneScript s = sample_scene(kInFrontOf, 2, kWorld);
    PromptSpec p = prompt_for_scene(s, kWorld);
    CHECK(p.tokens.size() == 3);
    CHECK(p.tokens[1] == PromptSpec::relation_token(kInFrontOf, kWorld));
    for (int pos : p.entity_positions) CHECK(pos != 1);
    PromptSpec q = prompt_with_relation(p, kAway, kWorld);
    CHECK(q.tokens[1] == PromptSpec::relation_token(kAway, kWorld));
    CHECK(q.tokens[0] == p.tokens[0]);
    CHECK(q.relation_label == p.relation_label);  // the label stays the truth
}
