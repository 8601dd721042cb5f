#pragma once

#include <filesystem>

#include "lvc/classifier.hpp"
#include "lvc/denoiser.hpp"

namespace lvc::testing {

inline WorldConfig tiny_world() {
    WorldConfig wc;
    wc.frames = 4;
    wc.height = 8;
    wc.width = 8;
    wc.channels = 4;
    wc.fps = 4.0;
    wc.n_shapes = 6;
    return wc;
}

inline GeneratorConfig tiny_gen_config(SelfAttnMode mode = SelfAttnMode::kAxial) {
    GeneratorConfig g;
    g.width = 16;
    g.layers = 2;
    g.heads = 4;
    g.mlp_ratio = 2;
    g.self_attention = mode;
    return g;
}

inline DiffusionSchedule tiny_schedule(size_t steps = 8,
                                       SamplerKind kind = SamplerKind::kDeterministic) {
    return DiffusionSchedule::linear(steps, 0.02, 0.3, kind);
}

inline DenoiserModel<float> tiny_denoiser(uint64_t seed = 11,
                                          SelfAttnMode mode = SelfAttnMode::kAxial,
                                          size_t steps = 8) {
    return DenoiserModel<float>(tiny_world(), tiny_gen_config(mode), tiny_schedule(steps), seed);
}

inline ClassifierConfig tiny_clf_config() {
    ClassifierConfig c;
    c.embed_dim = 32;
    c.heads = 4;
    c.backbone_dim = 64;
    c.backbone_seed = 42;
    c.stride = 3;
    c.invert_fp_iters = 2;
    return c;
}

inline ClassifierModel<float> tiny_classifier(const DenoiserModel<float>& gen, uint64_t seed = 21) {
    return ClassifierModel<float>(gen.world(), tiny_clf_config(), gen.config().layers, gen.config().heads,
                                  gen.schedule().total_steps, seed);
}

inline PromptSpec tiny_prompt(int relation, int subject = 0, int object = 3) {
    PromptSpec p;
    p.tokens = {subject, PromptSpec::relation_token(relation, tiny_world()), object};
    p.entity_positions = {0, 2};
    p.relation_label = relation;
    return p;
}

inline VideoT<float> random_video(const WorldConfig& wc, uint64_t seed) {
    Rng rng(mix_seed(seed, 0x71deULL));
    VideoT<float> v(wc.frames, wc.height, wc.width, wc.channels);
    for (auto& x : v.v) x = static_cast<float>(rng.normal());
    return v;
}

class TempDir {
  public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("lvc_test_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    const std::filesystem::path& path() const { return path_; }

  private:
    std::filesystem::path path_;
};

}  // namespace lvc::testing
