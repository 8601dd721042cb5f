#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lvc/io.hpp"
#include "lvc/tensor.hpp"

namespace lvc {

struct WorldConfig {
    size_t frames = 8;
    size_t height = 16;
    size_t width = 16;
    size_t channels = 4;  // occupancy, shape-code, depth, bias
    double fps = 4.0;
    size_t n_shapes = 6;

    static WorldConfig from_config(const RunConfig& cfg);
    size_t cells() const { return frames * height * width; }
};

// The eight relation labels, in the fixed order used across the repo.
class LabelVocab {
  public:
    static constexpr size_t kCount = 8;
    static const std::array<std::string, kCount>& labels();
    static int index(const std::string& name);           // throws on unknown name
    static const std::string& name(int index);
    static std::string joined(char sep = ',');
};

enum Relation : int {
    kAbove = 0,
    kAway = 1,
    kBehind = 2,
    kBeneath = 3,
    kInFrontOf = 4,
    kInside = 5,
    kNextTo = 6,
    kToward = 7,
};

template <typename T>
struct VideoT {
    size_t F = 0, H = 0, W = 0, C = 0;
    std::vector<T> v;

    VideoT() = default;
    VideoT(size_t f, size_t h, size_t w, size_t c) : F(f), H(h), W(w), C(c), v(f * h * w * c, T(0)) {}

    T& at(size_t f, size_t i, size_t j, size_t c) { return v[((f * H + i) * W + j) * C + c]; }
    const T& at(size_t f, size_t i, size_t j, size_t c) const { return v[((f * H + i) * W + j) * C + c]; }
    size_t size() const { return v.size(); }
    Shape shape() const { return {F, H, W, C}; }

    template <typename U>
    VideoT<U> cast() const {
        VideoT<U> out(F, H, W, C);
        for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }
};

using LatentVideo = VideoT<float>;

struct Entity {
    int id = 0;
    int shape = 0;                                // index into the shape vocabulary
    std::vector<std::array<double, 2>> centers;   // per frame {x, y} in [0,1]^2
    double radius = 0.08;
    double depth = 0.5;                           // constant per entity, 0 = front
};

struct SceneScript {
    size_t frames = 0;
    std::vector<Entity> entities;
    int relation = 0;  // LabelVocab index
    int subject_id = 0;
    int object_id = 0;

    const Entity& subject() const;
    const Entity& object() const;
};

// Prompt token ids: shapes occupy [0, n_shapes), relations
// [n_shapes, n_shapes + 8). entity_positions indexes the entity tokens only.
struct PromptSpec {
    std::vector<int> tokens;
    std::vector<int> entity_positions;
    int relation_label = -1;

    static int relation_token(int relation, const WorldConfig& cfg) {
        return static_cast<int>(cfg.n_shapes) + relation;
    }
};

PromptSpec prompt_for_scene(const SceneScript& script, const WorldConfig& cfg);
// Same prompt with the relation token swapped to `relation`.
PromptSpec prompt_with_relation(const PromptSpec& prompt, int relation, const WorldConfig& cfg);
double shape_code(int shape_index, const WorldConfig& cfg);

SceneScript sample_scene(int relation, uint64_t seed, const WorldConfig& cfg);
SceneScript sample_scene(const std::string& relation, uint64_t seed, const WorldConfig& cfg);

LatentVideo render(const SceneScript& script, const WorldConfig& cfg);

// Per-frame entity statistics recovered from the occupancy/shape channels.
struct TrackPoint {
    double x = 0, y = 0;   // unit coordinates
    double radius = 0;
    double depth = 0;
    double mass = 0;
};
std::vector<TrackPoint> estimate_track(const LatentVideo& video, double code, const WorldConfig& cfg);

bool oracle_check(const SceneScript& script, int relation);
// Entities are located by their shape codes; throws "entities not found" when
// either entity has no resolvable occupancy mass.
bool oracle_check(const LatentVideo& video, int relation, int subject_shape, int object_shape,
                  const WorldConfig& cfg);
bool oracle_check(const LatentVideo& video, const PromptSpec& prompt, const WorldConfig& cfg);
// Relation checked on a frame window [first, last].
bool oracle_check_window(const LatentVideo& video, int relation, int subject_shape, int object_shape,
                         const WorldConfig& cfg, size_t first_frame, size_t last_frame);

struct DatasetSample {
    LatentVideo video;
    PromptSpec prompt;
    int label = -1;
};

// Writes n class-balanced samples plus a manifest; returns the manifest.
KvFile make_dataset(size_t n, uint64_t seed, const std::filesystem::path& out_dir, const WorldConfig& cfg,
                    size_t threads = 1);
DatasetSample load_sample(const std::filesystem::path& dir, size_t index);
size_t dataset_count(const std::filesystem::path& dir);

}  // namespace lvc
