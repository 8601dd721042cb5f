#pragma once

#include <filesystem>
#include <set>
#include <vector>

#include "lvc/denoiser.hpp"

namespace lvc {

struct ClassifierConfig {
    size_t embed_dim = 128;     // shared aggregation embedding width d
    size_t heads = 4;           // aggregation encoder heads
    size_t backbone_dim = 256;  // frozen feature width
    uint64_t backbone_seed = 42;
    size_t stride = 5;          // extraction stride over denoising steps
    size_t invert_fp_iters = 2;

    static ClassifierConfig from_config(const RunConfig& cfg);
};

// A map already on a tape, carrying its identity metadata.
template <typename T>
struct MapRef {
    MapMeta meta;
    Tensor<T> map;  // [F,H,W]
};

template <typename T>
class ClassifierModel {
  public:
    ClassifierModel() = default;
    // Embedding table sizes follow the generator the maps come from.
    ClassifierModel(WorldConfig world, ClassifierConfig ccfg, size_t gen_layers, size_t gen_heads,
                    size_t total_steps, uint64_t seed);

    const WorldConfig& world() const { return world_; }
    const ClassifierConfig& config() const { return ccfg_; }
    size_t gen_layers() const { return gen_layers_; }
    size_t total_steps() const { return total_steps_; }
    ParameterSet<T>& trainable() { return trainable_; }
    const ParameterSet<T>& trainable() const { return trainable_; }
    const ParameterSet<T>& backbone() const { return backbone_; }

    BoundParams<T> bind(Tape<T>& tape, bool train_mode) const;

    // Batched single-step aggregation: maps3 is [B, N, F*H*W] with per-token
    // layer/head/time ids; returns phi slices [B, 1, F, H, W].
    Tensor<T> aggregate_batch(Tape<T>& tape, const BoundParams<T>& bp, Tensor<T> maps3,
                              const std::vector<int>& layer_ids, const std::vector<int>& head_ids,
                              const std::vector<int>& time_ids) const;

    // Full aggregation of one map set: groups by ascending step, aggregates
    // each step, concatenates to phi [S, F, H, W]. Input order is
    // canonicalized from the metadata, so shuffled inputs give identical
    // output.
    Tensor<T> aggregate(Tape<T>& tape, const BoundParams<T>& bp, std::vector<MapRef<T>> maps) const;

    // Frozen backbone: phi [B, S, F, H, W] -> h [B, backbone_dim].
    Tensor<T> backbone_forward(Tape<T>& tape, const BoundParams<T>& bp, Tensor<T> phi) const;

    // phi [S,F,H,W] -> 8-way score simplex.
    Tensor<T> classify(Tape<T>& tape, const BoundParams<T>& bp, Tensor<T> phi) const;
    // batched variant: phi [B,S,F,H,W] -> [B,8]
    Tensor<T> classify_batch(Tape<T>& tape, const BoundParams<T>& bp, Tensor<T> phi) const;

    void save(const std::filesystem::path& dir) const;
    static ClassifierModel<T> load(const std::filesystem::path& dir);

    template <typename U>
    ClassifierModel<U> cast() const {
        ClassifierModel<U> out;
        out.world_ = world_;
        out.ccfg_ = ccfg_;
        out.gen_layers_ = gen_layers_;
        out.gen_heads_ = gen_heads_;
        out.total_steps_ = total_steps_;
        out.trainable_ = trainable_.template cast<U>();
        out.backbone_ = backbone_.template cast<U>();
        return out;
    }

    template <typename U>
    friend class ClassifierModel;

  private:
    WorldConfig world_;
    ClassifierConfig ccfg_;
    size_t gen_layers_ = 0, gen_heads_ = 0, total_steps_ = 0;
    ParameterSet<T> trainable_;  // aggregation module + classification head
    ParameterSet<T> backbone_;   // fixed-seed feature network, never trained

    void build_backbone();
};

// Zeroes the frames outside `keep_frames` in every step slice of phi
// ([S,F,H,W] or [B,S,F,H,W]). Throws on an empty frame set.
template <typename T>
Tensor<T> mask_features(Tape<T>& tape, Tensor<T> phi, const std::set<size_t>& keep_frames,
                        size_t frames);

template <typename T>
struct TrainingPair {
    AttentionMapSet<T> maps;
    int label = -1;
    bool wrong_prompt = false;  // true for the p- half of a dual pair
};

// Inverts the video under its correct prompt and, when dual is set, under a
// uniformly drawn wrong-relation prompt; both carry the true label.
std::vector<TrainingPair<float>> make_training_pairs(const DenoiserModel<float>& gen,
                                                     const LatentVideo& video, const PromptSpec& prompt,
                                                     bool dual, uint64_t seed, const ClassifierConfig& ccfg);

struct ClassifierTrainReport {
    double train_accuracy = 0;          // video-level on the training split
    double holdout_accuracy = 0;        // video-level, mean of per-step scores
    double holdout_step_accuracy = 0;   // per-step examples
    size_t train_videos = 0;
    size_t holdout_videos = 0;
    size_t examples_consumed = 0;       // forward examples per epoch
    uint64_t backbone_checksum_before = 0;
    uint64_t backbone_checksum_after = 0;
};

ClassifierTrainReport train_classifier(ClassifierModel<float>& model, const std::filesystem::path& dataset_dir,
                                       const DenoiserModel<float>& gen, bool dual, const RunConfig& cfg,
                                       uint64_t seed, size_t threads = 1,
                                       const std::function<void(const std::string&)>& log = {});

// Mean probability vector over the per-step examples of one map set.
std::vector<double> classify_video(const ClassifierModel<float>& model, const AttentionMapSet<float>& maps);

}  // namespace lvc
