#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lvc/params.hpp"
#include "lvc/schedule.hpp"
#include "lvc/world.hpp"

namespace lvc {

enum class SelfAttnMode { kAxial, kFull, kOff };

struct GeneratorConfig {
    size_t width = 32;
    size_t layers = 3;
    size_t heads = 4;
    size_t mlp_ratio = 2;
    SelfAttnMode self_attention = SelfAttnMode::kAxial;

    static GeneratorConfig from_config(const RunConfig& cfg);
};

struct MapMeta {
    int step = 0;
    int layer = 0;
    int head = 0;
    int token_pos = 0;  // position within the prompt, always in K(p)
};

// Detached attention maps, grouped by ascending step then (layer, head, pos).
template <typename T>
struct AttentionMapSet {
    size_t F = 0, H = 0, W = 0;
    std::vector<int> steps;  // ascending
    struct Item {
        MapMeta meta;
        std::vector<T> values;  // F*H*W in [0,1]
    };
    std::vector<Item> maps;
};

// Attention maps still attached to a live tape (gradients flow through them).
template <typename T>
struct LiveMapSet {
    size_t F = 0, H = 0, W = 0;
    std::vector<int> steps;
    struct Item {
        MapMeta meta;
        Tensor<T> map;  // [F,H,W]
    };
    std::vector<Item> maps;
};

// Bound tape leaves of a parameter set, by name.
template <typename T>
struct BoundParams {
    std::map<std::string, Tensor<T>> leaves;
    Tensor<T> at(const std::string& name) const {
        auto it = leaves.find(name);
        if (it == leaves.end()) throw std::runtime_error("unbound parameter " + name);
        return it->second;
    }
};

template <typename T>
struct Trajectory {
    std::vector<VideoT<T>> latents;  // latents[t] = z_t, t = 0..T
    const VideoT<T>& z(size_t t) const { return latents.at(t); }
    size_t steps() const { return latents.empty() ? 0 : latents.size() - 1; }
};

template <typename T>
class DenoiserModel {
  public:
    DenoiserModel() = default;
    DenoiserModel(WorldConfig world, GeneratorConfig gcfg, DiffusionSchedule sched, uint64_t seed);

    const WorldConfig& world() const { return world_; }
    const GeneratorConfig& config() const { return gcfg_; }
    const DiffusionSchedule& schedule() const { return sched_; }
    DiffusionSchedule& schedule() { return sched_; }
    const ParameterSet<T>& params() const { return params_; }
    ParameterSet<T>& params() { return params_; }
    size_t vocab_size() const { return world_.n_shapes + LabelVocab::kCount + 1; }
    int null_token() const { return static_cast<int>(vocab_size()) - 1; }

    // Batched noise prediction on an existing tape. z is [B,F,H,W,C];
    // step/prompt are per batch element. When `record` is non-null the
    // cross-attention of every layer/head is captured for the entity tokens
    // (batch size 1 only); `full_weights` additionally receives each layer's
    // complete [B,heads,S,P] weight tensor.
    Tensor<T> forward(Tape<T>& tape, const BoundParams<T>& bp, Tensor<T> z, const std::vector<int>& step,
                      const std::vector<PromptSpec>& prompts, LiveMapSet<T>* record = nullptr,
                      std::vector<Tensor<T>>* full_weights = nullptr) const;

    Tensor<T> forward(Tape<T>& tape, Tensor<T> z, const std::vector<int>& step,
                      const std::vector<PromptSpec>& prompts, bool train_mode,
                      LiveMapSet<T>* record = nullptr,
                      std::vector<Tensor<T>>* full_weights = nullptr) const {
        BoundParams<T> bp = bind(tape, train_mode);
        return forward(tape, bp, z, step, prompts, record, full_weights);
    }

    BoundParams<T> bind(Tape<T>& tape, bool train_mode) const;

    void save(const std::filesystem::path& dir) const;
    static DenoiserModel<T> load(const std::filesystem::path& dir);

    template <typename U>
    DenoiserModel<U> cast() const {
        DenoiserModel<U> out;
        out.world_ = world_;
        out.gcfg_ = gcfg_;
        out.sched_ = sched_;
        out.params_ = params_.template cast<U>();
        return out;
    }

    template <typename U>
    friend class DenoiserModel;

  private:
    WorldConfig world_;
    GeneratorConfig gcfg_;
    DiffusionSchedule sched_;
    ParameterSet<T> params_;
};

// One denoising evaluation; returns the noise estimate and, when requested,
// the recorded entity-token attention maps for this step.
template <typename T>
std::pair<VideoT<T>, AttentionMapSet<T>> denoise_step(const DenoiserModel<T>& model, const VideoT<T>& z_t,
                                                      size_t t, const PromptSpec& prompt, bool record);

// step_hook may replace z_t before the model is evaluated at step t.
template <typename T>
using StepHook = std::function<VideoT<T>(const VideoT<T>&, size_t)>;

template <typename T>
VideoT<T> sample(const DenoiserModel<T>& model, const PromptSpec& prompt, uint64_t seed,
                 const StepHook<T>& hook = {}, const VideoT<T>* init_latent = nullptr);

template <typename T>
Trajectory<T> invert(const DenoiserModel<T>& model, const VideoT<T>& video, const PromptSpec& prompt,
                     size_t fixed_point_iters = 2);

template <typename T>
AttentionMapSet<T> extract_maps(const DenoiserModel<T>& model, const Trajectory<T>& trajectory,
                                const PromptSpec& prompt, size_t stride);

// Step set {T, T-stride, ...} with the final step t=1 always included.
std::vector<int> extraction_steps(size_t total_steps, size_t stride);

struct TrainStats {
    double initial_loss = 0;
    double final_loss = 0;
    std::vector<double> loss_curve;  // sampled every ~50 iterations
};

TrainStats train_denoiser(DenoiserModel<float>& model, const std::filesystem::path& dataset_dir,
                          const RunConfig& cfg, uint64_t seed,
                          const std::function<void(size_t, double)>& progress = {});

PromptSpec unconditional_prompt(const WorldConfig& cfg);

}  // namespace lvc
