#pragma once

#include <set>

#include "lvc/classifier.hpp"
#include "lvc/denoiser.hpp"

namespace lvc {

struct GuidanceSchedule {
    std::set<size_t> guided_steps;  // sampler step indices in [1, T]
    double eta = 0.5;
    bool normalize_grad = true;
    size_t inner_iters = 1;

    // The first n denoising steps, i.e. {T, T-1, ..., T-n+1}.
    static GuidanceSchedule first_n(size_t n, size_t total_steps, double eta = 0.5);
    static GuidanceSchedule all_steps(size_t total_steps, double eta = 0.5);
    static GuidanceSchedule none();
    static GuidanceSchedule from_config(const RunConfig& cfg, size_t total_steps);
};

struct CompositionConstraint {
    int label = 0;
    double tau_start = 0;  // seconds
    double tau_end = 0;
    double weight = 1.0;

    // Frames f with f/fps in [tau_start, tau_end); throws if empty or reversed.
    std::set<size_t> frames(const WorldConfig& cfg) const;
};

struct ARSegment {
    PromptSpec prompt;
    int label = 0;
};

template <typename T>
struct CompLossResult {
    double loss = 0;
    VideoT<T> grad;
};

// L_comp = -log s_t[y] through denoiser, aggregation, backbone and head.
template <typename T>
double comp_loss(const DenoiserModel<T>& gen, const ClassifierModel<T>& clf, const VideoT<T>& z_t,
                 size_t t, const PromptSpec& prompt, int y);

template <typename T>
CompLossResult<T> comp_loss_grad(const DenoiserModel<T>& gen, const ClassifierModel<T>& clf,
                                 const VideoT<T>& z_t, size_t t, const PromptSpec& prompt, int y);

template <typename T>
double multi_loss(const DenoiserModel<T>& gen, const ClassifierModel<T>& clf, const VideoT<T>& z_t,
                  size_t t, const PromptSpec& prompt, const std::vector<CompositionConstraint>& constraints);

template <typename T>
CompLossResult<T> multi_loss_grad(const DenoiserModel<T>& gen, const ClassifierModel<T>& clf,
                                  const VideoT<T>& z_t, size_t t, const PromptSpec& prompt,
                                  const std::vector<CompositionConstraint>& constraints);

// One Eq.-style latent update: z' = z - eta * grad (gradient optionally
// rescaled to unit RMS), repeated inner_iters times.
template <typename T>
VideoT<T> guided_update(const DenoiserModel<T>& gen, const ClassifierModel<T>& clf, const VideoT<T>& z_t,
                        size_t t, const PromptSpec& prompt, int y, const GuidanceSchedule& schedule);

template <typename T>
VideoT<T> guided_sample(const DenoiserModel<T>& gen, const ClassifierModel<T>& clf, const PromptSpec& prompt,
                        int y, uint64_t seed, const GuidanceSchedule& schedule,
                        size_t* guided_step_count = nullptr);

template <typename T>
VideoT<T> multi_guided_sample(const DenoiserModel<T>& gen, const ClassifierModel<T>& clf,
                              const PromptSpec& prompt, const std::vector<CompositionConstraint>& constraints,
                              uint64_t seed, const GuidanceSchedule& schedule,
                              size_t* guided_step_count = nullptr);

template <typename T>
struct ARResult {
    VideoT<T> video;                 // temporal concatenation, seams shared once
    std::vector<VideoT<T>> batches;  // full per-batch videos
    size_t context_frames = 0;
};

// Sequential batch generation; batch m conditions on the last context_frames
// frames of batch m-1 (held fixed during its denoising) and is guided toward
// its own (prompt, label).
template <typename T>
ARResult<T> ar_guided_sample(const DenoiserModel<T>& gen, const ClassifierModel<T>& clf,
                             const std::vector<ARSegment>& segments, uint64_t seed,
                             const GuidanceSchedule& schedule, size_t context_frames);

// CLI syntax helpers: "toward:0.0:2.0:1.0,away:2.0:4.0" and "toward|away".
std::vector<CompositionConstraint> parse_constraints(const std::string& text);
std::vector<std::string> parse_segments(const std::string& text);

}  // namespace lvc
