#include "lvc/guidance.hpp"

#include <cmath>
#include <sstream>

#include "lvc/rng.hpp"

namespace lvc {

GuidanceSchedule GuidanceSchedule::first_n(size_t n, size_t total_steps, double eta) {
    GuidanceSchedule s;
    s.eta = eta;
    for (size_t i = 0; i < n && i < total_steps; ++i) s.guided_steps.insert(total_steps - i);
    return s;
}

GuidanceSchedule GuidanceSchedule::all_steps(size_t total_steps, double eta) {
    GuidanceSchedule s;
    s.eta = eta;
    for (size_t t = 1; t <= total_steps; ++t) s.guided_steps.insert(t);
    return s;
}

GuidanceSchedule GuidanceSchedule::none() { return GuidanceSchedule{{}, 0.5, true, 1}; }

GuidanceSchedule GuidanceSchedule::from_config(const RunConfig& cfg, size_t total_steps) {
    const std::string& mode = cfg.get("guid.mode");
    GuidanceSchedule s;
    if (mode == "first")
        s = first_n(cfg.get_u64("guid.count"), total_steps);
    else if (mode == "all")
        s = all_steps(total_steps);
    else if (mode == "none")
        s = none();
    else
        throw std::runtime_error("guid.mode must be first, all or none");
    s.eta = cfg.get_f64("guid.eta");
    s.normalize_grad = cfg.get_bool("guid.normalize");
    s.inner_iters = cfg.get_u64("guid.inner_iters");
    if (s.eta < 0) throw std::runtime_error("guid.eta must be >= 0");
    return s;
}

std::set<size_t> CompositionConstraint::frames(const WorldConfig& cfg) const {
    if (!(tau_start < tau_end))
        throw std::runtime_error("constraint interval must satisfy start < end");
    std::set<size_t> out;
    for (size_t f = 0; f < cfg.frames; ++f) {
        double tsec = static_cast<double>(f) / cfg.fps;
        if (tsec >= tau_start && tsec < tau_end) out.insert(f);
    }
    if (out.empty()) throw std::runtime_error("empty constraint interval");
    return out;
}

namespace {

// Shared chain: denoise with recording, aggregate the live step, classify.
// Returns the score tensor and phi; z stays the only differentiable leaf.
template <typename T>
struct Chain {
    Tape<T> tape;
    Tensor<T> z;
    Tensor<T> phi;
    BoundParams<T> clf_bp;
};

template <typename T>
std::unique_ptr<Chain<T>> build_chain(const DenoiserModel<T>& gen, const ClassifierModel<T>& clf,
                                      const VideoT<T>& z_t, size_t t, const PromptSpec& prompt,
                                      bool want_grad) {
    if (prompt.entity_positions.empty())
        throw std::runtime_error("guidance needs a prompt with entity tokens");
    const WorldConfig& wc = gen.world();
    auto chain = std::make_unique<Chain<T>>();
    chain->z = chain->tape.input({1, wc.frames, wc.height, wc.width, wc.channels}, z_t.v, want_grad);
    LiveMapSet<T> live;
    live.F = wc.frames;
    live.H = wc.height;
    live.W = wc.width;
    live.steps = {static_cast<int>(t)};
    gen.forward(chain->tape, chain->z, {static_cast<int>(t)}, {prompt}, /*train_mode=*/false, &live);
    chain->clf_bp = clf.bind(chain->tape, false);
    std::vector<MapRef<T>> refs;
    refs.reserve(live.maps.size());
    for (const auto& item : live.maps) refs.push_back({item.meta, item.map});
    chain->phi = clf.aggregate(chain->tape, chain->clf_bp, std::move(refs));
    return chain;
}

template <typename T>
Tensor<T> nll_of_label(Tape<T>& tape, Tensor<T> scores, int y) {
    if (y < 0 || y >= static_cast<int>(LabelVocab::kCount))
        throw std::runtime_error("target label out of range: " + std::to_string(y));
    return tape.neg(tape.log_(tape.pick(scores, static_cast<size_t>(y))));
}

template <typename T>
VideoT<T> grad_of_z(Chain<T>& chain, const WorldConfig& wc) {
    VideoT<T> g(wc.frames, wc.height, wc.width, wc.channels);
    g.v = chain.z.g();
    return g;
}

double rms_of(const std::vector<double>& acc) {
    double s = 0;
    for (double x : acc) s += x * x;
    return std::sqrt(s / static_cast<double>(acc.size()));
}

}  // namespace

template <typename T>
double comp_loss(const DenoiserModel<T>& gen, const ClassifierModel<T>& clf, const VideoT<T>& z_t,
                 size_t t, const PromptSpec& prompt, int y) {
    auto chain = build_chain(gen, clf, z_t, t, prompt, false);
    Tensor<T> s = clf.classify(chain->tape, chain->clf_bp, chain->phi);
    Tensor<T> loss = nll_of_label(chain->tape, s, y);
    return static_cast<double>(loss.v()[0]);
}

template <typename T>
CompLossResult<T> comp_loss_grad(const DenoiserModel<T>& gen, const ClassifierModel<T>& clf,
                                 const VideoT<T>& z_t, size_t t, const PromptSpec& prompt, int y) {
    auto chain = build_chain(gen, clf, z_t, t, prompt, true);
    Tensor<T> s = clf.classify(chain->tape, chain->clf_bp, chain->phi);
    Tensor<T> loss = nll_of_label(chain->tape, s, y);
    chain->tape.backward(loss);
    CompLossResult<T> out;
    out.loss = static_cast<double>(loss.v()[0]);
    out.grad = grad_of_z(*chain, gen.world());
    return out;
}

template <typename T>
static Tensor<T> multi_loss_tensor(const DenoiserModel<T>& gen, const ClassifierModel<T>& clf,
                                   Chain<T>& chain, const PromptSpec& prompt,
                                   const std::vector<CompositionConstraint>& constraints) {
    (void)prompt;
    if (constraints.empty()) throw std::runtime_error("multi_loss: no constraints");
    const WorldConfig& wc = gen.world();
    Tensor<T> total;
    for (size_t i = 0; i < constraints.size(); ++i) {
        const CompositionConstraint& c = constraints[i];
        std::set<size_t> omega = c.frames(wc);
        Tensor<T> masked = mask_features(chain.tape, chain.phi, omega, wc.frames);
        Tensor<T> s = clf.classify(chain.tape, chain.clf_bp, masked);
        Tensor<T> term = chain.tape.scale(nll_of_label(chain.tape, s, c.label), static_cast<T>(c.weight));
        total = i == 0 ? term : chain.tape.add(total, term);
    }
    return total;
}

template <typename T>
double multi_loss(const DenoiserModel<T>& gen, const ClassifierModel<T>& clf, const VideoT<T>& z_t,
                  size_t t, const PromptSpec& prompt, const std::vector<CompositionConstraint>& constraints) {
    auto chain = build_chain(gen, clf, z_t, t, prompt, false);
    return static_cast<double>(multi_loss_tensor(gen, clf, *chain, prompt, constraints).v()[0]);
}

template <typename T>
CompLossResult<T> multi_loss_grad(const DenoiserModel<T>& gen, const ClassifierModel<T>& clf,
                                  const VideoT<T>& z_t, size_t t, const PromptSpec& prompt,
                                  const std::vector<CompositionConstraint>& constraints) {
    auto chain = build_chain(gen, clf, z_t, t, prompt, true);
    Tensor<T> loss = multi_loss_tensor(gen, clf, *chain, prompt, constraints);
    chain->tape.backward(loss);
    CompLossResult<T> out;
    out.loss = static_cast<double>(loss.v()[0]);
    out.grad = grad_of_z(*chain, gen.world());
    return out;
}

namespace {

// Apply z' = z - eta * g with optional unit-RMS rescaling; shared by the
// single-, multi- and AR-composition updates.
template <typename T>
VideoT<T> apply_update(const VideoT<T>& z, const VideoT<T>& grad, size_t t, const GuidanceSchedule& sch) {
    std::vector<double> g(grad.v.size());
    for (size_t i = 0; i < g.size(); ++i) {
        g[i] = static_cast<double>(grad.v[i]);
        if (!std::isfinite(g[i]))
            throw std::runtime_error("guidance diverged at step " + std::to_string(t));
    }
    if (sch.normalize_grad) {
        double r = rms_of(g);
        if (r > 0)
            for (double& x : g) x /= r;
    }
    VideoT<T> out = z;
    for (size_t i = 0; i < g.size(); ++i)
        out.v[i] = static_cast<T>(static_cast<double>(out.v[i]) - sch.eta * g[i]);
    return out;
}

}  // namespace

template <typename T>
VideoT<T> guided_update(const DenoiserModel<T>& gen, const ClassifierModel<T>& clf, const VideoT<T>& z_t,
                        size_t t, const PromptSpec& prompt, int y, const GuidanceSchedule& schedule) {
    VideoT<T> z = z_t;
    for (size_t k = 0; k < std::max<size_t>(schedule.inner_iters, 1); ++k) {
        CompLossResult<T> res = comp_loss_grad(gen, clf, z, t, prompt, y);
        z = apply_update(z, res.grad, t, schedule);
    }
    return z;
}

template <typename T>
VideoT<T> guided_sample(const DenoiserModel<T>& gen, const ClassifierModel<T>& clf, const PromptSpec& prompt,
                        int y, uint64_t seed, const GuidanceSchedule& schedule, size_t* guided_step_count) {
    size_t count = 0;
    StepHook<T> hook = [&](const VideoT<T>& z, size_t t) -> VideoT<T> {
        if (!schedule.guided_steps.count(t)) return z;
        ++count;
        return guided_update(gen, clf, z, t, prompt, y, schedule);
    };
    VideoT<T> out = sample(gen, prompt, seed, hook);
    if (guided_step_count) *guided_step_count = count;
    return out;
}

template <typename T>
VideoT<T> multi_guided_sample(const DenoiserModel<T>& gen, const ClassifierModel<T>& clf,
                              const PromptSpec& prompt, const std::vector<CompositionConstraint>& constraints,
                              uint64_t seed, const GuidanceSchedule& schedule, size_t* guided_step_count) {
    if (constraints.empty()) throw std::runtime_error("multi_guided_sample: no constraints");
    const WorldConfig& wc = gen.world();
    for (const auto& c : constraints) c.frames(wc);  // validates intervals up front
    size_t count = 0;
    StepHook<T> hook = [&](const VideoT<T>& z, size_t t) -> VideoT<T> {
        if (!schedule.guided_steps.count(t)) return z;
        ++count;
        VideoT<T> cur = z;
        for (size_t k = 0; k < std::max<size_t>(schedule.inner_iters, 1); ++k) {
            CompLossResult<T> res = multi_loss_grad(gen, clf, cur, t, prompt, constraints);
            cur = apply_update(cur, res.grad, t, schedule);
        }
        return cur;
    };
    VideoT<T> out = sample(gen, prompt, seed, hook);
    if (guided_step_count) *guided_step_count = count;
    return out;
}

template <typename T>
ARResult<T> ar_guided_sample(const DenoiserModel<T>& gen, const ClassifierModel<T>& clf,
                             const std::vector<ARSegment>& segments, uint64_t seed,
                             const GuidanceSchedule& schedule, size_t context_frames) {
    if (segments.empty()) throw std::runtime_error("ar_guided_sample: no segments");
    const WorldConfig& wc = gen.world();
    if (context_frames >= wc.frames)
        throw std::runtime_error("ar_guided_sample: context_frames must be < frames per batch");
    const DiffusionSchedule& sc = gen.schedule();

    ARResult<T> out;
    out.context_frames = context_frames;
    const size_t frame_sz = wc.height * wc.width * wc.channels;

    for (size_t m = 0; m < segments.size(); ++m) {
        const ARSegment& seg = segments[m];
        uint64_t seg_seed = m == 0 ? seed : mix_seed(seed, 0xa6000000ULL + m);

        std::vector<T> ctx;      // last context_frames of the previous batch
        std::vector<T> ctx_eps;  // frozen conditioning noise for this batch
        bool has_ctx = m > 0 && context_frames > 0;
        if (has_ctx) {
            const VideoT<T>& prev = out.batches.back();
            ctx.assign(prev.v.end() - static_cast<long>(context_frames * frame_sz), prev.v.end());
            Rng rng(mix_seed(seed, 0xcc000000ULL + m));
            ctx_eps.resize(ctx.size());
            for (auto& x : ctx_eps) x = static_cast<T>(rng.normal());
        }

        auto clamp_context = [&](VideoT<T>& z, size_t t) {
            if (!has_ctx) return;
            double sab = sc.sqrt_ab(t), s1m = sc.sqrt_1mab(t);
            for (size_t i = 0; i < ctx.size(); ++i)
                z.v[i] = static_cast<T>(sab * ctx[i] + s1m * ctx_eps[i]);
        };

        StepHook<T> hook = [&](const VideoT<T>& z, size_t t) -> VideoT<T> {
            VideoT<T> cur = z;
            if (schedule.guided_steps.count(t))
                cur = guided_update(gen, clf, cur, t, seg.prompt, seg.label, schedule);
            clamp_context(cur, t);
            return cur;
        };

        VideoT<T> batch = sample(gen, seg.prompt, seg_seed, hook);
        if (has_ctx)  // context frames equal the previous tail exactly
            std::copy(ctx.begin(), ctx.end(), batch.v.begin());
        out.batches.push_back(std::move(batch));
    }

    // temporal concatenation with each seam's shared frames appearing once
    size_t total_frames = wc.frames + (segments.size() - 1) * (wc.frames - context_frames);
    out.video = VideoT<T>(total_frames, wc.height, wc.width, wc.channels);
    size_t off = 0;
    for (size_t m = 0; m < out.batches.size(); ++m) {
        size_t skip = m == 0 ? 0 : context_frames;
        std::copy(out.batches[m].v.begin() + static_cast<long>(skip * frame_sz), out.batches[m].v.end(),
                  out.video.v.begin() + static_cast<long>(off * frame_sz));
        off += wc.frames - skip;
    }
    return out;
}

std::vector<CompositionConstraint> parse_constraints(const std::string& text) {
    std::vector<CompositionConstraint> out;
    std::istringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        std::vector<std::string> parts;
        std::istringstream ps(item);
        std::string p;
        while (std::getline(ps, p, ':')) parts.push_back(p);
        if (parts.size() < 3 || parts.size() > 4)
            throw std::runtime_error("constraint must be label:start:end[:weight], got: " + item);
        CompositionConstraint c;
        c.label = LabelVocab::index(parts[0]);
        c.tau_start = std::stod(parts[1]);
        c.tau_end = std::stod(parts[2]);
        c.weight = parts.size() == 4 ? std::stod(parts[3]) : 1.0;
        if (c.weight < 0) throw std::runtime_error("constraint weight must be >= 0");
        out.push_back(c);
    }
    if (out.empty()) throw std::runtime_error("no constraints parsed from: " + text);
    return out;
}

std::vector<std::string> parse_segments(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream ss(text);
    std::string item;
    while (std::getline(ss, item, '|'))
        if (!item.empty()) out.push_back(item);
    if (out.empty()) throw std::runtime_error("no segments parsed from: " + text);
    return out;
}

#define LVC_INSTANTIATE(T)                                                                               \
    template double comp_loss(const DenoiserModel<T>&, const ClassifierModel<T>&, const VideoT<T>&,     \
                              size_t, const PromptSpec&, int);                                           \
    template CompLossResult<T> comp_loss_grad(const DenoiserModel<T>&, const ClassifierModel<T>&,       \
                                              const VideoT<T>&, size_t, const PromptSpec&, int);        \
    template double multi_loss(const DenoiserModel<T>&, const ClassifierModel<T>&, const VideoT<T>&,    \
                               size_t, const PromptSpec&, const std::vector<CompositionConstraint>&);   \
    template CompLossResult<T> multi_loss_grad(const DenoiserModel<T>&, const ClassifierModel<T>&,      \
                                               const VideoT<T>&, size_t, const PromptSpec&,             \
                                               const std::vector<CompositionConstraint>&);              \
    template VideoT<T> guided_update(const DenoiserModel<T>&, const ClassifierModel<T>&,                \
                                     const VideoT<T>&, size_t, const PromptSpec&, int,                  \
                                     const GuidanceSchedule&);                                           \
    template VideoT<T> guided_sample(const DenoiserModel<T>&, const ClassifierModel<T>&,                \
                                     const PromptSpec&, int, uint64_t, const GuidanceSchedule&,         \
                                     size_t*);                                                           \
    template VideoT<T> multi_guided_sample(const DenoiserModel<T>&, const ClassifierModel<T>&,          \
                                           const PromptSpec&, const std::vector<CompositionConstraint>&, \
                                           uint64_t, const GuidanceSchedule&, size_t*);                  \
    template ARResult<T> ar_guided_sample(const DenoiserModel<T>&, const ClassifierModel<T>&,           \
                                          const std::vector<ARSegment>&, uint64_t,                      \
                                          const GuidanceSchedule&, size_t);

LVC_INSTANTIATE(float)
LVC_INSTANTIATE(double)
#undef LVC_INSTANTIATE

}  // namespace lvc
