#include "lvc/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "lvc/rng.hpp"

namespace lvc {

namespace {
constexpr size_t kEncBlocks = 2;
constexpr size_t kSpatialFilters = 32;
constexpr double kMaskAugmentProb = 0.3;
}  // namespace

ClassifierConfig ClassifierConfig::from_config(const RunConfig& cfg) {
    ClassifierConfig c;
    c.embed_dim = cfg.get_u64("clf.embed_dim");
    c.heads = cfg.get_u64("clf.heads");
    c.backbone_dim = cfg.get_u64("clf.backbone_dim");
    c.backbone_seed = cfg.get_u64("clf.backbone_seed");
    c.stride = cfg.get_u64("clf.stride");
    c.invert_fp_iters = cfg.get_u64("clf.invert_fp_iters");
    if (c.embed_dim % c.heads != 0) throw std::runtime_error("clf.embed_dim must be divisible by clf.heads");
    return c;
}

template <typename T>
ClassifierModel<T>::ClassifierModel(WorldConfig world, ClassifierConfig ccfg, size_t gen_layers,
                                    size_t gen_heads, size_t total_steps, uint64_t seed)
    : world_(world),
      ccfg_(ccfg),
      gen_layers_(gen_layers),
      gen_heads_(gen_heads),
      total_steps_(total_steps),
      trainable_(seed),
      backbone_(ccfg.backbone_seed) {
    const size_t d = ccfg_.embed_dim;
    const size_t cells = world_.cells();
    trainable_.add("agg.win", {cells, d}, Init::TruncNormal02);
    trainable_.add("agg.bin", {d}, Init::Zeros);
    trainable_.add("agg.e_layer", {gen_layers_, d}, Init::TruncNormal02);
    trainable_.add("agg.e_head", {gen_heads_, d}, Init::TruncNormal02);
    trainable_.add("agg.e_time", {total_steps_ + 1, d}, Init::TruncNormal02);
    for (size_t i = 0; i < kEncBlocks; ++i) {
        std::string p = "agg.enc" + std::to_string(i) + ".";
        trainable_.add(p + "ln1_g", {d}, Init::Ones);
        trainable_.add(p + "ln1_b", {d}, Init::Zeros);
        for (const char* nm : {"wq", "wk", "wv", "wo"}) trainable_.add(p + nm, {d, d}, Init::TruncNormal02);
        for (const char* nm : {"bq", "bk", "bv", "bo"}) trainable_.add(p + nm, {d}, Init::Zeros);
        trainable_.add(p + "ln2_g", {d}, Init::Ones);
        trainable_.add(p + "ln2_b", {d}, Init::Zeros);
        trainable_.add(p + "w1", {d, 2 * d}, Init::TruncNormal02);
        trainable_.add(p + "b1", {2 * d}, Init::Zeros);
        trainable_.add(p + "w2", {2 * d, d}, Init::TruncNormal02);
        trainable_.add(p + "b2", {d}, Init::Zeros);
    }
    trainable_.add("agg.lnf_g", {d}, Init::Ones);
    trainable_.add("agg.lnf_b", {d}, Init::Zeros);
    trainable_.add("agg.query", {d}, Init::TruncNormal02);
    trainable_.add("agg.wout", {d, cells}, Init::TruncNormal02);
    trainable_.add("agg.bout", {cells}, Init::Zeros);
    trainable_.add("head.w", {ccfg_.backbone_dim, LabelVocab::kCount}, Init::TruncNormal02);
    trainable_.add("head.b", {LabelVocab::kCount}, Init::Zeros);
    build_backbone();
}

template <typename T>
void ClassifierModel<T>::build_backbone() {
    const size_t H = world_.height, W = world_.width, F = world_.frames;
    const size_t hw = H * W;
    const size_t k1 = kSpatialFilters;
    auto& filters = backbone_.add("bb.filters", {hw, k1}, Init::Zeros, /*trainable=*/false);
    Rng rng(mix_seed(ccfg_.backbone_seed, 0xbbf117ULL));
    // local Gaussian-windowed random filters on a 4x4 grid of centers:
    // two random variants per center, receptive field ~5x5 cells
    const size_t grid = 4;
    for (size_t g = 0; g < grid * grid && g * 2 < k1; ++g) {
        double cy = (static_cast<double>(g / grid) + 0.5) * static_cast<double>(H) / grid;
        double cx = (static_cast<double>(g % grid) + 0.5) * static_cast<double>(W) / grid;
        for (size_t variant = 0; variant < 2; ++variant) {
            size_t col = g * 2 + variant;
            for (size_t i = 0; i < H; ++i)
                for (size_t j = 0; j < W; ++j) {
                    double dy = (static_cast<double>(i) + 0.5) - cy;
                    double dx = (static_cast<double>(j) + 0.5) - cx;
                    double window = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
                    if (window < 0.05) continue;
                    (*filters.value)[(i * W + j) * k1 + col] = static_cast<T>(rng.normal() * window);
                }
        }
    }
    auto& mix = backbone_.add("bb.mix", {F * k1, ccfg_.backbone_dim}, Init::Zeros, false);
    double scale = 1.0 / std::sqrt(static_cast<double>(F * k1));
    for (auto& x : *mix.value) x = static_cast<T>(rng.normal() * scale);
    auto& bias = backbone_.add("bb.bias", {ccfg_.backbone_dim}, Init::Zeros, false);
    for (auto& x : *bias.value) x = static_cast<T>(rng.normal() * 0.1);
}

template <typename T>
BoundParams<T> ClassifierModel<T>::bind(Tape<T>& tape, bool train_mode) const {
    BoundParams<T> bound;
    for (const auto& [name, e] : trainable_.entries())
        bound.leaves.emplace(name, tape.leaf(e.value, e.shape, train_mode && e.trainable));
    for (const auto& [name, e] : backbone_.entries())
        bound.leaves.emplace(name, tape.leaf(e.value, e.shape, false));
    return bound;
}

template <typename T>
Tensor<T> ClassifierModel<T>::aggregate_batch(Tape<T>& tape, const BoundParams<T>& bp, Tensor<T> maps3,
                                              const std::vector<int>& layer_ids,
                                              const std::vector<int>& head_ids,
                                              const std::vector<int>& time_ids) const {
    const Shape& ms = maps3.shape();
    const size_t cells = world_.cells();
    if (ms.size() != 3 || ms[2] != cells) shape_error("aggregate", ms, {0, 0, cells});
    const size_t B = ms[0], N = ms[1];
    const size_t d = ccfg_.embed_dim;
    if (layer_ids.size() != B * N || head_ids.size() != B * N || time_ids.size() != B * N)
        throw std::runtime_error("aggregate: id arrays do not match token count");

    Tensor<T> x = tape.linear(maps3, bp.at("agg.win"), bp.at("agg.bin"));  // [B,N,d]
    x = tape.reshape(x, {B * N, d});
    x = tape.add(x, tape.embedding(bp.at("agg.e_layer"), layer_ids));
    x = tape.add(x, tape.embedding(bp.at("agg.e_head"), head_ids));
    x = tape.add(x, tape.embedding(bp.at("agg.e_time"), time_ids));
    x = tape.reshape(x, {B, N, d});

    for (size_t i = 0; i < kEncBlocks; ++i) {
        std::string p = "agg.enc" + std::to_string(i) + ".";
        Tensor<T> h = tape.layernorm(x, bp.at(p + "ln1_g"), bp.at(p + "ln1_b"));
        Tensor<T> q = tape.linear(h, bp.at(p + "wq"), bp.at(p + "bq"));
        Tensor<T> k = tape.linear(h, bp.at(p + "wk"), bp.at(p + "bk"));
        Tensor<T> v = tape.linear(h, bp.at(p + "wv"), bp.at(p + "bv"));
        Tensor<T> sa = tape.attn_apply(tape.attn_weights(q, k, ccfg_.heads), v);
        x = tape.add(x, tape.linear(sa, bp.at(p + "wo"), bp.at(p + "bo")));
        h = tape.layernorm(x, bp.at(p + "ln2_g"), bp.at(p + "ln2_b"));
        h = tape.gelu(tape.linear(h, bp.at(p + "w1"), bp.at(p + "b1")));
        x = tape.add(x, tape.linear(h, bp.at(p + "w2"), bp.at(p + "b2")));
    }
    x = tape.layernorm(x, bp.at("agg.lnf_g"), bp.at("agg.lnf_b"));

    // learned-query pooling over the encoded tokens
    Tensor<T> q = tape.add_bcast(tape.zeros({B, 1, d}), tape.reshape(bp.at("agg.query"), {1, 1, d}));
    Tensor<T> wts = tape.attn_weights(q, x, 1);            // [B,1,1,N]
    Tensor<T> pooled = tape.reshape(tape.attn_apply(wts, x), {B, d});
    Tensor<T> out = tape.linear(pooled, bp.at("agg.wout"), bp.at("agg.bout"));
    return tape.reshape(out, {B, 1, world_.frames, world_.height, world_.width});
}

template <typename T>
Tensor<T> ClassifierModel<T>::aggregate(Tape<T>& tape, const BoundParams<T>& bp,
                                        std::vector<MapRef<T>> maps) const {
    if (maps.empty()) throw std::runtime_error("aggregate: empty map set");
    const size_t cells = world_.cells();
    for (const auto& m : maps) {
        const Shape& s = m.map.shape();
        if (shape_numel(s) != cells || s.size() != 3 || s[0] != world_.frames || s[1] != world_.height ||
            s[2] != world_.width)
            shape_error("aggregate", s, {world_.frames, world_.height, world_.width});
    }
    std::sort(maps.begin(), maps.end(), [](const MapRef<T>& a, const MapRef<T>& b) {
        if (a.meta.step != b.meta.step) return a.meta.step < b.meta.step;
        if (a.meta.layer != b.meta.layer) return a.meta.layer < b.meta.layer;
        if (a.meta.head != b.meta.head) return a.meta.head < b.meta.head;
        return a.meta.token_pos < b.meta.token_pos;
    });

    std::vector<Tensor<T>> step_slices;
    size_t i = 0;
    while (i < maps.size()) {
        size_t j = i;
        while (j < maps.size() && maps[j].meta.step == maps[i].meta.step) ++j;
        std::vector<Tensor<T>> flat;
        std::vector<int> layer_ids, head_ids, time_ids;
        for (size_t k = i; k < j; ++k) {
            flat.push_back(tape.reshape(maps[k].map, {1, 1, cells}));
            layer_ids.push_back(maps[k].meta.layer);
            head_ids.push_back(maps[k].meta.head);
            time_ids.push_back(maps[k].meta.step);
        }
        Tensor<T> maps3 = flat.size() == 1 ? flat[0] : tape.concat(flat, 1);
        step_slices.push_back(aggregate_batch(tape, bp, maps3, layer_ids, head_ids, time_ids));
        i = j;
    }
    Tensor<T> phi = step_slices.size() == 1 ? step_slices[0] : tape.concat(step_slices, 1);
    const Shape& ps = phi.shape();  // [1,S,F,H,W]
    return tape.reshape(phi, {ps[1], ps[2], ps[3], ps[4]});
}

template <typename T>
Tensor<T> ClassifierModel<T>::backbone_forward(Tape<T>& tape, const BoundParams<T>& bp, Tensor<T> phi) const {
    const Shape& s = phi.shape();
    if (s.size() != 5) shape_error("backbone", s, {0, 0, world_.frames, world_.height, world_.width});
    const size_t B = s[0], S = s[1], F = s[2];
    const size_t hw = world_.height * world_.width;
    Tensor<T> x = tape.reshape(phi, {B * S * F, hw});
    x = tape.gelu(tape.matmul(x, bp.at("bb.filters")));
    x = tape.reshape(x, {B * S, F * kSpatialFilters});
    x = tape.gelu(tape.linear(x, bp.at("bb.mix"), bp.at("bb.bias")));
    x = tape.reshape(x, {B, S, ccfg_.backbone_dim});
    return tape.mean_axis(x, 1);  // pooled over the step axis
}

template <typename T>
Tensor<T> ClassifierModel<T>::classify_batch(Tape<T>& tape, const BoundParams<T>& bp, Tensor<T> phi) const {
    Tensor<T> h = backbone_forward(tape, bp, phi);
    Tensor<T> logits = tape.linear(h, bp.at("head.w"), bp.at("head.b"));
    return tape.softmax_last(logits);
}

template <typename T>
Tensor<T> ClassifierModel<T>::classify(Tape<T>& tape, const BoundParams<T>& bp, Tensor<T> phi) const {
    const Shape& s = phi.shape();
    if (s.size() != 4) shape_error("classify", s, {0, world_.frames, world_.height, world_.width});
    Tensor<T> out = classify_batch(tape, bp, tape.reshape(phi, {1, s[0], s[1], s[2], s[3]}));
    return tape.reshape(out, {LabelVocab::kCount});
}

template <typename T>
Tensor<T> mask_features(Tape<T>& tape, Tensor<T> phi, const std::set<size_t>& keep_frames, size_t frames) {
    if (keep_frames.empty()) throw std::runtime_error("empty constraint interval");
    for (size_t f : keep_frames)
        if (f >= frames) throw std::runtime_error("mask_features: frame index out of range");
    const Shape& s = phi.shape();
    if (s.size() < 3) shape_error("mask_features", s, {frames, 0, 0});
    size_t inner = s[s.size() - 1] * s[s.size() - 2];
    if (s[s.size() - 3] != frames) shape_error("mask_features", s, {frames, s[s.size() - 2], s.back()});
    std::vector<uint8_t> mask(shape_numel(s), 0);
    for (size_t i = 0; i < mask.size(); ++i) {
        size_t f = (i / inner) % frames;
        if (!keep_frames.count(f)) mask[i] = 1;
    }
    return tape.masked_fill(phi, mask, T(0));
}

// ---- training pair construction ---------------------------------------------

std::vector<TrainingPair<float>> make_training_pairs(const DenoiserModel<float>& gen,
                                                     const LatentVideo& video, const PromptSpec& prompt,
                                                     bool dual, uint64_t seed,
                                                     const ClassifierConfig& ccfg) {
    std::vector<TrainingPair<float>> out;
    Trajectory<float> traj = invert(gen, video, prompt, ccfg.invert_fp_iters);
    out.push_back({extract_maps(gen, traj, prompt, ccfg.stride), prompt.relation_label, false});
    if (dual) {
        Rng rng(mix_seed(seed, 0xd0a1ULL));
        int wrong = static_cast<int>(rng.below(LabelVocab::kCount - 1));
        if (wrong >= prompt.relation_label) ++wrong;  // uniform over the 7 wrong labels
        PromptSpec pneg = prompt_with_relation(prompt, wrong, gen.world());
        Trajectory<float> traj_neg = invert(gen, video, pneg, ccfg.invert_fp_iters);
        out.push_back({extract_maps(gen, traj_neg, pneg, ccfg.stride), prompt.relation_label, true});
    }
    return out;
}

// ---- classifier training ------------------------------------------------------

namespace {

struct StepExample {
    size_t pair = 0;
    size_t step_idx = 0;
};

// Batched per-step evaluation of one map set; returns per-step probabilities.
std::vector<std::vector<double>> step_probs(const ClassifierModel<float>& model,
                                            const AttentionMapSet<float>& maps) {
    const size_t S = maps.steps.size();
    if (S == 0) throw std::runtime_error("classify: empty map set");
    const size_t per_step = maps.maps.size() / S;
    const size_t cells = maps.F * maps.H * maps.W;
    Tape<float> tape;
    BoundParams<float> bp = model.bind(tape, false);
    std::vector<float> flat(S * per_step * cells);
    std::vector<int> layer_ids(S * per_step), head_ids(S * per_step), time_ids(S * per_step);
    for (size_t s = 0; s < S; ++s)
        for (size_t m = 0; m < per_step; ++m) {
            const auto& item = maps.maps[s * per_step + m];
            std::copy(item.values.begin(), item.values.end(), flat.begin() + (s * per_step + m) * cells);
            layer_ids[s * per_step + m] = item.meta.layer;
            head_ids[s * per_step + m] = item.meta.head;
            time_ids[s * per_step + m] = item.meta.step;
        }
    Tensor<float> maps3 = tape.input({S, per_step, cells}, std::move(flat));
    Tensor<float> phi = model.aggregate_batch(tape, bp, maps3, layer_ids, head_ids, time_ids);
    Tensor<float> probs = model.classify_batch(tape, bp, phi);  // [S,8]
    std::vector<std::vector<double>> out(S, std::vector<double>(LabelVocab::kCount));
    for (size_t s = 0; s < S; ++s)
        for (size_t c = 0; c < LabelVocab::kCount; ++c) out[s][c] = probs.v()[s * LabelVocab::kCount + c];
    return out;
}

}  // namespace

std::vector<double> classify_video(const ClassifierModel<float>& model, const AttentionMapSet<float>& maps) {
    auto per_step = step_probs(model, maps);
    std::vector<double> mean(LabelVocab::kCount, 0.0);
    for (const auto& p : per_step)
        for (size_t c = 0; c < LabelVocab::kCount; ++c) mean[c] += p[c] / static_cast<double>(per_step.size());
    return mean;
}

ClassifierTrainReport train_classifier(ClassifierModel<float>& model, const std::filesystem::path& dataset_dir,
                                       const DenoiserModel<float>& gen, bool dual, const RunConfig& cfg,
                                       uint64_t seed, size_t threads,
                                       const std::function<void(const std::string&)>& log) {
    const size_t n = dataset_count(dataset_dir);
    if (n < 1) throw std::runtime_error("train_classifier: empty dataset");
    const WorldConfig& wc = model.world();
    const size_t cells = wc.cells();

    // split videos into train/holdout
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng split_rng(mix_seed(seed, 0x5b117ULL));
    for (size_t i = n; i > 1; --i) std::swap(order[i - 1], order[split_rng.below(i)]);
    size_t holdout_n = n >= 8 ? static_cast<size_t>(std::llround(cfg.get_f64("clf.holdout") * n)) : 0;
    holdout_n = std::min(holdout_n, n - 1);
    size_t train_n = n - holdout_n;

    if (log) log("building training pairs for " + std::to_string(n) + " videos");
    std::vector<std::vector<TrainingPair<float>>> built(n);
    auto build_range = [&](size_t tid) {
        for (size_t i = tid; i < n; i += std::max<size_t>(threads, 1)) {
            DatasetSample s = load_sample(dataset_dir, order[i]);
            bool is_train = i < train_n;
            // holdout videos only need the correct-prompt maps
            built[i] = make_training_pairs(gen, s.video, s.prompt, dual && is_train,
                                           mix_seed(seed, 0xbead0000ULL + order[i]), model.config());
        }
    };
    if (threads <= 1) {
        build_range(0);
    } else {
        std::vector<std::thread> pool;
        for (size_t t = 0; t < threads; ++t) pool.emplace_back(build_range, t);
        for (auto& th : pool) th.join();
    }

    std::vector<TrainingPair<float>> train_pairs, holdout_pairs;
    for (size_t i = 0; i < n; ++i)
        for (auto& p : built[i]) (i < train_n ? train_pairs : holdout_pairs).push_back(std::move(p));
    built.clear();

    // per-step examples
    std::vector<StepExample> examples;
    for (size_t p = 0; p < train_pairs.size(); ++p)
        for (size_t s = 0; s < train_pairs[p].maps.steps.size(); ++s) examples.push_back({p, s});

    const size_t epochs = cfg.get_u64("clf.epochs");
    const size_t batch = cfg.get_u64("clf.batch");
    const double lr0 = cfg.get_f64("clf.lr");
    const bool mask_augment = cfg.get_bool("clf.mask_augment");
    const long time_jitter = cfg.get_i64("clf.time_jitter");
    AdamW<float> opt(0.9, 0.999, 1e-8, cfg.get_f64("clf.weight_decay"));
    Rng rng(mix_seed(seed, 0xc1a55ULL));

    ClassifierTrainReport report;
    report.backbone_checksum_before = model.backbone().checksum();
    report.train_videos = train_n;
    report.holdout_videos = holdout_n;
    report.examples_consumed = examples.size();

    const size_t total_updates = std::max<size_t>(1, epochs * ((examples.size() + batch - 1) / batch));
    size_t update = 0;
    for (size_t epoch = 0; epoch < epochs; ++epoch) {
        for (size_t i = examples.size(); i > 1; --i) std::swap(examples[i - 1], examples[rng.below(i)]);
        double epoch_loss = 0;
        size_t batches = 0;
        for (size_t start = 0; start < examples.size(); start += batch) {
            size_t B = std::min(batch, examples.size() - start);
            const size_t per_step = train_pairs[examples[start].pair].maps.maps.size() /
                                    train_pairs[examples[start].pair].maps.steps.size();
            std::vector<float> flat(B * per_step * cells);
            std::vector<int> layer_ids(B * per_step), head_ids(B * per_step), time_ids(B * per_step);
            std::vector<float> onehot(B * LabelVocab::kCount, 0.f);
            std::vector<uint8_t> mask;
            bool any_mask = false;
            for (size_t b = 0; b < B; ++b) {
                const StepExample& ex = examples[start + b];
                const TrainingPair<float>& tp = train_pairs[ex.pair];
                // jittered time ids cover the steps between extraction points,
                // where guidance will query the classifier
                long jit = time_jitter > 0
                               ? static_cast<long>(rng.below(2 * time_jitter + 1)) - time_jitter
                               : 0;
                for (size_t m = 0; m < per_step; ++m) {
                    const auto& item = tp.maps.maps[ex.step_idx * per_step + m];
                    std::copy(item.values.begin(), item.values.end(),
                              flat.begin() + (b * per_step + m) * cells);
                    layer_ids[b * per_step + m] = item.meta.layer;
                    head_ids[b * per_step + m] = item.meta.head;
                    long t = std::min<long>(std::max<long>(item.meta.step + jit, 1),
                                            static_cast<long>(model.total_steps()));
                    time_ids[b * per_step + m] = static_cast<int>(t);
                }
                onehot[b * LabelVocab::kCount + tp.label] = 1.f;
            }
            if (mask_augment) {
                mask.assign(B * cells, 0);
                for (size_t b = 0; b < B; ++b) {
                    if (rng.uniform() >= kMaskAugmentProb) continue;
                    any_mask = true;
                    size_t len = std::min<size_t>(2 + rng.below(wc.frames - 1), wc.frames);
                    size_t first = rng.below(wc.frames - len + 1);
                    size_t hw = wc.height * wc.width;
                    for (size_t f = 0; f < wc.frames; ++f)
                        if (f < first || f >= first + len)
                            std::fill(mask.begin() + (b * wc.frames + f) * hw,
                                      mask.begin() + (b * wc.frames + f + 1) * hw, 1);
                }
            }

            Tape<float> tape;
            BoundParams<float> bp = model.bind(tape, true);
            Tensor<float> maps3 = tape.input({B, per_step, cells}, std::move(flat));
            Tensor<float> phi = model.aggregate_batch(tape, bp, maps3, layer_ids, head_ids, time_ids);
            if (any_mask) phi = tape.masked_fill(phi, mask, 0.f);
            Tensor<float> probs = model.classify_batch(tape, bp, phi);
            Tensor<float> loss = tape.cross_entropy(probs, onehot);
            tape.backward(loss);

            std::map<std::string, std::vector<float>> grads;
            for (const auto& [name, e] : model.trainable().entries()) grads.emplace(name, bp.at(name).g());
            double lr = lr0 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * double(update) / double(total_updates)));
            opt.step(model.trainable(), grads, lr);
            ++update;
            epoch_loss += loss.v()[0];
            ++batches;
        }
        if (log)
            log("epoch " + std::to_string(epoch + 1) + "/" + std::to_string(epochs) + " loss " +
                std::to_string(epoch_loss / std::max<size_t>(batches, 1)));
    }

    // video-level accuracy over the correct-prompt pairs; step-level as well
    auto video_accuracy = [&](const std::vector<TrainingPair<float>>& pairs, bool positives_only,
                              double* step_acc) {
        size_t ok = 0, total = 0, sok = 0, stotal = 0;
        for (const auto& p : pairs) {
            if (positives_only && p.wrong_prompt) continue;
            auto per_step = step_probs(model, p.maps);
            std::vector<double> mean(LabelVocab::kCount, 0.0);
            for (const auto& pr : per_step) {
                size_t arg = 0;
                for (size_t c = 1; c < pr.size(); ++c)
                    if (pr[c] > pr[arg]) arg = c;
                if (static_cast<int>(arg) == p.label) ++sok;
                ++stotal;
                for (size_t c = 0; c < pr.size(); ++c) mean[c] += pr[c];
            }
            size_t arg = 0;
            for (size_t c = 1; c < mean.size(); ++c)
                if (mean[c] > mean[arg]) arg = c;
            if (static_cast<int>(arg) == p.label) ++ok;
            ++total;
        }
        if (step_acc) *step_acc = stotal ? double(sok) / double(stotal) : 0.0;
        return total ? double(ok) / double(total) : 0.0;
    };

    report.train_accuracy = video_accuracy(train_pairs, false, nullptr);
    if (!holdout_pairs.empty())
        report.holdout_accuracy = video_accuracy(holdout_pairs, true, &report.holdout_step_accuracy);
    report.backbone_checksum_after = model.backbone().checksum();
    return report;
}

// ---- persistence ---------------------------------------------------------------

template <typename T>
void ClassifierModel<T>::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    KvFile m;
    m.set("kind", "classifier");
    m.set("version", "1");
    m.set("labels", LabelVocab::joined());
    m.set_u64("world.frames", world_.frames);
    m.set_u64("world.height", world_.height);
    m.set_u64("world.width", world_.width);
    m.set_u64("world.channels", world_.channels);
    m.set_f64("world.fps", world_.fps);
    m.set_u64("world.shapes", world_.n_shapes);
    m.set_u64("clf.embed_dim", ccfg_.embed_dim);
    m.set_u64("clf.heads", ccfg_.heads);
    m.set_u64("clf.backbone_dim", ccfg_.backbone_dim);
    m.set_u64("clf.backbone_seed", ccfg_.backbone_seed);
    m.set_u64("clf.stride", ccfg_.stride);
    m.set_u64("clf.invert_fp_iters", ccfg_.invert_fp_iters);
    m.set_u64("gen.layers", gen_layers_);
    m.set_u64("gen.heads", gen_heads_);
    m.set_u64("sched.steps", total_steps_);
    m.set("steps.policy", "causal-current-step");  // inference aggregates the live step only
    m.set_u64("seed", trainable_.seed());
    m.save(dir / "manifest.txt");
    for (const auto& [name, e] : trainable_.entries())
        write_tensor<T>(dir / (name + ".cvgt"), e.shape, *e.value);
    // backbone is reproducible from its seed; not serialized
}

template <typename T>
ClassifierModel<T> ClassifierModel<T>::load(const std::filesystem::path& dir) {
    KvFile m = KvFile::load(dir / "manifest.txt");
    if (m.get("kind") != "classifier") throw std::runtime_error("not a classifier checkpoint: " + dir.string());
    if (m.get("labels") != LabelVocab::joined())
        throw std::runtime_error("classifier label order mismatch in " + dir.string());
    WorldConfig wc;
    wc.frames = m.get_u64("world.frames");
    wc.height = m.get_u64("world.height");
    wc.width = m.get_u64("world.width");
    wc.channels = m.get_u64("world.channels");
    wc.fps = m.get_f64("world.fps");
    wc.n_shapes = m.get_u64("world.shapes");
    ClassifierConfig cc;
    cc.embed_dim = m.get_u64("clf.embed_dim");
    cc.heads = m.get_u64("clf.heads");
    cc.backbone_dim = m.get_u64("clf.backbone_dim");
    cc.backbone_seed = m.get_u64("clf.backbone_seed");
    cc.stride = m.get_u64("clf.stride");
    cc.invert_fp_iters = m.get_u64("clf.invert_fp_iters");
    ClassifierModel<T> model(wc, cc, m.get_u64("gen.layers"), m.get_u64("gen.heads"),
                             m.get_u64("sched.steps"), m.get_u64("seed"));
    for (auto& [name, e] : model.trainable_.entries()) {
        Array<T> arr = read_tensor<T>(dir / (name + ".cvgt"));
        if (arr.shape != e.shape) throw std::runtime_error("checkpoint tensor shape mismatch for " + name);
        *e.value = std::move(arr.data);
    }
    return model;
}

template class ClassifierModel<float>;
template class ClassifierModel<double>;
template Tensor<float> mask_features(Tape<float>&, Tensor<float>, const std::set<size_t>&, size_t);
template Tensor<double> mask_features(Tape<double>&, Tensor<double>, const std::set<size_t>&, size_t);

}  // namespace lvc
