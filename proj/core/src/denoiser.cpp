#include "lvc/denoiser.hpp"

#include <cmath>

#include "lvc/rng.hpp"

namespace lvc {

GeneratorConfig GeneratorConfig::from_config(const RunConfig& cfg) {
    GeneratorConfig g;
    g.width = cfg.get_u64("gen.width");
    g.layers = cfg.get_u64("gen.layers");
    g.heads = cfg.get_u64("gen.heads");
    g.mlp_ratio = cfg.get_u64("gen.mlp_ratio");
    const std::string& sa = cfg.get("gen.self_attention");
    if (sa == "axial")
        g.self_attention = SelfAttnMode::kAxial;
    else if (sa == "full")
        g.self_attention = SelfAttnMode::kFull;
    else if (sa == "off")
        g.self_attention = SelfAttnMode::kOff;
    else
        throw std::runtime_error("gen.self_attention must be axial, full or off");
    if (g.width % g.heads != 0) throw std::runtime_error("gen.width must be divisible by gen.heads");
    return g;
}

PromptSpec unconditional_prompt(const WorldConfig& cfg) {
    PromptSpec p;
    p.tokens = {static_cast<int>(cfg.n_shapes + LabelVocab::kCount)};
    p.relation_label = -1;
    return p;
}

std::vector<int> extraction_steps(size_t total_steps, size_t stride) {
    if (stride < 1) throw std::runtime_error("extract_maps: stride must be >= 1");
    std::vector<int> steps;
    for (long t = static_cast<long>(total_steps); t >= 1; t -= static_cast<long>(stride))
        steps.push_back(static_cast<int>(t));
    if (steps.empty() || steps.back() != 1) steps.push_back(1);  // final clean step
    std::sort(steps.begin(), steps.end());
    steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
    return steps;
}

template <typename T>
DenoiserModel<T>::DenoiserModel(WorldConfig world, GeneratorConfig gcfg, DiffusionSchedule sched,
                                uint64_t seed)
    : world_(world), gcfg_(gcfg), sched_(sched), params_(seed) {
    const size_t w = gcfg_.width;
    const size_t V = vocab_size();
    params_.add("tok_emb", {V, w}, Init::TruncNormal02);
    params_.add("prompt_pos", {3, w}, Init::TruncNormal02);
    params_.add("pe_ln_g", {w}, Init::Ones);
    params_.add("pe_ln_b", {w}, Init::Zeros);
    params_.add("step_emb", {sched_.total_steps + 1, w}, Init::TruncNormal02);
    params_.add("pos_f", {world_.frames, w}, Init::TruncNormal02);
    params_.add("pos_r", {world_.height, w}, Init::TruncNormal02);
    params_.add("pos_c", {world_.width, w}, Init::TruncNormal02);
    params_.add("in_w", {world_.channels, w}, Init::TruncNormal02);
    params_.add("in_b", {w}, Init::Zeros);
    for (size_t l = 0; l < gcfg_.layers; ++l) {
        std::string p = "blk" + std::to_string(l) + ".";
        params_.add(p + "ln1_g", {w}, Init::Ones);
        params_.add(p + "ln1_b", {w}, Init::Zeros);
        params_.add(p + "sa_wqkv", {w, 3 * w}, Init::TruncNormal02);  // fused projection
        params_.add(p + "sa_bqkv", {3 * w}, Init::Zeros);
        params_.add(p + "sa_wo", {w, w}, Init::TruncNormal02);
        params_.add(p + "sa_bo", {w}, Init::Zeros);
        params_.add(p + "ln2_g", {w}, Init::Ones);
        params_.add(p + "ln2_b", {w}, Init::Zeros);
        for (const char* nm : {"ca_wq", "ca_wk", "ca_wv", "ca_wo"}) params_.add(p + nm, {w, w}, Init::TruncNormal02);
        for (const char* nm : {"ca_bq", "ca_bk", "ca_bv", "ca_bo"}) params_.add(p + nm, {w}, Init::Zeros);
        params_.add(p + "ln3_g", {w}, Init::Ones);
        params_.add(p + "ln3_b", {w}, Init::Zeros);
        params_.add(p + "mlp_w1", {w, w * gcfg_.mlp_ratio}, Init::TruncNormal02);
        params_.add(p + "mlp_b1", {w * gcfg_.mlp_ratio}, Init::Zeros);
        params_.add(p + "mlp_w2", {w * gcfg_.mlp_ratio, w}, Init::TruncNormal02);
        params_.add(p + "mlp_b2", {w}, Init::Zeros);
    }
    params_.add("ln_f_g", {w}, Init::Ones);
    params_.add("ln_f_b", {w}, Init::Zeros);
    params_.add("out_w", {w, world_.channels}, Init::TruncNormal02);
    params_.add("out_b", {world_.channels}, Init::Zeros);
}

template <typename T>
BoundParams<T> DenoiserModel<T>::bind(Tape<T>& tape, bool train_mode) const {
    BoundParams<T> bound;
    for (const auto& [name, e] : params_.entries())
        bound.leaves.emplace(name, tape.leaf(e.value, e.shape, train_mode && e.trainable));
    return bound;
}

template <typename T>
Tensor<T> DenoiserModel<T>::forward(Tape<T>& tape, const BoundParams<T>& bp, Tensor<T> z,
                                    const std::vector<int>& step, const std::vector<PromptSpec>& prompts,
                                    LiveMapSet<T>* record, std::vector<Tensor<T>>* full_weights) const {
    const size_t F = world_.frames, H = world_.height, W = world_.width, C = world_.channels;
    const size_t wd = gcfg_.width, nh = gcfg_.heads;
    const size_t cells = F * H * W;
    const Shape& zs = z.shape();
    if (zs.size() != 5 || zs[1] != F || zs[2] != H || zs[3] != W || zs[4] != C)
        shape_error("denoise", zs, {0, F, H, W, C});
    const size_t B = zs[0];
    if (step.size() != B || prompts.size() != B)
        throw std::runtime_error("denoise: step/prompt count does not match batch");
    const size_t P = prompts[0].tokens.size();
    if (P == 0 || P > 3) throw std::runtime_error("denoise: prompt must have 1..3 tokens");
    std::vector<int> tok_ids;
    tok_ids.reserve(B * P);
    for (const auto& pr : prompts) {
        if (pr.tokens.size() != P) throw std::runtime_error("denoise: prompts in a batch must share length");
        for (int t : pr.tokens) tok_ids.push_back(t);
        for (int kp : pr.entity_positions)
            if (kp < 0 || static_cast<size_t>(kp) >= P)
                throw std::runtime_error("entity position out of prompt range");
    }
    for (int t : step)
        if (t < 1 || static_cast<size_t>(t) > sched_.total_steps)
            throw std::runtime_error("denoise: step out of range [1," + std::to_string(sched_.total_steps) + "]");
    if (record && B != 1) throw std::runtime_error("denoise: map recording requires batch size 1");

    // prompt embeddings [B,P,wd], normalized like a text-encoder output
    Tensor<T> pe = tape.reshape(tape.embedding(bp.at("tok_emb"), tok_ids), {B, P, wd});
    Tensor<T> ppos = tape.reshape(tape.slice(bp.at("prompt_pos"), 0, 0, P), {1, P, wd});
    pe = tape.layernorm(tape.add_bcast(pe, ppos), bp.at("pe_ln_g"), bp.at("pe_ln_b"));

    // cell embeddings [B,F,H,W,wd]
    Tensor<T> x = tape.linear(z, bp.at("in_w"), bp.at("in_b"));
    x = tape.add_bcast(x, tape.reshape(bp.at("pos_f"), {1, F, 1, 1, wd}));
    x = tape.add_bcast(x, tape.reshape(bp.at("pos_r"), {1, 1, H, 1, wd}));
    x = tape.add_bcast(x, tape.reshape(bp.at("pos_c"), {1, 1, 1, W, wd}));
    x = tape.add_bcast(x, tape.reshape(tape.embedding(bp.at("step_emb"), step), {B, 1, 1, 1, wd}));

    for (size_t l = 0; l < gcfg_.layers; ++l) {
        std::string p = "blk" + std::to_string(l) + ".";

        if (gcfg_.self_attention != SelfAttnMode::kOff) {
            Tensor<T> h = tape.layernorm(x, bp.at(p + "ln1_g"), bp.at(p + "ln1_b"));
            Tensor<T> qkv = tape.linear(h, bp.at(p + "sa_wqkv"), bp.at(p + "sa_bqkv"));
            Tensor<T> q = tape.slice(qkv, 4, 0, wd);
            Tensor<T> k = tape.slice(qkv, 4, wd, wd);
            Tensor<T> v = tape.slice(qkv, 4, 2 * wd, wd);
            Tensor<T> sa;
            if (gcfg_.self_attention == SelfAttnMode::kFull) {
                Tensor<T> qf = tape.reshape(q, {B, cells, wd});
                Tensor<T> kf = tape.reshape(k, {B, cells, wd});
                Tensor<T> vf = tape.reshape(v, {B, cells, wd});
                sa = tape.reshape(tape.attn_apply(tape.attn_weights(qf, kf, nh), vf), {B, F, H, W, wd});
            } else {
                // factored attention along rows, columns and time
                Tensor<T> qr = tape.reshape(q, {B * F * H, W, wd});
                Tensor<T> kr = tape.reshape(k, {B * F * H, W, wd});
                Tensor<T> vr = tape.reshape(v, {B * F * H, W, wd});
                Tensor<T> rows = tape.reshape(tape.attn_apply(tape.attn_weights(qr, kr, nh), vr),
                                              {B, F, H, W, wd});

                std::vector<size_t> cperm = {0, 1, 3, 2, 4};
                Tensor<T> qc = tape.reshape(tape.permute(q, cperm), {B * F * W, H, wd});
                Tensor<T> kc = tape.reshape(tape.permute(k, cperm), {B * F * W, H, wd});
                Tensor<T> vc = tape.reshape(tape.permute(v, cperm), {B * F * W, H, wd});
                Tensor<T> cols = tape.attn_apply(tape.attn_weights(qc, kc, nh), vc);
                cols = tape.permute(tape.reshape(cols, {B, F, W, H, wd}), cperm);

                std::vector<size_t> tperm = {0, 2, 3, 1, 4};   // -> [B,H,W,F,wd]
                std::vector<size_t> tback = {0, 3, 1, 2, 4};
                Tensor<T> qt = tape.reshape(tape.permute(q, tperm), {B * H * W, F, wd});
                Tensor<T> kt = tape.reshape(tape.permute(k, tperm), {B * H * W, F, wd});
                Tensor<T> vt = tape.reshape(tape.permute(v, tperm), {B * H * W, F, wd});
                Tensor<T> time = tape.attn_apply(tape.attn_weights(qt, kt, nh), vt);
                time = tape.permute(tape.reshape(time, {B, H, W, F, wd}), tback);

                sa = tape.add(tape.add(rows, cols), time);
            }
            x = tape.add(x, tape.linear(sa, bp.at(p + "sa_wo"), bp.at(p + "sa_bo")));
        }

        {
            Tensor<T> h = tape.layernorm(x, bp.at(p + "ln2_g"), bp.at(p + "ln2_b"));
            Tensor<T> cq = tape.reshape(tape.linear(h, bp.at(p + "ca_wq"), bp.at(p + "ca_bq")), {B, cells, wd});
            Tensor<T> ck = tape.linear(pe, bp.at(p + "ca_wk"), bp.at(p + "ca_bk"));
            Tensor<T> cv = tape.linear(pe, bp.at(p + "ca_wv"), bp.at(p + "ca_bv"));
            Tensor<T> wts = tape.attn_weights(cq, ck, nh);  // [B,nh,cells,P]
            if (full_weights) full_weights->push_back(wts);
            if (record) {
                // canonical order: (layer, head, entity position)
                for (size_t hh = 0; hh < nh; ++hh)
                    for (int kp : prompts[0].entity_positions) {
                        Tensor<T> m = tape.slice(wts, 1, hh, 1);
                        m = tape.slice(m, 3, static_cast<size_t>(kp), 1);
                        m = tape.reshape(m, {F, H, W});
                        record->maps.push_back({MapMeta{step[0], static_cast<int>(l),
                                                        static_cast<int>(hh), kp},
                                                m});
                    }
            }
            Tensor<T> att = tape.attn_apply(wts, cv);
            att = tape.reshape(tape.linear(att, bp.at(p + "ca_wo"), bp.at(p + "ca_bo")), {B, F, H, W, wd});
            x = tape.add(x, att);
        }

        {
            Tensor<T> h = tape.layernorm(x, bp.at(p + "ln3_g"), bp.at(p + "ln3_b"));
            h = tape.gelu(tape.linear(h, bp.at(p + "mlp_w1"), bp.at(p + "mlp_b1")));
            h = tape.linear(h, bp.at(p + "mlp_w2"), bp.at(p + "mlp_b2"));
            x = tape.add(x, h);
        }
    }

    Tensor<T> out = tape.layernorm(x, bp.at("ln_f_g"), bp.at("ln_f_b"));
    return tape.linear(out, bp.at("out_w"), bp.at("out_b"));
}

template <typename T>
std::pair<VideoT<T>, AttentionMapSet<T>> denoise_step(const DenoiserModel<T>& model, const VideoT<T>& z_t,
                                                      size_t t, const PromptSpec& prompt, bool record) {
    const WorldConfig& wc = model.world();
    Tape<T> tape;
    Tensor<T> z = tape.input({1, wc.frames, wc.height, wc.width, wc.channels}, z_t.v, false);
    LiveMapSet<T> live;
    Tensor<T> eps = model.forward(tape, z, {static_cast<int>(t)}, {prompt}, false,
                                  record ? &live : nullptr);
    VideoT<T> out(wc.frames, wc.height, wc.width, wc.channels);
    out.v = eps.v();
    AttentionMapSet<T> maps;
    if (record) {
        maps.F = wc.frames;
        maps.H = wc.height;
        maps.W = wc.width;
        maps.steps = {static_cast<int>(t)};
        for (const auto& item : live.maps)
            maps.maps.push_back({item.meta, item.map.v()});
    }
    return {std::move(out), std::move(maps)};
}

template <typename T>
VideoT<T> sample(const DenoiserModel<T>& model, const PromptSpec& prompt, uint64_t seed,
                 const StepHook<T>& hook, const VideoT<T>* init_latent) {
    const WorldConfig& wc = model.world();
    const DiffusionSchedule& sc = model.schedule();
    VideoT<T> z(wc.frames, wc.height, wc.width, wc.channels);
    Rng rng(mix_seed(seed, 0x5a1e57ULL));
    if (init_latent) {
        if (init_latent->v.size() != z.v.size()) throw std::runtime_error("sample: bad initial latent shape");
        z = *init_latent;
    } else {
        for (auto& x : z.v) x = static_cast<T>(rng.normal());
    }
    for (size_t t = sc.total_steps; t >= 1; --t) {
        if (hook) {
            VideoT<T> replaced = hook(z, t);
            if (replaced.F != z.F || replaced.H != z.H || replaced.W != z.W || replaced.C != z.C)
                throw std::runtime_error("sample: step hook returned mismatched shape");
            z = std::move(replaced);
        }
        VideoT<T> eps = denoise_step(model, z, t, prompt, false).first;
        double sab = sc.sqrt_ab(t), s1m = sc.sqrt_1mab(t);
        double sabp = sc.sqrt_ab(t - 1), s1mp = sc.sqrt_1mab(t - 1);
        if (sc.sampler == SamplerKind::kDeterministic) {
            for (size_t i = 0; i < z.v.size(); ++i) {
                double z0 = (static_cast<double>(z.v[i]) - s1m * eps.v[i]) / sab;
                z.v[i] = static_cast<T>(sabp * z0 + s1mp * eps.v[i]);
            }
        } else {
            double beta = sc.beta[t - 1];
            double denom = std::sqrt(1.0 - sc.alpha_bar[t]);
            double inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - beta);
            double sigma = t > 1 ? std::sqrt((1.0 - sc.alpha_bar[t - 1]) / (1.0 - sc.alpha_bar[t]) * beta)
                                 : 0.0;
            for (size_t i = 0; i < z.v.size(); ++i) {
                double mean = inv_sqrt_alpha * (static_cast<double>(z.v[i]) - beta / denom * eps.v[i]);
                z.v[i] = static_cast<T>(mean + sigma * rng.normal());
            }
        }
    }
    return z;
}

template <typename T>
Trajectory<T> invert(const DenoiserModel<T>& model, const VideoT<T>& video, const PromptSpec& prompt,
                     size_t fixed_point_iters) {
    const DiffusionSchedule& sc = model.schedule();
    if (sc.sampler != SamplerKind::kDeterministic)
        throw std::runtime_error("inversion requires deterministic sampler");
    Trajectory<T> traj;
    traj.latents.push_back(video);
    for (size_t t = 1; t <= sc.total_steps; ++t) {
        const VideoT<T>& prev = traj.latents.back();  // z_{t-1}
        double sab = sc.sqrt_ab(t), s1m = sc.sqrt_1mab(t);
        double sabp = sc.sqrt_ab(t - 1), s1mp = sc.sqrt_1mab(t - 1);
        double ratio = sab / sabp;
        auto lift = [&](const VideoT<T>& eps) {
            VideoT<T> zt = prev;
            for (size_t i = 0; i < zt.v.size(); ++i)
                zt.v[i] = static_cast<T>(ratio * (static_cast<double>(prev.v[i]) - s1mp * eps.v[i]) +
                                         s1m * eps.v[i]);
            return zt;
        };
        VideoT<T> eps = denoise_step(model, prev, t, prompt, false).first;
        VideoT<T> zt = lift(eps);
        for (size_t k = 0; k < fixed_point_iters; ++k) {
            eps = denoise_step(model, zt, t, prompt, false).first;
            zt = lift(eps);
        }
        traj.latents.push_back(std::move(zt));  // latents[t] = z_t
    }
    return traj;
}

template <typename T>
AttentionMapSet<T> extract_maps(const DenoiserModel<T>& model, const Trajectory<T>& trajectory,
                                const PromptSpec& prompt, size_t stride) {
    if (trajectory.latents.empty()) throw std::runtime_error("extract_maps: empty trajectory");
    const WorldConfig& wc = model.world();
    AttentionMapSet<T> out;
    out.F = wc.frames;
    out.H = wc.height;
    out.W = wc.width;
    if (trajectory.steps() == 0) return out;  // 0-step schedule records nothing
    out.steps = extraction_steps(trajectory.steps(), stride);
    for (int t : out.steps) {
        AttentionMapSet<T> maps = denoise_step(model, trajectory.z(static_cast<size_t>(t)),
                                               static_cast<size_t>(t), prompt, true)
                                      .second;
        for (auto& m : maps.maps) out.maps.push_back(std::move(m));
    }
    return out;
}

// ---- training -------------------------------------------------------------

TrainStats train_denoiser(DenoiserModel<float>& model, const std::filesystem::path& dataset_dir,
                          const RunConfig& cfg, uint64_t seed,
                          const std::function<void(size_t, double)>& progress) {
    size_t n = dataset_count(dataset_dir);
    if (n < 1) throw std::runtime_error("train_denoiser: empty dataset");
    std::vector<DatasetSample> data;
    data.reserve(n);
    for (size_t i = 0; i < n; ++i) data.push_back(load_sample(dataset_dir, i));

    const WorldConfig& wc = model.world();
    const DiffusionSchedule& sc = model.schedule();
    const size_t iters = cfg.get_u64("gen.train_iters");
    const size_t batch = cfg.get_u64("gen.batch");
    const double lr0 = cfg.get_f64("gen.lr");
    AdamW<float> opt(0.9, 0.999, 1e-8, cfg.get_f64("gen.weight_decay"));
    Rng rng(mix_seed(seed, 0x7e41ULL));

    const size_t cell_n = wc.frames * wc.height * wc.width * wc.channels;
    std::vector<double> losses;
    losses.reserve(iters);
    TrainStats stats;
    for (size_t it = 0; it < iters; ++it) {
        std::vector<float> zb(batch * cell_n), epsb(batch * cell_n);
        std::vector<int> steps(batch);
        std::vector<PromptSpec> prompts(batch);
        for (size_t b = 0; b < batch; ++b) {
            const DatasetSample& s = data[rng.below(n)];
            size_t t = 1 + rng.below(sc.total_steps);
            steps[b] = static_cast<int>(t);
            prompts[b] = s.prompt;
            double sab = sc.sqrt_ab(t), s1m = sc.sqrt_1mab(t);
            for (size_t i = 0; i < cell_n; ++i) {
                float e = static_cast<float>(rng.normal());
                epsb[b * cell_n + i] = e;
                zb[b * cell_n + i] = static_cast<float>(sab * s.video.v[i] + s1m * e);
            }
        }
        Tape<float> tape;
        Tensor<float> z = tape.input({batch, wc.frames, wc.height, wc.width, wc.channels}, std::move(zb));
        Tensor<float> target = tape.input({batch, wc.frames, wc.height, wc.width, wc.channels}, std::move(epsb));
        BoundParams<float> bound = model.bind(tape, true);
        Tensor<float> eps = model.forward(tape, bound, z, steps, prompts);
        Tensor<float> loss = tape.mse(eps, target);
        tape.backward(loss);

        std::map<std::string, std::vector<float>> grads;
        for (const auto& [name, leaf] : bound.leaves) grads.emplace(name, leaf.g());

        double lr = lr0 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * double(it) / double(iters)));
        opt.step(model.params(), grads, lr);

        losses.push_back(loss.v()[0]);
        if (it % 50 == 0) {
            stats.loss_curve.push_back(losses.back());
            if (progress) progress(it, losses.back());
        }
    }
    size_t head = std::min<size_t>(5, losses.size());
    size_t tail = std::min<size_t>(20, losses.size());
    for (size_t i = 0; i < head; ++i) stats.initial_loss += losses[i] / double(head);
    for (size_t i = losses.size() - tail; i < losses.size(); ++i) stats.final_loss += losses[i] / double(tail);
    return stats;
}

// ---- persistence ------------------------------------------------------------

template <typename T>
void DenoiserModel<T>::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    KvFile m;
    m.set("kind", "denoiser");
    m.set("version", "1");
    m.set_u64("world.frames", world_.frames);
    m.set_u64("world.height", world_.height);
    m.set_u64("world.width", world_.width);
    m.set_u64("world.channels", world_.channels);
    m.set_f64("world.fps", world_.fps);
    m.set_u64("world.shapes", world_.n_shapes);
    m.set_u64("gen.width", gcfg_.width);
    m.set_u64("gen.layers", gcfg_.layers);
    m.set_u64("gen.heads", gcfg_.heads);
    m.set_u64("gen.mlp_ratio", gcfg_.mlp_ratio);
    m.set("gen.self_attention", gcfg_.self_attention == SelfAttnMode::kAxial  ? "axial"
                                : gcfg_.self_attention == SelfAttnMode::kFull ? "full"
                                                                              : "off");
    m.set_u64("sched.steps", sched_.total_steps);
    m.set_f64("sched.beta_min", sched_.beta.empty() ? 0.0 : sched_.beta.front());
    m.set_f64("sched.beta_max", sched_.beta.empty() ? 0.0 : sched_.beta.back());
    m.set("sched.sampler", sched_.sampler == SamplerKind::kDeterministic ? "deterministic" : "ancestral");
    m.set_u64("seed", params_.seed());
    std::string names;
    for (const auto& [name, e] : params_.entries()) {
        if (!names.empty()) names += ',';
        names += name;
    }
    m.set("params", names);
    m.save(dir / "manifest.txt");
    for (const auto& [name, e] : params_.entries()) write_tensor<T>(dir / (name + ".cvgt"), e.shape, *e.value);
}

template <typename T>
DenoiserModel<T> DenoiserModel<T>::load(const std::filesystem::path& dir) {
    KvFile m = KvFile::load(dir / "manifest.txt");
    if (m.get("kind") != "denoiser") throw std::runtime_error("not a denoiser checkpoint: " + dir.string());
    WorldConfig wc;
    wc.frames = m.get_u64("world.frames");
    wc.height = m.get_u64("world.height");
    wc.width = m.get_u64("world.width");
    wc.channels = m.get_u64("world.channels");
    wc.fps = m.get_f64("world.fps");
    wc.n_shapes = m.get_u64("world.shapes");
    GeneratorConfig g;
    g.width = m.get_u64("gen.width");
    g.layers = m.get_u64("gen.layers");
    g.heads = m.get_u64("gen.heads");
    g.mlp_ratio = m.get_u64("gen.mlp_ratio");
    const std::string& sa = m.get("gen.self_attention");
    g.self_attention = sa == "axial" ? SelfAttnMode::kAxial
                       : sa == "full" ? SelfAttnMode::kFull
                                      : SelfAttnMode::kOff;
    DiffusionSchedule sc = DiffusionSchedule::linear(
        m.get_u64("sched.steps"), m.get_f64("sched.beta_min"), m.get_f64("sched.beta_max"),
        m.get("sched.sampler") == "ancestral" ? SamplerKind::kAncestral : SamplerKind::kDeterministic);
    DenoiserModel<T> model(wc, g, sc, m.get_u64("seed"));
    for (auto& [name, e] : model.params_.entries()) {
        Array<T> arr = read_tensor<T>(dir / (name + ".cvgt"));
        if (arr.shape != e.shape)
            throw std::runtime_error("checkpoint tensor shape mismatch for " + name);
        *e.value = std::move(arr.data);
    }
    return model;
}

template class DenoiserModel<float>;
template class DenoiserModel<double>;
template std::pair<VideoT<float>, AttentionMapSet<float>> denoise_step(const DenoiserModel<float>&,
                                                                       const VideoT<float>&, size_t,
                                                                       const PromptSpec&, bool);
template std::pair<VideoT<double>, AttentionMapSet<double>> denoise_step(const DenoiserModel<double>&,
                                                                         const VideoT<double>&, size_t,
                                                                         const PromptSpec&, bool);
template VideoT<float> sample(const DenoiserModel<float>&, const PromptSpec&, uint64_t,
                              const StepHook<float>&, const VideoT<float>*);
template VideoT<double> sample(const DenoiserModel<double>&, const PromptSpec&, uint64_t,
                               const StepHook<double>&, const VideoT<double>*);
template Trajectory<float> invert(const DenoiserModel<float>&, const VideoT<float>&, const PromptSpec&,
                                  size_t);
template Trajectory<double> invert(const DenoiserModel<double>&, const VideoT<double>&, const PromptSpec&,
                                   size_t);
template AttentionMapSet<float> extract_maps(const DenoiserModel<float>&, const Trajectory<float>&,
                                             const PromptSpec&, size_t);
template AttentionMapSet<double> extract_maps(const DenoiserModel<double>&, const Trajectory<double>&,
                                              const PromptSpec&, size_t);

}  // namespace lvc
