#include "cli_app.hpp"

#include <CLI11.hpp>
#include <iostream>

#include "lvc/eval.hpp"
#include "lvc/gradcheck.hpp"

namespace {

using namespace lvc;

struct Common {
    uint64_t seed = 0;
    std::string config_path;
    std::string out;
    size_t threads = 0;  // 0 = take eval.threads from config

    RunConfig config() const {
        RunConfig cfg = config_path.empty() ? RunConfig() : RunConfig::from_file(config_path);
        return cfg;
    }
    size_t effective_threads(const RunConfig& cfg) const {
        return threads ? threads : cfg.get_u64("eval.threads");
    }
};

void add_common(CLI::App* cmd, Common& c, bool needs_out = true) {
    cmd->add_option("--seed", c.seed, "Deterministic seed")->capture_default_str();
    cmd->add_option("--config", c.config_path, "key=value configuration file");
    if (needs_out) cmd->add_option("--out", c.out, "Output path")->required();
    cmd->add_option("--threads", c.threads, "Worker threads (default from config, 1)");
}

PromptSpec build_prompt(int subject, int object, int relation, const WorldConfig& wc) {
    if (subject < 0 || object < 0 || subject >= static_cast<int>(wc.n_shapes) ||
        object >= static_cast<int>(wc.n_shapes))
        throw std::runtime_error("subject/object shape index out of range");
    PromptSpec p;
    p.tokens = {subject, PromptSpec::relation_token(relation, wc), object};
    p.entity_positions = {0, 2};
    p.relation_label = relation;
    return p;
}

void write_video(const std::filesystem::path& path, const LatentVideo& v) {
    write_tensor_f32(path, v.shape(), v.v);
}

LatentVideo read_video(const std::filesystem::path& path) {
    Array<float> arr = read_tensor_f32(path);
    if (arr.shape.size() != 4) throw std::runtime_error("video tensor must be rank 4: " + path.string());
    LatentVideo v(arr.shape[0], arr.shape[1], arr.shape[2], arr.shape[3]);
    v.v = std::move(arr.data);
    return v;
}

void write_meta(const std::filesystem::path& out, const RunConfig& cfg, const KvFile& extra) {
    KvFile kv = cfg.echo();
    for (const auto& [k, v] : extra.lines()) kv.set(k, v);
    kv.save(out);
}

int cmd_gen_world(const Common& c, size_t num) {
    RunConfig cfg = c.config();
    WorldConfig wc = WorldConfig::from_config(cfg);
    make_dataset(num, c.seed, c.out, wc, c.effective_threads(cfg));
    KvFile extra;
    extra.set_u64("seed", c.seed);
    write_meta(std::filesystem::path(c.out) / "run.kv", cfg, extra);
    std::cout << "wrote " << num << " samples to " << c.out << "\n";
    return 0;
}

int cmd_train_generator(const Common& c, const std::string& dataset) {
    RunConfig cfg = c.config();
    WorldConfig wc = WorldConfig::from_config(cfg);
    DenoiserModel<float> model(wc, GeneratorConfig::from_config(cfg), DiffusionSchedule::from_config(cfg),
                               c.seed);
    TrainStats stats = train_denoiser(model, dataset, cfg, c.seed, [](size_t it, double loss) {
        std::cout << "iter " << it << " loss " << loss << "\n";
    });
    model.save(c.out);
    KvFile extra;
    extra.set_u64("seed", c.seed);
    extra.set_f64("initial_loss", stats.initial_loss);
    extra.set_f64("final_loss", stats.final_loss);
    write_meta(std::filesystem::path(c.out) / "run.kv", cfg, extra);
    std::cout << "loss " << stats.initial_loss << " -> " << stats.final_loss << "\n";
    return 0;
}

int cmd_train_classifier(const Common& c, const std::string& dataset, const std::string& gen_path,
                         bool dual_on, bool dual_off) {
    RunConfig cfg = c.config();
    if (dual_on && dual_off) throw CLI::ValidationError("--dual", "on and off are mutually exclusive");
    if (dual_on) cfg.set("clf.dual", "1");
    if (dual_off) cfg.set("clf.dual", "0");
    DenoiserModel<float> gen = DenoiserModel<float>::load(gen_path);
    ClassifierModel<float> model(gen.world(), ClassifierConfig::from_config(cfg), gen.config().layers,
                                 gen.config().heads, gen.schedule().total_steps, c.seed);
    ClassifierTrainReport rep =
        train_classifier(model, dataset, gen, cfg.get_bool("clf.dual"), cfg, c.seed,
                         c.effective_threads(cfg), [](const std::string& s) { std::cout << s << "\n"; });
    model.save(c.out);
    KvFile extra;
    extra.set_u64("seed", c.seed);
    extra.set_f64("train_accuracy", rep.train_accuracy);
    extra.set_f64("holdout_accuracy", rep.holdout_accuracy);
    extra.set_f64("holdout_step_accuracy", rep.holdout_step_accuracy);
    extra.set_u64("train_videos", rep.train_videos);
    extra.set_u64("holdout_videos", rep.holdout_videos);
    extra.set_u64("examples_per_epoch", rep.examples_consumed);
    write_meta(std::filesystem::path(c.out) / "run.kv", cfg, extra);
    std::cout << "train acc " << rep.train_accuracy << " holdout acc " << rep.holdout_accuracy << "\n";
    return 0;
}

int cmd_invert(const Common& c, const std::string& gen_path, const std::string& video_path,
               const std::string& prompt_path) {
    RunConfig cfg = c.config();
    DenoiserModel<float> gen = DenoiserModel<float>::load(gen_path);
    LatentVideo video = read_video(video_path);
    // prompt files use the dataset format
    std::ifstream pf(prompt_path);
    if (!pf) throw std::runtime_error("cannot open " + prompt_path);
    PromptSpec prompt;
    {
        std::string line;
        std::getline(pf, line);
        std::istringstream s1(line);
        int t;
        while (s1 >> t) prompt.tokens.push_back(t);
        std::getline(pf, line);
        std::istringstream s2(line);
        while (s2 >> t) prompt.entity_positions.push_back(t);
        std::getline(pf, line);
        prompt.relation_label = std::stoi(line);
    }
    Trajectory<float> traj = invert(gen, video, prompt, cfg.get_u64("clf.invert_fp_iters"));
    std::filesystem::create_directories(c.out);
    for (size_t t = 0; t < traj.latents.size(); ++t) {
        char name[32];
        std::snprintf(name, sizeof(name), "z_%03zu.cvgt", t);
        write_video(std::filesystem::path(c.out) / name, traj.latents[t]);
    }
    KvFile extra;
    extra.set_u64("steps", traj.steps());
    write_meta(std::filesystem::path(c.out) / "run.kv", cfg, extra);
    std::cout << "trajectory with " << traj.latents.size() << " latents -> " << c.out << "\n";
    return 0;
}

int cmd_generate(const Common& c, const std::string& gen_path, const std::string& clf_path,
                 const std::string& relation, int subject, int object, const std::string& guided) {
    RunConfig cfg = c.config();
    DenoiserModel<float> gen = DenoiserModel<float>::load(gen_path);
    PromptSpec prompt = build_prompt(subject, object, LabelVocab::index(relation), gen.world());
    LatentVideo video;
    bool want_guided = guided != "off";
    if (want_guided) {
        if (clf_path.empty()) throw std::runtime_error("--classifier is required unless --guided off");
        ClassifierModel<float> clf = ClassifierModel<float>::load(clf_path);
        GuidanceSchedule sched = GuidanceSchedule::from_config(cfg, gen.schedule().total_steps);
        video = guided_sample(gen, clf, prompt, prompt.relation_label, c.seed, sched);
    } else {
        video = sample(gen, prompt, c.seed);
    }
    write_video(c.out, video);
    KvFile extra;
    extra.set_u64("seed", c.seed);
    extra.set("relation", relation);
    extra.set("guided", want_guided ? "on" : "off");
    bool ok = false;
    try {
        ok = oracle_check(video, prompt.relation_label, subject, object, gen.world());
    } catch (const std::runtime_error&) {
    }
    extra.set("oracle", ok ? "pass" : "fail");
    write_meta(c.out + ".meta.kv", cfg, extra);
    std::cout << "oracle " << (ok ? "pass" : "fail") << " -> " << c.out << "\n";
    return 0;
}

int cmd_generate_multi(const Common& c, const std::string& gen_path, const std::string& clf_path,
                       const std::string& constraints_text, int subject, int object,
                       const std::string& relation) {
    RunConfig cfg = c.config();
    DenoiserModel<float> gen = DenoiserModel<float>::load(gen_path);
    ClassifierModel<float> clf = ClassifierModel<float>::load(clf_path);
    std::vector<CompositionConstraint> constraints = parse_constraints(constraints_text);
    int rel = relation.empty() ? constraints.front().label : LabelVocab::index(relation);
    PromptSpec prompt = build_prompt(subject, object, rel, gen.world());
    GuidanceSchedule sched = GuidanceSchedule::from_config(cfg, gen.schedule().total_steps);
    LatentVideo video = multi_guided_sample(gen, clf, prompt, constraints, c.seed, sched);
    write_video(c.out, video);
    KvFile extra;
    extra.set_u64("seed", c.seed);
    extra.set("constraints", constraints_text);
    write_meta(c.out + ".meta.kv", cfg, extra);
    std::cout << "wrote " << c.out << "\n";
    return 0;
}

int cmd_generate_ar(const Common& c, const std::string& gen_path, const std::string& clf_path,
                    const std::string& segments_text, int subject, int object) {
    RunConfig cfg = c.config();
    DenoiserModel<float> gen = DenoiserModel<float>::load(gen_path);
    ClassifierModel<float> clf = ClassifierModel<float>::load(clf_path);
    std::vector<ARSegment> segments;
    for (const std::string& name : parse_segments(segments_text)) {
        int rel = LabelVocab::index(name);
        segments.push_back({build_prompt(subject, object, rel, gen.world()), rel});
    }
    GuidanceSchedule sched = GuidanceSchedule::from_config(cfg, gen.schedule().total_steps);
    ARResult<float> res =
        ar_guided_sample(gen, clf, segments, c.seed, sched, cfg.get_u64("ar.context_frames"));
    write_video(c.out, res.video);
    std::filesystem::path batches_dir = std::filesystem::path(c.out + ".batches");
    std::filesystem::create_directories(batches_dir);
    for (size_t m = 0; m < res.batches.size(); ++m) {
        char name[32];
        std::snprintf(name, sizeof(name), "batch_%02zu.cvgt", m);
        write_video(batches_dir / name, res.batches[m]);
    }
    KvFile extra;
    extra.set_u64("seed", c.seed);
    extra.set("segments", segments_text);
    extra.set_u64("context_frames", res.context_frames);
    write_meta(c.out + ".meta.kv", cfg, extra);
    std::cout << "wrote " << c.out << " (" << res.video.F << " frames)\n";
    return 0;
}

int cmd_eval(const Common& c, const std::string& gen_path, const std::string& clf_path,
             const std::string& mode, const std::string& dataset, const std::string& clf_nodual_path,
             size_t seeds_override) {
    RunConfig cfg = c.config();
    DenoiserModel<float> gen = DenoiserModel<float>::load(gen_path);
    ClassifierModel<float> clf = ClassifierModel<float>::load(clf_path);
    size_t n_seeds = seeds_override ? seeds_override : cfg.get_u64("eval.seeds");
    size_t threads = c.effective_threads(cfg);
    if (mode == "composition") {
        std::vector<int> rels;
        for (size_t r = 0; r < LabelVocab::kCount; ++r) rels.push_back(static_cast<int>(r));
        GuidanceSchedule sched = GuidanceSchedule::from_config(cfg, gen.schedule().total_steps);
        EvalReport rep = eval_composition_paired(gen, clf, rels, n_seeds, sched, c.seed, threads);
        rep.config_echo = cfg.echo();
        write_report_files(c.out, rep.to_kv(), rep.to_table());
        std::cout << rep.to_table();
        std::cout << "baseline avg " << rep.baseline_avg() << " guided avg " << rep.guided_avg() << "\n";
    } else if (mode == "leakage") {
        if (dataset.empty() || clf_nodual_path.empty())
            throw std::runtime_error("leakage mode needs --dataset and --classifier-nodual");
        ClassifierModel<float> clf_nodual = ClassifierModel<float>::load(clf_nodual_path);
        LeakageReport rep = eval_leakage(dataset, gen, clf, clf_nodual, n_seeds, c.seed, threads);
        KvFile kv = cfg.echo();
        kv.set_f64("leakage.dual_on_wrong", rep.dual_on_wrong);
        kv.set_f64("leakage.nodual_on_wrong", rep.nodual_on_wrong);
        kv.set_f64("leakage.dual_on_correct", rep.dual_on_correct);
        kv.set_f64("leakage.nodual_on_correct", rep.nodual_on_correct);
        kv.set_f64("leakage.gap", rep.gap);
        kv.set_u64("leakage.videos", rep.videos);
        std::ostringstream table;
        table << "classifier      p+ acc   p- acc\n";
        table << "dual           " << rep.dual_on_correct << "  " << rep.dual_on_wrong << "\n";
        table << "nodual         " << rep.nodual_on_correct << "  " << rep.nodual_on_wrong << "\n";
        table << "gap (p-)       " << rep.gap << "\n";
        write_report_files(c.out, kv, table.str());
        std::cout << table.str();
    } else {
        throw std::runtime_error("unknown eval mode: " + mode);
    }
    return 0;
}

int cmd_ablate(const Common& c, const std::string& gen_path, const std::string& clf_path,
               size_t seeds_override, size_t all_steps_seeds) {
    RunConfig cfg = c.config();
    DenoiserModel<float> gen = DenoiserModel<float>::load(gen_path);
    ClassifierModel<float> clf = ClassifierModel<float>::load(clf_path);
    size_t n_seeds = seeds_override ? seeds_override : cfg.get_u64("eval.seeds");
    std::vector<int> rels;
    for (size_t r = 0; r < LabelVocab::kCount; ++r) rels.push_back(static_cast<int>(r));
    auto results = eval_ablation(gen, clf, rels, n_seeds, cfg.get_f64("guid.eta"), c.seed,
                                 c.effective_threads(cfg), all_steps_seeds);
    KvFile kv = cfg.echo();
    std::ostringstream table;
    table << "schedule    avg      steps\n";
    for (const auto& r : results) {
        kv.set_f64("ablation." + r.name + ".avg", r.report.guided_avg());
        kv.set("ablation." + r.name + ".steps", r.steps_echo);
        kv.set_u64("ablation." + r.name + ".n_seeds", r.report.n_seeds);
        table << r.name << "  " << r.report.guided_avg() << "  [" << r.steps_echo << "]\n";
    }
    write_report_files(c.out, kv, table.str());
    std::cout << table.str();
    return 0;
}

int cmd_check_grads(const Common& c, const std::string& gen_path, const std::string& clf_path,
                    size_t latents, size_t coords) {
    RunConfig cfg = c.config();
    DenoiserModel<double> gen = gen_path.empty()
                                    ? DenoiserModel<float>(WorldConfig::from_config(cfg),
                                                           GeneratorConfig::from_config(cfg),
                                                           DiffusionSchedule::from_config(cfg), c.seed ^ 0x9e1)
                                          .cast<double>()
                                    : DenoiserModel<float>::load(gen_path).cast<double>();
    ClassifierModel<double> clf =
        clf_path.empty()
            ? ClassifierModel<float>(gen.world(), ClassifierConfig::from_config(cfg), gen.config().layers,
                                     gen.config().heads, gen.schedule().total_steps, c.seed ^ 0x37a)
                  .cast<double>()
            : ClassifierModel<float>::load(clf_path).cast<double>();

    const WorldConfig& wc = gen.world();
    double worst = 0;
    for (size_t i = 0; i < latents; ++i) {
        Rng rng(mix_seed(c.seed, 0x6e0000ULL + i));
        VideoT<double> z(wc.frames, wc.height, wc.width, wc.channels);
        for (auto& x : z.v) x = rng.normal();
        size_t t = 1 + rng.below(gen.schedule().total_steps);
        int relation = static_cast<int>(rng.below(LabelVocab::kCount));
        int s = static_cast<int>(rng.below(wc.n_shapes));
        int o = static_cast<int>((s + 2 + rng.below(wc.n_shapes - 3)) % wc.n_shapes);
        PromptSpec prompt = build_prompt(s, o, relation, wc);
        int y = static_cast<int>(rng.below(LabelVocab::kCount));

        CompLossResult<double> res = comp_loss_grad(gen, clf, z, t, prompt, y);
        auto f = [&](const std::vector<double>& x) {
            VideoT<double> zz = z;
            zz.v = x;
            return comp_loss(gen, clf, zz, t, prompt, y);
        };
        double err = finite_diff_check<double>(f, z.v, res.grad.v, 1e-4, coords, mix_seed(c.seed, i));
        worst = std::max(worst, err);
        std::cout << "latent " << i << " t=" << t << " rel err " << err << "\n";
    }
    std::cout << "max relative error " << worst << "\n";
    return worst <= 1e-3 ? 0 : 2;
}

}  // namespace

int lvc_cli_main(int argc, const char* const* argv) {
    CLI::App app{"toy latent-video diffusion with classifier-guided compositional control"};
    app.require_subcommand(1);

    Common c;
    size_t num = 8;
    std::string dataset, gen_path, clf_path, clf_nodual_path;
    std::string video_path, prompt_path;
    std::string relation = "toward", guided = "on", mode = "composition";
    std::string constraints_text, segments_text;
    int subject = 0, object = 3;
    bool dual_on = false, dual_off = false;
    size_t seeds_override = 0, all_steps_seeds = 0;
    size_t latents = 50, coords = 6;

    auto* g = app.add_subcommand("gen-world", "Generate a labeled synthetic dataset");
    add_common(g, c);
    g->add_option("--num", num, "Sample count")->capture_default_str();

    auto* tg = app.add_subcommand("train-generator", "Train the toy video diffusion model");
    add_common(tg, c);
    tg->add_option("--dataset", dataset)->required();

    auto* tc = app.add_subcommand("train-classifier", "Train the compositional classifier");
    add_common(tc, c);
    tc->add_option("--dataset", dataset)->required();
    tc->add_option("--generator", gen_path)->required();
    tc->add_flag("--dual", dual_on, "Force dual inversion on");
    tc->add_flag("--no-dual", dual_off, "Force dual inversion off");

    auto* iv = app.add_subcommand("invert", "Invert a video into its latent trajectory");
    add_common(iv, c);
    iv->add_option("--generator", gen_path)->required();
    iv->add_option("--video", video_path)->required();
    iv->add_option("--prompt-file", prompt_path)->required();

    auto* ge = app.add_subcommand("generate", "Sample a video, optionally guided");
    add_common(ge, c);
    ge->add_option("--generator", gen_path)->required();
    ge->add_option("--classifier", clf_path);
    ge->add_option("--relation", relation)->capture_default_str();
    ge->add_option("--subject", subject)->capture_default_str();
    ge->add_option("--object", object)->capture_default_str();
    ge->add_option("--guided", guided, "on|off")->capture_default_str();

    auto* gm = app.add_subcommand("generate-multi", "Sample with temporal composition constraints");
    add_common(gm, c);
    gm->add_option("--generator", gen_path)->required();
    gm->add_option("--classifier", clf_path)->required();
    gm->add_option("--constraints", constraints_text, "label:start:end[:weight],...")->required();
    gm->add_option("--relation", relation, "Prompt relation (default: first constraint)");
    gm->add_option("--subject", subject)->capture_default_str();
    gm->add_option("--object", object)->capture_default_str();

    auto* ga = app.add_subcommand("generate-ar", "Autoregressive batches with per-batch targets");
    add_common(ga, c);
    ga->add_option("--generator", gen_path)->required();
    ga->add_option("--classifier", clf_path)->required();
    ga->add_option("--segments", segments_text, "relation|relation|...")->required();
    ga->add_option("--subject", subject)->capture_default_str();
    ga->add_option("--object", object)->capture_default_str();

    auto* ev = app.add_subcommand("eval", "Oracle accuracy or leakage evaluation");
    add_common(ev, c);
    ev->add_option("--generator", gen_path)->required();
    ev->add_option("--classifier", clf_path)->required();
    ev->add_option("--mode", mode, "composition|leakage")->capture_default_str();
    ev->add_option("--dataset", dataset, "Dataset for leakage mode");
    ev->add_option("--classifier-nodual", clf_nodual_path, "Second classifier for leakage mode");
    ev->add_option("--seeds", seeds_override, "Override eval.seeds");

    auto* ab = app.add_subcommand("ablate", "Guided accuracy under first-8/first-2/all-steps");
    add_common(ab, c);
    ab->add_option("--generator", gen_path)->required();
    ab->add_option("--classifier", clf_path)->required();
    ab->add_option("--seeds", seeds_override, "Override eval.seeds");
    ab->add_option("--all-steps-seeds", all_steps_seeds, "Seed count for the all-steps leg");

    auto* cg = app.add_subcommand("check-grads", "Finite-difference check of the guidance gradient");
    add_common(cg, c, /*needs_out=*/false);
    cg->add_option("--generator", gen_path, "Checkpoint (random weights when omitted)");
    cg->add_option("--classifier", clf_path, "Checkpoint (random weights when omitted)");
    cg->add_option("--latents", latents)->capture_default_str();
    cg->add_option("--coords", coords, "Probed coordinates per latent")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {  // --help
            std::cout << app.help();
            return 0;
        }
        std::cerr << e.what() << "\n" << app.help();
        return 1;
    }

    try {
        if (g->parsed()) return cmd_gen_world(c, num);
        if (tg->parsed()) return cmd_train_generator(c, dataset);
        if (tc->parsed()) return cmd_train_classifier(c, dataset, gen_path, dual_on, dual_off);
        if (iv->parsed()) return cmd_invert(c, gen_path, video_path, prompt_path);
        if (ge->parsed()) return cmd_generate(c, gen_path, clf_path, relation, subject, object, guided);
        if (gm->parsed())
            return cmd_generate_multi(c, gen_path, clf_path, constraints_text, subject, object, relation);
        if (ga->parsed()) return cmd_generate_ar(c, gen_path, clf_path, segments_text, subject, object);
        if (ev->parsed())
            return cmd_eval(c, gen_path, clf_path, mode, dataset, clf_nodual_path, seeds_override);
        if (ab->parsed()) return cmd_ablate(c, gen_path, clf_path, seeds_override, all_steps_seeds);
        if (cg->parsed()) return cmd_check_grads(c, gen_path, clf_path, latents, coords);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    std::cerr << "no subcommand\n";
    return 1;
}
