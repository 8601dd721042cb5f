#include "lvc/eval.hpp"

#include <atomic>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "lvc/rng.hpp"

namespace lvc {

namespace {

// Stable per-cell seed: independent of n_seeds, relation list order, threads.
uint64_t cell_seed(uint64_t base, int relation, size_t i) {
    return mix_seed(base, (static_cast<uint64_t>(relation) << 40) ^ i);
}

// Evaluation prompt: subject/object shapes drawn with the same separation
// rule the world uses, plus the requested relation token.
PromptSpec eval_prompt(int relation, uint64_t seed, const WorldConfig& wc) {
    Rng rng(mix_seed(seed, 0xe7a1ULL));
    int s = static_cast<int>(rng.below(wc.n_shapes));
    std::vector<int> far;
    for (int c = 0; c < static_cast<int>(wc.n_shapes); ++c)
        if (std::abs(c - s) >= 2) far.push_back(c);
    int o = far[rng.below(far.size())];
    PromptSpec p;
    p.tokens = {s, PromptSpec::relation_token(relation, wc), o};
    p.entity_positions = {0, 2};
    p.relation_label = relation;
    return p;
}

void parallel_tasks(size_t count, size_t threads, const std::function<void(size_t)>& fn) {
    if (threads <= 1) {
        for (size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    for (size_t t = 0; t < std::min(threads, count); ++t)
        pool.emplace_back([&] {
            for (;;) {
                size_t i = next.fetch_add(1);
                if (i >= count) return;
                fn(i);
            }
        });
    for (auto& th : pool) th.join();
}

}  // namespace

double EvalReport::baseline_avg() const {
    double s = 0;
    for (const auto& c : baseline) s += c.acc();
    return baseline.empty() ? 0.0 : s / static_cast<double>(baseline.size());
}

double EvalReport::guided_avg() const {
    double s = 0;
    for (const auto& c : guided) s += c.acc();
    return guided.empty() ? 0.0 : s / static_cast<double>(guided.size());
}

KvFile EvalReport::to_kv(const std::string& prefix) const {
    KvFile kv;
    kv.set_u64(prefix + "n_seeds", n_seeds);
    kv.set_u64(prefix + "seed_base", seed_base);
    kv.set(prefix + "guided_steps", guided_steps_echo);
    for (size_t r = 0; r < relations.size(); ++r) {
        const std::string& name = LabelVocab::name(relations[r]);
        if (has_baseline) {
            kv.set_f64(prefix + "baseline." + name, baseline[r].acc());
            kv.set_u64(prefix + "baseline." + name + ".count", baseline[r].total);
        }
        if (has_guided) {
            kv.set_f64(prefix + "guided." + name, guided[r].acc());
            kv.set_u64(prefix + "guided." + name + ".count", guided[r].total);
        }
    }
    if (has_baseline) kv.set_f64(prefix + "baseline.avg", baseline_avg());
    if (has_guided) kv.set_f64(prefix + "guided.avg", guided_avg());
    for (const auto& [k, v] : config_echo.lines()) kv.set(prefix + k, v);
    return kv;
}

std::string EvalReport::to_table() const {
    std::ostringstream os;
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%-12s %10s %10s\n", "relation", "baseline", "guided");
    os << buf;
    for (size_t r = 0; r < relations.size(); ++r) {
        std::snprintf(buf, sizeof(buf), "%-12s %10s %10s\n", LabelVocab::name(relations[r]).c_str(),
                      has_baseline ? std::to_string(baseline[r].acc()).substr(0, 6).c_str() : "-",
                      has_guided ? std::to_string(guided[r].acc()).substr(0, 6).c_str() : "-");
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), "%-12s %10s %10s\n", "avg",
                  has_baseline ? std::to_string(baseline_avg()).substr(0, 6).c_str() : "-",
                  has_guided ? std::to_string(guided_avg()).substr(0, 6).c_str() : "-");
    os << buf;
    return os.str();
}

std::string format_step_set(const std::set<size_t>& steps) {
    std::string out;
    for (size_t t : steps) {
        if (!out.empty()) out += ',';
        out += std::to_string(t);
    }
    return out.empty() ? "none" : out;
}

namespace {

EvalReport run_eval(const DenoiserModel<float>& gen, const ClassifierModel<float>& clf,
                    const std::vector<int>& relations, size_t n_seeds, bool do_baseline, bool do_guided,
                    const GuidanceSchedule& schedule, uint64_t seed_base, size_t threads) {
    if (n_seeds < 1) throw std::runtime_error("eval: n_seeds must be >= 1");
    const WorldConfig& wc = gen.world();
    EvalReport rep;
    rep.relations = relations;
    rep.n_seeds = n_seeds;
    rep.seed_base = seed_base;
    rep.has_baseline = do_baseline;
    rep.has_guided = do_guided;
    rep.baseline.assign(relations.size(), {});
    rep.guided.assign(relations.size(), {});
    rep.guided_steps_echo = format_step_set(schedule.guided_steps);

    struct Outcome {
        uint8_t base_ok = 0, guided_ok = 0;
    };
    std::vector<Outcome> outcomes(relations.size() * n_seeds);

    parallel_tasks(outcomes.size(), threads, [&](size_t task) {
        size_t r = task / n_seeds;
        size_t i = task % n_seeds;
        int relation = relations[r];
        uint64_t s = cell_seed(seed_base, relation, i);
        PromptSpec prompt = eval_prompt(relation, s, wc);
        auto check = [&](const LatentVideo& video) -> bool {
            try {
                return oracle_check(video, relation, prompt.tokens[0], prompt.tokens[2], wc);
            } catch (const std::runtime_error&) {
                return false;  // unresolvable entities count as a miss
            }
        };
        if (do_baseline) outcomes[task].base_ok = check(sample(gen, prompt, s)) ? 1 : 0;
        if (do_guided)
            outcomes[task].guided_ok = check(guided_sample(gen, clf, prompt, relation, s, schedule)) ? 1 : 0;
    });

    rep.baseline_outcomes.resize(do_baseline ? outcomes.size() : 0);
    rep.guided_outcomes.resize(do_guided ? outcomes.size() : 0);
    for (size_t r = 0; r < relations.size(); ++r)
        for (size_t i = 0; i < n_seeds; ++i) {
            const Outcome& o = outcomes[r * n_seeds + i];
            if (do_baseline) {
                rep.baseline[r].pass += o.base_ok;
                rep.baseline[r].total += 1;
                rep.baseline_outcomes[r * n_seeds + i] = o.base_ok;
            }
            if (do_guided) {
                rep.guided[r].pass += o.guided_ok;
                rep.guided[r].total += 1;
                rep.guided_outcomes[r * n_seeds + i] = o.guided_ok;
            }
        }
    return rep;
}

}  // namespace

EvalReport eval_composition(const DenoiserModel<float>& gen, const ClassifierModel<float>& clf,
                            const std::vector<int>& relations, size_t n_seeds, bool guided,
                            const GuidanceSchedule& schedule, uint64_t seed_base, size_t threads) {
    return run_eval(gen, clf, relations, n_seeds, !guided, guided, schedule, seed_base, threads);
}

EvalReport eval_composition_paired(const DenoiserModel<float>& gen, const ClassifierModel<float>& clf,
                                   const std::vector<int>& relations, size_t n_seeds,
                                   const GuidanceSchedule& schedule, uint64_t seed_base, size_t threads) {
    return run_eval(gen, clf, relations, n_seeds, true, true, schedule, seed_base, threads);
}

LeakageReport eval_leakage(const std::filesystem::path& dataset_dir, const DenoiserModel<float>& gen,
                           const ClassifierModel<float>& clf_dual, const ClassifierModel<float>& clf_nodual,
                           size_t n_videos, uint64_t seed, size_t threads) {
    const WorldConfig& wa = clf_dual.world();
    const WorldConfig& wb = clf_nodual.world();
    if (wa.frames != wb.frames || wa.height != wb.height || wa.width != wb.width ||
        clf_dual.gen_layers() != clf_nodual.gen_layers() ||
        clf_dual.total_steps() != clf_nodual.total_steps())
        throw std::runtime_error("eval_leakage: classifier label/configuration mismatch");

    size_t count = dataset_count(dataset_dir);
    n_videos = std::min(n_videos, count);
    if (n_videos == 0) throw std::runtime_error("eval_leakage: empty dataset");

    struct Row {
        uint8_t dual_wrong = 0, nodual_wrong = 0, dual_ok = 0, nodual_ok = 0;
    };
    std::vector<Row> rows(n_videos);

    parallel_tasks(n_videos, threads, [&](size_t i) {
        // evaluate on the tail of the dataset, away from typical train prefixes
        size_t idx = count - 1 - i;
        DatasetSample s = load_sample(dataset_dir, idx);
        Rng rng(mix_seed(seed, 0x1eafULL) ^ idx);
        int wrong = static_cast<int>(rng.below(LabelVocab::kCount - 1));
        if (wrong >= s.label) ++wrong;
        PromptSpec pneg = prompt_with_relation(s.prompt, wrong, gen.world());

        Trajectory<float> tneg = invert(gen, s.video, pneg, clf_dual.config().invert_fp_iters);
        AttentionMapSet<float> mneg = extract_maps(gen, tneg, pneg, clf_dual.config().stride);
        Trajectory<float> tpos = invert(gen, s.video, s.prompt, clf_dual.config().invert_fp_iters);
        AttentionMapSet<float> mpos = extract_maps(gen, tpos, s.prompt, clf_dual.config().stride);

        auto argmax = [](const std::vector<double>& v) {
            size_t a = 0;
            for (size_t c = 1; c < v.size(); ++c)
                if (v[c] > v[a]) a = c;
            return static_cast<int>(a);
        };
        rows[i].dual_wrong = argmax(classify_video(clf_dual, mneg)) == s.label ? 1 : 0;
        rows[i].nodual_wrong = argmax(classify_video(clf_nodual, mneg)) == s.label ? 1 : 0;
        rows[i].dual_ok = argmax(classify_video(clf_dual, mpos)) == s.label ? 1 : 0;
        rows[i].nodual_ok = argmax(classify_video(clf_nodual, mpos)) == s.label ? 1 : 0;
    });

    LeakageReport rep;
    rep.videos = n_videos;
    for (const Row& r : rows) {
        rep.dual_on_wrong += r.dual_wrong;
        rep.nodual_on_wrong += r.nodual_wrong;
        rep.dual_on_correct += r.dual_ok;
        rep.nodual_on_correct += r.nodual_ok;
    }
    rep.dual_on_wrong /= static_cast<double>(n_videos);
    rep.nodual_on_wrong /= static_cast<double>(n_videos);
    rep.dual_on_correct /= static_cast<double>(n_videos);
    rep.nodual_on_correct /= static_cast<double>(n_videos);
    rep.gap = rep.dual_on_wrong - rep.nodual_on_wrong;
    return rep;
}

std::vector<AblationResult> eval_ablation(const DenoiserModel<float>& gen, const ClassifierModel<float>& clf,
                                          const std::vector<int>& relations, size_t n_seeds, double eta,
                                          uint64_t seed_base, size_t threads, size_t all_steps_seeds) {
    const size_t T = gen.schedule().total_steps;
    if (all_steps_seeds == 0) all_steps_seeds = n_seeds;
    struct Spec {
        const char* name;
        GuidanceSchedule sched;
        size_t seeds;
    };
    std::vector<Spec> specs = {
        {"first-8", GuidanceSchedule::first_n(8, T, eta), n_seeds},
        {"first-2", GuidanceSchedule::first_n(2, T, eta), n_seeds},
        {"all-steps", GuidanceSchedule::all_steps(T, eta), all_steps_seeds},
    };
    std::vector<AblationResult> out;
    for (const auto& sp : specs) {
        AblationResult r;
        r.name = sp.name;
        r.steps_echo = format_step_set(sp.sched.guided_steps);
        r.report = run_eval(gen, clf, relations, sp.seeds, false, true, sp.sched, seed_base, threads);
        out.push_back(std::move(r));
    }
    return out;
}

void write_report_files(const std::filesystem::path& out_dir, const KvFile& kv, const std::string& table) {
    std::filesystem::create_directories(out_dir);
    kv.save(out_dir / "report.kv");
    std::ofstream f(out_dir / "report.txt", std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + (out_dir / "report.txt").string());
    f << table;
}

}  // namespace lvc
