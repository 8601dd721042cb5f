#pragma once

#include "lvc/guidance.hpp"

namespace lvc {

struct AccuracyCell {
    size_t pass = 0;
    size_t total = 0;
    double acc() const { return total ? static_cast<double>(pass) / static_cast<double>(total) : 0.0; }
};

struct EvalReport {
    std::vector<int> relations;
    size_t n_seeds = 0;
    uint64_t seed_base = 0;
    bool has_baseline = false;
    bool has_guided = false;
    std::vector<AccuracyCell> baseline;  // indexed like relations
    std::vector<AccuracyCell> guided;
    // per-seed outcomes, indexed [relation_idx * n_seeds + seed_idx]
    std::vector<uint8_t> baseline_outcomes;
    std::vector<uint8_t> guided_outcomes;
    std::string guided_steps_echo;  // the guided-step set, verbatim
    KvFile config_echo;

    double baseline_avg() const;
    double guided_avg() const;
    KvFile to_kv(const std::string& prefix = "") const;
    std::string to_table() const;
};

// Per (relation, seed): build a prompt, sample guided or unguided, check the
// oracle. Seeds are disjoint per-cell streams derived from seed_base, so
// outcome i never depends on n_seeds or the thread count.
EvalReport eval_composition(const DenoiserModel<float>& gen, const ClassifierModel<float>& clf,
                            const std::vector<int>& relations, size_t n_seeds, bool guided,
                            const GuidanceSchedule& schedule, uint64_t seed_base, size_t threads = 1);

// Baseline and guided columns over identical per-seed prompts and noise.
EvalReport eval_composition_paired(const DenoiserModel<float>& gen, const ClassifierModel<float>& clf,
                                   const std::vector<int>& relations, size_t n_seeds,
                                   const GuidanceSchedule& schedule, uint64_t seed_base,
                                   size_t threads = 1);

struct LeakageReport {
    double dual_on_wrong = 0;     // accuracy of the dual-trained classifier on p- maps
    double nodual_on_wrong = 0;
    double dual_on_correct = 0;   // sanity rows: standard held-out style accuracy
    double nodual_on_correct = 0;
    double gap = 0;               // dual_on_wrong - nodual_on_wrong
    size_t videos = 0;
};

// Evaluates both classifiers on maps extracted from wrong-prompt inversions
// of held-out dataset videos; the correct-prompt rows are the sanity check.
LeakageReport eval_leakage(const std::filesystem::path& dataset_dir, const DenoiserModel<float>& gen,
                           const ClassifierModel<float>& clf_dual, const ClassifierModel<float>& clf_nodual,
                           size_t n_videos, uint64_t seed, size_t threads = 1);

struct AblationResult {
    std::string name;            // first-8 | first-2 | all-steps
    std::string steps_echo;
    EvalReport report;
};

// Runs the guided evaluation under the first-8, first-2 and all-steps
// schedules (in that order) against one shared baseline.
std::vector<AblationResult> eval_ablation(const DenoiserModel<float>& gen, const ClassifierModel<float>& clf,
                                          const std::vector<int>& relations, size_t n_seeds, double eta,
                                          uint64_t seed_base, size_t threads = 1,
                                          size_t all_steps_seeds = 0);

std::string format_step_set(const std::set<size_t>& steps);

void write_report_files(const std::filesystem::path& out_dir, const KvFile& kv, const std::string& table);

}  // namespace lvc
