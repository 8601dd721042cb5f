#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "lvc/io.hpp"

namespace lvc {

enum class SamplerKind { kDeterministic, kAncestral };

// Noise schedule over T denoising steps; index t runs 1..T with t = T the
// noisiest. alpha_bar(0) = 1 is the clean endpoint.
struct DiffusionSchedule {
    size_t total_steps = 50;
    std::vector<double> beta;       // beta[t-1] for t in 1..T
    std::vector<double> alpha_bar;  // alpha_bar[t] for t in 0..T
    SamplerKind sampler = SamplerKind::kDeterministic;

    static DiffusionSchedule linear(size_t steps, double beta_min, double beta_max,
                                    SamplerKind kind = SamplerKind::kDeterministic) {
        if (steps > 0 && (beta_min <= 0 || beta_max >= 1 || beta_min > beta_max))
            throw std::runtime_error("schedule: betas must satisfy 0 < beta_min <= beta_max < 1");
        DiffusionSchedule s;
        s.total_steps = steps;
        s.sampler = kind;
        s.alpha_bar.assign(steps + 1, 1.0);
        for (size_t t = 1; t <= steps; ++t) {
            double b = steps == 1 ? beta_min
                                  : beta_min + (beta_max - beta_min) * double(t - 1) / double(steps - 1);
            s.beta.push_back(b);
            s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - b);
        }
        return s;
    }

    static DiffusionSchedule from_config(const RunConfig& cfg) {
        SamplerKind kind = cfg.get("sched.sampler") == "ancestral" ? SamplerKind::kAncestral
                                                                   : SamplerKind::kDeterministic;
        if (cfg.get("sched.sampler") != "ancestral" && cfg.get("sched.sampler") != "deterministic")
            throw std::runtime_error("sched.sampler must be deterministic or ancestral");
        return linear(cfg.get_u64("sched.steps"), cfg.get_f64("sched.beta_min"),
                      cfg.get_f64("sched.beta_max"), kind);
    }

    double sqrt_ab(size_t t) const { return std::sqrt(alpha_bar.at(t)); }
    double sqrt_1mab(size_t t) const { return std::sqrt(1.0 - alpha_bar.at(t)); }
};

}  // namespace lvc
