#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "lvc/rng.hpp"

namespace lvc {

// Central-difference check of an analytic gradient. `f` evaluates the scalar
// objective at a flat coordinate vector; `analytic` is the gradient under
// test, already evaluated at `x`. Relative error uses max(|a|,|b|,1e-8) as
// the denominator. When `max_coords` > 0 and the input is larger, a seeded
// coordinate subset is probed instead of every coordinate.
template <typename T>
double finite_diff_check(const std::function<double(const std::vector<T>&)>& f,
                         std::vector<T> x,
                         const std::vector<T>& analytic,
                         double step = 1e-4,
                         size_t max_coords = 0,
                         uint64_t coord_seed = 0) {
    if (analytic.size() != x.size())
        throw std::runtime_error("finite_diff_check: gradient size does not match input");
    double f0 = f(x);
    if (!std::isfinite(f0)) throw std::runtime_error("finite_diff_check: non-finite objective value");

    std::vector<size_t> coords;
    if (max_coords > 0 && x.size() > max_coords) {
        Rng rng(mix_seed(coord_seed, 0x66d1fdULL));
        std::vector<uint8_t> seen(x.size(), 0);
        while (coords.size() < max_coords) {
            size_t c = static_cast<size_t>(rng.below(x.size()));
            if (!seen[c]) {
                seen[c] = 1;
                coords.push_back(c);
            }
        }
    } else {
        coords.resize(x.size());
        for (size_t i = 0; i < x.size(); ++i) coords[i] = i;
    }

    double worst = 0.0;
    for (size_t c : coords) {
        T keep = x[c];
        x[c] = keep + static_cast<T>(step);
        double fp = f(x);
        x[c] = keep - static_cast<T>(step);
        double fm = f(x);
        x[c] = keep;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("finite_diff_check: non-finite objective value");
        double numeric = (fp - fm) / (2.0 * step);
        double a = static_cast<double>(analytic[c]);
        double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
        worst = std::max(worst, std::fabs(a - numeric) / denom);
    }
    return worst;
}

}  // namespace lvc
