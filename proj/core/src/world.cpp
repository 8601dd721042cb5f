#include "lvc/world.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "lvc/rng.hpp"

namespace lvc {

namespace {

constexpr double kPi = 3.14159265358979323846;
// footprint support ends at the nominal radius: exp(-1.6^2/2) = 0.278
constexpr double kPresence = 0.278;
constexpr double kSigmaOfR = 1.6;  // footprint sigma = radius / kSigmaOfR
constexpr double kCodeSigma = 0.09;
constexpr double kMinFrameMass = 0.3;

double lens_area(double d, double r1, double r2) {
    if (d >= r1 + r2) return 0.0;
    if (d <= std::fabs(r1 - r2)) {
        double r = std::min(r1, r2);
        return kPi * r * r;
    }
    double a1 = r1 * r1 * std::acos((d * d + r1 * r1 - r2 * r2) / (2 * d * r1));
    double a2 = r2 * r2 * std::acos((d * d + r2 * r2 - r1 * r1) / (2 * d * r2));
    double k = (-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2);
    return a1 + a2 - 0.5 * std::sqrt(std::max(k, 0.0));
}

// Distance at which the subject/object disc overlap covers fraction q of the
// subject area. lens_area is monotone decreasing in d, so bisection works.
double distance_for_overlap(double q, double rs, double ro) {
    double target = q * kPi * rs * rs;
    double lo = std::fabs(rs - ro) + 1e-9, hi = rs + ro;
    for (int i = 0; i < 60; ++i) {
        double mid = 0.5 * (lo + hi);
        if (lens_area(mid, rs, ro) > target)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

struct FrameGeom {
    double sx, sy, sr, sd;  // subject: center, radius, depth
    double ox, oy, orad, od;
    double dist() const { return std::hypot(sx - ox, sy - oy); }
};

bool predicate(int relation, const std::vector<FrameGeom>& g, const WorldConfig& cfg) {
    const double H = static_cast<double>(cfg.height);
    const double W = static_cast<double>(cfg.width);
    switch (relation) {
        case kAbove:
            for (const auto& f : g)
                if ((f.oy - f.sy) * H < 2.0) return false;
            return true;
        case kBeneath:
            for (const auto& f : g)
                if ((f.sy - f.oy) * H < 2.0) return false;
            return true;
        case kNextTo:
            for (const auto& f : g) {
                double dr = std::fabs(f.sy - f.oy) * H;
                double dc = std::fabs(f.sx - f.ox) * W;
                if (dr > 1.0 || dc < 2.0 || dc > 5.0) return false;
            }
            return true;
        case kInside:
            for (const auto& f : g) {
                if (f.sr > 0.6 * f.orad) return false;
                if (f.dist() > 0.4 * f.orad) return false;
            }
            return true;
        case kInFrontOf:
        case kBehind:
            for (const auto& f : g) {
                double frac = lens_area(f.dist(), f.sr, f.orad) / (kPi * f.sr * f.sr);
                if (frac < 0.25) return false;
                if (relation == kInFrontOf && !(f.sd < f.od)) return false;
                if (relation == kBehind && !(f.sd > f.od)) return false;
            }
            return true;
        case kToward:
        case kAway: {
            if (g.size() < 2) return false;
            for (size_t i = 1; i < g.size(); ++i) {
                double step = g[i].dist() - g[i - 1].dist();
                if (relation == kToward && step >= 0) return false;
                if (relation == kAway && step <= 0) return false;
            }
            double total = std::fabs(g.back().dist() - g.front().dist());
            return total >= 0.2;
        }
        default:
            throw std::runtime_error("oracle: unknown relation index " + std::to_string(relation));
    }
}

std::vector<FrameGeom> script_geometry(const SceneScript& s) {
    const Entity& sub = s.subject();
    const Entity& obj = s.object();
    std::vector<FrameGeom> g(s.frames);
    for (size_t f = 0; f < s.frames; ++f) {
        g[f] = {sub.centers[f][0], sub.centers[f][1], sub.radius, sub.depth,
                obj.centers[f][0], obj.centers[f][1], obj.radius, obj.depth};
    }
    return g;
}

}  // namespace

WorldConfig WorldConfig::from_config(const RunConfig& cfg) {
    WorldConfig w;
    w.frames = cfg.get_u64("world.frames");
    w.height = cfg.get_u64("world.height");
    w.width = cfg.get_u64("world.width");
    w.channels = cfg.get_u64("world.channels");
    w.fps = cfg.get_f64("world.fps");
    w.n_shapes = cfg.get_u64("world.shapes");
    return w;
}

const std::array<std::string, LabelVocab::kCount>& LabelVocab::labels() {
    static const std::array<std::string, kCount> kLabels = {
        "above", "away", "behind", "beneath", "in_front_of", "inside", "next_to", "toward"};
    return kLabels;
}

int LabelVocab::index(const std::string& name) {
    const auto& l = labels();
    for (size_t i = 0; i < l.size(); ++i)
        if (l[i] == name) return static_cast<int>(i);
    throw std::runtime_error("unknown relation label: " + name);
}

const std::string& LabelVocab::name(int index) {
    if (index < 0 || index >= static_cast<int>(kCount))
        throw std::runtime_error("relation index out of range: " + std::to_string(index));
    return labels()[index];
}

std::string LabelVocab::joined(char sep) {
    std::string out;
    for (const auto& l : labels()) {
        if (!out.empty()) out.push_back(sep);
        out += l;
    }
    return out;
}

const Entity& SceneScript::subject() const {
    for (const auto& e : entities)
        if (e.id == subject_id) return e;
    throw std::runtime_error("script has no subject entity");
}
const Entity& SceneScript::object() const {
    for (const auto& e : entities)
        if (e.id == object_id) return e;
    throw std::runtime_error("script has no object entity");
}

double shape_code(int shape_index, const WorldConfig& cfg) {
    return (shape_index + 0.5) / static_cast<double>(cfg.n_shapes);
}

PromptSpec prompt_for_scene(const SceneScript& script, const WorldConfig& cfg) {
    PromptSpec p;
    p.tokens = {script.subject().shape, PromptSpec::relation_token(script.relation, cfg),
                script.object().shape};
    p.entity_positions = {0, 2};
    p.relation_label = script.relation;
    return p;
}

PromptSpec prompt_with_relation(const PromptSpec& prompt, int relation, const WorldConfig& cfg) {
    PromptSpec p = prompt;
    bool swapped = false;
    for (auto& t : p.tokens)
        if (t >= static_cast<int>(cfg.n_shapes)) {
            t = PromptSpec::relation_token(relation, cfg);
            swapped = true;
            break;
        }
    if (!swapped) throw std::runtime_error("prompt has no relation token to replace");
    return p;
}

SceneScript sample_scene(const std::string& relation, uint64_t seed, const WorldConfig& cfg) {
    return sample_scene(LabelVocab::index(relation), seed, cfg);
}

SceneScript sample_scene(int relation, uint64_t seed, const WorldConfig& cfg) {
    if (relation < 0 || relation >= static_cast<int>(LabelVocab::kCount))
        throw std::runtime_error("unknown relation index: " + std::to_string(relation));
    Rng rng(mix_seed(seed, 0x5ce9eULL + relation));
    const size_t F = cfg.frames;

    SceneScript s;
    s.frames = F;
    s.relation = relation;
    s.subject_id = 0;
    s.object_id = 1;

    Entity sub, obj;
    sub.id = 0;
    obj.id = 1;
    sub.shape = static_cast<int>(rng.below(cfg.n_shapes));
    // keep shape codes at least two slots apart so both blobs stay separable
    // when read back from a rendered or generated latent
    std::vector<int> far;
    for (int c = 0; c < static_cast<int>(cfg.n_shapes); ++c)
        if (std::abs(c - sub.shape) >= 2) far.push_back(c);
    obj.shape = far[rng.below(far.size())];

    sub.depth = rng.uniform(0.15, 0.4);
    obj.depth = rng.uniform(0.6, 0.85);
    if (rng.uniform() < 0.5 && relation != kInFrontOf && relation != kBehind && relation != kInside)
        std::swap(sub.depth, obj.depth);

    auto fill_static = [&](double sx, double sy, double ox, double oy) {
        sub.centers.assign(F, {sx, sy});
        obj.centers.assign(F, {ox, oy});
        for (size_t f = 1; f < F; ++f) {
            sub.centers[f] = {sx + rng.uniform(-0.004, 0.004), sy + rng.uniform(-0.004, 0.004)};
            obj.centers[f] = {ox + rng.uniform(-0.004, 0.004), oy + rng.uniform(-0.004, 0.004)};
        }
    };
    // rigid drift keeps the relative geometry of overlapping pairs exact
    auto fill_rigid = [&](double sx, double sy, double ox, double oy) {
        sub.centers.assign(F, {sx, sy});
        obj.centers.assign(F, {ox, oy});
        for (size_t f = 1; f < F; ++f) {
            double jx = rng.uniform(-0.006, 0.006), jy = rng.uniform(-0.006, 0.006);
            sub.centers[f] = {sx + jx, sy + jy};
            obj.centers[f] = {ox + jx, oy + jy};
        }
    };

    switch (relation) {
        case kAbove:
        case kBeneath: {
            sub.radius = rng.uniform(0.07, 0.095);
            obj.radius = rng.uniform(0.07, 0.095);
            double col = rng.uniform(0.3, 0.7);
            double col2 = col + rng.uniform(-0.09, 0.09);
            double top = rng.uniform(0.18, 0.4);
            double gap = rng.uniform(4.5, 7.0) / cfg.height;
            if (relation == kAbove)
                fill_static(col, top, col2, top + gap);
            else
                fill_static(col, top + gap, col2, top);
            break;
        }
        case kNextTo: {
            sub.radius = rng.uniform(0.06, 0.08);
            obj.radius = rng.uniform(0.06, 0.08);
            double row = rng.uniform(0.3, 0.7);
            double row2 = row + rng.uniform(-0.35, 0.35) / cfg.height;
            double left = rng.uniform(0.2, 0.5);
            double gap = rng.uniform(3.2, 4.4) / cfg.width;
            if (rng.uniform() < 0.5)
                fill_static(left, row, left + gap, row2);
            else
                fill_static(left + gap, row, left, row2);
            break;
        }
        case kInside: {
            obj.radius = rng.uniform(0.17, 0.21);
            sub.radius = obj.radius * rng.uniform(0.42, 0.55);
            sub.depth = rng.uniform(0.1, 0.3);   // subject in front so it stays visible
            obj.depth = rng.uniform(0.65, 0.9);
            double cx = rng.uniform(0.35, 0.65), cy = rng.uniform(0.35, 0.65);
            double ang = rng.uniform(0, 2 * kPi);
            double off = rng.uniform(0.0, 0.22) * obj.radius;
            fill_static(cx + off * std::cos(ang), cy + off * std::sin(ang), cx, cy);
            break;
        }
        case kInFrontOf:
        case kBehind: {
            // the occluded entity is always the larger one so it keeps a
            // wide visible crescent for the estimator
            if (relation == kInFrontOf) {
                sub.radius = rng.uniform(0.10, 0.12);
                obj.radius = rng.uniform(0.12, 0.14);
                sub.depth = rng.uniform(0.1, 0.35);
                obj.depth = rng.uniform(0.65, 0.9);
            } else {
                sub.radius = rng.uniform(0.12, 0.14);
                obj.radius = rng.uniform(0.10, 0.12);
                sub.depth = rng.uniform(0.65, 0.9);
                obj.depth = rng.uniform(0.1, 0.35);
            }
            double q = relation == kInFrontOf ? rng.uniform(0.58, 0.68) : rng.uniform(0.42, 0.52);
            double d = distance_for_overlap(q, sub.radius, obj.radius);
            double cx = rng.uniform(0.4, 0.6), cy = rng.uniform(0.4, 0.6);
            double ang = rng.uniform(0, 2 * kPi);
            fill_rigid(cx + 0.5 * d * std::cos(ang), cy + 0.5 * d * std::sin(ang),
                       cx - 0.5 * d * std::cos(ang), cy - 0.5 * d * std::sin(ang));
            break;
        }
        case kToward:
        case kAway: {
            sub.radius = rng.uniform(0.06, 0.08);
            obj.radius = rng.uniform(0.06, 0.08);
            double d0 = rng.uniform(0.47, 0.57);
            double d1 = rng.uniform(0.17, 0.20);
            if (relation == kAway) std::swap(d0, d1);
            double mx = rng.uniform(0.42, 0.58), my = rng.uniform(0.42, 0.58);
            double ang = rng.uniform(0, 2 * kPi);
            double ux = std::cos(ang), uy = std::sin(ang);
            sub.centers.resize(F);
            obj.centers.resize(F);
            double step = (d1 - d0) / static_cast<double>(F - 1);
            double jit = 0.15 * std::fabs(step);
            for (size_t f = 0; f < F; ++f) {
                double dist = d0 + step * static_cast<double>(f);
                if (f > 0 && f + 1 < F) dist += rng.uniform(-jit, jit);
                sub.centers[f] = {mx + 0.5 * dist * ux, my + 0.5 * dist * uy};
                obj.centers[f] = {mx - 0.5 * dist * ux, my - 0.5 * dist * uy};
            }
            break;
        }
        default:
            break;
    }

    s.entities = {sub, obj};
    return s;
}

LatentVideo render(const SceneScript& script, const WorldConfig& cfg) {
    LatentVideo out(script.frames, cfg.height, cfg.width, cfg.channels);
    for (size_t f = 0; f < script.frames; ++f)
        for (size_t i = 0; i < cfg.height; ++i)
            for (size_t j = 0; j < cfg.width; ++j) {
                double y = (i + 0.5) / cfg.height;
                double x = (j + 0.5) / cfg.width;
                const Entity* win = nullptr;
                double win_fp = 0;
                for (const auto& e : script.entities) {
                    double sig = e.radius / kSigmaOfR;
                    double dx = x - e.centers[f][0], dy = y - e.centers[f][1];
                    double fp = std::exp(-(dx * dx + dy * dy) / (2 * sig * sig));
                    if (fp < kPresence) continue;
                    if (!win || e.depth < win->depth) {  // smaller depth is in front
                        win = &e;
                        win_fp = fp;
                    }
                }
                if (win) {
                    out.at(f, i, j, 0) = static_cast<float>(win_fp);
                    out.at(f, i, j, 1) = static_cast<float>(shape_code(win->shape, cfg) * win_fp);
                    out.at(f, i, j, 2) = static_cast<float>(win->depth);
                }
                out.at(f, i, j, 3) = 1.0f;
            }
    return out;
}

namespace {

struct FitCell {
    double x, y, w, s;  // s = sqrt(-2 ln occ): footprint brightness = distance / sigma
};

// One Gauss-Newton pass over center (and optionally sigma) for the
// brightness-distance relation occ = exp(-d^2 / 2 sigma^2). Steps are
// clamped so a thin crescent cannot push the fit out of the frame.
void refine_fit(const std::vector<FitCell>& cells, double& cx, double& cy, double& sigma,
                bool fit_sigma, int iters, double sigma_floor) {
    const double max_step = 0.06;
    for (int iter = 0; iter < iters; ++iter) {
        double a11 = 0, a12 = 0, a22 = 0, b1 = 0, b2 = 0, num = 0, den = 0;
        for (const FitCell& c : cells) {
            double dx = c.x - cx, dy = c.y - cy;
            double d = std::hypot(dx, dy);
            if (d < 1e-6) continue;
            double ux = dx / d, uy = dy / d;
            double e = d - sigma * c.s;
            a11 += c.w * ux * ux;
            a12 += c.w * ux * uy;
            a22 += c.w * uy * uy;
            b1 += c.w * e * ux;
            b2 += c.w * e * uy;
            num += c.w * d * c.s;
            den += c.w * c.s * c.s;
        }
        double det = a11 * a22 - a12 * a12;
        if (std::fabs(det) > 1e-9) {
            double sx = (a22 * b1 - a12 * b2) / det;
            double sy = (a11 * b2 - a12 * b1) / det;
            double norm = std::hypot(sx, sy);
            if (norm > max_step) {
                sx *= max_step / norm;
                sy *= max_step / norm;
            }
            cx = std::min(std::max(cx + sx, 0.0), 1.0);
            cy = std::min(std::max(cy + sy, 0.0), 1.0);
        }
        if (fit_sigma && den > 1e-9) sigma = std::max(num / den, sigma_floor);
    }
}

double fit_residual(const std::vector<FitCell>& cells, double cx, double cy, double sigma) {
    double r = 0;
    for (const FitCell& c : cells) {
        double e = std::hypot(c.x - cx, c.y - cy) - sigma * c.s;
        r += c.w * e * e;
    }
    return r;
}

// Occluded crescents leave the center under-determined for a local fit; a
// coarse argmin over candidate centers picks the right side of the ring
// before polishing.
void grid_center_fit(const std::vector<FitCell>& cells, double& cx, double& cy, double sigma,
                     double span, double step) {
    double best = fit_residual(cells, cx, cy, sigma);
    double bx = cx, by = cy;
    for (double dy = -span; dy <= span + 1e-9; dy += step)
        for (double dx = -span; dx <= span + 1e-9; dx += step) {
            double x = std::min(std::max(cx + dx, 0.0), 1.0);
            double y = std::min(std::max(cy + dy, 0.0), 1.0);
            double r = fit_residual(cells, x, y, sigma);
            if (r < best) {
                best = r;
                bx = x;
                by = y;
            }
        }
    cx = bx;
    cy = by;
}

double weighted_median(std::vector<std::pair<double, double>> vw) {  // (value, weight)
    if (vw.empty()) return 0;
    std::sort(vw.begin(), vw.end());
    double total = 0;
    for (const auto& [v, w] : vw) total += w;
    double acc = 0;
    for (const auto& [v, w] : vw) {
        acc += w;
        if (acc >= 0.5 * total) return v;
    }
    return vw.back().first;
}

}  // namespace

std::vector<TrackPoint> estimate_track(const LatentVideo& video, double code, const WorldConfig& cfg) {
    std::vector<TrackPoint> track(video.F);
    std::vector<std::vector<FitCell>> frame_cells(video.F);
    const double sigma_floor = 0.25 / cfg.width / kSigmaOfR;

    std::vector<double> sigmas(video.F, 0);
    for (size_t f = 0; f < video.F; ++f) {
        auto& cells = frame_cells[f];
        double wsum = 0, sx = 0, sy = 0, sq = 0, sdep = 0;
        for (size_t i = 0; i < video.H; ++i)
            for (size_t j = 0; j < video.W; ++j) {
                double occ = std::min(std::max<double>(video.at(f, i, j, 0), 0.0), 1.5);
                if (occ < 0.1) continue;
                double cell_code = video.at(f, i, j, 1) / occ;
                double dc = cell_code - code;
                double match = std::exp(-(dc * dc) / (2 * kCodeSigma * kCodeSigma));
                double w = occ * match;
                if (w < 1e-3) continue;
                double x = (j + 0.5) / cfg.width;
                double y = (i + 0.5) / cfg.height;
                double s = std::sqrt(-2.0 * std::log(std::min(occ, 0.999)));
                cells.push_back({x, y, w, s});
                wsum += w;
                sx += w * x;
                sy += w * y;
                sq += w * (x * x + y * y);
                sdep += w * video.at(f, i, j, 2);
            }
        TrackPoint& t = track[f];
        t.mass = wsum;
        if (wsum <= 0) continue;
        double cx = sx / wsum, cy = sy / wsum;
        double var = std::max(sq / wsum - (cx * cx + cy * cy), 1e-8);
        double sigma = std::max(1.13 * std::sqrt(var), kSigmaOfR * sigma_floor);
        refine_fit(cells, cx, cy, sigma, /*fit_sigma=*/true, 4, sigma_floor);
        t.x = cx;
        t.y = cy;
        t.depth = sdep / wsum;
        sigmas[f] = sigma;
    }

    // radius and depth are constant per entity; pool them across frames and
    // re-fit the per-frame centers with the pooled footprint width
    std::vector<std::pair<double, double>> sig_w, dep_w;
    for (size_t f = 0; f < video.F; ++f)
        if (track[f].mass > 0) {
            sig_w.emplace_back(sigmas[f], track[f].mass);
            dep_w.emplace_back(track[f].depth, track[f].mass);
        }
    if (sig_w.empty()) return track;
    double pooled_sigma = weighted_median(sig_w);
    double pooled_depth = weighted_median(dep_w);
    const double cell = 1.0 / std::max(cfg.width, cfg.height);
    for (size_t f = 0; f < video.F; ++f) {
        if (track[f].mass <= 0) continue;
        double cx = track[f].x, cy = track[f].y, sigma = pooled_sigma;
        grid_center_fit(frame_cells[f], cx, cy, sigma, 3.0 * cell, 0.25 * cell);
        refine_fit(frame_cells[f], cx, cy, sigma, /*fit_sigma=*/false, 3, sigma_floor);
        track[f].x = cx;
        track[f].y = cy;
        track[f].radius = kSigmaOfR * pooled_sigma;
        track[f].depth = pooled_depth;
    }
    return track;
}

bool oracle_check(const SceneScript& script, int relation) {
    if (relation < 0 || relation >= static_cast<int>(LabelVocab::kCount))
        throw std::runtime_error("unknown relation index: " + std::to_string(relation));
    WorldConfig cfg;  // cell thresholds use the default grid
    return predicate(relation, script_geometry(script), cfg);
}

bool oracle_check_window(const LatentVideo& video, int relation, int subject_shape, int object_shape,
                         const WorldConfig& cfg, size_t first_frame, size_t last_frame) {
    if (relation < 0 || relation >= static_cast<int>(LabelVocab::kCount))
        throw std::runtime_error("unknown relation index: " + std::to_string(relation));
    if (first_frame > last_frame || last_frame >= video.F)
        throw std::runtime_error("oracle: bad frame window");
    auto sub = estimate_track(video, shape_code(subject_shape, cfg), cfg);
    auto obj = estimate_track(video, shape_code(object_shape, cfg), cfg);
    std::vector<FrameGeom> g;
    for (size_t f = first_frame; f <= last_frame; ++f) {
        if (sub[f].mass < kMinFrameMass || obj[f].mass < kMinFrameMass)
            throw std::runtime_error("entities not found");
        g.push_back({sub[f].x, sub[f].y, sub[f].radius, sub[f].depth,
                     obj[f].x, obj[f].y, obj[f].radius, obj[f].depth});
    }
    return predicate(relation, g, cfg);
}

bool oracle_check(const LatentVideo& video, int relation, int subject_shape, int object_shape,
                  const WorldConfig& cfg) {
    return oracle_check_window(video, relation, subject_shape, object_shape, cfg, 0, video.F - 1);
}

bool oracle_check(const LatentVideo& video, const PromptSpec& prompt, const WorldConfig& cfg) {
    if (prompt.entity_positions.size() < 2)
        throw std::runtime_error("oracle: prompt does not name two entities");
    int s = prompt.tokens[prompt.entity_positions[0]];
    int o = prompt.tokens[prompt.entity_positions[1]];
    return oracle_check(video, prompt.relation_label, s, o, cfg);
}

// ---- dataset ---------------------------------------------------------------

namespace {

std::string sample_stem(size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "sample_%06zu", index);
    return buf;
}

void write_prompt_file(const std::filesystem::path& path, const PromptSpec& p) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    for (size_t i = 0; i < p.tokens.size(); ++i) f << (i ? " " : "") << p.tokens[i];
    f << '\n';
    for (size_t i = 0; i < p.entity_positions.size(); ++i) f << (i ? " " : "") << p.entity_positions[i];
    f << '\n' << p.relation_label << '\n';
}

PromptSpec read_prompt_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    PromptSpec p;
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error("truncated prompt file: " + path.string());
    {
        std::istringstream ss(line);
        int t;
        while (ss >> t) p.tokens.push_back(t);
    }
    if (!std::getline(f, line)) throw std::runtime_error("truncated prompt file: " + path.string());
    {
        std::istringstream ss(line);
        int t;
        while (ss >> t) p.entity_positions.push_back(t);
    }
    if (!std::getline(f, line)) throw std::runtime_error("truncated prompt file: " + path.string());
    p.relation_label = std::stoi(line);
    return p;
}

}  // namespace

KvFile make_dataset(size_t n, uint64_t seed, const std::filesystem::path& out_dir, const WorldConfig& cfg,
                    size_t threads) {
    if (n < 1) throw std::runtime_error("make_dataset: n must be >= 1");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (!std::filesystem::is_directory(out_dir))
        throw std::runtime_error("cannot create dataset directory " + out_dir.string());

    auto build_one = [&](size_t i) {
        int label = static_cast<int>(i % LabelVocab::kCount);
        uint64_t sample_seed = seed ^ static_cast<uint64_t>(i);
        SceneScript script = sample_scene(label, sample_seed, cfg);
        LatentVideo video = render(script, cfg);
        PromptSpec prompt = prompt_for_scene(script, cfg);
        write_tensor_f32(out_dir / (sample_stem(i) + ".cvgt"), video.shape(), video.v);
        write_prompt_file(out_dir / (sample_stem(i) + ".prompt"), prompt);
    };

    if (threads <= 1) {
        for (size_t i = 0; i < n; ++i) build_one(i);
    } else {
        std::vector<std::thread> pool;
        for (size_t t = 0; t < threads; ++t)
            pool.emplace_back([&, t] {
                for (size_t i = t; i < n; i += threads) build_one(i);
            });
        for (auto& th : pool) th.join();
    }

    KvFile manifest;
    manifest.set("version", "1");
    manifest.set_u64("count", n);
    manifest.set("labels", LabelVocab::joined());
    std::ostringstream sh;
    sh << cfg.frames << 'x' << cfg.height << 'x' << cfg.width << 'x' << cfg.channels;
    manifest.set("shapes", sh.str());
    manifest.save(out_dir / "manifest.txt");
    return manifest;
}

DatasetSample load_sample(const std::filesystem::path& dir, size_t index) {
    DatasetSample s;
    auto arr = read_tensor_f32(dir / (sample_stem(index) + ".cvgt"));
    if (arr.shape.size() != 4) throw std::runtime_error("dataset sample is not rank 4");
    s.video.F = arr.shape[0];
    s.video.H = arr.shape[1];
    s.video.W = arr.shape[2];
    s.video.C = arr.shape[3];
    s.video.v = std::move(arr.data);
    s.prompt = read_prompt_file(dir / (sample_stem(index) + ".prompt"));
    s.label = s.prompt.relation_label;
    return s;
}

size_t dataset_count(const std::filesystem::path& dir) {
    KvFile m = KvFile::load(dir / "manifest.txt");
    return m.get_u64("count");
}

}  // namespace lvc
