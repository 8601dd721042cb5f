#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lvc {

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

namespace detail {

// Polynomial exp for the float path; accurate to ~2e-7 relative and free of
// libm calls so the surrounding loops vectorize. The double path keeps libm.
inline float fast_exp(float x) {
    x = std::min(std::max(x, -87.0f), 88.0f);
    float t = x * 1.442695041f;
    float fi = std::floor(t);
    float f = t - fi;
    // 2^f on [0,1), degree-5 minimax
    float p = 1.000000119f +
              f * (0.693147182f +
                   f * (0.240226507f + f * (0.0555041086f + f * (0.00961804886f + f * 0.00133335581f))));
    int32_t i = static_cast<int32_t>(fi);
    uint32_t bits;
    std::memcpy(&bits, &p, 4);
    bits += static_cast<uint32_t>(i << 23);
    std::memcpy(&p, &bits, 4);
    return p;
}

inline float fast_tanh(float x) {
    float e = fast_exp(2.0f * x);
    return (e - 1.0f) / (e + 1.0f);
}

template <typename T>
inline T exp_of(T x) {
    if constexpr (sizeof(T) == 4)
        return fast_exp(x);
    else
        return std::exp(x);
}

template <typename T>
inline T tanh_of(T x) {
    if constexpr (sizeof(T) == 4)
        return fast_tanh(x);
    else
        return std::tanh(x);
}

}  // namespace detail

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

[[noreturn]] inline void shape_error(const char* op, const Shape& a, const Shape& b) {
    throw std::runtime_error(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <typename T>
class Tape;

// Lightweight handle into a tape. Value and gradient live in the tape node;
// leaf values may be shared with a ParameterSet.
template <typename T>
struct Tensor {
    Tape<T>* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Shape& shape() const;
    size_t size() const { return shape_numel(shape()); }
    std::vector<T>& v();
    const std::vector<T>& v() const;
    // Gradient after backward(); zeros for tensors the loss does not reach.
    const std::vector<T>& g() const;
    bool requires_grad() const;
};

template <typename T>
class Tape {
  public:
    struct Node {
        Shape shape;
        std::shared_ptr<std::vector<T>> val;
        std::vector<T> grad;
        bool requires_grad = false;
        std::function<void()> back;  // empty for leaves
    };

    Tensor<T> leaf(std::shared_ptr<std::vector<T>> storage, Shape shape, bool requires_grad) {
        if (!storage || storage->size() != shape_numel(shape))
            throw std::runtime_error("leaf: storage size does not match shape " + shape_str(shape));
        return push(std::move(shape), std::move(storage), requires_grad, {});
    }

    Tensor<T> input(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (data.size() != shape_numel(shape))
            throw std::runtime_error("input: data size does not match shape " + shape_str(shape));
        return push(std::move(shape), std::make_shared<std::vector<T>>(std::move(data)), requires_grad, {});
    }

    Tensor<T> zeros(Shape shape) { return full(std::move(shape), T(0)); }

    Tensor<T> full(Shape shape, T value) {
        size_t n = shape_numel(shape);
        return push(std::move(shape), std::make_shared<std::vector<T>>(n, value), false, {});
    }

    Tensor<T> scalar(T value) { return input({}, {value}); }

    // ---- elementwise ----------------------------------------------------

    Tensor<T> add(Tensor<T> a, Tensor<T> b) {
        if (val(a).size() != val(b).size()) shape_error("add", node(a).shape, node(b).shape);
        std::vector<T> out(val(a).size());
        for (size_t i = 0; i < out.size(); ++i) out[i] = val(a)[i] + val(b)[i];
        Tensor<T> y = push(node(a).shape, wrap(std::move(out)), rg(a) || rg(b), {});
        attach(y, [this, a, b, y] {
            const auto& gy = grad(y);
            if (rg(a)) { auto& ga = grad_buf(a); for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i]; }
            if (rg(b)) { auto& gb = grad_buf(b); for (size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i]; }
        });
        return y;
    }

    Tensor<T> sub(Tensor<T> a, Tensor<T> b) {
        if (val(a).size() != val(b).size()) shape_error("sub", node(a).shape, node(b).shape);
        std::vector<T> out(val(a).size());
        for (size_t i = 0; i < out.size(); ++i) out[i] = val(a)[i] - val(b)[i];
        Tensor<T> y = push(node(a).shape, wrap(std::move(out)), rg(a) || rg(b), {});
        attach(y, [this, a, b, y] {
            const auto& gy = grad(y);
            if (rg(a)) { auto& ga = grad_buf(a); for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i]; }
            if (rg(b)) { auto& gb = grad_buf(b); for (size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i]; }
        });
        return y;
    }

    Tensor<T> mul(Tensor<T> a, Tensor<T> b) {
        if (val(a).size() != val(b).size()) shape_error("mul", node(a).shape, node(b).shape);
        std::vector<T> out(val(a).size());
        for (size_t i = 0; i < out.size(); ++i) out[i] = val(a)[i] * val(b)[i];
        Tensor<T> y = push(node(a).shape, wrap(std::move(out)), rg(a) || rg(b), {});
        attach(y, [this, a, b, y] {
            const auto& gy = grad(y);
            if (rg(a)) { auto& ga = grad_buf(a); for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * val(b)[i]; }
            if (rg(b)) { auto& gb = grad_buf(b); for (size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * val(a)[i]; }
        });
        return y;
    }

    Tensor<T> scale(Tensor<T> a, T c) {
        std::vector<T> out(val(a).size());
        for (size_t i = 0; i < out.size(); ++i) out[i] = val(a)[i] * c;
        Tensor<T> y = push(node(a).shape, wrap(std::move(out)), rg(a), {});
        attach(y, [this, a, y, c] {
            if (!rg(a)) return;
            const auto& gy = grad(y);
            auto& ga = grad_buf(a);
            for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * c;
        });
        return y;
    }

    Tensor<T> neg(Tensor<T> a) { return scale(a, T(-1)); }

    Tensor<T> exp_(Tensor<T> a) {
        std::vector<T> out(val(a).size());
        for (size_t i = 0; i < out.size(); ++i) out[i] = detail::exp_of<T>(val(a)[i]);
        Tensor<T> y = push(node(a).shape, wrap(std::move(out)), rg(a), {});
        attach(y, [this, a, y] {
            if (!rg(a)) return;
            const auto& gy = grad(y);
            auto& ga = grad_buf(a);
            for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * val(y)[i];
        });
        return y;
    }

    Tensor<T> log_(Tensor<T> a) {
        std::vector<T> out(val(a).size());
        for (size_t i = 0; i < out.size(); ++i) out[i] = std::log(val(a)[i]);
        Tensor<T> y = push(node(a).shape, wrap(std::move(out)), rg(a), {});
        attach(y, [this, a, y] {
            if (!rg(a)) return;
            const auto& gy = grad(y);
            auto& ga = grad_buf(a);
            for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] / val(a)[i];
        });
        return y;
    }

    Tensor<T> gelu(Tensor<T> a) {
        const T kC = T(0.7978845608028654);  // sqrt(2/pi)
        const T kA = T(0.044715);
        std::vector<T> out(val(a).size());
        for (size_t i = 0; i < out.size(); ++i) {
            T x = val(a)[i];
            out[i] = T(0.5) * x * (T(1) + detail::tanh_of<T>(kC * (x + kA * x * x * x)));
        }
        Tensor<T> y = push(node(a).shape, wrap(std::move(out)), rg(a), {});
        attach(y, [this, a, y, kC, kA] {
            if (!rg(a)) return;
            const auto& gy = grad(y);
            auto& ga = grad_buf(a);
            for (size_t i = 0; i < gy.size(); ++i) {
                T x = val(a)[i];
                T u = kC * (x + kA * x * x * x);
                T t = detail::tanh_of<T>(u);
                T du = kC * (T(1) + T(3) * kA * x * x);
                ga[i] += gy[i] * (T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du);
            }
        });
        return y;
    }

    // y = mask ? value : a.  The mask is data, not a differentiable input.
    Tensor<T> masked_fill(Tensor<T> a, const std::vector<uint8_t>& mask, T value) {
        if (mask.size() != val(a).size())
            throw std::runtime_error("masked_fill: mask size " + std::to_string(mask.size()) +
                                     " does not match tensor " + shape_str(node(a).shape));
        auto m = std::make_shared<std::vector<uint8_t>>(mask);
        std::vector<T> out(val(a).size());
        for (size_t i = 0; i < out.size(); ++i) out[i] = (*m)[i] ? value : val(a)[i];
        Tensor<T> y = push(node(a).shape, wrap(std::move(out)), rg(a), {});
        attach(y, [this, a, y, m] {
            if (!rg(a)) return;
            const auto& gy = grad(y);
            auto& ga = grad_buf(a);
            for (size_t i = 0; i < gy.size(); ++i)
                if (!(*m)[i]) ga[i] += gy[i];
        });
        return y;
    }

    // ---- shape ops -------------------------------------------------------

    Tensor<T> reshape(Tensor<T> a, Shape shape) {
        if (shape_numel(shape) != val(a).size()) shape_error("reshape", node(a).shape, shape);
        Tensor<T> y = push(std::move(shape), node(a).val, rg(a), {});
        attach(y, [this, a, y] {
            if (!rg(a)) return;
            const auto& gy = grad(y);
            auto& ga = grad_buf(a);
            for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
        });
        return y;
    }

    Tensor<T> permute(Tensor<T> a, const std::vector<size_t>& perm) {
        const Shape& s = node(a).shape;
        if (perm.size() != s.size()) throw std::runtime_error("permute: rank mismatch for " + shape_str(s));
        size_t r = s.size();
        Shape os(r);
        for (size_t i = 0; i < r; ++i) os[i] = s[perm[i]];
        std::vector<size_t> in_stride(r, 1), out_of_in(r);
        for (size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * s[i];
        // stride in the input for each output axis
        for (size_t i = 0; i < r; ++i) out_of_in[i] = in_stride[perm[i]];
        size_t n = val(a).size();
        std::vector<T> out(n);
        const auto& av = val(a);
        // fixed last axis -> copy contiguous rows instead of single elements
        const bool rows_contig = r > 0 && perm[r - 1] == r - 1;
        const size_t chunk = rows_contig ? s[r - 1] : 1;
        const size_t loop_rank = rows_contig ? r - 1 : r;
        std::vector<size_t> idx(r, 0);
        for (size_t o = 0; o < n; o += chunk) {
            size_t src = 0;
            for (size_t i = 0; i < loop_rank; ++i) src += idx[i] * out_of_in[i];
            if (chunk > 1)
                std::copy(av.begin() + src, av.begin() + src + chunk, out.begin() + o);
            else
                out[o] = av[src];
            for (size_t i = loop_rank; i-- > 0;) {
                if (++idx[i] < os[i]) break;
                idx[i] = 0;
            }
        }
        Tensor<T> y = push(std::move(os), wrap(std::move(out)), rg(a), {});
        auto strides = std::make_shared<std::vector<size_t>>(std::move(out_of_in));
        attach(y, [this, a, y, strides, chunk, loop_rank] {
            if (!rg(a)) return;
            const Shape& osh = node(y).shape;
            const auto& gy = grad(y);
            auto& ga = grad_buf(a);
            std::vector<size_t> ix(osh.size(), 0);
            for (size_t o = 0; o < gy.size(); o += chunk) {
                size_t src = 0;
                for (size_t i = 0; i < loop_rank; ++i) src += ix[i] * (*strides)[i];
                for (size_t c = 0; c < chunk; ++c) ga[src + c] += gy[o + c];
                for (size_t i = loop_rank; i-- > 0;) {
                    if (++ix[i] < osh[i]) break;
                    ix[i] = 0;
                }
            }
        });
        return y;
    }

    Tensor<T> concat(const std::vector<Tensor<T>>& parts, size_t axis) {
        if (parts.empty()) throw std::runtime_error("concat: empty input list");
        const Shape& s0 = node(parts[0]).shape;
        if (axis >= s0.size()) throw std::runtime_error("concat: axis out of range for " + shape_str(s0));
        Shape os = s0;
        bool any_rg = false;
        size_t axis_total = 0;
        for (const auto& p : parts) {
            const Shape& sp = node(p).shape;
            if (sp.size() != s0.size()) shape_error("concat", s0, sp);
            for (size_t i = 0; i < s0.size(); ++i)
                if (i != axis && sp[i] != s0[i]) shape_error("concat", s0, sp);
            axis_total += sp[axis];
            any_rg = any_rg || rg(p);
        }
        os[axis] = axis_total;
        size_t outer = 1, inner = 1;
        for (size_t i = 0; i < axis; ++i) outer *= s0[i];
        for (size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
        std::vector<T> out(shape_numel(os));
        size_t off = 0;
        for (const auto& p : parts) {
            size_t pa = node(p).shape[axis];
            const auto& pv = val(p);
            for (size_t o = 0; o < outer; ++o)
                std::copy(pv.begin() + o * pa * inner, pv.begin() + (o + 1) * pa * inner,
                          out.begin() + (o * axis_total + off) * inner);
            off += pa;
        }
        Tensor<T> y = push(std::move(os), wrap(std::move(out)), any_rg, {});
        auto parts_copy = std::make_shared<std::vector<Tensor<T>>>(parts);
        attach(y, [this, y, parts_copy, outer, inner, axis_total, axis] {
            const auto& gy = grad(y);
            size_t off2 = 0;
            for (const auto& p : *parts_copy) {
                size_t pa = node(p).shape[axis];
                if (rg(p)) {
                    auto& gp = grad_buf(p);
                    for (size_t o = 0; o < outer; ++o)
                        for (size_t i = 0; i < pa * inner; ++i)
                            gp[o * pa * inner + i] += gy[(o * axis_total + off2) * inner + i];
                }
                off2 += pa;
            }
        });
        return y;
    }

    Tensor<T> slice(Tensor<T> a, size_t axis, size_t start, size_t len) {
        const Shape& s = node(a).shape;
        if (axis >= s.size() || start + len > s[axis])
            throw std::runtime_error("slice: range [" + std::to_string(start) + "," +
                                     std::to_string(start + len) + ") out of bounds for " + shape_str(s));
        Shape os = s;
        os[axis] = len;
        size_t outer = 1, inner = 1;
        for (size_t i = 0; i < axis; ++i) outer *= s[i];
        for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
        std::vector<T> out(shape_numel(os));
        const auto& av = val(a);
        for (size_t o = 0; o < outer; ++o)
            std::copy(av.begin() + (o * s[axis] + start) * inner,
                      av.begin() + (o * s[axis] + start + len) * inner,
                      out.begin() + o * len * inner);
        size_t sa = s[axis];
        Tensor<T> y = push(std::move(os), wrap(std::move(out)), rg(a), {});
        attach(y, [this, a, y, outer, inner, sa, start, len] {
            if (!rg(a)) return;
            const auto& gy = grad(y);
            auto& ga = grad_buf(a);
            for (size_t o = 0; o < outer; ++o)
                for (size_t i = 0; i < len * inner; ++i)
                    ga[(o * sa + start) * inner + i] += gy[o * len * inner + i];
        });
        return y;
    }

    // ---- linear algebra --------------------------------------------------

    Tensor<T> matmul(Tensor<T> a, Tensor<T> b) {
        const Shape& sa = node(a).shape;
        const Shape& sb = node(b).shape;
        if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) shape_error("matmul", sa, sb);
        size_t M = sa[0], K = sa[1], N = sb[1];
        std::vector<T> out(M * N, T(0));
        mm(val(a).data(), val(b).data(), out.data(), M, K, N);
        Tensor<T> y = push({M, N}, wrap(std::move(out)), rg(a) || rg(b), {});
        attach(y, [this, a, b, y, M, K, N] {
            const auto& gy = grad(y);
            if (rg(a)) mm_nt(gy.data(), val(b).data(), grad_buf(a).data(), M, N, K);   // dA = dY B^T
            if (rg(b)) mm_tn(val(a).data(), gy.data(), grad_buf(b).data(), K, M, N);   // dB = A^T dY
        });
        return y;
    }

    // x:[..., K] -> [..., N]; bias optional (invalid tensor to skip).
    Tensor<T> linear(Tensor<T> x, Tensor<T> w, Tensor<T> bias) {
        const Shape& sx = node(x).shape;
        const Shape& sw = node(w).shape;
        if (sx.empty() || sw.size() != 2 || sx.back() != sw[0]) shape_error("linear", sx, sw);
        size_t K = sw[0], N = sw[1];
        size_t rows = val(x).size() / K;
        if (bias.valid() && val(bias).size() != N) shape_error("linear(bias)", node(bias).shape, sw);
        std::vector<T> out(rows * N, T(0));
        mm(val(x).data(), val(w).data(), out.data(), rows, K, N);
        if (bias.valid()) {
            const auto& bv = val(bias);
            for (size_t r = 0; r < rows; ++r)
                for (size_t j = 0; j < N; ++j) out[r * N + j] += bv[j];
        }
        Shape os = sx;
        os.back() = N;
        Tensor<T> y = push(std::move(os), wrap(std::move(out)), rg(x) || rg(w) || (bias.valid() && rg(bias)), {});
        attach(y, [this, x, w, bias, y, rows, K, N] {
            const auto& gy = grad(y);
            if (rg(x)) mm_nt(gy.data(), val(w).data(), grad_buf(x).data(), rows, N, K);
            if (rg(w)) mm_tn(val(x).data(), gy.data(), grad_buf(w).data(), K, rows, N);
            if (bias.valid() && rg(bias)) {
                auto& gb = grad_buf(bias);
                for (size_t r = 0; r < rows; ++r)
                    for (size_t j = 0; j < N; ++j) gb[j] += gy[r * N + j];
            }
        });
        return y;
    }

    // numpy-style broadcast add: b's shape must match a's rank with dims equal or 1.
    Tensor<T> add_bcast(Tensor<T> a, Tensor<T> b) {
        const Shape& sa = node(a).shape;
        const Shape& sb = node(b).shape;
        if (sa.size() != sb.size()) shape_error("add_bcast", sa, sb);
        size_t r = sa.size();
        for (size_t i = 0; i < r; ++i)
            if (sb[i] != sa[i] && sb[i] != 1) shape_error("add_bcast", sa, sb);
        std::vector<size_t> bstride(r, 0), bs(r, 1);
        for (size_t i = r; i-- > 1;) bs[i - 1] = bs[i] * sb[i];
        for (size_t i = 0; i < r; ++i) bstride[i] = (sb[i] == 1) ? 0 : bs[i];
        size_t n = val(a).size();
        std::vector<T> out(n);
        const auto& av = val(a);
        const auto& bv = val(b);
        // full trailing axis of b -> whole-row adds with per-row index math
        const bool rows_full = r > 0 && sb[r - 1] == sa[r - 1];
        const size_t chunk = rows_full ? sa[r - 1] : 1;
        const size_t loop_rank = rows_full ? r - 1 : r;
        const size_t n_rows = n / chunk;
        std::vector<size_t> idx(r, 0);
        auto bindex = std::make_shared<std::vector<uint32_t>>(n_rows);
        for (size_t row = 0; row < n_rows; ++row) {
            size_t bi = 0;
            for (size_t i = 0; i < loop_rank; ++i) bi += idx[i] * bstride[i];
            (*bindex)[row] = static_cast<uint32_t>(bi);
            const T* bp = bv.data() + bi;
            const T* ap = av.data() + row * chunk;
            T* op = out.data() + row * chunk;
            for (size_t c = 0; c < chunk; ++c) op[c] = ap[c] + bp[c];
            for (size_t i = loop_rank; i-- > 0;) {
                if (++idx[i] < sa[i]) break;
                idx[i] = 0;
            }
        }
        Tensor<T> y = push(sa, wrap(std::move(out)), rg(a) || rg(b), {});
        attach(y, [this, a, b, y, bindex, chunk] {
            const auto& gy = grad(y);
            if (rg(a)) { auto& ga = grad_buf(a); for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i]; }
            if (rg(b)) {
                auto& gb = grad_buf(b);
                for (size_t row = 0; row < bindex->size(); ++row) {
                    T* gp = gb.data() + (*bindex)[row];
                    const T* gyp = gy.data() + row * chunk;
                    for (size_t c = 0; c < chunk; ++c) gp[c] += gyp[c];
                }
            }
        });
        return y;
    }

    // ---- reductions and normalizers ---------------------------------------

    Tensor<T> sum_all(Tensor<T> a) {
        T s = 0;
        for (T x : val(a)) s += x;
        Tensor<T> y = push({}, wrap(std::vector<T>{s}), rg(a), {});
        attach(y, [this, a, y] {
            if (!rg(a)) return;
            T gy = grad(y)[0];
            auto& ga = grad_buf(a);
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += gy;
        });
        return y;
    }

    Tensor<T> mean_axis(Tensor<T> a, size_t axis) {
        const Shape& s = node(a).shape;
        if (axis >= s.size()) throw std::runtime_error("mean_axis: axis out of range for " + shape_str(s));
        size_t outer = 1, inner = 1, n = s[axis];
        for (size_t i = 0; i < axis; ++i) outer *= s[i];
        for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
        Shape os;
        for (size_t i = 0; i < s.size(); ++i)
            if (i != axis) os.push_back(s[i]);
        std::vector<T> out(outer * inner, T(0));
        const auto& av = val(a);
        for (size_t o = 0; o < outer; ++o)
            for (size_t k = 0; k < n; ++k)
                for (size_t i = 0; i < inner; ++i) out[o * inner + i] += av[(o * n + k) * inner + i];
        T invn = T(1) / T(n);
        for (auto& x : out) x *= invn;
        Tensor<T> y = push(std::move(os), wrap(std::move(out)), rg(a), {});
        attach(y, [this, a, y, outer, inner, n, invn] {
            if (!rg(a)) return;
            const auto& gy = grad(y);
            auto& ga = grad_buf(a);
            for (size_t o = 0; o < outer; ++o)
                for (size_t k = 0; k < n; ++k)
                    for (size_t i = 0; i < inner; ++i) ga[(o * n + k) * inner + i] += gy[o * inner + i] * invn;
        });
        return y;
    }

    Tensor<T> pick(Tensor<T> a, size_t flat_index) {
        if (flat_index >= val(a).size())
            throw std::runtime_error("pick: index " + std::to_string(flat_index) + " out of bounds for " +
                                     shape_str(node(a).shape));
        Tensor<T> y = push({}, wrap(std::vector<T>{val(a)[flat_index]}), rg(a), {});
        attach(y, [this, a, y, flat_index] {
            if (!rg(a)) return;
            grad_buf(a)[flat_index] += grad(y)[0];
        });
        return y;
    }

    Tensor<T> softmax_last(Tensor<T> a) {
        const Shape& s = node(a).shape;
        if (s.empty()) throw std::runtime_error("softmax: scalar input " + shape_str(s));
        size_t d = s.back(), rows = val(a).size() / d;
        std::vector<T> out(val(a).size());
        const auto& av = val(a);
        for (size_t r = 0; r < rows; ++r) {
            const T* x = av.data() + r * d;
            T* y = out.data() + r * d;
            T m = x[0];
            for (size_t i = 1; i < d; ++i) m = std::max(m, x[i]);
            T sum = 0;
            for (size_t i = 0; i < d; ++i) {
                y[i] = detail::exp_of<T>(x[i] - m);
                sum += y[i];
            }
            T inv = T(1) / sum;
            for (size_t i = 0; i < d; ++i) y[i] *= inv;
        }
        Tensor<T> y = push(s, wrap(std::move(out)), rg(a), {});
        attach(y, [this, a, y, rows, d] {
            if (!rg(a)) return;
            const auto& gy = grad(y);
            const auto& yv = val(y);
            auto& ga = grad_buf(a);
            for (size_t r = 0; r < rows; ++r) {
                const T* gyp = gy.data() + r * d;
                const T* yp = yv.data() + r * d;
                T dot = 0;
                for (size_t i = 0; i < d; ++i) dot += gyp[i] * yp[i];
                T* gap = ga.data() + r * d;
                for (size_t i = 0; i < d; ++i) gap[i] += yp[i] * (gyp[i] - dot);
            }
        });
        return y;
    }

    Tensor<T> layernorm(Tensor<T> x, Tensor<T> gamma, Tensor<T> beta, T eps = T(1e-5)) {
        const Shape& s = node(x).shape;
        size_t d = s.back();
        if (val(gamma).size() != d || val(beta).size() != d) shape_error("layernorm", s, node(gamma).shape);
        size_t rows = val(x).size() / d;
        std::vector<T> out(val(x).size());
        auto xhat = std::make_shared<std::vector<T>>(val(x).size());
        auto rstd = std::make_shared<std::vector<T>>(rows);
        const auto& xv = val(x);
        const auto& gv = val(gamma);
        const auto& bv = val(beta);
        for (size_t r = 0; r < rows; ++r) {
            const T* xp = xv.data() + r * d;
            T mu = 0;
            for (size_t i = 0; i < d; ++i) mu += xp[i];
            mu /= T(d);
            T var = 0;
            for (size_t i = 0; i < d; ++i) var += (xp[i] - mu) * (xp[i] - mu);
            var /= T(d);
            T rs = T(1) / std::sqrt(var + eps);
            (*rstd)[r] = rs;
            for (size_t i = 0; i < d; ++i) {
                T xh = (xp[i] - mu) * rs;
                (*xhat)[r * d + i] = xh;
                out[r * d + i] = gv[i] * xh + bv[i];
            }
        }
        Tensor<T> y = push(s, wrap(std::move(out)), rg(x) || rg(gamma) || rg(beta), {});
        attach(y, [this, x, gamma, beta, y, rows, d, xhat, rstd] {
            const auto& gy = grad(y);
            const auto& gv = val(gamma);
            if (rg(gamma)) {
                auto& gg = grad_buf(gamma);
                for (size_t r = 0; r < rows; ++r)
                    for (size_t i = 0; i < d; ++i) gg[i] += gy[r * d + i] * (*xhat)[r * d + i];
            }
            if (rg(beta)) {
                auto& gb = grad_buf(beta);
                for (size_t r = 0; r < rows; ++r)
                    for (size_t i = 0; i < d; ++i) gb[i] += gy[r * d + i];
            }
            if (rg(x)) {
                auto& gx = grad_buf(x);
                for (size_t r = 0; r < rows; ++r) {
                    const T* gyp = gy.data() + r * d;
                    const T* xh = xhat->data() + r * d;
                    T sum_g = 0, sum_gx = 0;
                    for (size_t i = 0; i < d; ++i) {
                        T gh = gyp[i] * gv[i];
                        sum_g += gh;
                        sum_gx += gh * xh[i];
                    }
                    T rs = (*rstd)[r];
                    for (size_t i = 0; i < d; ++i) {
                        T gh = gyp[i] * gv[i];
                        gx[r * d + i] += rs * (gh - sum_g / T(d) - xh[i] * sum_gx / T(d));
                    }
                }
            }
        });
        return y;
    }

    Tensor<T> embedding(Tensor<T> table, const std::vector<int>& ids) {
        const Shape& s = node(table).shape;
        if (s.size() != 2) throw std::runtime_error("embedding: table must be rank 2, got " + shape_str(s));
        size_t v = s[0], d = s[1];
        for (int id : ids)
            if (id < 0 || static_cast<size_t>(id) >= v)
                throw std::runtime_error("embedding: id " + std::to_string(id) + " out of vocabulary " +
                                         shape_str(s));
        std::vector<T> out(ids.size() * d);
        const auto& tv = val(table);
        for (size_t i = 0; i < ids.size(); ++i)
            std::copy(tv.begin() + ids[i] * d, tv.begin() + (ids[i] + 1) * d, out.begin() + i * d);
        auto ids_copy = std::make_shared<std::vector<int>>(ids);
        Tensor<T> y = push({ids.size(), d}, wrap(std::move(out)), rg(table), {});
        attach(y, [this, table, y, ids_copy, d] {
            if (!rg(table)) return;
            const auto& gy = grad(y);
            auto& gt = grad_buf(table);
            for (size_t i = 0; i < ids_copy->size(); ++i)
                for (size_t j = 0; j < d; ++j) gt[(*ids_copy)[i] * d + j] += gy[i * d + j];
        });
        return y;
    }

    // Mean cross-entropy of probability rows p against target probability rows.
    // Targets are data, not a differentiable input.
    Tensor<T> cross_entropy(Tensor<T> p, const std::vector<T>& target_probs) {
        const Shape& s = node(p).shape;
        if (target_probs.size() != val(p).size())
            throw std::runtime_error("cross_entropy: target size " + std::to_string(target_probs.size()) +
                                     " does not match " + shape_str(s));
        size_t d = s.empty() ? 1 : s.back();
        size_t rows = val(p).size() / d;
        auto tgt = std::make_shared<std::vector<T>>(target_probs);
        T acc = 0;
        const auto& pv = val(p);
        for (size_t i = 0; i < pv.size(); ++i)
            if ((*tgt)[i] != T(0)) acc -= (*tgt)[i] * std::log(pv[i]);
        acc /= T(rows);
        Tensor<T> y = push({}, wrap(std::vector<T>{acc}), rg(p), {});
        attach(y, [this, p, y, tgt, rows] {
            if (!rg(p)) return;
            T gy = grad(y)[0];
            const auto& pv = val(p);
            auto& gp = grad_buf(p);
            for (size_t i = 0; i < pv.size(); ++i)
                if ((*tgt)[i] != T(0)) gp[i] -= gy * (*tgt)[i] / (pv[i] * T(rows));
        });
        return y;
    }

    Tensor<T> mse(Tensor<T> a, Tensor<T> b) {
        if (val(a).size() != val(b).size()) shape_error("mse", node(a).shape, node(b).shape);
        size_t n = val(a).size();
        T acc = 0;
        for (size_t i = 0; i < n; ++i) {
            T dlt = val(a)[i] - val(b)[i];
            acc += dlt * dlt;
        }
        acc /= T(n);
        Tensor<T> y = push({}, wrap(std::vector<T>{acc}), rg(a) || rg(b), {});
        attach(y, [this, a, b, y, n] {
            T gy = grad(y)[0] * T(2) / T(n);
            if (rg(a)) { auto& ga = grad_buf(a); for (size_t i = 0; i < n; ++i) ga[i] += gy * (val(a)[i] - val(b)[i]); }
            if (rg(b)) { auto& gb = grad_buf(b); for (size_t i = 0; i < n; ++i) gb[i] -= gy * (val(a)[i] - val(b)[i]); }
        });
        return y;
    }

    // ---- attention -------------------------------------------------------

    // q:[B,S,D], k:[B,P,D], heads nh -> softmax weights [B,nh,S,P].
    Tensor<T> attn_weights(Tensor<T> q, Tensor<T> k, size_t nh) {
        const Shape& sq = node(q).shape;
        const Shape& sk = node(k).shape;
        if (sq.size() != 3 || sk.size() != 3 || sq[0] != sk[0] || sq[2] != sk[2])
            shape_error("attn_weights", sq, sk);
        size_t B = sq[0], S = sq[1], D = sq[2], P = sk[1];
        if (D % nh != 0) throw std::runtime_error("attn_weights: heads do not divide dim " + shape_str(sq));
        size_t dh = D / nh;
        T inv_sqrt = T(1) / std::sqrt(T(dh));
        std::vector<T> out(B * nh * S * P);
        const auto& qv = val(q);
        const auto& kv = val(k);
        std::vector<T> ks(P * dh);  // contiguous per-head keys
        for (size_t b = 0; b < B; ++b)
            for (size_t h = 0; h < nh; ++h) {
                for (size_t p = 0; p < P; ++p)
                    std::copy(kv.data() + (b * P + p) * D + h * dh, kv.data() + (b * P + p) * D + h * dh + dh,
                              ks.data() + p * dh);
                for (size_t s = 0; s < S; ++s) {
                    const T* qp = qv.data() + (b * S + s) * D + h * dh;
                    T* row = out.data() + ((b * nh + h) * S + s) * P;
                    T m = -std::numeric_limits<T>::infinity();
                    for (size_t p = 0; p < P; ++p) {
                        const T* kp = ks.data() + p * dh;
                        T dot = 0;
                        for (size_t i = 0; i < dh; ++i) dot += qp[i] * kp[i];
                        row[p] = dot * inv_sqrt;
                        m = std::max(m, row[p]);
                    }
                    T sum = 0;
                    for (size_t p = 0; p < P; ++p) {
                        row[p] = detail::exp_of<T>(row[p] - m);
                        sum += row[p];
                    }
                    T inv = T(1) / sum;
                    for (size_t p = 0; p < P; ++p) row[p] *= inv;
                }
            }
        Tensor<T> y = push({B, nh, S, P}, wrap(std::move(out)), rg(q) || rg(k), {});
        attach(y, [this, q, k, y, B, S, D, P, nh, dh, inv_sqrt] {
            const auto& gy = grad(y);
            const auto& yv = val(y);
            const auto& qv = val(q);
            const auto& kv = val(k);
            bool gq = rg(q), gk = rg(k);
            T* gqp = gq ? grad_buf(q).data() : nullptr;
            T* gkp = gk ? grad_buf(k).data() : nullptr;
            std::vector<T> ds(P);
            for (size_t b = 0; b < B; ++b)
                for (size_t h = 0; h < nh; ++h)
                    for (size_t s = 0; s < S; ++s) {
                        const T* w = yv.data() + ((b * nh + h) * S + s) * P;
                        const T* gw = gy.data() + ((b * nh + h) * S + s) * P;
                        T dot = 0;
                        for (size_t p = 0; p < P; ++p) dot += gw[p] * w[p];
                        for (size_t p = 0; p < P; ++p) ds[p] = w[p] * (gw[p] - dot) * inv_sqrt;
                        const T* qp = qv.data() + (b * S + s) * D + h * dh;
                        for (size_t p = 0; p < P; ++p) {
                            const T* kp = kv.data() + (b * P + p) * D + h * dh;
                            if (gq) {
                                T* gqr = gqp + (b * S + s) * D + h * dh;
                                for (size_t i = 0; i < dh; ++i) gqr[i] += ds[p] * kp[i];
                            }
                            if (gk) {
                                T* gkr = gkp + (b * P + p) * D + h * dh;
                                for (size_t i = 0; i < dh; ++i) gkr[i] += ds[p] * qp[i];
                            }
                        }
                    }
        });
        return y;
    }

    // w:[B,nh,S,P], v:[B,P,D] -> [B,S,D] with per-head value slices.
    Tensor<T> attn_apply(Tensor<T> w, Tensor<T> v) {
        const Shape& sw = node(w).shape;
        const Shape& sv = node(v).shape;
        if (sw.size() != 4 || sv.size() != 3 || sw[0] != sv[0] || sw[3] != sv[1])
            shape_error("attn_apply", sw, sv);
        size_t B = sw[0], nh = sw[1], S = sw[2], P = sw[3], D = sv[2];
        if (D % nh != 0) throw std::runtime_error("attn_apply: heads do not divide dim " + shape_str(sv));
        size_t dh = D / nh;
        std::vector<T> out(B * S * D, T(0));
        const auto& wv = val(w);
        const auto& vv = val(v);
        for (size_t b = 0; b < B; ++b)
            for (size_t h = 0; h < nh; ++h)
                for (size_t s = 0; s < S; ++s) {
                    const T* wr = wv.data() + ((b * nh + h) * S + s) * P;
                    T* op = out.data() + (b * S + s) * D + h * dh;
                    for (size_t p = 0; p < P; ++p) {
                        const T* vp = vv.data() + (b * P + p) * D + h * dh;
                        T wgt = wr[p];
                        for (size_t i = 0; i < dh; ++i) op[i] += wgt * vp[i];
                    }
                }
        Tensor<T> y = push({B, S, D}, wrap(std::move(out)), rg(w) || rg(v), {});
        attach(y, [this, w, v, y, B, S, D, P, nh, dh] {
            const auto& gy = grad(y);
            const auto& wv = val(w);
            const auto& vv = val(v);
            bool gw = rg(w), gv = rg(v);
            T* gwp = gw ? grad_buf(w).data() : nullptr;
            T* gvp = gv ? grad_buf(v).data() : nullptr;
            for (size_t b = 0; b < B; ++b)
                for (size_t h = 0; h < nh; ++h)
                    for (size_t s = 0; s < S; ++s) {
                        const T* go = gy.data() + (b * S + s) * D + h * dh;
                        const T* wr = wv.data() + ((b * nh + h) * S + s) * P;
                        for (size_t p = 0; p < P; ++p) {
                            const T* vp = vv.data() + (b * P + p) * D + h * dh;
                            if (gw) {
                                T dot = 0;
                                for (size_t i = 0; i < dh; ++i) dot += go[i] * vp[i];
                                gwp[((b * nh + h) * S + s) * P + p] += dot;
                            }
                            if (gv) {
                                T* gvr = gvp + (b * P + p) * D + h * dh;
                                T wgt = wr[p];
                                for (size_t i = 0; i < dh; ++i) gvr[i] += wgt * go[i];
                            }
                        }
                    }
        });
        return y;
    }

    // ---- reverse pass ----------------------------------------------------

    // Populates gradients of every tensor the scalar loss reaches. Gradients
    // of unreachable tensors read back as zeros.
    void backward(Tensor<T> loss) {
        if (loss.tape != this) throw std::runtime_error("backward: loss from another tape");
        if (shape_numel(node(loss).shape) != 1)
            throw std::runtime_error("backward: loss must be scalar, got " + shape_str(node(loss).shape));
        grad_buf(loss)[0] = T(1);
        for (size_t i = nodes_.size(); i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || n.grad.empty() || !n.back) continue;
            n.back();
        }
    }

    size_t node_count() const { return nodes_.size(); }

    // internal accessors used by Tensor
    Node& node(Tensor<T> t) { return nodes_.at(t.id); }
    const Node& node(Tensor<T> t) const { return nodes_.at(t.id); }
    const std::vector<T>& grad(Tensor<T> t) {
        Node& n = node(t);
        if (n.grad.empty()) n.grad.assign(n.val->size(), T(0));
        return n.grad;
    }

  private:
    std::vector<Node> nodes_;

    std::vector<T>& val(Tensor<T> t) { return *node(t).val; }
    bool rg(Tensor<T> t) const { return node(t).requires_grad; }
    std::vector<T>& grad_buf(Tensor<T> t) {
        Node& n = node(t);
        if (n.grad.empty()) n.grad.assign(n.val->size(), T(0));
        return n.grad;
    }

    static std::shared_ptr<std::vector<T>> wrap(std::vector<T> v) {
        return std::make_shared<std::vector<T>>(std::move(v));
    }

    Tensor<T> push(Shape shape, std::shared_ptr<std::vector<T>> storage, bool requires_grad,
                   std::function<void()> back) {
        nodes_.push_back(Node{std::move(shape), std::move(storage), {}, requires_grad, std::move(back)});
        return Tensor<T>{this, static_cast<int>(nodes_.size()) - 1};
    }

    void attach(Tensor<T> t, std::function<void()> back) {
        if (node(t).requires_grad) node(t).back = std::move(back);
    }

    // C[MxN] += A[MxK] B[KxN]
    static void mm(const T* a, const T* b, T* c, size_t M, size_t K, size_t N) {
        for (size_t i = 0; i < M; ++i) {
            const T* ar = a + i * K;
            T* cr = c + i * N;
            for (size_t k = 0; k < K; ++k) {
                T av = ar[k];
                const T* br = b + k * N;
                for (size_t j = 0; j < N; ++j) cr[j] += av * br[j];
            }
        }
    }
    // C[MxN] += A[MxK] B^T  where B is [NxK]
    static void mm_nt(const T* a, const T* b, T* c, size_t M, size_t K, size_t N) {
        for (size_t i = 0; i < M; ++i) {
            const T* ar = a + i * K;
            T* cr = c + i * N;
            for (size_t j = 0; j < N; ++j) {
                const T* br = b + j * K;
                T acc = 0;
                for (size_t k = 0; k < K; ++k) acc += ar[k] * br[k];
                cr[j] += acc;
            }
        }
    }
    // C[MxN] += A^T B  where A is [KxM], B is [KxN]
    static void mm_tn(const T* a, const T* b, T* c, size_t M, size_t K, size_t N) {
        for (size_t k = 0; k < K; ++k) {
            const T* ar = a + k * M;
            const T* br = b + k * N;
            for (size_t i = 0; i < M; ++i) {
                T av = ar[i];
                T* cr = c + i * N;
                for (size_t j = 0; j < N; ++j) cr[j] += av * br[j];
            }
        }
    }
};

template <typename T>
const Shape& Tensor<T>::shape() const { return tape->node(*this).shape; }
template <typename T>
std::vector<T>& Tensor<T>::v() { return *tape->node(*this).val; }
template <typename T>
const std::vector<T>& Tensor<T>::v() const { return *tape->node(*this).val; }
template <typename T>
const std::vector<T>& Tensor<T>::g() const { return tape->grad(*this); }
template <typename T>
bool Tensor<T>::requires_grad() const { return tape->node(*this).requires_grad; }

}  // namespace lvc
