#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

#include "lvc/rng.hpp"
#include "lvc/tensor.hpp"

namespace lvc {

enum class Init { TruncNormal02, Zeros, Ones };

// Named tensors with deterministic initialization. A parameter's initial
// value is a pure function of (rng_seed, name, shape), so insertion order
// never matters. Frozen entries take no part in gradient updates.
template <typename T>
class ParameterSet {
  public:
    struct Entry {
        Shape shape;
        std::shared_ptr<std::vector<T>> value;
        bool trainable = true;
    };

    ParameterSet() = default;
    explicit ParameterSet(uint64_t rng_seed) : seed_(rng_seed) {}

    uint64_t seed() const { return seed_; }

    Entry& add(const std::string& name, Shape shape, Init init, bool trainable = true) {
        if (entries_.count(name)) throw std::runtime_error("ParameterSet: duplicate parameter " + name);
        size_t n = shape_numel(shape);
        auto buf = std::make_shared<std::vector<T>>(n, T(0));
        Rng rng(mix_seed(seed_, hash_str(name)));
        switch (init) {
            case Init::TruncNormal02:
                for (auto& x : *buf) x = static_cast<T>(rng.trunc_normal(0.02));
                break;
            case Init::Zeros:
                break;
            case Init::Ones:
                for (auto& x : *buf) x = T(1);
                break;
        }
        auto [it, ok] = entries_.emplace(name, Entry{std::move(shape), std::move(buf), trainable});
        (void)ok;
        return it->second;
    }

    Entry& at(const std::string& name) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw std::runtime_error("ParameterSet: unknown parameter " + name);
        return it->second;
    }
    const Entry& at(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw std::runtime_error("ParameterSet: unknown parameter " + name);
        return it->second;
    }
    bool has(const std::string& name) const { return entries_.count(name) != 0; }

    // Wire a parameter into a tape as a leaf. Gradients flow into trainable
    // entries only; frozen entries still pass gradients through their users.
    Tensor<T> leaf(Tape<T>& tape, const std::string& name) const {
        const Entry& e = at(name);
        return tape.leaf(e.value, e.shape, e.trainable);
    }
    Tensor<T> frozen_leaf(Tape<T>& tape, const std::string& name) const {
        const Entry& e = at(name);
        return tape.leaf(e.value, e.shape, false);
    }

    const std::map<std::string, Entry>& entries() const { return entries_; }
    std::map<std::string, Entry>& entries() { return entries_; }

    size_t value_count() const {
        size_t n = 0;
        for (const auto& [k, e] : entries_) n += e.value->size();
        return n;
    }

    // FNV-1a over the exact byte representation of every value, in name order.
    uint64_t checksum() const {
        uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& [k, e] : entries_) {
            for (char c : k) {
                h ^= static_cast<unsigned char>(c);
                h *= 0x100000001b3ULL;
            }
            const auto* bytes = reinterpret_cast<const unsigned char*>(e.value->data());
            for (size_t i = 0; i < e.value->size() * sizeof(T); ++i) {
                h ^= bytes[i];
                h *= 0x100000001b3ULL;
            }
        }
        return h;
    }

    template <typename U>
    ParameterSet<U> cast() const {
        ParameterSet<U> out(seed_);
        for (const auto& [k, e] : entries_) {
            auto buf = std::make_shared<std::vector<U>>(e.value->size());
            for (size_t i = 0; i < e.value->size(); ++i) (*buf)[i] = static_cast<U>((*e.value)[i]);
            out.entries().emplace(k, typename ParameterSet<U>::Entry{e.shape, std::move(buf), e.trainable});
        }
        return out;
    }

  private:
    uint64_t seed_ = 0;
    std::map<std::string, Entry> entries_;
};

// AdamW with decoupled weight decay. The caller supplies the per-step
// learning rate (cosine decay lives in the trainers).
template <typename T>
class AdamW {
  public:
    AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.01)
        : b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {}

    void step(ParameterSet<T>& params, const std::map<std::string, std::vector<T>>& grads, double lr) {
        ++t_;
        double bc1 = 1.0 - std::pow(b1_, t_);
        double bc2 = 1.0 - std::pow(b2_, t_);
        for (auto& [name, e] : params.entries()) {
            if (!e.trainable) continue;
            auto git = grads.find(name);
            if (git == grads.end()) continue;
            const auto& g = git->second;
            auto& m = m_[name];
            auto& v = v_[name];
            if (m.size() != g.size()) m.assign(g.size(), 0.0);
            if (v.size() != g.size()) v.assign(g.size(), 0.0);
            auto& w = *e.value;
            for (size_t i = 0; i < g.size(); ++i) {
                double gi = static_cast<double>(g[i]);
                m[i] = b1_ * m[i] + (1.0 - b1_) * gi;
                v[i] = b2_ * v[i] + (1.0 - b2_) * gi * gi;
                double mh = m[i] / bc1;
                double vh = v[i] / bc2;
                double wi = static_cast<double>(w[i]);
                wi -= lr * (mh / (std::sqrt(vh) + eps_) + wd_ * wi);
                w[i] = static_cast<T>(wi);
            }
        }
    }

  private:
    double b1_, b2_, eps_, wd_;
    long t_ = 0;
    std::map<std::string, std::vector<double>> m_, v_;
};

}  // namespace lvc
