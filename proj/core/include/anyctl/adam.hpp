#pragma once

#include <cmath>
#include <map>
#include <string>

#include "anyctl/param.hpp"
#include "anyctl/tensor.hpp"

namespace anyctl {

// Adam with bias correction. Moment buffers appear lazily per parameter
// name, so one optimizer instance serves any subset of a store; frozen
// parameters never receive gradients and are skipped defensively anyway.
template <class T>
class AdamT {
  public:
    explicit AdamT(double lr, double beta1 = 0.9, double beta2 = 0.999,
                   double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        if (!(lr > 0)) throw ConfigError("adam: lr must be positive");
        if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
            throw ConfigError("adam: betas must be within [0,1)");
    }

    // One update from an accumulated gradient map (already batch-scaled).
    void apply(ParamStoreT<T>& store, const GradMapT<T>& grads) {
        if (grads.empty()) throw ContractError("adam: empty gradient map");
        ++step_;
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
        for (const auto& [name, g] : grads) {
            ParameterT<T>* p = store.find(name);
            if (!p) throw ContractError("adam: gradient for unknown parameter " + name);
            if (p->frozen()) continue;
            if (g.shape() != p->value.shape())
                throw ShapeError("adam: gradient shape mismatch for " + name);
            auto& m = moment(m_, name, g);
            auto& v = moment(v_, name, g);
            for (int64_t i = 0; i < g.numel(); ++i) {
                const double gi = static_cast<double>(g[i]);
                const double mi = beta1_ * static_cast<double>(m[i]) + (1.0 - beta1_) * gi;
                const double vi = beta2_ * static_cast<double>(v[i]) + (1.0 - beta2_) * gi * gi;
                m[i] = static_cast<T>(mi);
                v[i] = static_cast<T>(vi);
                p->value[i] -= static_cast<T>(lr_ * (mi / c1) /
                                              (std::sqrt(vi / c2) + eps_));
            }
        }
    }

    int64_t step_count() const { return step_; }
    double lr() const { return lr_; }
    const std::map<std::string, TensorT<T>>& first_moments() const { return m_; }
    const std::map<std::string, TensorT<T>>& second_moments() const { return v_; }

    void restore(int64_t step, std::map<std::string, TensorT<T>> m,
                 std::map<std::string, TensorT<T>> v) {
        if (step < 0) throw ContractError("adam: negative step count");
        step_ = step;
        m_ = std::move(m);
        v_ = std::move(v);
    }

  private:
    TensorT<T>& moment(std::map<std::string, TensorT<T>>& side,
                       const std::string& name, const TensorT<T>& like) {
        auto it = side.find(name);
        if (it == side.end())
            it = side.emplace(name, TensorT<T>::zeros(like.shape())).first;
        return it->second;
    }

    double lr_, beta1_, beta2_, eps_;
    int64_t step_ = 0;
    std::map<std::string, TensorT<T>> m_, v_;
};

using Adam = AdamT<float>;

}  // namespace anyctl
