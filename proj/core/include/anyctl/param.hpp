#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "anyctl/rng.hpp"
#include "anyctl/tensor.hpp"

namespace anyctl {

// Named trainable leaf. Freezing flips requires_grad on the shared node, so
// graphs built afterwards skip it and backward() leaves it out of the map.
template <class T>
struct ParameterT {
    TensorT<T> value;

    ParameterT() = default;
    ParameterT(std::string name, Shape shape)
        : value(TensorT<T>::zeros(std::move(shape))) {
        value.raw()->param_name = std::move(name);
        value.raw()->requires_grad = true;
    }

    const std::string& name() const { return value.raw()->param_name; }
    bool frozen() const { return !value.raw()->requires_grad; }
    void set_frozen(bool f) { value.raw()->requires_grad = !f; }
};

using Parameter = ParameterT<float>;

// Non-owning registry of a model's parameters in name order.
template <class T>
class ParamStoreT {
  public:
    void add(ParameterT<T>& p) {
        if (!items_.emplace(p.name(), &p).second)
            throw ContractError("duplicate parameter name: " + p.name());
    }

    ParameterT<T>* find(const std::string& name) const {
        auto it = items_.find(name);
        return it == items_.end() ? nullptr : it->second;
    }

    size_t size() const { return items_.size(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

    int64_t total_count() const {
        int64_t n = 0;
        for (auto& [_, p] : items_) n += p->value.numel();
        return n;
    }

  private:
    std::map<std::string, ParameterT<T>*> items_;
};

using ParamStore = ParamStoreT<float>;

template <class T>
void init_normal(ParameterT<T>& p, SeededRng rng, double stddev) {
    for (auto& v : p.value.data())
        v = static_cast<T>(rng.next_gaussian() * stddev);
}

// He init for conv kernels [cout,cin,kh,kw]: variance 2 / fan_in.
template <class T>
void init_he(ParameterT<T>& p, SeededRng rng) {
    const auto& s = p.value.shape();
    if (s.size() != 4) throw ContractError("init_he: kernel rank != 4");
    const double fan_in = static_cast<double>(s[1] * s[2] * s[3]);
    init_normal(p, rng, std::sqrt(2.0 / fan_in));
}

}  // namespace anyctl
