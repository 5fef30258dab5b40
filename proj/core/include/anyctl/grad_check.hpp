#pragma once

#include <functional>
#include <string>
#include <vector>

#include "anyctl/param.hpp"
#include "anyctl/tensor.hpp"

namespace anyctl {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_coord;  // "param[i]" of the worst coordinate
};

// Compares reverse-mode gradients against central differences, coordinate by
// coordinate: |autodiff - central| / (|central| + 1e-12). Meant to run with
// T = double; float cannot hit the tolerances this is used with.
template <class T>
GradCheckReport grad_check(const std::function<TensorT<T>()>& f,
                           const std::vector<ParameterT<T>*>& params,
                           T eps = T(1e-5)) {
    auto loss = f();
    auto grads = backward(loss);
    GradCheckReport rep;
    for (auto* p : params) {
        auto it = grads.find(p->name());
        if (it == grads.end())
            throw ContractError("grad_check: no gradient for " + p->name());
        auto& g = it->second;
        for (int64_t i = 0; i < p->value.numel(); ++i) {
            const T saved = p->value[i];
            p->value[i] = saved + eps;
            const T up = f().item();
            p->value[i] = saved - eps;
            const T down = f().item();
            p->value[i] = saved;
            const double central =
                (static_cast<double>(up) - static_cast<double>(down)) /
                (2.0 * static_cast<double>(eps));
            const double rel = std::abs(static_cast<double>(g[i]) - central) /
                               (std::abs(central) + 1e-12);
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_coord = p->name() + "[" + std::to_string(i) + "]";
            }
        }
    }
    return rep;
}

}  // namespace anyctl
