#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "anyctl/ops.hpp"

namespace anyctl {

// Linear-beta forward process. Index t runs 1..T; alpha_bar[0] = 1 stands for
// the clean image. All coefficients are kept in double so the 32-bit model
// sees consistently rounded constants.
struct NoiseSchedule {
    int64_t T = 0;
    std::vector<double> beta;       // [T+1], beta[0] unused
    std::vector<double> alpha_bar;  // [T+1], alpha_bar[0] = 1

    double sqrt_ab(int64_t t) const { return std::sqrt(alpha_bar.at(t)); }
    double sqrt_1mab(int64_t t) const {
        return std::sqrt(1.0 - alpha_bar.at(t));
    }
    void check_t(int64_t t) const {
        if (t < 1 || t > T)
            throw IndexError("schedule: t " + std::to_string(t) +
                             " outside 1.." + std::to_string(T));
    }
};

inline NoiseSchedule make_schedule(int64_t T, double beta_1, double beta_T) {
    if (T < 1) throw ConfigError("schedule: T must be >= 1");
    if (!(beta_1 > 0) || !(beta_T >= beta_1) || !(beta_T < 1))
        throw ConfigError("schedule: betas must satisfy 0 < b1 <= bT < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta.assign(static_cast<size_t>(T + 1), 0.0);
    s.alpha_bar.assign(static_cast<size_t>(T + 1), 1.0);
    for (int64_t t = 1; t <= T; ++t) {
        s.beta[static_cast<size_t>(t)] =
            T == 1 ? beta_1
                   : beta_1 + (beta_T - beta_1) *
                                  static_cast<double>(t - 1) /
                                  static_cast<double>(T - 1);
        s.alpha_bar[static_cast<size_t>(t)] =
            s.alpha_bar[static_cast<size_t>(t - 1)] *
            (1.0 - s.beta[static_cast<size_t>(t)]);
    }
    return s;
}

// x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps.
template <class T>
TensorT<T> q_sample(const TensorT<T>& x0, int64_t t, const TensorT<T>& eps,
                    const NoiseSchedule& s) {
    s.check_t(t);
    if (eps.shape() != x0.shape())
        throw ShapeError("q_sample: eps " + shape_str(eps.shape()) +
                         " vs x0 " + shape_str(x0.shape()));
    return add(scale(x0, static_cast<T>(s.sqrt_ab(t))),
               scale(eps, static_cast<T>(s.sqrt_1mab(t))));
}

// eps_u + s (eps_c - eps_u).
template <class T>
TensorT<T> cfg_combine(const TensorT<T>& eps_c, const TensorT<T>& eps_u,
                       double guidance) {
    if (eps_c.shape() != eps_u.shape())
        throw ShapeError("cfg_combine: shape mismatch");
    return add(eps_u, scale(sub(eps_c, eps_u), static_cast<T>(guidance)));
}

// Deterministic (eta = 0) update: xhat0 = (x_t - sqrt(1-ab_t) eps) / sqrt(ab_t);
// x_prev = sqrt(ab_prev) xhat0 + sqrt(1-ab_prev) eps. t_prev may equal t
// (identity); t_prev = 0 lands on the clean estimate.
template <class T>
TensorT<T> ddim_step(const TensorT<T>& x_t, const TensorT<T>& eps_hat,
                     int64_t t, int64_t t_prev, const NoiseSchedule& s) {
    s.check_t(t);
    if (t_prev > t || t_prev < 0)
        throw ContractError("ddim_step: t_prev " + std::to_string(t_prev) +
                            " must lie in 0..t");
    if (eps_hat.shape() != x_t.shape())
        throw ShapeError("ddim_step: eps shape mismatch");
    const double a = s.sqrt_ab(t), b = s.sqrt_1mab(t);
    auto xhat0 = scale(sub(x_t, scale(eps_hat, static_cast<T>(b))),
                       static_cast<T>(1.0 / a));
    return add(scale(xhat0, static_cast<T>(s.sqrt_ab(t_prev))),
               scale(eps_hat, static_cast<T>(s.sqrt_1mab(t_prev))));
}

// Strictly increasing sampling timesteps ending at T: (i+1) T / steps.
inline std::vector<int64_t> ddim_taus(int64_t T, int64_t steps) {
    if (steps < 1 || steps > T)
        throw ConfigError("ddim: steps must be within 1..T");
    std::vector<int64_t> taus;
    taus.reserve(static_cast<size_t>(steps));
    for (int64_t i = 0; i < steps; ++i) {
        int64_t t = (i + 1) * T / steps;
        if (!taus.empty() && t <= taus.back()) t = taus.back() + 1;
        taus.push_back(t);
    }
    return taus;
}

}  // namespace anyctl
