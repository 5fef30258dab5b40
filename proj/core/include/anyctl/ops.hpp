#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "anyctl/gemm.hpp"
#include "anyctl/tensor.hpp"

// Differentiable tensor operations. Forward values are always computed; the
// backward closure is attached only while grad recording is on and some
// parent requires grad. Reductions that feed invariance-sensitive paths
// (softmax rows, attention context, norms, means) accumulate in double.

namespace anyctl {

namespace detail {

template <class T>
void check_same_shape(const char* op, const TensorT<T>& a,
                      const TensorT<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <class T>
void check_rank(const char* op, const TensorT<T>& a, int rank) {
    if (a.rank() != rank)
        throw ShapeError(std::string(op) + ": expected rank " +
                         std::to_string(rank) + ", got " +
                         shape_str(a.shape()));
}

}  // namespace detail

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape("add", a, b);
    auto out = detail::make_op<T>(
        "add", a.shape(), {a.node(), b.node()}, [](TensorNodeT<T>& n) {
            for (int pi = 0; pi < 2; ++pi) {
                auto& p = *n.parents[pi];
                if (!p.requires_grad) continue;
                for (size_t i = 0; i < n.grad.size(); ++i)
                    p.grad[i] += n.grad[i];
            }
        });
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a[i] + b[i];
    return out;
}

template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape("sub", a, b);
    auto out = detail::make_op<T>(
        "sub", a.shape(), {a.node(), b.node()}, [](TensorNodeT<T>& n) {
            auto& pa = *n.parents[0];
            auto& pb = *n.parents[1];
            for (size_t i = 0; i < n.grad.size(); ++i) {
                if (pa.requires_grad) pa.grad[i] += n.grad[i];
                if (pb.requires_grad) pb.grad[i] -= n.grad[i];
            }
        });
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a[i] - b[i];
    return out;
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape("mul", a, b);
    auto out = detail::make_op<T>(
        "mul", a.shape(), {a.node(), b.node()}, [](TensorNodeT<T>& n) {
            auto& pa = *n.parents[0];
            auto& pb = *n.parents[1];
            for (size_t i = 0; i < n.grad.size(); ++i) {
                if (pa.requires_grad) pa.grad[i] += n.grad[i] * pb.value[i];
                if (pb.requires_grad) pb.grad[i] += n.grad[i] * pa.value[i];
            }
        });
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a[i] * b[i];
    return out;
}

template <class T>
TensorT<T> scale(const TensorT<T>& a, T s) {
    auto out = detail::make_op<T>(
        "scale", a.shape(), {a.node()}, [s](TensorNodeT<T>& n) {
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            for (size_t i = 0; i < n.grad.size(); ++i)
                p.grad[i] += s * n.grad[i];
        });
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = s * a[i];
    return out;
}

template <class T>
TensorT<T> add_scalar(const TensorT<T>& a, T s) {
    auto out = detail::make_op<T>(
        "add_scalar", a.shape(), {a.node()}, [](TensorNodeT<T>& n) {
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
        });
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a[i] + s;
    return out;
}

// a [m,k] times b [k,n] -> [m,n].
template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_rank("matmul", a, 2);
    detail::check_rank("matmul", b, 2);
    const int64_t m = a.size(0), k = a.size(1), n = b.size(1);
    if (b.size(0) != k)
        throw ShapeError("matmul: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    auto out = detail::make_op<T>(
        "matmul", {m, n}, {a.node(), b.node()},
        [m, k, n](TensorNodeT<T>& node) {
            auto& pa = *node.parents[0];
            auto& pb = *node.parents[1];
            if (pa.requires_grad)
                detail::gemm<T>(false, true, static_cast<int>(m),
                                static_cast<int>(k), static_cast<int>(n), T(1),
                                node.grad.data(), pb.value.data(), T(1),
                                pa.grad.data());
            if (pb.requires_grad)
                detail::gemm<T>(true, false, static_cast<int>(k),
                                static_cast<int>(n), static_cast<int>(m), T(1),
                                pa.value.data(), node.grad.data(), T(1),
                                pb.grad.data());
        });
    detail::gemm<T>(false, false, static_cast<int>(m), static_cast<int>(n),
                    static_cast<int>(k), T(1), a.data().data(), b.data().data(),
                    T(0), out.data().data());
    return out;
}

template <class T>
TensorT<T> transpose(const TensorT<T>& a) {
    detail::check_rank("transpose", a, 2);
    const int64_t m = a.size(0), n = a.size(1);
    auto out = detail::make_op<T>(
        "transpose", {n, m}, {a.node()}, [m, n](TensorNodeT<T>& node) {
            auto& p = *node.parents[0];
            if (!p.requires_grad) return;
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j)
                    p.grad[static_cast<size_t>(i * n + j)] +=
                        node.grad[static_cast<size_t>(j * m + i)];
        });
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
    return out;
}

template <class T>
TensorT<T> reshape(const TensorT<T>& a, Shape shape) {
    if (numel_of(shape) != a.numel())
        throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " +
                         shape_str(shape));
    auto out = detail::make_op<T>(
        "reshape", std::move(shape), {a.node()}, [](TensorNodeT<T>& n) {
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
        });
    out.data() = a.data();
    return out;
}

// Rows [lo, hi) of a 2-D tensor.
template <class T>
TensorT<T> slice_rows(const TensorT<T>& a, int64_t lo, int64_t hi) {
    detail::check_rank("slice_rows", a, 2);
    if (lo < 0 || hi > a.size(0) || lo >= hi)
        throw ShapeError("slice_rows: [" + std::to_string(lo) + "," +
                         std::to_string(hi) + ") of " + shape_str(a.shape()));
    const int64_t d = a.size(1);
    auto out = detail::make_op<T>(
        "slice_rows", {hi - lo, d}, {a.node()}, [lo, d](TensorNodeT<T>& n) {
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            const size_t off = static_cast<size_t>(lo * d);
            for (size_t i = 0; i < n.grad.size(); ++i)
                p.grad[off + i] += n.grad[i];
        });
    std::copy(a.data().begin() + lo * d, a.data().begin() + hi * d,
              out.data().begin());
    return out;
}

// Columns [lo, hi) of a 2-D tensor; used to split attention heads.
template <class T>
TensorT<T> slice_cols(const TensorT<T>& a, int64_t lo, int64_t hi) {
    detail::check_rank("slice_cols", a, 2);
    if (lo < 0 || hi > a.size(1) || lo >= hi)
        throw ShapeError("slice_cols: [" + std::to_string(lo) + "," +
                         std::to_string(hi) + ") of " + shape_str(a.shape()));
    const int64_t n = a.size(0), d = a.size(1), w = hi - lo;
    auto out = detail::make_op<T>(
        "slice_cols", {n, w}, {a.node()}, [lo, n, d, w](TensorNodeT<T>& nd) {
            auto& p = *nd.parents[0];
            if (!p.requires_grad) return;
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < w; ++j)
                    p.grad[static_cast<size_t>(i * d + lo + j)] +=
                        nd.grad[static_cast<size_t>(i * w + j)];
        });
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < w; ++j) out[i * w + j] = a[i * d + lo + j];
    return out;
}

// Stacks 2-D tensors with a common row count along columns.
template <class T>
TensorT<T> concat_cols(const std::vector<TensorT<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const int64_t n = parts[0].size(0);
    int64_t d = 0;
    std::vector<std::shared_ptr<TensorNodeT<T>>> parents;
    std::vector<int64_t> widths;
    for (auto& p : parts) {
        detail::check_rank("concat_cols", p, 2);
        if (p.size(0) != n)
            throw ShapeError("concat_cols: row mismatch " +
                             shape_str(p.shape()));
        widths.push_back(p.size(1));
        d += p.size(1);
        parents.push_back(p.node());
    }
    auto out = detail::make_op<T>(
        "concat_cols", {n, d}, std::move(parents),
        [n, d, widths](TensorNodeT<T>& nd) {
            int64_t off = 0;
            for (size_t pi = 0; pi < nd.parents.size(); ++pi) {
                auto& p = *nd.parents[pi];
                const int64_t w = widths[pi];
                if (p.requires_grad)
                    for (int64_t i = 0; i < n; ++i)
                        for (int64_t j = 0; j < w; ++j)
                            p.grad[static_cast<size_t>(i * w + j)] +=
                                nd.grad[static_cast<size_t>(i * d + off + j)];
                off += w;
            }
        });
    int64_t off = 0;
    for (auto& p : parts) {
        const int64_t w = p.size(1);
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < w; ++j)
                out[i * d + off + j] = p[i * w + j];
        off += w;
    }
    return out;
}

// Stacks 2-D tensors with a common column count along rows.
template <class T>
TensorT<T> concat_rows(const std::vector<TensorT<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const int64_t d = parts[0].size(1);
    int64_t rows = 0;
    std::vector<std::shared_ptr<TensorNodeT<T>>> parents;
    for (auto& p : parts) {
        detail::check_rank("concat_rows", p, 2);
        if (p.size(1) != d)
            throw ShapeError("concat_rows: column mismatch " +
                             shape_str(p.shape()));
        rows += p.size(0);
        parents.push_back(p.node());
    }
    auto out = detail::make_op<T>(
        "concat_rows", {rows, d}, std::move(parents), [](TensorNodeT<T>& n) {
            size_t off = 0;
            for (auto& pp : n.parents) {
                auto& p = *pp;
                if (p.requires_grad)
                    for (size_t i = 0; i < p.value.size(); ++i)
                        p.grad[i] += n.grad[off + i];
                off += p.value.size();
            }
        });
    size_t off = 0;
    for (auto& p : parts) {
        std::copy(p.data().begin(), p.data().end(), out.data().begin() + off);
        off += p.data().size();
    }
    return out;
}

// a [n,d] plus bias [d] broadcast over rows. Also used to add additive
// attention masks, one row value per key.
template <class T>
TensorT<T> add_bias_rows(const TensorT<T>& a, const TensorT<T>& bias) {
    detail::check_rank("add_bias_rows", a, 2);
    detail::check_rank("add_bias_rows", bias, 1);
    const int64_t n = a.size(0), d = a.size(1);
    if (bias.size(0) != d)
        throw ShapeError("add_bias_rows: " + shape_str(a.shape()) + " + " +
                         shape_str(bias.shape()));
    auto out = detail::make_op<T>(
        "add_bias_rows", a.shape(), {a.node(), bias.node()},
        [n, d](TensorNodeT<T>& node) {
            auto& pa = *node.parents[0];
            auto& pb = *node.parents[1];
            if (pa.requires_grad)
                for (size_t i = 0; i < node.grad.size(); ++i)
                    pa.grad[i] += node.grad[i];
            if (pb.requires_grad)
                for (int64_t j = 0; j < d; ++j) {
                    double acc = 0;
                    for (int64_t i = 0; i < n; ++i)
                        acc += node.grad[static_cast<size_t>(i * d + j)];
                    pb.grad[static_cast<size_t>(j)] += static_cast<T>(acc);
                }
        });
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) out[i * d + j] = a[i * d + j] + bias[j];
    return out;
}

// x [c,h,w] plus per-channel bias [c].
template <class T>
TensorT<T> add_bias_channels(const TensorT<T>& x, const TensorT<T>& bias) {
    detail::check_rank("add_bias_channels", x, 3);
    detail::check_rank("add_bias_channels", bias, 1);
    const int64_t c = x.size(0), hw = x.size(1) * x.size(2);
    if (bias.size(0) != c)
        throw ShapeError("add_bias_channels: " + shape_str(x.shape()) + " + " +
                         shape_str(bias.shape()));
    auto out = detail::make_op<T>(
        "add_bias_channels", x.shape(), {x.node(), bias.node()},
        [c, hw](TensorNodeT<T>& node) {
            auto& px = *node.parents[0];
            auto& pb = *node.parents[1];
            if (px.requires_grad)
                for (size_t i = 0; i < node.grad.size(); ++i)
                    px.grad[i] += node.grad[i];
            if (pb.requires_grad)
                for (int64_t ci = 0; ci < c; ++ci) {
                    double acc = 0;
                    for (int64_t i = 0; i < hw; ++i)
                        acc += node.grad[static_cast<size_t>(ci * hw + i)];
                    pb.grad[static_cast<size_t>(ci)] += static_cast<T>(acc);
                }
        });
    for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t i = 0; i < hw; ++i)
            out[ci * hw + i] = x[ci * hw + i] + bias[ci];
    return out;
}

// Softmax along one axis. Max subtraction for stability, double accumulation
// so the result is insensitive to slice order at ~1e-16; rejects non-finite
// inputs outright.
template <class T>
TensorT<T> softmax(const TensorT<T>& a, int axis) {
    if (axis < 0 || axis >= a.rank())
        throw ShapeError("softmax: axis " + std::to_string(axis) + " for " +
                         shape_str(a.shape()));
    int64_t outer = 1, inner = 1;
    const int64_t n = a.size(axis);
    for (int i = 0; i < axis; ++i) outer *= a.size(i);
    for (int i = axis + 1; i < a.rank(); ++i) inner *= a.size(i);
    auto idx = [n, inner](int64_t o, int64_t j, int64_t in) {
        return (o * n + j) * inner + in;
    };
    auto out = detail::make_op<T>(
        "softmax", a.shape(), {a.node()},
        [outer, inner, n, idx](TensorNodeT<T>& node) {
            auto& p = *node.parents[0];
            if (!p.requires_grad) return;
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t in = 0; in < inner; ++in) {
                    double dot = 0;
                    for (int64_t j = 0; j < n; ++j) {
                        const size_t k = static_cast<size_t>(idx(o, j, in));
                        dot += static_cast<double>(node.grad[k]) *
                               node.value[k];
                    }
                    for (int64_t j = 0; j < n; ++j) {
                        const size_t k = static_cast<size_t>(idx(o, j, in));
                        p.grad[k] += node.value[k] *
                                     static_cast<T>(node.grad[k] - dot);
                    }
                }
        });
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) {
            T mx = a[idx(o, 0, in)];
            for (int64_t j = 0; j < n; ++j) {
                const T v = a[idx(o, j, in)];
                if (!std::isfinite(static_cast<double>(v)))
                    throw NumericError("softmax: non-finite input");
                mx = std::max(mx, v);
            }
            double denom = 0;
            for (int64_t j = 0; j < n; ++j)
                denom +=
                    std::exp(static_cast<double>(a[idx(o, j, in)]) - mx);
            for (int64_t j = 0; j < n; ++j)
                out[idx(o, j, in)] = static_cast<T>(
                    std::exp(static_cast<double>(a[idx(o, j, in)]) - mx) /
                    denom);
        }
    return out;
}

template <class T>
TensorT<T> softmax_rows(const TensorT<T>& a) {
    detail::check_rank("softmax_rows", a, 2);
    return softmax(a, 1);
}

// probs [nq,nk] times v [nk,d] with per-element double accumulation; the
// reduction runs over keys, so together with softmax_rows this keeps
// attention output stable under reordering of the key set.
template <class T>
TensorT<T> attention_context(const TensorT<T>& probs, const TensorT<T>& v) {
    detail::check_rank("attention_context", probs, 2);
    detail::check_rank("attention_context", v, 2);
    const int64_t nq = probs.size(0), nk = probs.size(1), d = v.size(1);
    if (v.size(0) != nk)
        throw ShapeError("attention_context: " + shape_str(probs.shape()) +
                         " x " + shape_str(v.shape()));
    auto out = detail::make_op<T>(
        "attention_context", {nq, d}, {probs.node(), v.node()},
        [nq, nk, d](TensorNodeT<T>& node) {
            auto& pp = *node.parents[0];
            auto& pv = *node.parents[1];
            if (pp.requires_grad)
                for (int64_t i = 0; i < nq; ++i)
                    for (int64_t j = 0; j < nk; ++j) {
                        double acc = 0;
                        for (int64_t e = 0; e < d; ++e)
                            acc += static_cast<double>(
                                       node.grad[static_cast<size_t>(i * d +
                                                                     e)]) *
                                   pv.value[static_cast<size_t>(j * d + e)];
                        pp.grad[static_cast<size_t>(i * nk + j)] +=
                            static_cast<T>(acc);
                    }
            if (pv.requires_grad)
                for (int64_t j = 0; j < nk; ++j)
                    for (int64_t e = 0; e < d; ++e) {
                        double acc = 0;
                        for (int64_t i = 0; i < nq; ++i)
                            acc += static_cast<double>(
                                       pp.value[static_cast<size_t>(i * nk +
                                                                    j)]) *
                                   node.grad[static_cast<size_t>(i * d + e)];
                        pv.grad[static_cast<size_t>(j * d + e)] +=
                            static_cast<T>(acc);
                    }
        });
    for (int64_t i = 0; i < nq; ++i)
        for (int64_t e = 0; e < d; ++e) {
            double acc = 0;
            for (int64_t j = 0; j < nk; ++j)
                acc += static_cast<double>(probs[i * nk + j]) * v[j * d + e];
            out[i * d + e] = static_cast<T>(acc);
        }
    return out;
}

// Per-row normalization of [n,d] to zero mean, unit variance, then an affine
// map by gain/bias [d].
template <class T>
TensorT<T> layer_norm(const TensorT<T>& a, const TensorT<T>& gain,
                      const TensorT<T>& bias, T eps = T(1e-5)) {
    detail::check_rank("layer_norm", a, 2);
    const int64_t n = a.size(0), d = a.size(1);
    if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
        throw ShapeError("layer_norm: gain/bias must be [d]");
    std::vector<T> mean(static_cast<size_t>(n)), invstd(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const size_t off = static_cast<size_t>(i * d);
        double m = 0;
        for (int64_t j = 0; j < d; ++j) m += a[off + j];
        m /= static_cast<double>(d);
        double v = 0;
        for (int64_t j = 0; j < d; ++j) {
            const double c = a[off + j] - m;
            v += c * c;
        }
        v /= static_cast<double>(d);
        mean[static_cast<size_t>(i)] = static_cast<T>(m);
        invstd[static_cast<size_t>(i)] =
            static_cast<T>(1.0 / std::sqrt(v + static_cast<double>(eps)));
    }
    auto out = detail::make_op<T>(
        "layer_norm", a.shape(), {a.node(), gain.node(), bias.node()},
        [n, d, mean, invstd](TensorNodeT<T>& node) {
            auto& pa = *node.parents[0];
            auto& pg = *node.parents[1];
            auto& pb = *node.parents[2];
            for (int64_t i = 0; i < n; ++i) {
                const size_t off = static_cast<size_t>(i * d);
                const double mu = mean[static_cast<size_t>(i)];
                const double is = invstd[static_cast<size_t>(i)];
                double sum_dxhat = 0, sum_dxhat_xhat = 0;
                for (int64_t j = 0; j < d; ++j) {
                    const double xhat = (pa.value[off + j] - mu) * is;
                    const double dxhat =
                        static_cast<double>(node.grad[off + j]) *
                        pg.value[static_cast<size_t>(j)];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                    if (pg.requires_grad)
                        pg.grad[static_cast<size_t>(j)] +=
                            static_cast<T>(node.grad[off + j] * xhat);
                    if (pb.requires_grad)
                        pb.grad[static_cast<size_t>(j)] += node.grad[off + j];
                }
                if (!pa.requires_grad) continue;
                const double dn = static_cast<double>(d);
                for (int64_t j = 0; j < d; ++j) {
                    const double xhat = (pa.value[off + j] - mu) * is;
                    const double dxhat =
                        static_cast<double>(node.grad[off + j]) *
                        pg.value[static_cast<size_t>(j)];
                    pa.grad[off + j] += static_cast<T>(
                        is *
                        (dxhat - sum_dxhat / dn - xhat * sum_dxhat_xhat / dn));
                }
            }
        });
    for (int64_t i = 0; i < n; ++i) {
        const size_t off = static_cast<size_t>(i * d);
        for (int64_t j = 0; j < d; ++j)
            out[static_cast<int64_t>(off) + j] =
                (a[off + j] - mean[static_cast<size_t>(i)]) *
                    invstd[static_cast<size_t>(i)] * gain[j] +
                bias[j];
    }
    return out;
}

// Normalizes x [c,h,w] over channel groups, then per-channel affine.
template <class T>
TensorT<T> group_norm(const TensorT<T>& x, int64_t groups,
                      const TensorT<T>& gain, const TensorT<T>& bias,
                      T eps = T(1e-5)) {
    detail::check_rank("group_norm", x, 3);
    const int64_t c = x.size(0), hw = x.size(1) * x.size(2);
    if (groups < 1 || c % groups != 0)
        throw ConfigError("group_norm: " + std::to_string(groups) +
                          " groups for " + std::to_string(c) + " channels");
    if (gain.shape() != Shape{c} || bias.shape() != Shape{c})
        throw ShapeError("group_norm: gain/bias must be [c]");
    const int64_t cg = c / groups, m = cg * hw;
    std::vector<T> mean(static_cast<size_t>(groups)),
        invstd(static_cast<size_t>(groups));
    for (int64_t g = 0; g < groups; ++g) {
        const size_t off = static_cast<size_t>(g * m);
        double mu = 0;
        for (int64_t i = 0; i < m; ++i) mu += x[off + i];
        mu /= static_cast<double>(m);
        double v = 0;
        for (int64_t i = 0; i < m; ++i) {
            const double d = x[off + i] - mu;
            v += d * d;
        }
        v /= static_cast<double>(m);
        mean[static_cast<size_t>(g)] = static_cast<T>(mu);
        invstd[static_cast<size_t>(g)] =
            static_cast<T>(1.0 / std::sqrt(v + static_cast<double>(eps)));
    }
    auto out = detail::make_op<T>(
        "group_norm", x.shape(), {x.node(), gain.node(), bias.node()},
        [groups, cg, hw, m, mean, invstd](TensorNodeT<T>& node) {
            auto& px = *node.parents[0];
            auto& pg = *node.parents[1];
            auto& pb = *node.parents[2];
            for (int64_t g = 0; g < groups; ++g) {
                const size_t off = static_cast<size_t>(g * m);
                const double mu = mean[static_cast<size_t>(g)];
                const double is = invstd[static_cast<size_t>(g)];
                double sum_dxhat = 0, sum_dxhat_xhat = 0;
                for (int64_t i = 0; i < m; ++i) {
                    const int64_t ch = g * cg + i / hw;
                    const double xhat = (px.value[off + i] - mu) * is;
                    const double dxhat =
                        static_cast<double>(node.grad[off + i]) *
                        pg.value[static_cast<size_t>(ch)];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                    if (pg.requires_grad)
                        pg.grad[static_cast<size_t>(ch)] +=
                            static_cast<T>(node.grad[off + i] * xhat);
                    if (pb.requires_grad)
                        pb.grad[static_cast<size_t>(ch)] += node.grad[off + i];
                }
                if (!px.requires_grad) continue;
                const double dm = static_cast<double>(m);
                for (int64_t i = 0; i < m; ++i) {
                    const int64_t ch = g * cg + i / hw;
                    const double xhat = (px.value[off + i] - mu) * is;
                    const double dxhat =
                        static_cast<double>(node.grad[off + i]) *
                        pg.value[static_cast<size_t>(ch)];
                    px.grad[off + i] += static_cast<T>(
                        is *
                        (dxhat - sum_dxhat / dm - xhat * sum_dxhat_xhat / dm));
                }
            }
        });
    for (int64_t g = 0; g < groups; ++g) {
        const size_t off = static_cast<size_t>(g * m);
        for (int64_t i = 0; i < m; ++i) {
            const int64_t ch = g * cg + i / hw;
            out[static_cast<int64_t>(off) + i] =
                (x[off + i] - mean[static_cast<size_t>(g)]) *
                    invstd[static_cast<size_t>(g)] * gain[ch] +
                bias[ch];
        }
    }
    return out;
}

template <class T>
TensorT<T> silu(const TensorT<T>& a) {
    auto out = detail::make_op<T>(
        "silu", a.shape(), {a.node()}, [](TensorNodeT<T>& n) {
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            for (size_t i = 0; i < n.grad.size(); ++i) {
                const double x = p.value[i];
                const double s = 1.0 / (1.0 + std::exp(-x));
                p.grad[i] +=
                    static_cast<T>(n.grad[i] * (s + x * s * (1.0 - s)));
            }
        });
    for (int64_t i = 0; i < out.numel(); ++i) {
        const double x = a[i];
        out[i] = static_cast<T>(x / (1.0 + std::exp(-x)));
    }
    return out;
}

namespace detail {

struct Conv2dDims {
    int64_t cin, h, w, cout, kh, kw, oh, ow;
    int64_t stride, pad;
};

template <class T>
Conv2dDims conv2d_dims(const TensorT<T>& x, const TensorT<T>& w,
                       int64_t stride, int64_t pad) {
    check_rank("conv2d", x, 3);
    if (w.rank() != 4)
        throw ShapeError("conv2d: kernel must be [cout,cin,kh,kw], got " +
                         shape_str(w.shape()));
    Conv2dDims d;
    d.cin = x.size(0);
    d.h = x.size(1);
    d.w = x.size(2);
    d.cout = w.size(0);
    d.kh = w.size(2);
    d.kw = w.size(3);
    d.stride = stride;
    d.pad = pad;
    if (w.size(1) != d.cin)
        throw ShapeError("conv2d: input channels " + std::to_string(d.cin) +
                         " vs kernel " + std::to_string(w.size(1)));
    if (stride < 1 || pad < 0) throw ConfigError("conv2d: bad stride/pad");
    const int64_t hn = d.h + 2 * pad - d.kh, wn = d.w + 2 * pad - d.kw;
    if (hn < 0 || wn < 0 || hn % stride != 0 || wn % stride != 0)
        throw ConfigError("conv2d: size " + std::to_string(d.h) + "x" +
                          std::to_string(d.w) + " with k=" +
                          std::to_string(d.kh) + " s=" + std::to_string(stride) +
                          " p=" + std::to_string(pad) +
                          " gives non-integral output");
    d.oh = hn / stride + 1;
    d.ow = wn / stride + 1;
    return d;
}

// col layout: [cin*kh*kw, oh*ow], one column per output position.
template <class T>
void im2col(const std::vector<T>& x, const Conv2dDims& d, std::vector<T>& col) {
    col.assign(static_cast<size_t>(d.cin * d.kh * d.kw * d.oh * d.ow), T(0));
    const int64_t ohw = d.oh * d.ow;
    for (int64_t ci = 0; ci < d.cin; ++ci)
        for (int64_t ki = 0; ki < d.kh; ++ki)
            for (int64_t kj = 0; kj < d.kw; ++kj) {
                const int64_t r = (ci * d.kh + ki) * d.kw + kj;
                for (int64_t oy = 0; oy < d.oh; ++oy) {
                    const int64_t iy = oy * d.stride - d.pad + ki;
                    if (iy < 0 || iy >= d.h) continue;
                    for (int64_t ox = 0; ox < d.ow; ++ox) {
                        const int64_t ix = ox * d.stride - d.pad + kj;
                        if (ix < 0 || ix >= d.w) continue;
                        col[static_cast<size_t>(r * ohw + oy * d.ow + ox)] =
                            x[static_cast<size_t>((ci * d.h + iy) * d.w + ix)];
                    }
                }
            }
}

template <class T>
void col2im_add(const std::vector<T>& col, const Conv2dDims& d,
                std::vector<T>& dx) {
    const int64_t ohw = d.oh * d.ow;
    for (int64_t ci = 0; ci < d.cin; ++ci)
        for (int64_t ki = 0; ki < d.kh; ++ki)
            for (int64_t kj = 0; kj < d.kw; ++kj) {
                const int64_t r = (ci * d.kh + ki) * d.kw + kj;
                for (int64_t oy = 0; oy < d.oh; ++oy) {
                    const int64_t iy = oy * d.stride - d.pad + ki;
                    if (iy < 0 || iy >= d.h) continue;
                    for (int64_t ox = 0; ox < d.ow; ++ox) {
                        const int64_t ix = ox * d.stride - d.pad + kj;
                        if (ix < 0 || ix >= d.w) continue;
                        dx[static_cast<size_t>((ci * d.h + iy) * d.w + ix)] +=
                            col[static_cast<size_t>(r * ohw + oy * d.ow + ox)];
                    }
                }
            }
}

}  // namespace detail

// Cross-correlation of x [cin,h,w] with w [cout,cin,kh,kw] plus bias [cout].
// Lowered to a gemm over im2col patches; backward rebuilds the patch matrix
// instead of keeping it alive.
template <class T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w,
                  const TensorT<T>& bias, int64_t stride = 1,
                  int64_t pad = 0) {
    const auto d = detail::conv2d_dims(x, w, stride, pad);
    if (bias.shape() != Shape{d.cout})
        throw ShapeError("conv2d: bias must be [cout]");
    const int64_t ohw = d.oh * d.ow, krows = d.cin * d.kh * d.kw;
    auto out = detail::make_op<T>(
        "conv2d", {d.cout, d.oh, d.ow},
        {x.node(), w.node(), bias.node()}, [d, ohw, krows](TensorNodeT<T>& n) {
            auto& px = *n.parents[0];
            auto& pw = *n.parents[1];
            auto& pb = *n.parents[2];
            std::vector<T> col;
            detail::im2col(px.value, d, col);
            if (pw.requires_grad)
                detail::gemm<T>(false, true, static_cast<int>(d.cout),
                                static_cast<int>(krows), static_cast<int>(ohw),
                                T(1), n.grad.data(), col.data(), T(1),
                                pw.grad.data());
            if (pb.requires_grad)
                for (int64_t co = 0; co < d.cout; ++co) {
                    double acc = 0;
                    for (int64_t i = 0; i < ohw; ++i)
                        acc += n.grad[static_cast<size_t>(co * ohw + i)];
                    pb.grad[static_cast<size_t>(co)] += static_cast<T>(acc);
                }
            if (px.requires_grad) {
                std::vector<T> dcol(
                    static_cast<size_t>(krows * ohw), T(0));
                detail::gemm<T>(true, false, static_cast<int>(krows),
                                static_cast<int>(ohw), static_cast<int>(d.cout),
                                T(1), pw.value.data(), n.grad.data(), T(0),
                                dcol.data());
                detail::col2im_add(dcol, d, px.grad);
            }
        });
    std::vector<T> col;
    detail::im2col(x.data(), d, col);
    detail::gemm<T>(false, false, static_cast<int>(d.cout),
                    static_cast<int>(ohw), static_cast<int>(krows), T(1),
                    w.data().data(), col.data(), T(0), out.data().data());
    for (int64_t co = 0; co < d.cout; ++co)
        for (int64_t i = 0; i < ohw; ++i) out[co * ohw + i] += bias[co];
    return out;
}

// [c,h,w] -> [c,2h,2w] by pixel duplication.
template <class T>
TensorT<T> upsample_nearest2(const TensorT<T>& x) {
    detail::check_rank("upsample_nearest2", x, 3);
    const int64_t c = x.size(0), h = x.size(1), w = x.size(2);
    auto out = detail::make_op<T>(
        "upsample_nearest2", {c, 2 * h, 2 * w}, {x.node()},
        [c, h, w](TensorNodeT<T>& n) {
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            const int64_t W = 2 * w;
            for (int64_t ci = 0; ci < c; ++ci)
                for (int64_t y = 0; y < h; ++y)
                    for (int64_t x2 = 0; x2 < w; ++x2) {
                        double acc = 0;
                        for (int64_t dy = 0; dy < 2; ++dy)
                            for (int64_t dx = 0; dx < 2; ++dx)
                                acc += n.grad[static_cast<size_t>(
                                    (ci * 2 * h + 2 * y + dy) * W + 2 * x2 +
                                    dx)];
                        p.grad[static_cast<size_t>((ci * h + y) * w + x2)] +=
                            static_cast<T>(acc);
                    }
        });
    const int64_t W = 2 * w;
    for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t y = 0; y < 2 * h; ++y)
            for (int64_t x2 = 0; x2 < 2 * w; ++x2)
                out[(ci * 2 * h + y) * W + x2] =
                    x[(ci * h + y / 2) * w + x2 / 2];
    return out;
}

// Stacks [c1,h,w] and [c2,h,w] along channels.
template <class T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_rank("concat_channels", a, 3);
    detail::check_rank("concat_channels", b, 3);
    if (a.size(1) != b.size(1) || a.size(2) != b.size(2))
        throw ShapeError("concat_channels: " + shape_str(a.shape()) + " + " +
                         shape_str(b.shape()));
    const int64_t c1 = a.size(0), c2 = b.size(0);
    auto out = detail::make_op<T>(
        "concat_channels", {c1 + c2, a.size(1), a.size(2)},
        {a.node(), b.node()}, [](TensorNodeT<T>& n) {
            auto& pa = *n.parents[0];
            auto& pb = *n.parents[1];
            const size_t na = pa.value.size();
            if (pa.requires_grad)
                for (size_t i = 0; i < na; ++i) pa.grad[i] += n.grad[i];
            if (pb.requires_grad)
                for (size_t i = 0; i < pb.value.size(); ++i)
                    pb.grad[i] += n.grad[na + i];
        });
    std::copy(a.data().begin(), a.data().end(), out.data().begin());
    std::copy(b.data().begin(), b.data().end(),
              out.data().begin() + a.numel());
    return out;
}

template <class T>
TensorT<T> sum(const TensorT<T>& a) {
    auto out = detail::make_op<T>(
        "sum", {1}, {a.node()}, [](TensorNodeT<T>& n) {
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            for (size_t i = 0; i < p.value.size(); ++i)
                p.grad[i] += n.grad[0];
        });
    double acc = 0;
    for (int64_t i = 0; i < a.numel(); ++i) acc += a[i];
    out[0] = static_cast<T>(acc);
    return out;
}

template <class T>
TensorT<T> mean(const TensorT<T>& a) {
    const int64_t n = a.numel();
    auto out = detail::make_op<T>(
        "mean", {1}, {a.node()}, [n](TensorNodeT<T>& node) {
            auto& p = *node.parents[0];
            if (!p.requires_grad) return;
            const T g = node.grad[0] / static_cast<T>(n);
            for (size_t i = 0; i < p.value.size(); ++i) p.grad[i] += g;
        });
    double acc = 0;
    for (int64_t i = 0; i < n; ++i) acc += a[i];
    out[0] = static_cast<T>(acc / static_cast<double>(n));
    return out;
}

// Column means of [n,d] -> [d]; pooled features for the distribution metric.
template <class T>
TensorT<T> mean_rows(const TensorT<T>& a) {
    detail::check_rank("mean_rows", a, 2);
    const int64_t n = a.size(0), d = a.size(1);
    auto out = detail::make_op<T>(
        "mean_rows", {d}, {a.node()}, [n, d](TensorNodeT<T>& node) {
            auto& p = *node.parents[0];
            if (!p.requires_grad) return;
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < d; ++j)
                    p.grad[static_cast<size_t>(i * d + j)] +=
                        node.grad[static_cast<size_t>(j)] / static_cast<T>(n);
        });
    for (int64_t j = 0; j < d; ++j) {
        double acc = 0;
        for (int64_t i = 0; i < n; ++i) acc += a[i * d + j];
        out[j] = static_cast<T>(acc / static_cast<double>(n));
    }
    return out;
}

template <class T>
TensorT<T> mse(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape("mse", a, b);
    const int64_t n = a.numel();
    auto out = detail::make_op<T>(
        "mse", {1}, {a.node(), b.node()}, [n](TensorNodeT<T>& node) {
            auto& pa = *node.parents[0];
            auto& pb = *node.parents[1];
            const T g = node.grad[0] * T(2) / static_cast<T>(n);
            for (size_t i = 0; i < pa.value.size(); ++i) {
                const T diff = pa.value[i] - pb.value[i];
                if (pa.requires_grad) pa.grad[i] += g * diff;
                if (pb.requires_grad) pb.grad[i] -= g * diff;
            }
        });
    double acc = 0;
    for (int64_t i = 0; i < n; ++i) {
        const double diff =
            static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += diff * diff;
    }
    out[0] = static_cast<T>(acc / static_cast<double>(n));
    return out;
}

// Rows of table [vocab,d] selected by ids -> [ids.size(),d].
template <class T>
TensorT<T> embedding(const TensorT<T>& table, const std::vector<int32_t>& ids) {
    detail::check_rank("embedding", table, 2);
    const int64_t v = table.size(0), d = table.size(1);
    for (int32_t id : ids)
        if (id < 0 || id >= v)
            throw IndexError("embedding: id " + std::to_string(id) +
                             " outside vocab of " + std::to_string(v));
    const int64_t n = static_cast<int64_t>(ids.size());
    auto out = detail::make_op<T>(
        "embedding", {n, d}, {table.node()}, [ids, d](TensorNodeT<T>& node) {
            auto& p = *node.parents[0];
            if (!p.requires_grad) return;
            for (size_t i = 0; i < ids.size(); ++i)
                for (int64_t j = 0; j < d; ++j)
                    p.grad[static_cast<size_t>(ids[i] * d + j)] +=
                        node.grad[i * static_cast<size_t>(d) +
                                  static_cast<size_t>(j)];
        });
    for (int64_t i = 0; i < n; ++i)
        std::copy(table.data().begin() + ids[static_cast<size_t>(i)] * d,
                  table.data().begin() + (ids[static_cast<size_t>(i)] + 1) * d,
                  out.data().begin() + i * d);
    return out;
}

}  // namespace anyctl
