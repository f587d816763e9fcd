#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "isd/tensor.hpp"

// Differentiable ops over Tensor<T>. Binary elementwise ops broadcast a
// one-element operand against any shape; nothing broader than that.

namespace isd {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;

template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

enum class BinaryMode { Same, ScalarLeft, ScalarRight };

template <typename T>
inline BinaryMode binary_mode(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (a.shape() == b.shape()) return BinaryMode::Same;
    if (a.numel() == 1) return BinaryMode::ScalarLeft;
    if (b.numel() == 1) return BinaryMode::ScalarRight;
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

// Shared skeleton for add/sub/mul/div: fwd(x, y) computes the value,
// dfx/dfy give the partials at (x, y).
template <typename T, typename Fwd, typename Dx, typename Dy>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* what, Fwd fwd, Dx dfx, Dy dfy) {
    const BinaryMode mode = binary_mode(a, b, what);
    const auto av = a.value();
    const auto bv = b.value();
    const std::size_t n = std::max(av.size(), bv.size());
    std::vector<T> out(n);
    switch (mode) {
        case BinaryMode::Same:
            for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[i]);
            break;
        case BinaryMode::ScalarLeft:
            for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[0], bv[i]);
            break;
        case BinaryMode::ScalarRight:
            for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[0]);
            break;
    }
    Shape shape = (mode == BinaryMode::ScalarLeft) ? Shape(b.shape()) : Shape(a.shape());
    auto pa = a.node();
    auto pb = b.node();
    return Tensor<T>::make_op(
        std::move(shape), std::move(out), {a, b}, [pa, pb, mode, dfx, dfy](Node<T>& o) {
            const std::size_t n = o.numel();
            auto xi = [&](std::size_t i) { return mode == BinaryMode::ScalarLeft ? pa->value[0] : pa->value[i]; };
            auto yi = [&](std::size_t i) { return mode == BinaryMode::ScalarRight ? pb->value[0] : pb->value[i]; };
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) {
                    const T g = o.grad[i] * dfx(xi(i), yi(i));
                    pa->grad[mode == BinaryMode::ScalarLeft ? 0 : i] += g;
                }
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) {
                    const T g = o.grad[i] * dfy(xi(i), yi(i));
                    pb->grad[mode == BinaryMode::ScalarRight ? 0 : i] += g;
                }
            }
        });
}

template <typename T, typename Fwd, typename Df>
Tensor<T> unary_op(const Tensor<T>& a, Fwd fwd, Df df) {
    const auto av = a.value();
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
    auto pa = a.node();
    return Tensor<T>::make_op(Shape(a.shape()), std::move(out), {a}, [pa, df](Node<T>& o) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::size_t i = 0; i < o.numel(); ++i) pa->grad[i] += o.grad[i] * df(pa->value[i], o.value[i]);
    });
}

template <typename T>
inline T stable_sigmoid(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

// Domain floor for log/sqrt. Clamps [0, 1e-12) up to 1e-12 and records the
// event; strictly negative input is a hard error.
template <typename T>
inline T domain_floor(T x, const char* what) {
    if (x < T(0)) throw DomainError(std::string(what) + " of negative value");
    if (x < T(1e-12)) {
        ++clamp_events;
        return T(1e-12);
    }
    return x;
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    for (const T y : b.value())
        if (y == T(0)) throw DomainError("div by zero");
    return detail::binary_op(
        a, b, "div", [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
        [](T x, T y) { return -x / (y * y); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    return detail::unary_op(a, [c](T x) { return x * c; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
    return scale(a, T(-1));
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    return detail::unary_op(
        a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return detail::unary_op(
        a, [](T x) { return detail::stable_sigmoid(x); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
    return detail::unary_op(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
    return detail::unary_op(
        a, [](T x) { return std::log(detail::domain_floor(x, "log")); },
        [](T x, T) { return T(1) / detail::domain_floor(x, "log"); });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
    return detail::unary_op(
        a, [](T x) { return std::sqrt(detail::domain_floor(x, "sqrt")); },
        [](T, T y) { return T(0.5) / y; });
}

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }
template <typename T> Tensor<T> operator+(const Tensor<T>& a, T c) { return add(a, Tensor<T>::scalar(c)); }
template <typename T> Tensor<T> operator+(T c, const Tensor<T>& a) { return add(Tensor<T>::scalar(c), a); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, T c) { return sub(a, Tensor<T>::scalar(c)); }
template <typename T> Tensor<T> operator-(T c, const Tensor<T>& a) { return sub(Tensor<T>::scalar(c), a); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, T c) { return scale(a, c); }
template <typename T> Tensor<T> operator*(T c, const Tensor<T>& a) { return scale(a, c); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a) { return neg(a); }

// --- reductions ---

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T acc = T(0);
    for (const T x : a.value()) acc += x;
    auto pa = a.node();
    return Tensor<T>::make_op(Shape{}, {acc}, {a}, [pa](detail::Node<T>& o) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        const T g = o.grad[0];
        for (auto& gi : pa->grad) gi += g;
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    return scale(sum(a), T(1) / T(a.numel()));
}

// --- shape ops ---

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape to " + shape_str(shape) + " from " + shape_str(a.shape()));
    auto pa = a.node();
    std::vector<T> out(a.value().begin(), a.value().end());
    return Tensor<T>::make_op(std::move(shape), std::move(out), {a}, [pa](detail::Node<T>& o) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::size_t i = 0; i < o.numel(); ++i) pa->grad[i] += o.grad[i];
    });
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
    if (a.ndim() != 2) throw ShapeError("transpose2d needs a 2-d tensor, got " + shape_str(a.shape()));
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    std::vector<T> out(r * c);
    const auto av = a.value();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
    auto pa = a.node();
    return Tensor<T>::make_op(Shape{c, r}, std::move(out), {a}, [pa, r, c](detail::Node<T>& o) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) pa->grad[i * c + j] += o.grad[j * r + i];
    });
}

// Stacks B same-length vectors into a [B, D] matrix.
template <typename T>
Tensor<T> stack_rows(const std::vector<Tensor<T>>& rows) {
    if (rows.empty()) throw ShapeError("stack_rows needs at least one row");
    const std::size_t d = rows[0].numel();
    for (const auto& r : rows)
        if (r.ndim() != 1 || r.numel() != d) throw ShapeError("stack_rows: inconsistent row shapes");
    const std::size_t b = rows.size();
    std::vector<T> out(b * d);
    for (std::size_t i = 0; i < b; ++i) {
        const auto v = rows[i].value();
        std::copy(v.begin(), v.end(), out.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    std::vector<std::shared_ptr<detail::Node<T>>> parents;
    parents.reserve(b);
    for (const auto& r : rows) parents.push_back(r.node());
    return Tensor<T>::make_op(Shape{b, d}, std::move(out), rows, [parents, d](detail::Node<T>& o) {
        for (std::size_t i = 0; i < parents.size(); ++i) {
            auto& p = parents[i];
            if (!p->requires_grad) continue;
            p->ensure_grad();
            for (std::size_t j = 0; j < d; ++j) p->grad[j] += o.grad[i * d + j];
        }
    });
}

// --- linear algebra ---

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2)
        throw ShapeError("matmul needs 2-d tensors, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const std::size_t m = a.shape()[0], k = a.shape()[1];
    const std::size_t k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2)
        throw ShapeError("matmul inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    std::vector<T> out(m * n);
    {
        detail::ConstMapMat<T> A(a.value().data(), m, k);
        detail::ConstMapMat<T> B(b.value().data(), k, n);
        detail::MapMat<T> C(out.data(), m, n);
        C.noalias() = A * B;
    }
    auto pa = a.node();
    auto pb = b.node();
    return Tensor<T>::make_op(Shape{m, n}, std::move(out), {a, b}, [pa, pb, m, k, n](detail::Node<T>& o) {
        detail::ConstMapMat<T> G(o.grad.data(), m, n);
        if (pa->requires_grad) {
            pa->ensure_grad();
            detail::ConstMapMat<T> B(pb->value.data(), k, n);
            detail::MapMat<T> dA(pa->grad.data(), m, k);
            dA.noalias() += G * B.transpose();
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            detail::ConstMapMat<T> A(pa->value.data(), m, k);
            detail::MapMat<T> dB(pb->grad.data(), k, n);
            dB.noalias() += A.transpose() * G;
        }
    });
}

// --- convolution ---

namespace detail {

struct Conv2dDims {
    std::size_t c_in, h, w, c_out, k, stride, pad, ho, wo;
};

template <typename T>
inline Conv2dDims conv2d_dims(const Tensor<T>& x, const Tensor<T>& w, int stride, int padding) {
    if (x.ndim() != 3) throw ShapeError("conv2d input must be (C,H,W), got " + shape_str(x.shape()));
    if (w.ndim() != 4) throw ShapeError("conv2d weight must be (Cout,Cin,k,k), got " + shape_str(w.shape()));
    Conv2dDims d{};
    d.c_in = x.shape()[0];
    d.h = x.shape()[1];
    d.w = x.shape()[2];
    d.c_out = w.shape()[0];
    d.k = w.shape()[2];
    if (w.shape()[1] != d.c_in) throw ShapeError("conv2d channel mismatch");
    if (w.shape()[3] != d.k) throw ShapeError("conv2d kernel must be square");
    if (d.k % 2 == 0) throw ShapeError("conv2d kernel size must be odd");
    if (stride < 1 || padding < 0) throw ShapeError("conv2d stride must be >=1 and padding >=0");
    d.stride = static_cast<std::size_t>(stride);
    d.pad = static_cast<std::size_t>(padding);
    // Floor semantics: trailing rows/columns that cannot host a full kernel
    // window are dropped (stride-2 halving of an even extent needs this).
    const std::ptrdiff_t span_h = std::ptrdiff_t(d.h) + 2 * padding - std::ptrdiff_t(d.k);
    const std::ptrdiff_t span_w = std::ptrdiff_t(d.w) + 2 * padding - std::ptrdiff_t(d.k);
    if (span_h < 0 || span_w < 0)
        throw ShapeError("conv2d output size is not integral for input " + shape_str(x.shape()));
    d.ho = static_cast<std::size_t>(span_h) / d.stride + 1;
    d.wo = static_cast<std::size_t>(span_w) / d.stride + 1;
    return d;
}

// cols is (C*k*k) x (Ho*Wo), zero-padded out-of-range taps.
template <typename T>
void im2col(const T* x, const Conv2dDims& d, T* cols) {
    const std::size_t m = d.ho * d.wo;
    for (std::size_t c = 0; c < d.c_in; ++c) {
        const T* plane = x + c * d.h * d.w;
        for (std::size_t ky = 0; ky < d.k; ++ky) {
            for (std::size_t kx = 0; kx < d.k; ++kx) {
                T* row = cols + ((c * d.k + ky) * d.k + kx) * m;
                for (std::size_t oy = 0; oy < d.ho; ++oy) {
                    const std::ptrdiff_t y = std::ptrdiff_t(oy * d.stride + ky) - std::ptrdiff_t(d.pad);
                    for (std::size_t ox = 0; ox < d.wo; ++ox) {
                        const std::ptrdiff_t xx = std::ptrdiff_t(ox * d.stride + kx) - std::ptrdiff_t(d.pad);
                        row[oy * d.wo + ox] =
                            (y < 0 || xx < 0 || y >= std::ptrdiff_t(d.h) || xx >= std::ptrdiff_t(d.w))
                                ? T(0)
                                : plane[std::size_t(y) * d.w + std::size_t(xx)];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_accumulate(const T* cols, const Conv2dDims& d, T* dx) {
    const std::size_t m = d.ho * d.wo;
    for (std::size_t c = 0; c < d.c_in; ++c) {
        T* plane = dx + c * d.h * d.w;
        for (std::size_t ky = 0; ky < d.k; ++ky) {
            for (std::size_t kx = 0; kx < d.k; ++kx) {
                const T* row = cols + ((c * d.k + ky) * d.k + kx) * m;
                for (std::size_t oy = 0; oy < d.ho; ++oy) {
                    const std::ptrdiff_t y = std::ptrdiff_t(oy * d.stride + ky) - std::ptrdiff_t(d.pad);
                    if (y < 0 || y >= std::ptrdiff_t(d.h)) continue;
                    for (std::size_t ox = 0; ox < d.wo; ++ox) {
                        const std::ptrdiff_t xx = std::ptrdiff_t(ox * d.stride + kx) - std::ptrdiff_t(d.pad);
                        if (xx < 0 || xx >= std::ptrdiff_t(d.w)) continue;
                        plane[std::size_t(y) * d.w + std::size_t(xx)] += row[oy * d.wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// Cross-correlation (no kernel flip), zero padding, square odd kernel.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride = 1, int padding = 0) {
    const detail::Conv2dDims d = detail::conv2d_dims(x, w, stride, padding);
    const std::size_t kk = d.c_in * d.k * d.k;
    const std::size_t m = d.ho * d.wo;
    std::vector<T> cols(kk * m);
    detail::im2col(x.value().data(), d, cols.data());
    std::vector<T> out(d.c_out * m);
    {
        detail::ConstMapMat<T> W(w.value().data(), d.c_out, kk);
        detail::ConstMapMat<T> Cols(cols.data(), kk, m);
        detail::MapMat<T> O(out.data(), d.c_out, m);
        O.noalias() = W * Cols;
    }
    auto px = x.node();
    auto pw = w.node();
    return Tensor<T>::make_op(
        Shape{d.c_out, d.ho, d.wo}, std::move(out), {x, w}, [px, pw, d, kk, m](detail::Node<T>& o) {
            detail::ConstMapMat<T> G(o.grad.data(), d.c_out, m);
            if (pw->requires_grad) {
                // im2col is recomputed here instead of saved: it keeps big
                // graphs (paper-size images) from pinning the column matrix.
                std::vector<T> cols(kk * m);
                detail::im2col(px->value.data(), d, cols.data());
                detail::ConstMapMat<T> Cols(cols.data(), kk, m);
                pw->ensure_grad();
                detail::MapMat<T> dW(pw->grad.data(), d.c_out, kk);
                dW.noalias() += G * Cols.transpose();
            }
            if (px->requires_grad) {
                std::vector<T> dcols(kk * m);
                detail::ConstMapMat<T> W(pw->value.data(), d.c_out, kk);
                detail::MapMat<T> dCols(dcols.data(), kk, m);
                dCols.noalias() = W.transpose() * G;
                px->ensure_grad();
                detail::col2im_accumulate(dcols.data(), d, px->grad.data());
            }
        });
}

// Adds b[c] to every spatial position of channel c.
template <typename T>
Tensor<T> bias_add_channels(const Tensor<T>& x, const Tensor<T>& b) {
    if (x.ndim() < 1 || b.ndim() != 1 || b.shape()[0] != x.shape()[0])
        throw ShapeError("bias_add_channels: bias " + shape_str(b.shape()) + " vs input " + shape_str(x.shape()));
    const std::size_t c = x.shape()[0];
    const std::size_t per = x.numel() / c;
    std::vector<T> out(x.value().begin(), x.value().end());
    const auto bv = b.value();
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t i = 0; i < per; ++i) out[ci * per + i] += bv[ci];
    auto px = x.node();
    auto pb = b.node();
    return Tensor<T>::make_op(Shape(x.shape()), std::move(out), {x, b}, [px, pb, c, per](detail::Node<T>& o) {
        if (px->requires_grad) {
            px->ensure_grad();
            for (std::size_t i = 0; i < o.numel(); ++i) px->grad[i] += o.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t ci = 0; ci < c; ++ci) {
                T acc = T(0);
                for (std::size_t i = 0; i < per; ++i) acc += o.grad[ci * per + i];
                pb->grad[ci] += acc;
            }
        }
    });
}

// --- pooling / resampling ---

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, std::size_t window) {
    if (x.ndim() != 3) throw ShapeError("avg_pool2d input must be (C,H,W)");
    const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    if (window == 0 || h % window != 0 || w % window != 0)
        throw ShapeError("avg_pool2d: extents " + shape_str(x.shape()) + " not divisible by window " +
                         std::to_string(window));
    const std::size_t ho = h / window, wo = w / window;
    const T inv = T(1) / T(window * window);
    std::vector<T> out(c * ho * wo, T(0));
    const auto xv = x.value();
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx)
                out[(ci * ho + y / window) * wo + xx / window] += xv[(ci * h + y) * w + xx] * inv;
    auto px = x.node();
    return Tensor<T>::make_op(Shape{c, ho, wo}, std::move(out), {x},
                              [px, c, h, w, window, ho, wo, inv](detail::Node<T>& o) {
                                  if (!px->requires_grad) return;
                                  px->ensure_grad();
                                  for (std::size_t ci = 0; ci < c; ++ci)
                                      for (std::size_t y = 0; y < h; ++y)
                                          for (std::size_t xx = 0; xx < w; ++xx)
                                              px->grad[(ci * h + y) * w + xx] +=
                                                  o.grad[(ci * ho + y / window) * wo + xx / window] * inv;
                              });
}

// Per-channel mean over all trailing (spatial) dims: (C,...) -> (C).
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    if (x.ndim() < 1) throw ShapeError("global_avg_pool needs at least one dim");
    const std::size_t c = x.shape()[0];
    const std::size_t per = x.numel() / c;
    const T inv = T(1) / T(per);
    std::vector<T> out(c, T(0));
    const auto xv = x.value();
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t i = 0; i < per; ++i) out[ci] += xv[ci * per + i] * inv;
    auto px = x.node();
    return Tensor<T>::make_op(Shape{c}, std::move(out), {x}, [px, c, per, inv](detail::Node<T>& o) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t i = 0; i < per; ++i) px->grad[ci * per + i] += o.grad[ci] * inv;
    });
}

template <typename T>
Tensor<T> upsample_nearest2d(const Tensor<T>& x, std::size_t factor) {
    if (x.ndim() != 3) throw ShapeError("upsample_nearest2d input must be (C,H,W)");
    if (factor < 1) throw ShapeError("upsample_nearest2d factor must be >= 1");
    const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    const std::size_t ho = h * factor, wo = w * factor;
    std::vector<T> out(c * ho * wo);
    const auto xv = x.value();
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t y = 0; y < ho; ++y)
            for (std::size_t xx = 0; xx < wo; ++xx)
                out[(ci * ho + y) * wo + xx] = xv[(ci * h + y / factor) * w + xx / factor];
    auto px = x.node();
    return Tensor<T>::make_op(Shape{c, ho, wo}, std::move(out), {x},
                              [px, c, h, w, factor, ho, wo](detail::Node<T>& o) {
                                  if (!px->requires_grad) return;
                                  px->ensure_grad();
                                  for (std::size_t ci = 0; ci < c; ++ci)
                                      for (std::size_t y = 0; y < ho; ++y)
                                          for (std::size_t xx = 0; xx < wo; ++xx)
                                              px->grad[(ci * h + y / factor) * w + xx / factor] +=
                                                  o.grad[(ci * ho + y) * wo + xx];
                              });
}

// Channel concat of (Ca,spatial...) with (Cb,spatial...).
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != b.ndim() || a.ndim() < 2) throw ShapeError("concat_channels rank mismatch");
    for (std::size_t i = 1; i < a.ndim(); ++i)
        if (a.shape()[i] != b.shape()[i])
            throw ShapeError("concat_channels spatial mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    Shape shape(a.shape());
    shape[0] += b.shape()[0];
    std::vector<T> out;
    out.reserve(a.numel() + b.numel());
    out.insert(out.end(), a.value().begin(), a.value().end());
    out.insert(out.end(), b.value().begin(), b.value().end());
    auto pa = a.node();
    auto pb = b.node();
    const std::size_t na = a.numel();
    return Tensor<T>::make_op(std::move(shape), std::move(out), {a, b}, [pa, pb, na](detail::Node<T>& o) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < na; ++i) pa->grad[i] += o.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = na; i < o.numel(); ++i) pb->grad[i - na] += o.grad[i];
        }
    });
}

// --- softmax family ---

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    if (x.ndim() != 2) throw ShapeError("softmax_rows needs a 2-d tensor");
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    std::vector<T> out(r * c);
    const auto xv = x.value();
    for (std::size_t i = 0; i < r; ++i) {
        const T* row = xv.data() + i * c;
        T mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        T denom = T(0);
        for (std::size_t j = 0; j < c; ++j) {
            out[i * c + j] = std::exp(row[j] - mx);
            denom += out[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= denom;
    }
    auto px = x.node();
    return Tensor<T>::make_op(Shape{r, c}, std::move(out), {x}, [px, r, c](detail::Node<T>& o) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
            T dot = T(0);
            for (std::size_t j = 0; j < c; ++j) dot += o.grad[i * c + j] * o.value[i * c + j];
            for (std::size_t j = 0; j < c; ++j)
                px->grad[i * c + j] += o.value[i * c + j] * (o.grad[i * c + j] - dot);
        }
    });
}

template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x) {
    if (x.ndim() != 2) throw ShapeError("l2_normalize_rows needs a 2-d tensor");
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    std::vector<T> out(r * c);
    std::vector<T> norms(r);
    const auto xv = x.value();
    for (std::size_t i = 0; i < r; ++i) {
        T sq = T(0);
        for (std::size_t j = 0; j < c; ++j) sq += xv[i * c + j] * xv[i * c + j];
        const T norm = std::sqrt(sq);
        if (!(norm > T(1e-20))) throw DomainError("l2_normalize_rows: zero-norm row");
        norms[i] = norm;
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] / norm;
    }
    auto px = x.node();
    return Tensor<T>::make_op(Shape{r, c}, std::move(out), {x},
                              [px, r, c, norms = std::move(norms)](detail::Node<T>& o) {
                                  if (!px->requires_grad) return;
                                  px->ensure_grad();
                                  for (std::size_t i = 0; i < r; ++i) {
                                      T dot = T(0);
                                      for (std::size_t j = 0; j < c; ++j)
                                          dot += o.grad[i * c + j] * o.value[i * c + j];
                                      for (std::size_t j = 0; j < c; ++j)
                                          px->grad[i * c + j] +=
                                              (o.grad[i * c + j] - o.value[i * c + j] * dot) / norms[i];
                                  }
                              });
}

// Mean over rows of -log softmax(row)[target]. Max-subtracted for stability.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& targets) {
    if (logits.ndim() != 2) throw ShapeError("softmax_cross_entropy needs 2-d logits");
    const std::size_t r = logits.shape()[0], c = logits.shape()[1];
    if (targets.size() != r) throw ShapeError("softmax_cross_entropy: one target per row");
    for (const std::size_t t : targets)
        if (t >= c) throw ShapeError("softmax_cross_entropy: target index out of range");
    const auto zv = logits.value();
    std::vector<T> probs(r * c);
    T loss = T(0);
    for (std::size_t i = 0; i < r; ++i) {
        const T* row = zv.data() + i * c;
        T mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        T denom = T(0);
        for (std::size_t j = 0; j < c; ++j) {
            probs[i * c + j] = std::exp(row[j] - mx);
            denom += probs[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= denom;
        loss += (mx + std::log(denom)) - row[targets[i]];
    }
    loss /= T(r);
    auto pz = logits.node();
    return Tensor<T>::make_op(Shape{}, {loss}, {logits},
                              [pz, r, c, targets, probs = std::move(probs)](detail::Node<T>& o) {
                                  if (!pz->requires_grad) return;
                                  pz->ensure_grad();
                                  const T g = o.grad[0] / T(r);
                                  for (std::size_t i = 0; i < r; ++i)
                                      for (std::size_t j = 0; j < c; ++j)
                                          pz->grad[i * c + j] +=
                                              g * (probs[i * c + j] - (j == targets[i] ? T(1) : T(0)));
                              });
}

// Mean of the numerically stable logit-form binary cross entropy. Targets are
// a constant 0/1 tensor; no gradient flows into them.
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& targets) {
    require_same_shape(logits, targets, "bce_with_logits");
    const auto zv = logits.value();
    const auto tv = targets.value();
    for (const T t : tv)
        if (t != T(0) && t != T(1)) throw DomainError("bce_with_logits: targets must be 0 or 1");
    const std::size_t n = zv.size();
    T loss = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        const T z = zv[i];
        loss += std::max(z, T(0)) - z * tv[i] + std::log1p(std::exp(-std::abs(z)));
    }
    loss /= T(n);
    auto pz = logits.node();
    auto pt = targets.node();
    return Tensor<T>::make_op(Shape{}, {loss}, {logits, targets}, [pz, pt, n](detail::Node<T>& o) {
        if (!pz->requires_grad) return;
        pz->ensure_grad();
        const T g = o.grad[0] / T(n);
        for (std::size_t i = 0; i < n; ++i)
            pz->grad[i] += g * (detail::stable_sigmoid(pz->value[i]) - pt->value[i]);
    });
}

}  // namespace isd
