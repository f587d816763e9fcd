#pragma once

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include "isd/tensor.hpp"

// Central finite-difference oracle. loss_fn must rebuild the graph from the
// current leaf values on every call; the oracle stays independent of the
// backward pass it checks.

namespace testutil {

struct FdTolerance {
    double rel = 1e-4;
    double abs = 1e-7;   // applies when the gradient magnitude is below `small`
    double small = 1e-4;
    double h = 1e-4;
};

inline bool fd_matches(double analytic, double fd, const FdTolerance& tol) {
    const double mag = std::max(std::abs(analytic), std::abs(fd));
    if (mag < tol.small) return std::abs(analytic - fd) <= tol.abs;
    return std::abs(analytic - fd) / mag <= tol.rel;
}

inline void fd_check(const std::function<isd::Tensor<double>()>& loss_fn,
                     const std::vector<isd::Tensor<double>*>& leaves, FdTolerance tol = {}) {
    for (auto* leaf : leaves) {
        REQUIRE(leaf->requires_grad());
        leaf->zero_grad();
    }
    loss_fn().backward();
    std::vector<std::vector<double>> analytic;
    for (auto* leaf : leaves) analytic.emplace_back(leaf->grad().begin(), leaf->grad().end());

    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto data = leaves[li]->data_mut();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            auto fd_at = [&](double h) {
                data[i] = saved + h;
                const double fp = loss_fn().item();
                data[i] = saved - h;
                const double fm = loss_fn().item();
                data[i] = saved;
                return (fp - fm) / (2.0 * h);
            };
            const double fd = fd_at(tol.h);
            bool ok = fd_matches(analytic[li][i], fd, tol);
            if (!ok) {
                // A piecewise-linear kink inside the +-h window corrupts the
                // wide stencil; a genuine gradient bug survives the retry.
                const double fd_small = fd_at(tol.h / 16.0);
                ok = fd_matches(analytic[li][i], fd_small, tol);
            }
            if (!ok) {
                char msg[160];
                std::snprintf(msg, sizeof msg, "leaf %zu elem %zu: analytic %.12g vs fd %.12g",
                              li, i, analytic[li][i], fd);
                REQUIRE_MESSAGE(ok, msg);
            }
        }
    }
}

inline isd::Tensor<double> random_tensor(isd::Shape shape, isd::rng::Xoshiro256& g, double lo = -1.0,
                                         double hi = 1.0, bool requires_grad = true) {
    return isd::Tensor<double>::uniform(std::move(shape), lo, hi, g, requires_grad);
}

}  // namespace testutil
