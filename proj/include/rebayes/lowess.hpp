#pragma once

// Locally weighted linear regression (lowess) with tricube neighbourhood
// weights and optional bisquare robustness iterations.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "errors.hpp"

namespace rebayes {

struct LowessOptions {
    /// Fraction of points in each local neighbourhood.
    double span = 0.4;
    /// Robustness reweighting passes after the initial fit.
    int robustness_iterations = 3;
};

namespace detail {

inline double tricube(double u) {
    const double c = 1.0 - u * u * u;
    return c * c * c;
}

inline double median_of(std::vector<double> v) {
    const std::size_t n = v.size();
    const std::size_t mid = n / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    double m = v[mid];
    if (n % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + mid));
    return m;
}

// Weighted local linear fit at xs[i] over the sorted window [left, right].
inline double local_fit(std::span<const double> xs, std::span<const double> ys, std::span<const double> rw,
                        std::size_t i, std::size_t left, std::size_t right) {
    const double x0 = xs[i];
    const double h = std::max(x0 - xs[left], xs[right] - x0);
    double sw = 0.0, sx = 0.0, sy = 0.0;
    std::vector<double> w(right - left + 1);
    for (std::size_t j = left; j <= right; ++j) {
        double wj;
        if (h <= 0.0) {
            wj = 1.0;
        } else {
            const double d = std::fabs(xs[j] - x0) / h;
            wj = d < 0.999 ? (d <= 0.001 ? 1.0 : tricube(d)) : 0.0;
        }
        wj *= rw[j];
        w[j - left] = wj;
        sw += wj;
        sx += wj * xs[j];
        sy += wj * ys[j];
    }
    if (sw <= 0.0) return ys[i];
    const double xbar = sx / sw;
    const double ybar = sy / sw;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t j = left; j <= right; ++j) {
        const double dx = xs[j] - xbar;
        sxx += w[j - left] * dx * dx;
        sxy += w[j - left] * dx * (ys[j] - ybar);
    }
    const double range = xs.back() - xs.front();
    if (sxx <= 1e-14 * range * range * sw) return ybar;
    return ybar + sxy / sxx * (x0 - xbar);
}

}  // namespace detail

/// Lowess smooth of y on x; returns fitted values in the input order.
inline std::vector<double> lowess(std::span<const double> x, std::span<const double> y,
                                  const LowessOptions& opt = {}) {
    if (x.size() != y.size()) throw DataError("lowess: x and y lengths differ");
    detail::require_domain(opt.span > 0.0 && opt.span <= 1.0, "lowess: span must lie in (0, 1]");
    const std::size_t n = x.size();
    if (n == 0) return {};
    if (n == 1) return {y[0]};

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> xs(n), ys(n);
    for (std::size_t k = 0; k < n; ++k) {
        xs[k] = x[order[k]];
        ys[k] = y[order[k]];
    }

    const auto ns = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(opt.span * static_cast<double>(n))),
                                            2, n);
    std::vector<double> robustness(n, 1.0);
    std::vector<double> fitted(n);
    for (int pass = 0; pass <= opt.robustness_iterations; ++pass) {
        std::size_t left = 0;
        std::size_t right = ns - 1;
        for (std::size_t i = 0; i < n; ++i) {
            while (right + 1 < n && xs[i] - xs[left] > xs[right + 1] - xs[i]) {
                ++left;
                ++right;
            }
            if (i > 0 && xs[i] == xs[i - 1]) {
                fitted[i] = fitted[i - 1];
                continue;
            }
            fitted[i] = detail::local_fit(xs, ys, robustness, i, left, right);
        }
        if (pass == opt.robustness_iterations) break;

        std::vector<double> abs_resid(n);
        for (std::size_t k = 0; k < n; ++k) abs_resid[k] = std::fabs(ys[k] - fitted[k]);
        const double scale = 6.0 * detail::median_of(abs_resid);
        double mean_abs_y = 0.0;
        for (double v : ys) mean_abs_y += std::fabs(v);
        mean_abs_y /= static_cast<double>(n);
        if (scale <= 1e-12 * std::max(mean_abs_y, 1.0)) break;
        for (std::size_t k = 0; k < n; ++k) {
            const double u = abs_resid[k] / scale;
            robustness[k] = u < 1.0 ? (1.0 - u * u) * (1.0 - u * u) : 0.0;
        }
    }

    std::vector<double> out(n);
    for (std::size_t k = 0; k < n; ++k) out[order[k]] = fitted[k];
    return out;
}

/// Piecewise-linear interpolation of a fitted curve (x, f) at new points,
/// with constant extrapolation beyond the observed range.
inline std::vector<double> interpolate_curve(std::span<const double> x, std::span<const double> f,
                                             std::span<const double> at) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> xs, fs;
    for (std::size_t k : order) {
        if (!xs.empty() && x[k] == xs.back()) continue;
        xs.push_back(x[k]);
        fs.push_back(f[k]);
    }
    std::vector<double> out(at.size());
    for (std::size_t i = 0; i < at.size(); ++i) {
        const double v = at[i];
        if (xs.empty()) {
            out[i] = std::numeric_limits<double>::quiet_NaN();
        } else if (!(v > xs.front())) {
            out[i] = fs.front();
        } else if (v >= xs.back()) {
            out[i] = fs.back();
        } else {
            const auto it = std::upper_bound(xs.begin(), xs.end(), v);
            const auto hi = static_cast<std::size_t>(it - xs.begin());
            const std::size_t lo = hi - 1;
            const double t = (v - xs[lo]) / (xs[hi] - xs[lo]);
            out[i] = fs[lo] + t * (fs[hi] - fs[lo]);
        }
    }
    return out;
}

}  // namespace rebayes
