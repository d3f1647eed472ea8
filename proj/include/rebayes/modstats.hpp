#pragma once

// Posterior (squeezed) variances, moderated t and F statistics, BH
// adjustment and ranked result tables.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "hyperprior.hpp"
#include "linear_model.hpp"
#include "specfun.hpp"

namespace rebayes {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Posterior variances (d0g s0g^2 + d_g s2_g) / (d0g + d_g). Genes without a
/// residual variance get s0g^2.
inline std::vector<double> squeeze_var(std::span<const double> s2, std::span<const double> df, const Hyperprior& hp) {
    if (s2.size() != df.size() || s2.size() != hp.size()) throw DataError("squeeze_var: length mismatch");
    std::vector<double> out(s2.size());
    for (std::size_t g = 0; g < s2.size(); ++g) {
        const double prior = hp.s02[g];
        const double d0g = hp.d0g[g];
        if (!(df[g] > 0.0) || !std::isfinite(s2[g]) || std::isinf(d0g)) {
            out[g] = prior;
            continue;
        }
        const double post = (d0g * prior + df[g] * s2[g]) / (d0g + df[g]);
        out[g] = std::clamp(post, std::min(prior, s2[g]), std::max(prior, s2[g]));
    }
    return out;
}

struct TestResult {
    double statistic = kNaN;
    double p_value = kNaN;
};

/// Moderated t for coefficient j. Absent when the coefficient is not
/// estimable or its unscaled standard deviation is zero.
inline std::optional<TestResult> moderated_t(const GeneFit& fit, Eigen::Index j, double s2_post, double df_total) {
    if (j < 0 || j >= fit.coefficients.size()) throw DomainError("moderated_t: coefficient index out of range");
    detail::require_domain(df_total > 0.0, "moderated_t: total degrees of freedom must be positive");
    if (!fit.usable) return std::nullopt;
    const double sd = fit.unscaled_sd(j);
    if (!(sd > 0.0) || !(s2_post > 0.0)) return std::nullopt;
    TestResult r;
    r.statistic = fit.coefficients(j) / (std::sqrt(s2_post) * sd);
    r.p_value = t_tail2(r.statistic, df_total);
    return r;
}

/// Moderated F for the coefficients in subset, on (|subset|, d_g + d0g) df.
inline std::optional<TestResult> moderated_F(const GeneFit& fit, std::span<const Eigen::Index> subset, double s2_post,
                                             double d0g) {
    detail::require_domain(!subset.empty(), "moderated_F: coefficient subset is empty");
    if (!fit.usable || !(s2_post > 0.0)) return std::nullopt;
    const auto q = static_cast<Eigen::Index>(subset.size());
    Eigen::VectorXd beta(q);
    Eigen::MatrixXd cov(q, q);
    for (Eigen::Index a = 0; a < q; ++a) {
        if (subset[a] < 0 || subset[a] >= fit.coefficients.size())
            throw DomainError("moderated_F: coefficient index out of range");
        beta(a) = fit.coefficients(subset[a]);
        for (Eigen::Index b = 0; b < q; ++b) cov(a, b) = fit.cov_unscaled(subset[a], subset[b]);
    }
    const Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) throw NumericalError("moderated_F: coefficient covariance is singular");
    const double quad = beta.dot(llt.solve(beta));
    TestResult r;
    r.statistic = quad / (static_cast<double>(q) * s2_post);
    r.p_value = f_sf(std::max(r.statistic, 0.0), static_cast<double>(q), fit.df_residual + d0g);
    return r;
}

/// Benjamini-Hochberg step-up adjusted p-values. NaN entries stay NaN and
/// do not count towards the number of tests.
inline std::vector<double> bh_adjust(std::span<const double> p) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (std::isnan(p[i])) continue;
        detail::require_domain(p[i] >= 0.0 && p[i] <= 1.0, "bh_adjust: p-values must lie in [0, 1]");
        idx.push_back(i);
    }
    std::vector<double> out(p.size(), kNaN);
    const std::size_t m = idx.size();
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
    double running = 1.0;
    for (std::size_t k = m; k-- > 0;) {
        const double adj = p[idx[k]] * static_cast<double>(m) / static_cast<double>(k + 1);
        running = std::min(running, adj);
        out[idx[k]] = running;
    }
    return out;
}

/// Per-gene moderated t results for one coefficient; absent values are NaN.
struct ModeratedTResults {
    std::vector<double> t;
    std::vector<double> p_value;
    std::vector<double> df_total;
    std::vector<double> s2_post;
};

inline ModeratedTResults moderated_t_all(std::span<const GeneFit> fits, const Hyperprior& hp, Eigen::Index j) {
    const PriorInputs in = prior_inputs(fits);
    ModeratedTResults r;
    r.s2_post = squeeze_var(in.s2, in.df, hp);
    const std::size_t G = fits.size();
    r.t.assign(G, kNaN);
    r.p_value.assign(G, kNaN);
    r.df_total.assign(G, kNaN);
    for (std::size_t g = 0; g < G; ++g) {
        const double df_total = fits[g].df_residual + hp.d0g[g];
        if (!fits[g].usable || !(df_total > 0.0)) continue;
        r.df_total[g] = df_total;
        if (const auto res = moderated_t(fits[g], j, r.s2_post[g], df_total)) {
            r.t[g] = res->statistic;
            r.p_value[g] = res->p_value;
        }
    }
    return r;
}

struct TopTableRow {
    std::string gene_id;
    double logFC = kNaN;
    double avg_expr = kNaN;
    double t = kNaN;
    double p_value = kNaN;
    double fdr = kNaN;
    double df_total = kNaN;
    double d0g = kNaN;
    double s2_post = kNaN;

    bool has_statistic() const { return !std::isnan(p_value); }
};

struct TopTableOptions {
    bool sort_by_p = true;
    std::optional<double> fdr_cutoff;
};

/// Rows for coefficient j. Sorted by p-value with ties broken by gene id;
/// genes without a statistic are kept (NaN fields) and placed last unless
/// an FDR cutoff removes them.
inline std::vector<TopTableRow> top_table(std::span<const std::string> gene_ids, std::span<const GeneFit> fits,
                                          const Hyperprior& hp, Eigen::Index j, const TopTableOptions& opt = {}) {
    if (gene_ids.size() != fits.size() || fits.size() != hp.size()) throw DataError("top_table: length mismatch");
    if (!fits.empty() && (j < 0 || j >= fits.front().coefficients.size()))
        throw DataError("top_table: coefficient index out of range");
    const ModeratedTResults mod = moderated_t_all(fits, hp, j);
    const std::vector<double> fdr = bh_adjust(mod.p_value);

    std::vector<TopTableRow> rows;
    rows.reserve(fits.size());
    for (std::size_t g = 0; g < fits.size(); ++g) {
        TopTableRow row;
        row.gene_id = gene_ids[g];
        row.avg_expr = fits[g].avg_expr;
        row.d0g = hp.d0g[g];
        row.s2_post = mod.s2_post[g];
        if (fits[g].usable) {
            row.logFC = fits[g].coefficients(j);
            row.df_total = mod.df_total[g];
        }
        row.t = mod.t[g];
        row.p_value = mod.p_value[g];
        row.fdr = fdr[g];
        if (opt.fdr_cutoff && !(row.fdr <= *opt.fdr_cutoff)) continue;
        rows.push_back(std::move(row));
    }
    if (opt.sort_by_p) {
        std::sort(rows.begin(), rows.end(), [](const TopTableRow& a, const TopTableRow& b) {
            if (a.has_statistic() != b.has_statistic()) return a.has_statistic();
            if (a.has_statistic() && a.p_value != b.p_value) return a.p_value < b.p_value;
            return a.gene_id < b.gene_id;
        });
    }
    return rows;
}

}  // namespace rebayes
