#pragma once

// Simulation from the hierarchical model (two groups, optional
// hypervariable and differentially expressed genes) and evaluation of the
// standard and robust empirical Bayes pipelines on the simulated data.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "errors.hpp"
#include "hyperprior.hpp"
#include "linear_model.hpp"
#include "modstats.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace rebayes {

struct SimConfig {
    std::size_t n_genes = 10000;
    /// Split into two groups: the first n_samples / 2 samples, then the rest.
    std::size_t n_samples = 6;
    double d0_true = 4.0;  // may be +inf
    double s02_true = 0.04;
    std::size_t n_outliers = 0;
    double d0_outlier_true = 0.5;
    std::size_t n_de = 0;
    /// Standard deviation of the log-fold-changes of DE genes.
    double lfc_sd = 2.0;
    std::uint64_t seed = 1;

    void validate() const {
        if (n_genes < 2) throw DomainError("simulation needs at least 2 genes");
        if (n_samples < 3) throw DomainError("simulation needs at least 3 samples");
        if (n_outliers + n_de > n_genes) throw DomainError("outlier and DE gene counts exceed the number of genes");
        if (!(d0_true > 0.0)) throw DomainError("d0 must be positive");
        if (!(s02_true > 0.0) || !std::isfinite(s02_true)) throw DomainError("s02 must be finite and positive");
        if (!(d0_outlier_true > 0.0) || !std::isfinite(d0_outlier_true))
            throw DomainError("outlier prior df must be finite and positive");
        if (!(lfc_sd >= 0.0) || !std::isfinite(lfc_sd)) throw DomainError("lfc_sd must be finite and nonnegative");
    }
};

struct SimTruth {
    std::vector<double> sigma2;
    std::vector<bool> de;
    std::vector<bool> outlier;
    std::vector<double> lfc;
};

struct SimulatedDataset {
    ExpressionSet data;
    DesignMatrix design;
    SimTruth truth;
};

/// Two-group design with an intercept and a group-two indicator.
inline DesignMatrix two_group_design(std::size_t n_samples) {
    DesignMatrix d;
    const auto n = static_cast<Eigen::Index>(n_samples);
    d.X.resize(n, 2);
    const Eigen::Index first = n / 2;
    for (Eigen::Index i = 0; i < n; ++i) {
        d.X(i, 0) = 1.0;
        d.X(i, 1) = i < first ? 0.0 : 1.0;
    }
    d.column_names = {"Intercept", "Group2"};
    return d;
}

/// Draws one dataset. Replicate r of a configuration uses the stream
/// stream_seed(seed, {r}); gene g within it uses stream_seed(seed, {r, g + 1}),
/// and the choice of outlier and DE genes uses stream_seed(seed, {r, 0}).
inline SimulatedDataset simulate_dataset(const SimConfig& cfg, std::uint64_t replicate = 0) {
    cfg.validate();
    const std::size_t G = cfg.n_genes;
    const std::size_t n = cfg.n_samples;
    SimulatedDataset out;
    out.design = two_group_design(n);
    out.data.values.resize(static_cast<Eigen::Index>(G), static_cast<Eigen::Index>(n));
    out.data.gene_ids.resize(G);
    out.data.sample_ids.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.data.sample_ids[i] = "S" + std::to_string(i + 1);

    SimTruth& truth = out.truth;
    truth.sigma2.assign(G, cfg.s02_true);
    truth.de.assign(G, false);
    truth.outlier.assign(G, false);
    truth.lfc.assign(G, 0.0);

    {
        Xoshiro256 rng(stream_seed(cfg.seed, {replicate, 0}));
        std::vector<std::size_t> perm(G);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        const std::size_t picks = cfg.n_outliers + cfg.n_de;
        for (std::size_t k = 0; k < picks; ++k) {
            const std::size_t j = k + static_cast<std::size_t>(rng.below(G - k));
            std::swap(perm[k], perm[j]);
        }
        for (std::size_t k = 0; k < cfg.n_outliers; ++k) truth.outlier[perm[k]] = true;
        for (std::size_t k = cfg.n_outliers; k < picks; ++k) truth.de[perm[k]] = true;
    }

    const std::size_t first_group = n / 2;
    for (std::size_t g = 0; g < G; ++g) {
        Xoshiro256 rng(stream_seed(cfg.seed, {replicate, g + 1}));
        out.data.gene_ids[g] = "gene" + std::to_string(g + 1);
        const double prior_df = truth.outlier[g] ? cfg.d0_outlier_true : cfg.d0_true;
        if (std::isfinite(prior_df)) truth.sigma2[g] = cfg.s02_true * prior_df / chisq_variate(rng, prior_df);
        if (truth.de[g]) truth.lfc[g] = cfg.lfc_sd * normal(rng);
        const double sigma = std::sqrt(truth.sigma2[g]);
        for (std::size_t i = 0; i < n; ++i) {
            const double shift = i >= first_group ? truth.lfc[g] : 0.0;
            out.data.values(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(i)) = shift + sigma * normal(rng);
        }
    }
    return out;
}

/// Kolmogorov-Smirnov distance between a sample and Uniform(0, 1). NaN
/// entries are ignored.
inline double ks_uniform_statistic(std::span<const double> p) {
    std::vector<double> v;
    v.reserve(p.size());
    for (double x : p)
        if (!std::isnan(x)) v.push_back(x);
    std::sort(v.begin(), v.end());
    const double n = static_cast<double>(v.size());
    double d = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double hi = static_cast<double>(i + 1) / n - v[i];
        const double lo = v[i] - static_cast<double>(i) / n;
        d = std::max({d, hi, lo});
    }
    return d;
}

/// Asymptotic p-value of the one-sample KS statistic d on n observations,
/// with Stephens' small-sample correction.
inline double ks_p_value(double d, std::size_t n) {
    const double sn = std::sqrt(static_cast<double>(n));
    const double lambda = (sn + 0.12 + 0.11 / sn) * d;
    if (lambda < 0.2) return 1.0;
    double sum = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        sum += (k % 2 == 1 ? term : -term);
        if (term < 1e-16) break;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

struct EvalOptions {
    std::vector<double> type1_cutoffs{0.001, 0.01, 0.05, 0.1};
    std::vector<std::size_t> top_counts{50, 100, 150, 200, 250, 300, 350, 400, 450, 500};
    std::vector<double> fdr_cutoffs{0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.10};
    RobustOptions robust{};
    unsigned threads = 0;
};

/// Metrics of one method on one replicate.
struct MethodMetrics {
    double d0 = kNaN;
    double s02 = kNaN;
    std::size_t n_outliers_flagged = 0;
    /// Proportion of genes with p <= cutoff, per type1 cutoff.
    std::vector<double> rejection_rate;
    double ks_statistic = kNaN;
    double ks_p = kNaN;
    /// Non-DE genes among the top-ranked genes, per top count.
    std::vector<double> false_discoveries;
    /// Proportion of DE genes with BH-adjusted p <= cutoff, per FDR cutoff.
    std::vector<double> power;
};

struct ReplicateMetrics {
    std::uint64_t replicate = 0;
    MethodMetrics standard;
    MethodMetrics robust;
};

namespace detail {

inline MethodMetrics method_metrics(const std::vector<GeneFit>& fits, const Hyperprior& hp, const SimTruth& truth,
                                    const EvalOptions& opt) {
    MethodMetrics m;
    m.d0 = hp.d0;
    m.s02 = hp.s02_scale;
    m.n_outliers_flagged = hp.n_outliers();
    const ModeratedTResults mod = moderated_t_all(fits, hp, 1);
    const std::vector<double>& p = mod.p_value;
    const std::size_t G = p.size();

    m.rejection_rate.reserve(opt.type1_cutoffs.size());
    for (double c : opt.type1_cutoffs) {
        const auto hits = std::count_if(p.begin(), p.end(), [&](double v) { return v <= c; });
        m.rejection_rate.push_back(static_cast<double>(hits) / static_cast<double>(G));
    }
    m.ks_statistic = ks_uniform_statistic(p);
    m.ks_p = ks_p_value(m.ks_statistic, G);

    const auto n_de = static_cast<std::size_t>(std::count(truth.de.begin(), truth.de.end(), true));
    if (n_de > 0) {
        std::vector<std::size_t> order(G);
        std::iota(order.begin(), order.end(), std::size_t{0});
        const std::size_t max_top = std::min(G, *std::max_element(opt.top_counts.begin(), opt.top_counts.end()));
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(max_top), order.end(),
                          [&](std::size_t a, std::size_t b) { return p[a] < p[b] || (p[a] == p[b] && a < b); });
        for (std::size_t k : opt.top_counts) {
            const std::size_t top = std::min(k, G);
            std::size_t fd = 0;
            for (std::size_t r = 0; r < top; ++r) fd += truth.de[order[r]] ? 0 : 1;
            m.false_discoveries.push_back(static_cast<double>(fd));
        }
        const std::vector<double> adj = bh_adjust(p);
        for (double c : opt.fdr_cutoffs) {
            std::size_t found = 0;
            for (std::size_t g = 0; g < G; ++g) found += (truth.de[g] && adj[g] <= c) ? 1 : 0;
            m.power.push_back(static_cast<double>(found) / static_cast<double>(n_de));
        }
    }
    return m;
}

}  // namespace detail

/// Simulates replicate r and scores both the standard and robust pipelines.
inline ReplicateMetrics run_replicate(const SimConfig& cfg, std::uint64_t replicate, const EvalOptions& opt = {}) {
    const SimulatedDataset ds = simulate_dataset(cfg, replicate);
    const std::vector<GeneFit> fits = fit_all(ds.data, ds.design);
    const PriorInputs in = prior_inputs(fits);
    const Hyperprior standard = standard_hyperprior(fit_fdist(in.s2, in.df), fits.size());
    const Hyperprior robust = fit_fdist_robustly(in.s2, in.df, opt.robust);
    ReplicateMetrics r;
    r.replicate = replicate;
    r.standard = detail::method_metrics(fits, standard, ds.truth, opt);
    r.robust = detail::method_metrics(fits, robust, ds.truth, opt);
    return r;
}

/// Runs replicates 0 .. n_reps - 1, in parallel; results are ordered by
/// replicate index and independent of the thread count.
inline std::vector<ReplicateMetrics> run_replicates(const SimConfig& cfg, std::size_t n_reps,
                                                    const EvalOptions& opt = {}) {
    cfg.validate();
    std::vector<ReplicateMetrics> out(n_reps);
    parallel_for(n_reps, [&](std::size_t r) { out[r] = run_replicate(cfg, r, opt); }, opt.threads);
    return out;
}

/// Mean and Monte-Carlo standard error of a set of values.
struct MeanSE {
    double mean = kNaN;
    double se = kNaN;
};

inline MeanSE mean_se(std::span<const double> v) {
    MeanSE out;
    const auto n = static_cast<double>(v.size());
    if (v.empty()) return out;
    out.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    if (v.size() < 2) {
        out.se = 0.0;
        return out;
    }
    double ss = 0.0;
    for (double x : v) ss += (x - out.mean) * (x - out.mean);
    out.se = std::sqrt(ss / (n - 1.0) / n);
    return out;
}

/// Five-number summary (type-7 quantiles) plus mean.
struct Summary {
    double min = kNaN, q1 = kNaN, median = kNaN, q3 = kNaN, max = kNaN, mean = kNaN;
};

inline Summary summarize(std::vector<double> v) {
    Summary s;
    if (v.empty()) return s;
    std::sort(v.begin(), v.end());
    s.min = v.front();
    s.max = v.back();
    s.q1 = sorted_quantile(v, 0.25);
    s.median = sorted_quantile(v, 0.5);
    s.q3 = sorted_quantile(v, 0.75);
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    return s;
}

template <typename Get>
std::vector<double> collect(const std::vector<ReplicateMetrics>& reps, bool robust, Get&& get) {
    std::vector<double> v;
    v.reserve(reps.size());
    for (const auto& r : reps) v.push_back(get(robust ? r.robust : r.standard));
    return v;
}

/// Mean rejection proportions per cutoff for both methods.
struct Type1Table {
    std::vector<double> cutoffs;
    std::vector<MeanSE> standard;
    std::vector<MeanSE> robust;
    std::size_t n_reps = 0;
};

inline Type1Table summarize_type1(const std::vector<ReplicateMetrics>& reps, const EvalOptions& opt) {
    Type1Table t;
    t.cutoffs = opt.type1_cutoffs;
    t.n_reps = reps.size();
    for (std::size_t c = 0; c < t.cutoffs.size(); ++c) {
        t.standard.push_back(mean_se(collect(reps, false, [&](const MethodMetrics& m) { return m.rejection_rate[c]; })));
        t.robust.push_back(mean_se(collect(reps, true, [&](const MethodMetrics& m) { return m.rejection_rate[c]; })));
    }
    return t;
}

/// Type I error under the global null (no DE genes, no outliers).
inline Type1Table evaluate_type1(const SimConfig& cfg, std::size_t n_reps, const EvalOptions& opt = {}) {
    if (cfg.n_de != 0 || cfg.n_outliers != 0) throw DomainError("type I error evaluation needs a null configuration");
    return summarize_type1(run_replicates(cfg, n_reps, opt), opt);
}

/// Averaged false-discovery and power curves for both methods.
struct PowerFdrCurves {
    std::vector<std::size_t> top_counts;
    std::vector<MeanSE> fd_standard, fd_robust;
    std::vector<double> fdr_cutoffs;
    std::vector<MeanSE> power_standard, power_robust;
    std::size_t n_reps = 0;
};

inline PowerFdrCurves summarize_power_fdr(const std::vector<ReplicateMetrics>& reps, const EvalOptions& opt) {
    PowerFdrCurves c;
    c.top_counts = opt.top_counts;
    c.fdr_cutoffs = opt.fdr_cutoffs;
    c.n_reps = reps.size();
    for (std::size_t k = 0; k < c.top_counts.size(); ++k) {
        c.fd_standard.push_back(mean_se(collect(reps, false, [&](const MethodMetrics& m) { return m.false_discoveries[k]; })));
        c.fd_robust.push_back(mean_se(collect(reps, true, [&](const MethodMetrics& m) { return m.false_discoveries[k]; })));
    }
    for (std::size_t k = 0; k < c.fdr_cutoffs.size(); ++k) {
        c.power_standard.push_back(mean_se(collect(reps, false, [&](const MethodMetrics& m) { return m.power[k]; })));
        c.power_robust.push_back(mean_se(collect(reps, true, [&](const MethodMetrics& m) { return m.power[k]; })));
    }
    return c;
}

inline PowerFdrCurves evaluate_power_fdr(const SimConfig& cfg, std::size_t n_reps, const EvalOptions& opt = {}) {
    if (cfg.n_de == 0) throw DomainError("power evaluation needs DE genes");
    return summarize_power_fdr(run_replicates(cfg, n_reps, opt), opt);
}

/// Distribution of the hyperparameter estimates across replicates.
struct RecoverySummary {
    Summary d0_standard, d0_robust, s02_standard, s02_robust;
    std::size_t n_reps = 0;
};

inline RecoverySummary summarize_recovery(const std::vector<ReplicateMetrics>& reps) {
    RecoverySummary s;
    s.n_reps = reps.size();
    s.d0_standard = summarize(collect(reps, false, [](const MethodMetrics& m) { return m.d0; }));
    s.d0_robust = summarize(collect(reps, true, [](const MethodMetrics& m) { return m.d0; }));
    s.s02_standard = summarize(collect(reps, false, [](const MethodMetrics& m) { return m.s02; }));
    s.s02_robust = summarize(collect(reps, true, [](const MethodMetrics& m) { return m.s02; }));
    return s;
}

inline RecoverySummary evaluate_hyperparam_recovery(const SimConfig& cfg, std::size_t n_reps,
                                                    const EvalOptions& opt = {}) {
    return summarize_recovery(run_replicates(cfg, n_reps, opt));
}

}  // namespace rebayes
