#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "rebayes/rng.hpp"
#include "rebayes/simulation.hpp"

using namespace rebayes;

namespace {

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

double var_of(const std::vector<double>& v) {
    const double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return ss / (v.size() - 1);
}

std::vector<double> log_sigma2(const SimTruth& t, const std::vector<bool>* keep = nullptr, bool want = false) {
    std::vector<double> out;
    for (std::size_t g = 0; g < t.sigma2.size(); ++g)
        if (!keep || (*keep)[g] == want) out.push_back(std::log(t.sigma2[g]));
    return out;
}

}  // namespace

TEST(Rng, StreamsAreReproducibleAndDistinct) {
    Xoshiro256 a(stream_seed(9, {1, 2})), b(stream_seed(9, {1, 2})), c(stream_seed(9, {2, 1}));
    for (int i = 0; i < 100; ++i) {
        const auto x = a();
        EXPECT_EQ(x, b());
        EXPECT_NE(x, c());
    }
}

TEST(Rng, VariateMoments) {
    Xoshiro256 rng(123);
    const int n = 200000;
    std::vector<double> z(n), g(n), u(n);
    for (int i = 0; i < n; ++i) {
        z[i] = normal(rng);
        g[i] = chisq_variate(rng, 0.5);
        u[i] = rng.uniform();
    }
    EXPECT_NEAR(mean_of(z), 0.0, 4.0 / std::sqrt(n));
    EXPECT_NEAR(var_of(z), 1.0, 4.0 * std::sqrt(2.0 / n));
    EXPECT_NEAR(mean_of(g), 0.5, 4.0 * std::sqrt(1.0 / n));
    EXPECT_LT(ks_uniform_statistic(u), 1.63 / std::sqrt(n));
}

TEST(Simulate, Deterministic) {
    SimConfig cfg;
    cfg.n_genes = 300;
    cfg.n_outliers = 10;
    cfg.n_de = 20;
    const auto a = simulate_dataset(cfg, 3);
    const auto b = simulate_dataset(cfg, 3);
    EXPECT_EQ(a.data.values, b.data.values);
    EXPECT_EQ(a.truth.de, b.truth.de);
    EXPECT_EQ(a.truth.sigma2, b.truth.sigma2);
    const auto c = simulate_dataset(cfg, 4);
    EXPECT_NE(a.data.values, c.data.values);
    EXPECT_EQ(a.data.gene_ids.front(), "gene1");
    EXPECT_EQ(a.data.sample_ids.back(), "S6");
    EXPECT_EQ(a.design.X.col(1).sum(), 3.0);
}

TEST(Simulate, InfinitePriorDfGivesCommonVariance) {
    SimConfig cfg;
    cfg.n_genes = 100;
    cfg.d0_true = kInf;
    for (double s : simulate_dataset(cfg).truth.sigma2) EXPECT_EQ(s, 0.04);
}

TEST(Simulate, ScaledInverseChiSquareVariances) {
    SimConfig cfg;
    cfg.seed = 2;
    const auto ds = simulate_dataset(cfg);
    const auto ls = log_sigma2(ds.truth);
    const double se = std::sqrt(trigamma(2.0) / ls.size());
    EXPECT_NEAR(mean_of(ls), std::log(0.04) + std::log(2.0) - digamma(2.0), 4.0 * se);
    EXPECT_NEAR(var_of(ls), trigamma(2.0), 0.1 * trigamma(2.0));
}

TEST(Simulate, OutliersIncreaseSpread) {
    SimConfig cfg;
    cfg.n_outliers = 1000;
    cfg.seed = 5;
    const auto ds = simulate_dataset(cfg);
    ASSERT_EQ(std::count(ds.truth.outlier.begin(), ds.truth.outlier.end(), true), 1000);
    const auto out = log_sigma2(ds.truth, &ds.truth.outlier, true);
    const auto in = log_sigma2(ds.truth, &ds.truth.outlier, false);
    EXPECT_GT(var_of(out), 5.0 * var_of(in));
    EXPECT_NEAR(var_of(out), trigamma(0.25), 0.2 * trigamma(0.25));
}

TEST(Simulate, LabelsAreDisjointAndCounted) {
    SimConfig cfg;
    cfg.n_genes = 1000;
    cfg.n_outliers = 100;
    cfg.n_de = 200;
    const auto ds = simulate_dataset(cfg);
    std::size_t de = 0, out = 0;
    for (std::size_t g = 0; g < 1000; ++g) {
        EXPECT_FALSE(ds.truth.de[g] && ds.truth.outlier[g]);
        de += ds.truth.de[g];
        out += ds.truth.outlier[g];
        if (!ds.truth.de[g]) {
            EXPECT_EQ(ds.truth.lfc[g], 0.0);
        }
    }
    EXPECT_EQ(de, 200u);
    EXPECT_EQ(out, 100u);
}

TEST(Simulate, EveryGeneDifferentiallyExpressed) {
    SimConfig cfg;
    cfg.n_genes = 50;
    cfg.n_de = 50;
    const auto ds = simulate_dataset(cfg);
    EXPECT_TRUE(std::all_of(ds.truth.de.begin(), ds.truth.de.end(), [](bool b) { return b; }));
}

TEST(Simulate, ConfigValidation) {
    SimConfig cfg;
    cfg.n_genes = 10;
    cfg.n_de = 8;
    cfg.n_outliers = 3;
    EXPECT_THROW(simulate_dataset(cfg), DomainError);
    SimConfig c2;
    c2.n_samples = 2;
    EXPECT_THROW(c2.validate(), DomainError);
    SimConfig c3;
    c3.d0_true = 0.0;
    EXPECT_THROW(c3.validate(), DomainError);
}

TEST(KolmogorovSmirnov, StatisticAndPValue) {
    EXPECT_NEAR(ks_uniform_statistic(std::vector<double>{0.5}), 0.5, 1e-15);
    EXPECT_NEAR(ks_uniform_statistic(std::vector<double>{0.1, 0.2, 0.3, 0.9}), 0.45, 1e-15);
    std::vector<double> grid(1000);
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = (i + 0.5) / 1000.0;
    EXPECT_NEAR(ks_uniform_statistic(grid), 0.0005, 1e-12);
    EXPECT_NEAR(ks_p_value(1.358 / std::sqrt(10000.0), 10000), 0.05, 0.002);
    EXPECT_GT(ks_p_value(0.0005, 1000), 0.99);
    EXPECT_LT(ks_p_value(0.5, 1000), 1e-10);
}

TEST(Evaluate, SingleReplicateSummaries) {
    SimConfig cfg;
    cfg.n_genes = 2000;
    EvalOptions opt;
    opt.type1_cutoffs = {0.05, 1.0};
    const Type1Table t = evaluate_type1(cfg, 1, opt);
    ASSERT_EQ(t.n_reps, 1u);
    EXPECT_EQ(t.standard[1].mean, 1.0);
    EXPECT_EQ(t.robust[1].mean, 1.0);
    EXPECT_EQ(t.standard[0].se, 0.0);
    const RecoverySummary r = evaluate_hyperparam_recovery(cfg, 1, opt);
    EXPECT_EQ(r.d0_standard.min, r.d0_standard.max);
    EXPECT_EQ(r.d0_robust.median, r.d0_robust.mean);
}

TEST(Evaluate, RejectsWrongConfigurations) {
    SimConfig cfg;
    cfg.n_genes = 500;
    cfg.n_de = 10;
    EXPECT_THROW(evaluate_type1(cfg, 1), DomainError);
    SimConfig null_cfg;
    null_cfg.n_genes = 500;
    EXPECT_THROW(evaluate_power_fdr(null_cfg, 1), DomainError);
}

TEST(Evaluate, ReplicatesIndependentOfThreadCount) {
    SimConfig cfg;
    cfg.n_genes = 1000;
    cfg.n_de = 100;
    cfg.n_outliers = 20;
    EvalOptions one, many;
    one.threads = 1;
    many.threads = 4;
    const auto a = run_replicates(cfg, 3, one);
    const auto b = run_replicates(cfg, 3, many);
    for (std::size_t r = 0; r < 3; ++r) {
        EXPECT_EQ(a[r].replicate, r);
        EXPECT_EQ(a[r].robust.d0, b[r].robust.d0);
        EXPECT_EQ(a[r].standard.power, b[r].standard.power);
        EXPECT_EQ(a[r].robust.false_discoveries, b[r].robust.false_discoveries);
    }
    const PowerFdrCurves c = summarize_power_fdr(a, one);
    ASSERT_EQ(c.fd_robust.size(), one.top_counts.size());
    for (std::size_t k = 1; k < c.fd_robust.size(); ++k) EXPECT_GE(c.fd_robust[k].mean, c.fd_robust[k - 1].mean);
    for (std::size_t k = 1; k < c.power_robust.size(); ++k)
        EXPECT_GE(c.power_robust[k].mean, c.power_robust[k - 1].mean);
}

TEST(Summaries, MeanSeAndQuantiles) {
    const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
    const MeanSE m = mean_se(v);
    EXPECT_EQ(m.mean, 2.5);
    EXPECT_NEAR(m.se, std::sqrt(5.0 / 3.0 / 4.0), 1e-15);
    const Summary s = summarize(v);
    EXPECT_EQ(s.q1, 1.75);
    EXPECT_EQ(s.median, 2.5);
    EXPECT_EQ(s.q3, 3.25);
    EXPECT_TRUE(std::isnan(mean_se(std::vector<double>{}).mean));
}
