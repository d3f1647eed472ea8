#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "rebayes/modstats.hpp"
#include "rebayes/simulation.hpp"

using namespace rebayes;

namespace {

Hyperprior flat_prior(std::size_t G, double d0, double s02) { return standard_hyperprior(FDistFit{d0, s02, {}}, G); }

GeneFit two_group_fit(const std::vector<double>& y) { return fit_gene(y, two_group_design(y.size())); }

}  // namespace

TEST(SqueezeVar, HandExample) {
    const Hyperprior hp = flat_prior(1, 4.0, 0.5);
    const auto out = squeeze_var(std::vector<double>{1.0}, std::vector<double>{4.0}, hp);
    EXPECT_NEAR(out[0], 0.75, 1e-15);
}

TEST(SqueezeVar, Endpoints) {
    const std::vector<double> s2{1.3, 0.2, 4.0};
    const std::vector<double> df{4.0, 4.0, 0.0};
    const auto none = squeeze_var(s2, df, flat_prior(3, 0.0, 0.5));
    EXPECT_EQ(none[0], 1.3);
    EXPECT_EQ(none[1], 0.2);
    const auto full = squeeze_var(s2, df, flat_prior(3, kInf, 0.5));
    for (double v : full) EXPECT_EQ(v, 0.5);
    // no residual df: prior location regardless of d0g
    EXPECT_EQ(squeeze_var(s2, df, flat_prior(3, 3.0, 0.5))[2], 0.5);
    EXPECT_THROW(squeeze_var(s2, std::vector<double>{4.0}, flat_prior(3, 3.0, 0.5)), DataError);
}

TEST(SqueezeVar, StaysBetweenSampleAndPrior) {
    std::mt19937_64 gen(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::size_t G = 2000;
    std::vector<double> s2(G), df(G);
    Hyperprior hp = flat_prior(G, 1.0, 1.0);
    for (std::size_t g = 0; g < G; ++g) {
        s2[g] = std::exp(8.0 * u(gen) - 4.0);
        df[g] = 1.0 + 20.0 * u(gen);
        hp.s02[g] = std::exp(4.0 * u(gen) - 2.0);
        hp.d0g[g] = 50.0 * u(gen);
    }
    const auto out = squeeze_var(s2, df, hp);
    for (std::size_t g = 0; g < G; ++g) {
        EXPECT_GE(out[g], std::min(s2[g], hp.s02[g]));
        EXPECT_LE(out[g], std::max(s2[g], hp.s02[g]));
    }
}

TEST(ModeratedT, ZeroEffect) {
    const GeneFit f = two_group_fit({1.0, 2.0, 3.0, 1.0, 2.0, 3.0});
    const auto r = moderated_t(f, 1, 0.7, 9.0);
    ASSERT_TRUE(r.has_value());
    EXPECT_NEAR(r->statistic, 0.0, 1e-14);
    EXPECT_NEAR(r->p_value, 1.0, 1e-12);
}

TEST(ModeratedT, NoModerationIsOrdinaryT) {
    const GeneFit f = two_group_fit({0.1, 0.5, -0.2, 1.9, 2.4, 1.2});
    const auto r = moderated_t(f, 1, *f.s2, f.df_residual);
    ASSERT_TRUE(r.has_value());
    // pooled two-sample t by hand
    const double m1 = 0.4 / 3.0, m2 = 5.5 / 3.0;
    double ss = 0.0;
    for (double v : {0.1, 0.5, -0.2}) ss += (v - m1) * (v - m1);
    for (double v : {1.9, 2.4, 1.2}) ss += (v - m2) * (v - m2);
    const double t = (m2 - m1) / std::sqrt(ss / 4.0 * (2.0 / 3.0));
    EXPECT_NEAR(r->statistic, t, 1e-12);
    EXPECT_NEAR(r->p_value, t_tail2(t, 4.0), 1e-14);

    const Hyperprior hp = flat_prior(1, 0.0, 0.3);
    const auto all = moderated_t_all(std::vector<GeneFit>{f}, hp, 1);
    EXPECT_NEAR(all.t[0], t, 1e-12);
    EXPECT_EQ(all.df_total[0], 4.0);
}

TEST(ModeratedT, AbsentWhenUndefined) {
    GeneFit f = two_group_fit({0.1, 0.5, -0.2, 1.9, 2.4, 1.2});
    EXPECT_FALSE(moderated_t(f, 1, 0.0, 4.0).has_value());
    EXPECT_THROW(moderated_t(f, 2, 1.0, 4.0), DomainError);
    EXPECT_THROW(moderated_t(f, 1, 1.0, 0.0), DomainError);
    f.usable = false;
    EXPECT_FALSE(moderated_t(f, 1, 1.0, 4.0).has_value());
}

TEST(ModeratedF, SingleCoefficientIsTSquared) {
    const GeneFit f = two_group_fit({0.3, -1.0, 0.8, 2.5, 1.1, 3.0});
    const std::vector<Eigen::Index> one{1};
    for (double d0g : {0.0, 3.0, 40.0}) {
        const double s2p = 0.6;
        const auto F = moderated_F(f, one, s2p, d0g);
        const auto t = moderated_t(f, 1, s2p, f.df_residual + d0g);
        ASSERT_TRUE(F && t);
        EXPECT_NEAR(F->statistic, t->statistic * t->statistic, 1e-12);
        EXPECT_NEAR(F->p_value, t->p_value, 1e-12);
    }
}

TEST(ModeratedF, ZeroCoefficientsAndErrors) {
    const GeneFit f = two_group_fit({0.0, 0.0, 0.0, 0.0, 0.0, 0.0});
    const std::vector<Eigen::Index> both{0, 1};
    const auto F = moderated_F(f, both, 1.0, 4.0);
    ASSERT_TRUE(F.has_value());
    EXPECT_EQ(F->statistic, 0.0);
    EXPECT_NEAR(F->p_value, 1.0, 1e-15);
    EXPECT_THROW(moderated_F(f, std::vector<Eigen::Index>{}, 1.0, 4.0), DomainError);
    GeneFit bad = f;
    bad.cov_unscaled.setZero();
    EXPECT_THROW(moderated_F(bad, both, 1.0, 4.0), NumericalError);
}

TEST(BhAdjust, HandExamples) {
    const auto a = bh_adjust(std::vector<double>{0.01, 0.02, 0.03});
    for (double v : a) EXPECT_NEAR(v, 0.03, 1e-15);
    for (double v : bh_adjust(std::vector<double>(7, 1.0))) EXPECT_EQ(v, 1.0);
    EXPECT_EQ(bh_adjust(std::vector<double>{0.004})[0], 0.004);
    EXPECT_TRUE(bh_adjust(std::vector<double>{}).empty());
    EXPECT_THROW(bh_adjust(std::vector<double>{0.5, 1.5}), DomainError);
}

TEST(BhAdjust, NaNIsIgnored) {
    const auto a = bh_adjust(std::vector<double>{0.01, kNaN, 0.04});
    EXPECT_NEAR(a[0], 0.02, 1e-15);
    EXPECT_TRUE(std::isnan(a[1]));
    EXPECT_NEAR(a[2], 0.04, 1e-15);
}

TEST(BhAdjust, BoundsMonotonicityAndPermutation) {
    std::mt19937_64 gen(6);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> p(300);
    for (auto& v : p) v = std::pow(u(gen), 3.0);
    const auto adj = bh_adjust(p);
    std::vector<std::size_t> order(p.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return p[a] < p[b]; });
    for (std::size_t k = 0; k < p.size(); ++k) {
        EXPECT_GE(adj[k], p[k]);
        EXPECT_LE(adj[k], 1.0);
        if (k > 0) {
            EXPECT_GE(adj[order[k]], adj[order[k - 1]]);
        }
    }
    std::vector<std::size_t> perm(p.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), gen);
    std::vector<double> q(p.size());
    for (std::size_t k = 0; k < p.size(); ++k) q[k] = p[perm[k]];
    const auto adj_q = bh_adjust(q);
    for (std::size_t k = 0; k < p.size(); ++k) EXPECT_EQ(adj_q[k], adj[perm[k]]);
}

TEST(TopTable, TieBreakByGeneId) {
    const std::vector<GeneFit> fits{two_group_fit({0, 1, 0, 2, 3, 2}), two_group_fit({0, 1, 0, 2, 3, 2}),
                                    two_group_fit({0, 0.1, 0.2, 0.1, 0.3, 0.0})};
    const std::vector<std::string> ids{"zeta", "alpha", "mid"};
    const auto rows = top_table(ids, fits, flat_prior(3, 4.0, 0.3), 1);
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0].gene_id, "alpha");
    EXPECT_EQ(rows[1].gene_id, "zeta");
    EXPECT_EQ(rows[2].gene_id, "mid");
    for (const auto& r : rows) EXPECT_GE(r.fdr, r.p_value);
}

TEST(TopTable, CutoffAndAbsentRows) {
    std::vector<GeneFit> fits{two_group_fit({0, 0.1, 0.2, 0.1, 0.3, 0.0}), two_group_fit({0, 1, 0, 2, 3, 2})};
    fits.push_back(fit_gene(std::vector<double>{1, 2, 3, NAN, NAN, NAN}, two_group_design(6)));
    const std::vector<std::string> ids{"a", "b", "c"};
    const Hyperprior hp = flat_prior(3, 4.0, 0.3);
    const auto all = top_table(ids, fits, hp, 1);
    ASSERT_EQ(all.size(), 3u);
    EXPECT_EQ(all.back().gene_id, "c");
    EXPECT_FALSE(all.back().has_statistic());
    EXPECT_TRUE(std::isnan(all.back().logFC));
    EXPECT_TRUE(top_table(ids, fits, hp, 1, TopTableOptions{true, 1e-12}).empty());
    EXPECT_THROW(top_table(ids, fits, hp, 5), DataError);
}

TEST(TopTable, StandardPriorMatchesRobustPathWithoutOutliers) {
    SimConfig cfg;
    cfg.n_genes = 3000;
    cfg.seed = 41;
    const SimulatedDataset ds = simulate_dataset(cfg);
    const auto fits = fit_all(ds.data, ds.design);
    const PriorInputs in = prior_inputs(fits);
    Hyperprior robust = fit_fdist_robustly(in.s2, in.df);
    // force the all-pi-equal-one case and compare with the plain pipeline
    robust.pi.assign(robust.size(), 1.0);
    robust.d0g = assign_d0g(robust.pi, robust.d0, robust.d_outlier);
    const Hyperprior plain = standard_hyperprior(FDistFit{robust.d0, robust.s02_scale, {}}, robust.size());
    const auto a = top_table(ds.data.gene_ids, fits, robust, 1);
    const auto b = top_table(ds.data.gene_ids, fits, plain, 1);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
        EXPECT_EQ(a[k].gene_id, b[k].gene_id);
        EXPECT_EQ(a[k].t, b[k].t);
        EXPECT_EQ(a[k].p_value, b[k].p_value);
        EXPECT_EQ(a[k].s2_post, b[k].s2_post);
    }
}

TEST(ModeratedT, GlobalNullPValuesAreUniform) {
    SimConfig cfg;
    cfg.seed = 17;
    const SimulatedDataset ds = simulate_dataset(cfg);
    const auto fits = fit_all(ds.data, ds.design);
    const PriorInputs in = prior_inputs(fits);
    const auto standard = moderated_t_all(fits, standard_hyperprior(fit_fdist(in.s2, in.df), fits.size()), 1);
    const auto robust = moderated_t_all(fits, fit_fdist_robustly(in.s2, in.df), 1);
    const double crit = 1.358 / std::sqrt(static_cast<double>(fits.size()));
    EXPECT_LT(ks_uniform_statistic(standard.p_value), crit);
    EXPECT_LT(ks_uniform_statistic(robust.p_value), crit);

    std::vector<double> pf;
    const std::vector<Eigen::Index> one{1};
    const auto s2p = squeeze_var(in.s2, in.df, standard_hyperprior(fit_fdist(in.s2, in.df), fits.size()));
    const double d0 = fit_fdist(in.s2, in.df).d0;
    for (std::size_t g = 0; g < fits.size(); ++g) pf.push_back(moderated_F(fits[g], one, s2p[g], d0)->p_value);
    EXPECT_LT(ks_uniform_statistic(pf), crit);
}
