#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rebayes/io.hpp"
#include "rebayes/rebayes.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace rebayes;

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kData = 3, kNumerical = 4 };

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// JSON has no infinity; write it as the string "Inf".
json number(double v) {
    if (std::isnan(v)) return nullptr;
    if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
    return v;
}

double parse_df(const std::string& s) {
    if (s == "Inf" || s == "inf") return kInf;
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        throw UsageError("invalid degrees of freedom '" + s + "'");
    }
    if (pos != s.size()) throw UsageError("invalid degrees of freedom '" + s + "'");
    return v;
}

struct FitArgs {
    std::string expr, design, weights, out, coef;
    bool robust = false;
    bool trend = false;
    std::vector<double> tail_p{0.05, 0.10};
    std::optional<double> fdr;
    double span = 0.4;
};

json trend_grid(const std::vector<double>& covariate, const std::vector<double>& s02, std::size_t points = 101) {
    std::vector<std::size_t> order(covariate.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return covariate[a] < covariate[b]; });
    json grid = json::array();
    if (order.empty()) return grid;
    const std::size_t m = std::min(points, order.size());
    for (std::size_t k = 0; k < m; ++k) {
        const std::size_t pos = m == 1 ? 0 : k * (order.size() - 1) / (m - 1);
        const std::size_t g = order[pos];
        grid.push_back({{"AveExpr", number(covariate[g])}, {"s02", number(s02[g])}});
    }
    return grid;
}

int cmd_fit(const FitArgs& a) {
    ExpressionSet data = io::read_expression(a.expr);
    DesignMatrix design = io::read_design(a.design);
    if (!a.weights.empty()) {
        io::Table w = io::read_table(a.weights);
        if (w.values.rows() != data.values.rows() || w.values.cols() != data.values.cols())
            throw DataError(a.weights + ": weights have " + std::to_string(w.values.rows()) + "x" +
                            std::to_string(w.values.cols()) + " entries, expression has " +
                            std::to_string(data.values.rows()) + "x" + std::to_string(data.values.cols()));
        if (w.row_ids != data.gene_ids) throw DataError(a.weights + ": gene ids do not match the expression file");
        data.weights = std::move(w.values);
    }
    data.validate();
    design.validate();
    if (design.n_samples() != data.n_samples())
        throw DataError(a.design + ": design has " + std::to_string(design.n_samples()) + " rows but " + a.expr +
                        " has " + std::to_string(data.n_samples()) + " samples");
    const Eigen::Index coef =
        a.coef.empty() ? design.n_coefficients() - 1 : design.coefficient_index(a.coef);

    const std::vector<GeneFit> fits = fit_all(data, design, default_thread_count());
    const PriorInputs in = prior_inputs(fits);
    std::optional<std::span<const double>> covariate;
    if (a.trend) covariate = std::span<const double>(in.avg_expr);

    Hyperprior hp;
    if (a.robust) {
        RobustOptions opt;
        opt.winsor = {a.tail_p[0], a.tail_p[1]};
        opt.trend.span = a.span;
        hp = fit_fdist_robustly(in.s2, in.df, opt, covariate);
    } else {
        hp = standard_hyperprior(fit_fdist(in.s2, in.df, covariate, TrendOptions{a.span}), fits.size());
    }

    TopTableOptions topt;
    topt.fdr_cutoff = a.fdr;
    const auto rows = top_table(data.gene_ids, fits, hp, coef, topt);

    io::TsvWriter tsv({"gene_id", "logFC", "AveExpr", "t", "P.Value", "adj.P.Val", "df.total", "df.prior", "s2.post"});
    for (const auto& r : rows) tsv.row(r.gene_id, r.logFC, r.avg_expr, r.t, r.p_value, r.fdr, r.df_total, r.d0g, r.s2_post);

    double df_min = kInf, df_max = 0.0;
    for (const auto& f : fits) {
        if (!f.usable) continue;
        df_min = std::min(df_min, f.df_residual);
        df_max = std::max(df_max, f.df_residual);
    }
    json summary;
    summary["n_genes"] = fits.size();
    summary["n_samples"] = data.n_samples();
    summary["coefficient"] = design.column_names[static_cast<std::size_t>(coef)];
    summary["robust"] = a.robust;
    summary["trend"] = a.trend;
    if (a.robust) summary["winsor_tail_p"] = a.tail_p;
    summary["df_residual"] = {{"min", number(df_min)}, {"max", number(df_max)}};
    summary["d0"] = number(hp.d0);
    if (hp.trend_enabled)
        summary["s02_trend"] = trend_grid(in.avg_expr, hp.s02);
    else
        summary["s02"] = number(hp.s02_scale);
    summary["d_outlier"] = number(hp.d_outlier);
    summary["n_outlier_genes"] = hp.n_outliers();
    summary["n_rows"] = rows.size();

    fs::create_directories(a.out);
    io::write_file_atomic(fs::path(a.out) / "toptable.tsv", tsv.str());
    io::write_file_atomic(fs::path(a.out) / "summary.json", summary.dump(2) + "\n");
    return kOk;
}

struct SimArgs {
    std::string d0 = "4";
    std::string d0_outlier = "0.5";
    double s02 = 0.04;
    std::size_t genes = 10000;
    std::size_t samples = 6;
    std::size_t outliers = 0;
    std::size_t de = 0;
    double lfc_sd = 2.0;
    std::size_t reps = 10;
    std::uint64_t seed = 1;
    unsigned threads = 0;
    bool null = false;
    std::string out;
};

json mean_se_json(const MeanSE& m) { return {{"mean", number(m.mean)}, {"se", number(m.se)}}; }

json summary_json(const Summary& s) {
    return {{"min", number(s.min)},   {"q1", number(s.q1)},   {"median", number(s.median)},
            {"q3", number(s.q3)},     {"max", number(s.max)}, {"mean", number(s.mean)}};
}

int cmd_simulate(const SimArgs& a) {
    SimConfig cfg;
    cfg.d0_true = parse_df(a.d0);
    cfg.d0_outlier_true = parse_df(a.d0_outlier);
    cfg.s02_true = a.s02;
    cfg.n_genes = a.genes;
    cfg.n_samples = a.samples;
    cfg.n_outliers = a.outliers;
    cfg.n_de = a.de;
    cfg.lfc_sd = a.lfc_sd;
    cfg.seed = a.seed;
    if (a.null && (a.outliers != 0 || a.de != 0)) throw UsageError("--null cannot be combined with --outliers or --de");
    if (a.reps == 0) throw UsageError("--reps must be at least 1");
    try {
        cfg.validate();
    } catch (const DomainError& e) {
        throw UsageError(e.what());
    }

    EvalOptions opt;
    opt.threads = a.threads;
    const auto reps = run_replicates(cfg, a.reps, opt);

    io::TsvWriter per_rep({"replicate", "method", "d0", "s02", "n_outlier_genes", "ks_stat", "ks_p"});
    for (const auto& r : reps) {
        per_rep.row(static_cast<std::size_t>(r.replicate), "standard", r.standard.d0, r.standard.s02,
                    r.standard.n_outliers_flagged, r.standard.ks_statistic, r.standard.ks_p);
        per_rep.row(static_cast<std::size_t>(r.replicate), "robust", r.robust.d0, r.robust.s02,
                    r.robust.n_outliers_flagged, r.robust.ks_statistic, r.robust.ks_p);
    }

    const Type1Table t1 = summarize_type1(reps, opt);
    io::TsvWriter type1({"cutoff", "standard", "standard.se", "robust", "robust.se"});
    for (std::size_t c = 0; c < t1.cutoffs.size(); ++c)
        type1.row(t1.cutoffs[c], t1.standard[c].mean, t1.standard[c].se, t1.robust[c].mean, t1.robust[c].se);

    const RecoverySummary rec = summarize_recovery(reps);
    io::TsvWriter recovery({"parameter", "method", "min", "q1", "median", "q3", "max", "mean"});
    const auto rec_row = [&](const char* par, const char* method, const Summary& s) {
        recovery.row(par, method, s.min, s.q1, s.median, s.q3, s.max, s.mean);
    };
    rec_row("d0", "standard", rec.d0_standard);
    rec_row("d0", "robust", rec.d0_robust);
    rec_row("s02", "standard", rec.s02_standard);
    rec_row("s02", "robust", rec.s02_robust);

    json summary;
    summary["config"] = {{"d0", number(cfg.d0_true)},
                         {"s02", cfg.s02_true},
                         {"genes", cfg.n_genes},
                         {"samples", cfg.n_samples},
                         {"outliers", cfg.n_outliers},
                         {"d0_outlier", number(cfg.d0_outlier_true)},
                         {"de", cfg.n_de},
                         {"lfc_sd", cfg.lfc_sd},
                         {"reps", a.reps},
                         {"seed", cfg.seed}};
    json jt = json::array();
    for (std::size_t c = 0; c < t1.cutoffs.size(); ++c)
        jt.push_back({{"cutoff", t1.cutoffs[c]},
                      {"standard", mean_se_json(t1.standard[c])},
                      {"robust", mean_se_json(t1.robust[c])}});
    summary["rejection_rate"] = jt;
    summary["recovery"] = {{"d0", {{"standard", summary_json(rec.d0_standard)}, {"robust", summary_json(rec.d0_robust)}}},
                           {"s02", {{"standard", summary_json(rec.s02_standard)}, {"robust", summary_json(rec.s02_robust)}}}};

    std::optional<io::TsvWriter> fd, power;
    if (cfg.n_de > 0) {
        const PowerFdrCurves pc = summarize_power_fdr(reps, opt);
        fd.emplace(std::vector<std::string>{"top", "standard", "standard.se", "robust", "robust.se"});
        json jfd = json::array(), jpow = json::array();
        for (std::size_t k = 0; k < pc.top_counts.size(); ++k) {
            fd->row(pc.top_counts[k], pc.fd_standard[k].mean, pc.fd_standard[k].se, pc.fd_robust[k].mean,
                    pc.fd_robust[k].se);
            jfd.push_back({{"top", pc.top_counts[k]},
                           {"standard", mean_se_json(pc.fd_standard[k])},
                           {"robust", mean_se_json(pc.fd_robust[k])}});
        }
        power.emplace(std::vector<std::string>{"fdr", "standard", "standard.se", "robust", "robust.se"});
        for (std::size_t k = 0; k < pc.fdr_cutoffs.size(); ++k) {
            power->row(pc.fdr_cutoffs[k], pc.power_standard[k].mean, pc.power_standard[k].se, pc.power_robust[k].mean,
                       pc.power_robust[k].se);
            jpow.push_back({{"fdr", pc.fdr_cutoffs[k]},
                            {"standard", mean_se_json(pc.power_standard[k])},
                            {"robust", mean_se_json(pc.power_robust[k])}});
        }
        summary["false_discoveries"] = jfd;
        summary["power"] = jpow;
    }

    fs::create_directories(a.out);
    const fs::path out(a.out);
    io::write_file_atomic(out / "replicates.tsv", per_rep.str());
    io::write_file_atomic(out / "type1.tsv", type1.str());
    io::write_file_atomic(out / "recovery.tsv", recovery.str());
    if (fd) io::write_file_atomic(out / "false_discoveries.tsv", fd->str());
    if (power) io::write_file_atomic(out / "power.tsv", power->str());
    io::write_file_atomic(out / "summary.json", summary.dump(2) + "\n");
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Empirical Bayes moderated statistics with robust hyperparameter estimation"};
    app.require_subcommand(1);

    FitArgs fa;
    auto* fit = app.add_subcommand("fit", "Fit genewise linear models and rank genes by moderated t");
    fit->add_option("--expr", fa.expr, "Expression TSV (genes x samples)")->required()->check(CLI::ExistingFile);
    fit->add_option("--design", fa.design, "Design TSV (samples x coefficients)")->required()->check(CLI::ExistingFile);
    fit->add_option("--weights", fa.weights, "Observation weights TSV, same shape as --expr")->check(CLI::ExistingFile);
    fit->add_flag("--robust", fa.robust, "Robust hyperparameter estimation");
    fit->add_flag("--trend", fa.trend, "Prior location trended on average log-expression");
    fit->add_option("--winsor-tail-p", fa.tail_p, "Lower,upper Winsorizing tail proportions")
        ->delimiter(',')
        ->expected(2);
    fit->add_option("--span", fa.span, "Lowess span for the trend")->check(CLI::Range(0.0, 1.0));
    fit->add_option("--coef", fa.coef, "Coefficient name or 1-based index (default: last column)");
    fit->add_option("--fdr", fa.fdr, "Report only genes with adjusted p-value at most this")->check(CLI::Range(0.0, 1.0));
    fit->add_option("--out", fa.out, "Output directory")->required();

    SimArgs sa;
    auto* sim = app.add_subcommand("simulate", "Simulate datasets and compare standard and robust estimation");
    sim->add_option("--d0", sa.d0, "True prior df (number or Inf)");
    sim->add_option("--s02", sa.s02, "True prior location");
    sim->add_option("--genes", sa.genes, "Genes per dataset");
    sim->add_option("--samples", sa.samples, "Samples per dataset, split into two groups");
    sim->add_option("--outliers", sa.outliers, "Hypervariable genes per dataset");
    sim->add_option("--d0-outlier", sa.d0_outlier, "Prior df of hypervariable genes");
    sim->add_option("--de", sa.de, "Differentially expressed genes per dataset");
    sim->add_option("--lfc-sd", sa.lfc_sd, "Standard deviation of log-fold-changes");
    sim->add_option("--reps", sa.reps, "Replicate datasets");
    sim->add_option("--seed", sa.seed, "Base seed");
    sim->add_option("--threads", sa.threads, "Worker threads (0: hardware concurrency)");
    sim->add_flag("--null", sa.null, "Global null: no outliers and no DE genes");
    sim->add_option("--out", sa.out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*fit) {
            if (!(fa.tail_p[0] > 0.0 && fa.tail_p[0] < 0.5 && fa.tail_p[1] > 0.0 && fa.tail_p[1] < 0.5))
                throw UsageError("--winsor-tail-p values must each lie in (0, 0.5)");
            return cmd_fit(fa);
        }
        return cmd_simulate(sa);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kData;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return kNumerical;
    } catch (const DomainError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kData;
    }
}
