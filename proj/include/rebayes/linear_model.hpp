#pragma once

// Genewise weighted least squares fits and the per-gene summaries consumed
// by the empirical Bayes steps.

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "parallel.hpp"

namespace rebayes {

/// n x p design matrix with named columns.
struct DesignMatrix {
    Eigen::MatrixXd X;
    std::vector<std::string> column_names;

    Eigen::Index n_samples() const { return X.rows(); }
    Eigen::Index n_coefficients() const { return X.cols(); }

    void validate() const {
        if (X.rows() < 1 || X.cols() < 1) throw DataError("design matrix is empty");
        if (static_cast<Eigen::Index>(column_names.size()) != X.cols())
            throw DataError("design matrix has " + std::to_string(X.cols()) + " columns but " +
                            std::to_string(column_names.size()) + " column names");
        if (!X.allFinite()) throw DataError("design matrix contains non-finite values");
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
        if (qr.rank() < X.cols()) throw DataError("design matrix is not of full column rank");
    }

    /// Coefficient index for a column name or a 1-based index given as text.
    Eigen::Index coefficient_index(const std::string& key) const {
        for (std::size_t j = 0; j < column_names.size(); ++j)
            if (column_names[j] == key) return static_cast<Eigen::Index>(j);
        try {
            std::size_t pos = 0;
            const long idx = std::stol(key, &pos);
            if (pos == key.size() && idx >= 1 && idx <= X.cols()) return idx - 1;
        } catch (const std::exception&) {
        }
        throw DataError("unknown coefficient '" + key + "'");
    }
};

/// G x n log-expression matrix. Missing values are NaN. Weights, when
/// present, have the same shape; entries with weight 0 are dropped.
struct ExpressionSet {
    Eigen::MatrixXd values;
    std::optional<Eigen::MatrixXd> weights;
    std::vector<std::string> gene_ids;
    std::vector<std::string> sample_ids;

    Eigen::Index n_genes() const { return values.rows(); }
    Eigen::Index n_samples() const { return values.cols(); }

    void validate() const {
        if (values.rows() < 2 || values.cols() < 2)
            throw DataError("expression matrix needs at least 2 genes and 2 samples");
        if (static_cast<Eigen::Index>(gene_ids.size()) != values.rows())
            throw DataError("gene id count does not match expression rows");
        if (static_cast<Eigen::Index>(sample_ids.size()) != values.cols())
            throw DataError("sample id count does not match expression columns");
        std::unordered_set<std::string> seen;
        for (const auto& id : gene_ids)
            if (!seen.insert(id).second) throw DataError("duplicate gene id '" + id + "'");
        seen.clear();
        for (const auto& id : sample_ids)
            if (!seen.insert(id).second) throw DataError("duplicate sample id '" + id + "'");
        if (weights) {
            if (weights->rows() != values.rows() || weights->cols() != values.cols())
                throw DataError("weights matrix shape does not match expression matrix");
            for (Eigen::Index g = 0; g < weights->rows(); ++g)
                for (Eigen::Index i = 0; i < weights->cols(); ++i) {
                    const double w = (*weights)(g, i);
                    if (!(w >= 0.0) || !std::isfinite(w))
                        throw DataError("weights must be finite and nonnegative (gene " + gene_ids[g] +
                                        ", sample " + sample_ids[i] + ")");
                }
        }
    }
};

/// Least squares summaries for one gene.
struct GeneFit {
    Eigen::VectorXd coefficients;
    /// sqrt of the diagonal of (X' W X)^{-1}.
    Eigen::VectorXd unscaled_sd;
    /// (X' W X)^{-1}.
    Eigen::MatrixXd cov_unscaled;
    /// Residual variance; absent when there are no residual degrees of freedom.
    std::optional<double> s2;
    double df_residual = 0.0;
    /// Mean of the non-missing log-expression values.
    double avg_expr = std::numeric_limits<double>::quiet_NaN();
    /// False when the observed rows do not identify every coefficient.
    bool usable = false;
};

namespace detail {

// Pre-factored weighted design: solve = (Xw' Xw)^{-1} Xw', so that
// coefficients = solve * yw. Reused across genes sharing the same design.
struct DesignFactor {
    Eigen::MatrixXd Xw;
    Eigen::MatrixXd solve;
    Eigen::MatrixXd cov;
    Eigen::VectorXd unscaled_sd;
    bool full_rank = false;

    explicit DesignFactor(Eigen::MatrixXd xw) : Xw(std::move(xw)) {
        const Eigen::Index p = Xw.cols();
        if (Xw.rows() < p) return;
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xw);
        if (qr.rank() < p) return;
        full_rank = true;
        const Eigen::MatrixXd R = qr.matrixR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
        const Eigen::MatrixXd Rinv =
            R.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
        const auto& perm = qr.colsPermutation();
        const Eigen::MatrixXd PRinv = perm * Rinv;  // X = Q R P' => (X'X)^{-1} = P R^{-1} R^{-T} P'
        cov = PRinv * PRinv.transpose();
        const Eigen::MatrixXd Qthin = qr.householderQ() * Eigen::MatrixXd::Identity(Xw.rows(), p);
        solve = PRinv * Qthin.transpose();
        unscaled_sd = cov.diagonal().cwiseSqrt();
    }
};

inline GeneFit fit_with_factor(const DesignFactor& factor, const Eigen::VectorXd& yw, double avg_expr) {
    GeneFit fit;
    fit.avg_expr = avg_expr;
    const Eigen::Index p = factor.Xw.cols();
    if (!factor.full_rank) {
        fit.coefficients = Eigen::VectorXd::Constant(p, std::numeric_limits<double>::quiet_NaN());
        fit.unscaled_sd = fit.coefficients;
        fit.df_residual = 0.0;
        return fit;
    }
    fit.usable = true;
    fit.coefficients = factor.solve * yw;
    fit.unscaled_sd = factor.unscaled_sd;
    fit.cov_unscaled = factor.cov;
    const Eigen::Index df = factor.Xw.rows() - p;
    fit.df_residual = static_cast<double>(df);
    if (df > 0) {
        const Eigen::VectorXd resid = yw - factor.Xw * fit.coefficients;
        fit.s2 = resid.squaredNorm() / static_cast<double>(df);
    }
    return fit;
}

inline double mean_observed(std::span<const double> y) {
    double sum = 0.0;
    std::size_t count = 0;
    for (double v : y)
        if (std::isfinite(v)) {
            sum += v;
            ++count;
        }
    return count ? sum / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
}

// True when every observation is present with unit weight.
inline bool is_complete(std::span<const double> y, std::span<const double> w) {
    for (std::size_t i = 0; i < y.size(); ++i)
        if (!std::isfinite(y[i]) || (!w.empty() && w[i] != 1.0)) return false;
    return true;
}

inline GeneFit fit_gene_general(std::span<const double> y, const Eigen::MatrixXd& X,
                                std::span<const double> w) {
    std::vector<Eigen::Index> rows;
    rows.reserve(y.size());
    for (std::size_t i = 0; i < y.size(); ++i)
        if (std::isfinite(y[i]) && (w.empty() || w[i] > 0.0)) rows.push_back(static_cast<Eigen::Index>(i));
    const auto n_used = static_cast<Eigen::Index>(rows.size());
    Eigen::MatrixXd Xw(n_used, X.cols());
    Eigen::VectorXd yw(n_used);
    for (Eigen::Index r = 0; r < n_used; ++r) {
        const auto i = static_cast<std::size_t>(rows[r]);
        const double sw = w.empty() ? 1.0 : std::sqrt(w[i]);
        Xw.row(r) = sw * X.row(rows[r]);
        yw(r) = sw * y[i];
    }
    return fit_with_factor(DesignFactor(std::move(Xw)), yw, mean_observed(y));
}

inline Eigen::VectorXd to_vector(std::span<const double> y) {
    return Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
}

}  // namespace detail

/// Weighted least squares fit of one gene. Missing (NaN) observations and
/// zero weights are dropped; a gene whose remaining rows do not have full
/// column rank is returned with usable = false. An empty weight span means
/// unit weights.
inline GeneFit fit_gene(std::span<const double> y, const DesignMatrix& design,
                        std::span<const double> weights = {}) {
    if (static_cast<Eigen::Index>(y.size()) != design.n_samples())
        throw DataError("fit_gene: observation count does not match design rows");
    if (!weights.empty() && weights.size() != y.size())
        throw DataError("fit_gene: weight count does not match observations");
    if (detail::is_complete(y, weights)) {
        const detail::DesignFactor factor(design.X);
        return detail::fit_with_factor(factor, detail::to_vector(y), detail::mean_observed(y));
    }
    return detail::fit_gene_general(y, design.X, weights);
}

/// Fits every gene. Genes with complete, unit-weight data share a single
/// factorization of the design; results are identical to per-gene fit_gene
/// calls and do not depend on the thread count.
inline std::vector<GeneFit> fit_all(const ExpressionSet& data, const DesignMatrix& design,
                                    unsigned threads = 1) {
    if (data.n_samples() != design.n_samples())
        throw DataError("expression matrix has " + std::to_string(data.n_samples()) +
                        " samples but design has " + std::to_string(design.n_samples()) + " rows");
    const Eigen::Index G = data.n_genes();
    const Eigen::Index n = data.n_samples();
    const detail::DesignFactor shared(design.X);
    std::vector<GeneFit> fits(static_cast<std::size_t>(G));
    // Row-major copies so each gene is a contiguous span.
    using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const RowMatrix values = data.values;
    const RowMatrix weights = data.weights ? RowMatrix(*data.weights) : RowMatrix();
    parallel_for(
        static_cast<std::size_t>(G),
        [&](std::size_t g) {
            const auto row = static_cast<Eigen::Index>(g);
            const std::span<const double> y(values.data() + row * n, static_cast<std::size_t>(n));
            const std::span<const double> w =
                data.weights ? std::span<const double>(weights.data() + row * n, static_cast<std::size_t>(n))
                             : std::span<const double>();
            if (detail::is_complete(y, w))
                fits[g] = detail::fit_with_factor(shared, detail::to_vector(y), detail::mean_observed(y));
            else
                fits[g] = detail::fit_gene_general(y, design.X, w);
        },
        threads);
    return fits;
}

}  // namespace rebayes
