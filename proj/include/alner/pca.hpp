#ifndef ALNER_PCA_HPP
#define ALNER_PCA_HPP

#include "embeddings.hpp"
#include "error.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <variant>
#include <vector>

/**
 * @file pca.hpp
 *
 * @brief Principal component reduction of embedding matrices.
 */

namespace alner {

/// Either an exact number of components or the smallest k reaching a cumulative explained-variance fraction.
struct PcaTarget {
    std::variant<std::size_t, double> value = 0.825;

    static PcaTarget components(std::size_t k) { return {k}; }
    static PcaTarget variance(double fraction) { return {fraction}; }
};

struct PcaModel {
    Eigen::VectorXd mean;
    Eigen::MatrixXd components; ///< k x N, orthonormal rows.
    std::vector<double> explained_variance;       ///< Eigenvalues of the kept components.
    std::vector<double> explained_variance_ratio; ///< Per kept component, non-increasing.
    double total_variance = 0;

    std::size_t input_dim() const { return static_cast<std::size_t>(mean.size()); }
    std::size_t output_dim() const { return static_cast<std::size_t>(components.rows()); }

    double cumulative_ratio() const {
        double sum = 0;
        for (double r : explained_variance_ratio) {
            sum += r;
        }
        return sum;
    }
};

/**
 * Fit on the mean-centred sample covariance (divisor n - 1, no scaling).
 * Component signs are fixed so the largest-magnitude loading of each component is positive.
 */
inline PcaModel fit_pca(const EmbeddingMatrix& matrix, PcaTarget target) {
    const std::size_t n = matrix.rows();
    const std::size_t dim = matrix.dim();
    if (const auto* k = std::get_if<std::size_t>(&target.value)) {
        if (*k < 1 || *k > dim) {
            throw ArgumentError("PCA component count must be in [1, dim]");
        }
        if (n <= *k) {
            throw ArgumentError("PCA needs more rows than components");
        }
    } else {
        const double f = std::get<double>(target.value);
        if (!(f > 0 && f <= 1)) {
            throw ArgumentError("PCA variance fraction must be in (0, 1]");
        }
        if (n < 2) {
            throw ArgumentError("PCA needs at least two rows");
        }
    }

    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> raw(matrix.data().data(),
                                                                                              static_cast<Eigen::Index>(n),
                                                                                              static_cast<Eigen::Index>(dim));
    PcaModel model;
    model.mean = raw.cast<double>().colwise().mean().transpose();

    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    constexpr Eigen::Index block = 4096;
    for (Eigen::Index start = 0; start < static_cast<Eigen::Index>(n); start += block) {
        const Eigen::Index rows = std::min<Eigen::Index>(block, static_cast<Eigen::Index>(n) - start);
        Eigen::MatrixXd centred = raw.middleRows(start, rows).cast<double>();
        centred.rowwise() -= model.mean.transpose();
        cov.selfadjointView<Eigen::Lower>().rankUpdate(centred.transpose());
    }
    cov = cov.selfadjointView<Eigen::Lower>();
    cov /= static_cast<double>(n - 1);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) {
        throw NumericError("covariance eigendecomposition failed");
    }
    // Eigen returns ascending eigenvalues.
    const Eigen::VectorXd values = solver.eigenvalues().reverse().cwiseMax(0.0);
    const Eigen::MatrixXd vectors = solver.eigenvectors().rowwise().reverse();
    const double total = values.sum();
    model.total_variance = total;

    std::size_t k = 0;
    if (const auto* fixed = std::get_if<std::size_t>(&target.value)) {
        k = *fixed;
    } else {
        if (!(total > 0)) {
            throw ArgumentError("cannot reach a variance target on degenerate data (all rows identical)");
        }
        const double fraction = std::get<double>(target.value);
        double cumulative = 0;
        for (Eigen::Index i = 0; i < values.size(); ++i) {
            cumulative += values[i] / total;
            k = static_cast<std::size_t>(i) + 1;
            // Tolerance absorbs rounding when the target is reached exactly.
            if (cumulative >= fraction - 1e-12) {
                break;
            }
        }
    }

    model.components.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(dim));
    for (std::size_t c = 0; c < k; ++c) {
        Eigen::VectorXd v = vectors.col(static_cast<Eigen::Index>(c));
        Eigen::Index argmax = 0;
        v.cwiseAbs().maxCoeff(&argmax);
        if (v[argmax] < 0) {
            v = -v;
        }
        model.components.row(static_cast<Eigen::Index>(c)) = v.transpose();
        model.explained_variance.push_back(values[static_cast<Eigen::Index>(c)]);
        model.explained_variance_ratio.push_back(total > 0 ? values[static_cast<Eigen::Index>(c)] / total : 0.0);
    }
    return model;
}

/// Project rows onto the kept components. The result keeps the input's corpus hash.
inline EmbeddingMatrix transform(const PcaModel& model, const EmbeddingMatrix& matrix) {
    if (matrix.dim() != model.input_dim()) {
        throw ArgumentError("PCA was fitted on dimension " + std::to_string(model.input_dim()) + " but input has " + std::to_string(matrix.dim()));
    }
    const std::size_t n = matrix.rows();
    const std::size_t k = model.output_dim();
    EmbeddingMatrix out(n, k, matrix.corpus_hash());
    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> raw(matrix.data().data(),
                                                                                              static_cast<Eigen::Index>(n),
                                                                                              static_cast<Eigen::Index>(matrix.dim()));
    Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> dest(out.data().data(),
                                                                                         static_cast<Eigen::Index>(n),
                                                                                         static_cast<Eigen::Index>(k));
    constexpr Eigen::Index block = 4096;
    for (Eigen::Index start = 0; start < static_cast<Eigen::Index>(n); start += block) {
        const Eigen::Index rows = std::min<Eigen::Index>(block, static_cast<Eigen::Index>(n) - start);
        Eigen::MatrixXd centred = raw.middleRows(start, rows).cast<double>();
        centred.rowwise() -= model.mean.transpose();
        dest.middleRows(start, rows) = (centred * model.components.transpose()).cast<float>();
    }
    return out;
}

/// Double-precision projection, used where float rounding would mask exact identities.
inline Eigen::MatrixXd transform_exact(const PcaModel& model, const Eigen::MatrixXd& rows) {
    Eigen::MatrixXd centred = rows;
    centred.rowwise() -= model.mean.transpose();
    return centred * model.components.transpose();
}

}

#endif
