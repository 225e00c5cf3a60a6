#ifndef ALNER_POSITIVE_ID_HPP
#define ALNER_POSITIVE_ID_HPP

#include "corpus.hpp"
#include "embeddings.hpp"
#include "error.hpp"
#include "hdbscan.hpp"
#include "knn.hpp"
#include "umap.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

/**
 * @file positive_id.hpp
 *
 * @brief Prediction of the likely-positive token set P'.
 *
 * Token embeddings are mapped to two dimensions with labelled tokens as supervision, clustered
 * by density, and every token outside the largest cluster is predicted positive (P). The top
 * fraction of GLOSH outliers (T) is added on top: P' = P u T.
 */

namespace alner {

enum class OutlierScope {
    AllTokens,      ///< T drawn from every token.
    LargestCluster, ///< T drawn from the largest cluster only.
};

struct PositiveIdParams {
    UmapParams umap;
    std::optional<std::size_t> min_cluster_size; ///< Unset: max(15, 0.002 n).
    std::optional<std::size_t> min_samples;      ///< Unset: equal to min_cluster_size.
    double outlier_fraction = 0.01;
    OutlierScope outlier_scope = OutlierScope::AllTokens;
    bool noise_is_positive = false; ///< Count HDBSCAN noise as part of P.

    HdbscanParams clustering_for(std::size_t n) const {
        HdbscanParams p;
        p.min_cluster_size = min_cluster_size.value_or(std::max<std::size_t>(15, static_cast<std::size_t>(std::ceil(0.002 * static_cast<double>(n)))));
        p.min_samples = min_samples.value_or(p.min_cluster_size);
        return p;
    }
};

/// Membership flags indexed like the clustered points.
struct PositiveSet {
    std::vector<std::uint8_t> in_p;
    std::vector<std::uint8_t> in_t;
    std::vector<std::uint8_t> in_p_prime;
    int largest_cluster = ClusterAssignment::noise;
    bool largest_tied = false; ///< Several clusters share the maximum size; the lowest label was used.
    bool no_clusters = false;

    std::size_t size_p() const { return static_cast<std::size_t>(std::count(in_p.begin(), in_p.end(), std::uint8_t{1})); }
    std::size_t size_t_set() const { return static_cast<std::size_t>(std::count(in_t.begin(), in_t.end(), std::uint8_t{1})); }
    std::size_t size() const { return static_cast<std::size_t>(std::count(in_p_prime.begin(), in_p_prime.end(), std::uint8_t{1})); }
};

inline std::size_t outlier_count(std::size_t n, double fraction) {
    return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
}

inline PositiveSet build_positive_set(const ClusterAssignment& assignment, std::span<const double> outlier_scores, double outlier_fraction = 0.01,
                                      OutlierScope scope = OutlierScope::AllTokens, bool noise_is_positive = false) {
    const std::size_t n = assignment.labels.size();
    if (outlier_scores.size() != n) {
        throw ArgumentError("outlier scores do not match the cluster assignment");
    }
    if (!(outlier_fraction >= 0 && outlier_fraction <= 1)) {
        throw ArgumentError("outlier fraction must lie in [0, 1]");
    }
    PositiveSet out;
    out.in_p.assign(n, 0);
    out.in_t.assign(n, 0);
    if (assignment.sizes.empty()) {
        out.no_clusters = true;
    } else {
        const auto largest = std::max_element(assignment.sizes.begin(), assignment.sizes.end());
        out.largest_cluster = static_cast<int>(largest - assignment.sizes.begin());
        out.largest_tied = std::count(assignment.sizes.begin(), assignment.sizes.end(), *largest) > 1;
        for (std::size_t i = 0; i < n; ++i) {
            const int label = assignment.labels[i];
            const bool noise = label == ClusterAssignment::noise;
            if ((noise && noise_is_positive) || (!noise && label != out.largest_cluster)) {
                out.in_p[i] = 1;
            }
        }
    }

    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < n; ++i) {
        if (scope == OutlierScope::AllTokens || out.no_clusters || assignment.labels[i] == out.largest_cluster) {
            candidates.push_back(i);
        }
    }
    const std::size_t take = std::min(outlier_count(n, outlier_fraction), candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take), candidates.end(), [&](std::size_t a, std::size_t b) {
        if (outlier_scores[a] != outlier_scores[b]) {
            return outlier_scores[a] > outlier_scores[b];
        }
        return a < b;
    });
    for (std::size_t r = 0; r < take; ++r) {
        out.in_t[candidates[r]] = 1;
    }
    out.in_p_prime.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.in_p_prime[i] = out.in_p[i] | out.in_t[i];
    }
    return out;
}

struct PositiveSetMetrics {
    double precision_neg = 0; ///< Fraction of tokens outside P' that are gold O.
    double recall_pos = 0;
    double precision_pos = 0;
    double f1 = 0;
};

/// Metrics of a predicted positive mask against gold positive flags. Empty denominators give 0.
inline PositiveSetMetrics positive_set_metrics(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> gold_positive) {
    if (predicted.size() != gold_positive.size()) {
        throw ArgumentError("predicted and gold masks differ in length");
    }
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        if (predicted[i]) {
            (gold_positive[i] ? tp : fp) += 1;
        } else {
            (gold_positive[i] ? fn : tn) += 1;
        }
    }
    auto ratio = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
    PositiveSetMetrics m;
    m.precision_neg = ratio(tn, tn + fn);
    m.recall_pos = ratio(tp, tp + fn);
    m.precision_pos = ratio(tp, tp + fp);
    m.f1 = m.recall_pos + m.precision_pos > 0 ? 2 * m.recall_pos * m.precision_pos / (m.recall_pos + m.precision_pos) : 0.0;
    return m;
}

struct PositiveIdResult {
    ReducedEmbedding reduced;
    ClusteringResult clustering;
    PositiveSet positive;
    HdbscanParams clustering_params;
};

/**
 * Runs the pipeline over a fixed token population (global token indices), keeping the
 * neighbour graph of the input embeddings across calls.
 * Safe to share between sessions.
 */
class PositiveIdentifier {
public:
    PositiveIdentifier(const EmbeddingMatrix& embeddings, std::vector<std::size_t> population, std::size_t n_neighbors)
        : population_(std::move(population)), dim_(embeddings.dim()), n_neighbors_(n_neighbors) {
        if (population_.empty()) {
            throw ArgumentError("positive-token identification needs a non-empty token population");
        }
        data_.reserve(population_.size() * dim_);
        for (std::size_t g : population_) {
            if (g >= embeddings.rows()) {
                throw ArgumentError("token index outside the embedding matrix");
            }
            const auto row = embeddings.row(g);
            data_.insert(data_.end(), row.begin(), row.end());
        }
    }

    const std::vector<std::size_t>& population() const { return population_; }
    std::size_t n_neighbors() const { return n_neighbors_; }

    /// `labels[i]` is the entity class of population token i (0 for O, c + 1 for class c), or -1.
    PositiveIdResult run(const PositiveIdParams& params, std::span<const int> labels, std::uint64_t seed) const {
        const std::size_t n = population_.size();
        if (params.umap.n_neighbors != n_neighbors_) {
            throw ArgumentError("neighbour count differs from the cached neighbour graph");
        }
        if (n <= n_neighbors_) {
            throw ArgumentError("fewer tokens than the neighbour count (" + std::to_string(n_neighbors_) + ")");
        }
        std::call_once(neighbors_once_, [&] { neighbors_ = exact_neighbors(data_, dim_, n_neighbors_); });
        PositiveIdResult out;
        out.reduced = umap_reduce(data_, dim_, labels, params.umap, seed, &neighbors_);
        out.clustering_params = params.clustering_for(n);
        out.clustering = hdbscan(out.reduced.coords, 2, out.clustering_params);
        out.positive = build_positive_set(out.clustering.assignment, out.clustering.outlier_scores, params.outlier_fraction, params.outlier_scope,
                                          params.noise_is_positive);
        return out;
    }

    /// Expand a population-indexed mask to a corpus-wide token mask.
    std::vector<std::uint8_t> corpus_mask(std::span<const std::uint8_t> population_mask, std::size_t token_count) const {
        std::vector<std::uint8_t> out(token_count, 0);
        for (std::size_t i = 0; i < population_.size(); ++i) {
            out[population_[i]] = population_mask[i];
        }
        return out;
    }

private:
    std::vector<std::size_t> population_;
    std::size_t dim_;
    std::size_t n_neighbors_;
    std::vector<float> data_;
    mutable std::once_flag neighbors_once_;
    mutable NeighborList neighbors_;
};

/// Supervision label of a tag: 0 for O, otherwise one plus the entity class.
inline int supervision_label(TagId tag) { return tag == kOutside ? 0 : static_cast<int>(LabelScheme::class_of(tag)) + 1; }

/// Per-token diagnostic rows: token, x, y, cluster, outlier_score, in_p_prime.
inline void write_diagnostics_csv(std::ostream& out, const PositiveIdResult& result, std::span<const std::size_t> population) {
    out << "token,x,y,cluster,outlier_score,in_p_prime\n";
    out.precision(9);
    for (std::size_t i = 0; i < population.size(); ++i) {
        out << population[i] << ',' << result.reduced.x(i) << ',' << result.reduced.y(i) << ',' << result.clustering.assignment.labels[i] << ','
            << result.clustering.outlier_scores[i] << ',' << int(result.positive.in_p_prime[i]) << '\n';
    }
}

}

#endif
