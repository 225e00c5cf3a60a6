#ifndef ALNER_UMAP_HPP
#define ALNER_UMAP_HPP

#include "error.hpp"
#include "knn.hpp"
#include "rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <tuple>
#include <utility>
#include <vector>

/**
 * @file umap.hpp
 *
 * @brief Two-dimensional UMAP layout with optional categorical supervision.
 *
 * The fuzzy neighbourhood graph follows the usual construction (smoothed kNN distances,
 * probabilistic fuzzy union). Supervision multiplies edges between differently labelled points
 * by exp(-far_dist) and edges touching an unlabelled point by exp(-unknown_dist), then
 * re-normalizes local connectivity. Without any labelled point the graph is left unsupervised.
 * The layout is initialized from the top two principal components and optimized by
 * single-threaded SGD with negative sampling, so results are reproducible for a given seed.
 */

namespace alner {

struct UmapParams {
    std::size_t n_neighbors = 15;
    double min_dist = 0.0;
    double spread = 1.0;
    int n_epochs = -1; ///< Negative selects 500 for up to 10,000 points and 200 above.
    double learning_rate = 1.0;
    int negative_sample_rate = 5;
    double local_connectivity = 1.0;
    double target_weight = 0.5;
    double unknown_dist = 1.0;
};

/// Symmetric sparse graph in coordinate form, sorted by (head, tail).
struct FuzzyGraph {
    std::size_t points = 0;
    std::vector<std::uint32_t> head;
    std::vector<std::uint32_t> tail;
    std::vector<double> weight;

    std::size_t edges() const { return weight.size(); }
};

namespace detail {

struct SmoothDistances {
    std::vector<double> sigma;
    std::vector<double> rho;
};

inline SmoothDistances smooth_knn_dist(const NeighborList& nn, double local_connectivity, double bandwidth = 1.0) {
    constexpr int n_iter = 64;
    constexpr double tolerance = 1e-5;
    constexpr double min_k_dist_scale = 1e-3;
    const std::size_t n = nn.points;
    const std::size_t k = nn.k;
    const double target = std::log2(static_cast<double>(k)) * bandwidth;

    double mean_all = 0;
    for (float d : nn.distance) {
        mean_all += d;
    }
    mean_all /= static_cast<double>(std::max<std::size_t>(1, nn.distance.size()));

    SmoothDistances out;
    out.sigma.resize(n);
    out.rho.resize(n);
    std::vector<double> non_zero;
    for (std::size_t i = 0; i < n; ++i) {
        const auto dist = nn.distances(i);
        non_zero.clear();
        for (float d : dist) {
            if (d > 0) {
                non_zero.push_back(d);
            }
        }
        double rho = 0;
        if (non_zero.size() >= local_connectivity) {
            const auto index = static_cast<std::size_t>(std::floor(local_connectivity));
            const double interpolation = local_connectivity - static_cast<double>(index);
            if (index > 0) {
                rho = non_zero[index - 1];
                if (interpolation > tolerance) {
                    rho += interpolation * (non_zero[index] - non_zero[index - 1]);
                }
            } else {
                rho = interpolation * non_zero[0];
            }
        } else if (!non_zero.empty()) {
            rho = *std::max_element(non_zero.begin(), non_zero.end());
        }

        double lo = 0, hi = std::numeric_limits<double>::infinity(), mid = 1.0;
        for (int it = 0; it < n_iter; ++it) {
            double psum = 0;
            for (std::size_t j = 1; j < k; ++j) {
                const double d = dist[j] - rho;
                psum += d > 0 ? std::exp(-d / mid) : 1.0;
            }
            if (std::abs(psum - target) < tolerance) {
                break;
            }
            if (psum > target) {
                hi = mid;
                mid = (lo + hi) / 2;
            } else {
                lo = mid;
                mid = std::isinf(hi) ? mid * 2 : (lo + hi) / 2;
            }
        }
        double mean_i = 0;
        for (float d : dist) {
            mean_i += d;
        }
        mean_i /= static_cast<double>(k);
        if (rho > 0) {
            mid = std::max(mid, min_k_dist_scale * mean_i);
        } else {
            mid = std::max(mid, min_k_dist_scale * mean_all);
        }
        out.sigma[i] = mid;
        out.rho[i] = rho;
    }
    return out;
}

/// Probabilistic fuzzy union A + A^T - A o A^T of a directed weighted edge list.
inline FuzzyGraph fuzzy_union(std::size_t n, std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> directed) {
    // Tag 0: entry of A at (i, j); tag 1: entry of A^T at (i, j).
    std::vector<std::tuple<std::uint32_t, std::uint32_t, int, double>> all;
    all.reserve(directed.size() * 2);
    for (const auto& [i, j, w] : directed) {
        all.emplace_back(i, j, 0, w);
        all.emplace_back(j, i, 1, w);
    }
    std::sort(all.begin(), all.end());
    FuzzyGraph g;
    g.points = n;
    for (std::size_t p = 0; p < all.size();) {
        const auto i = std::get<0>(all[p]);
        const auto j = std::get<1>(all[p]);
        double a = 0, b = 0;
        while (p < all.size() && std::get<0>(all[p]) == i && std::get<1>(all[p]) == j) {
            if (std::get<2>(all[p]) == 0) {
                a += std::get<3>(all[p]);
            } else {
                b += std::get<3>(all[p]);
            }
            ++p;
        }
        const double w = a + b - a * b;
        if (w > 0) {
            g.head.push_back(i);
            g.tail.push_back(j);
            g.weight.push_back(w);
        }
    }
    return g;
}

}

inline FuzzyGraph fuzzy_simplicial_set(const NeighborList& nn, const UmapParams& params) {
    const auto smooth = detail::smooth_knn_dist(nn, params.local_connectivity);
    std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> directed;
    directed.reserve(nn.points * nn.k);
    for (std::size_t i = 0; i < nn.points; ++i) {
        const auto idx = nn.neighbors(i);
        const auto dist = nn.distances(i);
        for (std::size_t r = 0; r < nn.k; ++r) {
            if (idx[r] == i) {
                continue;
            }
            double w;
            if (dist[r] - smooth.rho[i] <= 0 || smooth.sigma[i] == 0) {
                w = 1.0;
            } else {
                w = std::exp(-(dist[r] - smooth.rho[i]) / smooth.sigma[i]);
            }
            directed.emplace_back(static_cast<std::uint32_t>(i), idx[r], w);
        }
    }
    return detail::fuzzy_union(nn.points, std::move(directed));
}

/**
 * Blend categorical labels into the graph. `labels[i] < 0` marks an unlabelled point.
 * Does nothing when no point is labelled.
 */
inline void intersect_with_labels(FuzzyGraph& graph, std::span<const int> labels, const UmapParams& params) {
    if (labels.empty()) {
        return;
    }
    if (labels.size() != graph.points) {
        throw ArgumentError("label vector does not match the number of points");
    }
    if (std::none_of(labels.begin(), labels.end(), [](int l) { return l >= 0; })) {
        return;
    }
    const double far_dist = params.target_weight < 1.0 ? 2.5 * (1.0 / (1.0 - params.target_weight)) : 1e12;
    const double unknown_factor = std::exp(-params.unknown_dist);
    const double far_factor = std::exp(-far_dist);
    for (std::size_t e = 0; e < graph.edges(); ++e) {
        const int a = labels[graph.head[e]];
        const int b = labels[graph.tail[e]];
        if (a < 0 || b < 0) {
            graph.weight[e] *= unknown_factor;
        } else if (a != b) {
            graph.weight[e] *= far_factor;
        }
    }
    // Reset local connectivity: scale each row to a maximum of 1, then fuzzy-union again.
    std::vector<double> row_max(graph.points, 0.0);
    for (std::size_t e = 0; e < graph.edges(); ++e) {
        row_max[graph.head[e]] = std::max(row_max[graph.head[e]], graph.weight[e]);
    }
    std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> directed;
    directed.reserve(graph.edges());
    for (std::size_t e = 0; e < graph.edges(); ++e) {
        const double m = row_max[graph.head[e]];
        directed.emplace_back(graph.head[e], graph.tail[e], m > 0 ? graph.weight[e] / m : 0.0);
    }
    graph = detail::fuzzy_union(graph.points, std::move(directed));
}

/**
 * Fit a and b of the low-dimensional similarity 1 / (1 + a d^(2b)) to the target curve
 * (1 below min_dist, exp(-(d - min_dist) / spread) above) by Levenberg-Marquardt least squares.
 */
inline std::pair<double, double> find_ab(double spread, double min_dist) {
    constexpr int samples = 300;
    std::vector<double> xs(samples), ys(samples);
    for (int i = 0; i < samples; ++i) {
        xs[i] = 3.0 * spread * i / (samples - 1);
        ys[i] = xs[i] < min_dist ? 1.0 : std::exp(-(xs[i] - min_dist) / spread);
    }
    auto residuals = [&](double a, double b, std::vector<double>& r, std::vector<double>& ja, std::vector<double>& jb) {
        double sse = 0;
        for (int i = 0; i < samples; ++i) {
            const double x = xs[i];
            if (x == 0) {
                r[i] = 1.0 - ys[i];
                ja[i] = jb[i] = 0;
            } else {
                const double x2b = std::pow(x, 2 * b);
                const double denom = 1 + a * x2b;
                r[i] = 1.0 / denom - ys[i];
                ja[i] = -x2b / (denom * denom);
                jb[i] = -a * x2b * 2 * std::log(x) / (denom * denom);
            }
            sse += r[i] * r[i];
        }
        return sse;
    };
    double a = 1.0, b = 1.0, lambda = 1e-3;
    std::vector<double> r(samples), ja(samples), jb(samples), r2(samples), ja2(samples), jb2(samples);
    double sse = residuals(a, b, r, ja, jb);
    for (int it = 0; it < 500; ++it) {
        double haa = 0, hab = 0, hbb = 0, ga = 0, gb = 0;
        for (int i = 0; i < samples; ++i) {
            haa += ja[i] * ja[i];
            hab += ja[i] * jb[i];
            hbb += jb[i] * jb[i];
            ga += ja[i] * r[i];
            gb += jb[i] * r[i];
        }
        const double daa = haa * (1 + lambda), dbb = hbb * (1 + lambda);
        const double det = daa * dbb - hab * hab;
        if (det == 0) {
            break;
        }
        const double step_a = -(dbb * ga - hab * gb) / det;
        const double step_b = -(daa * gb - hab * ga) / det;
        const double trial = residuals(a + step_a, b + step_b, r2, ja2, jb2);
        if (trial < sse) {
            a += step_a;
            b += step_b;
            const bool done = sse - trial < 1e-15 * std::max(1.0, sse);
            sse = trial;
            r.swap(r2);
            ja.swap(ja2);
            jb.swap(jb2);
            lambda *= 0.3;
            if (done) {
                break;
            }
        } else {
            lambda *= 10;
            if (lambda > 1e12) {
                break;
            }
        }
    }
    return {a, b};
}

/// 2-D coordinates, row-major (n x 2).
struct ReducedEmbedding {
    std::size_t points = 0;
    std::vector<double> coords;
    std::uint64_t seed = 0;
    UmapParams params;

    double x(std::size_t i) const { return coords[2 * i]; }
    double y(std::size_t i) const { return coords[2 * i + 1]; }
};

namespace detail {

inline std::vector<double> pca_initialization(std::span<const float> data, std::size_t dim, std::size_t n, Rng& rng) {
    std::vector<double> coords(2 * n, 0.0);
    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> raw(data.data(), static_cast<Eigen::Index>(n),
                                                                                              static_cast<Eigen::Index>(dim));
    const Eigen::RowVectorXd mean = raw.cast<double>().colwise().mean();
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    constexpr Eigen::Index block = 4096;
    for (Eigen::Index start = 0; start < static_cast<Eigen::Index>(n); start += block) {
        const Eigen::Index rows = std::min<Eigen::Index>(block, static_cast<Eigen::Index>(n) - start);
        Eigen::MatrixXd centred = raw.middleRows(start, rows).cast<double>();
        centred.rowwise() -= mean;
        cov.noalias() += centred.transpose() * centred;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    const std::size_t kept = std::min<std::size_t>(2, dim);
    for (std::size_t c = 0; c < kept; ++c) {
        Eigen::VectorXd v = solver.eigenvectors().col(static_cast<Eigen::Index>(dim - 1 - c));
        Eigen::Index argmax = 0;
        v.cwiseAbs().maxCoeff(&argmax);
        if (v[argmax] < 0) {
            v = -v;
        }
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0;
            for (std::size_t d = 0; d < dim; ++d) {
                s += (static_cast<double>(data[i * dim + d]) - mean[static_cast<Eigen::Index>(d)]) * v[static_cast<Eigen::Index>(d)];
            }
            coords[2 * i + c] = s;
        }
    }
    // Jitter separates coincident points, then each axis is rescaled to [0, 10].
    for (auto& v : coords) {
        v += 1e-4 * rng.normal();
    }
    for (std::size_t c = 0; c < 2; ++c) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (std::size_t i = 0; i < n; ++i) {
            lo = std::min(lo, coords[2 * i + c]);
            hi = std::max(hi, coords[2 * i + c]);
        }
        const double range = hi - lo;
        for (std::size_t i = 0; i < n; ++i) {
            coords[2 * i + c] = range > 0 ? 10.0 * (coords[2 * i + c] - lo) / range : 0.0;
        }
    }
    return coords;
}

inline void optimize_layout(std::vector<double>& coords, const FuzzyGraph& graph, int n_epochs, double a, double b, const UmapParams& params, Rng& rng) {
    const std::size_t n = graph.points;
    double max_w = 0;
    for (double w : graph.weight) {
        max_w = std::max(max_w, w);
    }
    // Edges too weak to be sampled even once are dropped.
    std::vector<std::uint32_t> head, tail;
    std::vector<double> epochs_per_sample;
    for (std::size_t e = 0; e < graph.edges(); ++e) {
        if (graph.weight[e] >= max_w / n_epochs) {
            head.push_back(graph.head[e]);
            tail.push_back(graph.tail[e]);
            epochs_per_sample.push_back(max_w / graph.weight[e]);
        }
    }
    const std::size_t m = head.size();
    std::vector<double> next_sample(epochs_per_sample);
    std::vector<double> epochs_per_negative(m), next_negative(m);
    for (std::size_t e = 0; e < m; ++e) {
        epochs_per_negative[e] = epochs_per_sample[e] / params.negative_sample_rate;
        next_negative[e] = epochs_per_negative[e];
    }
    std::vector<float> y(coords.begin(), coords.end());
    const float af = static_cast<float>(a), bf = static_cast<float>(b);
    auto clip = [](float v) { return std::clamp(v, -4.0f, 4.0f); };

    for (int epoch = 0; epoch < n_epochs; ++epoch) {
        const float alpha = static_cast<float>(params.learning_rate * (1.0 - static_cast<double>(epoch) / n_epochs));
        for (std::size_t e = 0; e < m; ++e) {
            if (next_sample[e] > epoch) {
                continue;
            }
            float* current = y.data() + 2 * head[e];
            float* other = y.data() + 2 * tail[e];
            float dx = current[0] - other[0], dy = current[1] - other[1];
            float dist2 = dx * dx + dy * dy;
            float coeff = 0;
            if (dist2 > 0) {
                const float p = std::pow(dist2, bf);
                coeff = -2.0f * af * bf * (p / dist2) / (af * p + 1.0f);
            }
            const float gx = clip(coeff * dx), gy = clip(coeff * dy);
            current[0] += gx * alpha;
            current[1] += gy * alpha;
            other[0] -= gx * alpha;
            other[1] -= gy * alpha;
            next_sample[e] += epochs_per_sample[e];

            const int n_neg = static_cast<int>((epoch - next_negative[e]) / epochs_per_negative[e]);
            for (int p = 0; p < n_neg; ++p) {
                const auto k = static_cast<std::size_t>(rng.uniform_index(n));
                if (k == head[e]) {
                    continue;
                }
                const float* neg = y.data() + 2 * k;
                dx = current[0] - neg[0];
                dy = current[1] - neg[1];
                dist2 = dx * dx + dy * dy;
                if (dist2 > 0) {
                    coeff = 2.0f * bf / ((0.001f + dist2) * (af * std::pow(dist2, bf) + 1.0f));
                    current[0] += clip(coeff * dx) * alpha;
                    current[1] += clip(coeff * dy) * alpha;
                }
            }
            next_negative[e] += n_neg * epochs_per_negative[e];
        }
    }
    std::copy(y.begin(), y.end(), coords.begin());
}

}

/**
 * Reduce row-major `data` (n x dim) to two dimensions.
 *
 * `labels` may be empty (unsupervised) or hold one entry per point with -1 for unlabelled points.
 * A precomputed neighbour list for the same data can be passed to skip the exact search.
 */
inline ReducedEmbedding umap_reduce(std::span<const float> data, std::size_t dim, std::span<const int> labels, const UmapParams& params,
                                    std::uint64_t seed, const NeighborList* neighbors = nullptr) {
    if (dim == 0 || data.size() % dim != 0) {
        throw ArgumentError("UMAP input is not an n x dim matrix");
    }
    const std::size_t n = data.size() / dim;
    if (n <= params.n_neighbors) {
        throw ArgumentError("UMAP needs more points than the neighbour count (" + std::to_string(params.n_neighbors) + ")");
    }
    for (float v : data) {
        if (!std::isfinite(v)) {
            throw ArgumentError("UMAP input contains a non-finite value");
        }
    }
    NeighborList computed;
    if (neighbors == nullptr) {
        computed = exact_neighbors(data, dim, params.n_neighbors);
        neighbors = &computed;
    } else if (neighbors->points != n || neighbors->k != params.n_neighbors) {
        throw ArgumentError("precomputed neighbours do not match the input");
    }

    auto graph = fuzzy_simplicial_set(*neighbors, params);
    intersect_with_labels(graph, labels, params);

    const int n_epochs = params.n_epochs > 0 ? params.n_epochs : (n <= 10000 ? 500 : 200);
    const auto [a, b] = find_ab(params.spread, params.min_dist);

    Rng rng(seed);
    ReducedEmbedding out;
    out.points = n;
    out.seed = seed;
    out.params = params;
    out.coords = detail::pca_initialization(data, dim, n, rng);
    detail::optimize_layout(out.coords, graph, n_epochs, a, b, params, rng);
    return out;
}

}

#endif
