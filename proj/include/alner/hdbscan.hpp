#ifndef ALNER_HDBSCAN_HPP
#define ALNER_HDBSCAN_HPP

#include "error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

/**
 * @file hdbscan.hpp
 *
 * @brief Hierarchical density clustering with excess-of-mass selection and GLOSH outlier scores.
 *
 * Core distances use the min_samples-th nearest point counting the point itself. The minimum
 * spanning tree of the mutual-reachability graph is built with dense Prim, which is quadratic in
 * time and linear in memory. The root cluster is never selected, so data without density
 * structure comes out as noise.
 */

namespace alner {

struct HdbscanParams {
    std::size_t min_cluster_size = 15;
    std::size_t min_samples = 15;
};

/// One edge of the condensed tree. `child` below the point count is a point, otherwise a cluster.
struct CondensedEdge {
    std::size_t parent;
    std::size_t child;
    double lambda;
    std::size_t size;
};

struct ClusterAssignment {
    static constexpr int noise = -1;

    std::vector<int> labels;         ///< Dense cluster labels 0..k-1, or `noise`.
    std::vector<std::size_t> sizes;  ///< Member count per label.
    std::size_t noise_count = 0;
    std::vector<CondensedEdge> condensed_tree;
    std::size_t hierarchy_clusters = 0; ///< Clusters in the condensed tree, root included.
    bool degenerate = false;            ///< All points coincide; everything is one cluster.

    std::size_t cluster_count() const { return sizes.size(); }
};

struct ClusteringResult {
    ClusterAssignment assignment;
    std::vector<double> outlier_scores; ///< GLOSH, in [0, 1].
};

namespace detail {

/**
 * Distance to the min_samples-th nearest point, the point itself included. Points are swept in
 * order of their first coordinate, which bounds the search window by the current k-th distance.
 */
inline std::vector<double> core_distances(std::span<const double> data, std::size_t dim, std::size_t n, std::size_t min_samples) {
    std::vector<double> core(n, 0.0);
    if (min_samples <= 1) {
        return core;
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return data[a * dim] < data[b * dim]; });
    const std::size_t others = min_samples - 1;
    std::vector<double> heap;
    heap.reserve(others);
    auto squared = [&](std::size_t a, std::size_t b) {
        double s = 0;
        for (std::size_t d = 0; d < dim; ++d) {
            const double diff = data[a * dim + d] - data[b * dim + d];
            s += diff * diff;
        }
        return s;
    };
    for (std::size_t pos = 0; pos < n; ++pos) {
        const std::size_t i = order[pos];
        const double xi = data[i * dim];
        heap.clear();
        auto offer = [&](std::size_t j) {
            const double d2 = squared(i, j);
            if (heap.size() < others) {
                heap.push_back(d2);
                std::push_heap(heap.begin(), heap.end());
            } else if (d2 < heap.front()) {
                std::pop_heap(heap.begin(), heap.end());
                heap.back() = d2;
                std::push_heap(heap.begin(), heap.end());
            }
        };
        auto bound = [&]() { return heap.size() < others ? std::numeric_limits<double>::infinity() : heap.front(); };
        std::size_t lo = pos, hi = pos + 1;
        bool left = lo > 0, right = hi < n;
        while (left || right) {
            if (left) {
                const std::size_t j = order[lo - 1];
                const double dx = xi - data[j * dim];
                if (dx * dx > bound()) {
                    left = false;
                } else {
                    offer(j);
                    --lo;
                    left = lo > 0;
                }
            }
            if (right) {
                const std::size_t j = order[hi];
                const double dx = data[j * dim] - xi;
                if (dx * dx > bound()) {
                    right = false;
                } else {
                    offer(j);
                    ++hi;
                    right = hi < n;
                }
            }
        }
        core[i] = std::sqrt(heap.front());
    }
    return core;
}

struct MergeStep {
    std::size_t left;
    std::size_t right;
    double distance;
    std::size_t size;
};

/// Single-linkage dendrogram of the mutual-reachability MST; node n + i is created by merge i.
inline std::vector<MergeStep> mutual_reachability_linkage(std::span<const double> data, std::size_t dim, std::size_t n,
                                                          const std::vector<double>& core) {
    struct Edge {
        std::size_t a, b;
        double w;
    };
    std::vector<Edge> mst;
    mst.reserve(n - 1);
    // Prim over squared mutual reachability; the remaining vertices are kept compact.
    std::vector<std::size_t> remaining(n - 1);
    std::iota(remaining.begin(), remaining.end(), 1);
    std::vector<double> best(n - 1, std::numeric_limits<double>::infinity());
    std::vector<std::size_t> from(n - 1, 0);
    std::vector<double> core2(n);
    for (std::size_t i = 0; i < n; ++i) {
        core2[i] = core[i] * core[i];
    }
    std::size_t current = 0;
    while (!remaining.empty()) {
        const double* xc = data.data() + current * dim;
        std::size_t next = 0;
        double next_w = std::numeric_limits<double>::infinity();
        for (std::size_t r = 0; r < remaining.size(); ++r) {
            const std::size_t j = remaining[r];
            const double* xj = data.data() + j * dim;
            double d2 = 0;
            for (std::size_t d = 0; d < dim; ++d) {
                const double diff = xc[d] - xj[d];
                d2 += diff * diff;
            }
            const double mr = std::max(d2, std::max(core2[current], core2[j]));
            if (mr < best[r]) {
                best[r] = mr;
                from[r] = current;
            }
            if (best[r] < next_w || (best[r] == next_w && j < remaining[next])) {
                next = r;
                next_w = best[r];
            }
        }
        current = remaining[next];
        mst.push_back({from[next], current, std::sqrt(next_w)});
        remaining[next] = remaining.back();
        best[next] = best.back();
        from[next] = from.back();
        remaining.pop_back();
        best.pop_back();
        from.pop_back();
    }
    std::stable_sort(mst.begin(), mst.end(), [](const Edge& x, const Edge& y) { return x.w < y.w; });

    std::vector<std::size_t> parent(2 * n - 1);
    std::iota(parent.begin(), parent.end(), 0);
    std::vector<std::size_t> size(2 * n - 1, 1);
    auto find = [&](std::size_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    };
    std::vector<MergeStep> merges;
    merges.reserve(n - 1);
    for (const auto& e : mst) {
        const std::size_t ra = find(e.a);
        const std::size_t rb = find(e.b);
        const std::size_t node = n + merges.size();
        merges.push_back({ra, rb, e.w, size[ra] + size[rb]});
        parent[ra] = node;
        parent[rb] = node;
        size[node] = size[ra] + size[rb];
    }
    return merges;
}

inline std::vector<CondensedEdge> condense(const std::vector<MergeStep>& merges, std::size_t n, std::size_t min_cluster_size) {
    std::vector<CondensedEdge> out;
    const std::size_t root = 2 * n - 2;
    std::vector<std::size_t> relabel(2 * n - 1, 0);
    relabel[root] = n;
    std::size_t next_label = n + 1;
    auto node_size = [&](std::size_t node) { return node < n ? std::size_t{1} : merges[node - n].size; };

    auto drop_subtree = [&](std::size_t start, std::size_t cluster, double lambda) {
        std::vector<std::size_t> stack{start};
        while (!stack.empty()) {
            const std::size_t v = stack.back();
            stack.pop_back();
            if (v < n) {
                out.push_back({cluster, v, lambda, 1});
            } else {
                stack.push_back(merges[v - n].right);
                stack.push_back(merges[v - n].left);
            }
        }
    };

    // Breadth-first from the root, so parents are labelled before their children.
    std::vector<std::size_t> queue{root};
    for (std::size_t q = 0; q < queue.size(); ++q) {
        const std::size_t node = queue[q];
        if (node < n) {
            continue;
        }
        const auto& m = merges[node - n];
        const double lambda = m.distance > 0 ? 1.0 / m.distance : std::numeric_limits<double>::infinity();
        const std::size_t cluster = relabel[node];
        const std::size_t ls = node_size(m.left);
        const std::size_t rs = node_size(m.right);
        const bool left_big = ls >= min_cluster_size;
        const bool right_big = rs >= min_cluster_size;
        if (left_big && right_big) {
            relabel[m.left] = next_label++;
            out.push_back({cluster, relabel[m.left], lambda, ls});
            relabel[m.right] = next_label++;
            out.push_back({cluster, relabel[m.right], lambda, rs});
            queue.push_back(m.left);
            queue.push_back(m.right);
        } else if (!left_big && !right_big) {
            drop_subtree(m.left, cluster, lambda);
            drop_subtree(m.right, cluster, lambda);
        } else if (!left_big) {
            drop_subtree(m.left, cluster, lambda);
            relabel[m.right] = cluster;
            queue.push_back(m.right);
        } else {
            drop_subtree(m.right, cluster, lambda);
            relabel[m.left] = cluster;
            queue.push_back(m.left);
        }
    }
    return out;
}

}

/// Cluster row-major points (n x dim).
inline ClusteringResult hdbscan(std::span<const double> data, std::size_t dim, const HdbscanParams& params) {
    if (dim == 0 || data.size() % dim != 0) {
        throw ArgumentError("clustering input is not an n x dim matrix");
    }
    const std::size_t n = data.size() / dim;
    if (params.min_cluster_size < 2) {
        throw ArgumentError("min_cluster_size must be at least 2");
    }
    if (params.min_samples < 1) {
        throw ArgumentError("min_samples must be at least 1");
    }
    if (n < params.min_cluster_size || n < params.min_samples) {
        throw ArgumentError("clustering needs at least min_cluster_size (" + std::to_string(params.min_cluster_size) + ") points");
    }
    for (double v : data) {
        if (!std::isfinite(v)) {
            throw ArgumentError("clustering input contains a non-finite value");
        }
    }

    ClusteringResult result;
    auto& a = result.assignment;
    bool identical = true;
    for (std::size_t i = 1; i < n && identical; ++i) {
        for (std::size_t d = 0; d < dim; ++d) {
            if (data[i * dim + d] != data[d]) {
                identical = false;
                break;
            }
        }
    }
    if (identical) {
        a.labels.assign(n, 0);
        a.sizes = {n};
        a.hierarchy_clusters = 1;
        a.degenerate = true;
        result.outlier_scores.assign(n, 0.0);
        return result;
    }

    const auto core = detail::core_distances(data, dim, n, params.min_samples);
    const auto merges = detail::mutual_reachability_linkage(data, dim, n, core);
    a.condensed_tree = detail::condense(merges, n, params.min_cluster_size);
    const auto& tree = a.condensed_tree;

    std::size_t max_cluster = n;
    for (const auto& e : tree) {
        max_cluster = std::max(max_cluster, std::max(e.parent, e.child));
    }
    const std::size_t clusters = max_cluster - n + 1;
    a.hierarchy_clusters = clusters;
    std::vector<double> birth(clusters, 0.0);
    std::vector<std::size_t> parent_of(clusters, 0);
    std::vector<std::vector<std::size_t>> children(clusters);
    for (const auto& e : tree) {
        if (e.child >= n) {
            birth[e.child - n] = e.lambda;
            parent_of[e.child - n] = e.parent - n;
            children[e.parent - n].push_back(e.child - n);
        }
    }

    // Excess of mass: stability of a cluster against the summed stability of its children.
    std::vector<double> stability(clusters, 0.0);
    for (const auto& e : tree) {
        stability[e.parent - n] += (e.lambda - birth[e.parent - n]) * static_cast<double>(e.size);
    }
    std::vector<char> selected(clusters, 0);
    for (std::size_t c = clusters; c-- > 1;) {
        double child_sum = 0;
        for (std::size_t ch : children[c]) {
            child_sum += stability[ch];
        }
        if (!children[c].empty() && child_sum > stability[c]) {
            stability[c] = child_sum;
        } else {
            selected[c] = 1;
            std::vector<std::size_t> stack(children[c]);
            while (!stack.empty()) {
                const std::size_t v = stack.back();
                stack.pop_back();
                selected[v] = 0;
                stack.insert(stack.end(), children[v].begin(), children[v].end());
            }
        }
    }

    std::vector<int> dense(clusters, ClusterAssignment::noise);
    int next = 0;
    for (std::size_t c = 1; c < clusters; ++c) {
        if (selected[c]) {
            dense[c] = next++;
        }
    }
    a.sizes.assign(static_cast<std::size_t>(next), 0);
    a.labels.assign(n, ClusterAssignment::noise);

    std::vector<double> deaths(clusters, 0.0);
    for (const auto& e : tree) {
        deaths[e.parent - n] = std::max(deaths[e.parent - n], e.lambda);
    }
    for (std::size_t c = clusters; c-- > 1;) {
        deaths[parent_of[c]] = std::max(deaths[parent_of[c]], deaths[c]);
    }
    result.outlier_scores.assign(n, 0.0);

    for (const auto& e : tree) {
        if (e.child >= n) {
            continue;
        }
        std::size_t c = e.parent - n;
        while (c != 0 && !selected[c]) {
            c = parent_of[c];
        }
        if (c != 0) {
            a.labels[e.child] = dense[c];
            ++a.sizes[static_cast<std::size_t>(dense[c])];
        } else {
            ++a.noise_count;
        }
        const double lambda_max = deaths[e.parent - n];
        double score = 0.0;
        if (lambda_max > 0 && std::isfinite(lambda_max) && std::isfinite(e.lambda)) {
            score = (lambda_max - e.lambda) / lambda_max;
        }
        result.outlier_scores[e.child] = std::clamp(score, 0.0, 1.0);
    }
    return result;
}

}

#endif
