#ifndef ALNER_KNN_HPP
#define ALNER_KNN_HPP

#include "error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace alner {

/**
 * Exact k-nearest-neighbour lists under Euclidean distance, k entries per point.
 * The point itself is always entry 0 with distance 0; the rest are ascending by distance,
 * with ties broken by the lower index.
 */
struct NeighborList {
    std::size_t points = 0;
    std::size_t k = 0;
    std::vector<std::uint32_t> index;
    std::vector<float> distance;

    std::span<const std::uint32_t> neighbors(std::size_t i) const { return {index.data() + i * k, k}; }
    std::span<const float> distances(std::size_t i) const { return {distance.data() + i * k, k}; }
};

/**
 * Brute-force search over row-major `data` (n x dim). Squared distances come from blocked
 * matrix products; the reported distances are recomputed directly.
 */
inline NeighborList exact_neighbors(std::span<const float> data, std::size_t dim, std::size_t k) {
    if (dim == 0 || data.size() % dim != 0) {
        throw ArgumentError("neighbour search input is not an n x dim matrix");
    }
    const std::size_t n = data.size() / dim;
    if (k < 1 || k > n) {
        throw ArgumentError("neighbour count must be in [1, number of points]");
    }
    NeighborList out;
    out.points = n;
    out.k = k;
    out.index.resize(n * k);
    out.distance.resize(n * k);

    using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const Eigen::Map<const Matrix> points(data.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    const Eigen::VectorXf norms = points.rowwise().squaredNorm();

    struct Candidate {
        float d2;
        std::uint32_t j;
        bool operator<(const Candidate& o) const { return d2 < o.d2 || (d2 == o.d2 && j < o.j); }
    };
    std::vector<Candidate> heap;
    heap.reserve(k);
    constexpr Eigen::Index block = 256;
    Matrix products;
    for (Eigen::Index start = 0; start < static_cast<Eigen::Index>(n); start += block) {
        const Eigen::Index rows = std::min<Eigen::Index>(block, static_cast<Eigen::Index>(n) - start);
        products.noalias() = points.middleRows(start, rows) * points.transpose();
        for (Eigen::Index r = 0; r < rows; ++r) {
            const std::size_t i = static_cast<std::size_t>(start + r);
            heap.clear();
            const std::size_t others = k - 1;
            if (others > 0) {
                const float* prod = products.data() + r * static_cast<Eigen::Index>(n);
                const float ni = norms[static_cast<Eigen::Index>(i)];
                for (std::size_t j = 0; j < n; ++j) {
                    if (j == i) {
                        continue;
                    }
                    const Candidate c{std::max(0.0f, ni + norms[static_cast<Eigen::Index>(j)] - 2.0f * prod[j]), static_cast<std::uint32_t>(j)};
                    if (heap.size() < others) {
                        heap.push_back(c);
                        std::push_heap(heap.begin(), heap.end());
                    } else if (c < heap.front()) {
                        std::pop_heap(heap.begin(), heap.end());
                        heap.back() = c;
                        std::push_heap(heap.begin(), heap.end());
                    }
                }
                for (auto& c : heap) {
                    const float* a = data.data() + i * dim;
                    const float* b = data.data() + static_cast<std::size_t>(c.j) * dim;
                    float d2 = 0;
                    for (std::size_t d = 0; d < dim; ++d) {
                        const float diff = a[d] - b[d];
                        d2 += diff * diff;
                    }
                    c.d2 = d2;
                }
                std::sort(heap.begin(), heap.end());
            }
            out.index[i * k] = static_cast<std::uint32_t>(i);
            out.distance[i * k] = 0.0f;
            for (std::size_t q = 0; q < heap.size(); ++q) {
                out.index[i * k + 1 + q] = heap[q].j;
                out.distance[i * k + 1 + q] = std::sqrt(heap[q].d2);
            }
        }
    }
    return out;
}

}

#endif
