#ifndef ALNER_KDE_HPP
#define ALNER_KDE_HPP

#include "corpus.hpp"
#include "error.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <span>
#include <vector>

namespace alner {

/// Linear-interpolation quantile of sorted data.
inline double quantile_sorted(std::span<const double> sorted, double q) {
    if (sorted.empty()) {
        throw ArgumentError("quantile of empty data");
    }
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

/**
 * Silverman's rule of thumb, 0.9 * min(sd, IQR / 1.34) * n^(-1/5).
 * When the IQR vanishes the standard deviation is used, and when both vanish |x_0|
 * (then 1) stands in for the spread, as in R's bw.nrd0.
 */
inline double silverman_bandwidth(std::span<const double> values, bool* degenerate = nullptr) {
    const std::size_t n = values.size();
    if (n < 2) {
        throw ArgumentError("bandwidth selection needs at least two samples");
    }
    double mean = 0;
    for (double v : values) {
        mean += v;
    }
    mean /= static_cast<double>(n);
    double ss = 0;
    for (double v : values) {
        ss += (v - mean) * (v - mean);
    }
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);

    double spread = std::min(sd, iqr / 1.34);
    bool flat = false;
    if (!(spread > 0)) {
        spread = sd;
    }
    if (!(spread > 0)) {
        flat = true;
        spread = std::abs(values[0]) > 0 ? std::abs(values[0]) : 1.0;
    }
    if (degenerate) {
        *degenerate = flat;
    }
    return 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
}

/**
 * Gaussian KDE over sentence token counts, p_L in the density-normalized scores.
 *
 * Counts are positive, so the estimate is truncated to [0, inf) and rescaled by the kernel mass
 * that falls there.
 */
class TokenCountDensity {
public:
    TokenCountDensity() = default;

    explicit TokenCountDensity(std::span<const double> counts) {
        if (counts.size() < 2) {
            throw ArgumentError("token-count density needs at least two sentences");
        }
        bandwidth_ = silverman_bandwidth(counts, &degenerate_);
        n_ = static_cast<double>(counts.size());
        std::map<double, std::size_t> grouped;
        for (double c : counts) {
            grouped[c] += 1;
        }
        support_.assign(grouped.begin(), grouped.end());
        double kept = 0;
        for (const auto& [x, w] : support_) {
            kept += static_cast<double>(w) * normal_cdf(x / bandwidth_);
        }
        truncation_ = kept / n_;
    }

    /// Fit on the lengths of every sentence in the corpus.
    static TokenCountDensity fit(const Corpus& corpus) {
        std::vector<double> counts;
        counts.reserve(corpus.size());
        for (const auto& s : corpus.sentences()) {
            counts.push_back(static_cast<double>(s.size()));
        }
        return TokenCountDensity(counts);
    }

    double bandwidth() const { return bandwidth_; }
    /// True when every count was identical and a fallback spread was used.
    bool degenerate() const { return degenerate_; }
    double max_count() const { return support_.empty() ? 0.0 : support_.back().first; }

    double operator()(double x) const {
        if (x < 0) {
            return 0.0;
        }
        double s = 0;
        for (const auto& [c, w] : support_) {
            const double z = (x - c) / bandwidth_;
            s += static_cast<double>(w) * std::exp(-0.5 * z * z);
        }
        return s * std::numbers::inv_sqrtpi / std::numbers::sqrt2 / (n_ * bandwidth_ * truncation_);
    }

private:
    static double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

    std::vector<std::pair<double, std::size_t>> support_;
    double n_ = 0;
    double bandwidth_ = 1;
    double truncation_ = 1;
    bool degenerate_ = false;
};

}

#endif
