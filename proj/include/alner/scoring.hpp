#ifndef ALNER_SCORING_HPP
#define ALNER_SCORING_HPP

#include "corpus.hpp"
#include "crf.hpp"
#include "error.hpp"
#include "kde.hpp"
#include "rng.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

/**
 * @file scoring.hpp
 *
 * @brief Token uncertainty, sentence aggregation, baselines and batch ranking.
 */

namespace alner {

enum class UncertaintyMeasure {
    TE, ///< token entropy
    TP, ///< token probability
    AP, ///< assignment probability
    TM, ///< token margin
};

enum class AggregationStrategy {
    Single,
    Normalized,
    Total,
    TotalPos,
    DnormPos,
    Random,
    Lss,
    Pas,
};

inline bool needs_positive_set(AggregationStrategy s) {
    return s == AggregationStrategy::TotalPos || s == AggregationStrategy::DnormPos || s == AggregationStrategy::Pas;
}

inline bool needs_density(AggregationStrategy s) {
    return s == AggregationStrategy::DnormPos || s == AggregationStrategy::Pas;
}

inline bool is_baseline(AggregationStrategy s) {
    return s == AggregationStrategy::Random || s == AggregationStrategy::Lss || s == AggregationStrategy::Pas;
}

inline bool needs_model_scores(AggregationStrategy s) { return !is_baseline(s); }

inline const char* to_string(UncertaintyMeasure m) {
    switch (m) {
        case UncertaintyMeasure::TE: return "TE";
        case UncertaintyMeasure::TP: return "TP";
        case UncertaintyMeasure::AP: return "AP";
        case UncertaintyMeasure::TM: return "TM";
    }
    return "?";
}

inline const char* to_string(AggregationStrategy s) {
    switch (s) {
        case AggregationStrategy::Single: return "single";
        case AggregationStrategy::Normalized: return "normalized";
        case AggregationStrategy::Total: return "total";
        case AggregationStrategy::TotalPos: return "total_pos";
        case AggregationStrategy::DnormPos: return "dnorm_pos";
        case AggregationStrategy::Random: return "random";
        case AggregationStrategy::Lss: return "lss";
        case AggregationStrategy::Pas: return "pas";
    }
    return "?";
}

inline std::optional<UncertaintyMeasure> parse_measure(std::string_view text) {
    if (text == "TE") return UncertaintyMeasure::TE;
    if (text == "TP") return UncertaintyMeasure::TP;
    if (text == "AP") return UncertaintyMeasure::AP;
    if (text == "TM") return UncertaintyMeasure::TM;
    return std::nullopt;
}

inline std::optional<AggregationStrategy> parse_strategy(std::string_view text) {
    for (auto s : {AggregationStrategy::Single, AggregationStrategy::Normalized, AggregationStrategy::Total, AggregationStrategy::TotalPos,
                   AggregationStrategy::DnormPos, AggregationStrategy::Random, AggregationStrategy::Lss, AggregationStrategy::Pas}) {
        if (text == to_string(s)) {
            return s;
        }
    }
    return std::nullopt;
}

/// A query method: an aggregation strategy plus, for uncertainty strategies, a token measure.
struct QueryMethod {
    AggregationStrategy strategy = AggregationStrategy::Total;
    UncertaintyMeasure measure = UncertaintyMeasure::TE;

    /// Short name: RS, LSS, PAS, or prefix + measure (sTE, nTE, tTE, tpTE, dpTE, ...).
    std::string name() const {
        switch (strategy) {
            case AggregationStrategy::Random: return "RS";
            case AggregationStrategy::Lss: return "LSS";
            case AggregationStrategy::Pas: return "PAS";
            case AggregationStrategy::Single: return std::string("s") + to_string(measure);
            case AggregationStrategy::Normalized: return std::string("n") + to_string(measure);
            case AggregationStrategy::Total: return std::string("t") + to_string(measure);
            case AggregationStrategy::TotalPos: return std::string("tp") + to_string(measure);
            case AggregationStrategy::DnormPos: return std::string("dp") + to_string(measure);
        }
        return "?";
    }

    bool operator==(const QueryMethod&) const = default;
};

inline std::optional<QueryMethod> parse_method(std::string_view name) {
    if (name == "RS") return QueryMethod{AggregationStrategy::Random, UncertaintyMeasure::TE};
    if (name == "LSS") return QueryMethod{AggregationStrategy::Lss, UncertaintyMeasure::TE};
    if (name == "PAS") return QueryMethod{AggregationStrategy::Pas, UncertaintyMeasure::TE};
    if (name.size() < 3) {
        return std::nullopt;
    }
    const auto measure = parse_measure(name.substr(name.size() - 2));
    if (!measure) {
        return std::nullopt;
    }
    const auto prefix = name.substr(0, name.size() - 2);
    if (prefix == "s") return QueryMethod{AggregationStrategy::Single, *measure};
    if (prefix == "n") return QueryMethod{AggregationStrategy::Normalized, *measure};
    if (prefix == "t") return QueryMethod{AggregationStrategy::Total, *measure};
    if (prefix == "tp") return QueryMethod{AggregationStrategy::TotalPos, *measure};
    if (prefix == "dp") return QueryMethod{AggregationStrategy::DnormPos, *measure};
    return std::nullopt;
}

/**
 * Uncertainty of one token from its marginal distribution. `assigned` is the marginal of the
 * tag chosen by Viterbi and is only read for AP.
 *
 * TE = -sum p ln p, TP = 1 - max p, AP = 1 - p(assigned), TM = 1 - (p_(1) - p_(2)).
 */
inline double token_uncertainty(UncertaintyMeasure measure, std::span<const double> distribution, double assigned = 0.0) {
    if (distribution.empty()) {
        throw ArgumentError("empty tag distribution");
    }
    double total = 0;
    for (double p : distribution) {
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-6) {
        throw ArgumentError("tag distribution is not normalized (sum " + std::to_string(total) + ")");
    }
    double value = 0;
    switch (measure) {
        case UncertaintyMeasure::TE:
            for (double p : distribution) {
                if (p > 0) {
                    value -= p * std::log(p);
                }
            }
            value = std::min(value, std::log(static_cast<double>(distribution.size())));
            break;
        case UncertaintyMeasure::TP:
            value = 1.0 - *std::max_element(distribution.begin(), distribution.end());
            value = std::min(value, 1.0 - 1.0 / static_cast<double>(distribution.size()));
            break;
        case UncertaintyMeasure::AP:
            value = 1.0 - assigned;
            break;
        case UncertaintyMeasure::TM: {
            double first = -1, second = -1;
            for (double p : distribution) {
                if (p > first) {
                    second = first;
                    first = p;
                } else if (p > second) {
                    second = p;
                }
            }
            value = 1.0 - (first - std::max(second, 0.0));
            break;
        }
    }
    return std::max(value, 0.0);
}

inline std::vector<double> token_uncertainties(UncertaintyMeasure measure, const MarginalTable& marginals, const ViterbiResult& best) {
    std::vector<double> out(marginals.length);
    for (std::size_t i = 0; i < marginals.length; ++i) {
        const double assigned = best.assigned_marginals.empty() ? marginals.marginal(i, best.path.at(i)) : best.assigned_marginals[i];
        out[i] = token_uncertainty(measure, marginals.row(i), assigned);
    }
    return out;
}

struct SentenceScore {
    std::size_t sentence_id = 0;
    double value = 0;
};

/**
 * Combine token uncertainties into a sentence score.
 *
 * `positive` flags the positions predicted positive (P'), and `length_density` is p_L(N_x).
 * Only the uncertainty strategies are accepted here.
 */
inline double aggregate(AggregationStrategy strategy, std::span<const double> tau, std::span<const std::uint8_t> positive = {},
                        std::optional<double> length_density = std::nullopt) {
    if (tau.empty()) {
        throw ArgumentError("cannot aggregate an empty sentence");
    }
    auto positive_sum = [&]() {
        if (positive.size() != tau.size()) {
            throw ArgumentError(std::string(to_string(strategy)) + " needs the predicted positive set");
        }
        double s = 0;
        for (std::size_t i = 0; i < tau.size(); ++i) {
            if (positive[i]) {
                s += tau[i];
            }
        }
        return s;
    };
    switch (strategy) {
        case AggregationStrategy::Single:
            return *std::max_element(tau.begin(), tau.end());
        case AggregationStrategy::Normalized: {
            double s = 0;
            for (double t : tau) {
                s += t;
            }
            return s / static_cast<double>(tau.size());
        }
        case AggregationStrategy::Total: {
            double s = 0;
            for (double t : tau) {
                s += t;
            }
            return s;
        }
        case AggregationStrategy::TotalPos:
            return positive_sum();
        case AggregationStrategy::DnormPos:
            if (!length_density) {
                throw ArgumentError("dnorm_pos needs the token-count density");
            }
            return std::sqrt(*length_density) * positive_sum();
        default:
            throw ArgumentError(std::string(to_string(strategy)) + " is not an uncertainty aggregation");
    }
}

/// Per-position P' membership of a sentence, read from a corpus-wide token mask.
inline std::vector<std::uint8_t> positive_positions(const Sentence& sentence, std::span<const std::uint8_t> token_mask) {
    std::vector<std::uint8_t> out(sentence.size(), 0);
    for (std::size_t i = 0; i < sentence.size(); ++i) {
        const auto g = sentence.tokens[i].global_index;
        out[i] = g < token_mask.size() ? token_mask[g] : 0;
    }
    return out;
}

/**
 * Score one sentence with an uncertainty strategy.
 * `token_mask` is the corpus-wide P' indicator and `density` the fitted p_L.
 */
inline SentenceScore score_sentence(AggregationStrategy strategy, UncertaintyMeasure measure, const Sentence& sentence, const Prediction& prediction,
                                    std::span<const std::uint8_t> token_mask = {}, const TokenCountDensity* density = nullptr) {
    if (needs_positive_set(strategy) && token_mask.empty()) {
        throw ArgumentError(std::string(to_string(strategy)) + " needs the predicted positive set");
    }
    if (needs_density(strategy) && density == nullptr) {
        throw ArgumentError(std::string(to_string(strategy)) + " needs the token-count density");
    }
    const auto tau = token_uncertainties(measure, prediction.marginals, prediction.best);
    std::vector<std::uint8_t> positive;
    if (needs_positive_set(strategy)) {
        positive = positive_positions(sentence, token_mask);
    }
    std::optional<double> px;
    if (density) {
        px = (*density)(static_cast<double>(sentence.size()));
    }
    return {sentence.id, aggregate(strategy, tau, positive, px)};
}

/**
 * Baseline scores: RS draws a uniform key, LSS is the token count, PAS is sqrt(p_L(N_x)) times
 * the number of tokens in P'.
 */
inline SentenceScore baseline_score(AggregationStrategy strategy, const Sentence& sentence, std::span<const std::uint8_t> token_mask,
                                    const TokenCountDensity* density, Rng& rng) {
    switch (strategy) {
        case AggregationStrategy::Random:
            return {sentence.id, rng.uniform01()};
        case AggregationStrategy::Lss:
            return {sentence.id, static_cast<double>(sentence.size())};
        case AggregationStrategy::Pas: {
            if (token_mask.empty()) {
                throw ArgumentError("pas needs the predicted positive set");
            }
            if (density == nullptr) {
                throw ArgumentError("pas needs the token-count density");
            }
            const auto positive = positive_positions(sentence, token_mask);
            const double count = static_cast<double>(std::count(positive.begin(), positive.end(), std::uint8_t{1}));
            return {sentence.id, std::sqrt((*density)(static_cast<double>(sentence.size()))) * count};
        }
        default:
            throw ArgumentError(std::string(to_string(strategy)) + " is not a baseline");
    }
}

struct Selection {
    std::vector<std::size_t> ids;
    bool truncated = false; ///< k exceeded the pool; the whole pool was returned.
};

/// Highest scores first; equal scores go to the lower sentence id.
inline Selection rank_select(std::vector<SentenceScore> scores, std::size_t k) {
    Selection out;
    if (k > scores.size()) {
        out.truncated = true;
        k = scores.size();
    }
    auto better = [](const SentenceScore& a, const SentenceScore& b) {
        if (a.value != b.value) {
            return a.value > b.value;
        }
        return a.sentence_id < b.sentence_id;
    };
    std::partial_sort(scores.begin(), scores.begin() + static_cast<long>(k), scores.end(), better);
    out.ids.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        out.ids.push_back(scores[i].sentence_id);
    }
    return out;
}

}

#endif
