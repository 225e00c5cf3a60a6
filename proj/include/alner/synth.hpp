#ifndef ALNER_SYNTH_HPP
#define ALNER_SYNTH_HPP

#include "corpus.hpp"
#include "error.hpp"
#include "rng.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

/**
 * @file synth.hpp
 *
 * @brief Synthetic NER corpora for desk-scale experiments.
 *
 * Sentences come in two kinds. Regular sentences are short and carry most entities; plain
 * sentences are long and mostly "O". Words are drawn from Zipf-distributed vocabularies, one per
 * entity class plus one for "O", so rare words keep appearing as the labelled set grows.
 * A share of every class vocabulary is shared with another class, and a share of "O" words is
 * capitalized, so neither the surface nor the title-case flag decides a tag alone.
 */

namespace alner {

struct SyntheticCorpusSpec {
    std::size_t sentences = 2000;
    std::vector<std::string> classes{"PER", "LOC", "ORG"};
    double regular_median_length = 8.0;
    double plain_median_length = 18.0;
    double length_sigma = 0.45;
    std::size_t max_length = 80;
    double plain_share = 0.25;
    double regular_entity_rate = 0.12; ///< Probability that a free position starts an entity.
    double plain_entity_rate = 0.01;
    std::size_t max_entity_length = 3;
    std::size_t entity_vocabulary = 150;
    std::size_t outside_vocabulary = 1500;
    double zipf_exponent = 1.0;
    double shared_entity_words = 0.15;
    double capitalized_outside_words = 0.05;
    bool with_pos = false;
};

namespace detail {

class ZipfSampler {
public:
    ZipfSampler(std::size_t n, double exponent) : cdf_(n) {
        double s = 0;
        for (std::size_t k = 0; k < n; ++k) {
            s += 1.0 / std::pow(static_cast<double>(k + 1), exponent);
            cdf_[k] = s;
        }
        for (auto& c : cdf_) {
            c /= s;
        }
    }

    std::size_t operator()(Rng& rng) const {
        const double u = rng.uniform01();
        const auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
        return std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
    }

private:
    std::vector<double> cdf_;
};

inline std::string capitalize(std::string word) {
    if (!word.empty() && word[0] >= 'a' && word[0] <= 'z') {
        word[0] = static_cast<char>(word[0] - 'a' + 'A');
    }
    return word;
}

}

inline Corpus synth_corpus(const SyntheticCorpusSpec& spec, std::uint64_t seed) {
    if (spec.sentences == 0 || spec.classes.empty() || spec.entity_vocabulary == 0 || spec.outside_vocabulary == 0 || spec.max_entity_length == 0) {
        throw ArgumentError("synthetic corpus spec has an empty dimension");
    }
    LabelScheme scheme(spec.classes);
    Rng rng(seed);
    const std::size_t m = spec.classes.size();

    std::vector<std::string> outside(spec.outside_vocabulary);
    for (std::size_t k = 0; k < outside.size(); ++k) {
        outside[k] = "w" + std::to_string(k);
        if (rng.uniform01() < spec.capitalized_outside_words) {
            outside[k] = detail::capitalize(outside[k]);
        }
    }
    std::vector<std::vector<std::string>> entity(m, std::vector<std::string>(spec.entity_vocabulary));
    for (std::size_t c = 0; c < m; ++c) {
        std::string stem = spec.classes[c];
        std::transform(stem.begin(), stem.end(), stem.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
        for (std::size_t k = 0; k < spec.entity_vocabulary; ++k) {
            entity[c][k] = detail::capitalize(stem + std::to_string(k));
        }
    }
    if (m > 1) {
        for (std::size_t c = 0; c < m; ++c) {
            for (std::size_t k = 0; k < spec.entity_vocabulary; ++k) {
                if (rng.uniform01() < spec.shared_entity_words) {
                    const std::size_t other = (c + 1 + rng.uniform_index(m - 1)) % m;
                    entity[c][k] = entity[other][rng.uniform_index(spec.entity_vocabulary)];
                }
            }
        }
    }
    const detail::ZipfSampler outside_draw(spec.outside_vocabulary, spec.zipf_exponent);
    const detail::ZipfSampler entity_draw(spec.entity_vocabulary, spec.zipf_exponent);

    std::vector<std::vector<TokenRecord>> sentences;
    sentences.reserve(spec.sentences);
    for (std::size_t s = 0; s < spec.sentences; ++s) {
        const bool plain = rng.uniform01() < spec.plain_share;
        const double median = plain ? spec.plain_median_length : spec.regular_median_length;
        const double rate = plain ? spec.plain_entity_rate : spec.regular_entity_rate;
        const double drawn = median * std::exp(spec.length_sigma * rng.normal());
        const auto length = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(drawn)), 1, spec.max_length);

        std::vector<TokenRecord> tokens;
        tokens.reserve(length);
        while (tokens.size() < length) {
            const bool gap_ok = tokens.empty() || tokens.back().gold == kOutside;
            if (gap_ok && rng.uniform01() < rate) {
                const std::size_t cls = rng.uniform_index(m);
                const std::size_t span = std::min(1 + rng.uniform_index(spec.max_entity_length), length - tokens.size());
                for (std::size_t i = 0; i < span; ++i) {
                    const TagId tag = i == 0 ? LabelScheme::begin_tag(cls) : LabelScheme::inside_tag(cls);
                    tokens.push_back({entity[cls][entity_draw(rng)], spec.with_pos ? "NNP" : "", tag});
                }
            } else {
                std::string word = outside[outside_draw(rng)];
                if (tokens.empty()) {
                    word = detail::capitalize(word);
                }
                tokens.push_back({std::move(word), spec.with_pos ? "NN" : "", kOutside});
            }
        }
        sentences.push_back(std::move(tokens));
    }
    return Corpus(std::move(sentences), std::move(scheme), spec.with_pos);
}

}

#endif
