#ifndef ALNER_FEATURES_HPP
#define ALNER_FEATURES_HPP

#include "corpus.hpp"
#include "embeddings.hpp"
#include "error.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

/**
 * @file features.hpp
 *
 * @brief Token features for the CRF.
 *
 * Each position gets features for the previous, current and next token:
 * the N embedding components (real-valued), POS tag when the corpus has one,
 * the lower-cased surface, its last three and last two characters, and the
 * title/digit/lower-case flags. That is (N + 7) * 3 values with POS and (N + 6) * 3 without.
 * Positions outside the sentence use BOS/EOS sentinels with zero-valued embedding slots.
 */

namespace alner {

struct Feature {
    std::uint32_t id = 0;
    double value = 0;
};

using FeatureVector = std::vector<Feature>;
using SentenceFeatures = std::vector<FeatureVector>;

/**
 * Attribute ids for one model. Embedding attributes occupy [0, 3N) in
 * (offset slot, component) order; categorical attributes follow in insertion order.
 */
class FeatureRegistry {
public:
    FeatureRegistry() = default;
    explicit FeatureRegistry(std::size_t embedding_dim) : embedding_dim_(embedding_dim) {}

    std::size_t embedding_dim() const { return embedding_dim_; }
    std::size_t size() const { return 3 * embedding_dim_ + names_.size(); }
    std::size_t categorical_count() const { return names_.size(); }

    std::uint32_t embedding_id(std::size_t slot, std::size_t component) const {
        return static_cast<std::uint32_t>(slot * embedding_dim_ + component);
    }

    std::optional<std::uint32_t> find(const std::string& name) const {
        const auto it = ids_.find(name);
        if (it == ids_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    std::uint32_t intern(const std::string& name) {
        const auto it = ids_.find(name);
        if (it != ids_.end()) {
            return it->second;
        }
        const auto id = static_cast<std::uint32_t>(size());
        ids_.emplace(name, id);
        names_.push_back(name);
        return id;
    }

    std::string name(std::uint32_t id) const {
        if (id < 3 * embedding_dim_) {
            static constexpr const char* slots[] = {"-1", "0", "+1"};
            return std::string(slots[id / embedding_dim_]) + ":emb" + std::to_string(id % embedding_dim_);
        }
        return names_.at(id - 3 * embedding_dim_);
    }

    /// Categorical names in id order.
    const std::vector<std::string>& categorical_names() const { return names_; }

private:
    std::size_t embedding_dim_ = 0;
    std::vector<std::string> names_;
    std::unordered_map<std::string, std::uint32_t> ids_;
};

namespace detail {

inline bool is_upper(unsigned char c) { return c >= 'A' && c <= 'Z'; }
inline bool is_lower(unsigned char c) { return c >= 'a' && c <= 'z'; }

}

inline std::string lowercase(std::string_view text) {
    std::string out(text);
    for (auto& c : out) {
        if (detail::is_upper(static_cast<unsigned char>(c))) {
            c = static_cast<char>(c - 'A' + 'a');
        }
    }
    return out;
}

/// Last `count` UTF-8 code points of `text`.
inline std::string utf8_suffix(std::string_view text, std::size_t count) {
    std::size_t pos = text.size();
    std::size_t taken = 0;
    while (pos > 0 && taken < count) {
        --pos;
        // Skip continuation bytes 10xxxxxx.
        while (pos > 0 && (static_cast<unsigned char>(text[pos]) & 0xC0) == 0x80) {
            --pos;
        }
        ++taken;
    }
    return std::string(text.substr(pos));
}

/// Title case in the sense of Python's str.istitle, restricted to ASCII letters.
inline bool is_title(std::string_view text) {
    bool cased = false;
    bool previous_cased = false;
    for (unsigned char c : text) {
        if (detail::is_upper(c)) {
            if (previous_cased) {
                return false;
            }
            previous_cased = true;
            cased = true;
        } else if (detail::is_lower(c)) {
            if (!previous_cased) {
                return false;
            }
            previous_cased = true;
            cased = true;
        } else {
            previous_cased = false;
        }
    }
    return cased;
}

inline bool is_digit(std::string_view text) {
    if (text.empty()) {
        return false;
    }
    for (unsigned char c : text) {
        if (c < '0' || c > '9') {
            return false;
        }
    }
    return true;
}

inline bool is_lower_word(std::string_view text) {
    bool cased = false;
    for (unsigned char c : text) {
        if (detail::is_upper(c)) {
            return false;
        }
        if (detail::is_lower(c)) {
            cased = true;
        }
    }
    return cased;
}

namespace detail {

template<typename Resolve>
SentenceFeatures featurize_impl(const Sentence& sentence, const EmbeddingMatrix& embeddings, bool has_pos, const FeatureRegistry& registry,
                                Resolve&& resolve) {
    const std::size_t dim = registry.embedding_dim();
    if (embeddings.dim() != dim) {
        throw ArgumentError("embedding width " + std::to_string(embeddings.dim()) + " does not match feature registry width " + std::to_string(dim));
    }
    const std::size_t n = sentence.size();
    SentenceFeatures out(n);
    static constexpr const char* prefixes[] = {"-1:", "0:", "+1:"};

    auto add = [&](FeatureVector& fv, const std::string& name, double value) {
        if (const std::optional<std::uint32_t> id = resolve(name)) {
            fv.push_back({*id, value});
        }
    };

    for (std::size_t i = 0; i < n; ++i) {
        auto& fv = out[i];
        fv.reserve((dim + 7) * 3);
        for (std::size_t slot = 0; slot < 3; ++slot) {
            const long j = static_cast<long>(i) + static_cast<long>(slot) - 1;
            const std::string prefix = prefixes[slot];
            if (j < 0 || j >= static_cast<long>(n)) {
                const std::string sentinel = j < 0 ? "__BOS__" : "__EOS__";
                for (std::size_t d = 0; d < dim; ++d) {
                    fv.push_back({registry.embedding_id(slot, d), 0.0});
                }
                if (has_pos) {
                    add(fv, prefix + "pos=" + sentinel, 1.0);
                }
                add(fv, prefix + "lower=" + sentinel, 1.0);
                add(fv, prefix + "suf3=" + sentinel, 1.0);
                add(fv, prefix + "suf2=" + sentinel, 1.0);
                add(fv, prefix + "istitle", 0.0);
                add(fv, prefix + "isdigit", 0.0);
                add(fv, prefix + "islower", 0.0);
                continue;
            }
            const auto& token = sentence.tokens[static_cast<std::size_t>(j)];
            if (token.global_index >= embeddings.rows()) {
                throw DataError("missing embedding row for token " + std::to_string(token.global_index));
            }
            const auto row = embeddings.row(token.global_index);
            for (std::size_t d = 0; d < dim; ++d) {
                fv.push_back({registry.embedding_id(slot, d), static_cast<double>(row[d])});
            }
            if (has_pos) {
                add(fv, prefix + "pos=" + token.pos, 1.0);
            }
            add(fv, prefix + "lower=" + lowercase(token.surface), 1.0);
            add(fv, prefix + "suf3=" + utf8_suffix(token.surface, 3), 1.0);
            add(fv, prefix + "suf2=" + utf8_suffix(token.surface, 2), 1.0);
            add(fv, prefix + "istitle", is_title(token.surface) ? 1.0 : 0.0);
            add(fv, prefix + "isdigit", is_digit(token.surface) ? 1.0 : 0.0);
            add(fv, prefix + "islower", is_lower_word(token.surface) ? 1.0 : 0.0);
        }
    }
    return out;
}

}

/**
 * Featurize against a fixed registry. Categorical attributes the registry has never
 * seen are dropped, which is the same as giving them zero weight.
 */
inline SentenceFeatures featurize(const Sentence& sentence, const EmbeddingMatrix& embeddings, bool has_pos, const FeatureRegistry& registry) {
    return detail::featurize_impl(sentence, embeddings, has_pos, registry, [&](const std::string& name) { return registry.find(name); });
}

/// Featurize while registering every categorical attribute encountered.
inline SentenceFeatures featurize_and_register(const Sentence& sentence, const EmbeddingMatrix& embeddings, bool has_pos, FeatureRegistry& registry) {
    return detail::featurize_impl(sentence, embeddings, has_pos, registry,
                                  [&](const std::string& name) -> std::optional<std::uint32_t> { return registry.intern(name); });
}

}

#endif
