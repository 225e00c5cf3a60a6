#ifndef ALNER_CORPUS_HPP
#define ALNER_CORPUS_HPP

#include "digest.hpp"
#include "error.hpp"
#include "rng.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <compare>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

/**
 * @file corpus.hpp
 *
 * @brief Tokenized corpora with BIO2 gold labels.
 *
 * A corpus is immutable once built. Sentence ids are positions in corpus order,
 * and token global indices are positions in the flattened token stream,
 * which is also the row order of any embedding matrix built for the corpus.
 */

namespace alner {

using TagId = std::uint16_t;

/// Tag index of the "other" label, fixed across every scheme.
inline constexpr TagId kOutside = 0;

/**
 * BIO tag set derived from an ordered list of entity classes.
 *
 * Tag 0 is "O"; class c owns tags 2c+1 ("B-c") and 2c+2 ("I-c").
 */
class LabelScheme {
public:
    LabelScheme() = default;

    explicit LabelScheme(std::vector<std::string> classes) : classes_(std::move(classes)) {
        if (classes_.empty()) {
            throw ArgumentError("label scheme needs at least one entity class");
        }
        std::set<std::string> seen;
        for (const auto& c : classes_) {
            if (c.empty() || c == "O" || !seen.insert(c).second) {
                throw ArgumentError("invalid or duplicate entity class '" + c + "'");
            }
        }
        names_.push_back("O");
        for (const auto& c : classes_) {
            names_.push_back("B-" + c);
            names_.push_back("I-" + c);
        }
    }

    std::size_t num_classes() const { return classes_.size(); }
    std::size_t num_tags() const { return names_.size(); }
    const std::vector<std::string>& classes() const { return classes_; }
    const std::vector<std::string>& tag_names() const { return names_; }

    const std::string& tag_name(TagId tag) const { return names_.at(tag); }

    std::optional<TagId> find_tag(std::string_view name) const {
        for (std::size_t i = 0; i < names_.size(); ++i) {
            if (names_[i] == name) {
                return static_cast<TagId>(i);
            }
        }
        return std::nullopt;
    }

    std::optional<std::size_t> find_class(std::string_view name) const {
        for (std::size_t i = 0; i < classes_.size(); ++i) {
            if (classes_[i] == name) {
                return i;
            }
        }
        return std::nullopt;
    }

    static bool is_outside(TagId tag) { return tag == kOutside; }
    static bool is_begin(TagId tag) { return tag != kOutside && tag % 2 == 1; }
    static bool is_inside(TagId tag) { return tag != kOutside && tag % 2 == 0; }
    static std::size_t class_of(TagId tag) { return (static_cast<std::size_t>(tag) - 1) / 2; }
    static TagId begin_tag(std::size_t cls) { return static_cast<TagId>(2 * cls + 1); }
    static TagId inside_tag(std::size_t cls) { return static_cast<TagId>(2 * cls + 2); }

    bool operator==(const LabelScheme& other) const { return classes_ == other.classes_; }

private:
    std::vector<std::string> classes_;
    std::vector<std::string> names_;
};

struct Token {
    std::string surface;
    std::string pos; ///< Empty when the corpus carries no POS column.
    TagId gold = kOutside;
    std::size_t global_index = 0;
};

struct Sentence {
    std::size_t id = 0;
    std::vector<Token> tokens;

    std::size_t size() const { return tokens.size(); }

    std::vector<TagId> gold_tags() const {
        std::vector<TagId> out;
        out.reserve(tokens.size());
        for (const auto& t : tokens) {
            out.push_back(t.gold);
        }
        return out;
    }

    std::size_t positive_count() const {
        return static_cast<std::size_t>(std::count_if(tokens.begin(), tokens.end(), [](const Token& t) { return t.gold != kOutside; }));
    }
};

/// Raw token before ids are assigned.
struct TokenRecord {
    std::string surface;
    std::string pos;
    TagId gold = kOutside;
};

struct EntitySpan {
    std::size_t cls = 0;
    std::size_t start = 0; ///< Inclusive.
    std::size_t end = 0;   ///< Inclusive.

    auto operator<=>(const EntitySpan&) const = default;
};

/**
 * Repair a tag sequence to BIO2: an I-tag that does not continue an entity of the same class becomes a B-tag.
 */
inline void normalize_bio2(std::span<TagId> tags) {
    TagId previous = kOutside;
    for (auto& tag : tags) {
        if (LabelScheme::is_inside(tag)) {
            const auto cls = LabelScheme::class_of(tag);
            if (previous == kOutside || LabelScheme::class_of(previous) != cls) {
                tag = LabelScheme::begin_tag(cls);
            }
        }
        previous = tag;
    }
}

/**
 * Maximal entity spans of a tag sequence.
 * A B-tag opens a span, and contiguous I-tags of the same class extend it.
 * Stray I-tags are treated as openers, so unnormalized input yields the same spans as its BIO2 repair.
 */
inline std::vector<EntitySpan> extract_spans(std::span<const TagId> tags) {
    std::vector<EntitySpan> spans;
    for (std::size_t i = 0; i < tags.size(); ++i) {
        const TagId tag = tags[i];
        if (tag == kOutside) {
            continue;
        }
        const auto cls = LabelScheme::class_of(tag);
        const bool continues = LabelScheme::is_inside(tag) && !spans.empty() && spans.back().end + 1 == i && spans.back().cls == cls;
        if (continues) {
            spans.back().end = i;
        } else {
            spans.push_back({cls, i, i});
        }
    }
    return spans;
}

inline std::vector<EntitySpan> extract_spans(const Sentence& sentence) {
    const auto tags = sentence.gold_tags();
    return extract_spans(tags);
}

/// Inverse of extract_spans for BIO2 sequences.
inline std::vector<TagId> encode_spans(std::size_t length, std::span<const EntitySpan> spans) {
    std::vector<TagId> tags(length, kOutside);
    for (const auto& span : spans) {
        if (span.start > span.end || span.end >= length) {
            throw ArgumentError("entity span out of range");
        }
        tags[span.start] = LabelScheme::begin_tag(span.cls);
        for (std::size_t i = span.start + 1; i <= span.end; ++i) {
            tags[i] = LabelScheme::inside_tag(span.cls);
        }
    }
    return tags;
}

/**
 * Digest of the token stream: SHA-256 over every surface followed by '\n',
 * with one extra '\n' closing each sentence. Labels are not part of the digest.
 */
inline Digest token_stream_digest(const std::vector<Sentence>& sentences) {
    Sha256 hasher;
    for (const auto& s : sentences) {
        for (const auto& t : s.tokens) {
            hasher.update(t.surface).update("\n");
        }
        hasher.update("\n");
    }
    return hasher.finish();
}

class Corpus {
public:
    Corpus() = default;

    /**
     * Assemble a corpus, assigning sentence ids and token global indices in order.
     * Tags are BIO2-normalized.
     */
    Corpus(std::vector<std::vector<TokenRecord>> sentences, LabelScheme scheme, bool has_pos)
        : scheme_(std::move(scheme)), has_pos_(has_pos) {
        if (sentences.empty()) {
            throw DataError("corpus has zero sentences");
        }
        sentences_.reserve(sentences.size());
        std::size_t next_index = 0;
        for (auto& records : sentences) {
            if (records.empty()) {
                throw DataError("corpus contains an empty sentence");
            }
            Sentence s;
            s.id = sentences_.size();
            std::vector<TagId> tags;
            tags.reserve(records.size());
            for (const auto& r : records) {
                if (r.gold >= scheme_.num_tags()) {
                    throw DataError("tag index outside label scheme");
                }
                tags.push_back(r.gold);
            }
            normalize_bio2(tags);
            for (std::size_t i = 0; i < records.size(); ++i) {
                s.tokens.push_back({std::move(records[i].surface), has_pos ? std::move(records[i].pos) : std::string{}, tags[i], next_index++});
            }
            sentences_.push_back(std::move(s));
        }
        token_count_ = next_index;
        digest_ = token_stream_digest(sentences_);
    }

    const std::vector<Sentence>& sentences() const { return sentences_; }
    const Sentence& sentence(std::size_t id) const { return sentences_.at(id); }
    std::size_t size() const { return sentences_.size(); }
    std::size_t token_count() const { return token_count_; }
    const LabelScheme& scheme() const { return scheme_; }
    bool has_pos() const { return has_pos_; }
    const Digest& manifest_hash() const { return digest_; }

private:
    std::vector<Sentence> sentences_;
    LabelScheme scheme_;
    bool has_pos_ = false;
    std::size_t token_count_ = 0;
    Digest digest_{};
};

/**
 * Column roles for CoNLL-style files. Negative indices count from the end of the row.
 */
struct ColumnLayout {
    int token_column = 0;
    std::optional<int> pos_column;
    int tag_column = -1;
    /// Fixed entity classes; when empty, classes are discovered and sorted by name.
    std::vector<std::string> classes;
};

namespace detail {

inline std::vector<std::string_view> split_whitespace(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) {
            ++i;
        }
        const std::size_t start = i;
        while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) {
            ++i;
        }
        if (i > start) {
            out.push_back(line.substr(start, i - start));
        }
    }
    return out;
}

inline std::string_view column_at(const std::vector<std::string_view>& cols, int index, std::size_t line_no) {
    const long n = static_cast<long>(cols.size());
    const long resolved = index < 0 ? n + index : index;
    if (resolved < 0 || resolved >= n) {
        throw DataError("line " + std::to_string(line_no) + ": missing column " + std::to_string(index));
    }
    return cols[static_cast<std::size_t>(resolved)];
}

struct RawTag {
    char prefix; ///< 'O', 'B' or 'I'
    std::string cls;
};

inline RawTag parse_tag(std::string_view tag, std::size_t line_no) {
    if (tag == "O") {
        return {'O', {}};
    }
    if (tag.size() > 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-') {
        return {tag[0], std::string(tag.substr(2))};
    }
    throw DataError("line " + std::to_string(line_no) + ": unknown tag string '" + std::string(tag) + "'");
}

}

/**
 * Parse CoNLL column text from a stream.
 * Blank lines separate sentences, and -DOCSTART- lines are skipped.
 */
inline Corpus parse_conll(std::istream& in, const ColumnLayout& layout) {
    struct Row {
        std::string surface, pos;
        detail::RawTag tag;
    };
    std::vector<std::vector<Row>> raw;
    std::vector<Row> current;
    std::string line;
    std::size_t line_no = 0;
    auto flush = [&]() {
        if (!current.empty()) {
            raw.push_back(std::move(current));
            current.clear();
        }
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        const auto cols = detail::split_whitespace(line);
        if (cols.empty()) {
            flush();
            continue;
        }
        const auto surface = detail::column_at(cols, layout.token_column, line_no);
        if (surface == "-DOCSTART-") {
            flush();
            continue;
        }
        Row row;
        row.surface = std::string(surface);
        if (layout.pos_column) {
            row.pos = std::string(detail::column_at(cols, *layout.pos_column, line_no));
        }
        row.tag = detail::parse_tag(detail::column_at(cols, layout.tag_column, line_no), line_no);
        current.push_back(std::move(row));
    }
    flush();
    if (raw.empty()) {
        throw DataError("corpus has zero sentences");
    }

    std::vector<std::string> classes = layout.classes;
    if (classes.empty()) {
        std::set<std::string> found;
        for (const auto& s : raw) {
            for (const auto& r : s) {
                if (r.tag.prefix != 'O') {
                    found.insert(r.tag.cls);
                }
            }
        }
        classes.assign(found.begin(), found.end());
        if (classes.empty()) {
            // All-O corpora still need a well-formed scheme.
            classes.push_back("ENTITY");
        }
    }
    LabelScheme scheme(classes);

    std::vector<std::vector<TokenRecord>> records;
    records.reserve(raw.size());
    for (auto& s : raw) {
        std::vector<TokenRecord> out;
        out.reserve(s.size());
        for (auto& r : s) {
            TagId tag = kOutside;
            if (r.tag.prefix != 'O') {
                const auto cls = scheme.find_class(r.tag.cls);
                if (!cls) {
                    throw DataError("unknown tag string '" + std::string(1, r.tag.prefix) + "-" + r.tag.cls + "'");
                }
                tag = r.tag.prefix == 'B' ? LabelScheme::begin_tag(*cls) : LabelScheme::inside_tag(*cls);
            }
            out.push_back({std::move(r.surface), std::move(r.pos), tag});
        }
        records.push_back(std::move(out));
    }
    return Corpus(std::move(records), std::move(scheme), layout.pos_column.has_value());
}

inline Corpus load_conll(const std::string& path, const ColumnLayout& layout) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot read corpus file '" + path + "'");
    }
    return parse_conll(in, layout);
}

/// Write a corpus back as "surface [pos] tag" rows with blank-line separators.
inline void write_conll(const Corpus& corpus, std::ostream& out) {
    bool first = true;
    for (const auto& s : corpus.sentences()) {
        if (!first) {
            out << '\n';
        }
        first = false;
        for (const auto& t : s.tokens) {
            out << t.surface;
            if (corpus.has_pos()) {
                out << ' ' << t.pos;
            }
            out << ' ' << corpus.scheme().tag_name(t.gold) << '\n';
        }
    }
}

/// Sentence ids of a train/validation/test partition, each sorted ascending.
struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
};

/**
 * Seeded random partition. Sizes are round(f0*n) and round(f1*n), with the test split taking the remainder.
 */
inline Split split_corpus(const Corpus& corpus, std::array<double, 3> fractions, std::uint64_t seed) {
    const double total = fractions[0] + fractions[1] + fractions[2];
    if (std::abs(total - 1.0) > 1e-9 || fractions[0] <= 0 || fractions[1] <= 0 || fractions[2] <= 0) {
        throw ArgumentError("split fractions must be positive and sum to 1");
    }
    const std::size_t n = corpus.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        order[i] = i;
    }
    Rng rng(seed);
    rng.shuffle(order);

    std::size_t n_train = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n)));
    std::size_t n_val = static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n)));
    n_train = std::min(n_train, n);
    n_val = std::min(n_val, n - n_train);

    Split out;
    out.train.assign(order.begin(), order.begin() + static_cast<long>(n_train));
    out.validation.assign(order.begin() + static_cast<long>(n_train), order.begin() + static_cast<long>(n_train + n_val));
    out.test.assign(order.begin() + static_cast<long>(n_train + n_val), order.end());
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.validation.begin(), out.validation.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

inline std::vector<std::size_t> read_id_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot read split file '" + path + "'");
    }
    std::vector<std::size_t> ids;
    std::string line;
    while (std::getline(in, line)) {
        const auto cols = detail::split_whitespace(line);
        if (cols.empty()) {
            continue;
        }
        try {
            ids.push_back(static_cast<std::size_t>(std::stoull(std::string(cols[0]))));
        } catch (const std::exception&) {
            throw DataError("split file '" + path + "' contains a non-numeric id");
        }
    }
    return ids;
}

/**
 * Partition given by explicit id lists. The lists must be disjoint and cover the corpus.
 */
inline Split split_from_ids(const Corpus& corpus, std::vector<std::size_t> train, std::vector<std::size_t> validation, std::vector<std::size_t> test) {
    std::vector<int> seen(corpus.size(), 0);
    for (const auto* part : {&train, &validation, &test}) {
        for (auto id : *part) {
            if (id >= corpus.size()) {
                throw DataError("split references unknown sentence id " + std::to_string(id));
            }
            if (seen[id]++) {
                throw DataError("sentence id " + std::to_string(id) + " appears in more than one split");
            }
        }
    }
    if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
        throw DataError("split files do not cover every sentence");
    }
    Split out{std::move(train), std::move(validation), std::move(test)};
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.validation.begin(), out.validation.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

inline Split split_from_files(const Corpus& corpus, const std::string& train_path, const std::string& validation_path, const std::string& test_path) {
    return split_from_ids(corpus, read_id_file(train_path), read_id_file(validation_path), read_id_file(test_path));
}

struct CorpusStats {
    std::size_t n_sentences = 0;
    std::size_t n_tokens = 0;
    std::size_t n_positive = 0;
    double mean_tokens_per_sentence = 0;
    double mean_positive_per_sentence = 0;
    double positive_fraction = 0;
};

inline CorpusStats corpus_stats(const Corpus& corpus, std::span<const std::size_t> ids) {
    CorpusStats stats;
    for (auto id : ids) {
        const auto& s = corpus.sentence(id);
        stats.n_sentences += 1;
        stats.n_tokens += s.size();
        stats.n_positive += s.positive_count();
    }
    if (stats.n_sentences == 0) {
        throw ArgumentError("statistics of an empty sentence set");
    }
    stats.mean_tokens_per_sentence = static_cast<double>(stats.n_tokens) / static_cast<double>(stats.n_sentences);
    stats.mean_positive_per_sentence = static_cast<double>(stats.n_positive) / static_cast<double>(stats.n_sentences);
    stats.positive_fraction = static_cast<double>(stats.n_positive) / static_cast<double>(stats.n_tokens);
    return stats;
}

inline CorpusStats corpus_stats(const Corpus& corpus) {
    std::vector<std::size_t> all(corpus.size());
    for (std::size_t i = 0; i < all.size(); ++i) {
        all[i] = i;
    }
    return corpus_stats(corpus, all);
}

}

#endif
