#ifndef ALNER_EMBEDDINGS_HPP
#define ALNER_EMBEDDINGS_HPP

#include "corpus.hpp"
#include "digest.hpp"
#include "error.hpp"
#include "rng.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

/**
 * @file embeddings.hpp
 *
 * @brief Per-token embedding matrices and the EMBF container.
 *
 * EMBF layout, all integers little-endian:
 *
 * | offset | size | field |
 * |--------|------|-------|
 * | 0  | 4  | magic "EMBF" |
 * | 4  | 4  | version (u32) = 1 |
 * | 8  | 32 | corpus token-stream digest |
 * | 40 | 8  | token count (u64) |
 * | 48 | 4  | dim (u32) |
 * | 52 | count * dim * 4 | float32 rows, row-major |
 */

namespace alner {

static_assert(std::endian::native == std::endian::little, "EMBF I/O assumes a little-endian host");

class EmbeddingMatrix {
public:
    EmbeddingMatrix() = default;

    EmbeddingMatrix(std::size_t rows, std::size_t dim, Digest corpus_hash = {})
        : rows_(rows), dim_(dim), corpus_hash_(corpus_hash), data_(rows * dim, 0.0f) {}

    EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<float> data, Digest corpus_hash = {})
        : rows_(rows), dim_(dim), corpus_hash_(corpus_hash), data_(std::move(data)) {
        if (data_.size() != rows_ * dim_) {
            throw ArgumentError("embedding data size does not match rows * dim");
        }
    }

    std::size_t rows() const { return rows_; }
    std::size_t dim() const { return dim_; }
    const Digest& corpus_hash() const { return corpus_hash_; }
    void set_corpus_hash(const Digest& hash) { corpus_hash_ = hash; }

    std::span<const float> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
    std::span<float> row(std::size_t i) { return {data_.data() + i * dim_, dim_}; }

    const std::vector<float>& data() const { return data_; }
    std::vector<float>& data() { return data_; }

    bool operator==(const EmbeddingMatrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t dim_ = 0;
    Digest corpus_hash_{};
    std::vector<float> data_;
};

namespace detail {

template<typename T>
void write_le(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template<typename T>
T read_le(std::istream& in) {
    T value{};
    if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
        throw DataError("truncated binary file");
    }
    return value;
}

}

inline constexpr std::uint32_t kEmbfVersion = 1;

inline void write_embf(std::ostream& out, const EmbeddingMatrix& matrix) {
    out.write("EMBF", 4);
    detail::write_le<std::uint32_t>(out, kEmbfVersion);
    out.write(reinterpret_cast<const char*>(matrix.corpus_hash().data()), 32);
    detail::write_le<std::uint64_t>(out, matrix.rows());
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(matrix.dim()));
    out.write(reinterpret_cast<const char*>(matrix.data().data()), static_cast<std::streamsize>(matrix.data().size() * sizeof(float)));
}

inline void write_embf(const std::string& path, const EmbeddingMatrix& matrix) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write embedding file '" + path + "'");
    }
    write_embf(out, matrix);
}

inline EmbeddingMatrix read_embf(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "EMBF", 4) != 0) {
        throw DataError("not an EMBF file (bad magic)");
    }
    const auto version = detail::read_le<std::uint32_t>(in);
    if (version != kEmbfVersion) {
        throw DataError("unsupported EMBF version " + std::to_string(version));
    }
    Digest hash{};
    if (!in.read(reinterpret_cast<char*>(hash.data()), 32)) {
        throw DataError("truncated binary file");
    }
    const auto rows = detail::read_le<std::uint64_t>(in);
    const auto dim = detail::read_le<std::uint32_t>(in);
    std::vector<float> data(static_cast<std::size_t>(rows) * dim);
    if (!in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)))) {
        throw DataError("EMBF payload shorter than token_count * dim");
    }
    return EmbeddingMatrix(static_cast<std::size_t>(rows), dim, std::move(data), hash);
}

inline EmbeddingMatrix read_embf(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot read embedding file '" + path + "'");
    }
    return read_embf(in);
}

inline void check_finite(const EmbeddingMatrix& matrix) {
    for (std::size_t i = 0; i < matrix.data().size(); ++i) {
        if (!std::isfinite(matrix.data()[i])) {
            throw DataError("non-finite embedding value at row " + std::to_string(i / std::max<std::size_t>(matrix.dim(), 1)));
        }
    }
}

/**
 * Load an EMBF file and check it against the corpus it claims to describe.
 */
inline EmbeddingMatrix load_embeddings(const std::string& path, const Corpus& corpus) {
    auto matrix = read_embf(path);
    if (matrix.corpus_hash() != corpus.manifest_hash()) {
        throw DataError("embedding file '" + path + "' was built for a different corpus (hash " + to_hex(matrix.corpus_hash()) +
                        ", corpus " + to_hex(corpus.manifest_hash()) + ")");
    }
    if (matrix.rows() != corpus.token_count()) {
        throw DataError("embedding file has " + std::to_string(matrix.rows()) + " rows but corpus has " + std::to_string(corpus.token_count()) + " tokens");
    }
    check_finite(matrix);
    return matrix;
}

/// Sidecar manifest stored next to an EMBF file as "<path>.manifest".
struct EmbeddingManifest {
    std::string model_id;
    std::string strategy; ///< LL, SL4 or CL4 (or "synthetic")
};

inline void write_manifest(const std::string& embf_path, const EmbeddingManifest& manifest) {
    std::ofstream out(embf_path + ".manifest");
    if (!out) {
        throw DataError("cannot write manifest for '" + embf_path + "'");
    }
    out << "model=" << manifest.model_id << '\n' << "strategy=" << manifest.strategy << '\n';
}

inline EmbeddingManifest read_manifest(const std::string& embf_path) {
    std::ifstream in(embf_path + ".manifest");
    if (!in) {
        throw DataError("missing manifest for '" + embf_path + "'");
    }
    EmbeddingManifest out;
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            continue;
        }
        const auto key = line.substr(0, eq);
        const auto value = line.substr(eq + 1);
        if (key == "model") {
            out.model_id = value;
        } else if (key == "strategy") {
            out.strategy = value;
        }
    }
    return out;
}

/**
 * Parameters for synthetic embeddings: each token is drawn from an isotropic Gaussian
 * around the mean of its gold class ("O" for negatives).
 *
 * When `lexical_scale` is non-zero, every distinct surface form also receives a fixed
 * random offset of that scale, so repeated words land near each other.
 */
struct EmbeddingGenerator {
    std::size_t dim = 0;
    std::map<std::string, std::vector<double>> class_means;
    double noise = 1.0;
    double lexical_scale = 0.0;
};

/**
 * Mean vectors for "O" plus every class in the scheme, drawn as random directions scaled so
 * that every pair of means is at least `separation` apart.
 */
inline std::map<std::string, std::vector<double>> separated_means(const LabelScheme& scheme, std::size_t dim, double separation, std::uint64_t seed) {
    std::vector<std::string> names{"O"};
    names.insert(names.end(), scheme.classes().begin(), scheme.classes().end());
    if (dim < names.size()) {
        throw ArgumentError("need at least one dimension per class to place separated means");
    }
    // Scaled axis vectors with a random sign: pairwise distance is separation exactly.
    Rng rng(seed);
    std::vector<std::size_t> axes(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        axes[i] = i;
    }
    rng.shuffle(axes);
    std::map<std::string, std::vector<double>> out;
    const double scale = separation / std::sqrt(2.0);
    for (std::size_t c = 0; c < names.size(); ++c) {
        std::vector<double> mean(dim, 0.0);
        mean[axes[c]] = (rng.uniform01() < 0.5 ? -1.0 : 1.0) * scale;
        out[names[c]] = std::move(mean);
    }
    return out;
}

inline EmbeddingMatrix synth_embeddings(const Corpus& corpus, const EmbeddingGenerator& spec, std::uint64_t seed) {
    if (spec.dim == 0) {
        throw ArgumentError("generator dimension must be positive");
    }
    std::vector<const std::vector<double>*> means(corpus.scheme().num_tags(), nullptr);
    auto lookup = [&](const std::string& name) -> const std::vector<double>* {
        const auto it = spec.class_means.find(name);
        if (it == spec.class_means.end()) {
            throw ArgumentError("generator has no mean for class '" + name + "'");
        }
        if (it->second.size() != spec.dim) {
            throw ArgumentError("generator mean for class '" + name + "' has wrong dimension");
        }
        return &it->second;
    };
    means[kOutside] = lookup("O");
    for (std::size_t c = 0; c < corpus.scheme().num_classes(); ++c) {
        const auto* m = lookup(corpus.scheme().classes()[c]);
        means[LabelScheme::begin_tag(c)] = m;
        means[LabelScheme::inside_tag(c)] = m;
    }

    std::map<std::string, std::vector<double>> lexical;
    auto lexical_offset = [&](const std::string& surface) -> const std::vector<double>& {
        auto it = lexical.find(surface);
        if (it != lexical.end()) {
            return it->second;
        }
        // Offsets are keyed by the word itself so they do not depend on corpus order.
        Sha256 h;
        const auto d = h.update(surface).finish();
        std::uint64_t key = 0;
        std::memcpy(&key, d.data(), sizeof(key));
        Rng word_rng(mix_seed(seed, key));
        std::vector<double> offset(spec.dim);
        for (auto& v : offset) {
            v = spec.lexical_scale * word_rng.normal();
        }
        return lexical.emplace(surface, std::move(offset)).first->second;
    };

    EmbeddingMatrix out(corpus.token_count(), spec.dim, corpus.manifest_hash());
    Rng rng(seed);
    for (const auto& s : corpus.sentences()) {
        for (const auto& t : s.tokens) {
            auto row = out.row(t.global_index);
            const auto& mean = *means[t.gold];
            for (std::size_t d = 0; d < spec.dim; ++d) {
                double v = mean[d];
                if (spec.noise > 0) {
                    v += spec.noise * rng.normal();
                }
                row[d] = static_cast<float>(v);
            }
            if (spec.lexical_scale > 0) {
                const auto& offset = lexical_offset(t.surface);
                for (std::size_t d = 0; d < spec.dim; ++d) {
                    row[d] += static_cast<float>(offset[d]);
                }
            }
        }
    }
    return out;
}

}

#endif
