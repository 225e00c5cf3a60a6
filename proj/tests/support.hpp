#ifndef ALNER_TESTS_SUPPORT_HPP
#define ALNER_TESTS_SUPPORT_HPP

#include "alner/al_engine.hpp"
#include "alner/corpus.hpp"
#include "alner/embeddings.hpp"
#include "alner/synth.hpp"

#include <filesystem>
#include <memory>
#include <random>
#include <sstream>
#include <string>

namespace alner::testing {

inline Corpus corpus_from_text(const std::string& text, ColumnLayout layout = {}) {
    std::istringstream in(text);
    return parse_conll(in, layout);
}

/// "Angioedema due to ACE inhibitors: common and inadequately diagnosed" with its two entities.
inline const char* kFigureTwoConll =
    "Angioedema B-Disease\n"
    "due O\n"
    "to O\n"
    "ACE B-Chemical\n"
    "inhibitors: I-Chemical\n"
    "common O\n"
    "and O\n"
    "inadequately O\n"
    "diagnosed O\n";

/// A fresh, empty directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::mt19937_64 gen(std::random_device{}());
        path_ = std::filesystem::temp_directory_path() / ("alner-" + tag + "-" + std::to_string(gen()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

/// Entity classes share one axis at `separation` from "O" and are told apart by `offset` on their own axis.
inline EmbeddingGenerator offset_generator(const LabelScheme& scheme, std::size_t dim, double separation, double offset, double lexical) {
    EmbeddingGenerator g;
    g.dim = dim;
    g.noise = 1.0;
    g.lexical_scale = lexical;
    std::vector<double> origin(dim, 0.0);
    g.class_means["O"] = origin;
    for (std::size_t c = 0; c < scheme.num_classes(); ++c) {
        auto mean = origin;
        mean[0] = separation;
        mean[c + 1] = offset;
        g.class_means[scheme.classes()[c]] = mean;
    }
    return g;
}

/// Small synthetic dataset for engine tests.
inline std::shared_ptr<Dataset> small_dataset(std::size_t sentences = 200, std::uint64_t seed = 5) {
    SyntheticCorpusSpec spec;
    spec.sentences = sentences;
    auto corpus = std::make_shared<Corpus>(synth_corpus(spec, seed));
    auto embeddings = std::make_shared<EmbeddingMatrix>(synth_embeddings(*corpus, offset_generator(corpus->scheme(), 8, 6.0, 1.0, 0.5), seed));
    auto split = split_corpus(*corpus, {0.68, 0.16, 0.16}, 7);
    return std::make_shared<Dataset>(std::move(corpus), std::move(embeddings), std::move(split));
}

/// Fast settings for engine tests: few CRF iterations and a short layout optimization.
inline ALConfig quick_config(const std::string& method, unsigned m = 2, std::size_t max_iterations = 4) {
    ALConfig cfg;
    cfg.m = m;
    cfg.method = *parse_method(method);
    cfg.max_iterations = max_iterations;
    cfg.n_repeats = 1;
    cfg.train.max_iterations = 40;
    cfg.positive_id.umap.n_epochs = 50;
    return cfg;
}

}

#endif
