#ifndef ALNER_CONFIG_HPP
#define ALNER_CONFIG_HPP

#include "al_engine.hpp"
#include "corpus.hpp"
#include "embeddings.hpp"
#include "error.hpp"
#include "pca.hpp"
#include "scoring.hpp"
#include "synth.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

/**
 * @file config.hpp
 *
 * @brief Experiment configuration files (JSON) and the dataset they describe.
 *
 * Every section is validated before a run starts. Unknown keys are rejected and every error
 * names the offending key by its dotted path, e.g. `al.m`. The schema is documented in
 * docs/formats.md.
 */

namespace alner {

/// A configuration value failed validation. `key()` is the dotted path of the offending key.
class ConfigError : public ArgumentError {
public:
    ConfigError(std::string key, const std::string& message) : ArgumentError("config key '" + key + "': " + message), key_(std::move(key)) {}

    const std::string& key() const { return key_; }

private:
    std::string key_;
};

struct CorpusFileSource {
    std::string path;
    ColumnLayout layout;
};

struct SyntheticCorpusSource {
    SyntheticCorpusSpec spec;
    std::uint64_t seed = 1;
};

enum class MeanLayout {
    Separated, ///< Every pair of class means exactly `separation` apart.
    Offset,    ///< "O" at the origin; entity classes at `separation` along one shared axis plus `class_offset` along their own.
};

struct SyntheticEmbeddingSource {
    std::size_t dim = 16;
    MeanLayout layout = MeanLayout::Separated;
    double separation = 10.0;
    double class_offset = 1.0;
    double noise = 1.0;
    double lexical_scale = 0.0;
    std::uint64_t seed = 1;
};

struct EmbeddingFileSource {
    std::string path;
};

struct SplitFractions {
    std::array<double, 3> fractions{0.68, 0.16, 0.16};
    std::uint64_t seed = 1;
};

struct SplitFiles {
    std::string train;
    std::string validation;
    std::string test;
};

struct ExperimentConfig {
    std::variant<CorpusFileSource, SyntheticCorpusSource> corpus;
    std::variant<EmbeddingFileSource, SyntheticEmbeddingSource> embeddings;
    std::optional<PcaTarget> pca;
    std::variant<SplitFractions, SplitFiles> split;
    std::vector<QueryMethod> methods;
    ALConfig al; ///< Shared settings; `al.method` is replaced per entry of `methods`.
    std::optional<std::string> output_dir;
    nlohmann::json source; ///< The validated document, kept for snapshots.
};

namespace detail {

/// Reads one JSON object, remembering which keys were consumed so the rest can be rejected.
class ConfigSection {
public:
    ConfigSection(const nlohmann::json& node, std::string path) : node_(node), path_(std::move(path)) {
        if (!node_.is_object()) {
            throw ConfigError(path_.empty() ? "<root>" : path_, "must be an object");
        }
    }

    const std::string& path() const { return path_; }

    std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    bool has(const std::string& key) {
        seen_.insert(key);
        return node_.contains(key) && !node_.at(key).is_null();
    }

    const nlohmann::json& raw(const std::string& key) {
        if (!has(key)) {
            throw ConfigError(key_path(key), "is required");
        }
        return node_.at(key);
    }

    ConfigSection section(const std::string& key) { return ConfigSection(raw(key), key_path(key)); }

    std::string string(const std::string& key) {
        const auto& v = raw(key);
        if (!v.is_string()) {
            throw ConfigError(key_path(key), "must be a string");
        }
        return v.get<std::string>();
    }

    bool boolean(const std::string& key) {
        const auto& v = raw(key);
        if (!v.is_boolean()) {
            throw ConfigError(key_path(key), "must be true or false");
        }
        return v.get<bool>();
    }

    double number(const std::string& key) {
        const auto& v = raw(key);
        if (!v.is_number()) {
            throw ConfigError(key_path(key), "must be a number");
        }
        return v.get<double>();
    }

    std::int64_t integer(const std::string& key) {
        const auto& v = raw(key);
        if (!v.is_number_integer()) {
            throw ConfigError(key_path(key), "must be an integer");
        }
        return v.get<std::int64_t>();
    }

    std::uint64_t count(const std::string& key, std::uint64_t min = 0) {
        const auto v = integer(key);
        if (v < 0 || static_cast<std::uint64_t>(v) < min) {
            throw ConfigError(key_path(key), "must be an integer >= " + std::to_string(min));
        }
        return static_cast<std::uint64_t>(v);
    }

    double positive(const std::string& key) {
        const double v = number(key);
        if (!(v > 0)) {
            throw ConfigError(key_path(key), "must be positive");
        }
        return v;
    }

    double non_negative(const std::string& key) {
        const double v = number(key);
        if (!(v >= 0)) {
            throw ConfigError(key_path(key), "must be non-negative");
        }
        return v;
    }

    double fraction(const std::string& key) {
        const double v = number(key);
        if (!(v >= 0 && v <= 1)) {
            throw ConfigError(key_path(key), "must lie in [0, 1]");
        }
        return v;
    }

    std::vector<std::string> strings(const std::string& key) {
        const auto& v = raw(key);
        if (!v.is_array()) {
            throw ConfigError(key_path(key), "must be an array of strings");
        }
        std::vector<std::string> out;
        for (const auto& item : v) {
            if (!item.is_string()) {
                throw ConfigError(key_path(key), "must be an array of strings");
            }
            out.push_back(item.get<std::string>());
        }
        return out;
    }

    /// Throws on the first key that was never asked for.
    void finish() const {
        for (const auto& [key, value] : node_.items()) {
            if (!seen_.contains(key)) {
                throw ConfigError(key_path(key), "unknown key");
            }
        }
    }

private:
    const nlohmann::json& node_;
    std::string path_;
    std::set<std::string> seen_;
};

inline void exactly_one_of(ConfigSection& s, const std::string& a, const std::string& b, const std::string& where) {
    const bool has_a = s.has(a), has_b = s.has(b);
    if (has_a == has_b) {
        throw ConfigError(where, "needs exactly one of '" + a + "' or '" + b + "'");
    }
}

inline std::variant<CorpusFileSource, SyntheticCorpusSource> parse_corpus(ConfigSection s) {
    exactly_one_of(s, "path", "synthetic", s.path());
    if (s.has("path")) {
        CorpusFileSource src;
        src.path = s.string("path");
        if (s.has("token_column")) {
            src.layout.token_column = static_cast<int>(s.integer("token_column"));
        }
        if (s.has("pos_column")) {
            src.layout.pos_column = static_cast<int>(s.integer("pos_column"));
        }
        if (s.has("tag_column")) {
            src.layout.tag_column = static_cast<int>(s.integer("tag_column"));
        }
        if (s.has("classes")) {
            src.layout.classes = s.strings("classes");
        }
        s.finish();
        return src;
    }
    auto g = s.section("synthetic");
    SyntheticCorpusSource src;
    auto& spec = src.spec;
    if (g.has("sentences")) {
        spec.sentences = g.count("sentences", 1);
    }
    if (g.has("classes")) {
        spec.classes = g.strings("classes");
    }
    if (g.has("regular_median_length")) {
        spec.regular_median_length = g.positive("regular_median_length");
    }
    if (g.has("plain_median_length")) {
        spec.plain_median_length = g.positive("plain_median_length");
    }
    if (g.has("length_sigma")) {
        spec.length_sigma = g.non_negative("length_sigma");
    }
    if (g.has("max_length")) {
        spec.max_length = g.count("max_length", 1);
    }
    if (g.has("plain_share")) {
        spec.plain_share = g.fraction("plain_share");
    }
    if (g.has("regular_entity_rate")) {
        spec.regular_entity_rate = g.fraction("regular_entity_rate");
    }
    if (g.has("plain_entity_rate")) {
        spec.plain_entity_rate = g.fraction("plain_entity_rate");
    }
    if (g.has("max_entity_length")) {
        spec.max_entity_length = g.count("max_entity_length", 1);
    }
    if (g.has("entity_vocabulary")) {
        spec.entity_vocabulary = g.count("entity_vocabulary", 1);
    }
    if (g.has("outside_vocabulary")) {
        spec.outside_vocabulary = g.count("outside_vocabulary", 1);
    }
    if (g.has("zipf_exponent")) {
        spec.zipf_exponent = g.non_negative("zipf_exponent");
    }
    if (g.has("shared_entity_words")) {
        spec.shared_entity_words = g.fraction("shared_entity_words");
    }
    if (g.has("capitalized_outside_words")) {
        spec.capitalized_outside_words = g.fraction("capitalized_outside_words");
    }
    if (g.has("with_pos")) {
        spec.with_pos = g.boolean("with_pos");
    }
    if (g.has("seed")) {
        src.seed = g.count("seed");
    }
    g.finish();
    s.finish();
    return src;
}

inline std::variant<EmbeddingFileSource, SyntheticEmbeddingSource> parse_embeddings(ConfigSection s) {
    exactly_one_of(s, "path", "synthetic", s.path());
    if (s.has("path")) {
        EmbeddingFileSource src{s.string("path")};
        s.finish();
        return src;
    }
    auto g = s.section("synthetic");
    SyntheticEmbeddingSource src;
    if (g.has("dim")) {
        src.dim = g.count("dim", 1);
    }
    if (g.has("layout")) {
        const auto layout = g.string("layout");
        if (layout == "separated") {
            src.layout = MeanLayout::Separated;
        } else if (layout == "offset") {
            src.layout = MeanLayout::Offset;
        } else {
            throw ConfigError(g.key_path("layout"), "must be \"separated\" or \"offset\"");
        }
    }
    if (g.has("separation")) {
        src.separation = g.positive("separation");
    }
    if (g.has("class_offset")) {
        src.class_offset = g.non_negative("class_offset");
    }
    if (g.has("noise")) {
        src.noise = g.non_negative("noise");
    }
    if (g.has("lexical_scale")) {
        src.lexical_scale = g.non_negative("lexical_scale");
    }
    if (g.has("seed")) {
        src.seed = g.count("seed");
    }
    g.finish();
    s.finish();
    return src;
}

inline std::optional<PcaTarget> parse_pca(ConfigSection s) {
    exactly_one_of(s, "components", "variance", s.path());
    std::optional<PcaTarget> out;
    if (s.has("components")) {
        out = PcaTarget::components(s.count("components", 1));
    } else {
        const double v = s.number("variance");
        if (!(v > 0 && v <= 1)) {
            throw ConfigError(s.key_path("variance"), "must lie in (0, 1]");
        }
        out = PcaTarget::variance(v);
    }
    s.finish();
    return out;
}

inline std::variant<SplitFractions, SplitFiles> parse_split(ConfigSection s) {
    if (s.has("train") || s.has("validation") || s.has("test")) {
        SplitFiles files{s.string("train"), s.string("validation"), s.string("test")};
        s.finish();
        return files;
    }
    SplitFractions out;
    if (s.has("fractions")) {
        const auto& v = s.raw("fractions");
        if (!v.is_array() || v.size() != 3 || !std::all_of(v.begin(), v.end(), [](const auto& x) { return x.is_number(); })) {
            throw ConfigError(s.key_path("fractions"), "must be an array of three numbers");
        }
        double total = 0;
        for (std::size_t i = 0; i < 3; ++i) {
            out.fractions[i] = v[i].template get<double>();
            if (!(out.fractions[i] > 0)) {
                throw ConfigError(s.key_path("fractions"), "entries must be positive");
            }
            total += out.fractions[i];
        }
        if (std::abs(total - 1.0) > 1e-9) {
            throw ConfigError(s.key_path("fractions"), "must sum to 1");
        }
    }
    if (s.has("seed")) {
        out.seed = s.count("seed");
    }
    s.finish();
    return out;
}

inline void parse_stop(ConfigSection s, StopCriteria& stop) {
    if (s.has("token_budget")) {
        stop.token_budget = s.count("token_budget", 1);
    }
    if (s.has("sentence_budget")) {
        stop.sentence_budget = s.count("sentence_budget", 1);
    }
    if (s.has("target_f1")) {
        const double v = s.number("target_f1");
        if (!(v > 0 && v <= 1)) {
            throw ConfigError(s.key_path("target_f1"), "must lie in (0, 1]");
        }
        stop.target_f1 = v;
    }
    if (s.has("convergence")) {
        auto c = s.section("convergence");
        ConvergenceRule rule;
        if (c.has("min_gain")) {
            rule.min_gain = c.non_negative("min_gain");
        }
        if (c.has("patience")) {
            rule.patience = c.count("patience", 1);
        }
        c.finish();
        stop.convergence = rule;
    }
    s.finish();
}

inline void parse_al(ConfigSection s, ExperimentConfig& cfg) {
    auto& al = cfg.al;
    if (s.has("m")) {
        const auto& v = s.raw("m");
        if (!v.is_number_integer() || v.get<std::int64_t>() < 0 || v.get<std::int64_t>() > 40) {
            throw ConfigError(s.key_path("m"), "must be an integer in [0, 40]");
        }
        al.m = static_cast<unsigned>(v.get<std::int64_t>());
    }
    if (s.has("methods")) {
        const auto names = s.strings("methods");
        if (names.empty()) {
            throw ConfigError(s.key_path("methods"), "must name at least one method");
        }
        for (const auto& name : names) {
            const auto method = parse_method(name);
            if (!method) {
                throw ConfigError(s.key_path("methods"), "unknown method '" + name + "'");
            }
            cfg.methods.push_back(*method);
        }
    } else {
        cfg.methods.push_back(al.method);
    }
    if (s.has("max_iterations")) {
        al.max_iterations = s.count("max_iterations");
    }
    if (s.has("n_repeats")) {
        al.n_repeats = s.count("n_repeats", 1);
    }
    if (s.has("base_seed")) {
        al.base_seed = s.count("base_seed");
    }
    if (s.has("stop")) {
        parse_stop(s.section("stop"), al.stop);
    }
    if (s.has("record_wall_time")) {
        al.record_wall_time = s.boolean("record_wall_time");
    }
    if (s.has("recompute_positive_set")) {
        al.recompute_positive_set = s.boolean("recompute_positive_set");
    }
    if (s.has("export_positive_csv")) {
        al.export_positive_csv = s.boolean("export_positive_csv");
    }
    if (s.has("suggest_tags")) {
        al.suggest_tags = s.boolean("suggest_tags");
    }
    s.finish();
}

inline void parse_positive_id(ConfigSection s, PositiveIdParams& p) {
    if (s.has("n_neighbors")) {
        p.umap.n_neighbors = s.count("n_neighbors", 2);
    }
    if (s.has("n_epochs")) {
        p.umap.n_epochs = static_cast<int>(s.count("n_epochs", 1));
    }
    if (s.has("min_dist")) {
        p.umap.min_dist = s.non_negative("min_dist");
    }
    if (s.has("spread")) {
        p.umap.spread = s.positive("spread");
    }
    if (s.has("learning_rate")) {
        p.umap.learning_rate = s.positive("learning_rate");
    }
    if (s.has("negative_sample_rate")) {
        p.umap.negative_sample_rate = static_cast<int>(s.count("negative_sample_rate", 1));
    }
    if (s.has("local_connectivity")) {
        p.umap.local_connectivity = s.positive("local_connectivity");
    }
    if (s.has("target_weight")) {
        const double v = s.fraction("target_weight");
        if (v >= 1) {
            throw ConfigError(s.key_path("target_weight"), "must be below 1");
        }
        p.umap.target_weight = v;
    }
    if (s.has("unknown_dist")) {
        p.umap.unknown_dist = s.non_negative("unknown_dist");
    }
    if (s.has("min_cluster_size")) {
        p.min_cluster_size = s.count("min_cluster_size", 2);
    }
    if (s.has("min_samples")) {
        p.min_samples = s.count("min_samples", 1);
    }
    if (s.has("outlier_fraction")) {
        p.outlier_fraction = s.fraction("outlier_fraction");
    }
    if (s.has("outlier_scope")) {
        const auto scope = s.string("outlier_scope");
        if (scope == "all") {
            p.outlier_scope = OutlierScope::AllTokens;
        } else if (scope == "largest_cluster") {
            p.outlier_scope = OutlierScope::LargestCluster;
        } else {
            throw ConfigError(s.key_path("outlier_scope"), "must be \"all\" or \"largest_cluster\"");
        }
    }
    if (s.has("noise_is_positive")) {
        p.noise_is_positive = s.boolean("noise_is_positive");
    }
    s.finish();
}

inline void parse_train(ConfigSection s, TrainConfig& t) {
    if (s.has("max_iterations")) {
        t.max_iterations = static_cast<int>(s.count("max_iterations", 1));
    }
    if (s.has("epsilon")) {
        t.epsilon = s.positive("epsilon");
    }
    if (s.has("period")) {
        t.period = static_cast<int>(s.count("period"));
    }
    if (s.has("delta")) {
        t.delta = s.non_negative("delta");
    }
    if (s.has("c1")) {
        t.c1 = s.non_negative("c1");
    }
    if (s.has("c2")) {
        t.c2 = s.non_negative("c2");
    }
    if (s.has("max_linesearch")) {
        t.max_linesearch = static_cast<int>(s.count("max_linesearch", 1));
    }
    if (s.has("memory")) {
        t.memory = static_cast<int>(s.count("memory", 1));
    }
    if (s.has("l1_enabled")) {
        t.l1_enabled = s.boolean("l1_enabled");
    }
    s.finish();
}

}

/// Validate a parsed document. Relative paths are resolved against `base_dir`.
inline ExperimentConfig parse_experiment_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {}) {
    detail::ConfigSection root(doc, "");
    ExperimentConfig cfg;
    cfg.corpus = detail::parse_corpus(root.section("corpus"));
    cfg.embeddings = detail::parse_embeddings(root.section("embeddings"));
    if (root.has("pca")) {
        cfg.pca = detail::parse_pca(root.section("pca"));
    }
    cfg.split = root.has("split") ? detail::parse_split(root.section("split")) : SplitFractions{};
    if (root.has("al")) {
        detail::parse_al(root.section("al"), cfg);
    } else {
        cfg.methods.push_back(cfg.al.method);
    }
    if (root.has("positive_id")) {
        detail::parse_positive_id(root.section("positive_id"), cfg.al.positive_id);
    }
    if (root.has("train")) {
        detail::parse_train(root.section("train"), cfg.al.train);
    }
    if (root.has("output")) {
        auto out = root.section("output");
        if (out.has("dir")) {
            cfg.output_dir = out.string("dir");
        }
        out.finish();
    }
    root.finish();

    auto resolve = [&](std::string& path) {
        if (!path.empty() && !base_dir.empty() && std::filesystem::path(path).is_relative()) {
            path = (base_dir / path).string();
        }
    };
    if (auto* c = std::get_if<CorpusFileSource>(&cfg.corpus)) {
        resolve(c->path);
    }
    if (auto* e = std::get_if<EmbeddingFileSource>(&cfg.embeddings)) {
        resolve(e->path);
    }
    if (auto* f = std::get_if<SplitFiles>(&cfg.split)) {
        resolve(f->train);
        resolve(f->validation);
        resolve(f->test);
    }
    cfg.source = doc;
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open config file " + path.string());
    }
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_experiment_config(doc, path.parent_path());
}

inline Corpus build_corpus(const ExperimentConfig& cfg) {
    if (const auto* file = std::get_if<CorpusFileSource>(&cfg.corpus)) {
        return load_conll(file->path, file->layout);
    }
    const auto& synth = std::get<SyntheticCorpusSource>(cfg.corpus);
    return synth_corpus(synth.spec, synth.seed);
}

inline EmbeddingMatrix build_embeddings(const ExperimentConfig& cfg, const Corpus& corpus) {
    EmbeddingMatrix matrix;
    if (const auto* file = std::get_if<EmbeddingFileSource>(&cfg.embeddings)) {
        matrix = load_embeddings(file->path, corpus);
    } else {
        const auto& synth = std::get<SyntheticEmbeddingSource>(cfg.embeddings);
        EmbeddingGenerator gen;
        gen.dim = synth.dim;
        gen.noise = synth.noise;
        gen.lexical_scale = synth.lexical_scale;
        if (synth.layout == MeanLayout::Separated) {
            gen.class_means = separated_means(corpus.scheme(), synth.dim, synth.separation, synth.seed);
        } else {
            if (synth.dim < corpus.scheme().num_classes() + 1) {
                throw ConfigError("embeddings.synthetic.dim", "needs one axis more than the number of classes");
            }
            std::vector<double> origin(synth.dim, 0.0);
            gen.class_means["O"] = origin;
            for (std::size_t c = 0; c < corpus.scheme().num_classes(); ++c) {
                auto mean = origin;
                mean[0] = synth.separation;
                mean[c + 1] = synth.class_offset;
                gen.class_means[corpus.scheme().classes()[c]] = std::move(mean);
            }
        }
        matrix = synth_embeddings(corpus, gen, synth.seed);
    }
    if (cfg.pca) {
        matrix = transform(fit_pca(matrix, *cfg.pca), matrix);
    }
    return matrix;
}

inline Split build_split(const ExperimentConfig& cfg, const Corpus& corpus) {
    if (const auto* files = std::get_if<SplitFiles>(&cfg.split)) {
        return split_from_files(corpus, files->train, files->validation, files->test);
    }
    const auto& f = std::get<SplitFractions>(cfg.split);
    return split_corpus(corpus, f.fractions, f.seed);
}

inline std::shared_ptr<Dataset> build_dataset(const ExperimentConfig& cfg) {
    auto corpus = std::make_shared<Corpus>(build_corpus(cfg));
    auto embeddings = std::make_shared<EmbeddingMatrix>(build_embeddings(cfg, *corpus));
    auto split = build_split(cfg, *corpus);
    return std::make_shared<Dataset>(std::move(corpus), std::move(embeddings), std::move(split));
}

}

#endif
