#ifndef ALNER_CRF_HPP
#define ALNER_CRF_HPP

#include "corpus.hpp"
#include "embeddings.hpp"
#include "error.hpp"
#include "features.hpp"
#include "lbfgs.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

/**
 * @file crf.hpp
 *
 * @brief First-order linear-chain CRF: exact inference, regularized training and entity-level evaluation.
 *
 * Every (attribute, tag) pair carries a state weight and every (tag, tag) pair a transition weight,
 * including pairs never observed in training. Inference runs in log space.
 */

namespace alner {

class CrfModel {
public:
    CrfModel() = default;

    CrfModel(LabelScheme scheme, FeatureRegistry registry, bool has_pos)
        : scheme_(std::move(scheme)), registry_(std::move(registry)), has_pos_(has_pos),
          weights_(registry_.size() * scheme_.num_tags() + scheme_.num_tags() * scheme_.num_tags(), 0.0) {}

    const LabelScheme& scheme() const { return scheme_; }
    const FeatureRegistry& registry() const { return registry_; }
    bool has_pos() const { return has_pos_; }
    std::size_t num_tags() const { return scheme_.num_tags(); }
    std::size_t num_attributes() const { return registry_.size(); }
    std::size_t transition_offset() const { return num_attributes() * num_tags(); }

    std::vector<double>& weights() { return weights_; }
    const std::vector<double>& weights() const { return weights_; }

    double state(std::size_t attribute, std::size_t tag) const { return weights_[attribute * num_tags() + tag]; }
    double transition(std::size_t from, std::size_t to) const { return weights_[transition_offset() + from * num_tags() + to]; }
    std::span<const double> transitions() const { return {weights_.data() + transition_offset(), num_tags() * num_tags()}; }

    SentenceFeatures featurize(const Sentence& sentence, const EmbeddingMatrix& embeddings) const {
        return alner::featurize(sentence, embeddings, has_pos_, registry_);
    }

private:
    LabelScheme scheme_;
    FeatureRegistry registry_;
    bool has_pos_ = false;
    std::vector<double> weights_;
};

/// Log potentials of one sentence: unary scores (n x M, row-major) and the shared M x M transition scores.
struct Potentials {
    std::size_t length = 0;
    std::size_t tags = 0;
    std::vector<double> unary;
    std::vector<double> transition;

    double at(std::size_t i, std::size_t tag) const { return unary[i * tags + tag]; }
    double trans(std::size_t from, std::size_t to) const { return transition[from * tags + to]; }
};

inline Potentials compute_potentials(const CrfModel& model, const SentenceFeatures& features) {
    const std::size_t M = model.num_tags();
    Potentials pot;
    pot.length = features.size();
    pot.tags = M;
    pot.unary.assign(pot.length * M, 0.0);
    const auto& w = model.weights();
    for (std::size_t i = 0; i < pot.length; ++i) {
        double* row = pot.unary.data() + i * M;
        for (const auto& f : features[i]) {
            if (f.value == 0) {
                continue;
            }
            const double* wf = w.data() + static_cast<std::size_t>(f.id) * M;
            for (std::size_t y = 0; y < M; ++y) {
                row[y] += f.value * wf[y];
            }
        }
    }
    const auto trans = model.transitions();
    pot.transition.assign(trans.begin(), trans.end());
    return pot;
}

/// Unnormalized log score of a tag sequence.
inline double sequence_score(const Potentials& pot, std::span<const TagId> tags) {
    double s = 0;
    for (std::size_t i = 0; i < pot.length; ++i) {
        s += pot.at(i, tags[i]);
        if (i > 0) {
            s += pot.trans(tags[i - 1], tags[i]);
        }
    }
    return s;
}

struct MarginalTable {
    std::size_t length = 0;
    std::size_t tags = 0;
    std::vector<double> unary;    ///< P(y_i = j | x), n x M.
    std::vector<double> pairwise; ///< P(y_{i-1} = a, y_i = b | x) for i >= 1, (n-1) x M x M.
    double log_z = 0;

    double marginal(std::size_t i, std::size_t tag) const { return unary[i * tags + tag]; }
    std::span<const double> row(std::size_t i) const { return {unary.data() + i * tags, tags}; }
    double pair(std::size_t i, std::size_t from, std::size_t to) const { return pairwise[((i - 1) * tags + from) * tags + to]; }
};

namespace detail {

inline double log_sum_exp(const double* values, std::size_t n) {
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        hi = std::max(hi, values[i]);
    }
    if (!std::isfinite(hi)) {
        return hi;
    }
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) {
        s += std::exp(values[i] - hi);
    }
    return hi + std::log(s);
}

}

inline MarginalTable forward_backward(const Potentials& pot) {
    const std::size_t n = pot.length;
    const std::size_t M = pot.tags;
    if (n == 0) {
        throw ArgumentError("forward-backward on an empty sentence");
    }
    std::vector<double> alpha(n * M), beta(n * M), buffer(M);
    for (std::size_t y = 0; y < M; ++y) {
        alpha[y] = pot.at(0, y);
    }
    for (std::size_t i = 1; i < n; ++i) {
        for (std::size_t y = 0; y < M; ++y) {
            for (std::size_t p = 0; p < M; ++p) {
                buffer[p] = alpha[(i - 1) * M + p] + pot.trans(p, y);
            }
            alpha[i * M + y] = detail::log_sum_exp(buffer.data(), M) + pot.at(i, y);
        }
    }
    for (std::size_t y = 0; y < M; ++y) {
        beta[(n - 1) * M + y] = 0;
    }
    for (std::size_t i = n - 1; i-- > 0;) {
        for (std::size_t y = 0; y < M; ++y) {
            for (std::size_t q = 0; q < M; ++q) {
                buffer[q] = pot.trans(y, q) + pot.at(i + 1, q) + beta[(i + 1) * M + q];
            }
            beta[i * M + y] = detail::log_sum_exp(buffer.data(), M);
        }
    }

    MarginalTable table;
    table.length = n;
    table.tags = M;
    table.log_z = detail::log_sum_exp(alpha.data() + (n - 1) * M, M);
    if (!std::isfinite(table.log_z)) {
        throw NumericError("log partition function is not finite; model weights are corrupt");
    }
    table.unary.resize(n * M);
    for (std::size_t i = 0; i < n * M; ++i) {
        table.unary[i] = std::exp(alpha[i] + beta[i] - table.log_z);
    }
    if (n > 1) {
        table.pairwise.resize((n - 1) * M * M);
        for (std::size_t i = 1; i < n; ++i) {
            for (std::size_t a = 0; a < M; ++a) {
                for (std::size_t b = 0; b < M; ++b) {
                    table.pairwise[((i - 1) * M + a) * M + b] =
                        std::exp(alpha[(i - 1) * M + a] + pot.trans(a, b) + pot.at(i, b) + beta[i * M + b] - table.log_z);
                }
            }
        }
    }
    return table;
}

inline MarginalTable forward_backward(const CrfModel& model, const SentenceFeatures& features) {
    return forward_backward(compute_potentials(model, features));
}

struct ViterbiResult {
    std::vector<TagId> path;
    double score = 0;        ///< Unnormalized log score of the path.
    double log_prob = 0;     ///< score - log Z.
    std::vector<double> assigned_marginals; ///< P(y_i = path_i | x).
};

/// Best path by max-product; ties go to the lowest tag index.
inline ViterbiResult viterbi_path(const Potentials& pot) {
    const std::size_t n = pot.length;
    const std::size_t M = pot.tags;
    if (n == 0) {
        throw ArgumentError("Viterbi on an empty sentence");
    }
    std::vector<double> delta(n * M);
    std::vector<std::size_t> back(n * M, 0);
    for (std::size_t y = 0; y < M; ++y) {
        delta[y] = pot.at(0, y);
    }
    for (std::size_t i = 1; i < n; ++i) {
        for (std::size_t y = 0; y < M; ++y) {
            double best = -std::numeric_limits<double>::infinity();
            std::size_t arg = 0;
            for (std::size_t p = 0; p < M; ++p) {
                const double v = delta[(i - 1) * M + p] + pot.trans(p, y);
                if (v > best) {
                    best = v;
                    arg = p;
                }
            }
            delta[i * M + y] = best + pot.at(i, y);
            back[i * M + y] = arg;
        }
    }
    ViterbiResult result;
    result.path.resize(n);
    double best = -std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t y = 0; y < M; ++y) {
        if (delta[(n - 1) * M + y] > best) {
            best = delta[(n - 1) * M + y];
            arg = y;
        }
    }
    result.score = best;
    result.path[n - 1] = static_cast<TagId>(arg);
    for (std::size_t i = n - 1; i > 0; --i) {
        arg = back[i * M + arg];
        result.path[i - 1] = static_cast<TagId>(arg);
    }
    return result;
}

inline ViterbiResult viterbi(const Potentials& pot, const MarginalTable& marginals) {
    auto result = viterbi_path(pot);
    result.log_prob = std::min(0.0, result.score - marginals.log_z);
    result.assigned_marginals.resize(pot.length);
    for (std::size_t i = 0; i < pot.length; ++i) {
        result.assigned_marginals[i] = marginals.marginal(i, result.path[i]);
    }
    return result;
}

inline ViterbiResult viterbi(const CrfModel& model, const SentenceFeatures& features) {
    const auto pot = compute_potentials(model, features);
    return viterbi(pot, forward_backward(pot));
}

/// Marginals and Viterbi decoding of one sentence, the inputs to token uncertainty.
struct Prediction {
    MarginalTable marginals;
    ViterbiResult best;
};

inline Prediction predict(const CrfModel& model, const Sentence& sentence, const EmbeddingMatrix& embeddings) {
    const auto pot = compute_potentials(model, model.featurize(sentence, embeddings));
    Prediction out;
    out.marginals = forward_backward(pot);
    out.best = viterbi(pot, out.marginals);
    return out;
}

/// One featurized training sentence with its labels.
struct TrainingInstance {
    SentenceFeatures features;
    std::vector<TagId> tags;
};

struct Regularization {
    double c1 = 0;
    double c2 = 0;
};

/**
 * Log-likelihood part of the objective: returns sum log p(y | x) and *adds* its gradient
 * (empirical minus expected counts) into `gradient`.
 */
inline double log_likelihood(const CrfModel& model, std::span<const TrainingInstance> data, std::vector<double>& gradient) {
    const std::size_t M = model.num_tags();
    const std::size_t toff = model.transition_offset();
    double total = 0;
    for (const auto& inst : data) {
        const auto pot = compute_potentials(model, inst.features);
        const auto table = forward_backward(pot);
        total += sequence_score(pot, inst.tags) - table.log_z;
        for (std::size_t i = 0; i < pot.length; ++i) {
            const auto gold = inst.tags[i];
            const double* p = table.unary.data() + i * M;
            for (const auto& f : inst.features[i]) {
                if (f.value == 0) {
                    continue;
                }
                double* gf = gradient.data() + static_cast<std::size_t>(f.id) * M;
                for (std::size_t y = 0; y < M; ++y) {
                    gf[y] -= f.value * p[y];
                }
                gf[gold] += f.value;
            }
            if (i > 0) {
                const double* pp = table.pairwise.data() + (i - 1) * M * M;
                for (std::size_t ab = 0; ab < M * M; ++ab) {
                    gradient[toff + ab] -= pp[ab];
                }
                gradient[toff + inst.tags[i - 1] * M + gold] += 1.0;
            }
        }
    }
    if (!std::isfinite(total)) {
        throw NumericError("non-finite log-likelihood");
    }
    return total;
}

struct ObjectiveValue {
    double value = 0;              ///< sum log p - c1 ||w||_1 - c2 ||w||_2^2
    std::vector<double> gradient;  ///< Gradient (subgradient for the L1 part, sign(0) = 0).
};

inline ObjectiveValue objective_and_gradient(const CrfModel& model, std::span<const TrainingInstance> data, Regularization reg) {
    ObjectiveValue out;
    out.gradient.assign(model.weights().size(), 0.0);
    out.value = log_likelihood(model, data, out.gradient);
    const auto& w = model.weights();
    for (std::size_t k = 0; k < w.size(); ++k) {
        out.value -= reg.c1 * std::abs(w[k]) + reg.c2 * w[k] * w[k];
        const double sign = w[k] > 0 ? 1.0 : (w[k] < 0 ? -1.0 : 0.0);
        out.gradient[k] -= reg.c1 * sign + 2.0 * reg.c2 * w[k];
    }
    return out;
}

struct TrainConfig {
    int max_iterations = 100;
    double epsilon = 1e-5;
    int period = 10;
    double delta = 1e-5;
    double c1 = 0.1;
    double c2 = 0.1;
    int max_linesearch = 20;
    int memory = 6;
    bool l1_enabled = true; ///< When false, c1 is forced to zero and plain L-BFGS is used.
};

struct TrainResult {
    CrfModel model;
    LbfgsStatus status = LbfgsStatus::MaxIterations;
    int iterations = 0;
    double objective = 0;     ///< Final minimized value: -log-likelihood + penalties.
    double effective_c1 = 0;
    std::vector<double> trace;
};

/// A sentence id with the labels acquired for it.
struct LabeledSentence {
    std::size_t id = 0;
    std::vector<TagId> tags;
};

/**
 * Train from scratch on the labeled sentences. The attribute registry is rebuilt from them,
 * so the result depends only on the inputs.
 */
inline TrainResult train(const Corpus& corpus, std::span<const LabeledSentence> labeled, const EmbeddingMatrix& embeddings,
                         const TrainConfig& config) {
    if (labeled.empty()) {
        throw ArgumentError("training needs at least one labeled sentence");
    }
    FeatureRegistry registry(embeddings.dim());
    std::vector<TrainingInstance> data;
    data.reserve(labeled.size());
    for (const auto& item : labeled) {
        const auto& sentence = corpus.sentence(item.id);
        if (item.tags.size() != sentence.size()) {
            throw ArgumentError("label count does not match sentence length for sentence " + std::to_string(item.id));
        }
        for (auto t : item.tags) {
            if (t >= corpus.scheme().num_tags()) {
                throw ArgumentError("label outside scheme for sentence " + std::to_string(item.id));
            }
        }
        data.push_back({featurize_and_register(sentence, embeddings, corpus.has_pos(), registry), item.tags});
    }

    TrainResult result;
    result.model = CrfModel(corpus.scheme(), std::move(registry), corpus.has_pos());
    result.effective_c1 = config.l1_enabled ? config.c1 : 0.0;

    LbfgsParams params;
    params.memory = config.memory;
    params.epsilon = config.epsilon;
    params.past = config.period;
    params.delta = config.delta;
    params.max_iterations = config.max_iterations;
    params.max_linesearch = config.max_linesearch;
    params.orthantwise_c = result.effective_c1;

    auto& model = result.model;
    auto evaluate = [&](const std::vector<double>& x, std::vector<double>& g) {
        model.weights() = x;
        std::fill(g.begin(), g.end(), 0.0);
        double f = -log_likelihood(model, data, g);
        for (std::size_t k = 0; k < x.size(); ++k) {
            g[k] = -g[k] + 2.0 * config.c2 * x[k];
            f += config.c2 * x[k] * x[k];
        }
        return f;
    };
    std::vector<double> x(model.weights().size(), 0.0);
    const auto outcome = lbfgs_minimize(x, evaluate, params);
    model.weights() = x;
    result.status = outcome.status;
    result.iterations = outcome.iterations;
    result.objective = outcome.value;
    result.trace = outcome.trace;
    return result;
}

struct EvalResult {
    double precision = 0;
    double recall = 0;
    double f1 = 0;
    std::size_t true_positives = 0;
    std::size_t predicted = 0;
    std::size_t gold = 0;
};

/// Micro-averaged exact-match span scores from span counts.
inline EvalResult span_scores(std::size_t true_positives, std::size_t predicted, std::size_t gold) {
    EvalResult r;
    r.true_positives = true_positives;
    r.predicted = predicted;
    r.gold = gold;
    r.precision = predicted ? static_cast<double>(true_positives) / static_cast<double>(predicted) : 0.0;
    r.recall = gold ? static_cast<double>(true_positives) / static_cast<double>(gold) : 0.0;
    r.f1 = (r.precision + r.recall) > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
    return r;
}

/// Accumulate span matches of one sentence: a predicted span is correct iff class, start and end match a gold span.
inline void count_span_matches(std::span<const TagId> gold, std::span<const TagId> predicted, std::size_t& tp, std::size_t& n_pred, std::size_t& n_gold) {
    const auto gold_spans = extract_spans(gold);
    const auto pred_spans = extract_spans(predicted);
    n_gold += gold_spans.size();
    n_pred += pred_spans.size();
    for (const auto& p : pred_spans) {
        if (std::find(gold_spans.begin(), gold_spans.end(), p) != gold_spans.end()) {
            ++tp;
        }
    }
}

inline EvalResult evaluate(const CrfModel& model, const Corpus& corpus, std::span<const std::size_t> sentence_ids, const EmbeddingMatrix& embeddings) {
    if (!(model.scheme() == corpus.scheme())) {
        throw ArgumentError("model and corpus label schemes differ");
    }
    std::size_t tp = 0, n_pred = 0, n_gold = 0;
    for (auto id : sentence_ids) {
        const auto& sentence = corpus.sentence(id);
        const auto pot = compute_potentials(model, model.featurize(sentence, embeddings));
        const auto best = viterbi_path(pot);
        const auto gold = sentence.gold_tags();
        count_span_matches(gold, best.path, tp, n_pred, n_gold);
    }
    return span_scores(tp, n_pred, n_gold);
}

/**
 * Model file layout (little-endian):
 * "CRFM" | u32 version = 1 | u32 class count | classes as (u32 length, bytes) | u8 has_pos |
 * u32 embedding dim | u64 categorical count | names as (u32 length, bytes) | u64 weight count | f64 weights.
 */
inline void save_model(std::ostream& out, const CrfModel& model) {
    auto write_string = [&](const std::string& s) {
        detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
        out.write(s.data(), static_cast<std::streamsize>(s.size()));
    };
    out.write("CRFM", 4);
    detail::write_le<std::uint32_t>(out, 1);
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.scheme().num_classes()));
    for (const auto& c : model.scheme().classes()) {
        write_string(c);
    }
    detail::write_le<std::uint8_t>(out, model.has_pos() ? 1 : 0);
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.registry().embedding_dim()));
    detail::write_le<std::uint64_t>(out, model.registry().categorical_count());
    for (const auto& name : model.registry().categorical_names()) {
        write_string(name);
    }
    detail::write_le<std::uint64_t>(out, model.weights().size());
    out.write(reinterpret_cast<const char*>(model.weights().data()), static_cast<std::streamsize>(model.weights().size() * sizeof(double)));
}

inline void save_model(const std::string& path, const CrfModel& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write model file '" + path + "'");
    }
    save_model(out, model);
}

inline CrfModel load_model(std::istream& in) {
    auto read_string = [&]() {
        const auto len = detail::read_le<std::uint32_t>(in);
        std::string s(len, '\0');
        if (!in.read(s.data(), len)) {
            throw DataError("truncated model file");
        }
        return s;
    };
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "CRFM", 4) != 0) {
        throw DataError("not a model file (bad magic)");
    }
    if (detail::read_le<std::uint32_t>(in) != 1) {
        throw DataError("unsupported model file version");
    }
    std::vector<std::string> classes(detail::read_le<std::uint32_t>(in));
    for (auto& c : classes) {
        c = read_string();
    }
    const bool has_pos = detail::read_le<std::uint8_t>(in) != 0;
    FeatureRegistry registry(detail::read_le<std::uint32_t>(in));
    const auto n_names = detail::read_le<std::uint64_t>(in);
    for (std::uint64_t i = 0; i < n_names; ++i) {
        registry.intern(read_string());
    }
    CrfModel model(LabelScheme(std::move(classes)), std::move(registry), has_pos);
    const auto n_weights = detail::read_le<std::uint64_t>(in);
    if (n_weights != model.weights().size()) {
        throw DataError("model weight count does not match its registry");
    }
    if (!in.read(reinterpret_cast<char*>(model.weights().data()), static_cast<std::streamsize>(n_weights * sizeof(double)))) {
        throw DataError("truncated model file");
    }
    return model;
}

inline CrfModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot read model file '" + path + "'");
    }
    return load_model(in);
}

}

#endif
