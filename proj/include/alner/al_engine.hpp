#ifndef ALNER_AL_ENGINE_HPP
#define ALNER_AL_ENGINE_HPP

#include "corpus.hpp"
#include "crf.hpp"
#include "embeddings.hpp"
#include "error.hpp"
#include "kde.hpp"
#include "positive_id.hpp"
#include "rng.hpp"
#include "scoring.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

/**
 * @file al_engine.hpp
 *
 * @brief The pool-based active-learning loop, cost ledger, persistence and multi-seed runs.
 *
 * Iteration 0 is the model trained on the initial random sample of 2^m sentences. Query
 * iteration j >= 1 selects min(2^(j+m), |U|) sentences. `max_iterations` counts curve points,
 * the initial model included.
 */

namespace alner {

struct ConvergenceRule {
    double min_gain = 0.002;
    std::size_t patience = 2;
};

struct StopCriteria {
    std::optional<std::size_t> token_budget;
    std::optional<std::size_t> sentence_budget;
    std::optional<double> target_f1;
    std::optional<ConvergenceRule> convergence;
};

struct ALConfig {
    unsigned m = 4;
    QueryMethod method{AggregationStrategy::TotalPos, UncertaintyMeasure::TE};
    std::size_t max_iterations = 8; ///< 0 leaves the loop to the other stop criteria.
    StopCriteria stop;
    std::size_t n_repeats = 9;
    std::uint64_t base_seed = 1;
    PositiveIdParams positive_id;
    bool recompute_positive_set = true; ///< False: one unsupervised P' reused for the whole session.
    bool export_positive_csv = false;
    TrainConfig train;
    bool record_wall_time = false;
    bool suggest_tags = true;
};

/// |q_j| = 2^(j+m) capped at the pool size.
inline std::size_t batch_size(std::size_t j, unsigned m, std::size_t pool_size) {
    if (j < 1) {
        throw ArgumentError("query iterations start at 1");
    }
    const std::size_t exponent = j + m;
    if (exponent >= 63) {
        return pool_size;
    }
    return std::min<std::size_t>(std::size_t{1} << exponent, pool_size);
}

/**
 * Everything a session reads but never changes: corpus, feature embeddings, split, the
 * token-count density of the whole corpus and the shared neighbour-graph cache.
 */
class Dataset {
public:
    Dataset(std::shared_ptr<const Corpus> corpus, std::shared_ptr<const EmbeddingMatrix> embeddings, Split split)
        : corpus_(std::move(corpus)), embeddings_(std::move(embeddings)), split_(std::move(split)) {
        if (!corpus_ || !embeddings_) {
            throw ArgumentError("dataset needs a corpus and embeddings");
        }
        if (embeddings_->rows() != corpus_->token_count()) {
            throw DataError("embedding rows do not match the corpus token count");
        }
        if (split_.train.empty() || split_.test.empty()) {
            throw ArgumentError("train and test splits must be non-empty");
        }
        density_ = TokenCountDensity::fit(*corpus_);
        population_index_.assign(corpus_->token_count(), -1);
        for (std::size_t id : split_.train) {
            for (const auto& t : corpus_->sentence(id).tokens) {
                population_index_[t.global_index] = static_cast<std::int64_t>(population_.size());
                population_.push_back(t.global_index);
            }
        }
    }

    const Corpus& corpus() const { return *corpus_; }
    const EmbeddingMatrix& embeddings() const { return *embeddings_; }
    const Split& split() const { return split_; }
    const TokenCountDensity& density() const { return density_; }
    /// Global indices of the train-split tokens, the population clustered for P'.
    const std::vector<std::size_t>& population() const { return population_; }
    std::int64_t population_index(std::size_t global) const { return population_index_[global]; }

    const PositiveIdentifier& identifier(std::size_t n_neighbors) const {
        std::lock_guard lock(mutex_);
        auto& slot = identifiers_[n_neighbors];
        if (!slot) {
            slot = std::make_unique<PositiveIdentifier>(*embeddings_, population_, n_neighbors);
        }
        return *slot;
    }

private:
    std::shared_ptr<const Corpus> corpus_;
    std::shared_ptr<const EmbeddingMatrix> embeddings_;
    Split split_;
    TokenCountDensity density_;
    std::vector<std::size_t> population_;
    std::vector<std::int64_t> population_index_;
    mutable std::mutex mutex_;
    mutable std::map<std::size_t, std::unique_ptr<PositiveIdentifier>> identifiers_;
};

struct CurvePoint {
    std::size_t iteration = 0;
    std::size_t sentences = 0;
    std::size_t tokens = 0;
    double precision = 0;
    double recall = 0;
    double f1 = 0;
    double wall_seconds = 0;

    bool operator==(const CurvePoint&) const = default;
};

struct CostLedger {
    std::size_t sentences = 0;
    std::size_t tokens = 0;
    std::vector<std::size_t> delta_sentences;
    std::vector<std::size_t> delta_tokens;

    void record(std::size_t batch_sentences, std::size_t batch_tokens) {
        sentences += batch_sentences;
        tokens += batch_tokens;
        delta_sentences.push_back(batch_sentences);
        delta_tokens.push_back(batch_tokens);
    }
};

/// P' summary kept per iteration.
struct PositiveDiagnostics {
    std::size_t tokens = 0;
    std::size_t positive = 0; ///< |P'|
    std::size_t in_p = 0;
    std::size_t in_t = 0;
    std::vector<std::size_t> cluster_sizes;
    std::size_t noise = 0;
    int largest_cluster = -1;
    bool largest_tied = false;
    bool no_clusters = false;
    bool degenerate = false;
};

struct IterationRecord {
    std::size_t iteration = 0;
    std::vector<std::size_t> batch;
    bool truncated = false;
    std::string train_status;
    int train_iterations = 0;
    std::optional<PositiveDiagnostics> positive;
};

struct PendingBatch {
    std::size_t iteration = 0;
    std::vector<std::size_t> ids;
    std::map<std::size_t, std::vector<TagId>> submitted;
    std::set<std::string> keys;
    bool truncated = false;
    std::optional<PositiveDiagnostics> positive; ///< P' summary computed when the batch was chosen.

    bool complete() const { return submitted.size() == ids.size(); }
    bool contains(std::size_t id) const { return std::find(ids.begin(), ids.end(), id) != ids.end(); }
};

struct ALState {
    std::string session_id;
    std::uint64_t seed = 0;
    std::vector<LabeledSentence> labeled;
    std::vector<std::size_t> pool;
    CostLedger ledger;
    std::vector<CurvePoint> curve;
    std::vector<IterationRecord> records;
    std::string rng_state;
    std::optional<PendingBatch> pending;
    bool finished = false;
    std::string stop_reason;
};

enum class SessionMode { Oracle, Interactive };

inline const char* to_string(SessionMode mode) { return mode == SessionMode::Oracle ? "oracle" : "interactive"; }

enum class SubmitOutcome { Accepted, Duplicate };

/// Cost at which a learning curve first reaches an F1 level.
struct ReachResult {
    bool reached = false;
    double value = 0;
};

namespace detail {

/// First crossing of `level`, linearly interpolated on the given cost axis.
template<typename Axis>
ReachResult cost_to_reach(const std::vector<CurvePoint>& curve, double level, Axis axis) {
    if (curve.empty()) {
        throw ArgumentError("empty learning curve");
    }
    for (std::size_t i = 0; i < curve.size(); ++i) {
        if (curve[i].f1 >= level) {
            if (i == 0) {
                return {true, axis(curve[0])};
            }
            const double f0 = curve[i - 1].f1, f1 = curve[i].f1;
            const double x0 = axis(curve[i - 1]), x1 = axis(curve[i]);
            return {true, x0 + (level - f0) / (f1 - f0) * (x1 - x0)};
        }
    }
    return {false, 0};
}

}

inline ReachResult tokens_to_reach(const std::vector<CurvePoint>& curve, double level) {
    return detail::cost_to_reach(curve, level, [](const CurvePoint& p) { return static_cast<double>(p.tokens); });
}

inline ReachResult sentences_to_reach(const std::vector<CurvePoint>& curve, double level) {
    return detail::cost_to_reach(curve, level, [](const CurvePoint& p) { return static_cast<double>(p.sentences); });
}

inline void write_curve_csv(std::ostream& out, const std::vector<CurvePoint>& curve) {
    out << "iteration,sentences,tokens,precision,recall,f1,wall_seconds\n";
    char buf[256];
    for (const auto& p : curve) {
        std::snprintf(buf, sizeof(buf), "%zu,%zu,%zu,%.6f,%.6f,%.6f,%.3f\n", p.iteration, p.sentences, p.tokens, p.precision, p.recall, p.f1, p.wall_seconds);
        out << buf;
    }
}

inline std::vector<CurvePoint> read_curve_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line.rfind("iteration,", 0) != 0) {
        throw DataError("not a curve CSV (missing header)");
    }
    std::vector<CurvePoint> out;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        CurvePoint p;
        if (std::sscanf(line.c_str(), "%zu,%zu,%zu,%lf,%lf,%lf,%lf", &p.iteration, &p.sentences, &p.tokens, &p.precision, &p.recall, &p.f1, &p.wall_seconds) != 7) {
            throw DataError("malformed curve row: " + line);
        }
        out.push_back(p);
    }
    return out;
}

/// Write through a temporary file and rename, so readers never see a partial file.
inline void write_atomically(const std::filesystem::path& path, const std::string& content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw DataError("cannot write '" + tmp.string() + "'");
        }
        out << content;
        out.flush();
        if (!out) {
            throw DataError("write failed for '" + tmp.string() + "'");
        }
    }
    std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot read '" + path.string() + "'");
    }
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

namespace detail {

inline constexpr std::uint64_t kInitSalt = 0x1417;
inline constexpr std::uint64_t kQuerySalt = 0x5157;
inline constexpr std::uint64_t kPositiveSalt = 0x7051;

using nlohmann::json;

inline json to_json(const PositiveDiagnostics& d) {
    return json{{"tokens", d.tokens},         {"positive", d.positive},         {"in_p", d.in_p},
                {"in_t", d.in_t},             {"cluster_sizes", d.cluster_sizes}, {"noise", d.noise},
                {"largest_cluster", d.largest_cluster}, {"largest_tied", d.largest_tied}, {"no_clusters", d.no_clusters},
                {"degenerate", d.degenerate}};
}

inline PositiveDiagnostics positive_from_json(const json& j) {
    PositiveDiagnostics d;
    d.tokens = j.at("tokens");
    d.positive = j.at("positive");
    d.in_p = j.at("in_p");
    d.in_t = j.at("in_t");
    d.cluster_sizes = j.at("cluster_sizes").get<std::vector<std::size_t>>();
    d.noise = j.at("noise");
    d.largest_cluster = j.at("largest_cluster");
    d.largest_tied = j.at("largest_tied");
    d.no_clusters = j.at("no_clusters");
    d.degenerate = j.at("degenerate");
    return d;
}

inline json state_to_json(const ALState& s) {
    json j;
    j["session_id"] = s.session_id;
    j["seed"] = s.seed;
    json labeled = json::array();
    for (const auto& l : s.labeled) {
        labeled.push_back(json{{"id", l.id}, {"tags", l.tags}});
    }
    j["labeled"] = labeled;
    j["pool"] = s.pool;
    j["ledger"] = json{{"sentences", s.ledger.sentences},
                       {"tokens", s.ledger.tokens},
                       {"delta_sentences", s.ledger.delta_sentences},
                       {"delta_tokens", s.ledger.delta_tokens}};
    json curve = json::array();
    for (const auto& p : s.curve) {
        curve.push_back(json{{"iteration", p.iteration},
                             {"sentences", p.sentences},
                             {"tokens", p.tokens},
                             {"precision", p.precision},
                             {"recall", p.recall},
                             {"f1", p.f1},
                             {"wall_seconds", p.wall_seconds}});
    }
    j["curve"] = curve;
    json records = json::array();
    for (const auto& r : s.records) {
        json rj{{"iteration", r.iteration},
                {"batch", r.batch},
                {"truncated", r.truncated},
                {"train_status", r.train_status},
                {"train_iterations", r.train_iterations}};
        if (r.positive) {
            rj["positive"] = to_json(*r.positive);
        }
        records.push_back(rj);
    }
    j["records"] = records;
    j["rng_state"] = s.rng_state;
    if (s.pending) {
        json submitted = json::object();
        for (const auto& [id, tags] : s.pending->submitted) {
            submitted[std::to_string(id)] = tags;
        }
        j["pending"] = json{{"iteration", s.pending->iteration},
                            {"ids", s.pending->ids},
                            {"submitted", submitted},
                            {"keys", s.pending->keys},
                            {"truncated", s.pending->truncated}};
        if (s.pending->positive) {
            j["pending"]["positive"] = to_json(*s.pending->positive);
        }
    } else {
        j["pending"] = nullptr;
    }
    j["finished"] = s.finished;
    j["stop_reason"] = s.stop_reason;
    return j;
}

inline ALState state_from_json(const json& j) {
    ALState s;
    s.session_id = j.at("session_id");
    s.seed = j.at("seed");
    for (const auto& l : j.at("labeled")) {
        s.labeled.push_back({l.at("id").get<std::size_t>(), l.at("tags").get<std::vector<TagId>>()});
    }
    s.pool = j.at("pool").get<std::vector<std::size_t>>();
    const auto& ledger = j.at("ledger");
    s.ledger.sentences = ledger.at("sentences");
    s.ledger.tokens = ledger.at("tokens");
    s.ledger.delta_sentences = ledger.at("delta_sentences").get<std::vector<std::size_t>>();
    s.ledger.delta_tokens = ledger.at("delta_tokens").get<std::vector<std::size_t>>();
    for (const auto& p : j.at("curve")) {
        s.curve.push_back({p.at("iteration"), p.at("sentences"), p.at("tokens"), p.at("precision"), p.at("recall"), p.at("f1"), p.at("wall_seconds")});
    }
    for (const auto& r : j.at("records")) {
        IterationRecord rec;
        rec.iteration = r.at("iteration");
        rec.batch = r.at("batch").get<std::vector<std::size_t>>();
        rec.truncated = r.at("truncated");
        rec.train_status = r.at("train_status");
        rec.train_iterations = r.at("train_iterations");
        if (r.contains("positive")) {
            rec.positive = positive_from_json(r.at("positive"));
        }
        s.records.push_back(std::move(rec));
    }
    s.rng_state = j.at("rng_state");
    if (!j.at("pending").is_null()) {
        const auto& p = j.at("pending");
        PendingBatch batch;
        batch.iteration = p.at("iteration");
        batch.ids = p.at("ids").get<std::vector<std::size_t>>();
        for (const auto& [key, tags] : p.at("submitted").items()) {
            batch.submitted[std::stoull(key)] = tags.get<std::vector<TagId>>();
        }
        batch.keys = p.at("keys").get<std::set<std::string>>();
        batch.truncated = p.value("truncated", false);
        if (p.contains("positive")) {
            batch.positive = positive_from_json(p.at("positive"));
        }
        s.pending = std::move(batch);
    }
    s.finished = j.at("finished");
    s.stop_reason = j.at("stop_reason");
    return s;
}

}

/**
 * One active-learning session over a dataset.
 *
 * In oracle mode labels are copied from gold and `step` runs a full iteration. In interactive
 * mode a query leaves a pending batch; labels arrive through `submit` (partial submissions are
 * kept) and `complete` retrains once the whole batch is labelled. With a directory attached,
 * every transition is persisted before the call returns.
 */
class Session {
public:
    static Session create(std::shared_ptr<const Dataset> dataset, const ALConfig& config, std::uint64_t seed, SessionMode mode,
                          std::optional<std::filesystem::path> dir = std::nullopt, std::string session_id = {}) {
        Session s(std::move(dataset), config, mode, std::move(dir));
        const auto& train = s.dataset_->split().train;
        if (config.m >= 63 || (std::size_t{1} << config.m) > train.size()) {
            throw ArgumentError("m = " + std::to_string(config.m) + " asks for an initial sample larger than the train split (" +
                                std::to_string(train.size()) + " sentences)");
        }
        s.state_.session_id = session_id.empty() ? "seed-" + std::to_string(seed) : std::move(session_id);
        s.state_.seed = seed;
        s.query_rng_ = Rng(mix_seed(seed, detail::kQuerySalt));
        s.state_.rng_state = s.query_rng_.state();

        // The initial sample depends on the seed only, so every method shares it.
        std::vector<std::size_t> order(train.begin(), train.end());
        Rng init_rng(mix_seed(seed, detail::kInitSalt));
        init_rng.shuffle(order);
        std::vector<std::size_t> initial(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::size_t{1} << config.m));
        std::sort(initial.begin(), initial.end());
        std::set<std::size_t> chosen(initial.begin(), initial.end());
        for (std::size_t id : train) {
            if (!chosen.count(id)) {
                s.state_.pool.push_back(id);
            }
        }
        std::sort(s.state_.pool.begin(), s.state_.pool.end());
        s.state_.pending = PendingBatch{0, initial, {}, {}, false, std::nullopt};
        if (s.dir_) {
            std::filesystem::create_directories(*s.dir_);
            write_atomically(*s.dir_ / "session.json", s.session_json().dump(2) + "\n");
        }
        s.persist();
        if (mode == SessionMode::Oracle) {
            s.label_pending_from_gold();
            s.complete();
        }
        return s;
    }

    /// Reload a persisted session. The dataset must be the one it was created with.
    static Session resume(std::shared_ptr<const Dataset> dataset, const std::filesystem::path& dir, const ALConfig& config) {
        const auto meta = nlohmann::json::parse(read_file(dir / "session.json"));
        const SessionMode mode = meta.at("mode") == "oracle" ? SessionMode::Oracle : SessionMode::Interactive;
        Session s(std::move(dataset), config, mode, dir);
        if (meta.at("corpus_hash") != to_hex(s.dataset_->corpus().manifest_hash())) {
            throw DataError("persisted session belongs to a different corpus");
        }
        s.state_ = detail::state_from_json(nlohmann::json::parse(read_file(dir / "state.json")));
        s.query_rng_.restore(s.state_.rng_state);
        if (!s.state_.curve.empty()) {
            s.model_ = load_model((dir / model_file(s.state_.curve.back().iteration)).string());
        }
        return s;
    }

    const ALState& state() const { return state_; }
    const ALConfig& config() const { return config_; }
    const Dataset& dataset() const { return *dataset_; }
    SessionMode mode() const { return mode_; }
    bool finished() const { return state_.finished; }
    const std::optional<CrfModel>& model() const { return model_; }
    std::size_t next_iteration() const { return state_.curve.size(); }
    const std::optional<std::filesystem::path>& directory() const { return dir_; }

    /// Latest positive-id outcome computed in this process, if any.
    const std::optional<PositiveIdResult>& last_positive() const { return last_positive_; }

    /// One oracle iteration: query, copy gold labels, retrain, evaluate.
    void step() {
        if (mode_ != SessionMode::Oracle) {
            throw ArgumentError("step() drives oracle sessions; interactive sessions use submit()");
        }
        if (state_.finished) {
            return;
        }
        if (!state_.pending) {
            prepare_query();
        }
        label_pending_from_gold();
        complete();
    }

    /// Iterate until a stop criterion fires.
    void run() {
        while (!state_.finished) {
            step();
        }
    }

    /// Score the pool and set the next query batch as pending.
    void prepare_query() {
        if (state_.finished) {
            throw ArgumentError("session already finished (" + state_.stop_reason + ")");
        }
        if (state_.pending) {
            throw ArgumentError("a batch is already pending");
        }
        if (!model_) {
            throw ArgumentError("no model trained yet");
        }
        query_started_ = std::chrono::steady_clock::now();
        const std::size_t j = next_iteration();
        const std::size_t k = batch_size(j, config_.m, state_.pool.size());
        const auto& corpus = dataset_->corpus();
        const auto strategy = config_.method.strategy;

        std::vector<std::uint8_t> mask;
        std::optional<PositiveDiagnostics> diagnostics;
        if (needs_positive_set(strategy)) {
            mask = positive_mask(j, diagnostics);
        }
        std::vector<SentenceScore> scores;
        scores.reserve(state_.pool.size());
        for (std::size_t id : state_.pool) {
            const auto& sentence = corpus.sentence(id);
            if (is_baseline(strategy)) {
                scores.push_back(baseline_score(strategy, sentence, mask, &dataset_->density(), query_rng_));
            } else {
                const auto prediction = predict(*model_, sentence, dataset_->embeddings());
                scores.push_back(score_sentence(strategy, config_.method.measure, sentence, prediction, mask, &dataset_->density()));
            }
        }
        auto selection = rank_select(std::move(scores), k);
        state_.rng_state = query_rng_.state();
        state_.pending = PendingBatch{j, std::move(selection.ids), {}, {}, selection.truncated, std::move(diagnostics)};
        persist();
    }

    /**
     * Record labels for one sentence of the pending batch. A repeated idempotency key is a
     * no-op; a repeated sentence without one replaces the earlier labels.
     */
    SubmitOutcome submit(std::size_t sentence_id, std::vector<TagId> tags, const std::string& idempotency_key = {}) {
        if (!state_.pending) {
            throw ArgumentError("no batch is pending");
        }
        auto& pending = *state_.pending;
        if (!idempotency_key.empty() && pending.keys.count(idempotency_key)) {
            return SubmitOutcome::Duplicate;
        }
        if (!pending.contains(sentence_id)) {
            throw ArgumentError("sentence " + std::to_string(sentence_id) + " is not in the pending batch");
        }
        const auto& sentence = dataset_->corpus().sentence(sentence_id);
        if (tags.size() != sentence.size()) {
            throw ArgumentError("sentence " + std::to_string(sentence_id) + " has " + std::to_string(sentence.size()) + " tokens but " +
                                std::to_string(tags.size()) + " tags were given");
        }
        for (TagId t : tags) {
            if (t >= dataset_->corpus().scheme().num_tags()) {
                throw ArgumentError("tag index " + std::to_string(t) + " is outside the label scheme");
            }
        }
        normalize_bio2(tags);
        pending.submitted[sentence_id] = std::move(tags);
        if (!idempotency_key.empty()) {
            pending.keys.insert(idempotency_key);
        }
        persist();
        return SubmitOutcome::Accepted;
    }

    /// Fold the fully labelled pending batch into L, retrain, evaluate and check stop criteria.
    void complete() {
        if (!state_.pending || !state_.pending->complete()) {
            throw ArgumentError("the pending batch is not fully labelled");
        }
        auto pending = *state_.pending;
        if (!query_started_) {
            query_started_ = std::chrono::steady_clock::now();
        }
        std::size_t batch_tokens = 0;
        std::set<std::size_t> batch_ids(pending.ids.begin(), pending.ids.end());
        for (std::size_t id : pending.ids) {
            state_.labeled.push_back({id, pending.submitted.at(id)});
            batch_tokens += dataset_->corpus().sentence(id).size();
        }
        std::erase_if(state_.pool, [&](std::size_t id) { return batch_ids.count(id) > 0; });
        state_.ledger.record(pending.ids.size(), batch_tokens);

        auto trained = train(dataset_->corpus(), state_.labeled, dataset_->embeddings(), config_.train);
        model_ = std::move(trained.model);
        const auto metrics = evaluate(*model_, dataset_->corpus(), dataset_->split().test, dataset_->embeddings());

        CurvePoint point;
        point.iteration = pending.iteration;
        point.sentences = state_.ledger.sentences;
        point.tokens = state_.ledger.tokens;
        point.precision = metrics.precision;
        point.recall = metrics.recall;
        point.f1 = metrics.f1;
        if (config_.record_wall_time) {
            point.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - *query_started_).count();
        }
        query_started_.reset();
        state_.curve.push_back(point);

        IterationRecord record;
        record.iteration = pending.iteration;
        record.batch = pending.ids;
        record.truncated = pending.truncated;
        record.positive = pending.positive;
        record.train_status = to_string(trained.status);
        record.train_iterations = trained.iterations;
        state_.records.push_back(std::move(record));
        state_.pending.reset();
        check_stop();
        if (dir_) {
            save_model((*dir_ / model_file(point.iteration)).string() + ".tmp", *model_);
            std::filesystem::rename((*dir_ / model_file(point.iteration)).string() + ".tmp", *dir_ / model_file(point.iteration));
        }
        persist();
        if (dir_ && point.iteration > 0) {
            std::filesystem::remove(*dir_ / model_file(point.iteration - 1));
        }
    }

    /// Model-suggested tags for a pending sentence (Viterbi path), empty without a model.
    std::vector<TagId> suggestion(std::size_t sentence_id) const {
        if (!model_ || !config_.suggest_tags) {
            return {};
        }
        return predict(*model_, dataset_->corpus().sentence(sentence_id), dataset_->embeddings()).best.path;
    }

    void write_curve(std::ostream& out) const { write_curve_csv(out, state_.curve); }

private:
    Session(std::shared_ptr<const Dataset> dataset, ALConfig config, SessionMode mode, std::optional<std::filesystem::path> dir)
        : dataset_(std::move(dataset)), config_(std::move(config)), mode_(mode), dir_(std::move(dir)) {
        if (!dataset_) {
            throw ArgumentError("session needs a dataset");
        }
    }

    static std::string model_file(std::size_t iteration) { return "model-" + std::to_string(iteration) + ".crfm"; }

    nlohmann::json session_json() const {
        return nlohmann::json{{"session_id", state_.session_id},
                              {"seed", state_.seed},
                              {"mode", to_string(mode_)},
                              {"method", config_.method.name()},
                              {"corpus_hash", to_hex(dataset_->corpus().manifest_hash())}};
    }

    void label_pending_from_gold() {
        auto& pending = *state_.pending;
        for (std::size_t id : pending.ids) {
            if (!pending.submitted.count(id)) {
                pending.submitted[id] = dataset_->corpus().sentence(id).gold_tags();
            }
        }
    }

    std::vector<std::uint8_t> positive_mask(std::size_t iteration, std::optional<PositiveDiagnostics>& diagnostics) {
        if (!config_.recompute_positive_set && once_mask_) {
            diagnostics = once_diagnostics_;
            return *once_mask_;
        }
        const auto& identifier = dataset_->identifier(config_.positive_id.umap.n_neighbors);
        std::vector<int> labels;
        std::uint64_t seed = mix_seed(state_.seed, detail::kPositiveSalt);
        if (config_.recompute_positive_set) {
            seed = mix_seed(seed, iteration);
            labels.assign(identifier.population().size(), -1);
            for (const auto& l : state_.labeled) {
                const auto& sentence = dataset_->corpus().sentence(l.id);
                for (std::size_t i = 0; i < sentence.size(); ++i) {
                    const auto p = dataset_->population_index(sentence.tokens[i].global_index);
                    if (p >= 0) {
                        labels[static_cast<std::size_t>(p)] = supervision_label(l.tags[i]);
                    }
                }
            }
        }
        auto result = identifier.run(config_.positive_id, labels, seed);
        PositiveDiagnostics d;
        d.tokens = result.positive.in_p_prime.size();
        d.positive = result.positive.size();
        d.in_p = result.positive.size_p();
        d.in_t = result.positive.size_t_set();
        d.cluster_sizes = result.clustering.assignment.sizes;
        d.noise = result.clustering.assignment.noise_count;
        d.largest_cluster = result.positive.largest_cluster;
        d.largest_tied = result.positive.largest_tied;
        d.no_clusters = result.positive.no_clusters;
        d.degenerate = result.clustering.assignment.degenerate;
        diagnostics = d;
        if (config_.export_positive_csv && dir_) {
            std::ostringstream csv;
            write_diagnostics_csv(csv, result, identifier.population());
            write_atomically(*dir_ / ("positive-" + std::to_string(iteration) + ".csv"), csv.str());
        }
        auto mask = identifier.corpus_mask(result.positive.in_p_prime, dataset_->corpus().token_count());
        last_positive_ = std::move(result);
        if (!config_.recompute_positive_set) {
            once_mask_ = mask;
            once_diagnostics_ = d;
        }
        return mask;
    }

    void check_stop() {
        const auto& stop = config_.stop;
        const auto& curve = state_.curve;
        std::string reason;
        if (state_.pool.empty()) {
            reason = "pool_exhausted";
        } else if (config_.max_iterations > 0 && curve.size() >= config_.max_iterations) {
            reason = "max_iterations";
        } else if (stop.token_budget && state_.ledger.tokens >= *stop.token_budget) {
            reason = "token_budget";
        } else if (stop.sentence_budget && state_.ledger.sentences >= *stop.sentence_budget) {
            reason = "sentence_budget";
        } else if (stop.target_f1 && curve.back().f1 >= *stop.target_f1) {
            reason = "target_f1";
        } else if (stop.convergence && curve.size() > stop.convergence->patience) {
            bool flat = true;
            for (std::size_t i = curve.size() - stop.convergence->patience; i < curve.size(); ++i) {
                if (curve[i].f1 - curve[i - 1].f1 >= stop.convergence->min_gain) {
                    flat = false;
                }
            }
            if (flat) {
                reason = "converged";
            }
        }
        if (!reason.empty()) {
            state_.finished = true;
            state_.stop_reason = reason;
        }
    }

    void persist() {
        if (!dir_) {
            return;
        }
        write_atomically(*dir_ / "state.json", detail::state_to_json(state_).dump() + "\n");
        std::ostringstream csv;
        write_curve_csv(csv, state_.curve);
        write_atomically(*dir_ / "curve.csv", csv.str());
    }

    std::shared_ptr<const Dataset> dataset_;
    ALConfig config_;
    SessionMode mode_;
    std::optional<std::filesystem::path> dir_;
    ALState state_;
    Rng query_rng_;
    std::optional<CrfModel> model_;
    std::optional<std::chrono::steady_clock::time_point> query_started_;
    std::optional<std::vector<std::uint8_t>> once_mask_;
    std::optional<PositiveDiagnostics> once_diagnostics_;
    std::optional<PositiveIdResult> last_positive_;
};

struct SeedRun {
    std::uint64_t seed = 0;
    std::vector<CurvePoint> curve;
    std::string stop_reason;
    bool failed = false;
    std::string error;
};

struct SummaryRow {
    std::size_t iteration = 0;
    std::size_t runs = 0;
    double sentences_mean = 0;
    double tokens_mean = 0;
    double tokens_sem = 0;
    double precision_mean = 0;
    double recall_mean = 0;
    double f1_mean = 0;
    double f1_sem = 0;
};

struct RunSummary {
    std::string method;
    std::vector<SeedRun> runs;
    std::vector<SummaryRow> rows;
    bool sem_defined = false; ///< False with fewer than two completed runs.
    std::vector<std::string> warnings;
};

/// Mean and standard error (sample standard deviation over sqrt(n)); the error is 0 for n < 2.
inline std::pair<double, double> mean_sem(std::span<const double> values) {
    if (values.empty()) {
        return {0, 0};
    }
    const double n = static_cast<double>(values.size());
    double mean = 0;
    for (double v : values) {
        mean += v;
    }
    mean /= n;
    if (values.size() < 2) {
        return {mean, 0};
    }
    double ss = 0;
    for (double v : values) {
        ss += (v - mean) * (v - mean);
    }
    return {mean, std::sqrt(ss / (n - 1)) / std::sqrt(n)};
}

/// Aggregate per-seed curves over the iterations every completed run reached.
inline RunSummary summarize(std::string method, std::vector<SeedRun> runs) {
    RunSummary out;
    out.method = std::move(method);
    out.runs = std::move(runs);
    std::vector<const SeedRun*> done;
    for (const auto& r : out.runs) {
        if (r.failed) {
            out.warnings.push_back("seed " + std::to_string(r.seed) + " failed: " + r.error);
        } else {
            done.push_back(&r);
        }
    }
    out.sem_defined = done.size() >= 2;
    if (done.empty()) {
        out.warnings.push_back("no completed runs");
        return out;
    }
    std::size_t shortest = done.front()->curve.size(), longest = shortest;
    for (const auto* r : done) {
        shortest = std::min(shortest, r->curve.size());
        longest = std::max(longest, r->curve.size());
    }
    if (shortest != longest) {
        out.warnings.push_back("runs stopped at different iterations; summary covers the first " + std::to_string(shortest));
    }
    for (std::size_t i = 0; i < shortest; ++i) {
        std::vector<double> sentences, tokens, precision, recall, f1;
        for (const auto* r : done) {
            const auto& p = r->curve[i];
            sentences.push_back(static_cast<double>(p.sentences));
            tokens.push_back(static_cast<double>(p.tokens));
            precision.push_back(p.precision);
            recall.push_back(p.recall);
            f1.push_back(p.f1);
        }
        SummaryRow row;
        row.iteration = done.front()->curve[i].iteration;
        row.runs = done.size();
        row.sentences_mean = mean_sem(sentences).first;
        std::tie(row.tokens_mean, row.tokens_sem) = mean_sem(tokens);
        row.precision_mean = mean_sem(precision).first;
        row.recall_mean = mean_sem(recall).first;
        std::tie(row.f1_mean, row.f1_sem) = mean_sem(f1);
        out.rows.push_back(row);
    }
    return out;
}

inline void write_summary_csv(std::ostream& out, const RunSummary& summary) {
    out << "iteration,runs,sentences_mean,tokens_mean,tokens_sem,precision_mean,recall_mean,f1_mean,f1_sem\n";
    char buf[320];
    for (const auto& r : summary.rows) {
        if (summary.sem_defined) {
            std::snprintf(buf, sizeof(buf), "%zu,%zu,%.3f,%.3f,%.3f,%.6f,%.6f,%.6f,%.6f\n", r.iteration, r.runs, r.sentences_mean, r.tokens_mean,
                          r.tokens_sem, r.precision_mean, r.recall_mean, r.f1_mean, r.f1_sem);
        } else {
            std::snprintf(buf, sizeof(buf), "%zu,%zu,%.3f,%.3f,NA,%.6f,%.6f,%.6f,NA\n", r.iteration, r.runs, r.sentences_mean, r.tokens_mean,
                          r.precision_mean, r.recall_mean, r.f1_mean);
        }
        out << buf;
    }
}

/**
 * Run `n_repeats` oracle sessions with seeds base_seed .. base_seed + n - 1. With a directory,
 * each seed persists under seed-<s>/ and an existing session there is resumed.
 */
inline RunSummary run_experiment(std::shared_ptr<const Dataset> dataset, const ALConfig& config, std::optional<std::filesystem::path> dir = std::nullopt) {
    if (config.n_repeats < 1) {
        throw ArgumentError("n_repeats must be at least 1");
    }
    std::vector<SeedRun> runs;
    for (std::size_t r = 0; r < config.n_repeats; ++r) {
        SeedRun run;
        run.seed = config.base_seed + r;
        try {
            std::optional<std::filesystem::path> seed_dir;
            if (dir) {
                seed_dir = *dir / ("seed-" + std::to_string(run.seed));
            }
            auto session = seed_dir && std::filesystem::exists(*seed_dir / "state.json")
                               ? Session::resume(dataset, *seed_dir, config)
                               : Session::create(dataset, config, run.seed, SessionMode::Oracle, seed_dir);
            session.run();
            run.curve = session.state().curve;
            run.stop_reason = session.state().stop_reason;
        } catch (const Error& e) {
            run.failed = true;
            run.error = e.what();
        }
        runs.push_back(std::move(run));
    }
    auto summary = summarize(config.method.name(), std::move(runs));
    if (dir) {
        std::ostringstream csv;
        write_summary_csv(csv, summary);
        write_atomically(*dir / "summary.csv", csv.str());
    }
    return summary;
}

}

#endif
