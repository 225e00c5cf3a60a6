#ifndef ALNER_SERVICE_HPP
#define ALNER_SERVICE_HPP

#include "al_engine.hpp"
#include "error.hpp"
#include "scoring.hpp"

#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

/**
 * @file service.hpp
 *
 * @brief HTTP service for interactive annotation sessions.
 *
 * Endpoints (JSON in and out):
 *
 *   POST /sessions                      create a session; 201 with its view
 *   GET  /sessions/{id}                 session view
 *   GET  /sessions/{id}/query           pending batch, or status "training" with an empty batch
 *   POST /sessions/{id}/annotations     tag names per sentence; optional idempotency key
 *   GET  /sessions/{id}/metrics         learning curve and cost ledger
 *   GET  /sessions/{id}/diagnostics     P' statistics and cluster sizes
 *
 * Once a batch is fully annotated the session retrains and scores the pool on a worker thread.
 * Reads during that time are answered from the snapshot taken after the last transition.
 */

namespace alner {

enum class SessionStatus { Ready, Training, Finished, Failed };

inline const char* to_string(SessionStatus s) {
    switch (s) {
        case SessionStatus::Ready: return "ready";
        case SessionStatus::Training: return "training";
        case SessionStatus::Finished: return "finished";
        case SessionStatus::Failed: return "failed";
    }
    return "?";
}

class AnnotationService {
public:
    /// `defaults` seeds every new session; a request may override method, seed, m and suggest_tags.
    AnnotationService(std::map<std::string, std::shared_ptr<const Dataset>> datasets, ALConfig defaults,
                      std::optional<std::filesystem::path> root = std::nullopt)
        : datasets_(std::move(datasets)), defaults_(std::move(defaults)), root_(std::move(root)) {
        if (datasets_.empty()) {
            throw ArgumentError("the service needs at least one registered dataset");
        }
        if (root_) {
            std::filesystem::create_directories(*root_);
            restore_sessions();
        }
        install_routes();
    }

    ~AnnotationService() {
        stop();
        std::lock_guard lock(sessions_mutex_);
        for (auto& [id, slot] : sessions_) {
            std::lock_guard worker_lock(slot->worker_mutex);
            if (slot->worker.joinable()) {
                slot->worker.join();
            }
        }
    }

    AnnotationService(const AnnotationService&) = delete;
    AnnotationService& operator=(const AnnotationService&) = delete;

    httplib::Server& server() { return server_; }

    /// Bind to a free port on `host`; returns the port, or -1 when binding fails.
    int bind_any_port(const std::string& host) { return server_.bind_to_any_port(host); }
    bool bind(const std::string& host, int port) { return server_.bind_to_port(host, port); }
    bool listen_after_bind() { return server_.listen_after_bind(); }
    void stop() { server_.stop(); }

    /// Block until no session is training.
    void wait_idle() {
        std::vector<std::shared_ptr<Slot>> slots;
        {
            std::lock_guard lock(sessions_mutex_);
            for (auto& [id, slot] : sessions_) {
                slots.push_back(slot);
            }
        }
        for (auto& slot : slots) {
            std::lock_guard lock(slot->worker_mutex);
            if (slot->worker.joinable()) {
                slot->worker.join();
            }
        }
    }

private:
    struct Slot {
        std::string id;
        std::string dataset_name;
        std::mutex mutex; ///< Serializes mutations and guards `session`.
        std::unique_ptr<Session> session;
        std::mutex worker_mutex;
        std::thread worker;
        std::atomic<SessionStatus> status{SessionStatus::Ready};
        std::mutex snapshot_mutex;
        nlohmann::json view;
        nlohmann::json metrics;
        nlohmann::json diagnostics;
        std::string error;
    };

    using json = nlohmann::json;

    static void reply(httplib::Response& res, int code, const json& body) {
        res.status = code;
        res.set_content(body.dump(), "application/json");
    }

    static void reply_error(httplib::Response& res, int code, const std::string& message, json extra = json::object()) {
        extra["error"] = message;
        reply(res, code, extra);
    }

    std::shared_ptr<Slot> find(const std::string& id) {
        std::lock_guard lock(sessions_mutex_);
        const auto it = sessions_.find(id);
        return it == sessions_.end() ? nullptr : it->second;
    }

    json ledger_json(const CostLedger& ledger) const {
        return json{{"sentences", ledger.sentences}, {"tokens", ledger.tokens}, {"delta_sentences", ledger.delta_sentences},
                    {"delta_tokens", ledger.delta_tokens}};
    }

    static json point_json(const CurvePoint& p) {
        return json{{"iteration", p.iteration}, {"sentences", p.sentences}, {"tokens", p.tokens}, {"precision", p.precision},
                    {"recall", p.recall},       {"f1", p.f1},               {"wall_seconds", p.wall_seconds}};
    }

    json batch_json(const Session& session) const {
        json batch = json::array();
        const auto& state = session.state();
        if (!state.pending) {
            return batch;
        }
        const auto& corpus = session.dataset().corpus();
        const auto& scheme = corpus.scheme();
        for (std::size_t id : state.pending->ids) {
            const auto& sentence = corpus.sentence(id);
            json tokens = json::array();
            for (const auto& t : sentence.tokens) {
                tokens.push_back(t.surface);
            }
            json suggested = json::array();
            for (TagId t : session.suggestion(id)) {
                suggested.push_back(scheme.tag_name(t));
            }
            json entry{{"sentence_id", id}, {"tokens", tokens}, {"suggested_tags", suggested}, {"annotated", state.pending->submitted.count(id) > 0}};
            batch.push_back(std::move(entry));
        }
        return batch;
    }

    /// Rebuild the read-only views; the caller holds `slot.mutex`.
    void refresh_snapshot(Slot& slot) {
        const Session& s = *slot.session;
        const auto& state = s.state();
        json latest = state.curve.empty() ? json(nullptr) : point_json(state.curve.back());
        json view{{"id", slot.id},
                  {"dataset", slot.dataset_name},
                  {"method", s.config().method.name()},
                  {"seed", state.seed},
                  {"mode", to_string(s.mode())},
                  {"iteration", state.pending ? state.pending->iteration : s.next_iteration()},
                  {"status", to_string(slot.status.load())},
                  {"stop_reason", state.stop_reason},
                  {"tag_names", s.dataset().corpus().scheme().tag_names()},
                  {"ledger", ledger_json(state.ledger)},
                  {"latest_metrics", latest},
                  {"pending", batch_json(s)}};
        json curve = json::array();
        for (const auto& p : state.curve) {
            curve.push_back(point_json(p));
        }
        json metrics{{"id", slot.id}, {"curve", curve}, {"ledger", ledger_json(state.ledger)}};

        json records = json::array();
        for (const auto& r : state.records) {
            if (!r.positive) {
                continue;
            }
            const auto& d = *r.positive;
            records.push_back(json{{"iteration", r.iteration},
                                   {"tokens", d.tokens},
                                   {"positive", d.positive},
                                   {"in_p", d.in_p},
                                   {"in_t", d.in_t},
                                   {"cluster_sizes", d.cluster_sizes},
                                   {"noise", d.noise},
                                   {"largest_cluster", d.largest_cluster},
                                   {"largest_tied", d.largest_tied},
                                   {"no_clusters", d.no_clusters},
                                   {"degenerate", d.degenerate}});
        }
        json diagnostics{{"id", slot.id}, {"positive_sets", records}};
        if (!records.empty()) {
            diagnostics["latest"] = records.back();
        }
        std::lock_guard lock(slot.snapshot_mutex);
        slot.view = std::move(view);
        slot.metrics = std::move(metrics);
        slot.diagnostics = std::move(diagnostics);
    }

    void set_status(Slot& slot, SessionStatus status) {
        slot.status = status;
        std::lock_guard lock(slot.snapshot_mutex);
        slot.view["status"] = to_string(status);
        if (status == SessionStatus::Training) {
            slot.view["pending"] = json::array();
        }
        if (status == SessionStatus::Failed) {
            slot.view["error"] = slot.error;
        }
    }

    /// Retrain after a completed batch and queue the next one. Runs with `slot.mutex` held.
    void advance(Slot& slot) {
        try {
            auto& s = *slot.session;
            if (s.state().pending && s.state().pending->complete()) {
                s.complete();
            }
            if (!s.finished() && !s.state().pending) {
                s.prepare_query();
            }
            slot.status = s.finished() ? SessionStatus::Finished : SessionStatus::Ready;
            refresh_snapshot(slot);
        } catch (const std::exception& e) {
            slot.error = e.what();
            set_status(slot, SessionStatus::Failed);
        }
    }

    /// The caller has already set the status to Training.
    void start_worker(const std::shared_ptr<Slot>& slot) {
        std::lock_guard lock(slot->worker_mutex);
        if (slot->worker.joinable()) {
            slot->worker.join();
        }
        slot->worker = std::thread([this, slot] {
            std::lock_guard lock(slot->mutex);
            advance(*slot);
        });
    }

    ALConfig config_from_request(const json& body) const {
        ALConfig config = defaults_;
        if (body.contains("method")) {
            const auto method = parse_method(body.at("method").get<std::string>());
            if (!method) {
                throw ArgumentError("unknown method '" + body.at("method").get<std::string>() + "'");
            }
            config.method = *method;
        }
        if (body.contains("m")) {
            const auto m = body.at("m").get<std::int64_t>();
            if (m < 0 || m > 40) {
                throw ArgumentError("m must be an integer in [0, 40]");
            }
            config.m = static_cast<unsigned>(m);
        }
        if (body.contains("suggest_tags")) {
            config.suggest_tags = body.at("suggest_tags").get<bool>();
        }
        return config;
    }

    std::string next_id() {
        for (;;) {
            const std::string id = "s" + std::to_string(++counter_);
            if (!sessions_.count(id) && (!root_ || !std::filesystem::exists(*root_ / id))) {
                return id;
            }
        }
    }

    void create_session(const httplib::Request& req, httplib::Response& res) {
        json body;
        try {
            body = req.body.empty() ? json::object() : json::parse(req.body);
        } catch (const json::parse_error&) {
            return reply_error(res, 400, "request body is not valid JSON");
        }
        if (!body.is_object()) {
            return reply_error(res, 400, "request body must be an object");
        }
        for (const auto& [key, value] : body.items()) {
            if (key != "dataset" && key != "method" && key != "seed" && key != "m" && key != "suggest_tags") {
                return reply_error(res, 400, "unknown field '" + key + "'", {{"field", key}});
            }
        }
        std::string dataset_name = datasets_.begin()->first;
        try {
            if (body.contains("dataset")) {
                dataset_name = body.at("dataset").get<std::string>();
            }
            if (!datasets_.count(dataset_name)) {
                return reply_error(res, 404, "unregistered dataset '" + dataset_name + "'", {{"dataset", dataset_name}});
            }
            const auto config = config_from_request(body);
            const std::uint64_t seed = body.contains("seed") ? body.at("seed").get<std::uint64_t>() : defaults_.base_seed;

            auto slot = std::make_shared<Slot>();
            slot->dataset_name = dataset_name;
            {
                std::lock_guard lock(sessions_mutex_);
                slot->id = next_id();
                sessions_[slot->id] = slot;
            }
            std::optional<std::filesystem::path> dir;
            if (root_) {
                dir = *root_ / slot->id;
                std::filesystem::create_directories(*dir);
                json request = body;
                request["dataset"] = dataset_name;
                request["seed"] = seed;
                write_atomically(*dir / "request.json", request.dump(2) + "\n");
            }
            try {
                std::lock_guard lock(slot->mutex);
                slot->session = std::make_unique<Session>(
                    Session::create(datasets_.at(dataset_name), config, seed, SessionMode::Interactive, dir, slot->id));
                refresh_snapshot(*slot);
            } catch (...) {
                std::lock_guard lock(sessions_mutex_);
                sessions_.erase(slot->id);
                if (dir) {
                    std::filesystem::remove_all(*dir);
                }
                throw;
            }
            std::lock_guard lock(slot->snapshot_mutex);
            reply(res, 201, slot->view);
        } catch (const json::exception& e) {
            reply_error(res, 400, std::string("malformed field: ") + e.what());
        } catch (const Error& e) {
            reply_error(res, 400, e.what());
        }
    }

    void submit_annotations(const std::shared_ptr<Slot>& slot, const httplib::Request& req, httplib::Response& res) {
        json body;
        try {
            body = json::parse(req.body);
        } catch (const json::parse_error&) {
            return reply_error(res, 400, "request body is not valid JSON");
        }
        if (!body.is_object() || !body.contains("annotations") || !body.at("annotations").is_array()) {
            return reply_error(res, 400, "body needs an 'annotations' array");
        }
        std::string key = req.get_header_value("Idempotency-Key");
        if (body.contains("idempotency_key")) {
            key = body.at("idempotency_key").get<std::string>();
        }
        const auto status = slot->status.load();
        if (status == SessionStatus::Training) {
            return reply_error(res, 409, "session is retraining; fetch the next batch first", {{"status", "training"}});
        }
        std::unique_lock lock(slot->mutex);
        auto& session = *slot->session;
        if (session.finished()) {
            return reply_error(res, 409, "session is finished", {{"status", "finished"}});
        }
        const auto& scheme = session.dataset().corpus().scheme();
        // Every entry is validated before any is applied, so a rejected request changes nothing.
        std::vector<std::pair<std::size_t, std::vector<TagId>>> parsed;
        for (const auto& entry : body.at("annotations")) {
            if (!entry.is_object() || !entry.contains("sentence_id") || !entry.contains("tags") || !entry.at("tags").is_array() ||
                !entry.at("sentence_id").is_number_unsigned()) {
                return reply_error(res, 400, "each annotation needs 'sentence_id' and a 'tags' array");
            }
            const auto id = entry.at("sentence_id").get<std::size_t>();
            std::vector<TagId> tags;
            for (const auto& t : entry.at("tags")) {
                if (!t.is_string()) {
                    return reply_error(res, 400, "tags must be strings");
                }
                const auto name = t.get<std::string>();
                const auto tag = scheme.find_tag(name);
                if (!tag) {
                    return reply_error(res, 422, "tag '" + name + "' is not in the label scheme", {{"tag", name}, {"sentence_id", id}});
                }
                tags.push_back(*tag);
            }
            const auto& pending = session.state().pending;
            if (!pending || !pending->contains(id)) {
                return reply_error(res, 422, "sentence " + std::to_string(id) + " is not in the pending batch", {{"sentence_id", id}});
            }
            if (tags.size() != session.dataset().corpus().sentence(id).size()) {
                return reply_error(res, 422, "sentence " + std::to_string(id) + " needs one tag per token", {{"sentence_id", id}});
            }
            parsed.emplace_back(id, std::move(tags));
        }
        std::size_t accepted = 0, duplicates = 0;
        try {
            for (auto& [id, tags] : parsed) {
                const auto outcome = session.submit(id, std::move(tags), key.empty() ? std::string{} : key + "#" + std::to_string(id));
                (outcome == SubmitOutcome::Accepted ? accepted : duplicates) += 1;
            }
        } catch (const Error& e) {
            return reply_error(res, 422, e.what());
        }
        const bool full = session.state().pending && session.state().pending->complete();
        refresh_snapshot(*slot);
        if (full) {
            set_status(*slot, SessionStatus::Training);
        }
        lock.unlock();
        if (full) {
            start_worker(slot);
        }
        reply(res, 200, json{{"accepted", accepted}, {"duplicates", duplicates}, {"status", to_string(slot->status.load())}});
    }

    void install_routes() {
        server_.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) { create_session(req, res); });

        auto with_slot = [this](auto handler) {
            return [this, handler](const httplib::Request& req, httplib::Response& res) {
                const auto slot = find(req.matches[1].str());
                if (!slot) {
                    return reply_error(res, 404, "no session '" + req.matches[1].str() + "'");
                }
                handler(slot, req, res);
            };
        };
        server_.Get(R"(/sessions/([A-Za-z0-9_-]+))", with_slot([](const std::shared_ptr<Slot>& slot, const httplib::Request&, httplib::Response& res) {
                        std::lock_guard lock(slot->snapshot_mutex);
                        reply(res, 200, slot->view);
                    }));
        server_.Get(R"(/sessions/([A-Za-z0-9_-]+)/query)",
                    with_slot([](const std::shared_ptr<Slot>& slot, const httplib::Request&, httplib::Response& res) {
                        std::lock_guard lock(slot->snapshot_mutex);
                        const auto status = slot->status.load();
                        json body{{"id", slot->id}, {"status", to_string(status)}, {"iteration", slot->view.at("iteration")}};
                        body["batch"] = status == SessionStatus::Ready ? slot->view.at("pending") : json::array();
                        reply(res, 200, body);
                    }));
        server_.Post(R"(/sessions/([A-Za-z0-9_-]+)/annotations)",
                     with_slot([this](const std::shared_ptr<Slot>& slot, const httplib::Request& req, httplib::Response& res) {
                         submit_annotations(slot, req, res);
                     }));
        server_.Get(R"(/sessions/([A-Za-z0-9_-]+)/metrics)",
                    with_slot([](const std::shared_ptr<Slot>& slot, const httplib::Request&, httplib::Response& res) {
                        std::lock_guard lock(slot->snapshot_mutex);
                        reply(res, 200, slot->metrics);
                    }));
        server_.Get(R"(/sessions/([A-Za-z0-9_-]+)/diagnostics)",
                    with_slot([](const std::shared_ptr<Slot>& slot, const httplib::Request&, httplib::Response& res) {
                        std::lock_guard lock(slot->snapshot_mutex);
                        reply(res, 200, slot->diagnostics);
                    }));
    }

    /// Reopen every persisted session under the root directory.
    void restore_sessions() {
        for (const auto& entry : std::filesystem::directory_iterator(*root_)) {
            const auto dir = entry.path();
            if (!entry.is_directory() || !std::filesystem::exists(dir / "request.json") || !std::filesystem::exists(dir / "state.json")) {
                continue;
            }
            const auto request = json::parse(read_file(dir / "request.json"));
            const auto dataset_name = request.at("dataset").get<std::string>();
            if (!datasets_.count(dataset_name)) {
                throw DataError("persisted session " + dir.filename().string() + " uses unregistered dataset '" + dataset_name + "'");
            }
            auto slot = std::make_shared<Slot>();
            slot->id = dir.filename().string();
            slot->dataset_name = dataset_name;
            slot->session = std::make_unique<Session>(Session::resume(datasets_.at(dataset_name), dir, config_from_request(request)));
            sessions_[slot->id] = slot;
            const auto& state = slot->session->state();
            if (state.finished) {
                slot->status = SessionStatus::Finished;
                refresh_snapshot(*slot);
            } else if ((state.pending && state.pending->complete()) || !state.pending) {
                refresh_snapshot(*slot);
                set_status(*slot, SessionStatus::Training);
                start_worker(slot);
            } else {
                refresh_snapshot(*slot);
            }
        }
    }

    std::map<std::string, std::shared_ptr<const Dataset>> datasets_;
    ALConfig defaults_;
    std::optional<std::filesystem::path> root_;
    httplib::Server server_;
    std::mutex sessions_mutex_;
    std::map<std::string, std::shared_ptr<Slot>> sessions_;
    std::size_t counter_ = 0;
};

}

#endif
