#include "support.hpp"

#include "alner/service.hpp"

#include <gtest/gtest.h>
#include <httplib.h>
#include <json.hpp>

#include <thread>

using namespace alner;
using json = nlohmann::json;
using alner::testing::TempDir;

namespace {

ALConfig service_defaults() {
    ALConfig cfg = alner::testing::quick_config("tpTE", 2, 6);
    cfg.positive_id.umap.n_epochs = 300;
    return cfg;
}

/// Runs a service on a free local port for the lifetime of the fixture.
class ServiceFixture : public ::testing::Test {
protected:
    void start(std::optional<std::filesystem::path> root = std::nullopt) {
        dataset_ = alner::testing::small_dataset();
        service_ = std::make_unique<AnnotationService>(std::map<std::string, std::shared_ptr<const Dataset>>{{"synthetic", dataset_}},
                                                       service_defaults(), root);
        port_ = service_->bind_any_port("127.0.0.1");
        ASSERT_GT(port_, 0);
        listener_ = std::thread([this] { service_->listen_after_bind(); });
        client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
        client_->set_read_timeout(60, 0);
    }

    void shutdown() {
        if (service_) {
            service_->wait_idle();
            service_->stop();
        }
        if (listener_.joinable()) {
            listener_.join();
        }
        client_.reset();
        service_.reset();
    }

    void TearDown() override { shutdown(); }

    json post(const std::string& path, const json& body, int expected, httplib::Headers headers = {}) {
        const auto res = client_->Post(path, headers, body.dump(), "application/json");
        EXPECT_TRUE(res);
        if (!res) {
            return json();
        }
        EXPECT_EQ(res->status, expected) << res->body;
        return json::parse(res->body);
    }

    json get(const std::string& path, int expected = 200) {
        const auto res = client_->Get(path);
        EXPECT_TRUE(res);
        if (!res) {
            return json();
        }
        EXPECT_EQ(res->status, expected) << res->body;
        return json::parse(res->body);
    }

    /// Gold annotations for every sentence of a batch, as tag names.
    json gold_annotations(const json& batch) const {
        json out = json::array();
        const auto& corpus = dataset_->corpus();
        for (const auto& entry : batch) {
            const std::size_t id = entry.at("sentence_id");
            json tags = json::array();
            for (TagId t : corpus.sentence(id).gold_tags()) {
                tags.push_back(corpus.scheme().tag_name(t));
            }
            out.push_back(json{{"sentence_id", id}, {"tags", tags}});
        }
        return out;
    }

    std::shared_ptr<const Dataset> dataset_;
    std::unique_ptr<AnnotationService> service_;
    std::unique_ptr<httplib::Client> client_;
    std::thread listener_;
    int port_ = -1;
};

}

TEST_F(ServiceFixture, CreateSessionReturnsInitialBatch) {
    start();
    const auto created = post("/sessions", json{{"method", "tpTE"}, {"seed", 3}}, 201);
    EXPECT_FALSE(created.at("id").get<std::string>().empty());
    EXPECT_EQ(created.at("status"), "ready");
    EXPECT_EQ(created.at("iteration"), 0);
    EXPECT_EQ(created.at("pending").size(), 4u);
    EXPECT_EQ(created.at("tag_names").at(0), "O");
    const auto again = get("/sessions/" + created.at("id").get<std::string>());
    EXPECT_EQ(again.at("pending"), created.at("pending"));
}

TEST_F(ServiceFixture, CreateSessionValidatesRequest) {
    start();
    EXPECT_EQ(post("/sessions", json{{"bogus", 1}}, 400).at("field"), "bogus");
    EXPECT_EQ(post("/sessions", json{{"dataset", "missing"}}, 404).at("dataset"), "missing");
    post("/sessions", json{{"method", "zzTE"}}, 400);
    post("/sessions", json{{"m", -1}}, 400);
    get("/sessions/nope", 404);
}

TEST_F(ServiceFixture, QueryDuringTrainingIsEmptyThenReady) {
    start();
    const auto created = post("/sessions", json{{"seed", 2}}, 201);
    const std::string id = created.at("id");
    const auto submitted = post("/sessions/" + id + "/annotations", json{{"annotations", gold_annotations(created.at("pending"))}}, 200);
    EXPECT_EQ(submitted.at("accepted"), 4);
    EXPECT_EQ(submitted.at("status"), "training");

    const auto during = get("/sessions/" + id + "/query");
    EXPECT_EQ(during.at("status"), "training");
    EXPECT_TRUE(during.at("batch").empty());
    post("/sessions/" + id + "/annotations", json{{"annotations", json::array()}}, 409);

    service_->wait_idle();
    const auto after = get("/sessions/" + id + "/query");
    EXPECT_EQ(after.at("status"), "ready");
    EXPECT_EQ(after.at("iteration"), 1);
    EXPECT_EQ(after.at("batch").size(), 8u);
    EXPECT_EQ(after.at("batch").at(0).at("suggested_tags").size(), after.at("batch").at(0).at("tokens").size());

    const auto metrics = get("/sessions/" + id + "/metrics");
    EXPECT_EQ(metrics.at("curve").size(), 1u);
    EXPECT_EQ(metrics.at("ledger").at("sentences"), 4);
    EXPECT_TRUE(get("/sessions/" + id + "/diagnostics").at("positive_sets").empty());

    post("/sessions/" + id + "/annotations", json{{"annotations", gold_annotations(after.at("batch"))}}, 200);
    service_->wait_idle();
    const auto diagnostics = get("/sessions/" + id + "/diagnostics");
    ASSERT_EQ(diagnostics.at("positive_sets").size(), 1u);
    EXPECT_EQ(diagnostics.at("latest").at("iteration"), 1);
    EXPECT_GT(diagnostics.at("latest").at("positive").get<int>(), 0);
    EXPECT_EQ(get("/sessions/" + id + "/metrics").at("ledger").at("sentences"), 12);
}

TEST_F(ServiceFixture, UnknownTagIsRejectedByName) {
    start();
    const auto created = post("/sessions", json::object(), 201);
    const std::string id = created.at("id");
    auto annotations = gold_annotations(created.at("pending"));
    annotations[1]["tags"][0] = "B-SPACESHIP";
    const auto rejected = post("/sessions/" + id + "/annotations", json{{"annotations", annotations}}, 422);
    EXPECT_EQ(rejected.at("tag"), "B-SPACESHIP");
    EXPECT_NE(rejected.at("error").get<std::string>().find("B-SPACESHIP"), std::string::npos);
    const auto view = get("/sessions/" + id);
    for (const auto& entry : view.at("pending")) {
        EXPECT_FALSE(entry.at("annotated").get<bool>());
    }

    auto short_tags = gold_annotations(created.at("pending"));
    short_tags[0]["tags"].erase(0);
    post("/sessions/" + id + "/annotations", json{{"annotations", short_tags}}, 422);
    post("/sessions/" + id + "/annotations", json{{"annotations", json::array({json{{"sentence_id", 100000}, {"tags", json::array()}}})}}, 422);
}

TEST_F(ServiceFixture, ResubmissionWithSameKeyDoesNotDoubleCount) {
    start();
    const auto created = post("/sessions", json::object(), 201);
    const std::string id = created.at("id");
    const auto annotations = gold_annotations(created.at("pending"));
    const json first_half{{"annotations", json::array({annotations[0], annotations[1]})}};
    const httplib::Headers key{{"Idempotency-Key", "batch-0-a"}};
    EXPECT_EQ(post("/sessions/" + id + "/annotations", first_half, 200, key).at("accepted"), 2);
    const auto retry = post("/sessions/" + id + "/annotations", first_half, 200, key);
    EXPECT_EQ(retry.at("accepted"), 0);
    EXPECT_EQ(retry.at("duplicates"), 2);
    EXPECT_EQ(retry.at("status"), "ready");

    const json rest{{"annotations", json::array({annotations[2], annotations[3]})}, {"idempotency_key", "batch-0-b"}};
    EXPECT_EQ(post("/sessions/" + id + "/annotations", rest, 200).at("status"), "training");
    service_->wait_idle();
    EXPECT_EQ(get("/sessions/" + id + "/metrics").at("ledger").at("sentences"), 4);
    post("/sessions/" + id + "/annotations", first_half, 422, key);
    EXPECT_EQ(get("/sessions/" + id + "/metrics").at("ledger").at("sentences"), 4);
}

TEST_F(ServiceFixture, SessionsSurviveRestart) {
    TempDir root("service");
    start(root.path());
    const auto created = post("/sessions", json{{"seed", 4}, {"method", "tTE"}}, 201);
    const std::string id = created.at("id");
    const auto annotations = gold_annotations(created.at("pending"));
    post("/sessions/" + id + "/annotations", json{{"annotations", json::array({annotations[0]})}}, 200);
    EXPECT_TRUE(std::filesystem::exists(root.path() / id / "request.json"));
    shutdown();

    start(root.path());
    const auto restored = get("/sessions/" + id);
    EXPECT_EQ(restored.at("method"), "tTE");
    ASSERT_EQ(restored.at("pending").size(), created.at("pending").size());
    for (std::size_t i = 0; i < created.at("pending").size(); ++i) {
        EXPECT_EQ(restored.at("pending")[i].at("sentence_id"), created.at("pending")[i].at("sentence_id"));
    }
    std::size_t annotated = 0;
    for (const auto& entry : restored.at("pending")) {
        annotated += entry.at("annotated").get<bool>();
    }
    EXPECT_EQ(annotated, 1u);
}
