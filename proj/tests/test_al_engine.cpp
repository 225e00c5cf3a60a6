#include "support.hpp"

#include "alner/al_engine.hpp"

#include <gtest/gtest.h>

#include <numeric>
#include <set>

using namespace alner;
using alner::testing::quick_config;
using alner::testing::small_dataset;
using alner::testing::TempDir;

namespace {

std::size_t tokens_of(const Corpus& corpus, const std::vector<std::size_t>& ids) {
    std::size_t n = 0;
    for (auto id : ids) {
        n += corpus.sentence(id).size();
    }
    return n;
}

std::vector<CurvePoint> curve(std::initializer_list<std::tuple<std::size_t, std::size_t, double>> points) {
    std::vector<CurvePoint> out;
    std::size_t it = 0;
    for (const auto& [sentences, tokens, f1] : points) {
        CurvePoint p;
        p.iteration = it++;
        p.sentences = sentences;
        p.tokens = tokens;
        p.f1 = f1;
        out.push_back(p);
    }
    return out;
}

}

TEST(BatchSize, GeometricScheduleWithCap) {
    EXPECT_EQ(batch_size(3, 4, 1000), 128u);
    EXPECT_EQ(batch_size(1, 0, 1000), 2u);
    EXPECT_EQ(batch_size(3, 4, 100), 100u);
    EXPECT_EQ(batch_size(70, 4, 55), 55u);
    EXPECT_THROW(batch_size(0, 4, 100), ArgumentError);
}

TEST(Session, InitialSampleIsTwoToTheM) {
    const auto ds = small_dataset();
    const auto s = Session::create(ds, quick_config("RS", 4), 1, SessionMode::Oracle);
    EXPECT_EQ(s.state().labeled.size(), 16u);
    EXPECT_EQ(s.state().curve.size(), 1u);
    EXPECT_EQ(s.state().curve[0].iteration, 0u);
    EXPECT_EQ(s.state().pool.size() + 16, ds->split().train.size());
}

TEST(Session, MethodsShareTheInitialSample) {
    const auto ds = small_dataset();
    const auto a = Session::create(ds, quick_config("RS", 3), 4, SessionMode::Oracle);
    const auto b = Session::create(ds, quick_config("tTE", 3), 4, SessionMode::Oracle);
    const auto c = Session::create(ds, quick_config("tTE", 3), 5, SessionMode::Oracle);
    EXPECT_EQ(a.state().records[0].batch, b.state().records[0].batch);
    EXPECT_NE(a.state().records[0].batch, c.state().records[0].batch);
}

TEST(Session, InitialSampleCoveringTrainFinishesAtIterationZero) {
    const auto base = small_dataset(60);
    Split split;
    for (std::size_t i = 0; i < 60; ++i) {
        (i < 16 ? split.train : split.test).push_back(i);
    }
    auto corpus = std::make_shared<Corpus>(base->corpus());
    auto emb = std::make_shared<EmbeddingMatrix>(base->embeddings());
    const auto ds = std::make_shared<Dataset>(corpus, emb, split);
    const auto s = Session::create(ds, quick_config("tTE", 4), 1, SessionMode::Oracle);
    EXPECT_TRUE(s.finished());
    EXPECT_EQ(s.state().stop_reason, "pool_exhausted");
    EXPECT_EQ(s.state().curve.size(), 1u);
    EXPECT_THROW(Session::create(ds, quick_config("tTE", 5), 1, SessionMode::Oracle), ArgumentError);
}

TEST(Session, OracleLabelsAndLedger) {
    const auto ds = small_dataset();
    auto s = Session::create(ds, quick_config("tTE", 4, 3), 2, SessionMode::Oracle);
    s.run();
    const auto& st = s.state();
    EXPECT_EQ(st.stop_reason, "max_iterations");
    EXPECT_EQ(st.ledger.sentences, 16u + 32u + 64u);
    EXPECT_EQ(st.ledger.delta_sentences, (std::vector<std::size_t>{16, 32, 64}));
    std::vector<std::size_t> labeled_ids;
    for (const auto& l : st.labeled) {
        EXPECT_EQ(l.tags, ds->corpus().sentence(l.id).gold_tags());
        labeled_ids.push_back(l.id);
    }
    EXPECT_EQ(st.ledger.tokens, tokens_of(ds->corpus(), labeled_ids));
    std::set<std::size_t> all(labeled_ids.begin(), labeled_ids.end());
    EXPECT_EQ(all.size(), labeled_ids.size());
    for (auto id : st.pool) {
        EXPECT_TRUE(all.insert(id).second);
    }
    EXPECT_EQ(all, std::set<std::size_t>(ds->split().train.begin(), ds->split().train.end()));
    for (std::size_t i = 0; i < st.curve.size(); ++i) {
        EXPECT_EQ(st.curve[i].sentences, std::accumulate(st.ledger.delta_sentences.begin(), st.ledger.delta_sentences.begin() + static_cast<long>(i) + 1, 0u));
    }
}

TEST(Session, LongestSentencesFirstQueriesLongest) {
    const auto ds = small_dataset();
    auto s = Session::create(ds, quick_config("LSS", 2, 2), 3, SessionMode::Oracle);
    const auto pool_before = s.state().pool;
    s.step();
    const auto& batch = s.state().records[1].batch;
    std::size_t shortest_picked = std::numeric_limits<std::size_t>::max();
    for (auto id : batch) {
        shortest_picked = std::min(shortest_picked, ds->corpus().sentence(id).size());
    }
    for (auto id : s.state().pool) {
        EXPECT_LE(ds->corpus().sentence(id).size(), shortest_picked);
    }
    EXPECT_EQ(batch.size(), 8u);
}

TEST(Session, InteractiveSubmissionFlow) {
    const auto ds = small_dataset();
    auto s = Session::create(ds, quick_config("tTE", 2), 1, SessionMode::Interactive);
    ASSERT_TRUE(s.state().pending);
    const auto ids = s.state().pending->ids;
    EXPECT_THROW(s.complete(), ArgumentError);
    EXPECT_THROW(s.submit(ids[0], {kOutside}, "k"), ArgumentError);
    for (auto id : ids) {
        EXPECT_EQ(s.submit(id, ds->corpus().sentence(id).gold_tags(), "k" + std::to_string(id)), SubmitOutcome::Accepted);
    }
    EXPECT_EQ(s.submit(ids[0], ds->corpus().sentence(ids[0]).gold_tags(), "k" + std::to_string(ids[0])), SubmitOutcome::Duplicate);
    s.complete();
    EXPECT_EQ(s.state().ledger.sentences, 4u);
    EXPECT_FALSE(s.state().pending);
    s.prepare_query();
    EXPECT_EQ(s.state().pending->ids.size(), 8u);
    EXPECT_EQ(s.suggestion(s.state().pending->ids[0]).size(), ds->corpus().sentence(s.state().pending->ids[0]).size());
}

TEST(Session, SubmissionsAreNormalizedToBio2) {
    const auto ds = small_dataset();
    auto s = Session::create(ds, quick_config("tTE", 0), 1, SessionMode::Interactive);
    const auto id = s.state().pending->ids[0];
    std::vector<TagId> tags(ds->corpus().sentence(id).size(), kOutside);
    tags[0] = LabelScheme::inside_tag(0);
    s.submit(id, tags);
    s.complete();
    EXPECT_EQ(s.state().labeled[0].tags[0], LabelScheme::begin_tag(0));
}

TEST(Session, StopCriteria) {
    const auto ds = small_dataset();
    auto budget = quick_config("RS", 2, 0);
    budget.stop.sentence_budget = 10;
    auto s = Session::create(ds, budget, 1, SessionMode::Oracle);
    s.run();
    EXPECT_EQ(s.state().stop_reason, "sentence_budget");
    EXPECT_EQ(s.state().ledger.sentences, 12u);

    auto tokens = quick_config("RS", 2, 0);
    tokens.stop.token_budget = 1;
    auto t = Session::create(ds, tokens, 1, SessionMode::Oracle);
    EXPECT_EQ(t.state().stop_reason, "token_budget");

    auto target = quick_config("RS", 2, 0);
    target.stop.target_f1 = 0.0;
    EXPECT_EQ(Session::create(ds, target, 1, SessionMode::Oracle).state().stop_reason, "target_f1");
}

TEST(Summary, MeanAndStandardError) {
    const std::vector<double> two{0.8, 0.9};
    const auto [mean, sem] = mean_sem(two);
    EXPECT_NEAR(mean, 0.85, 1e-12);
    EXPECT_NEAR(sem, std::sqrt(0.005) / std::sqrt(2.0), 1e-12);
    EXPECT_NEAR(sem, 0.05, 1e-12);

    SeedRun run;
    run.curve = curve({{4, 40, 0.5}, {12, 120, 0.7}});
    const auto single = summarize("RS", {run});
    EXPECT_FALSE(single.sem_defined);
    std::ostringstream csv;
    write_summary_csv(csv, single);
    EXPECT_NE(csv.str().find(",NA"), std::string::npos);
}

TEST(Summary, FailedRunsAreSkippedWithWarning) {
    SeedRun ok, bad;
    ok.seed = 1;
    ok.curve = curve({{4, 40, 0.5}});
    bad.seed = 2;
    bad.failed = true;
    bad.error = "boom";
    const auto s = summarize("RS", {ok, bad});
    ASSERT_EQ(s.rows.size(), 1u);
    EXPECT_EQ(s.rows[0].runs, 1u);
    ASSERT_FALSE(s.warnings.empty());
    EXPECT_NE(s.warnings[0].find("boom"), std::string::npos);
}

TEST(Reach, ExactHitAndInterpolation) {
    const auto exact = curve({{10, 2000, 0.6}, {30, 5000, 0.8}, {70, 9000, 0.9}});
    EXPECT_TRUE(tokens_to_reach(exact, 0.8).reached);
    EXPECT_DOUBLE_EQ(tokens_to_reach(exact, 0.8).value, 5000.0);
    const auto between = curve({{10, 4000, 0.78}, {30, 6000, 0.82}});
    EXPECT_NEAR(tokens_to_reach(between, 0.80).value, 5000.0, 1e-9);
    EXPECT_NEAR(sentences_to_reach(between, 0.80).value, 20.0, 1e-9);
    EXPECT_FALSE(tokens_to_reach(between, 0.95).reached);
    EXPECT_DOUBLE_EQ(tokens_to_reach(between, 0.5).value, 4000.0);
    EXPECT_THROW(tokens_to_reach({}, 0.5), ArgumentError);
}

TEST(CurveCsv, RoundTrip) {
    auto c = curve({{4, 40, 0.5}, {12, 130, 0.712346}});
    c[1].precision = 0.6;
    c[1].recall = 0.875;
    std::stringstream buffer;
    write_curve_csv(buffer, c);
    EXPECT_EQ(read_curve_csv(buffer), c);
}

TEST(Experiment, SameSeedGivesIdenticalCurveFiles) {
    const auto ds = small_dataset();
    auto cfg = quick_config("tpTE", 2, 3);
    cfg.n_repeats = 2;
    TempDir a("det-a"), b("det-b");
    run_experiment(ds, cfg, a.path());
    run_experiment(ds, cfg, b.path());
    for (const char* seed : {"seed-1", "seed-2"}) {
        EXPECT_EQ(read_file(a.path() / seed / "curve.csv"), read_file(b.path() / seed / "curve.csv"));
        EXPECT_EQ(read_file(a.path() / seed / "state.json"), read_file(b.path() / seed / "state.json"));
    }
    EXPECT_EQ(read_file(a.path() / "summary.csv"), read_file(b.path() / "summary.csv"));
}

TEST(Experiment, ResumeAfterInterruptionMatchesUninterruptedRun) {
    const auto ds = small_dataset();
    const auto cfg = quick_config("dpTE", 2, 4);
    TempDir full("resume-full"), cut("resume-cut");

    auto uninterrupted = Session::create(ds, cfg, 3, SessionMode::Oracle, full.path() / "seed-3");
    uninterrupted.run();

    {
        auto first = Session::create(ds, cfg, 3, SessionMode::Oracle, cut.path() / "seed-3");
        first.step();
        first.prepare_query();
    }
    auto resumed = Session::resume(ds, cut.path() / "seed-3", cfg);
    ASSERT_TRUE(resumed.state().pending);
    resumed.run();
    EXPECT_EQ(read_file(full.path() / "seed-3" / "curve.csv"), read_file(cut.path() / "seed-3" / "curve.csv"));
    EXPECT_EQ(read_file(full.path() / "seed-3" / "state.json"), read_file(cut.path() / "seed-3" / "state.json"));
}

TEST(Experiment, RunExperimentResumesExistingSeeds) {
    const auto ds = small_dataset();
    auto cfg = quick_config("RS", 2, 3);
    TempDir dir("resume-exp");
    {
        auto partial = Session::create(ds, cfg, 1, SessionMode::Oracle, dir.path() / "seed-1");
        partial.step();
    }
    const auto resumed = run_experiment(ds, cfg, dir.path());
    const auto fresh = run_experiment(ds, cfg);
    ASSERT_EQ(resumed.runs.size(), 1u);
    EXPECT_EQ(resumed.runs[0].curve, fresh.runs[0].curve);
}

TEST(Experiment, ResumeRejectsForeignCorpus) {
    const auto ds = small_dataset();
    const auto other = small_dataset(150, 9);
    const auto cfg = quick_config("RS", 2, 2);
    TempDir dir("foreign");
    Session::create(ds, cfg, 1, SessionMode::Oracle, dir.path());
    EXPECT_THROW(Session::resume(other, dir.path(), cfg), DataError);
}
