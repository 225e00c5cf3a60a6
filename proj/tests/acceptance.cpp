#include "oracles.hpp"
#include "support.hpp"

#include "alner/al_engine.hpp"
#include "alner/positive_id.hpp"
#include "alner/synth.hpp"

#include <chrono>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>

/**
 * Acceptance checks for the engine. Each check prints one line: PASS, FAIL or SKIP, its name,
 * the elapsed time and a short summary of what was measured. Pass check names as arguments to
 * run a subset. The exit status is non-zero when any check fails.
 */

using namespace alner;
using namespace alner::testing;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
    bool skipped = false;
};

struct Check {
    std::string name;
    double time_limit_seconds;
    std::function<Outcome()> run;
};

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s.precision(precision);
    s << v;
    return s.str();
}

Outcome crf_exactness() {
    Rng rng(2024);
    double worst = 0;
    std::size_t path_mismatches = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(6);
        const std::size_t M = 2 + rng.uniform_index(3);
        const auto pot = random_potentials(rng, n, M);
        const auto oracle = brute_force(pot);
        const auto table = forward_backward(pot);
        const auto best = viterbi(pot, table);
        worst = std::max(worst, std::abs(table.log_z - oracle.log_z));
        for (std::size_t k = 0; k < oracle.marginals.size(); ++k) {
            worst = std::max(worst, std::abs(table.unary[k] - oracle.marginals[k]));
        }
        for (std::size_t k = 0; k < oracle.pairwise.size(); ++k) {
            worst = std::max(worst, std::abs(table.pairwise[k] - oracle.pairwise[k]));
        }
        worst = std::max(worst, std::abs(best.score - oracle.best_score));
        path_mismatches += best.path != oracle.best;
    }
    return {worst <= 1e-8 && path_mismatches == 0,
            "200 sentences, max abs error " + fmt(worst) + ", Viterbi mismatches " + std::to_string(path_mismatches)};
}

Outcome gradient_check_criterion() {
    Rng rng(77);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
        auto problem = random_problem(rng, 1 + rng.uniform_index(2), 1 + rng.uniform_index(4), 6);
        const Regularization reg{0.0, 2.0 * rng.uniform01()};
        worst = std::max(worst, gradient_check(problem, reg));
    }
    return {worst <= 1e-4, "100 configurations, max relative error " + fmt(worst)};
}

std::vector<double> random_distribution(Rng& rng, std::size_t M) {
    std::vector<double> p(M);
    const double sharpness = 0.2 + 5.0 * rng.uniform01();
    double total = 0;
    for (auto& v : p) {
        v = std::pow(-std::log(1.0 - rng.uniform01()), sharpness);
        total += v;
    }
    for (auto& v : p) {
        v /= total;
    }
    return p;
}

Outcome uncertainty_bounds() {
    Rng rng(5150);
    std::size_t violations = 0;
    constexpr double slack = 1e-12;
    for (int trial = 0; trial < 10000; ++trial) {
        const std::size_t M = 2 + rng.uniform_index(9);
        auto p = random_distribution(rng, M);
        if (trial % 100 == 0) {
            std::fill(p.begin(), p.end(), 0.0);
            p[rng.uniform_index(M)] = 1.0;
        } else if (trial % 100 == 1) {
            std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(M));
        }
        const double top = *std::max_element(p.begin(), p.end());
        const double te = token_uncertainty(UncertaintyMeasure::TE, p);
        const double tp = token_uncertainty(UncertaintyMeasure::TP, p);
        const double ap = token_uncertainty(UncertaintyMeasure::AP, p, top);
        const double tm = token_uncertainty(UncertaintyMeasure::TM, p);
        violations += te < -slack || te > std::log(static_cast<double>(M)) + slack;
        violations += tp < -slack || tp > 1.0 - 1.0 / static_cast<double>(M) + slack;
        violations += ap < -slack || ap > 1.0 + slack;
        violations += tm < -slack || tm > 1.0 + slack;

        const std::size_t n = 1 + rng.uniform_index(30);
        std::vector<double> tau(n);
        std::vector<std::uint8_t> positive(n);
        for (std::size_t i = 0; i < n; ++i) {
            tau[i] = token_uncertainty(UncertaintyMeasure::TE, random_distribution(rng, M));
            positive[i] = rng.uniform01() < 0.3;
        }
        const double single = aggregate(AggregationStrategy::Single, tau);
        const double normalized = aggregate(AggregationStrategy::Normalized, tau);
        const double total = aggregate(AggregationStrategy::Total, tau);
        const double total_pos = aggregate(AggregationStrategy::TotalPos, tau, positive);
        violations += normalized != total / static_cast<double>(n);
        violations += normalized > single + slack || single > total + slack;
        violations += total_pos > total + slack;
    }
    return {violations == 0, "10000 distributions, " + std::to_string(violations) + " violations"};
}

Outcome figure_two() {
    const auto corpus = corpus_from_text(std::string(kFigureTwoConll) + "\nshort O\nsentence O\n\na O\nb O\nc O\nd O\n");
    const auto& sentence = corpus.sentence(0);
    const auto density = TokenCountDensity::fit(corpus);
    const double p9 = density(9.0);
    const std::vector<std::vector<double>> rows{
        {0.60, 0.10, 0.10, 0.15, 0.05}, {0.90, 0.05, 0.02, 0.02, 0.01}, {0.95, 0.01, 0.01, 0.02, 0.01},
        {0.30, 0.40, 0.10, 0.10, 0.10}, {0.25, 0.05, 0.55, 0.10, 0.05}, {0.97, 0.01, 0.01, 0.005, 0.005},
        {0.99, 0.0025, 0.0025, 0.0025, 0.0025}, {0.80, 0.05, 0.05, 0.05, 0.05}, {0.85, 0.05, 0.05, 0.03, 0.02},
    };
    const auto prediction = prediction_from_rows(rows);
    std::vector<std::uint8_t> mask(corpus.token_count(), 0);
    for (std::size_t i : {0u, 3u, 4u}) {
        mask[sentence.tokens[i].global_index] = 1;
    }
    const double phi_tp = (1 - 0.60) + (1 - 0.40) + (1 - 0.55);
    Rng rng(1);
    const double errors[] = {
        std::abs(baseline_score(AggregationStrategy::Lss, sentence, mask, &density, rng).value - 9.0),
        std::abs(baseline_score(AggregationStrategy::Pas, sentence, mask, &density, rng).value - 3 * std::sqrt(p9)),
        std::abs(score_sentence(AggregationStrategy::TotalPos, UncertaintyMeasure::TP, sentence, prediction, mask).value - phi_tp),
        std::abs(score_sentence(AggregationStrategy::DnormPos, UncertaintyMeasure::TP, sentence, prediction, mask, &density).value -
                 std::sqrt(p9) * phi_tp),
    };
    const double worst = *std::max_element(std::begin(errors), std::end(errors));
    return {worst <= 1e-12, "LSS, PAS, total-pos and dnorm-pos max error " + fmt(worst)};
}

/// The synthetic corpus of the directional benchmark: class means share an offset from O along one axis.
std::shared_ptr<Dataset> benchmark_dataset() {
    SyntheticCorpusSpec spec;
    spec.sentences = 2000;
    auto corpus = std::make_shared<Corpus>(synth_corpus(spec, 11));
    auto embeddings = std::make_shared<EmbeddingMatrix>(synth_embeddings(*corpus, offset_generator(corpus->scheme(), 16, 6.0, 1.0, 0.5), 11));
    auto split = split_corpus(*corpus, {0.68, 0.16, 0.16}, 7);
    return std::make_shared<Dataset>(std::move(corpus), std::move(embeddings), std::move(split));
}

struct PlantedCorpus {
    Corpus corpus;
    EmbeddingMatrix embeddings;
};

PlantedCorpus planted_corpus(std::uint64_t seed) {
    SyntheticCorpusSpec spec;
    spec.sentences = 2000;
    auto corpus = synth_corpus(spec, seed);
    EmbeddingGenerator g;
    g.dim = 16;
    g.class_means = separated_means(corpus.scheme(), 16, 10.0, seed);
    auto embeddings = synth_embeddings(corpus, g, seed);
    return {std::move(corpus), std::move(embeddings)};
}

Outcome kde_normalization() {
    std::vector<std::pair<std::string, Corpus>> corpora;
    corpora.emplace_back("figure-2", corpus_from_text(std::string(kFigureTwoConll) + "\nshort O\nsentence O\n\na O\nb O\nc O\nd O\n"));
    corpora.emplace_back("engine-small", small_dataset()->corpus());
    corpora.emplace_back("engine-alt", small_dataset(150, 9)->corpus());
    corpora.emplace_back("benchmark", benchmark_dataset()->corpus());
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        SyntheticCorpusSpec spec;
        spec.sentences = 2000;
        corpora.emplace_back("planted-" + std::to_string(seed), synth_corpus(spec, seed));
    }
    double worst = 0;
    std::string worst_name;
    for (const auto& [name, corpus] : corpora) {
        const auto density = TokenCountDensity::fit(corpus);
        const double hi = density.max_count() + 12 * density.bandwidth();
        const auto steps = static_cast<std::size_t>(std::ceil(hi / (density.bandwidth() / 50)));
        const double error = std::abs(trapezoid(density, 0, hi, std::max<std::size_t>(steps, 1000)) - 1.0);
        if (error >= worst) {
            worst = error;
            worst_name = name;
        }
    }
    return {worst <= 1e-3, std::to_string(corpora.size()) + " corpora, max |integral - 1| " + fmt(worst) + " (" + worst_name + ")"};
}

Outcome positive_id_recovery() {
    std::size_t negative_majority = 0;
    double recall_sum = 0;
    constexpr int seeds = 10;
    for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
        const auto data = planted_corpus(seed);
        std::vector<std::size_t> population(data.corpus.token_count());
        std::iota(population.begin(), population.end(), 0);
        std::vector<std::uint8_t> gold(population.size(), 0);
        for (const auto& s : data.corpus.sentences()) {
            for (const auto& t : s.tokens) {
                gold[t.global_index] = t.gold != kOutside;
            }
        }
        const PositiveIdentifier identifier(data.embeddings, population, PositiveIdParams{}.umap.n_neighbors);
        const auto result = identifier.run(PositiveIdParams{}, {}, seed);
        recall_sum += positive_set_metrics(result.positive.in_p_prime, gold).recall_pos;
        std::size_t members = 0, negatives = 0;
        for (std::size_t i = 0; i < gold.size(); ++i) {
            if (result.clustering.assignment.labels[i] == result.positive.largest_cluster) {
                ++members;
                negatives += !gold[i];
            }
        }
        negative_majority += members > 0 && 2 * negatives > members;
    }
    const double recall = recall_sum / seeds;
    return {negative_majority >= 9 && recall >= 0.85,
            "largest cluster majority-negative in " + std::to_string(negative_majority) + "/10 seeds, mean recall_pos " + fmt(recall)};
}

struct MethodCost {
    bool all_reached = true;
    double tokens_at_08 = 0;
    double sentences_at_07 = 0;
};

MethodCost benchmark_method(const std::shared_ptr<Dataset>& dataset, const std::string& name) {
    ALConfig cfg;
    cfg.m = 3;
    cfg.max_iterations = 8;
    cfg.n_repeats = 5;
    cfg.method = *parse_method(name);
    cfg.positive_id.umap.n_epochs = 100;
    const auto summary = run_experiment(dataset, cfg);
    MethodCost out;
    for (const auto& run : summary.runs) {
        const auto tokens = tokens_to_reach(run.curve, 0.8);
        const auto sentences = sentences_to_reach(run.curve, 0.7);
        out.all_reached = out.all_reached && !run.failed && tokens.reached && sentences.reached;
        out.tokens_at_08 += tokens.value / static_cast<double>(summary.runs.size());
        out.sentences_at_07 += sentences.value / static_cast<double>(summary.runs.size());
    }
    return out;
}

Outcome directional_benchmark() {
    const auto dataset = benchmark_dataset();
    std::map<std::string, MethodCost> cost;
    for (const char* name : {"RS", "tTE", "nTE", "tpTE", "dpTE"}) {
        cost[name] = benchmark_method(dataset, name);
    }
    constexpr double tolerance = 1.02;
    bool reached = true;
    for (const auto& [name, c] : cost) {
        reached = reached && c.all_reached;
    }
    const bool a = cost["tpTE"].tokens_at_08 <= tolerance * cost["tTE"].tokens_at_08;
    const bool b = cost["dpTE"].tokens_at_08 <= tolerance * cost["nTE"].tokens_at_08;
    bool c = true;
    for (const char* name : {"tTE", "nTE", "tpTE", "dpTE"}) {
        c = c && cost[name].sentences_at_07 <= tolerance * cost["RS"].sentences_at_07;
    }
    std::ostringstream detail;
    detail << "(a) tpTE " << fmt(cost["tpTE"].tokens_at_08, 6) << " vs tTE " << fmt(cost["tTE"].tokens_at_08, 6) << " tokens "
           << (a ? "ok" : "no") << "; (b) dpTE " << fmt(cost["dpTE"].tokens_at_08, 6) << " vs nTE " << fmt(cost["nTE"].tokens_at_08, 6)
           << " tokens " << (b ? "ok" : "no") << "; (c) sentences to F1 0.7:";
    for (const char* name : {"RS", "tTE", "nTE", "tpTE", "dpTE"}) {
        detail << ' ' << name << '=' << fmt(cost[name].sentences_at_07, 5);
    }
    detail << ' ' << (c ? "ok" : "no");
    if (!reached) {
        detail << "; some seed did not reach a level";
    }
    return {reached && a && b && c, detail.str()};
}

Outcome determinism_and_resume() {
    const auto dataset = small_dataset();
    std::size_t mismatches = 0;
    for (const char* method : {"RS", "tpTE", "dpTE"}) {
        const auto cfg = quick_config(method, 2, 5);
        TempDir a("accept-a"), b("accept-b"), cut("accept-cut");
        Session::create(dataset, cfg, 3, SessionMode::Oracle, a.path()).run();
        Session::create(dataset, cfg, 3, SessionMode::Oracle, b.path()).run();
        {
            auto interrupted = Session::create(dataset, cfg, 3, SessionMode::Oracle, cut.path());
            interrupted.step();
            interrupted.step();
            interrupted.prepare_query();
        }
        Session::resume(dataset, cut.path(), cfg).run();
        const auto reference = read_file(a.path() / "curve.csv");
        mismatches += reference != read_file(b.path() / "curve.csv");
        mismatches += reference != read_file(cut.path() / "curve.csv");
        mismatches += read_file(a.path() / "state.json") != read_file(cut.path() / "state.json");
    }
    return {mismatches == 0, "repeat and kill-and-resume runs for RS, tpTE and dpTE, " + std::to_string(mismatches) + " differing files"};
}

Outcome schedule_and_ledger() {
    const auto dataset = small_dataset();
    const auto& corpus = dataset->corpus();
    constexpr unsigned m = 4;
    auto session = Session::create(dataset, quick_config("tTE", m, 20), 2, SessionMode::Oracle);
    std::size_t problems = 0;
    std::size_t pool = dataset->split().train.size();
    std::vector<std::size_t> expected;
    auto check_iteration = [&]() {
        const auto& state = session.state();
        const std::size_t j = expected.size();
        const std::size_t want = std::min(std::size_t{1} << (j + m), pool);
        expected.push_back(want);
        pool -= want;
        std::size_t tokens = 0;
        for (const auto& l : state.labeled) {
            tokens += corpus.sentence(l.id).size();
        }
        problems += state.ledger.delta_sentences != expected;
        problems += state.ledger.tokens != tokens;
        problems += state.ledger.sentences != state.labeled.size();
        problems += state.pool.size() != pool;
    };
    check_iteration();
    while (!session.finished()) {
        session.step();
        check_iteration();
    }
    problems += session.state().stop_reason != "pool_exhausted";
    std::ostringstream batches;
    for (std::size_t i = 0; i < expected.size(); ++i) {
        batches << (i ? "," : "") << session.state().ledger.delta_sentences.at(i);
    }
    return {problems == 0, "batches " + batches.str() + " of " + std::to_string(dataset->split().train.size()) + " train sentences, " +
                               std::to_string(problems) + " mismatches"};
}

Outcome conll_statistics() {
    const char* root = std::getenv("ALNER_CONLL03");
    if (!root || !std::filesystem::exists(std::filesystem::path(root) / "eng.train") ||
        !std::filesystem::exists(std::filesystem::path(root) / "eng.testa")) {
        return {false, "set ALNER_CONLL03 to a directory holding eng.train and eng.testa to run this check", true};
    }
    ColumnLayout layout;
    layout.pos_column = 1;
    const std::string text = read_file(std::filesystem::path(root) / "eng.train") + "\n" + read_file(std::filesystem::path(root) / "eng.testa");
    std::istringstream in(text);
    const auto corpus = parse_conll(in, layout);
    const auto stats = corpus_stats(corpus);
    const bool ok = stats.n_sentences == 17291 && stats.n_tokens == 254983 && fmt(stats.mean_tokens_per_sentence, 4) == "14.75";
    return {ok, std::to_string(stats.n_sentences) + " sentences, " + std::to_string(stats.n_tokens) + " tokens, mean " +
                    fmt(stats.mean_tokens_per_sentence, 4)};
}

}

int main(int argc, char** argv) {
    const std::vector<Check> checks{
        {"crf-exactness", 60, crf_exactness},
        {"gradient-check", 60, gradient_check_criterion},
        {"uncertainty-bounds", 60, uncertainty_bounds},
        {"figure-2-oracle", 60, figure_two},
        {"kde-normalization", 60, kde_normalization},
        {"positive-id-recovery", 300, positive_id_recovery},
        {"al-directional-benchmark", 1200, directional_benchmark},
        {"determinism-and-resume", 300, determinism_and_resume},
        {"schedule-and-ledger", 60, schedule_and_ledger},
        {"corpus-statistics", 60, conll_statistics},
    };
    std::vector<std::string> only(argv + 1, argv + argc);
    int failures = 0;
    for (const auto& check : checks) {
        if (!only.empty() && std::find(only.begin(), only.end(), check.name) == only.end()) {
            continue;
        }
        const auto started = std::chrono::steady_clock::now();
        Outcome outcome;
        try {
            outcome = check.run();
        } catch (const std::exception& e) {
            outcome = {false, std::string("exception: ") + e.what()};
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        std::string status = outcome.skipped ? "SKIP" : outcome.pass ? "PASS" : "FAIL";
        if (!outcome.skipped && seconds > check.time_limit_seconds) {
            status = "FAIL";
            outcome.detail += "; took longer than " + fmt(check.time_limit_seconds) + " s";
        }
        failures += status == "FAIL";
        std::cout << status << ' ' << check.name << " (" << fmt(seconds, 3) << " s): " << outcome.detail << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
