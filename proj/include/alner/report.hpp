#ifndef ALNER_REPORT_HPP
#define ALNER_REPORT_HPP

#include "al_engine.hpp"
#include "error.hpp"
#include "scoring.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

/**
 * @file report.hpp
 *
 * @brief Comparison tables across query methods.
 *
 * A run directory holds one sub-directory per seed (`seed-<s>/curve.csv`). The report lines the
 * methods up on the iterations all of them reached, and for each F1 level finds the method that
 * gets there with the fewest annotated tokens.
 */

namespace alner {

inline const std::vector<double> kDefaultReportLevels{0.5, 0.6, 0.7, 0.8};

/// Per-seed curves of one method read back from disk. The method name is the directory name.
inline RunSummary load_run_dir(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw DataError("run directory " + dir.string() + " does not exist");
    }
    const std::regex seed_dir("seed-([0-9]+)");
    std::vector<SeedRun> runs;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        std::smatch m;
        const auto name = entry.path().filename().string();
        if (!entry.is_directory() || !std::regex_match(name, m, seed_dir)) {
            continue;
        }
        const auto curve_path = entry.path() / "curve.csv";
        if (!std::filesystem::exists(curve_path)) {
            continue;
        }
        std::istringstream in(read_file(curve_path));
        SeedRun run;
        run.seed = std::stoull(m[1].str());
        run.curve = read_curve_csv(in);
        runs.push_back(std::move(run));
    }
    if (runs.empty()) {
        throw DataError("run directory " + dir.string() + " has no seed curves");
    }
    std::sort(runs.begin(), runs.end(), [](const SeedRun& a, const SeedRun& b) { return a.seed < b.seed; });
    return summarize(dir.filename().string(), std::move(runs));
}

/// Token and sentence cost of one method at one F1 level.
struct MatchedCost {
    double level = 0;
    std::size_t seeds = 0;
    std::size_t reached = 0;
    double tokens_mean = 0;
    double sentences_mean = 0;

    bool all_reached() const { return seeds > 0 && reached == seeds; }
};

/// The mean is taken over the seeds that reached `level`.
inline MatchedCost matched_cost(const RunSummary& summary, double level) {
    MatchedCost out;
    out.level = level;
    std::vector<double> tokens, sentences;
    for (const auto& run : summary.runs) {
        if (run.failed) {
            continue;
        }
        ++out.seeds;
        const auto t = tokens_to_reach(run.curve, level);
        const auto s = sentences_to_reach(run.curve, level);
        if (t.reached) {
            ++out.reached;
            tokens.push_back(t.value);
            sentences.push_back(s.value);
        }
    }
    out.tokens_mean = mean_sem(tokens).first;
    out.sentences_mean = mean_sem(sentences).first;
    return out;
}

struct WinnerCell {
    std::string token_winner;    ///< Empty when no method reached the level on every seed.
    std::string sentence_winner;
};

struct ComparisonReport {
    std::vector<std::string> methods;
    std::vector<std::size_t> iterations; ///< Iterations present for every method.
    std::map<std::string, std::map<std::size_t, SummaryRow>> rows;
    std::map<std::string, bool> sem_defined;
    std::vector<double> levels;
    std::map<std::string, std::vector<MatchedCost>> costs;
    std::vector<std::string> measures; ///< Row labels of the winner grid.
    std::map<std::string, std::vector<WinnerCell>> winners;
    std::vector<std::string> warnings;
};

namespace detail {

/// Uncertainty measure of an uncertainty-based method name; empty for baselines and unknown names.
inline std::optional<std::string> measure_of(const std::string& method) {
    const auto parsed = parse_method(method);
    if (!parsed || parsed->strategy == AggregationStrategy::Random || parsed->strategy == AggregationStrategy::Lss ||
        parsed->strategy == AggregationStrategy::Pas) {
        return std::nullopt;
    }
    return std::string(to_string(parsed->measure));
}

/// Candidates for the winner grid: uncertainty methods whose every seed reached the level.
inline WinnerCell pick_winners(const std::vector<std::pair<std::string, MatchedCost>>& candidates) {
    WinnerCell cell;
    double best_tokens = 0, best_sentences = 0;
    for (const auto& [name, cost] : candidates) {
        if (!cost.all_reached()) {
            continue;
        }
        if (cell.token_winner.empty() || cost.tokens_mean < best_tokens) {
            cell.token_winner = name;
            best_tokens = cost.tokens_mean;
        }
        if (cell.sentence_winner.empty() || cost.sentences_mean < best_sentences) {
            cell.sentence_winner = name;
            best_sentences = cost.sentences_mean;
        }
    }
    return cell;
}

}

inline ComparisonReport build_report(const std::vector<RunSummary>& summaries, std::vector<double> levels = kDefaultReportLevels) {
    if (summaries.empty()) {
        throw ArgumentError("report needs at least one run");
    }
    ComparisonReport out;
    out.levels = std::move(levels);
    std::optional<std::set<std::size_t>> common;
    std::set<std::size_t> any;
    for (const auto& s : summaries) {
        out.methods.push_back(s.method);
        out.sem_defined[s.method] = s.sem_defined;
        for (const auto& w : s.warnings) {
            out.warnings.push_back(s.method + ": " + w);
        }
        std::set<std::size_t> mine;
        for (const auto& row : s.rows) {
            out.rows[s.method][row.iteration] = row;
            mine.insert(row.iteration);
            any.insert(row.iteration);
        }
        if (!common) {
            common = mine;
        } else {
            std::set<std::size_t> both;
            std::set_intersection(common->begin(), common->end(), mine.begin(), mine.end(), std::inserter(both, both.end()));
            common = std::move(both);
        }
        for (double level : out.levels) {
            out.costs[s.method].push_back(matched_cost(s, level));
        }
    }
    out.iterations.assign(common->begin(), common->end());
    if (common->size() != any.size()) {
        out.warnings.push_back("iteration grids differ between methods; the table keeps the " + std::to_string(common->size()) + " shared iterations");
    }

    for (const auto& method : out.methods) {
        const auto measure = detail::measure_of(method);
        if (measure && std::find(out.measures.begin(), out.measures.end(), *measure) == out.measures.end()) {
            out.measures.push_back(*measure);
        }
    }
    for (const auto& measure : out.measures) {
        for (std::size_t l = 0; l < out.levels.size(); ++l) {
            std::vector<std::pair<std::string, MatchedCost>> candidates;
            for (const auto& method : out.methods) {
                if (detail::measure_of(method) == measure) {
                    candidates.emplace_back(method, out.costs[method][l]);
                }
            }
            out.winners[measure].push_back(detail::pick_winners(candidates));
        }
    }
    return out;
}

/// Mean F1 with its standard error per iteration; "NA" marks an undefined error.
inline void write_f1_table(std::ostream& out, const ComparisonReport& report) {
    out << "iteration";
    for (const auto& m : report.methods) {
        out << ',' << m << "_tokens," << m << "_f1," << m << "_f1_sem";
    }
    out << '\n';
    char buf[64];
    for (std::size_t it : report.iterations) {
        out << it;
        for (const auto& m : report.methods) {
            const auto& row = report.rows.at(m).at(it);
            std::snprintf(buf, sizeof(buf), ",%.1f,%.4f,", row.tokens_mean, row.f1_mean);
            out << buf;
            if (report.sem_defined.at(m)) {
                std::snprintf(buf, sizeof(buf), "%.4f", row.f1_sem);
                out << buf;
            } else {
                out << "NA";
            }
        }
        out << '\n';
    }
}

/// Mean token and sentence cost per method and level, with the number of seeds that got there.
inline void write_cost_table(std::ostream& out, const ComparisonReport& report) {
    out << "method,level,seeds,reached,tokens_mean,sentences_mean\n";
    char buf[160];
    for (const auto& m : report.methods) {
        for (const auto& c : report.costs.at(m)) {
            if (c.reached > 0) {
                std::snprintf(buf, sizeof(buf), "%s,%.2f,%zu,%zu,%.1f,%.1f\n", m.c_str(), c.level, c.seeds, c.reached, c.tokens_mean, c.sentences_mean);
            } else {
                std::snprintf(buf, sizeof(buf), "%s,%.2f,%zu,0,NA,NA\n", m.c_str(), c.level, c.seeds);
            }
            out << buf;
        }
    }
}

/// One row per uncertainty measure, one column per level. A "*" marks a cell whose token winner also needs the fewest sentences.
inline void write_winner_grid(std::ostream& out, const ComparisonReport& report) {
    out << "measure";
    char buf[32];
    for (double level : report.levels) {
        std::snprintf(buf, sizeof(buf), ",%.2f", level);
        out << buf;
    }
    out << '\n';
    for (const auto& measure : report.measures) {
        out << measure;
        for (const auto& cell : report.winners.at(measure)) {
            out << ',';
            if (cell.token_winner.empty()) {
                out << '-';
            } else {
                out << cell.token_winner << (cell.token_winner == cell.sentence_winner ? "*" : "");
            }
        }
        out << '\n';
    }
}

}

#endif
