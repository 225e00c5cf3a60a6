#ifndef ALNER_CLI_HPP
#define ALNER_CLI_HPP

#include "al_engine.hpp"
#include "config.hpp"
#include "report.hpp"
#include "service.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

/**
 * @file cli.hpp
 *
 * @brief Command-line front end: ingest, run, serve and report.
 *
 *   alner ingest --config exp.json --out data/     materialize corpus, embeddings and split
 *   alner run    --config exp.json --out runs/     run every configured method over all seeds
 *   alner serve  --config exp.json --port 8080     interactive annotation service
 *   alner report runs/RS runs/tpTE --out tables/   comparison tables
 */

namespace alner {

namespace detail {

inline bool directory_has_entries(const std::filesystem::path& dir) {
    return std::filesystem::is_directory(dir) && std::filesystem::directory_iterator(dir) != std::filesystem::directory_iterator();
}

/// Refuse to write into a non-empty directory unless forced; forcing clears it.
inline void prepare_output(const std::filesystem::path& dir, bool force, bool resume) {
    if (std::filesystem::exists(dir) && !std::filesystem::is_directory(dir)) {
        throw ArgumentError("output path " + dir.string() + " exists and is not a directory");
    }
    if (directory_has_entries(dir) && !resume) {
        if (!force) {
            throw ArgumentError("output directory " + dir.string() + " is not empty; pass --force to overwrite or --resume to continue");
        }
        for (const auto& entry : std::filesystem::directory_iterator(dir)) {
            std::filesystem::remove_all(entry.path());
        }
    }
    std::filesystem::create_directories(dir);
}

inline std::string git_hash() {
#ifdef ALNER_GIT_HASH
    return ALNER_GIT_HASH;
#else
    return "unknown";
#endif
}

inline int command_ingest(const std::string& config_path, const std::string& out_dir, bool force, std::ostream& out) {
    const auto cfg = load_experiment_config(config_path);
    const std::filesystem::path dir = out_dir;
    const auto dataset = build_dataset(cfg);
    prepare_output(dir, force, false);
    const auto& corpus = dataset->corpus();
    {
        std::ofstream conll(dir / "corpus.conll");
        write_conll(corpus, conll);
    }
    write_embf((dir / "embeddings.embf").string(), dataset->embeddings());
    auto write_ids = [&](const std::string& name, const std::vector<std::size_t>& ids) {
        std::ofstream f(dir / name);
        for (std::size_t id : ids) {
            f << id << '\n';
        }
    };
    write_ids("train.ids", dataset->split().train);
    write_ids("validation.ids", dataset->split().validation);
    write_ids("test.ids", dataset->split().test);
    const auto stats = corpus_stats(corpus);
    nlohmann::json summary{{"sentences", stats.n_sentences},
                           {"tokens", stats.n_tokens},
                           {"mean_length", stats.mean_tokens_per_sentence},
                           {"positive_tokens", stats.n_positive},
                           {"classes", corpus.scheme().classes()},
                           {"embedding_dim", dataset->embeddings().dim()},
                           {"corpus_hash", to_hex(corpus.manifest_hash())},
                           {"split", {{"train", dataset->split().train.size()}, {"validation", dataset->split().validation.size()}, {"test", dataset->split().test.size()}}}};
    write_atomically(dir / "stats.json", summary.dump(2) + "\n");
    out << summary.dump(2) << '\n';
    return 0;
}

inline int command_run(const std::string& config_path, const std::string& out_override, bool force, bool resume, std::uint64_t seed_offset,
                       std::ostream& out) {
    auto cfg = load_experiment_config(config_path);
    const std::string out_dir = !out_override.empty() ? out_override : cfg.output_dir.value_or("");
    if (out_dir.empty()) {
        throw ConfigError("output.dir", "is required when --out is not given");
    }
    const std::filesystem::path dir = out_dir;
    if (resume && std::filesystem::exists(dir / "config.json")) {
        const auto previous = nlohmann::json::parse(read_file(dir / "config.json"));
        if (previous.at("config") != cfg.source || previous.at("seed_offset") != seed_offset) {
            throw ArgumentError("cannot resume: " + dir.string() + " was written with a different config or seed offset");
        }
    }
    const auto dataset = build_dataset(cfg);
    prepare_output(dir, force, resume);
    cfg.al.base_seed += seed_offset;
    write_atomically(dir / "config.json", nlohmann::json{{"config", cfg.source}, {"seed_offset", seed_offset}}.dump(2) + "\n");

    int status = 0;
    for (const auto& method : cfg.methods) {
        ALConfig al = cfg.al;
        al.method = method;
        const auto method_dir = dir / method.name();
        std::filesystem::create_directories(method_dir);
        const auto started = std::chrono::steady_clock::now();
        const auto summary = run_experiment(dataset, al, method_dir);
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

        std::vector<std::uint64_t> seeds;
        nlohmann::json runs = nlohmann::json::array();
        for (const auto& r : summary.runs) {
            seeds.push_back(r.seed);
            runs.push_back({{"seed", r.seed}, {"points", r.curve.size()}, {"stop_reason", r.stop_reason}, {"failed", r.failed}, {"error", r.error}});
            if (r.failed) {
                status = 1;
            }
        }
        const nlohmann::json metadata{{"method", method.name()},
                                      {"git_hash", git_hash()},
                                      {"seeds", seeds},
                                      {"seed_offset", seed_offset},
                                      {"wall_seconds", seconds},
                                      {"effective_c1", al.train.l1_enabled ? al.train.c1 : 0.0},
                                      {"l1_enabled", al.train.l1_enabled},
                                      {"runs", runs},
                                      {"warnings", summary.warnings}};
        write_atomically(method_dir / "metadata.json", metadata.dump(2) + "\n");
        out << method.name() << ": " << summary.runs.size() << " seeds, " << seconds << " s\n";
        for (const auto& w : summary.warnings) {
            out << "  warning: " << w << '\n';
        }
    }
    return status;
}

/// Accepts method directories, or a run root whose sub-directories are method directories.
inline std::vector<std::filesystem::path> expand_run_dirs(const std::vector<std::string>& inputs) {
    std::vector<std::filesystem::path> out;
    auto has_seeds = [](const std::filesystem::path& d) {
        for (const auto& e : std::filesystem::directory_iterator(d)) {
            if (e.is_directory() && e.path().filename().string().rfind("seed-", 0) == 0) {
                return true;
            }
        }
        return false;
    };
    for (const auto& input : inputs) {
        const std::filesystem::path p = input;
        if (!std::filesystem::is_directory(p)) {
            throw DataError("run directory " + input + " does not exist");
        }
        if (has_seeds(p)) {
            out.push_back(p);
            continue;
        }
        std::vector<std::filesystem::path> children;
        for (const auto& e : std::filesystem::directory_iterator(p)) {
            if (e.is_directory() && has_seeds(e.path())) {
                children.push_back(e.path());
            }
        }
        std::sort(children.begin(), children.end());
        if (children.empty()) {
            throw DataError("no seed curves under " + input);
        }
        out.insert(out.end(), children.begin(), children.end());
    }
    return out;
}

inline int command_report(const std::vector<std::string>& inputs, const std::string& out_dir, const std::vector<double>& levels, std::ostream& out) {
    std::vector<RunSummary> summaries;
    for (const auto& d : expand_run_dirs(inputs)) {
        summaries.push_back(load_run_dir(d));
    }
    const auto report = build_report(summaries, levels);
    std::ostringstream f1, costs, winners;
    write_f1_table(f1, report);
    write_cost_table(costs, report);
    write_winner_grid(winners, report);
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        write_atomically(std::filesystem::path(out_dir) / "f1_by_iteration.csv", f1.str());
        write_atomically(std::filesystem::path(out_dir) / "matched_cost.csv", costs.str());
        write_atomically(std::filesystem::path(out_dir) / "winners.csv", winners.str());
    }
    for (const auto& w : report.warnings) {
        out << "warning: " << w << '\n';
    }
    out << "# F1 by iteration (mean, SEM)\n" << f1.str() << "\n# Cost to reach each F1 level\n" << costs.str() << "\n# Fewest tokens per level\n" << winners.str();
    return 0;
}

inline int command_serve(const std::string& config_path, const std::string& host, int port, const std::string& sessions_dir, std::ostream& out) {
    const auto cfg = load_experiment_config(config_path);
    ALConfig defaults = cfg.al;
    defaults.method = cfg.methods.front();
    std::optional<std::filesystem::path> root;
    if (!sessions_dir.empty()) {
        root = sessions_dir;
    }
    AnnotationService service({{"default", build_dataset(cfg)}}, defaults, root);
    if (!service.bind(host, port)) {
        throw Error("cannot bind to " + host + ":" + std::to_string(port));
    }
    out << "listening on " << host << ':' << port << std::endl;
    service.listen_after_bind();
    return 0;
}

}

/// Entry point shared by the executable and the tests. Returns the process exit status.
inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Active learning for named entity recognition"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    bool force = false, resume = false;
    std::uint64_t seed_offset = 0;

    auto* ingest = app.add_subcommand("ingest", "Materialize the corpus, embeddings and split described by a config");
    ingest->add_option("--config", config_path, "Experiment config (JSON)")->required();
    ingest->add_option("--out", out_dir, "Output directory")->required();
    ingest->add_flag("--force", force, "Overwrite a non-empty output directory");

    auto* run = app.add_subcommand("run", "Run every configured method over all seeds");
    run->add_option("--config", config_path, "Experiment config (JSON)")->required();
    run->add_option("--out", out_dir, "Output directory (overrides output.dir)");
    run->add_flag("--force", force, "Overwrite a non-empty output directory");
    run->add_flag("--resume", resume, "Continue the runs already in the output directory");
    run->add_option("--seed-offset", seed_offset, "Added to al.base_seed");

    std::string host = "127.0.0.1";
    int port = 8080;
    auto* serve = app.add_subcommand("serve", "Serve interactive annotation sessions over HTTP");
    serve->add_option("--config", config_path, "Experiment config (JSON)")->required();
    serve->add_option("--host", host, "Bind address");
    serve->add_option("--port", port, "Port");
    serve->add_option("--out", out_dir, "Directory for persisted sessions");

    std::vector<std::string> run_dirs;
    std::vector<double> levels = kDefaultReportLevels;
    auto* report = app.add_subcommand("report", "Compare finished runs");
    report->add_option("runs", run_dirs, "Method directories or run roots")->required();
    report->add_option("--out", out_dir, "Directory for the CSV tables");
    report->add_option("--levels", levels, "F1 levels for the cost tables");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }
    try {
        if (*ingest) {
            return detail::command_ingest(config_path, out_dir, force, out);
        }
        if (*run) {
            return detail::command_run(config_path, out_dir, force, resume, seed_offset, out);
        }
        if (*serve) {
            return detail::command_serve(config_path, host, port, out_dir, out);
        }
        return detail::command_report(run_dirs, out_dir, levels, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
}

}

#endif
