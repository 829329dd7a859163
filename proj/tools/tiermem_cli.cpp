// tiermem: tiered agent-memory engine CLI.
//
// State lives in a data directory as JSONL snapshots (pages.jsonl,
// summaries.jsonl, findings.jsonl); every command loads it, works, and saves
// it back, so the pipeline can be driven step by step from a shell.

#include "tiermem/http_backend.hpp"
#include "tiermem/tiermem.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace tiermem;

namespace {

struct CliOptions {
    std::string data_dir = "tiermem_data";
    std::string backend = "mock"; // mock | http
    std::string mock_script;
    std::string api_base = "https://api.openai.com";
    std::string api_path = "/v1/chat/completions";
    std::string model = "gpt-4.1-mini";
    std::string api_key_env = "TIERMEM_API_KEY";
    std::string answer_style = "short-phrase";
    std::string writeback_variant = "retrieve-edit";
    EngineConfig engine;
};

std::string path_in(const CliOptions& opt, const std::string& name) {
    return (fs::path(opt.data_dir) / name).string();
}

std::shared_ptr<Backend> make_backend(const CliOptions& opt) {
    if (opt.backend == "mock") {
        if (opt.mock_script.empty())
            throw ValidationError("mock backend needs --mock-script");
        return MockBackend::from_jsonl(opt.mock_script);
    }
    if (opt.backend == "http") {
        HttpBackend::Config cfg;
        cfg.base_url = opt.api_base;
        cfg.path = opt.api_path;
        cfg.model = opt.model;
        cfg.api_key_env = opt.api_key_env;
        return std::make_shared<HttpBackend>(cfg);
    }
    throw ValidationError("unknown backend: " + opt.backend);
}

std::unique_ptr<Engine> load_engine(CliOptions& opt) {
    opt.engine.answer_style = opt.answer_style == "episodic" ? AnswerStyle::Episodic
                                                             : AnswerStyle::ShortPhrase;
    opt.engine.writeback_variant = writeback_variant_from_name(opt.writeback_variant);
    auto engine = std::make_unique<Engine>(opt.engine, make_backend(opt));
    fs::create_directories(opt.data_dir);
    if (fs::exists(path_in(opt, "pages.jsonl"))) engine->pages().load(path_in(opt, "pages.jsonl"));
    if (fs::exists(path_in(opt, "summaries.jsonl")))
        engine->index().load(path_in(opt, "summaries.jsonl"));
    if (fs::exists(path_in(opt, "findings.jsonl"))) {
        for (const auto& rec : jsonl::read_file(path_in(opt, "findings.jsonl"))) {
            VerifiedFinding f;
            f.fact = linked_fact_from_json(rec.at("fact"));
            f.triggering_query = rec.at("triggering_query").get<std::string>();
            f.epoch = rec.at("epoch").get<std::int64_t>();
            engine->add_finding(std::move(f));
        }
    }
    engine->set_events_path(path_in(opt, "events.jsonl"));
    return engine;
}

void save_state(const CliOptions& opt, Engine& engine) {
    engine.pages().save(path_in(opt, "pages.jsonl"));
    engine.index().save(path_in(opt, "summaries.jsonl"));
    std::vector<nlohmann::json> findings;
    for (const auto& f : engine.pending_findings())
        findings.push_back({{"fact", linked_fact_to_json(f.fact)},
                            {"triggering_query", f.triggering_query},
                            {"epoch", f.epoch}});
    jsonl::write_file(path_in(opt, "findings.jsonl"), findings);
}

std::vector<Turn> load_transcript(const std::string& path) {
    std::vector<Turn> turns;
    for (const auto& rec : jsonl::read_file(path))
        turns.push_back({rec.at("ts").get<std::string>(), rec.at("speaker").get<std::string>(),
                         rec.at("text").get<std::string>()});
    return turns;
}

void append_records(const CliOptions& opt, const std::vector<RoutingRecord>& records) {
    for (const auto& r : records) jsonl::append_line(path_in(opt, "records.jsonl"), r.to_json());
}

std::vector<RoutingRecord> records_from_file(const std::string& path) {
    std::vector<RoutingRecord> records;
    for (const auto& rec : jsonl::read_file(path)) {
        RoutingRecord r;
        r.query_id = rec.value("query_id", "");
        r.question = rec.value("question", "");
        r.route = rec.value("route", "S") == "R" ? Action::R : Action::S;
        r.answer = rec.value("answer", "");
        r.tok_qa_in = rec.value("tok_qa_in", 0);
        r.tok_router_in = rec.value("tok_router_in", 0);
        r.tok_gen_out = rec.value("tok_gen_out", 0);
        r.tok_router_out = rec.value("tok_router_out", 0);
        r.latency_seconds = rec.value("latency_seconds", 0.0);
        r.epoch = rec.value("epoch", 0);
        r.category = rec.value("category", "");
        r.error = rec.value("error", false);
        if (rec.contains("correct")) r.correct = rec["correct"].get<bool>();
        if (rec.contains("s_correct")) r.s_correct = rec["s_correct"].get<bool>();
        if (rec.contains("r_correct")) r.r_correct = rec["r_correct"].get<bool>();
        if (rec.contains("c_s")) r.c_s = rec["c_s"].get<bool>();
        records.push_back(std::move(r));
    }
    return records;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"tiermem: provenance-linked two-tier agent memory"};
    app.set_config("--config", "", "engine configuration file (TOML-like key=value)");

    CliOptions opt;
    app.add_option("--data-dir", opt.data_dir, "state directory")->capture_default_str();
    app.add_option("--backend", opt.backend, "mock | http")->capture_default_str();
    app.add_option("--mock-script", opt.mock_script, "JSONL script for the mock backend");
    app.add_option("--api-base", opt.api_base, "chat-completion base URL")->capture_default_str();
    app.add_option("--api-path", opt.api_path, "chat-completion path")->capture_default_str();
    app.add_option("--model", opt.model, "model name for the http backend")
        ->capture_default_str();
    app.add_option("--api-key-env", opt.api_key_env, "env var holding the API key")
        ->capture_default_str();
    app.add_option("--max-page-tokens", opt.engine.max_page_tokens, "Tier-2 page size")
        ->capture_default_str();
    app.add_option("--t-max", opt.engine.t_max, "escalation loop cap")->capture_default_str();
    app.add_option("--k-summaries", opt.engine.k_summaries, "router retrieval depth")
        ->capture_default_str();
    app.add_option("--rerank-k", opt.engine.rerank_k, "unique pages per research round")
        ->capture_default_str();
    app.add_option("--protection-threshold", opt.engine.protection_threshold,
                   "Tier-1 similarity that always survives reranking")
        ->capture_default_str();
    app.add_option("--embed-dimension", opt.engine.embed_dimension, "test embedder dimension")
        ->capture_default_str();
    app.add_option("--max-attempts", opt.engine.max_attempts, "gateway retry budget")
        ->capture_default_str();
    app.add_option("--worker-threads", opt.engine.worker_threads,
                   "batch worker pool size (1 keeps runs bit-reproducible)")
        ->capture_default_str();
    app.add_option("--answer-style", opt.answer_style, "short-phrase | episodic")
        ->capture_default_str();
    app.add_option("--writeback-variant", opt.writeback_variant, "no-recall | retrieve-edit")
        ->capture_default_str();
    app.add_flag("--online-writeback", opt.engine.online_writeback,
                 "apply write-back inside the QA loop (off by default)");

    // ingest
    auto* ingest = app.add_subcommand("ingest", "page a transcript into Tier-2 and index it");
    std::string session = "default";
    std::string transcript_file;
    ingest->add_option("--session", session, "session id")->capture_default_str();
    ingest->add_option("--file", transcript_file, "transcript JSONL {ts, speaker, text}")
        ->required();

    // ask
    auto* ask = app.add_subcommand("ask", "answer one question");
    std::string ask_session = "default";
    std::string question;
    ask->add_option("--session", ask_session, "session id (bookkeeping only)");
    ask->add_option("--question", question, "the question")->required();

    // run-batch
    auto* batch = app.add_subcommand("run-batch", "answer a question file with Tier-1 frozen");
    std::string questions_file;
    std::int64_t epoch = 1;
    bool judge_flag = false;
    bool two_path = false;
    batch->add_option("--questions", questions_file, "questions JSONL")->required();
    batch->add_option("--epoch", epoch, "epoch index")->capture_default_str();
    batch->add_flag("--judge", judge_flag, "judge answers against gold");
    batch->add_flag("--two-path", two_path,
                    "run both paths per query and emit router_train.jsonl");

    // consolidate
    auto* consolidate = app.add_subcommand("consolidate",
                                           "apply pending findings to Tier-1 between epochs");
    std::string variant = "retrieve-edit";
    std::int64_t next_epoch = 2;
    consolidate->add_option("--variant", variant, "no-recall | retrieve-edit")
        ->capture_default_str();
    consolidate->add_option("--next-epoch", next_epoch, "epoch stamp for new units")
        ->capture_default_str();

    // replay
    auto* replay = app.add_subcommand("replay", "multi-epoch replay with between-epoch write-back");
    int epochs = 3;
    std::string replay_questions;
    std::string replay_variant = "retrieve-edit";
    replay->add_option("--questions", replay_questions, "questions JSONL")->required();
    replay->add_option("--epochs", epochs, "number of replay epochs")->capture_default_str();
    replay->add_option("--variant", replay_variant, "no-recall | retrieve-edit")
        ->capture_default_str();

    // stats
    auto* stats = app.add_subcommand("stats", "compute metrics from a records file");
    std::string records_file;
    stats->add_option("--records", records_file, "records JSONL")->required();

    app.require_subcommand(1);
    CLI11_PARSE(app, argc, argv);

    try {
        if (*ingest) {
            auto engine = load_engine(opt);
            const auto result = engine->ingest(session, load_transcript(transcript_file));
            save_state(opt, *engine);
            std::cout << nlohmann::json({{"pages", result.pages}, {"units", result.units}}).dump()
                      << "\n";
        } else if (*ask) {
            auto engine = load_engine(opt);
            const auto rec = engine->answer(question, "ask");
            save_state(opt, *engine);
            append_records(opt, {rec});
            std::cout << rec.to_json().dump(2) << "\n";
        } else if (*batch) {
            auto engine = load_engine(opt);
            const auto questions = load_questions(questions_file);
            std::vector<RoutingRecord> records;
            if (two_path) {
                EvalHarness harness(*engine);
                records = harness.two_path_run(questions, epoch);
                write_training_records(path_in(opt, "router_train.jsonl"),
                                       build_training_records(harness.to_outcomes(records),
                                                              opt.engine.oversample_factor));
            } else {
                records = engine->run_batch(questions, epoch);
                if (judge_flag) {
                    EvalHarness harness(*engine);
                    harness.judge_records(records, questions);
                }
            }
            save_state(opt, *engine);
            append_records(opt, records);
            const auto report = compute_metrics(records);
            std::ofstream metrics(path_in(opt, "metrics.json"), std::ios::trunc);
            metrics << metrics_json(report, engine->config().to_json()).dump(2) << "\n";
            std::cout << report.to_json().dump(2) << "\n";
        } else if (*consolidate) {
            auto engine = load_engine(opt);
            const auto result =
                engine->consolidate_and_apply(writeback_variant_from_name(variant), next_epoch);
            save_state(opt, *engine);
            EpochLog log;
            for (const auto& op : result.ops) log.append(op);
            save_epoch_log(path_in(opt, "epoch_log.jsonl"), log);
            std::cout << nlohmann::json({{"adds", result.summary.adds},
                                         {"updates", result.summary.updates},
                                         {"skips", result.summary.skips}})
                             .dump()
                      << "\n";
        } else if (*replay) {
            auto engine = load_engine(opt);
            EvalHarness harness(*engine);
            std::vector<RoutingRecord> all_records;
            const auto rows =
                harness.replay(load_questions(replay_questions), epochs,
                               writeback_variant_from_name(replay_variant), false, &all_records);
            save_state(opt, *engine);
            append_records(opt, all_records);
            const auto evolution = evolution_json(rows, engine->config().to_json());
            std::ofstream evo(path_in(opt, "evolution.json"), std::ios::trunc);
            evo << evolution.dump(2) << "\n";
            if (!rows.empty()) {
                // latest epoch's Table-4-shaped row
                std::ofstream er(path_in(opt, "epoch_report.json"), std::ios::trunc);
                er << rows.back().to_json().dump(2) << "\n";
            }
            std::cout << evolution.dump(2) << "\n";
        } else if (*stats) {
            fs::create_directories(opt.data_dir);
            const auto records = records_from_file(records_file);
            const auto report = compute_metrics(records);
            const auto matrix = counterfactual_matrix(records);
            std::ofstream metrics(path_in(opt, "metrics.json"), std::ios::trunc);
            metrics << metrics_json(report, opt.engine.to_json()).dump(2) << "\n";
            if (matrix.total() > 0) {
                std::ofstream cf(path_in(opt, "counterfactual.json"), std::ios::trunc);
                cf << matrix.to_json().dump(2) << "\n";
            }
            std::cout << report.to_json().dump(2) << "\n";
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
