#pragma once

#include "tiermem/embedder.hpp"
#include "tiermem/errors.hpp"
#include "tiermem/gateway.hpp"
#include "tiermem/jsonl.hpp"
#include "tiermem/page_store.hpp"
#include "tiermem/research.hpp"
#include "tiermem/router.hpp"
#include "tiermem/summary_index.hpp"
#include "tiermem/writeback.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace tiermem {

struct EngineConfig {
    std::int64_t max_page_tokens = 1000;
    int t_max = 3;
    std::size_t k_summaries = 5; // router input retrieval depth
    std::size_t rerank_k = 4;
    std::size_t keyword_k = 5;
    double protection_threshold = 0.85;
    double overlap_threshold = 0.5;
    double tokens_per_word = 1.3;
    std::size_t embed_dimension = 256;
    int writeback_retrieve_k = 3;
    int oversample_factor = 2;
    int worker_threads = 1; // batch parallelism; 1 keeps mock runs bit-reproducible
    bool writeback_enabled = true;
    bool online_writeback = false; // evaluation protocol keeps this off
    WritebackVariant writeback_variant = WritebackVariant::RetrieveEdit;
    AnswerStyle answer_style = AnswerStyle::ShortPhrase;
    int max_attempts = 2;
    double judge_temperature = 0.0;
    double generator_temperature = 0.0;
    RewardConfig reward;

    nlohmann::json to_json() const {
        return {{"max_page_tokens", max_page_tokens},
                {"t_max", t_max},
                {"k_summaries", k_summaries},
                {"rerank_k", rerank_k},
                {"keyword_k", keyword_k},
                {"protection_threshold", protection_threshold},
                {"overlap_threshold", overlap_threshold},
                {"tokens_per_word", tokens_per_word},
                {"embed_dimension", embed_dimension},
                {"writeback_retrieve_k", writeback_retrieve_k},
                {"oversample_factor", oversample_factor},
                {"worker_threads", worker_threads},
                {"writeback_enabled", writeback_enabled},
                {"online_writeback", online_writeback},
                {"writeback_variant", writeback_variant_name(writeback_variant)},
                {"answer_style", answer_style == AnswerStyle::ShortPhrase ? "short-phrase"
                                                                          : "episodic"},
                {"max_attempts", max_attempts},
                {"judge_temperature", judge_temperature},
                {"generator_temperature", generator_temperature},
                {"reward",
                 {{"correct_reward", reward.correct_reward},
                  {"wrong_penalty", reward.wrong_penalty},
                  {"cost_s", reward.cost_s},
                  {"cost_r", reward.cost_r},
                  {"waste_r", reward.waste_r},
                  {"format_error_penalty", reward.format_error_penalty}}}};
    }
};

struct Question {
    std::string query_id;
    std::string question;
    std::string gold_answer;
    std::string category;
};

inline std::vector<Question> load_questions(const std::string& path) {
    std::vector<Question> out;
    for (const auto& rec : jsonl::read_file(path)) {
        Question q;
        q.query_id = rec.value("query_id", "");
        q.question = rec.at("question").get<std::string>();
        q.gold_answer = rec.value("gold_answer", "");
        q.category = rec.value("category", "");
        if (q.query_id.empty()) q.query_id = "q" + text::zero_pad(out.size() + 1, 4);
        out.push_back(std::move(q));
    }
    return out;
}

// Per-query trace. The token identities tok_in_total = tok_qa_in +
// tok_router_in and tok_out_total = tok_gen_out + tok_router_out hold exactly
// for every record.
struct RoutingRecord {
    std::string query_id;
    std::string question;
    Action route = Action::S;
    std::string answer;
    std::int64_t tok_qa_in = 0;
    std::int64_t tok_router_in = 0;
    std::int64_t tok_gen_out = 0;
    std::int64_t tok_router_out = 0;
    double latency_seconds = 0.0;
    std::optional<EvidencePack> escalation;
    std::int64_t epoch = 0;
    std::string category;
    bool error = false;
    std::string error_message;

    // Filled by the eval harness.
    std::optional<bool> correct;
    std::string judge_label;
    std::string judge_reason;
    bool judge_flagged = false;
    std::optional<bool> s_correct; // two-path mode
    std::optional<bool> r_correct;
    std::optional<bool> c_s;
    std::vector<std::string> summaries; // retrieved texts, two-path mode only

    std::int64_t tok_in_total() const { return tok_qa_in + tok_router_in; }
    std::int64_t tok_out_total() const { return tok_gen_out + tok_router_out; }

    nlohmann::json to_json() const {
        nlohmann::json j = {{"query_id", query_id},
                            {"question", question},
                            {"route", action_name(route)},
                            {"answer", answer},
                            {"tok_qa_in", tok_qa_in},
                            {"tok_router_in", tok_router_in},
                            {"tok_gen_out", tok_gen_out},
                            {"tok_router_out", tok_router_out},
                            {"tok_in_total", tok_in_total()},
                            {"tok_out_total", tok_out_total()},
                            {"latency_seconds", latency_seconds},
                            {"epoch", epoch},
                            {"category", category},
                            {"error", error},
                            {"error_message", error_message}};
        if (escalation) {
            nlohmann::json facts = nlohmann::json::array();
            for (const auto& f : escalation->facts) facts.push_back(linked_fact_to_json(f));
            j["escalation"] = {{"iterations", escalation->iterations_used},
                               {"commands", escalation->searched_queries},
                               {"pages_read", escalation->pages_read},
                               {"facts", std::move(facts)},
                               {"error", escalation->error}};
        }
        if (correct) {
            j["correct"] = *correct;
            j["judge_label"] = judge_label;
            j["judge_reason"] = judge_reason;
            j["judge_flagged"] = judge_flagged;
        }
        if (s_correct) j["s_correct"] = *s_correct;
        if (r_correct) j["r_correct"] = *r_correct;
        if (c_s) j["c_s"] = *c_s;
        if (!summaries.empty()) j["summaries"] = summaries;
        return j;
    }
};

struct IngestStats {
    std::size_t pages = 0;
    std::size_t units = 0;
};

struct ConsolidationResult {
    std::vector<WriteOp> ops;
    BatchSummary summary;
};

// End-to-end engine: wires the stores, gateway, router, research loop and
// write-back manager together and owns the per-query protocol.
class Engine {
public:
    Engine(EngineConfig config, std::shared_ptr<Backend> backend)
        : config_(std::move(config)),
          estimator_(config_.tokens_per_word),
          gateway_(std::move(backend), estimator_,
                   LlmGateway::Options{config_.max_attempts, config_.judge_temperature,
                                       config_.generator_temperature, config_.answer_style}),
          pages_(config_.max_page_tokens, estimator_),
          embedder_(std::make_shared<HashedBowEmbedder>(config_.embed_dimension)),
          index_(pages_, embedder_),
          reranker_(),
          router_(gateway_),
          research_(pages_, index_, gateway_, reranker_,
                    ResearchConfig{config_.t_max, config_.rerank_k, config_.k_summaries,
                                   config_.keyword_k, config_.overlap_threshold,
                                   config_.protection_threshold}),
          writeback_(index_, gateway_, config_.writeback_retrieve_k) {}

    const EngineConfig& config() const { return config_; }
    PageStore& pages() { return pages_; }
    SummaryIndex& index() { return index_; }
    LlmGateway& gateway() { return gateway_; }
    Router& router() { return router_; }
    ResearchLoop& research() { return research_; }
    WriteBackManager& writeback() { return writeback_; }

    void set_events_path(std::string path) { events_path_ = std::move(path); }

    // Paged ingestion: appends the transcript (skipping turns already stored
    // for the session), flushes the tail page, and runs deferred
    // summarization so every sealed page ends up indexed.
    IngestStats ingest(const std::string& session_id, const std::vector<Turn>& transcript) {
        const std::size_t already = pages_.turn_count(session_id);
        const std::size_t pages_before = pages_.page_count();
        const std::size_t units_before = index_.size();
        for (std::size_t i = already; i < transcript.size(); ++i)
            pages_.append_turn(session_id, transcript[i]);
        pages_.flush(session_id);
        index_.auto_summary(session_id, gateway_);
        return {pages_.page_count() - pages_before, index_.size() - units_before};
    }

    // Phase 1/2 dispatch with full cost accounting. Gateway failures yield a
    // query-level error record instead of aborting the run.
    RoutingRecord answer(const std::string& question, const std::string& query_id = "",
                         std::int64_t epoch = 0) {
        RoutingRecord rec;
        rec.query_id = query_id;
        rec.question = question;
        rec.epoch = epoch;
        try {
            const auto hits = index_.size() > 0
                                  ? index_.search(question, config_.k_summaries)
                                  : std::vector<RetrievalHit>{};
            const auto decision = router_.route(question, hits);
            rec.route = decision.action;
            rec.tok_router_in = decision.usage.input_tokens;
            rec.tok_router_out = decision.usage.output_tokens;
            rec.latency_seconds += decision.usage.latency_seconds;
            if (decision.action == Action::S) {
                answer_from_summaries(question, hits, rec);
            } else {
                answer_from_research(question, hits, rec, epoch);
            }
        } catch (const Error& e) {
            rec.error = true;
            rec.error_message = e.what();
        }
        return rec;
    }

    struct TwoPathAnswers {
        RoutingRecord record;
        std::string s_answer;
        std::string r_answer;
        std::string summaries_block;
    };

    // Analysis mode: executes both the summary path and the research path for
    // the same query. The record's accounting reflects the routed path.
    TwoPathAnswers answer_two_path(const std::string& question, const std::string& query_id = "",
                                   std::int64_t epoch = 0) {
        TwoPathAnswers out;
        RoutingRecord& rec = out.record;
        rec.query_id = query_id;
        rec.question = question;
        rec.epoch = epoch;
        const auto hits = index_.size() > 0 ? index_.search(question, config_.k_summaries)
                                            : std::vector<RetrievalHit>{};
        out.summaries_block = Router::summaries_block(hits);
        for (const auto& h : hits) rec.summaries.push_back(h.unit.text);
        const auto decision = router_.route(question, hits);
        rec.route = decision.action;
        rec.tok_router_in = decision.usage.input_tokens;
        rec.tok_router_out = decision.usage.output_tokens;
        rec.latency_seconds += decision.usage.latency_seconds;

        RoutingRecord s_rec = rec;
        answer_from_summaries(question, hits, s_rec);
        out.s_answer = s_rec.answer;
        RoutingRecord r_rec = rec;
        answer_from_research(question, hits, r_rec, epoch, /*collect=*/false);
        out.r_answer = r_rec.answer;

        rec = decision.action == Action::S ? s_rec : r_rec;
        rec.answer = decision.action == Action::S ? out.s_answer : out.r_answer;
        return out;
    }

    // Answers the batch with Tier-1 frozen; findings accumulate for the
    // between-epoch consolidation. Per-query failures are recorded and the
    // batch continues. With worker_threads > 1 the shared stores are
    // read-only and the epoch log is an append-only sink, so queries may run
    // on a bounded pool; record order stays input order either way.
    std::vector<RoutingRecord> run_batch(const std::vector<Question>& questions,
                                         std::int64_t epoch) {
        {
            std::lock_guard lock(findings_mu_);
            if (!pending_findings_.empty())
                throw ContractViolation("pending findings must be consolidated before a batch");
        }
        std::vector<RoutingRecord> records(questions.size());
        const int workers =
            std::max(1, std::min<int>(config_.worker_threads,
                                      static_cast<int>(questions.size() > 0 ? questions.size() : 1)));
        if (workers == 1) {
            for (std::size_t i = 0; i < questions.size(); ++i) {
                records[i] = answer(questions[i].question, questions[i].query_id, epoch);
                records[i].category = questions[i].category;
            }
            return records;
        }
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&]() {
                for (std::size_t i = next.fetch_add(1); i < questions.size();
                     i = next.fetch_add(1)) {
                    records[i] = answer(questions[i].question, questions[i].query_id, epoch);
                    records[i].category = questions[i].category;
                }
            });
        }
        for (auto& t : pool) t.join();
        return records;
    }

    std::vector<VerifiedFinding> pending_findings() const {
        std::lock_guard lock(findings_mu_);
        return pending_findings_;
    }

    void add_finding(VerifiedFinding finding) {
        std::lock_guard lock(findings_mu_);
        pending_findings_.push_back(std::move(finding));
    }

    void clear_findings() {
        std::lock_guard lock(findings_mu_);
        pending_findings_.clear();
    }

    // Between epochs: decide ADD/UPDATE/SKIP for every pending finding under
    // the chosen variant, apply the batch, and stamp new units with
    // next_epoch.
    ConsolidationResult consolidate_and_apply(WritebackVariant variant, std::int64_t next_epoch) {
        std::vector<VerifiedFinding> findings;
        {
            std::lock_guard lock(findings_mu_);
            findings = pending_findings_;
        }
        EpochLog log;
        for (const auto& f : findings) log.append(writeback_.consolidate(f, variant));
        const BatchSummary summary = writeback_.apply_epoch_batch(log, next_epoch);
        {
            std::lock_guard lock(findings_mu_);
            pending_findings_.clear();
        }
        return {log.ops(), summary};
    }

private:
    void answer_from_summaries(const std::string& question, const std::vector<RetrievalHit>& hits,
                               RoutingRecord& rec) {
        auto response = gateway_.complete(
            PromptKind::AnswerSummary,
            {{"question", question}, {"summary", Router::summaries_block(hits)}});
        rec.answer = text::trim(response.raw_text);
        rec.tok_qa_in = response.usage.input_tokens;
        rec.tok_gen_out = response.usage.output_tokens;
        rec.latency_seconds += response.usage.latency_seconds;
    }

    void answer_from_research(const std::string& question, const std::vector<RetrievalHit>& hits,
                              RoutingRecord& rec, std::int64_t epoch, bool collect = true) {
        EvidencePack pack = research_.escalate(question, hits);
        auto response = gateway_.complete(
            PromptKind::AnswerResearch,
            {{"question", question}, {"evidence", evidence_summary(pack)}});
        rec.answer = text::trim(response.raw_text);
        rec.tok_qa_in = pack.usage.input_tokens + response.usage.input_tokens;
        rec.tok_gen_out = pack.usage.output_tokens + response.usage.output_tokens;
        rec.latency_seconds += pack.usage.latency_seconds + response.usage.latency_seconds;
        trace_escalation(rec.query_id, pack);

        if (collect && config_.writeback_enabled) {
            auto findings = writeback_.verify_findings(question, pack.facts, epoch);
            if (config_.online_writeback) {
                EpochLog online;
                for (const auto& f : findings)
                    online.append(writeback_.consolidate(f, config_.writeback_variant));
                writeback_.apply_epoch_batch(online, epoch);
            } else {
                std::lock_guard lock(findings_mu_);
                for (auto& f : findings) pending_findings_.push_back(std::move(f));
            }
        }
        rec.escalation = std::move(pack);
    }

    static std::string evidence_summary(const EvidencePack& pack) {
        if (pack.facts.empty()) return "(no verified findings)";
        std::string block;
        for (const auto& f : pack.facts) {
            block += "- " + f.fact;
            if (!f.evidence_quote.empty()) block += " (evidence: \"" + f.evidence_quote + "\")";
            block += "\n";
        }
        return block;
    }

    void trace_escalation(const std::string& query_id, const EvidencePack& pack) {
        if (events_path_.empty()) return;
        nlohmann::json facts = nlohmann::json::array();
        for (const auto& f : pack.facts) facts.push_back(linked_fact_to_json(f));
        std::lock_guard lock(events_mu_);
        jsonl::append_line(events_path_, {{"query_id", query_id},
                                          {"iterations", pack.iterations_used},
                                          {"commands", pack.searched_queries},
                                          {"pages_read", pack.pages_read},
                                          {"facts", std::move(facts)}});
    }

    EngineConfig config_;
    TokenEstimator estimator_;
    LlmGateway gateway_;
    PageStore pages_;
    std::shared_ptr<Embedder> embedder_;
    SummaryIndex index_;
    LexicalOverlapReranker reranker_;
    Router router_;
    ResearchLoop research_;
    WriteBackManager writeback_;
    mutable std::mutex findings_mu_;
    std::vector<VerifiedFinding> pending_findings_;
    std::mutex events_mu_;
    std::string events_path_;
};

inline void write_records(const std::string& path, const std::vector<RoutingRecord>& records) {
    std::vector<nlohmann::json> lines;
    lines.reserve(records.size());
    for (const auto& r : records) lines.push_back(r.to_json());
    jsonl::write_file(path, lines);
}

} // namespace tiermem
