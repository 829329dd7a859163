#pragma once

#include "tiermem/errors.hpp"
#include "tiermem/gateway.hpp"
#include "tiermem/orchestrator.hpp"
#include "tiermem/router.hpp"
#include "tiermem/writeback.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tiermem {

struct JudgeVerdict {
    std::string label = "WRONG";
    std::string reason;
    bool flagged = false; // unparseable judge output was coerced to WRONG

    bool correct() const { return label == "CORRECT"; }
};

// LLM judges. Both run at temperature 0; any parse or transport failure can
// only lower the outcome (WRONG / insufficient), never raise it.
class Judge {
public:
    explicit Judge(LlmGateway& gateway) : gateway_(gateway) {}

    JudgeVerdict judge_correctness(const std::string& question, const std::string& gold,
                                   const std::string& generated) {
        JudgeVerdict verdict;
        try {
            auto response = gateway_.complete(PromptKind::JudgeCorrectness,
                                              {{"question", question},
                                               {"gold_answer", gold},
                                               {"generated_answer", generated}});
            if (response.parse_status != ParseStatus::ok) {
                verdict.flagged = true;
                return verdict;
            }
            verdict.label = (*response.payload)["label"].get<std::string>();
            if (response.payload->contains("reason") && (*response.payload)["reason"].is_string())
                verdict.reason = (*response.payload)["reason"].get<std::string>();
        } catch (const BackendError& e) {
            verdict.flagged = true;
            verdict.reason = e.what();
        }
        return verdict;
    }

    bool judge_sufficiency(const std::string& question, const std::string& gold,
                           const std::string& summaries_text) {
        try {
            auto response = gateway_.complete(PromptKind::JudgeSufficiency,
                                              {{"question", question},
                                               {"gold_answer", gold},
                                               {"summaries_text", summaries_text}});
            if (response.parse_status != ParseStatus::ok) return false; // conservative
            return (*response.payload)["has_sufficient_info"].get<bool>();
        } catch (const BackendError&) {
            return false;
        }
    }

private:
    LlmGateway& gateway_;
};

// A rate with its denominator kept alongside, so every reported number is
// auditable.
struct Rate {
    double value = 0.0;
    std::int64_t numerator = 0;
    std::int64_t denominator = 0;

    static Rate of(std::int64_t num, std::int64_t den) {
        Rate r;
        r.numerator = num;
        r.denominator = den;
        r.value = den > 0 ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
        return r;
    }
    nlohmann::json to_json() const {
        return {{"value", value}, {"numerator", numerator}, {"denominator", denominator}};
    }
};

struct OverheadShares {
    double input_share = 0.0; // router input tokens / total input tokens
    double total_share = 0.0; // router tokens / all tokens
};

inline OverheadShares overhead_shares(double tok_qa_in, double tok_router_in, double tok_gen_out,
                                      double tok_router_out) {
    OverheadShares shares;
    const double in_total = tok_qa_in + tok_router_in;
    const double all_total = in_total + tok_gen_out + tok_router_out;
    if (in_total > 0) shares.input_share = tok_router_in / in_total;
    if (all_total > 0) shares.total_share = (tok_router_in + tok_router_out) / all_total;
    return shares;
}

struct CounterfactualMatrix {
    std::int64_t sc_rc = 0; // both paths correct
    std::int64_t sc_rw = 0; // escalation would hurt
    std::int64_t sw_rc = 0; // escalation repairs
    std::int64_t sw_rw = 0; // both fail
    std::optional<Rate> repair_rate;
    std::optional<Rate> regress_rate;

    std::int64_t total() const { return sc_rc + sc_rw + sw_rc + sw_rw; }

    nlohmann::json to_json() const {
        nlohmann::json j = {{"s_correct_r_correct", sc_rc},
                            {"s_correct_r_wrong", sc_rw},
                            {"s_wrong_r_correct", sw_rc},
                            {"s_wrong_r_wrong", sw_rw},
                            {"total", total()}};
        if (repair_rate) j["repair_rate"] = repair_rate->to_json();
        if (regress_rate) j["regress_rate"] = regress_rate->to_json();
        return j;
    }
};

// RepairRate = Pr(R correct | S wrong); RegressRate = Pr(R wrong | S correct).
// Undefined denominators stay absent rather than being zeroed.
inline CounterfactualMatrix counterfactual_from_counts(std::int64_t sc_rc, std::int64_t sc_rw,
                                                       std::int64_t sw_rc, std::int64_t sw_rw) {
    CounterfactualMatrix m;
    m.sc_rc = sc_rc;
    m.sc_rw = sc_rw;
    m.sw_rc = sw_rc;
    m.sw_rw = sw_rw;
    if (sw_rc + sw_rw > 0) m.repair_rate = Rate::of(sw_rc, sw_rc + sw_rw);
    if (sc_rw + sc_rc > 0) m.regress_rate = Rate::of(sc_rw, sc_rw + sc_rc);
    return m;
}

// Builds the 2x2 matrix over the R-routed records that carry two-path judge
// outcomes; one cell per query, the four cells partition the set.
inline CounterfactualMatrix counterfactual_matrix(const std::vector<RoutingRecord>& records) {
    std::int64_t sc_rc = 0, sc_rw = 0, sw_rc = 0, sw_rw = 0;
    for (const auto& rec : records) {
        if (rec.route != Action::R || !rec.s_correct || !rec.r_correct) continue;
        if (*rec.s_correct)
            (*rec.r_correct ? sc_rc : sc_rw)++;
        else
            (*rec.r_correct ? sw_rc : sw_rw)++;
    }
    return counterfactual_from_counts(sc_rc, sc_rw, sw_rc, sw_rw);
}

struct MetricsReport {
    Rate accuracy;
    Rate r_rate;
    std::optional<Rate> uor;
    std::optional<Rate> hard_recall;
    std::optional<Rate> repair_rate;
    std::optional<Rate> regress_rate;
    double router_overhead_share_in = 0.0;
    double router_overhead_share_total = 0.0;
    std::map<std::string, Rate> per_category_accuracy;

    nlohmann::json to_json() const {
        nlohmann::json j = {{"accuracy", accuracy.to_json()},
                            {"r_rate", r_rate.to_json()},
                            {"router_overhead_share_in", router_overhead_share_in},
                            {"router_overhead_share_total", router_overhead_share_total}};
        if (uor) j["uor"] = uor->to_json();
        if (hard_recall) j["hard_recall"] = hard_recall->to_json();
        if (repair_rate) j["repair_rate"] = repair_rate->to_json();
        if (regress_rate) j["regress_rate"] = regress_rate->to_json();
        nlohmann::json cats = nlohmann::json::object();
        for (const auto& [cat, rate] : per_category_accuracy) cats[cat] = rate.to_json();
        j["per_category_accuracy"] = std::move(cats);
        return j;
    }
};

// Single fold over the judged records. hard_recall needs oracle labels and
// is omitted (not zeroed) without them; uor and the counterfactual rates
// need two-path outcomes and are likewise omitted when absent.
inline MetricsReport
compute_metrics(const std::vector<RoutingRecord>& records,
                const std::optional<std::map<std::string, Label>>& oracle_labels = std::nullopt) {
    MetricsReport report;
    const std::int64_t total = static_cast<std::int64_t>(records.size());
    std::int64_t correct = 0, routed_r = 0;
    std::int64_t two_path = 0, uor_hits = 0;
    std::int64_t oracle_hard = 0, oracle_hard_escalated = 0;
    double qa_in = 0, router_in = 0, gen_out = 0, router_out = 0;
    std::map<std::string, std::pair<std::int64_t, std::int64_t>> cats;
    for (const auto& rec : records) {
        if (rec.correct && *rec.correct) ++correct;
        if (rec.route == Action::R) ++routed_r;
        if (rec.s_correct && rec.r_correct) {
            ++two_path;
            if (!*rec.s_correct && *rec.r_correct) ++uor_hits;
        }
        if (oracle_labels) {
            auto it = oracle_labels->find(rec.query_id);
            if (it != oracle_labels->end() && it->second == Label::R) {
                ++oracle_hard;
                if (rec.route == Action::R) ++oracle_hard_escalated;
            }
        }
        qa_in += static_cast<double>(rec.tok_qa_in);
        router_in += static_cast<double>(rec.tok_router_in);
        gen_out += static_cast<double>(rec.tok_gen_out);
        router_out += static_cast<double>(rec.tok_router_out);
        if (!rec.category.empty()) {
            auto& [num, den] = cats[rec.category];
            ++den;
            if (rec.correct && *rec.correct) ++num;
        }
    }
    report.accuracy = Rate::of(correct, total);
    report.r_rate = Rate::of(routed_r, total);
    if (two_path > 0) report.uor = Rate::of(uor_hits, two_path);
    if (oracle_labels && oracle_hard > 0)
        report.hard_recall = Rate::of(oracle_hard_escalated, oracle_hard);
    const auto shares = overhead_shares(qa_in, router_in, gen_out, router_out);
    report.router_overhead_share_in = shares.input_share;
    report.router_overhead_share_total = shares.total_share;
    const auto matrix = counterfactual_matrix(records);
    report.repair_rate = matrix.repair_rate;
    report.regress_rate = matrix.regress_rate;
    for (const auto& [cat, nd] : cats)
        report.per_category_accuracy[cat] = Rate::of(nd.first, nd.second);
    return report;
}

// Drives judging, the two-path analysis mode, and the epoch-wise replay.
class EvalHarness {
public:
    explicit EvalHarness(Engine& engine) : engine_(engine), judge_(engine.gateway()) {}

    Judge& judge() { return judge_; }

    void judge_records(std::vector<RoutingRecord>& records,
                       const std::vector<Question>& questions) {
        std::map<std::string, const Question*> by_id;
        for (const auto& q : questions) by_id[q.query_id] = &q;
        for (auto& rec : records) {
            auto it = by_id.find(rec.query_id);
            if (it == by_id.end()) continue;
            const auto verdict =
                judge_.judge_correctness(rec.question, it->second->gold_answer, rec.answer);
            rec.correct = verdict.correct();
            rec.judge_label = verdict.label;
            rec.judge_reason = verdict.reason;
            rec.judge_flagged = verdict.flagged;
        }
    }

    // Runs both paths per query and fills s_correct / r_correct / c_s, which
    // is what UOR, the counterfactual matrices and hindsight labels need.
    std::vector<RoutingRecord> two_path_run(const std::vector<Question>& questions,
                                            std::int64_t epoch = 0) {
        std::vector<RoutingRecord> records;
        records.reserve(questions.size());
        for (const auto& q : questions) {
            auto tp = engine_.answer_two_path(q.question, q.query_id, epoch);
            RoutingRecord rec = std::move(tp.record);
            rec.category = q.category;
            rec.s_correct = judge_.judge_correctness(q.question, q.gold_answer, tp.s_answer).correct();
            rec.r_correct = judge_.judge_correctness(q.question, q.gold_answer, tp.r_answer).correct();
            rec.c_s = judge_.judge_sufficiency(q.question, q.gold_answer, tp.summaries_block);
            rec.correct = rec.route == Action::S ? *rec.s_correct : *rec.r_correct;
            rec.judge_label = *rec.correct ? "CORRECT" : "WRONG";
            records.push_back(std::move(rec));
        }
        return records;
    }

    // Sufficiency labels for the offline training-data pipeline.
    std::vector<TwoPathOutcome> to_outcomes(const std::vector<RoutingRecord>& records) {
        std::vector<TwoPathOutcome> out;
        for (const auto& rec : records) {
            if (!rec.c_s || !rec.r_correct) continue;
            TwoPathOutcome o;
            o.query = rec.question;
            o.summaries = rec.summaries;
            o.c_s = *rec.c_s;
            o.c_r = *rec.r_correct;
            out.push_back(std::move(o));
        }
        return out;
    }

    // Epoch-wise replay: Tier-1 frozen inside each epoch, verified findings
    // consolidated between epochs. A failing epoch aborts the ones after it.
    std::vector<EpochReport> replay(const std::vector<Question>& questions, int epochs,
                                    WritebackVariant variant, bool apply_after_last = false,
                                    std::vector<RoutingRecord>* all_records = nullptr) {
        if (epochs < 1) throw ValidationError("replay needs at least one epoch");
        std::vector<EpochReport> rows;
        for (int e = 1; e <= epochs; ++e) {
            const std::int64_t writes_before = engine_.index().write_count();
            auto records = engine_.run_batch(questions, e);
            const std::int64_t writes_after = engine_.index().write_count();
            judge_records(records, questions);

            EpochReport row;
            row.epoch = e;
            row.tier1_writes_during_epoch = writes_after - writes_before;
            std::int64_t correct = 0, s_traffic = 0, s_correct = 0;
            double tok = 0, lat = 0;
            for (const auto& rec : records) {
                const bool ok = rec.correct && *rec.correct;
                if (ok) ++correct;
                if (rec.route == Action::S) {
                    ++s_traffic;
                    if (ok) ++s_correct;
                }
                tok += static_cast<double>(rec.tok_in_total() + rec.tok_out_total());
                lat += rec.latency_seconds;
            }
            const auto n = static_cast<double>(records.size());
            row.overall_acc = n > 0 ? static_cast<double>(correct) / n : 0.0;
            row.s_traffic = s_traffic;
            row.s_acc = s_traffic > 0 ? static_cast<double>(s_correct) /
                                            static_cast<double>(s_traffic)
                                      : 0.0;
            row.s_correct = s_correct;
            row.tok_avg = n > 0 ? tok / n : 0.0;
            row.latency = n > 0 ? lat / n : 0.0;

            if (e < epochs || apply_after_last) {
                const auto result = engine_.consolidate_and_apply(variant, e + 1);
                row.adds = result.summary.adds;
                row.updates = result.summary.updates;
            } else {
                engine_.clear_findings();
            }
            rows.push_back(row);
            if (all_records)
                all_records->insert(all_records->end(), records.begin(), records.end());
        }
        return rows;
    }

private:
    Engine& engine_;
    Judge judge_;
};

inline nlohmann::json metrics_json(const MetricsReport& report, const nlohmann::json& config) {
    return {{"config", config}, {"metrics", report.to_json()}};
}

inline nlohmann::json evolution_json(const std::vector<EpochReport>& rows,
                                     const nlohmann::json& config) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& r : rows) epochs.push_back(r.to_json());
    return {{"config", config}, {"epochs", std::move(epochs)}};
}

} // namespace tiermem
