#pragma once

#include "tiermem/errors.hpp"
#include "tiermem/gateway.hpp"
#include "tiermem/jsonl.hpp"
#include "tiermem/research.hpp"
#include "tiermem/summary_index.hpp"

#include <json.hpp>

#include <cstdint>
#include <mutex>
#include <string>
#include <vector>

namespace tiermem {

// A fact that passed grounding verification; only these may touch Tier-1.
struct VerifiedFinding {
    LinkedFact fact; // source_pages guaranteed non-empty
    std::string triggering_query;
    std::int64_t epoch = 0;
};

enum class WriteKind { Add, Update, Skip };

inline const char* write_kind_name(WriteKind k) {
    switch (k) {
    case WriteKind::Add: return "ADD";
    case WriteKind::Update: return "UPDATE";
    case WriteKind::Skip: return "SKIP";
    }
    return "?";
}

struct WriteOp {
    WriteKind kind = WriteKind::Skip;
    std::string target_unit; // UPDATE only
    std::string merged_text; // UPDATE only
    VerifiedFinding finding;
    bool error = false;
    std::string error_message;
};

// Ops collected while Tier-1 is frozen; applying them is the only mutation
// path and happens between epochs, in collection order.
class EpochLog {
public:
    void append(WriteOp op) {
        std::lock_guard lock(mu_);
        ops_.push_back(std::move(op));
    }
    std::vector<WriteOp> ops() const {
        std::lock_guard lock(mu_);
        return ops_;
    }
    std::size_t size() const {
        std::lock_guard lock(mu_);
        return ops_.size();
    }
    bool empty() const { return size() == 0; }
    void clear() {
        std::lock_guard lock(mu_);
        ops_.clear();
    }

private:
    mutable std::mutex mu_;
    std::vector<WriteOp> ops_;
};

struct BatchSummary {
    std::int64_t adds = 0;
    std::int64_t updates = 0;
    std::int64_t skips = 0;
};

// One row of the epoch-wise evolution table.
struct EpochReport {
    std::int64_t epoch = 0;
    double overall_acc = 0.0;
    std::int64_t s_traffic = 0;
    double s_acc = 0.0;
    std::int64_t s_correct = 0;
    double tok_avg = 0.0;
    double latency = 0.0;
    std::int64_t adds = 0;
    std::int64_t updates = 0;
    std::int64_t tier1_writes_during_epoch = 0;

    nlohmann::json to_json() const {
        return {{"epoch", epoch},
                {"overall_acc", overall_acc},
                {"s_traffic", s_traffic},
                {"s_acc", s_acc},
                {"s_correct", s_correct},
                {"tok_avg", tok_avg},
                {"latency", latency},
                {"adds", adds},
                {"updates", updates},
                {"tier1_writes_during_epoch", tier1_writes_during_epoch}};
    }
};

enum class WritebackVariant { NoRecall, RetrieveEdit };

inline const char* writeback_variant_name(WritebackVariant v) {
    return v == WritebackVariant::NoRecall ? "no-recall" : "retrieve-edit";
}

inline WritebackVariant writeback_variant_from_name(const std::string& name) {
    if (name == "no-recall") return WritebackVariant::NoRecall;
    if (name == "retrieve-edit") return WritebackVariant::RetrieveEdit;
    throw ValidationError("unknown write-back variant: " + name);
}

// Phase 3: verified write-back. Verification gates facts on both judge
// selection and non-empty deterministic grounding; consolidation chooses
// ADD/UPDATE/SKIP; the epoch batch is the only Tier-1 mutation path.
class WriteBackManager {
public:
    WriteBackManager(SummaryIndex& index, LlmGateway& gateway, int retrieve_k = 3)
        : index_(index), gateway_(gateway), retrieve_k_(retrieve_k) {
        if (retrieve_k_ < 1) throw ValidationError("retrieve_k must be >= 1");
    }

    // Runs the grounding-verification prompt and keeps only the selected
    // facts that also carry non-empty source_pages. Any failure (format or
    // transport) selects nothing: the safe default is to write nothing.
    std::vector<VerifiedFinding> verify_findings(const std::string& query,
                                                 const std::vector<LinkedFact>& facts,
                                                 std::int64_t epoch) {
        if (facts.empty()) return {};
        std::string facts_list;
        for (std::size_t i = 0; i < facts.size(); ++i) {
            facts_list += "[" + std::to_string(i) + "] " + facts[i].fact;
            if (!facts[i].evidence_quote.empty())
                facts_list += " (evidence: \"" + facts[i].evidence_quote + "\")";
            facts_list += "\n";
        }
        std::vector<VerifiedFinding> findings;
        try {
            auto response = gateway_.complete(PromptKind::WriteBackVerify,
                                              {{"question", query}, {"facts_list", facts_list}});
            if (response.parse_status != ParseStatus::ok) return {};
            for (const auto& idx : *response.payload) {
                const auto i = idx.get<std::int64_t>();
                if (i < 0 || i >= static_cast<std::int64_t>(facts.size())) continue;
                const auto& fact = facts[static_cast<std::size_t>(i)];
                if (fact.source_pages.empty()) continue; // grounding gate
                findings.push_back({fact, query, epoch});
            }
        } catch (const BackendError&) {
            return {};
        }
        return findings;
    }

    // No-Recall: decide from the finding and its triggering query alone,
    // without retrieving related Tier-1 units; only ADD or SKIP.
    WriteOp consolidate_no_recall(const VerifiedFinding& finding) {
        WriteOp op;
        op.finding = finding;
        try {
            auto response = gateway_.complete(PromptKind::WriteBackEdit,
                                              {{"fact", finding.fact.fact},
                                               {"question", finding.triggering_query},
                                               {"candidates_block", "(none)"}});
            if (response.parse_status != ParseStatus::ok) {
                op.kind = WriteKind::Skip;
                return op;
            }
            const std::string decided = (*response.payload)["op"].get<std::string>();
            if (decided == "ADD") {
                op.kind = WriteKind::Add;
            } else if (decided == "UPDATE") {
                // This variant never emits UPDATE.
                op.kind = WriteKind::Skip;
                op.error = true;
                op.error_message = "UPDATE is not available under no-recall write-back";
            } else {
                op.kind = WriteKind::Skip;
            }
        } catch (const BackendError& e) {
            op.kind = WriteKind::Skip;
            op.error = true;
            op.error_message = e.what();
        }
        return op;
    }

    // Retrieve-and-Edit: recall the top-k related Tier-1 units with the
    // finding as the query, then let the manager choose ADD/UPDATE/SKIP.
    WriteOp consolidate_retrieve_edit(const VerifiedFinding& finding) {
        WriteOp op;
        op.finding = finding;
        std::vector<RetrievalHit> candidates;
        if (index_.size() > 0)
            candidates = index_.search(finding.fact.fact, static_cast<std::size_t>(retrieve_k_));
        if (candidates.empty()) {
            op.kind = WriteKind::Add; // nothing to entail or update
            return op;
        }
        std::string block;
        for (const auto& hit : candidates)
            block += "[" + hit.unit.unit_id + "] " + hit.unit.text + "\n";
        try {
            auto response = gateway_.complete(PromptKind::WriteBackEdit,
                                              {{"fact", finding.fact.fact},
                                               {"question", finding.triggering_query},
                                               {"candidates_block", block}});
            if (response.parse_status != ParseStatus::ok) {
                op.kind = WriteKind::Skip;
                return op;
            }
            const json& payload = *response.payload;
            const std::string decided = payload["op"].get<std::string>();
            if (decided == "ADD") {
                op.kind = WriteKind::Add;
            } else if (decided == "SKIP") {
                op.kind = WriteKind::Skip;
            } else {
                const std::string target = payload["target_unit"].get<std::string>();
                const bool known = std::any_of(
                    candidates.begin(), candidates.end(),
                    [&](const RetrievalHit& h) { return h.unit.unit_id == target; });
                if (!known) {
                    op.kind = WriteKind::Skip;
                    op.error = true;
                    op.error_message = "UPDATE names a non-candidate unit: " + target;
                } else {
                    op.kind = WriteKind::Update;
                    op.target_unit = target;
                    op.merged_text = payload["merged_text"].get<std::string>();
                }
            }
        } catch (const BackendError& e) {
            op.kind = WriteKind::Skip;
            op.error = true;
            op.error_message = e.what();
        }
        return op;
    }

    WriteOp consolidate(const VerifiedFinding& finding, WritebackVariant variant) {
        return variant == WritebackVariant::NoRecall ? consolidate_no_recall(finding)
                                                     : consolidate_retrieve_edit(finding);
    }

    // Applies the logged ops in collection order. New and updated units get
    // created_epoch = next_epoch. A failure aborts with the count of ops
    // already applied so the batch is replayable from there.
    BatchSummary apply_epoch_batch(const EpochLog& log, std::int64_t next_epoch) {
        BatchSummary summary;
        const auto ops = log.ops();
        for (std::size_t i = 0; i < ops.size(); ++i) {
            const WriteOp& op = ops[i];
            try {
                switch (op.kind) {
                case WriteKind::Add:
                    if (op.finding.fact.source_pages.empty())
                        throw ProvenanceError("ungrounded finding reached the write path");
                    index_.add_unit(op.finding.fact.fact, op.finding.fact.source_pages,
                                    kSourceLinkedFact, next_epoch);
                    ++summary.adds;
                    break;
                case WriteKind::Update:
                    if (op.finding.fact.source_pages.empty())
                        throw ProvenanceError("ungrounded finding reached the write path");
                    index_.update_unit(op.target_unit, op.merged_text,
                                       op.finding.fact.source_pages, next_epoch);
                    ++summary.updates;
                    break;
                case WriteKind::Skip:
                    ++summary.skips;
                    break;
                }
            } catch (const Error& e) {
                throw BatchApplyError(std::string("epoch batch failed: ") + e.what(), i);
            }
        }
        return summary;
    }

private:
    SummaryIndex& index_;
    LlmGateway& gateway_;
    int retrieve_k_;
};

inline nlohmann::json write_op_to_json(const WriteOp& op) {
    return {{"kind", write_kind_name(op.kind)},
            {"target_unit", op.target_unit},
            {"merged_text", op.merged_text},
            {"finding",
             {{"fact", linked_fact_to_json(op.finding.fact)},
              {"triggering_query", op.finding.triggering_query},
              {"epoch", op.finding.epoch}}},
            {"error", op.error},
            {"error_message", op.error_message}};
}

inline WriteOp write_op_from_json(const nlohmann::json& j) {
    WriteOp op;
    const std::string kind = j.at("kind").get<std::string>();
    op.kind = kind == "ADD" ? WriteKind::Add : (kind == "UPDATE" ? WriteKind::Update : WriteKind::Skip);
    op.target_unit = j.at("target_unit").get<std::string>();
    op.merged_text = j.at("merged_text").get<std::string>();
    op.finding.fact = linked_fact_from_json(j.at("finding").at("fact"));
    op.finding.triggering_query = j.at("finding").at("triggering_query").get<std::string>();
    op.finding.epoch = j.at("finding").at("epoch").get<std::int64_t>();
    op.error = j.at("error").get<bool>();
    op.error_message = j.at("error_message").get<std::string>();
    return op;
}

inline void save_epoch_log(const std::string& path, const EpochLog& log) {
    std::vector<nlohmann::json> lines;
    for (const auto& op : log.ops()) lines.push_back(write_op_to_json(op));
    jsonl::write_file(path, lines);
}

inline void load_epoch_log(const std::string& path, EpochLog& log) {
    for (const auto& rec : jsonl::read_file(path)) log.append(write_op_from_json(rec));
}

} // namespace tiermem
