#pragma once

#include "tiermem/errors.hpp"
#include "tiermem/gateway.hpp"
#include "tiermem/jsonl.hpp"
#include "tiermem/summary_index.hpp"
#include "tiermem/tokens.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace tiermem {

enum class Action { S, R };

inline const char* action_name(Action a) { return a == Action::S ? "S" : "R"; }

struct RouteDecision {
    Action action = Action::R;
    std::optional<std::string> thinking;
    bool format_ok = true; // false means the fallback rule picked the action
    TokenUsage usage;
};

enum class Label { S, R, Drop };

inline const char* label_name(Label l) {
    switch (l) {
    case Label::S: return "S";
    case Label::R: return "R";
    case Label::Drop: return "Drop";
    }
    return "?";
}

// Hindsight supervision signal from a two-path execution: c_s says the
// summary evidence sufficed, c_r says the raw-grounded answer was correct.
struct SufficiencyLabel {
    bool c_s = false;
    bool c_r = false;
    Label label = Label::Drop;
};

// S if the summary path suffices; R if only escalation recovers the answer;
// Drop when both paths fail (no signal on whether escalation helps).
inline SufficiencyLabel hindsight_label(bool c_s, bool c_r) {
    SufficiencyLabel out;
    out.c_s = c_s;
    out.c_r = c_r;
    out.label = c_s ? Label::S : (c_r ? Label::R : Label::Drop);
    return out;
}

struct RewardConfig {
    double correct_reward = 1.0;
    double wrong_penalty = -1.5;
    double cost_s = 0.0;
    double cost_r = 0.1;
    double waste_r = 0.4; // unnecessary escalation when the label is S
    double format_error_penalty = -1.0;
};

// Decision-level reward: accuracy term minus escalation cost minus the waste
// penalty for escalating when summaries sufficed. A malformed router output
// replaces the accuracy term with the format penalty and still pays the
// cost/waste of the fallback action (R), which does incur real escalation.
inline double reward(const RouteDecision& decision, const SufficiencyLabel& label,
                     bool answer_correct, const RewardConfig& cfg = {}) {
    if (label.label == Label::Drop)
        throw ContractViolation("reward is undefined for Drop-labeled instances");
    const double accuracy_term =
        decision.format_ok ? (answer_correct ? cfg.correct_reward : cfg.wrong_penalty)
                           : cfg.format_error_penalty;
    const double cost_term = decision.action == Action::R ? cfg.cost_r : cfg.cost_s;
    const double waste_term =
        (decision.action == Action::R && label.label == Label::S) ? cfg.waste_r : 0.0;
    return accuracy_term - cost_term - waste_term;
}

// The sufficiency router. Renders the routing prompt over the retrieved
// summaries, parses {"thinking","action"}, and falls back to Escalate on any
// format error (R is the faithful default).
class Router {
public:
    explicit Router(LlmGateway& gateway) : gateway_(gateway) {}

    static std::string summaries_block(const std::vector<RetrievalHit>& hits) {
        if (hits.empty()) return "(no summaries retrieved)";
        std::string block;
        for (std::size_t i = 0; i < hits.size(); ++i) {
            if (i) block.push_back('\n');
            block += "[" + std::to_string(i + 1) + "] " + hits[i].unit.text;
        }
        return block;
    }

    RouteDecision route(const std::string& query, const std::vector<RetrievalHit>& hits) {
        auto response = gateway_.complete(
            PromptKind::Router, {{"q", query}, {"summaries_block", summaries_block(hits)}});
        RouteDecision decision;
        decision.usage = response.usage;
        if (response.parse_status != ParseStatus::ok) {
            decision.action = Action::R;
            decision.format_ok = false;
            return decision;
        }
        const json& payload = *response.payload;
        decision.action = payload["action"].get<std::string>() == "S" ? Action::S : Action::R;
        decision.format_ok = true;
        if (payload.contains("thinking"))
            decision.thinking = payload["thinking"].get<std::string>();
        return decision;
    }

private:
    LlmGateway& gateway_;
};

// One two-path execution outcome from the offline QA log.
struct TwoPathOutcome {
    std::string query;
    std::vector<std::string> summaries;
    bool c_s = false;
    bool c_r = false;
};

struct TrainingRecord {
    std::string query;
    std::vector<std::string> summaries;
    Label label = Label::S;
    bool c_s = false;
    bool c_r = false;
};

using Paraphraser = std::function<std::vector<std::string>(const std::string&)>;

// Filters the offline log down to supervisable instances (drops both-fail
// cases and any instance whose R-path failed) and oversamples the
// escalation-necessary cases. An optional paraphraser augments queries while
// inheriting the same memory state and label.
inline std::vector<TrainingRecord>
build_training_records(const std::vector<TwoPathOutcome>& log, int oversample_factor = 2,
                       const Paraphraser& paraphrase = nullptr) {
    if (oversample_factor < 1) throw ValidationError("oversample_factor must be >= 1");
    std::vector<TrainingRecord> out;
    for (const auto& entry : log) {
        const auto lab = hindsight_label(entry.c_s, entry.c_r);
        if (lab.label == Label::Drop) continue;
        if (!entry.c_r) continue;
        TrainingRecord rec{entry.query, entry.summaries, lab.label, entry.c_s, entry.c_r};
        std::vector<TrainingRecord> variants{rec};
        if (paraphrase) {
            for (const auto& alt : paraphrase(entry.query)) {
                TrainingRecord v = rec;
                v.query = alt;
                variants.push_back(std::move(v));
            }
        }
        const int copies = lab.label == Label::R ? oversample_factor : 1;
        for (int c = 0; c < copies; ++c)
            for (const auto& v : variants) out.push_back(v);
    }
    return out;
}

// The training-data shape emitted for external router trainers.
inline nlohmann::json training_record_to_json(const TrainingRecord& rec) {
    return {{"query", rec.query},
            {"summaries", rec.summaries},
            {"label", label_name(rec.label)},
            {"c_s", rec.c_s},
            {"c_r", rec.c_r}};
}

inline void write_training_records(const std::string& path,
                                   const std::vector<TrainingRecord>& records) {
    std::vector<nlohmann::json> lines;
    lines.reserve(records.size());
    for (const auto& r : records) lines.push_back(training_record_to_json(r));
    jsonl::write_file(path, lines);
}

} // namespace tiermem
