#pragma once

#include "tiermem/errors.hpp"
#include "tiermem/gateway.hpp"
#include "tiermem/page_store.hpp"
#include "tiermem/summary_index.hpp"
#include "tiermem/text.hpp"

#include <json.hpp>

#include <algorithm>
#include <set>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace tiermem {

enum class SearchKind { SemanticSearch, KeywordSearch };

// The wire tokens the plan prompt uses for the two retrieval operators.
inline constexpr const char* kWireSemanticSearch = "MEM0_SEARCH";
inline constexpr const char* kWireKeywordSearch = "KEYWORD_SEARCH";

struct SearchCommand {
    SearchKind kind = SearchKind::SemanticSearch;
    std::string query;                 // SemanticSearch payload
    std::vector<std::string> keywords; // KeywordSearch payload

    const char* wire_name() const {
        return kind == SearchKind::SemanticSearch ? kWireSemanticSearch : kWireKeywordSearch;
    }

    // Commands compare equal by (kind, normalized payload).
    std::string dedupe_key() const {
        if (kind == SearchKind::SemanticSearch)
            return std::string(kWireSemanticSearch) + ":" + text::normalize_quote(query);
        std::vector<std::string> norm;
        for (const auto& kw : keywords)
            for (auto& t : text::tokenize(kw)) norm.push_back(t);
        std::sort(norm.begin(), norm.end());
        norm.erase(std::unique(norm.begin(), norm.end()), norm.end());
        std::string key = kWireKeywordSearch;
        key += ":";
        for (std::size_t i = 0; i < norm.size(); ++i) {
            if (i) key += ",";
            key += norm[i];
        }
        return key;
    }

    std::string display() const {
        if (kind == SearchKind::SemanticSearch)
            return std::string(kWireSemanticSearch) + "(" + query + ")";
        std::string out = kWireKeywordSearch;
        out += "(";
        for (std::size_t i = 0; i < keywords.size(); ++i) {
            if (i) out += ", ";
            out += keywords[i];
        }
        return out + ")";
    }
};

// A fact extracted during integration with its verbatim quote. source_pages
// is never model-generated: it is computed by deterministic linking, and an
// unresolved fact simply keeps an empty page set.
struct LinkedFact {
    std::string fact;
    std::string evidence_quote;
    std::set<std::string> source_pages;
    std::vector<std::string> evidence_snippets;

    bool resolved() const { return !source_pages.empty(); }
};

struct EvidencePack {
    std::vector<LinkedFact> facts;
    std::string coverage_assessment;
    int iterations_used = 0;
    std::vector<std::string> searched_queries; // issued commands, in order, no duplicates
    std::vector<std::string> pages_read;       // insertion order, warm-start pages first
    TokenUsage usage;                          // all gateway usage inside the escalation
    bool error = false;
    std::string error_message;

    bool has_read(const std::string& page_id) const {
        return std::find(pages_read.begin(), pages_read.end(), page_id) != pages_read.end();
    }
};

struct PlanResult {
    bool done = true;
    std::vector<SearchCommand> commands;
};

struct RawFact {
    std::string fact;
    std::string evidence_quote;
};

struct ResearchConfig {
    int t_max = 3;
    std::size_t rerank_k = 4;          // unique pages integrated per round
    std::size_t semantic_k = 5;
    std::size_t keyword_k = 5;
    double overlap_threshold = 0.5;    // keyword fallback acceptance ratio
    double protection_threshold = 0.85;
};

// Phase 2: the bounded retrieve-integrate-plan loop. Escalation warm-starts
// from the pages linked by the initial Tier-1 hits, then searches with the
// two retrieval operators until the planner is satisfied, no new pages turn
// up, or the iteration cap is hit.
class ResearchLoop {
public:
    ResearchLoop(PageStore& pages, SummaryIndex& index, LlmGateway& gateway,
                 const Reranker& reranker, ResearchConfig config = {})
        : pages_(pages), index_(index), gateway_(gateway), reranker_(reranker),
          config_(config) {
        if (config_.t_max < 1) throw ValidationError("t_max must be >= 1");
    }

    const ResearchConfig& config() const { return config_; }

    EvidencePack escalate(const std::string& query,
                          const std::vector<RetrievalHit>& initial_hits) {
        EvidencePack pack;
        std::unordered_set<std::string> searched_keys;
        try {
            // Warm start: read the pages the retrieved summaries point at.
            std::vector<std::string> warm;
            for (const auto& hit : initial_hits)
                for (const auto& pid : hit.unit.provenance)
                    if (pages_.contains(pid) && !pack.has_read(pid)) {
                        pack.pages_read.push_back(pid);
                        warm.push_back(pid);
                    }
            if (!warm.empty()) integrate_into(query, warm, pack);

            for (int t = 1; t <= config_.t_max; ++t) {
                PlanResult decision = plan(query, pack, &pack.usage);
                if (decision.done) break;
                pack.iterations_used = t;

                std::vector<PageCandidate> candidates;
                bool executed = false;
                for (const auto& cmd : decision.commands) {
                    const std::string key = cmd.dedupe_key();
                    if (!searched_keys.insert(key).second) continue; // duplicate: skip
                    pack.searched_queries.push_back(cmd.display());
                    executed = true;
                    if (cmd.kind == SearchKind::SemanticSearch) {
                        for (const auto& hit : index_.search(cmd.query, config_.semantic_k))
                            for (const auto& pid : hit.unit.provenance)
                                candidates.push_back({pid, hit.score});
                    } else {
                        for (const auto& res : pages_.keyword_search(cmd.keywords, config_.keyword_k))
                            candidates.push_back({res.page_id, 0.0});
                    }
                }
                if (!executed) break; // every command was a repeat

                auto page_text = [this](const std::string& pid) {
                    return pages_.contains(pid) ? pages_.get_page(pid).render() : std::string();
                };
                const auto top_pages =
                    rerank_page_candidates(std::move(candidates), query, config_.rerank_k,
                                           reranker_, config_.protection_threshold, page_text);
                std::vector<std::string> fresh;
                for (const auto& pid : top_pages)
                    if (!pack.has_read(pid)) fresh.push_back(pid);
                if (fresh.empty()) break; // no new pages discovered

                for (const auto& pid : fresh) pack.pages_read.push_back(pid);
                integrate_into(query, fresh, pack);
            }
        } catch (const BackendError& e) {
            // Partial evidence is still usable by the generator.
            pack.error = true;
            pack.error_message = e.what();
        }
        return pack;
    }

    // Renders the integration prompt over an evidence block that carries each
    // page's summaries and its full raw content, so grounding always has the
    // verbatim text available.
    std::pair<std::vector<RawFact>, std::string>
    integrate(const std::string& query, const std::vector<std::string>& page_ids,
              TokenUsage* usage_sink = nullptr) {
        auto response = gateway_.complete(
            PromptKind::Integration,
            {{"question", query}, {"evidence", evidence_block(page_ids)}});
        if (usage_sink) *usage_sink += response.usage;
        if (response.parse_status != ParseStatus::ok) return {{}, ""};
        std::vector<RawFact> facts;
        for (const auto& item : (*response.payload)["linked_facts"]) {
            if (!item.is_object() || !item.contains("fact") || !item["fact"].is_string()) continue;
            RawFact raw;
            raw.fact = text::trim(item["fact"].get<std::string>());
            if (raw.fact.empty()) continue;
            if (item.contains("evidence_quote") && item["evidence_quote"].is_string())
                raw.evidence_quote = item["evidence_quote"].get<std::string>();
            facts.push_back(std::move(raw));
        }
        std::string coverage;
        if (response.payload->contains("coverage_assessment"))
            coverage = (*response.payload)["coverage_assessment"].get<std::string>();
        return {facts, coverage};
    }

    std::string evidence_block(const std::vector<std::string>& page_ids) const {
        std::string block;
        for (const auto& pid : page_ids) {
            if (!block.empty()) block += "\n\n";
            block += "=== PAGE " + pid + " ===\nSUMMARIES:\n";
            std::vector<std::string> summaries;
            for (const auto& uid : index_.unit_ids()) {
                const auto& unit = index_.get_unit(uid);
                if (unit.provenance.count(pid)) summaries.push_back(unit.text);
            }
            if (summaries.empty()) {
                block += "(none)\n";
            } else {
                for (const auto& s : summaries) block += "- " + s + "\n";
            }
            block += "RAW CONTENT:\n";
            block += pages_.contains(pid) ? pages_.get_page(pid).render() : "(missing)";
        }
        return block;
    }

    // Deterministic fact-to-page linking. Stage 1 matches the normalized
    // quote as a substring of each candidate page's normalized raw content,
    // then of its summaries; stage 2 falls back to content-word overlap.
    // Page identifiers are never taken from the model.
    LinkedFact link_provenance(const RawFact& raw,
                               const std::vector<std::string>& candidate_pages) const {
        LinkedFact fact;
        fact.fact = raw.fact;
        fact.evidence_quote = raw.evidence_quote;

        const std::string quote = text::normalize_quote(raw.evidence_quote);
        if (!quote.empty()) {
            for (const auto& pid : candidate_pages) {
                if (!pages_.contains(pid)) continue;
                const Page& page = pages_.get_page(pid);
                if (text::normalize_quote(page.render()).find(quote) != std::string::npos) {
                    fact.source_pages.insert(pid);
                    fact.evidence_snippets.push_back(snippet_for(page, quote, raw.evidence_quote));
                    continue;
                }
                // Raw content missed; try the page's summaries.
                for (const auto& uid : index_.unit_ids()) {
                    const auto& unit = index_.get_unit(uid);
                    if (!unit.provenance.count(pid)) continue;
                    if (text::normalize_quote(unit.text).find(quote) != std::string::npos) {
                        fact.source_pages.insert(pid);
                        fact.evidence_snippets.push_back(unit.text);
                        break;
                    }
                }
            }
        }
        if (!fact.source_pages.empty()) return fact;

        // Stage 2: keyword-overlap fallback.
        const auto words = text::content_words(raw.fact);
        if (words.empty()) return fact;
        for (const auto& pid : candidate_pages) {
            if (!pages_.contains(pid)) continue;
            const Page& page = pages_.get_page(pid);
            std::unordered_set<std::string> page_tokens;
            for (auto& t : text::tokenize(page.render())) page_tokens.insert(std::move(t));
            if (text::overlap_ratio(words, page_tokens) >= config_.overlap_threshold) {
                fact.source_pages.insert(pid);
                fact.evidence_snippets.push_back(first_line(page));
            }
        }
        return fact;
    }

    // Plans the next step. Invalid command kinds are dropped; an empty
    // command list (or any format error) coerces the decision to Done.
    PlanResult plan(const std::string& query, const EvidencePack& pack,
                    TokenUsage* usage_sink = nullptr) {
        std::string facts_block;
        for (std::size_t i = 0; i < pack.facts.size(); ++i)
            facts_block += "[" + std::to_string(i + 1) + "] " + pack.facts[i].fact + "\n";
        if (facts_block.empty()) facts_block = "(none)\n";
        // history = the commands issued so far, in order (Algorithm-style H)
        std::string searched;
        for (const auto& q : pack.searched_queries) searched += "- " + q + "\n";
        if (searched.empty()) searched = "(none)\n";
        const std::string& history = searched;

        auto response = gateway_.complete(
            PromptKind::Plan,
            {{"question", query},
             {"current_facts", facts_block},
             {"coverage_assessment",
              pack.coverage_assessment.empty() ? "(none)" : pack.coverage_assessment},
             {"research_history", history},
             {"searched_queries", searched}});
        if (usage_sink) *usage_sink += response.usage;

        PlanResult result;
        if (response.parse_status != ParseStatus::ok) return result; // conservative stop
        const json& payload = *response.payload;
        if (payload["decision"].get<std::string>() == "DONE") return result;
        if (payload.contains("search_commands")) {
            for (const auto& item : payload["search_commands"]) {
                if (!item.is_object() || !item.contains("type") || !item["type"].is_string())
                    continue;
                const std::string type = item["type"].get<std::string>();
                if (type == kWireSemanticSearch) {
                    if (!item.contains("query") || !item["query"].is_string()) continue;
                    SearchCommand cmd;
                    cmd.kind = SearchKind::SemanticSearch;
                    cmd.query = item["query"].get<std::string>();
                    if (text::trim(cmd.query).empty()) continue;
                    result.commands.push_back(std::move(cmd));
                } else if (type == kWireKeywordSearch) {
                    if (!item.contains("keywords") || !item["keywords"].is_array()) continue;
                    SearchCommand cmd;
                    cmd.kind = SearchKind::KeywordSearch;
                    for (const auto& kw : item["keywords"])
                        if (kw.is_string() && !text::trim(kw.get<std::string>()).empty())
                            cmd.keywords.push_back(kw.get<std::string>());
                    if (cmd.keywords.empty()) continue;
                    result.commands.push_back(std::move(cmd));
                }
                // unknown command kinds are dropped
            }
        }
        result.done = result.commands.empty();
        return result;
    }

private:
    void integrate_into(const std::string& query, const std::vector<std::string>& page_ids,
                        EvidencePack& pack) {
        auto [raw_facts, coverage] = integrate(query, page_ids, &pack.usage);
        if (!coverage.empty()) pack.coverage_assessment = coverage;
        for (const auto& raw : raw_facts) {
            LinkedFact linked = link_provenance(raw, page_ids);
            const bool duplicate =
                std::any_of(pack.facts.begin(), pack.facts.end(), [&](const LinkedFact& f) {
                    return f.fact == linked.fact && f.evidence_quote == linked.evidence_quote;
                });
            if (!duplicate) pack.facts.push_back(std::move(linked));
        }
    }

    // The original line whose normalized form contains the quote; falls back
    // to the quote itself when it spans lines.
    static std::string snippet_for(const Page& page, const std::string& normalized_quote,
                                   const std::string& original_quote) {
        for (const auto& turn : page.turns) {
            const std::string line = turn.render();
            if (text::normalize_quote(line).find(normalized_quote) != std::string::npos)
                return line;
        }
        return original_quote;
    }

    static std::string first_line(const Page& page) {
        return page.turns.empty() ? std::string() : page.turns.front().render();
    }

    PageStore& pages_;
    SummaryIndex& index_;
    LlmGateway& gateway_;
    const Reranker& reranker_;
    ResearchConfig config_;
};

inline nlohmann::json linked_fact_to_json(const LinkedFact& fact) {
    nlohmann::json pages = nlohmann::json::array();
    for (const auto& pid : fact.source_pages) pages.push_back(pid);
    return {{"fact", fact.fact},
            {"evidence_quote", fact.evidence_quote},
            {"source_pages", std::move(pages)},
            {"evidence_snippets", fact.evidence_snippets}};
}

inline LinkedFact linked_fact_from_json(const nlohmann::json& j) {
    LinkedFact fact;
    fact.fact = j.at("fact").get<std::string>();
    fact.evidence_quote = j.at("evidence_quote").get<std::string>();
    for (const auto& pid : j.at("source_pages")) fact.source_pages.insert(pid.get<std::string>());
    fact.evidence_snippets = j.at("evidence_snippets").get<std::vector<std::string>>();
    return fact;
}

} // namespace tiermem
