#pragma once

#include "tiermem/embedder.hpp"
#include "tiermem/errors.hpp"
#include "tiermem/gateway.hpp"
#include "tiermem/jsonl.hpp"
#include "tiermem/page_store.hpp"
#include "tiermem/text.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <unordered_set>
#include <vector>

namespace tiermem {

inline constexpr const char* kSourceOriginal = "original";
inline constexpr const char* kSourceLinkedFact = "linked_fact";

// Tier-1 entry: summary text, embedding, and provenance links to the Tier-2
// pages that support it. No unit exists without a traceable raw source.
struct SummaryUnit {
    std::string unit_id;
    std::string text;
    std::vector<double> embedding;
    std::set<std::string> provenance;
    std::string source_type = kSourceOriginal;
    std::int64_t created_epoch = 0;
};

struct RetrievalHit {
    SummaryUnit unit;
    double score = 0.0;
};

// Page-level relevance scorer used during escalation and reranking.
class Reranker {
public:
    virtual ~Reranker() = default;
    virtual double score(std::string_view query, std::string_view page_text) const = 0;
};

// Fraction of the query's content words present in the page. Model-free
// default; an LLM reranker can be plugged in via the same contract.
class LexicalOverlapReranker final : public Reranker {
public:
    double score(std::string_view query, std::string_view page_text) const override {
        const auto words = text::content_words(query);
        std::unordered_set<std::string> page_tokens;
        for (auto& t : text::tokenize(page_text)) page_tokens.insert(std::move(t));
        return text::overlap_ratio(words, page_tokens);
    }
};

// A page candidate entering rerank: its id and the best Tier-1 similarity
// among the hits that point at it (0 when it came from keyword search only).
struct PageCandidate {
    std::string page_id;
    double tier1_score = 0.0;
};

// Shared page-level rerank: score each unique page once, keep the top-k by
// reranker score, and always retain pages whose Tier-1 similarity meets the
// protection threshold even if the reranker would drop them.
inline std::vector<std::string>
rerank_page_candidates(std::vector<PageCandidate> candidates, const std::string& query,
                       std::size_t k, const Reranker& reranker, double protection_threshold,
                       const std::function<std::string(const std::string&)>& page_text) {
    // Collapse duplicates, keeping the best tier-1 score per page.
    std::map<std::string, double> best;
    for (auto& c : candidates) {
        auto [it, inserted] = best.emplace(c.page_id, c.tier1_score);
        if (!inserted) it->second = std::max(it->second, c.tier1_score);
    }

    struct Scored {
        std::string page_id;
        double tier1;
        double rerank;
    };
    std::vector<Scored> scored;
    scored.reserve(best.size());
    for (const auto& [pid, tier1] : best)
        scored.push_back({pid, tier1, reranker.score(query, page_text(pid))});

    std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
        if (a.rerank != b.rerank) return a.rerank > b.rerank;
        return a.page_id < b.page_id;
    });

    std::vector<std::string> result;
    std::unordered_set<std::string> chosen;
    for (const auto& s : scored) {
        if (result.size() >= k) break;
        result.push_back(s.page_id);
        chosen.insert(s.page_id);
    }
    // Protection rule: high-confidence tier-1 pages are always retained.
    std::vector<Scored> protected_pages;
    for (const auto& s : scored)
        if (s.tier1 >= protection_threshold && !chosen.count(s.page_id))
            protected_pages.push_back(s);
    std::sort(protected_pages.begin(), protected_pages.end(), [](const Scored& a, const Scored& b) {
        if (a.tier1 != b.tier1) return a.tier1 > b.tier1;
        return a.page_id < b.page_id;
    });
    for (const auto& s : protected_pages) result.push_back(s.page_id);
    return result;
}

// Tier-1 provenance index: summary units with embeddings, exhaustive dense
// retrieval (adequate at desk scale), and deferred summarization of pages
// that have not been indexed yet.
class SummaryIndex {
public:
    // Model failure while summarizing a page; the page stays unindexed.
    struct SummaryFailure {
        std::string page_id;
        std::string reason;
    };

    using Summarizer = std::function<std::vector<std::string>(const Page&)>;

    SummaryIndex(PageStore& pages, std::shared_ptr<Embedder> embedder)
        : pages_(pages), embedder_(std::move(embedder)) {
        if (!embedder_) throw ValidationError("summary index requires an embedder");
    }

    std::string add_unit(const std::string& unit_text, const std::set<std::string>& provenance,
                         const std::string& source_type, std::int64_t epoch) {
        if (unit_text.empty()) throw ValidationError("summary text must be non-empty");
        if (provenance.empty())
            throw ProvenanceError("summary unit requires non-empty provenance");
        for (const auto& pid : provenance)
            if (!pages_.contains(pid))
                throw ProvenanceError("dangling provenance link: " + pid);
        if (source_type != kSourceOriginal && source_type != kSourceLinkedFact)
            throw ValidationError("unknown source_type: " + source_type);

        SummaryUnit unit;
        unit.text = unit_text;
        unit.embedding = embedder_->embed(unit_text);
        unit.provenance = provenance;
        unit.source_type = source_type;
        unit.created_epoch = epoch;
        std::string id;
        {
            std::unique_lock lock(mu_);
            id = "u" + text::zero_pad(next_unit_++, 6);
            unit.unit_id = id;
            units_.emplace(id, std::move(unit));
            ++write_count_;
        }
        for (const auto& pid : provenance) pages_.mark_indexed(pid);
        return id;
    }

    const SummaryUnit& get_unit(const std::string& unit_id) const {
        std::shared_lock lock(mu_);
        auto it = units_.find(unit_id);
        if (it == units_.end()) throw NotFoundError("unknown unit_id: " + unit_id);
        return it->second;
    }

    bool contains(const std::string& unit_id) const {
        std::shared_lock lock(mu_);
        return units_.count(unit_id) > 0;
    }

    std::size_t size() const {
        std::shared_lock lock(mu_);
        return units_.size();
    }

    // Mutations since construction; lets callers assert epoch freezing.
    std::int64_t write_count() const {
        std::shared_lock lock(mu_);
        return write_count_;
    }

    std::vector<std::string> unit_ids() const {
        std::shared_lock lock(mu_);
        std::vector<std::string> ids;
        ids.reserve(units_.size());
        for (const auto& [id, _] : units_) ids.push_back(id);
        return ids;
    }

    // Top-k by cosine similarity, descending; ties break by ascending unit_id.
    std::vector<RetrievalHit> search(const std::string& query, std::size_t k) const {
        if (k < 1) throw ValidationError("search requires k >= 1");
        const auto query_embedding = embedder_->embed(query);
        std::shared_lock lock(mu_);
        std::vector<RetrievalHit> hits;
        hits.reserve(units_.size());
        for (const auto& [_, unit] : units_)
            hits.push_back({unit, cosine(query_embedding, unit.embedding)});
        std::sort(hits.begin(), hits.end(), [](const RetrievalHit& a, const RetrievalHit& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.unit.unit_id < b.unit.unit_id;
        });
        if (hits.size() > k) hits.resize(k);
        return hits;
    }

    // Groups hits by page, scores each unique page once on its raw content
    // (falling back to concatenated summaries if the raw page is missing),
    // and returns the top-k unique pages plus any protected ones.
    std::vector<std::string> rerank_pages(const std::vector<RetrievalHit>& hits,
                                          const std::string& query, std::size_t k,
                                          const Reranker& reranker,
                                          double protection_threshold = 0.85) const {
        std::vector<PageCandidate> candidates;
        std::map<std::string, std::string> summary_fallback;
        for (const auto& hit : hits) {
            for (const auto& pid : hit.unit.provenance) {
                candidates.push_back({pid, hit.score});
                auto& acc = summary_fallback[pid];
                if (!acc.empty()) acc += "\n";
                acc += hit.unit.text;
            }
        }
        auto page_text = [this, &summary_fallback](const std::string& pid) -> std::string {
            if (pages_.contains(pid)) return pages_.get_page(pid).render();
            auto it = summary_fallback.find(pid);
            return it == summary_fallback.end() ? std::string() : it->second;
        };
        return rerank_page_candidates(std::move(candidates), query, k, reranker,
                                      protection_threshold, page_text);
    }

    // Deferred summarization: every sealed, unindexed page goes through the
    // summarizer; each returned fact becomes one unit with provenance to the
    // page. A failing page is recorded and skipped so the pass continues.
    std::size_t auto_summary(const std::string& session_id, const Summarizer& summarize) {
        std::size_t summarized = 0;
        for (const auto& pid : pages_.unindexed_sealed_pages(session_id)) {
            const Page& page = pages_.get_page(pid);
            std::vector<std::string> facts;
            try {
                facts = summarize(page);
            } catch (const Error& e) {
                record_failure(pid, e.what());
                continue;
            }
            std::vector<std::string> kept;
            for (auto& f : facts) {
                auto trimmed = text::trim(f);
                if (!trimmed.empty()) kept.push_back(std::move(trimmed));
            }
            if (kept.empty()) {
                record_failure(pid, "summarizer returned no facts");
                continue;
            }
            for (const auto& f : kept) add_unit(f, {pid}, kSourceOriginal, 0);
            ++summarized;
        }
        return summarized;
    }

    // Gateway-backed variant: renders the fact-extraction prompt per page.
    std::size_t auto_summary(const std::string& session_id, LlmGateway& gateway) {
        return auto_summary(session_id, [&gateway](const Page& page) {
            auto response =
                gateway.complete(PromptKind::FactExtraction, {{"input", page.render()}});
            if (response.parse_status != ParseStatus::ok)
                throw ValidationError("fact extraction format error");
            std::vector<std::string> facts;
            for (const auto& f : (*response.payload)["facts"])
                if (f.is_string()) facts.push_back(f.get<std::string>());
            return facts;
        });
    }

    const std::vector<SummaryFailure>& summary_failures() const { return failures_; }

    // Replaces the text (re-embedding it) and widens provenance; the id is
    // stable and provenance never shrinks.
    SummaryUnit update_unit(const std::string& unit_id, const std::string& new_text,
                            const std::set<std::string>& extra_provenance,
                            std::optional<std::int64_t> epoch = std::nullopt) {
        if (new_text.empty()) throw ValidationError("summary text must be non-empty");
        for (const auto& pid : extra_provenance)
            if (!pages_.contains(pid))
                throw ProvenanceError("dangling provenance link: " + pid);
        SummaryUnit updated;
        {
            std::unique_lock lock(mu_);
            auto it = units_.find(unit_id);
            if (it == units_.end()) throw NotFoundError("unknown unit_id: " + unit_id);
            SummaryUnit& unit = it->second;
            unit.text = new_text;
            unit.embedding = embedder_->embed(new_text);
            unit.provenance.insert(extra_provenance.begin(), extra_provenance.end());
            if (epoch) unit.created_epoch = *epoch;
            ++write_count_;
            updated = unit;
        }
        for (const auto& pid : extra_provenance) pages_.mark_indexed(pid);
        return updated;
    }

    std::vector<nlohmann::json> snapshot_records() const {
        std::shared_lock lock(mu_);
        std::vector<nlohmann::json> records;
        for (const auto& [_, unit] : units_) {
            nlohmann::json prov = nlohmann::json::array();
            for (const auto& pid : unit.provenance) prov.push_back(pid);
            records.push_back({{"unit_id", unit.unit_id},
                               {"text", unit.text},
                               {"provenance", std::move(prov)},
                               {"source_type", unit.source_type},
                               {"created_epoch", unit.created_epoch},
                               {"embedding", unit.embedding}});
        }
        return records;
    }

    void save(const std::string& path) const { jsonl::write_file(path, snapshot_records()); }

    // Stored embeddings are reused verbatim so runs replay without the embedder.
    void restore_records(const std::vector<nlohmann::json>& records) {
        std::unique_lock lock(mu_);
        units_.clear();
        next_unit_ = 1;
        std::size_t line_no = 0;
        for (const auto& rec : records) {
            ++line_no;
            if (!rec.is_object() || !rec.contains("unit_id") || !rec.contains("text") ||
                !rec.contains("provenance") || !rec["provenance"].is_array() ||
                !rec.contains("source_type") || !rec.contains("created_epoch") ||
                !rec.contains("embedding") || !rec["embedding"].is_array())
                throw CorruptRecordError("malformed summary record", line_no);
            SummaryUnit unit;
            unit.unit_id = rec["unit_id"].get<std::string>();
            unit.text = rec["text"].get<std::string>();
            for (const auto& pid : rec["provenance"]) unit.provenance.insert(pid.get<std::string>());
            unit.source_type = rec["source_type"].get<std::string>();
            unit.created_epoch = rec["created_epoch"].get<std::int64_t>();
            unit.embedding = rec["embedding"].get<std::vector<double>>();
            if (unit.provenance.empty())
                throw CorruptRecordError("summary record with empty provenance", line_no);
            if (unit.unit_id.size() > 1 && unit.unit_id[0] == 'u') {
                try {
                    const auto seq = static_cast<std::uint64_t>(std::stoull(unit.unit_id.substr(1)));
                    next_unit_ = std::max(next_unit_, seq + 1);
                } catch (const std::exception&) {
                    throw CorruptRecordError("malformed unit_id: " + unit.unit_id, line_no);
                }
            }
            units_.emplace(unit.unit_id, std::move(unit));
        }
    }

    void load(const std::string& path) { restore_records(jsonl::read_file(path)); }

    PageStore& pages() { return pages_; }
    const Embedder& embedder() const { return *embedder_; }

private:
    void record_failure(const std::string& page_id, const std::string& reason) {
        std::unique_lock lock(mu_);
        failures_.push_back({page_id, reason});
    }

    PageStore& pages_;
    std::shared_ptr<Embedder> embedder_;
    mutable std::shared_mutex mu_;
    std::map<std::string, SummaryUnit> units_;
    std::uint64_t next_unit_ = 1;
    std::int64_t write_count_ = 0;
    std::vector<SummaryFailure> failures_;
};

} // namespace tiermem
