#pragma once

#include "tiermem/errors.hpp"
#include "tiermem/jsonl.hpp"
#include "tiermem/text.hpp"
#include "tiermem/tokens.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tiermem {

struct Turn {
    std::string timestamp; // ISO-8601
    std::string speaker;
    std::string text;

    // Canonical line format: [timestamp] speaker: text
    std::string render() const { return "[" + timestamp + "] " + speaker + ": " + text; }
};

// Immutable once sealed. `indexed` is bookkeeping metadata maintained by the
// summary tier and is the only field that may change after sealing.
struct Page {
    std::string page_id;
    std::string session_id;
    std::vector<Turn> turns;
    std::int64_t token_count = 0;
    bool sealed = false;
    bool indexed = false;

    std::string render() const {
        std::string out;
        for (std::size_t i = 0; i < turns.size(); ++i) {
            if (i) out.push_back('\n');
            out += turns[i].render();
        }
        return out;
    }
};

struct PageSearchResult {
    std::string page_id;
    double score = 0.0;
};

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

// Tier-2: append-only paged raw log. Turns accumulate into the session's
// open page; the page seals once its token estimate reaches the threshold
// (or on an explicit flush) and never changes afterwards.
class PageStore {
public:
    using SealHook = std::function<void(const Page&)>;

    explicit PageStore(std::int64_t max_page_tokens = 1000,
                       TokenEstimator estimator = TokenEstimator())
        : max_page_tokens_(max_page_tokens), estimator_(estimator) {
        if (max_page_tokens_ <= 0) throw ValidationError("max_page_tokens must be positive");
    }

    void on_seal(SealHook hook) { seal_hook_ = std::move(hook); }

    std::int64_t max_page_tokens() const { return max_page_tokens_; }
    const TokenEstimator& estimator() const { return estimator_; }

    // Appends the turn to the session's open page (creating one if needed).
    // Seals the page when the token estimate of its canonical rendering
    // reaches the threshold. Returns the page id the turn landed in.
    std::string append_turn(const std::string& session_id, const Turn& turn) {
        if (session_id.empty()) throw ValidationError("session_id must be non-empty");
        if (turn.timestamp.empty()) throw ValidationError("turn timestamp must be non-empty");
        if (turn.speaker.empty()) throw ValidationError("turn speaker must be non-empty");
        if (turn.text.empty()) throw ValidationError("turn text must be non-empty");

        Page sealed_copy;
        bool fire_hook = false;
        std::string landed;
        {
            std::unique_lock lock(mu_);
            Page& page = open_page_locked(session_id);
            page.turns.push_back(turn);
            page.token_count = estimator_.estimate(page.render());
            landed = page.page_id;
            if (page.token_count >= max_page_tokens_) {
                page.sealed = true;
                sessions_[session_id].open_page_id.clear();
                sealed_copy = page;
                fire_hook = true;
            }
        }
        if (fire_hook && seal_hook_) seal_hook_(sealed_copy);
        return landed;
    }

    // Seals the session's open page even if under-size, so deferred
    // summarization sees a complete page set. Returns sealed page ids.
    std::vector<std::string> flush(const std::string& session_id) {
        Page sealed_copy;
        bool fire_hook = false;
        std::vector<std::string> sealed_ids;
        {
            std::unique_lock lock(mu_);
            auto it = sessions_.find(session_id);
            if (it == sessions_.end() || it->second.open_page_id.empty()) return {};
            Page& page = pages_.at(it->second.open_page_id);
            page.sealed = true;
            it->second.open_page_id.clear();
            sealed_ids.push_back(page.page_id);
            sealed_copy = page;
            fire_hook = true;
        }
        if (fire_hook && seal_hook_) seal_hook_(sealed_copy);
        return sealed_ids;
    }

    const Page& get_page(const std::string& page_id) const {
        std::shared_lock lock(mu_);
        auto it = pages_.find(page_id);
        if (it == pages_.end()) throw NotFoundError("unknown page_id: " + page_id);
        return it->second;
    }

    bool contains(const std::string& page_id) const {
        std::shared_lock lock(mu_);
        return pages_.count(page_id) > 0;
    }

    void mark_indexed(const std::string& page_id) {
        std::unique_lock lock(mu_);
        auto it = pages_.find(page_id);
        if (it == pages_.end()) throw NotFoundError("unknown page_id: " + page_id);
        it->second.indexed = true;
    }

    std::vector<std::string> page_ids() const {
        std::shared_lock lock(mu_);
        std::vector<std::string> ids;
        ids.reserve(pages_.size());
        for (const auto& [id, _] : pages_) ids.push_back(id);
        return ids; // std::map keeps them ascending
    }

    std::size_t page_count() const {
        std::shared_lock lock(mu_);
        return pages_.size();
    }

    std::size_t turn_count(const std::string& session_id) const {
        std::shared_lock lock(mu_);
        std::size_t n = 0;
        for (const auto& [_, page] : pages_)
            if (page.session_id == session_id) n += page.turns.size();
        return n;
    }

    std::vector<std::string> unindexed_sealed_pages(const std::string& session_id = "") const {
        std::shared_lock lock(mu_);
        std::vector<std::string> ids;
        for (const auto& [id, page] : pages_) {
            if (!page.sealed || page.indexed) continue;
            if (!session_id.empty() && page.session_id != session_id) continue;
            ids.push_back(id);
        }
        return ids;
    }

    // BM25 over whitespace/punctuation-tokenized, lowercased page text.
    // Zero-score pages are excluded; ties break by ascending page_id.
    std::vector<PageSearchResult> keyword_search(const std::vector<std::string>& keywords,
                                                 std::size_t k) const {
        if (k < 1) throw ValidationError("keyword_search requires k >= 1");
        std::vector<std::string> terms = dedupe_terms(keywords);
        if (terms.empty()) return {};

        std::shared_lock lock(mu_);
        if (pages_.empty()) return {};

        // Corpus stats.
        const double doc_count = static_cast<double>(pages_.size());
        std::vector<std::pair<std::string, std::unordered_map<std::string, std::size_t>>> docs;
        docs.reserve(pages_.size());
        double total_len = 0.0;
        std::vector<double> lengths;
        for (const auto& [id, page] : pages_) {
            std::unordered_map<std::string, std::size_t> tf;
            auto tokens = text::tokenize(page.render());
            for (auto& t : tokens) ++tf[t];
            total_len += static_cast<double>(tokens.size());
            lengths.push_back(static_cast<double>(tokens.size()));
            docs.emplace_back(id, std::move(tf));
        }
        const double avgdl = total_len / doc_count;

        std::unordered_map<std::string, double> idf;
        for (const auto& term : terms) {
            double df = 0;
            for (const auto& [_, tf] : docs)
                if (tf.count(term)) ++df;
            idf[term] = std::log(1.0 + (doc_count - df + 0.5) / (df + 0.5));
        }

        std::vector<PageSearchResult> scored;
        for (std::size_t d = 0; d < docs.size(); ++d) {
            const auto& [id, tf_map] = docs[d];
            double score = 0.0;
            for (const auto& term : terms) {
                auto it = tf_map.find(term);
                if (it == tf_map.end()) continue;
                const double tf = static_cast<double>(it->second);
                const double dl = lengths[d];
                const double denom = tf + bm25_.k1 * (1.0 - bm25_.b + bm25_.b * dl / (avgdl > 0 ? avgdl : 1.0));
                score += idf[term] * tf * (bm25_.k1 + 1.0) / denom;
            }
            if (score > 0.0) scored.push_back({id, score});
        }
        std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.page_id < b.page_id;
        });
        if (scored.size() > k) scored.resize(k);
        return scored;
    }

    // Snapshot: one JSON object per page, sessions ascending then sequence
    // order, the open page (if any) trailing its session's sealed pages.
    std::vector<nlohmann::json> snapshot_records(const std::string& session_filter = "") const {
        std::shared_lock lock(mu_);
        std::vector<nlohmann::json> records;
        for (const auto& [id, page] : pages_) {
            if (!session_filter.empty() && page.session_id != session_filter) continue;
            records.push_back(page_to_json(page));
        }
        return records;
    }

    void save(const std::string& path, const std::string& session_filter = "") const {
        jsonl::write_file(path, snapshot_records(session_filter));
    }

    void load(const std::string& path) { restore_records(jsonl::read_file(path)); }

    // Restore from snapshot records; existing state is replaced.
    void restore_records(const std::vector<nlohmann::json>& records) {
        std::unique_lock lock(mu_);
        pages_.clear();
        sessions_.clear();
        std::size_t line_no = 0;
        for (const auto& rec : records) {
            ++line_no;
            Page page = page_from_json(rec, line_no);
            const std::uint64_t seq = parse_sequence(page.page_id, line_no);
            auto& session = sessions_[page.session_id];
            session.next_seq = std::max(session.next_seq, seq + 1);
            if (!page.sealed) {
                if (!session.open_page_id.empty())
                    throw CorruptRecordError("second open page for session " + page.session_id,
                                             line_no);
                session.open_page_id = page.page_id;
            }
            if (!pages_.emplace(page.page_id, std::move(page)).second)
                throw CorruptRecordError("duplicate page_id", line_no);
        }
    }

private:
    struct SessionState {
        std::string open_page_id;
        std::uint64_t next_seq = 1;
    };

    Page& open_page_locked(const std::string& session_id) {
        auto& session = sessions_[session_id];
        if (!session.open_page_id.empty()) return pages_.at(session.open_page_id);
        Page page;
        page.session_id = session_id;
        page.page_id = session_id + "/p" + text::zero_pad(session.next_seq++, 5);
        session.open_page_id = page.page_id;
        auto [it, _] = pages_.emplace(page.page_id, std::move(page));
        return it->second;
    }

    static std::vector<std::string> dedupe_terms(const std::vector<std::string>& keywords) {
        std::vector<std::string> terms;
        std::unordered_map<std::string, bool> seen;
        for (const auto& kw : keywords) {
            for (auto& t : text::tokenize(kw)) {
                if (!seen.emplace(t, true).second) continue;
                terms.push_back(t);
            }
        }
        return terms;
    }

    static nlohmann::json page_to_json(const Page& page) {
        nlohmann::json turns = nlohmann::json::array();
        for (const auto& t : page.turns)
            turns.push_back({{"ts", t.timestamp}, {"speaker", t.speaker}, {"text", t.text}});
        return {{"page_id", page.page_id},   {"session_id", page.session_id},
                {"turns", std::move(turns)}, {"token_count", page.token_count},
                {"sealed", page.sealed},     {"indexed", page.indexed}};
    }

    static Page page_from_json(const nlohmann::json& rec, std::size_t line_no) {
        if (!rec.is_object() || !rec.contains("page_id") || !rec.contains("session_id") ||
            !rec.contains("turns") || !rec["turns"].is_array() || !rec.contains("token_count") ||
            !rec.contains("sealed") || !rec.contains("indexed"))
            throw CorruptRecordError("malformed page record", line_no);
        Page page;
        page.page_id = rec["page_id"].get<std::string>();
        page.session_id = rec["session_id"].get<std::string>();
        for (const auto& t : rec["turns"]) {
            if (!t.contains("ts") || !t.contains("speaker") || !t.contains("text"))
                throw CorruptRecordError("malformed turn record", line_no);
            page.turns.push_back({t["ts"].get<std::string>(), t["speaker"].get<std::string>(),
                                  t["text"].get<std::string>()});
        }
        page.token_count = rec["token_count"].get<std::int64_t>();
        page.sealed = rec["sealed"].get<bool>();
        page.indexed = rec["indexed"].get<bool>();
        return page;
    }

    static std::uint64_t parse_sequence(const std::string& page_id, std::size_t line_no) {
        const auto pos = page_id.rfind("/p");
        if (pos == std::string::npos)
            throw CorruptRecordError("page_id lacks sequence suffix: " + page_id, line_no);
        try {
            return std::stoull(page_id.substr(pos + 2));
        } catch (const std::exception&) {
            throw CorruptRecordError("page_id has non-numeric sequence: " + page_id, line_no);
        }
    }

    std::int64_t max_page_tokens_;
    TokenEstimator estimator_;
    Bm25Params bm25_;
    SealHook seal_hook_;
    mutable std::shared_mutex mu_;
    std::map<std::string, Page> pages_;
    std::map<std::string, SessionState> sessions_;
};

} // namespace tiermem
