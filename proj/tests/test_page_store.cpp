#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tiermem/page_store.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace tiermem;

namespace {

Turn turn(const std::string& speaker, const std::string& text,
          const std::string& ts = "2023-05-01T10:00:00") {
    return Turn{ts, speaker, text};
}

std::string words(int n, const std::string& stem = "w") {
    std::string out;
    for (int i = 0; i < n; ++i) {
        if (i) out += ' ';
        out += stem + std::to_string(i);
    }
    return out;
}

// Independent reference scorer: naive double loop, own tokenizer.
std::vector<std::string> ref_tokenize(const std::string& s) {
    std::vector<std::string> toks;
    std::string cur;
    for (char c : s) {
        if (std::isalnum(static_cast<unsigned char>(c)) ||
            static_cast<unsigned char>(c) >= 0x80) {
            cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else if (!cur.empty()) {
            toks.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) toks.push_back(cur);
    return toks;
}

std::vector<PageSearchResult> bm25_reference(const std::vector<std::pair<std::string, std::string>>& docs,
                                             const std::vector<std::string>& keywords,
                                             std::size_t k) {
    // dedupe query terms, first appearance
    std::vector<std::string> terms;
    std::set<std::string> seen;
    for (const auto& kw : keywords)
        for (const auto& t : ref_tokenize(kw))
            if (seen.insert(t).second) terms.push_back(t);
    if (terms.empty() || docs.empty()) return {};

    const double n_docs = static_cast<double>(docs.size());
    double total_len = 0;
    std::vector<std::vector<std::string>> tokens;
    for (const auto& [id, body] : docs) {
        tokens.push_back(ref_tokenize(body));
        total_len += static_cast<double>(tokens.back().size());
    }
    const double avgdl = total_len / n_docs;
    const double k1 = 1.2, b = 0.75;

    std::vector<PageSearchResult> out;
    for (std::size_t d = 0; d < docs.size(); ++d) {
        double score = 0;
        for (const auto& term : terms) {
            double tf = 0;
            for (const auto& t : tokens[d])
                if (t == term) ++tf;
            if (tf == 0) continue;
            double df = 0;
            for (const auto& dt : tokens) {
                bool found = false;
                for (const auto& t : dt)
                    if (t == term) found = true;
                if (found) ++df;
            }
            const double idf = std::log(1.0 + (n_docs - df + 0.5) / (df + 0.5));
            const double dl = static_cast<double>(tokens[d].size());
            score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / (avgdl > 0 ? avgdl : 1)));
        }
        if (score > 0) out.push_back({docs[d].first, score});
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b2) {
        if (a.score != b2.score) return a.score > b2.score;
        return a.page_id < b2.page_id;
    });
    if (out.size() > k) out.resize(k);
    return out;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("append to a fresh session creates an open page") {
    PageStore store;
    const auto pid = store.append_turn("sess", turn("alice", "hello there"));
    const Page& page = store.get_page(pid);
    CHECK(page.page_id == "sess/p00001");
    CHECK_FALSE(page.sealed);
    CHECK(page.turns.size() == 1);
    CHECK(page.turns[0].render() == "[2023-05-01T10:00:00] alice: hello there");
}

TEST_CASE("turn validation") {
    PageStore store;
    CHECK_THROWS_AS(store.append_turn("s", turn("", "text")), ValidationError);
    CHECK_THROWS_AS(store.append_turn("s", turn("alice", "")), ValidationError);
    CHECK_THROWS_AS(store.append_turn("s", turn("alice", "x", "")), ValidationError);
    CHECK_THROWS_AS(store.append_turn("", turn("alice", "x")), ValidationError);
}

TEST_CASE("page seals when the token estimate crosses the threshold") {
    PageStore store(1000);
    int seals = 0;
    store.on_seal([&](const Page& p) {
        ++seals;
        CHECK(p.sealed);
        CHECK(p.token_count >= 1000);
    });
    // 768 words -> ceil(768 * 1.3) = 999 tokens: one word short of the seal.
    const Turn big{"2023-05-01T10:00:00", "alice", words(766)};
    const auto pid = store.append_turn("sess", big);
    CHECK(store.get_page(pid).token_count == 999);
    CHECK_FALSE(store.get_page(pid).sealed);
    CHECK(seals == 0);

    const auto pid2 = store.append_turn("sess", turn("bob", "ok"));
    CHECK(pid2 == pid); // landed in the same page
    CHECK(store.get_page(pid).sealed);
    CHECK(store.get_page(pid).token_count >= 1000);
    CHECK(seals == 1);

    // next append opens a fresh page
    const auto pid3 = store.append_turn("sess", turn("alice", "next"));
    CHECK(pid3 == "sess/p00002");
    CHECK_FALSE(store.get_page(pid3).sealed);
}

TEST_CASE("fixed-size turns split across pages exactly as the estimator predicts") {
    PageStore store(1000);
    // Each rendered line is 23 whitespace-delimited words: timestamp +
    // "alice:" + 21 filler words, i.e. ~29.9 tokens per turn.
    std::vector<std::string> landed;
    for (int i = 0; i < 40; ++i)
        landed.push_back(store.append_turn("sess", turn("alice", words(21, "a"))));

    // Independent simulation: tokens after n turns = ceil(1.3 * 23n).
    int expected_seal_turn = 0;
    for (int n = 1; n <= 40; ++n) {
        if (std::ceil(1.3 * 23 * n) >= 1000.0) {
            expected_seal_turn = n;
            break;
        }
    }
    CHECK(expected_seal_turn == 34);
    CHECK(store.page_count() == 2);
    const Page& first = store.get_page("sess/p00001");
    CHECK(first.sealed);
    CHECK(static_cast<int>(first.turns.size()) == expected_seal_turn);
    CHECK(first.token_count ==
          static_cast<std::int64_t>(std::ceil(1.3 * 23 * expected_seal_turn)));
    const Page& second = store.get_page("sess/p00002");
    CHECK_FALSE(second.sealed);
    CHECK(static_cast<int>(second.turns.size()) == 40 - expected_seal_turn);
}

TEST_CASE("get_page round-trips and rejects unknown ids") {
    PageStore store;
    const auto pid = store.append_turn("s", turn("alice", "the exact words"));
    CHECK(store.get_page(pid).render() == "[2023-05-01T10:00:00] alice: the exact words");
    CHECK_THROWS_AS(store.get_page("nope/p00001"), NotFoundError);
}

TEST_CASE("sealed pages are immutable through the public surface") {
    PageStore store(10);
    const auto pid = store.append_turn("s", turn("alice", words(20)));
    REQUIRE(store.get_page(pid).sealed);
    const std::string before = store.get_page(pid).render();
    const auto before_tokens = store.get_page(pid).token_count;
    // later activity in the same session cannot touch the sealed page
    store.append_turn("s", turn("bob", words(20)));
    store.append_turn("s", turn("carol", "tail"));
    store.flush("s");
    CHECK(store.get_page(pid).render() == before);
    CHECK(store.get_page(pid).token_count == before_tokens);
    CHECK(store.get_page(pid).turns.size() == 1);
}

TEST_CASE("at most one open page per session under interleaving") {
    PageStore store(60);
    std::mt19937 rng(7);
    std::vector<std::string> sessions{"a", "b", "c"};
    for (int i = 0; i < 200; ++i) {
        const auto& sess = sessions[rng() % sessions.size()];
        store.append_turn(sess, turn("spk", words(3 + static_cast<int>(rng() % 10))));
        std::map<std::string, int> open_count;
        for (const auto& pid : store.page_ids()) {
            const Page& p = store.get_page(pid);
            if (!p.sealed) ++open_count[p.session_id];
            // seal-threshold invariant
            if (p.sealed)
                CHECK(p.token_count >= 60);
            else
                CHECK(p.token_count < 60);
        }
        for (const auto& [_, n] : open_count) CHECK(n == 1);
    }
}

TEST_CASE("flush seals the open page even under-size") {
    PageStore store(1000);
    store.append_turn("s", turn("alice", "tiny"));
    const auto sealed = store.flush("s");
    REQUIRE(sealed.size() == 1);
    CHECK(store.get_page(sealed[0]).sealed);
    CHECK(store.get_page(sealed[0]).token_count < 1000);
    CHECK(store.flush("s").empty());
    CHECK(store.flush("missing").empty());
}

TEST_CASE("keyword_search basics") {
    PageStore store(40);
    store.append_turn("s", turn("alice", "the quick brown fox jumps over fences " + words(10)));
    store.flush("s");
    store.append_turn("s", turn("bob", "cats sleep all day long in the sun " + words(10)));
    store.flush("s");
    store.append_turn("s", turn("carol", "dogs chase the postman every morning " + words(10)));
    store.flush("s");

    SUBCASE("keyword absent everywhere yields nothing") {
        CHECK(store.keyword_search({"zeppelin"}, 5).empty());
    }
    SUBCASE("empty keyword list is empty, not an error") {
        CHECK(store.keyword_search({}, 5).empty());
    }
    SUBCASE("the single matching page ranks first") {
        const auto res = store.keyword_search({"fox"}, 5);
        REQUIRE(res.size() == 1);
        CHECK(res[0].page_id == "s/p00001");
    }
    SUBCASE("k=0 violates the precondition") {
        CHECK_THROWS_AS(store.keyword_search({"fox"}, 0), ValidationError);
    }
}

TEST_CASE("controlled term frequencies match the brute-force reference") {
    PageStore store(30);
    // five pages with deliberately skewed frequencies of "apple" and "pear"
    const std::vector<std::string> bodies = {
        "apple apple apple orchard rows",
        "apple pear orchard " + words(6, "x"),
        "pear pear pear pear grove " + words(3, "y"),
        words(9, "z"),
        "apple " + words(12, "q"),
    };
    for (const auto& b : bodies) {
        store.append_turn("s", turn("spk", b));
        store.flush("s");
    }
    std::vector<std::pair<std::string, std::string>> docs;
    for (const auto& pid : store.page_ids()) docs.emplace_back(pid, store.get_page(pid).render());

    for (const std::vector<std::string>& query :
         {std::vector<std::string>{"apple"}, {"pear"}, {"apple", "pear"}, {"orchard", "grove"}}) {
        const auto expected = bm25_reference(docs, query, 5);
        const auto actual = store.keyword_search(query, 5);
        REQUIRE(actual.size() == expected.size());
        for (std::size_t i = 0; i < actual.size(); ++i) {
            CHECK(actual[i].page_id == expected[i].page_id);
            CHECK(actual[i].score == doctest::Approx(expected[i].score).epsilon(1e-12));
        }
    }
}

TEST_CASE("random corpora rank identically to the reference scorer") {
    std::mt19937 rng(12345);
    const std::vector<std::string> vocab = {"red",  "blue", "green", "fish", "bird",
                                            "tree", "rock", "wind",  "rain", "snow"};
    for (int trial = 0; trial < 25; ++trial) {
        PageStore store(20);
        const int n_pages = 1 + static_cast<int>(rng() % 20);
        for (int p = 0; p < n_pages; ++p) {
            std::string body;
            const int len = 3 + static_cast<int>(rng() % 12);
            for (int w = 0; w < len; ++w) {
                if (w) body += ' ';
                body += vocab[rng() % vocab.size()];
            }
            store.append_turn("s", turn("spk", body));
            store.flush("s");
        }
        std::vector<std::pair<std::string, std::string>> docs;
        for (const auto& pid : store.page_ids())
            docs.emplace_back(pid, store.get_page(pid).render());

        std::vector<std::string> query;
        const int q_terms = 1 + static_cast<int>(rng() % 8);
        for (int t = 0; t < q_terms; ++t) query.push_back(vocab[rng() % vocab.size()]);

        const auto expected = bm25_reference(docs, query, 20);
        const auto actual = store.keyword_search(query, 20);
        REQUIRE(actual.size() == expected.size());
        for (std::size_t i = 0; i < actual.size(); ++i)
            CHECK(actual[i].page_id == expected[i].page_id);
    }
}

TEST_CASE("snapshot then restore reproduces the store byte-exactly") {
    PageStore store(50);
    for (int i = 0; i < 12; ++i)
        store.append_turn(i % 2 ? "sess-a" : "sess-b", turn("spk", words(6 + i % 5)));
    const auto path = temp_path("tiermem_pages_test.jsonl");
    store.save(path);

    PageStore restored(50);
    restored.load(path);
    const auto path2 = temp_path("tiermem_pages_test2.jsonl");
    restored.save(path2);

    std::ifstream f1(path), f2(path2);
    std::stringstream s1, s2;
    s1 << f1.rdbuf();
    s2 << f2.rdbuf();
    CHECK(s1.str() == s2.str());
    CHECK(s1.str().size() > 0);

    for (const auto& pid : store.page_ids()) {
        const Page& a = store.get_page(pid);
        const Page& b = restored.get_page(pid);
        CHECK(a.render() == b.render());
        CHECK(a.sealed == b.sealed);
        CHECK(a.indexed == b.indexed);
        CHECK(a.token_count == b.token_count);
    }
    std::remove(path.c_str());
    std::remove(path2.c_str());
}

TEST_CASE("restore then append continues the same open page") {
    // uninterrupted run
    PageStore direct(200);
    std::vector<std::int64_t> direct_progression;
    for (int i = 0; i < 10; ++i) {
        const auto pid = direct.append_turn("s", turn("spk", words(8)));
        direct_progression.push_back(direct.get_page(pid).token_count);
    }

    // interrupted at turn 5 by a snapshot/restore
    PageStore first(200);
    for (int i = 0; i < 5; ++i) first.append_turn("s", turn("spk", words(8)));
    const auto path = temp_path("tiermem_pages_resume.jsonl");
    first.save(path);
    PageStore second(200);
    second.load(path);
    std::vector<std::int64_t> resumed_progression;
    for (int i = 0; i < 5; ++i) {
        const auto pid = second.append_turn("s", turn("spk", words(8)));
        resumed_progression.push_back(second.get_page(pid).token_count);
    }
    for (int i = 0; i < 5; ++i) CHECK(resumed_progression[i] == direct_progression[5 + i]);
    CHECK(second.turn_count("s") == 10);
    std::remove(path.c_str());
}

TEST_CASE("a truncated snapshot reports the offending line") {
    PageStore store(50);
    for (int i = 0; i < 6; ++i) store.append_turn("s", turn("spk", words(7)));
    const auto path = temp_path("tiermem_pages_trunc.jsonl");
    store.save(path);

    // chop the final line in half
    std::ifstream in(path);
    std::stringstream buf;
    buf << in.rdbuf();
    in.close();
    std::string content = buf.str();
    REQUIRE(!content.empty());
    content.pop_back(); // trailing newline
    const auto cut = content.size() - content.substr(content.rfind('\n') + 1).size() / 2;
    std::ofstream out(path, std::ios::trunc);
    out << content.substr(0, cut);
    out.close();

    std::size_t n_lines = 1;
    for (char c : content.substr(0, cut))
        if (c == '\n') ++n_lines;

    try {
        PageStore bad(50);
        bad.load(path);
        FAIL("expected CorruptRecordError");
    } catch (const CorruptRecordError& e) {
        CHECK(e.line == n_lines);
    }
    std::remove(path.c_str());
}
