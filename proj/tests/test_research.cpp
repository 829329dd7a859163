#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tiermem/research.hpp"

#include <memory>
#include <string>
#include <vector>

using namespace tiermem;

namespace {

struct Fixture {
    PageStore pages{1000};
    std::shared_ptr<HashedBowEmbedder> embedder = std::make_shared<HashedBowEmbedder>(64);
    SummaryIndex index{pages, embedder};
    std::shared_ptr<MockBackend> mock = std::make_shared<MockBackend>();
    LlmGateway gateway{mock};
    LexicalOverlapReranker reranker;
    ResearchLoop loop{pages, index, gateway, reranker};

    std::string add_page(const std::string& body,
                         const std::string& ts = "2023-06-01T09:00:00",
                         const std::string& speaker = "A") {
        const auto pid = pages.append_turn("s", {ts, speaker, body});
        pages.flush("s");
        return pid;
    }

    RetrievalHit hit_for(const std::string& unit_id, double score) {
        return {index.get_unit(unit_id), score};
    }
};

const char* kEmptyIntegration = R"({"linked_facts": [], "coverage_assessment": "nothing yet"})";

} // namespace

TEST_CASE("plan decisions") {
    Fixture fx;

    SUBCASE("DONE is done") {
        fx.mock->respond(PromptKind::Plan, "", R"({"decision": "DONE", "reasoning": "enough"})");
        const auto p = fx.loop.plan("q", {});
        CHECK(p.done);
    }
    SUBCASE("one semantic plus one keyword command") {
        fx.mock->respond(PromptKind::Plan, "", R"({"decision": "SEARCH", "search_commands": [
            {"type": "MEM0_SEARCH", "query": "book recommendations"},
            {"type": "KEYWORD_SEARCH", "keywords": ["little", "women"]}]})");
        const auto p = fx.loop.plan("q", {});
        REQUIRE_FALSE(p.done);
        REQUIRE(p.commands.size() == 2);
        CHECK(p.commands[0].kind == SearchKind::SemanticSearch);
        CHECK(p.commands[0].query == "book recommendations");
        CHECK(p.commands[1].kind == SearchKind::KeywordSearch);
        CHECK(p.commands[1].keywords == std::vector<std::string>{"little", "women"});
    }
    SUBCASE("unknown command kinds are dropped; nothing left coerces to DONE") {
        fx.mock->respond(PromptKind::Plan, "", R"({"decision": "SEARCH", "search_commands": [
            {"type": "WEB_SEARCH", "query": "nope"}]})");
        CHECK(fx.loop.plan("q", {}).done);
    }
    SUBCASE("format errors stop conservatively") {
        fx.mock->respond(PromptKind::Plan, "", "no json here");
        CHECK(fx.loop.plan("q", {}).done);
    }
    SUBCASE("malformed command entries are dropped, valid ones kept") {
        fx.mock->respond(PromptKind::Plan, "", R"({"decision": "SEARCH", "search_commands": [
            {"type": "MEM0_SEARCH"},
            {"type": "KEYWORD_SEARCH", "keywords": []},
            {"type": "KEYWORD_SEARCH", "keywords": ["ok"]}]})");
        const auto p = fx.loop.plan("q", {});
        REQUIRE_FALSE(p.done);
        REQUIRE(p.commands.size() == 1);
        CHECK(p.commands[0].keywords == std::vector<std::string>{"ok"});
    }
}

TEST_CASE("integration extracts facts and builds a grounded evidence block") {
    Fixture fx;
    const auto p1 = fx.add_page("we should visit the museum on friday");
    fx.index.add_unit("plan to visit the museum", {p1}, kSourceOriginal, 0);

    SUBCASE("two well-formed facts") {
        fx.mock->respond(PromptKind::Integration, "", R"({"linked_facts": [
            {"fact": "The museum visit is planned", "evidence_quote": "visit the museum"},
            {"fact": "The visit happens on friday", "evidence_quote": "on friday"}],
            "coverage_assessment": "covers the when"})");
        const auto [facts, coverage] = fx.loop.integrate("when is the visit?", {p1});
        REQUIRE(facts.size() == 2);
        CHECK(coverage == "covers the when");

        const auto prompt = fx.mock->last_prompt(PromptKind::Integration);
        // the block shows the page's summaries and its verbatim rendering
        CHECK(prompt.find("plan to visit the museum") != std::string::npos);
        CHECK(prompt.find("[2023-06-01T09:00:00] A: we should visit the museum on friday") !=
              std::string::npos);
        CHECK(prompt.find("=== PAGE " + p1 + " ===") != std::string::npos);
    }
    SUBCASE("empty fact list with coverage preserved") {
        fx.mock->respond(PromptKind::Integration, "", kEmptyIntegration);
        const auto [facts, coverage] = fx.loop.integrate("q", {p1});
        CHECK(facts.empty());
        CHECK(coverage == "nothing yet");
    }
    SUBCASE("facts with empty text are dropped") {
        fx.mock->respond(PromptKind::Integration, "", R"({"linked_facts": [
            {"fact": "   ", "evidence_quote": "x"},
            {"fact": "kept", "evidence_quote": "y"}], "coverage_assessment": ""})");
        const auto [facts, _] = fx.loop.integrate("q", {p1});
        REQUIRE(facts.size() == 1);
        CHECK(facts[0].fact == "kept");
    }
    SUBCASE("format error yields an empty round") {
        fx.mock->respond(PromptKind::Integration, "", "garbled");
        const auto [facts, coverage] = fx.loop.integrate("q", {p1});
        CHECK(facts.empty());
        CHECK(coverage.empty());
    }
}

TEST_CASE("link_provenance") {
    Fixture fx;
    const auto p1 = fx.add_page("nothing relevant in this page body at all");
    const auto p2 = fx.add_page("joanna recommended the series little women to nate");
    const auto p3 = fx.add_page("another page about gardening and soil quality");

    SUBCASE("verbatim quote resolves to its page") {
        RawFact raw{"Joanna recommended Little Women",
                    "recommended the series little women"};
        const auto fact = fx.loop.link_provenance(raw, {p1, p2, p3});
        CHECK(fact.source_pages == std::set<std::string>{p2});
        REQUIRE(fact.evidence_snippets.size() == 1);
        CHECK(fact.evidence_snippets[0].find("joanna recommended") != std::string::npos);
    }
    SUBCASE("case and whitespace differences still match") {
        RawFact raw{"Joanna recommended Little Women",
                    "Recommended  THE series,  Little Women"};
        const auto fact = fx.loop.link_provenance(raw, {p1, p2, p3});
        CHECK(fact.source_pages == std::set<std::string>{p2});
    }
    SUBCASE("quote matching falls back to the page's summaries") {
        fx.index.add_unit("Nate showed Joanna a fantasy book series", {p1}, kSourceOriginal, 0);
        RawFact raw{"Nate showed a series", "showed joanna a fantasy book series"};
        const auto fact = fx.loop.link_provenance(raw, {p1});
        CHECK(fact.source_pages == std::set<std::string>{p1});
    }
    SUBCASE("below-threshold keyword overlap resolves nothing") {
        // six content words, exactly one ("gardening") appears in p3: 1/6 < 0.5
        RawFact raw{"zebra quagga okapi tapir bongo gardening", ""};
        const auto fact = fx.loop.link_provenance(raw, {p1, p3});
        CHECK(fact.source_pages.empty());
        CHECK_FALSE(fact.resolved());
    }
    SUBCASE("overlap at the threshold resolves") {
        // six content words, three in p3: gardening, soil, quality -> 0.5
        RawFact raw{"zebra quagga okapi gardening soil quality", "not found anywhere"};
        const auto fact = fx.loop.link_provenance(raw, {p1, p3});
        CHECK(fact.source_pages == std::set<std::string>{p3});
    }
}

TEST_CASE("escalate: immediate DONE keeps only warm-start evidence") {
    Fixture fx;
    const auto p1 = fx.add_page("alpha page with the decisive detail inside");
    const auto u1 = fx.index.add_unit("summary pointing at alpha", {p1}, kSourceOriginal, 0);

    fx.mock->respond(PromptKind::Integration, "", R"({"linked_facts": [
        {"fact": "the decisive detail", "evidence_quote": "the decisive detail"}],
        "coverage_assessment": "done"})");
    fx.mock->respond(PromptKind::Plan, "", R"({"decision": "DONE"})");

    const auto pack = fx.loop.escalate("what is the detail?", {fx.hit_for(u1, 0.9)});
    CHECK(pack.iterations_used == 0);
    CHECK(pack.pages_read == std::vector<std::string>{p1});
    REQUIRE(pack.facts.size() == 1);
    CHECK(pack.facts[0].source_pages == std::set<std::string>{p1});
    CHECK_FALSE(pack.error);
    CHECK(fx.gateway.total_calls() == 2); // warm integrate + one plan
}

TEST_CASE("escalate: a repeated command is skipped and the loop ends") {
    Fixture fx;
    const auto p1 = fx.add_page("warmstart page alphaword body");
    const auto u1 = fx.index.add_unit("summary of warmstart", {p1}, kSourceOriginal, 0);
    const auto p2 = fx.add_page("fresh page with betaword inside");

    fx.mock->respond(PromptKind::Integration, "", kEmptyIntegration, true);
    fx.mock->respond(PromptKind::Plan, "", R"({"decision": "SEARCH", "search_commands": [
        {"type": "KEYWORD_SEARCH", "keywords": ["betaword"]}]})");
    fx.mock->respond(PromptKind::Plan, "", R"({"decision": "SEARCH", "search_commands": [
        {"type": "KEYWORD_SEARCH", "keywords": ["betaword"]}]})");

    const auto pack = fx.loop.escalate("find betaword", {fx.hit_for(u1, 0.9)});
    CHECK(pack.pages_read == std::vector<std::string>{p1, p2});
    CHECK(pack.searched_queries.size() == 1); // the repeat never executed
    CHECK_FALSE(pack.error);
}

TEST_CASE("escalate: the loop stops at t_max even when the planner keeps searching") {
    Fixture fx;
    fx.add_page("page containing alphaword marker");
    fx.add_page("page containing betaword marker");
    fx.add_page("page containing gammaword marker");

    fx.mock->respond(PromptKind::Integration, "", kEmptyIntegration, true);
    for (const char* kw : {"alphaword", "betaword", "gammaword"})
        fx.mock->respond(PromptKind::Plan, "",
                         std::string(R"({"decision": "SEARCH", "search_commands": [{"type": "KEYWORD_SEARCH", "keywords": [")") +
                             kw + R"("]}]})");

    const auto pack = fx.loop.escalate("query with no warm start", {});
    CHECK(pack.iterations_used == 3);
    CHECK(pack.searched_queries.size() == 3);
    CHECK(pack.pages_read.size() == 3);
    // bound: no warm integrate (no hits), 3 plans + 3 integrates
    CHECK(fx.gateway.total_calls() == 6);
    CHECK(fx.gateway.total_calls() <=
          1 + 2 * static_cast<std::size_t>(fx.loop.config().t_max) + 1);
}

TEST_CASE("escalate: commands never execute twice across rounds") {
    Fixture fx;
    fx.add_page("first page aword inside");
    fx.add_page("second page bword inside");
    fx.add_page("third page cword inside");

    fx.mock->respond(PromptKind::Integration, "", kEmptyIntegration, true);
    fx.mock->respond(PromptKind::Plan, "", R"({"decision": "SEARCH", "search_commands": [
        {"type": "KEYWORD_SEARCH", "keywords": ["aword"]},
        {"type": "KEYWORD_SEARCH", "keywords": ["bword"]}]})");
    fx.mock->respond(PromptKind::Plan, "", R"({"decision": "SEARCH", "search_commands": [
        {"type": "KEYWORD_SEARCH", "keywords": ["bword"]},
        {"type": "KEYWORD_SEARCH", "keywords": ["cword"]}]})");
    fx.mock->respond(PromptKind::Plan, "", R"({"decision": "DONE"})");

    const auto pack = fx.loop.escalate("cover all three", {});
    REQUIRE(pack.searched_queries.size() == 3);
    CHECK(pack.searched_queries[0] == "KEYWORD_SEARCH(aword)");
    CHECK(pack.searched_queries[1] == "KEYWORD_SEARCH(bword)");
    CHECK(pack.searched_queries[2] == "KEYWORD_SEARCH(cword)");
}

TEST_CASE("escalate: semantic commands dedupe on normalized payloads") {
    Fixture fx;
    const auto p1 = fx.add_page("museum trip planning details");
    fx.index.add_unit("the museum trip", {p1}, kSourceOriginal, 0);

    fx.mock->respond(PromptKind::Integration, "", kEmptyIntegration, true);
    fx.mock->respond(PromptKind::Plan, "", R"({"decision": "SEARCH", "search_commands": [
        {"type": "MEM0_SEARCH", "query": "Museum  Trip"}]})");
    fx.mock->respond(PromptKind::Plan, "", R"({"decision": "SEARCH", "search_commands": [
        {"type": "MEM0_SEARCH", "query": "museum trip"}]})");

    const auto pack = fx.loop.escalate("about the museum", {});
    CHECK(pack.searched_queries.size() == 1);
}

TEST_CASE("escalate: warm-start pages come before searched pages") {
    Fixture fx;
    const auto p_warm = fx.add_page("warm page zulu content");
    const auto u1 = fx.index.add_unit("warm summary", {p_warm}, kSourceOriginal, 0);
    const auto p_cold = fx.add_page("cold page yankeeword content");

    fx.mock->respond(PromptKind::Integration, "", kEmptyIntegration, true);
    fx.mock->respond(PromptKind::Plan, "", R"({"decision": "SEARCH", "search_commands": [
        {"type": "KEYWORD_SEARCH", "keywords": ["yankeeword"]}]})");
    fx.mock->respond(PromptKind::Plan, "", R"({"decision": "DONE"})");

    const auto pack = fx.loop.escalate("question", {fx.hit_for(u1, 0.8)});
    REQUIRE(pack.pages_read.size() == 2);
    CHECK(pack.pages_read[0] == p_warm);
    CHECK(pack.pages_read[1] == p_cold);
}

TEST_CASE("escalate: a gateway failure mid-loop returns the partial pack flagged") {
    Fixture fx;
    const auto p1 = fx.add_page("warm page with a findable fact");
    const auto u1 = fx.index.add_unit("warm summary", {p1}, kSourceOriginal, 0);

    fx.mock->respond(PromptKind::Integration, "", R"({"linked_facts": [
        {"fact": "a findable fact", "evidence_quote": "a findable fact"}],
        "coverage_assessment": "partial"})");
    MockBackend::Entry broken;
    broken.kind = PromptKind::Plan;
    broken.fail = true;
    broken.repeat = true;
    fx.mock->add(broken);

    const auto pack = fx.loop.escalate("question", {fx.hit_for(u1, 0.9)});
    CHECK(pack.error);
    REQUIRE(pack.facts.size() == 1);
    CHECK(pack.facts[0].fact == "a findable fact");
}
