#pragma once

#include "tiermem/errors.hpp"

#include <array>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace tiermem {

// Every model interaction in the engine is one of these. Each kind binds
// exactly one template and one expected response schema.
enum class PromptKind {
    FactExtraction,
    Integration,
    Plan,
    Router,
    AnswerSummary,
    AnswerResearch,
    WriteBackVerify,
    WriteBackEdit,
    JudgeCorrectness,
    JudgeSufficiency,
};

inline constexpr std::array<PromptKind, 10> kAllPromptKinds = {
    PromptKind::FactExtraction, PromptKind::Integration,     PromptKind::Plan,
    PromptKind::Router,         PromptKind::AnswerSummary,   PromptKind::AnswerResearch,
    PromptKind::WriteBackVerify, PromptKind::WriteBackEdit,  PromptKind::JudgeCorrectness,
    PromptKind::JudgeSufficiency,
};

inline std::string_view prompt_kind_name(PromptKind kind) {
    switch (kind) {
    case PromptKind::FactExtraction: return "FactExtraction";
    case PromptKind::Integration: return "Integration";
    case PromptKind::Plan: return "Plan";
    case PromptKind::Router: return "Router";
    case PromptKind::AnswerSummary: return "AnswerSummary";
    case PromptKind::AnswerResearch: return "AnswerResearch";
    case PromptKind::WriteBackVerify: return "WriteBackVerify";
    case PromptKind::WriteBackEdit: return "WriteBackEdit";
    case PromptKind::JudgeCorrectness: return "JudgeCorrectness";
    case PromptKind::JudgeSufficiency: return "JudgeSufficiency";
    }
    return "Unknown";
}

inline PromptKind prompt_kind_from_name(std::string_view name) {
    for (PromptKind k : kAllPromptKinds)
        if (prompt_kind_name(k) == name) return k;
    throw ValidationError("unknown prompt kind: " + std::string(name));
}

// Answer-generation wording differs per benchmark flavor; selected by config.
enum class AnswerStyle { ShortPhrase, Episodic };

namespace prompts {

inline constexpr std::string_view kFactExtraction = R"(You are the Universal Memory Encoder. Your goal is to convert raw input stream into high-fidelity, self-contained knowledge records (Long-term Memory).

INPUT FORMATTING NOTICE:
The input will be provided after the line prefixed by 'Input:' and is often formatted as dialogue lines.
It may follow a pattern like: '[Timestamp] Speaker_Name: Content'.
- If this pattern is present, you MUST use the 'Timestamp' for temporal grounding and 'Speaker_Name' for entity resolution.
- If this pattern is absent (e.g., raw document text), treat the input as a factual source and extract knowledge propositions.

CORE OBJECTIVES:
1. ENTITY & CONTEXT RESOLUTION:
   - No ambiguous references: Every extracted fact must explicitly name the involved people, organizations, objects, places, and concepts.
   - No "User" ambiguity: If the input says '[...] Melanie: I like art', the fact MUST be "Melanie likes art", NOT "The user likes art".
   - De-contextualization: Each extracted fact must be standalone.
2. TEMPORAL GROUNDING: Use the provided timestamps in the input as the source of truth. Convert relative time ("tomorrow", "next week") into absolute context.
3. PRONOUN & DEIXIS ELIMINATION: Extracted facts must not contain any pronouns. If a pronoun appears, resolve it to the specific entity.
4. SCENE TAGGING (EMBEDDED): Identify the immediate scene/activity (2-5 words). Append this scene to the end of the fact string inside brackets.

OUTPUT INSTRUCTIONS (MUST FOLLOW):
Return a JSON object with EXACTLY this schema:
{
  "facts": [
      "<atomic fact sentence 1> [Scene: ...]",
      "<atomic fact sentence 2> [Scene: ...]", ...
  ]
}
Rules: Output JSON only (no extra text, no markdown code fences).

Input:
{input})";

inline constexpr std::string_view kIntegration = R"(You are a research assistant extracting facts from conversation evidence to answer a question.

QUESTION: {question}
RETRIEVED EVIDENCE:
{evidence}

YOUR TASK:
Read through ALL pages in the evidence and extract facts that help answer the question.

EXTRACTION STRATEGY:
Identify what information is needed and extract:
1. Direct answers: Facts that directly answer the question
2. Component facts: Facts about entities/topics in the question that can be combined
3. Temporal facts: When events happened
4. Confirmation facts: Look for acceptance/approval messages

OUTPUT FORMAT (JSON):
{
  "linked_facts": [
    {
      "fact": "<extracted fact - use specific dates/names>",
      "evidence_quote": "<EXACT quote from the evidence>"
    }
  ],
  "coverage_assessment": "<what aspects are covered vs missing>"
})";

inline constexpr std::string_view kPlan = R"(You are a research planner. Based on the current facts and the question, decide if more information is needed.

QUESTION: {question}
CURRENT FACTS:
{current_facts}
COVERAGE ASSESSMENT: {coverage_assessment}
RESEARCH HISTORY:
{research_history}
ALREADY SEARCHED:
{searched_queries}

YOUR TASK:
Decide whether the current facts are SUFFICIENT to answer the question, or if more search is needed.

OUTPUT FORMAT (JSON):
{
  "decision": "DONE" or "SEARCH",
  "reasoning": "<brief explanation>",
  "search_commands": [
    {"type": "MEM0_SEARCH", "query": "<semantic search query>"},
    {"type": "KEYWORD_SEARCH", "keywords": ["k1", "k2"]}
  ]
}

DECISION CRITERIA:
- DONE: The facts contain enough information to provide a reasonable answer.
- SEARCH: Key information is missing and more search might help.)";

inline constexpr std::string_view kRouter = R"(You are an expert router for a memory-augmented QA system. Analyze the retrieved summaries and decide the best action to answer the question.

Available actions:
1. "S" - Answer using current summaries only. Use when Summaries contain the EXPLICIT answer.
2. "R" - Deep research mode (slow path). Use when Summaries are ambiguous, only contextually related, or miss the answer entirely.

Question: {q}
Retrieved Summaries:
{summaries_block}

Output format (JSON only):
- If answering with summaries: {"action": "S"}
- If deep research needed: {"action": "R"})";

inline constexpr std::string_view kAnswerSummaryShortPhrase =
    R"(Based on the summary below, write an answer in the form of a short phrase for the question.
Answer with exact words from the context whenever possible.
For date/time, strictly follow the format "15 July 2023".

QUESTION: {question}
SUMMARY: {summary}
Short answer:)";

inline constexpr std::string_view kAnswerSummaryEpisodic =
    R"(You are an intelligent memory assistant tasked with retrieving accurate information from episodic memories.

# INSTRUCTIONS:
Synthesize information from different memories to answer the user's question.
It is CRITICAL that you move beyond simple fact extraction and perform logical inference. Answer the question in a short phrase.

QUESTION: {question}
SUMMARY: {summary}
Short answer:)";

inline constexpr std::string_view kAnswerResearchShortPhrase =
    R"(Based on the evidence below, write an answer in the form of a short phrase for the question.
Answer with exact words from the context whenever possible.
For date/time, strictly follow the format "15 July 2023".

QUESTION: {question}
EVIDENCE: {evidence}
Short answer:)";

inline constexpr std::string_view kAnswerResearchEpisodic =
    R"(You are an intelligent memory assistant tasked with retrieving accurate information from episodic memories.

# INSTRUCTIONS:
Synthesize information from the evidence to answer the user's question.
It is CRITICAL that you move beyond simple fact extraction and perform logical inference. Answer the question in a short phrase.

QUESTION: {question}
EVIDENCE: {evidence}
Short answer:)";

inline constexpr std::string_view kWriteBackVerify = R"(You are a strict quality judge for memory facts. Given a question and candidate facts, select ONLY high-quality facts that meet ALL criteria.

Question: {question}
Candidate Facts:
{facts_list}

Quality Criteria (ALL must be met):
1. Directly Relevant: Directly helps answer this specific question.
2. Specific & Concrete: Contains names, dates, numbers, locations.
3. Factually Grounded: Based on concrete conversation content.
4. Non-redundant & Self-contained.

Reject facts that are: Too general, obvious from the question, vague, or tangentially related.

Output format: Return ONLY a JSON array of selected fact indices (0-based), e.g., [0, 2], [1], or [] if none qualify.)";

inline constexpr std::string_view kWriteBackEdit = R"(You are the Memory Manager for a tiered memory system. Compare a new verified fact against the existing memory entries and choose ONE operation.

NEW FACT: {fact}
TRIGGERING QUESTION: {question}
EXISTING ENTRIES:
{candidates_block}

Operations:
- SKIP: the new fact is semantically entailed by an existing entry.
- UPDATE: the new fact adds specific details (e.g., timestamps, names) to a vague existing entry. Provide the merged text.
- ADD: the new fact represents a distinct, previously unindexed event.

Output format (JSON only):
{"op": "ADD" | "UPDATE" | "SKIP", "target_unit": "<unit id, UPDATE only>", "merged_text": "<merged entry text, UPDATE only>"})";

inline constexpr std::string_view kJudgeCorrectness = R"(Your task is to label an answer to a question as 'CORRECT' or 'WRONG'.
You will be given:
    (1) a question (posed by one user to another user),
    (2) a 'gold' (ground truth) answer,
    (3) a generated answer.

The gold answer will usually be a concise and short answer. The generated answer might be much longer, but you should be generous with your grading - as long as it touches on the same topic/time as the gold answer, it should be counted as CORRECT.

Question: {question}
Gold answer: {gold_answer}
Generated answer: {generated_answer}

First, provide a short (one sentence) explanation of your reasoning, then finish with CORRECT or WRONG in a json format with the key as "label".)";

inline constexpr std::string_view kJudgeSufficiency = R"(You are evaluating whether retrieved summaries contain sufficient information to answer a question.

Question: {question}
Gold answer: {gold_answer}

Retrieved summaries:
{summaries_text}

Your task: Determine if the summaries contain EXPLICIT information to answer the question correctly.

Strict criteria (be conservative):
1. The answer should be DIRECTLY stated or clearly derivable from the summaries.
2. Do NOT count vague/related information as sufficient.
3. Do NOT infer causes from effects.
4. For completeness questions ("how many", "list all", "both"), summaries must be COMPLETE.
5. For exact details (dates, numbers, names), summaries must contain those exact details.

If you have ANY doubt whether the summaries allow a factual answer without guessing, answer false.

Output JSON:
{
  "has_sufficient_info": true/false,
  "reason": "..."
})";

inline std::string_view template_for(PromptKind kind, AnswerStyle style) {
    switch (kind) {
    case PromptKind::FactExtraction: return kFactExtraction;
    case PromptKind::Integration: return kIntegration;
    case PromptKind::Plan: return kPlan;
    case PromptKind::Router: return kRouter;
    case PromptKind::AnswerSummary:
        return style == AnswerStyle::ShortPhrase ? kAnswerSummaryShortPhrase
                                                 : kAnswerSummaryEpisodic;
    case PromptKind::AnswerResearch:
        return style == AnswerStyle::ShortPhrase ? kAnswerResearchShortPhrase
                                                 : kAnswerResearchEpisodic;
    case PromptKind::WriteBackVerify: return kWriteBackVerify;
    case PromptKind::WriteBackEdit: return kWriteBackEdit;
    case PromptKind::JudgeCorrectness: return kJudgeCorrectness;
    case PromptKind::JudgeSufficiency: return kJudgeSufficiency;
    }
    throw ValidationError("unknown prompt kind");
}

inline const std::vector<std::string>& placeholders_for(PromptKind kind) {
    static const std::vector<std::string> fact_extraction = {"input"};
    static const std::vector<std::string> integration = {"question", "evidence"};
    static const std::vector<std::string> plan = {"question", "current_facts",
                                                  "coverage_assessment", "research_history",
                                                  "searched_queries"};
    static const std::vector<std::string> router = {"q", "summaries_block"};
    static const std::vector<std::string> answer_summary = {"question", "summary"};
    static const std::vector<std::string> answer_research = {"question", "evidence"};
    static const std::vector<std::string> verify = {"question", "facts_list"};
    static const std::vector<std::string> edit = {"fact", "question", "candidates_block"};
    static const std::vector<std::string> judge = {"question", "gold_answer", "generated_answer"};
    static const std::vector<std::string> sufficiency = {"question", "gold_answer",
                                                         "summaries_text"};
    switch (kind) {
    case PromptKind::FactExtraction: return fact_extraction;
    case PromptKind::Integration: return integration;
    case PromptKind::Plan: return plan;
    case PromptKind::Router: return router;
    case PromptKind::AnswerSummary: return answer_summary;
    case PromptKind::AnswerResearch: return answer_research;
    case PromptKind::WriteBackVerify: return verify;
    case PromptKind::WriteBackEdit: return edit;
    case PromptKind::JudgeCorrectness: return judge;
    case PromptKind::JudgeSufficiency: return sufficiency;
    }
    throw ValidationError("unknown prompt kind");
}

// Fills `{name}` slots for the kind's declared placeholders only; all other
// braces in the template (JSON examples etc.) pass through untouched.
inline std::string render(PromptKind kind, const std::map<std::string, std::string>& variables,
                          AnswerStyle style = AnswerStyle::ShortPhrase) {
    std::string missing;
    for (const auto& name : placeholders_for(kind)) {
        if (!variables.count(name)) {
            if (!missing.empty()) missing += ", ";
            missing += name;
        }
    }
    if (!missing.empty())
        throw TemplateError("missing placeholder(s) for " +
                            std::string(prompt_kind_name(kind)) + ": " + missing);

    std::string out(template_for(kind, style));
    for (const auto& name : placeholders_for(kind)) {
        const std::string slot = "{" + name + "}";
        const std::string& value = variables.at(name);
        std::size_t pos = 0;
        while ((pos = out.find(slot, pos)) != std::string::npos) {
            out.replace(pos, slot.size(), value);
            pos += value.size();
        }
    }
    return out;
}

} // namespace prompts
} // namespace tiermem
