#pragma once

#include "tiermem/errors.hpp"
#include "tiermem/jsonl.hpp"
#include "tiermem/prompts.hpp"
#include "tiermem/text.hpp"
#include "tiermem/tokens.hpp"

#include <json.hpp>

#include <array>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace tiermem {

using nlohmann::json;

enum class ParseStatus { ok, format_error };

struct ModelResponse {
    std::string raw_text;
    TokenUsage usage;
    ParseStatus parse_status = ParseStatus::ok;
    std::optional<json> payload; // schema-validated value when parse_status == ok
};

// Transport abstraction. `ok=false` replies are retried by the gateway and
// keep their latency so failed attempts are billed to the logical call.
class Backend {
public:
    struct Reply {
        std::string text;
        std::optional<std::int64_t> input_tokens;
        std::optional<std::int64_t> output_tokens;
        double latency_seconds = 0.0;
        bool ok = true;
        std::string error;
    };

    virtual ~Backend() = default;
    virtual Reply complete(PromptKind kind, const std::string& prompt, double temperature) = 0;
    virtual std::string name() const = 0;
};

// Deterministic scripted test double. Entries are consumed in script order;
// a call takes the first unconsumed entry whose kind and `match` substring
// fit the rendered prompt, falling back to the first matching entry overall
// (without consuming) when every candidate is spent. Entries with
// `repeat=true` are never consumed.
class MockBackend final : public Backend {
public:
    struct Entry {
        std::optional<PromptKind> kind;
        std::string match; // substring of the rendered prompt; empty matches all
        std::string response;
        std::optional<std::int64_t> input_tokens;
        std::optional<std::int64_t> output_tokens;
        double latency_seconds = 0.0;
        bool repeat = false;
        bool fail = false; // simulate a transport failure
        bool used = false;
    };

    MockBackend& add(Entry entry) {
        std::lock_guard lock(mu_);
        script_.push_back(std::move(entry));
        return *this;
    }

    MockBackend& respond(PromptKind kind, std::string match, std::string response,
                         bool repeat = false) {
        Entry e;
        e.kind = kind;
        e.match = std::move(match);
        e.response = std::move(response);
        e.repeat = repeat;
        return add(std::move(e));
    }

    static std::shared_ptr<MockBackend> from_jsonl(const std::string& path) {
        auto mock = std::make_shared<MockBackend>();
        for (const auto& rec : jsonl::read_file(path)) {
            Entry e;
            if (rec.contains("kind") && !rec["kind"].is_null())
                e.kind = prompt_kind_from_name(rec["kind"].get<std::string>());
            if (rec.contains("match")) e.match = rec["match"].get<std::string>();
            if (rec.contains("response")) e.response = rec["response"].get<std::string>();
            if (rec.contains("input_tokens")) e.input_tokens = rec["input_tokens"].get<std::int64_t>();
            if (rec.contains("output_tokens")) e.output_tokens = rec["output_tokens"].get<std::int64_t>();
            if (rec.contains("latency_seconds")) e.latency_seconds = rec["latency_seconds"].get<double>();
            if (rec.contains("repeat")) e.repeat = rec["repeat"].get<bool>();
            if (rec.contains("fail")) e.fail = rec["fail"].get<bool>();
            mock->add(std::move(e));
        }
        return mock;
    }

    Reply complete(PromptKind kind, const std::string& prompt, double /*temperature*/) override {
        std::lock_guard lock(mu_);
        ++calls_;
        call_log_.emplace_back(kind, prompt);
        Entry* chosen = nullptr;
        for (auto& e : script_) {
            if (!e.used && matches(e, kind, prompt)) {
                chosen = &e;
                if (!e.repeat) e.used = true;
                break;
            }
        }
        if (!chosen) {
            for (auto& e : script_) {
                if (matches(e, kind, prompt)) {
                    chosen = &e;
                    break;
                }
            }
        }
        if (!chosen) {
            Reply miss;
            miss.ok = false;
            miss.error = "mock script has no entry for " + std::string(prompt_kind_name(kind));
            return miss;
        }
        if (chosen->fail) {
            Reply failure;
            failure.ok = false;
            failure.error = "scripted transport failure";
            failure.latency_seconds = chosen->latency_seconds;
            return failure;
        }
        Reply reply;
        reply.text = chosen->response;
        reply.input_tokens = chosen->input_tokens;
        reply.output_tokens = chosen->output_tokens;
        reply.latency_seconds = chosen->latency_seconds;
        return reply;
    }

    std::string name() const override { return "mock"; }

    std::size_t calls() const {
        std::lock_guard lock(mu_);
        return calls_;
    }

    std::vector<std::pair<PromptKind, std::string>> call_log() const {
        std::lock_guard lock(mu_);
        return call_log_;
    }

    std::string last_prompt(PromptKind kind) const {
        std::lock_guard lock(mu_);
        for (auto it = call_log_.rbegin(); it != call_log_.rend(); ++it)
            if (it->first == kind) return it->second;
        return "";
    }

private:
    static bool matches(const Entry& e, PromptKind kind, const std::string& prompt) {
        if (e.kind && *e.kind != kind) return false;
        return e.match.empty() || prompt.find(e.match) != std::string::npos;
    }

    mutable std::mutex mu_;
    std::vector<Entry> script_;
    std::size_t calls_ = 0;
    std::vector<std::pair<PromptKind, std::string>> call_log_;
};

namespace detail {

// Locates the first balanced JSON object/array in free-form model output,
// skipping prose, code fences and string-literal braces.
inline std::optional<json> extract_first_json(std::string_view raw) {
    for (std::size_t start = 0; start < raw.size(); ++start) {
        const char open = raw[start];
        if (open != '{' && open != '[') continue;
        int depth = 0;
        bool in_string = false;
        bool escaped = false;
        for (std::size_t i = start; i < raw.size(); ++i) {
            const char c = raw[i];
            if (in_string) {
                if (escaped) escaped = false;
                else if (c == '\\') escaped = true;
                else if (c == '"') in_string = false;
                continue;
            }
            if (c == '"') in_string = true;
            else if (c == '{' || c == '[') ++depth;
            else if (c == '}' || c == ']') {
                --depth;
                if (depth == 0) {
                    json parsed = json::parse(raw.substr(start, i - start + 1), nullptr,
                                              /*allow_exceptions=*/false);
                    if (!parsed.is_discarded()) return parsed;
                    break; // balanced but unparseable; try the next candidate
                }
                if (depth < 0) break;
            }
        }
    }
    return std::nullopt;
}

inline bool is_integer_array(const json& j) {
    if (!j.is_array()) return false;
    for (const auto& item : j)
        if (!item.is_number_integer() && !item.is_number_unsigned()) return false;
    return true;
}

} // namespace detail

// Extracts the first JSON value in `raw` and validates it against the kind's
// response schema. Unknown fields are ignored; nullopt signals format_error.
inline std::optional<json> parse_payload(PromptKind kind, const std::string& raw) {
    if (kind == PromptKind::AnswerSummary || kind == PromptKind::AnswerResearch)
        return json(text::trim(raw)); // free text, no schema

    auto extracted = detail::extract_first_json(raw);
    if (!extracted) return std::nullopt;
    const json& j = *extracted;

    switch (kind) {
    case PromptKind::Router: {
        if (!j.is_object() || !j.contains("action") || !j["action"].is_string())
            return std::nullopt;
        const std::string action = j["action"].get<std::string>();
        if (action != "S" && action != "R") return std::nullopt;
        if (j.contains("thinking") && !j["thinking"].is_string()) return std::nullopt;
        return j;
    }
    case PromptKind::Plan: {
        if (!j.is_object() || !j.contains("decision") || !j["decision"].is_string())
            return std::nullopt;
        const std::string decision = j["decision"].get<std::string>();
        if (decision != "DONE" && decision != "SEARCH") return std::nullopt;
        if (j.contains("search_commands") && !j["search_commands"].is_array())
            return std::nullopt;
        return j;
    }
    case PromptKind::FactExtraction: {
        if (!j.is_object() || !j.contains("facts") || !j["facts"].is_array())
            return std::nullopt;
        return j;
    }
    case PromptKind::Integration: {
        if (!j.is_object() || !j.contains("linked_facts") || !j["linked_facts"].is_array())
            return std::nullopt;
        if (j.contains("coverage_assessment") && !j["coverage_assessment"].is_string())
            return std::nullopt;
        return j;
    }
    case PromptKind::WriteBackVerify: {
        if (!detail::is_integer_array(j)) return std::nullopt;
        return j;
    }
    case PromptKind::WriteBackEdit: {
        if (!j.is_object() || !j.contains("op") || !j["op"].is_string()) return std::nullopt;
        const std::string op = j["op"].get<std::string>();
        if (op != "ADD" && op != "UPDATE" && op != "SKIP") return std::nullopt;
        if (op == "UPDATE") {
            if (!j.contains("target_unit") || !j["target_unit"].is_string() ||
                j["target_unit"].get<std::string>().empty())
                return std::nullopt;
            if (!j.contains("merged_text") || !j["merged_text"].is_string())
                return std::nullopt;
        }
        return j;
    }
    case PromptKind::JudgeCorrectness: {
        if (!j.is_object() || !j.contains("label") || !j["label"].is_string())
            return std::nullopt;
        const std::string label = j["label"].get<std::string>();
        if (label != "CORRECT" && label != "WRONG") return std::nullopt;
        return j;
    }
    case PromptKind::JudgeSufficiency: {
        if (!j.is_object() || !j.contains("has_sufficient_info") ||
            !j["has_sufficient_info"].is_boolean())
            return std::nullopt;
        return j;
    }
    default:
        return std::nullopt;
    }
}

struct GatewayOptions {
    int max_attempts = 2;
    double judge_temperature = 0.0; // judges run at temperature 0
    double generator_temperature = 0.0;
    AnswerStyle answer_style = AnswerStyle::ShortPhrase;
};

// Single choke-point for all model calls: templating, transport with retry,
// token accounting and schema parsing. Safe to call from concurrent workers.
class LlmGateway {
public:
    using Options = GatewayOptions;

    explicit LlmGateway(std::shared_ptr<Backend> backend, TokenEstimator estimator = TokenEstimator(),
                        Options options = Options())
        : backend_(std::move(backend)), estimator_(estimator), options_(options) {
        if (!backend_) throw ValidationError("gateway requires a backend");
        if (options_.max_attempts < 1) throw ValidationError("max_attempts must be >= 1");
    }

    std::string render_prompt(PromptKind kind,
                              const std::map<std::string, std::string>& variables) const {
        return prompts::render(kind, variables, options_.answer_style);
    }

    ModelResponse complete(PromptKind kind, const std::map<std::string, std::string>& variables) {
        const std::string prompt = render_prompt(kind, variables);
        const double temperature = is_judge(kind) ? options_.judge_temperature
                                                  : options_.generator_temperature;
        TokenUsage usage;
        Backend::Reply reply;
        std::string last_error;
        bool succeeded = false;
        for (int attempt = 0; attempt < options_.max_attempts; ++attempt) {
            reply = backend_->complete(kind, prompt, temperature);
            usage.latency_seconds += reply.latency_seconds;
            if (reply.ok) {
                succeeded = true;
                break;
            }
            last_error = reply.error;
        }
        if (!succeeded) {
            record(kind, usage);
            throw BackendError("backend failed after " + std::to_string(options_.max_attempts) +
                               " attempt(s): " + last_error);
        }
        usage.input_tokens = reply.input_tokens.value_or(estimator_.estimate(prompt));
        usage.output_tokens = reply.output_tokens.value_or(estimator_.estimate(reply.text));

        ModelResponse response;
        response.raw_text = reply.text;
        response.usage = usage;
        response.payload = parse_payload(kind, reply.text);
        response.parse_status = response.payload ? ParseStatus::ok : ParseStatus::format_error;
        record(kind, usage);
        return response;
    }

    const Options& options() const { return options_; }
    const TokenEstimator& estimator() const { return estimator_; }
    Backend& backend() { return *backend_; }

    std::size_t total_calls() const {
        std::lock_guard lock(mu_);
        return total_calls_;
    }
    std::size_t calls_for(PromptKind kind) const {
        std::lock_guard lock(mu_);
        return per_kind_calls_[static_cast<std::size_t>(kind)];
    }
    TokenUsage total_usage() const {
        std::lock_guard lock(mu_);
        return total_usage_;
    }

private:
    static bool is_judge(PromptKind kind) {
        return kind == PromptKind::JudgeCorrectness || kind == PromptKind::JudgeSufficiency;
    }

    void record(PromptKind kind, const TokenUsage& usage) {
        std::lock_guard lock(mu_);
        ++total_calls_;
        ++per_kind_calls_[static_cast<std::size_t>(kind)];
        total_usage_ += usage;
    }

    std::shared_ptr<Backend> backend_;
    TokenEstimator estimator_;
    Options options_;
    mutable std::mutex mu_;
    std::size_t total_calls_ = 0;
    std::array<std::size_t, 10> per_kind_calls_{};
    TokenUsage total_usage_;
};

} // namespace tiermem
