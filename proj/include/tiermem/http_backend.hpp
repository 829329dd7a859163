#pragma once

// Kept out of gateway.hpp so test binaries do not pull in the HTTP stack.

#include "tiermem/gateway.hpp"

#include <httplib.h>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <string>

namespace tiermem {

// JSON-over-HTTP chat-completion transport.
// Request:  {model, messages:[{role,content}], temperature}
// Response: {choices:[{message:{content}}], usage:{prompt_tokens, completion_tokens}}
class HttpBackend final : public Backend {
public:
    struct Config {
        std::string base_url = "http://localhost:8000";
        std::string path = "/v1/chat/completions";
        std::string model = "gpt-4.1-mini";
        std::string api_key_env = "TIERMEM_API_KEY";
        int timeout_seconds = 60;
    };

    explicit HttpBackend(Config config) : config_(std::move(config)) {}

    Reply complete(PromptKind /*kind*/, const std::string& prompt, double temperature) override {
        const auto start = std::chrono::steady_clock::now();
        Reply reply;
        httplib::Client client(config_.base_url);
        client.set_read_timeout(config_.timeout_seconds, 0);
        client.set_connection_timeout(config_.timeout_seconds, 0);

        httplib::Headers headers;
        if (const char* key = std::getenv(config_.api_key_env.c_str()))
            headers.emplace("Authorization", std::string("Bearer ") + key);

        const nlohmann::json body = {
            {"model", config_.model},
            {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
            {"temperature", temperature}};

        auto result = client.Post(config_.path, headers, body.dump(), "application/json");
        reply.latency_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (!result || result->status < 200 || result->status >= 300) {
            reply.ok = false;
            reply.error = result ? "http status " + std::to_string(result->status)
                                 : "transport failure: " + httplib::to_string(result.error());
            return reply;
        }
        const auto parsed = nlohmann::json::parse(result->body, nullptr, false);
        if (parsed.is_discarded() || !parsed.contains("choices") || parsed["choices"].empty()) {
            reply.ok = false;
            reply.error = "malformed completion response";
            return reply;
        }
        reply.text = parsed["choices"][0]["message"]["content"].get<std::string>();
        if (parsed.contains("usage")) {
            const auto& usage = parsed["usage"];
            if (usage.contains("prompt_tokens"))
                reply.input_tokens = usage["prompt_tokens"].get<std::int64_t>();
            if (usage.contains("completion_tokens"))
                reply.output_tokens = usage["completion_tokens"].get<std::int64_t>();
        }
        return reply;
    }

    std::string name() const override { return "http"; }

private:
    Config config_;
};

} // namespace tiermem
