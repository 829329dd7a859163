#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace tiermem {

// Whitespace-delimited word count scaled by a fixed factor, rounded up.
// Used uniformly for page sealing and cost accounting; any monotone
// estimator preserves the protocol, so the factor is configurable.
class TokenEstimator {
public:
    explicit TokenEstimator(double tokens_per_word = 1.3) : factor_(tokens_per_word) {}

    std::int64_t estimate(std::string_view text) const {
        std::size_t words = 0;
        bool in_word = false;
        for (char c : text) {
            const bool ws = c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
            if (!ws && !in_word) {
                ++words;
                in_word = true;
            } else if (ws) {
                in_word = false;
            }
        }
        return static_cast<std::int64_t>(std::ceil(static_cast<double>(words) * factor_));
    }

    double tokens_per_word() const { return factor_; }

private:
    double factor_;
};

// Input/output token counts plus latency for one model call.
// Additive under aggregation: usage of a call sequence is the field-wise sum.
struct TokenUsage {
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;
    double latency_seconds = 0.0;

    TokenUsage& operator+=(const TokenUsage& other) {
        input_tokens += other.input_tokens;
        output_tokens += other.output_tokens;
        latency_seconds += other.latency_seconds;
        return *this;
    }
    friend TokenUsage operator+(TokenUsage lhs, const TokenUsage& rhs) {
        lhs += rhs;
        return lhs;
    }
    friend bool operator==(const TokenUsage& a, const TokenUsage& b) {
        return a.input_tokens == b.input_tokens && a.output_tokens == b.output_tokens &&
               a.latency_seconds == b.latency_seconds;
    }
};

} // namespace tiermem
