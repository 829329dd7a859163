#pragma once

#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace tiermem::text {

inline char lower_ascii(char c) {
    return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

inline std::string lower(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) out.push_back(lower_ascii(c));
    return out;
}

inline bool is_word_char(char c) {
    const unsigned char u = static_cast<unsigned char>(c);
    return std::isalnum(u) != 0 || u >= 0x80; // keep UTF-8 bytes inside tokens
}

// Lowercased tokens split on whitespace/punctuation.
inline std::vector<std::string> tokenize(std::string_view s) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char c : s) {
        if (is_word_char(c)) {
            cur.push_back(lower_ascii(c));
        } else if (!cur.empty()) {
            tokens.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

inline bool is_quote_punct(char c) {
    switch (c) {
    case '.': case ',': case '!': case '?': case ';': case ':':
    case '"': case '\'': case '(': case ')': case '[': case ']':
        return true;
    default:
        return false;
    }
}

// Canonical form used for evidence-quote matching: lowercase, punctuation
// stripped, whitespace runs collapsed to a single space, trimmed.
inline std::string normalize_quote(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (char c : s) {
        if (is_quote_punct(c)) continue;
        const unsigned char u = static_cast<unsigned char>(c);
        if (std::isspace(u)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(lower_ascii(c));
    }
    return out;
}

inline const std::unordered_set<std::string>& stopwords() {
    static const std::unordered_set<std::string> kStopwords = {
        "a",     "an",    "the",   "is",   "are",   "was",   "were",  "be",    "been",
        "being", "to",    "of",    "in",   "on",    "at",    "for",   "with",  "and",
        "or",    "but",   "not",   "no",   "it",    "its",   "this",  "that",  "these",
        "those", "i",     "you",   "he",   "she",   "we",    "they",  "them",  "his",
        "her",   "their", "my",    "your", "our",   "as",    "by",    "from",  "has",
        "have",  "had",   "do",    "does", "did",   "will",  "would", "can",   "could",
        "should","may",   "might", "so",   "if",    "then",  "than",  "there", "here",
        "what",  "which", "who",   "when", "where", "how",   "why",   "s",     "t",
    };
    return kStopwords;
}

// Unique lowercased non-stopword tokens, first-appearance order.
inline std::vector<std::string> content_words(std::string_view s) {
    std::vector<std::string> words;
    std::unordered_set<std::string> seen;
    for (auto& tok : tokenize(s)) {
        if (stopwords().count(tok)) continue;
        if (seen.insert(tok).second) words.push_back(tok);
    }
    return words;
}

// Fraction of `words` present in `haystack_tokens`; 0 if `words` is empty.
inline double overlap_ratio(const std::vector<std::string>& words,
                            const std::unordered_set<std::string>& haystack_tokens) {
    if (words.empty()) return 0.0;
    std::size_t hit = 0;
    for (const auto& w : words)
        if (haystack_tokens.count(w)) ++hit;
    return static_cast<double>(hit) / static_cast<double>(words.size());
}

// FNV-1a, stable across platforms (std::hash is not).
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

// "0007"-style fixed-width decimal suffix for stable lexicographic ordering.
inline std::string zero_pad(std::uint64_t n, int width) {
    std::string digits = std::to_string(n);
    if (static_cast<int>(digits.size()) < width)
        digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
    return digits;
}

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

} // namespace tiermem::text
