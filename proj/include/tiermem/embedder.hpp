#pragma once

#include "tiermem/errors.hpp"
#include "tiermem/text.hpp"

#include <cmath>
#include <cstddef>
#include <string_view>
#include <vector>

namespace tiermem {

// Pluggable embedding contract. Implementations must be deterministic:
// the same text always yields the same vector, L2-normalized (or all-zero
// when the text has no tokens).
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::size_t dimension() const = 0;
    virtual std::vector<double> embed(std::string_view text) const = 0;
};

// Hashed bag-of-words: each lowercased token lands in fnv1a(token) % dimension,
// counts accumulate, vector is L2-normalized. Deterministic and model-free;
// real deployments swap in an HTTP embedder behind the same contract.
class HashedBowEmbedder final : public Embedder {
public:
    explicit HashedBowEmbedder(std::size_t dimension = 256) : dimension_(dimension) {
        if (dimension_ == 0) throw ValidationError("embedder dimension must be positive");
    }

    std::size_t dimension() const override { return dimension_; }

    std::vector<double> embed(std::string_view input) const override {
        std::vector<double> v(dimension_, 0.0);
        for (const auto& tok : text::tokenize(input))
            v[text::fnv1a(tok) % dimension_] += 1.0;
        double norm2 = 0.0;
        for (double x : v) norm2 += x * x;
        if (norm2 > 0.0) {
            const double inv = 1.0 / std::sqrt(norm2);
            for (double& x : v) x *= inv;
        }
        return v;
    }

private:
    std::size_t dimension_;
};

// Plain dot product; inputs are unit-norm (or zero) by the Embedder contract.
inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ValidationError("embedding dimension mismatch");
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
    return dot;
}

inline double l2_norm(const std::vector<double>& v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    return std::sqrt(n);
}

} // namespace tiermem
