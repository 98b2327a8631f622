#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "ccp/common.hpp"

namespace ccp {

// Output of the contrastive projection head; callers guarantee nonzero and
// finite entries before asking for a similarity.
using Embedding = std::vector<double>;

// Per-class label evidence in [-1, 1]: 1 = certain membership, 0 = unknown,
// -1 = certain non-membership. The clipped form clamps to [0, 1] and has at
// most one nonzero entry (its strength).
struct CredibilityVector {
    std::vector<double> values;
    bool clipped = false;

    std::size_t size() const { return values.size(); }
    double operator[](std::size_t k) const { return values[k]; }

    bool operator==(const CredibilityVector&) const = default;

    static CredibilityVector zeros(std::size_t k, bool clipped_form = true) {
        return CredibilityVector{std::vector<double>(k, 0.0), clipped_form};
    }
    // Trusted label form: +1 at the given class, -1 elsewhere.
    static CredibilityVector clamped_label(std::size_t k, std::size_t cls) {
        CredibilityVector q{std::vector<double>(k, -1.0), false};
        q.values[cls] = 1.0;
        return q;
    }
};

// 1 - arccos(cos(z1, z2)) / pi, in [0, 1]. The cosine is clamped to [-1, 1]
// before arccos so floating-point drift at near-parallel vectors cannot
// produce NaN.
inline double angular_similarity(const Embedding& z1, const Embedding& z2) {
    if (z1.size() != z2.size())
        throw std::invalid_argument("angular_similarity: dimension mismatch");
    double dot = 0.0, n1 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < z1.size(); ++i) {
        dot += z1[i] * z2[i];
        n1 += z1[i] * z1[i];
        n2 += z2[i] * z2[i];
    }
    if (n1 == 0.0 || n2 == 0.0)
        throw std::domain_error("angular_similarity: zero-norm embedding");
    double c = dot / (std::sqrt(n1) * std::sqrt(n2));
    c = std::clamp(c, -1.0, 1.0);
    return 1.0 - std::acos(c) / std::numbers::pi;
}

// Credibility adjustment: out[k] = psi[k] - max_{k' != k} psi[k'].
// At most one entry ends up strictly positive; exact ties in the maximum
// yield zeros at every tied index.
inline CredibilityVector credibility_adjust(const std::vector<double>& psi) {
    const std::size_t k = psi.size();
    if (k < 2)
        throw std::domain_error("credibility_adjust: need at least 2 classes");
    std::size_t arg_max = 0;
    for (std::size_t i = 1; i < k; ++i)
        if (psi[i] > psi[arg_max]) arg_max = i;
    double second = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < k; ++i)
        if (i != arg_max) second = std::max(second, psi[i]);

    CredibilityVector out{std::vector<double>(k), false};
    for (std::size_t i = 0; i < k; ++i)
        out.values[i] = (i == arg_max) ? psi[i] - second : psi[i] - psi[arg_max];
    return out;
}

// Entrywise clamp to [0, 1]; marks the result as the clipped form.
inline CredibilityVector clip_credibility(const CredibilityVector& q) {
    CredibilityVector out{q.values, true};
    for (double& v : out.values) v = std::clamp(v, 0.0, 1.0);
    return out;
}

// Strength omega = max entry. Zero for the all-zero vector.
inline double strength(const CredibilityVector& q) {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : q.values) m = std::max(m, v);
    return q.values.empty() ? 0.0 : m;
}

} // namespace ccp
