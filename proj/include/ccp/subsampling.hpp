#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "ccp/core_math.hpp"

namespace ccp {

// Per-class credibility mass, normalized to the simplex.
struct ClassMassDistribution {
    std::vector<double> masses;
};

struct SubsampleDecision {
    int percent = 0;                  // p, in [0, 99]
    std::vector<double> confidences;  // omega-hat per sample, from unclipped vectors
    double selected_divergence = 0.0; // D_KL at the chosen p, in bits
};

inline ClassMassDistribution class_mass_distribution(const std::vector<CredibilityVector>& qs) {
    if (qs.empty())
        throw std::domain_error("class_mass_distribution: empty collection");
    std::vector<double> masses(qs[0].size(), 0.0);
    for (const auto& q : qs)
        for (std::size_t k = 0; k < masses.size(); ++k) masses[k] += q[k];
    double total = std::accumulate(masses.begin(), masses.end(), 0.0);
    if (total <= 0.0)
        throw std::domain_error("class_mass_distribution: zero total mass");
    for (double& m : masses) m /= total;
    return {std::move(masses)};
}

// D_KL(P || Q) = sum_k P_k log2(P_k / Q_k), with 0 log(0/.) = 0.
// P_k > 0 where Q_k = 0 makes the divergence infinite (never selectable).
inline double kl_divergence_bits(const ClassMassDistribution& p, const ClassMassDistribution& q) {
    if (p.masses.size() != q.masses.size())
        throw std::invalid_argument("kl_divergence_bits: size mismatch");
    double d = 0.0;
    for (std::size_t k = 0; k < p.masses.size(); ++k) {
        if (p.masses[k] <= 0.0) continue;
        if (q.masses[k] <= 0.0) return std::numeric_limits<double>::infinity();
        d += p.masses[k] * std::log2(p.masses[k] / q.masses[k]);
    }
    return d;
}

namespace detail {
// Ascending by confidence, ties by ascending sample index.
inline std::vector<std::size_t> confidence_order(const std::vector<double>& confidences) {
    std::vector<std::size_t> order(confidences.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return confidences[a] < confidences[b];
    });
    return order;
}
} // namespace detail

// Choose the percentage of weakest pseudo-labels to reset, maximized subject
// to the class-mass distribution after resetting staying within d_max bits of
// the anchor. Candidates run over {0, ..., p_last - 1}; resetting the bottom
// floor(p |U| / 100) vectors by ascending confidence. p = 0 keeps P = Q at
// zero divergence, so a feasible candidate always exists when d_max > 0.
// Inputs are never mutated; the engine performs the actual reset.
inline SubsampleDecision choose_subsample(const std::vector<CredibilityVector>& averaged_unclipped,
                                          const std::vector<CredibilityVector>& clipped,
                                          int p_last,
                                          double d_max) {
    if (averaged_unclipped.size() != clipped.size())
        throw std::invalid_argument("choose_subsample: size mismatch");
    if (p_last < 1 || p_last > 100)
        throw std::invalid_argument("choose_subsample: p_last must be in [1, 100]");

    const std::size_t count = clipped.size();
    SubsampleDecision decision;
    decision.confidences.resize(count);
    for (std::size_t u = 0; u < count; ++u)
        decision.confidences[u] = strength(averaged_unclipped[u]);

    if (d_max <= 0.0 || count == 0) return decision;

    const ClassMassDistribution anchor = class_mass_distribution(clipped);
    const auto order = detail::confidence_order(decision.confidences);
    const std::size_t num_classes = clipped[0].size();

    // Candidates are evaluated by summing the surviving vectors in ascending
    // sample-index order, exactly as a naive scratch-copy recomputation
    // would, so the result is reproducible bit for bit.
    std::vector<bool> reset(count, false);
    std::size_t reset_count = 0;
    std::vector<double> masses(num_classes);
    for (int p = 0; p < p_last; ++p) {
        std::size_t want = static_cast<std::size_t>((static_cast<long long>(p) * count) / 100);
        while (reset_count < want) reset[order[reset_count++]] = true;

        std::fill(masses.begin(), masses.end(), 0.0);
        for (std::size_t u = 0; u < count; ++u) {
            if (reset[u]) continue;
            for (std::size_t k = 0; k < num_classes; ++k) masses[k] += clipped[u][k];
        }
        double total = std::accumulate(masses.begin(), masses.end(), 0.0);
        if (total <= 0.0) continue; // degenerate candidate, infeasible
        for (double& m : masses) m /= total;
        double d = kl_divergence_bits({masses}, anchor);
        if (d < d_max && p >= decision.percent) {
            decision.percent = p;
            decision.selected_divergence = d;
        }
    }
    return decision;
}

} // namespace ccp
