#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "ccp/core_math.hpp"
#include "ccp/losses.hpp"

namespace ccp {

namespace detail {

inline std::vector<std::pair<std::size_t, CredibilityVector>>
propagate_with(const PairwiseSimilarity& sim, const std::vector<CredibilityVector>& credibilities,
               const std::vector<std::size_t>& unlabeled_indices) {
    const std::size_t n = credibilities.size();
    const std::size_t m = 2 * n;
    const std::size_t num_classes = n == 0 ? 0 : credibilities[0].size();
    auto q_of = [&](std::size_t i) -> const CredibilityVector& { return credibilities[i % n]; };

    std::vector<double> class_mass(num_classes, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const auto& q = q_of(i);
        if (!q.clipped)
            throw std::invalid_argument("propagate_batch: credibilities must be clipped");
        for (std::size_t k = 0; k < num_classes; ++k) class_mass[k] += q[k];
    }

    std::vector<std::pair<std::size_t, CredibilityVector>> out;
    out.reserve(unlabeled_indices.size());
    std::vector<double> psi(num_classes);
    for (std::size_t j : unlabeled_indices) {
        if (j >= n) throw std::invalid_argument("propagate_batch: unlabeled index out of range");
        CredibilityVector accum = CredibilityVector::zeros(num_classes, false);
        for (std::size_t v : {j, j + n}) {
            const auto& phi_row = sim.phi[v];
            for (std::size_t k = 0; k < num_classes; ++k) {
                double denom = class_mass[k] - q_of(v)[k];
                if (denom <= 0.0)
                    throw ContractError("propagate_batch: no credibility mass for class " +
                                        std::to_string(k) + " in batch");
                double num = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    if (i == v) continue;
                    double w = q_of(i)[k];
                    if (w != 0.0) num += phi_row[i] * w;
                }
                psi[k] = num / denom;
            }
            CredibilityVector adjusted = credibility_adjust(psi);
            for (std::size_t k = 0; k < num_classes; ++k) accum.values[k] += adjusted[k];
        }
        for (double& v : accum.values) v *= 0.5;
        out.emplace_back(j, std::move(accum));
    }
    return out;
}

} // namespace detail

// Transductive pseudo-label propagation for one batch.
//
// Views are paired z_{i+n} with z_i and share q_i. For each unlabeled sample
// j, each of its two views v gets class similarities
//
//   psi_{v,k} = sum_{i != v} phi(z_v, z_i) q_{i,k} / sum_{i != v} q_{i,k}
//
// over the expanded batch (the view's own twin stays in the sums), then a
// credibility adjustment; the two views' adjusted vectors are averaged.
// Requires positive credibility mass for every class in the batch, which
// balanced batching guarantees; a violation is a contract error, not a
// default, so batching bugs surface instead of propagating zeros.
//
// Returns (sample index, raw credibility vector) pairs ordered by index.
inline std::vector<std::pair<std::size_t, CredibilityVector>>
propagate_batch(const std::vector<Embedding>& embeddings,
                const std::vector<CredibilityVector>& credibilities,
                const std::vector<std::size_t>& unlabeled_indices) {
    if (embeddings.size() != 2 * credibilities.size())
        throw std::invalid_argument("propagate_batch: embeddings must be twice the credibilities");
    auto sim = detail::pairwise_similarity(embeddings);
    return detail::propagate_with(sim, credibilities, unlabeled_indices);
}

} // namespace ccp
