#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "ccp/core_math.hpp"

namespace ccp {

// A contrastive batch of n samples expanded to 2n views: index i and i+n are
// the two transforms of sample i and share credibilities[i] (clipped form).
struct ContrastiveBatch {
    std::vector<Embedding> embeddings;            // size 2n
    std::vector<CredibilityVector> credibilities; // size n
    double temperature = 0.1;

    std::size_t pair_count() const { return credibilities.size(); }
    std::size_t view_count() const { return embeddings.size(); }
};

// Pairwise evidence M (m_ij = q_i . q_j), temperature-scaled affinities
// A (a_ij = exp(phi(z_i, z_j)/tau)) and per-view strengths omega, all over
// the 2n expansion. Both matrices carry a zero diagonal.
struct MatchingMatrices {
    std::vector<std::vector<double>> match;
    std::vector<std::vector<double>> affinity;
    std::vector<double> strengths;
};

enum class ContrastiveMode {
    credibility,    // M from credibility dots, omega from strengths
    simclr_pretrain // M = transform-pair indicator, omega = all ones
};

struct ContrastiveLoss {
    double loss = 0.0;
    std::vector<Embedding> embedding_grads; // d loss / d z_i, size 2n
};

struct ClassificationLoss {
    double loss = 0.0;
    std::vector<std::vector<double>> logit_grads; // d loss / d g_i
};

namespace detail {

inline void validate_batch(const ContrastiveBatch& batch) {
    if (batch.temperature <= 0.0)
        throw std::domain_error("contrastive batch: temperature must be positive");
    if (batch.embeddings.size() != 2 * batch.credibilities.size())
        throw std::invalid_argument("contrastive batch: embeddings must be twice the credibilities");
    for (const auto& q : batch.credibilities)
        if (!q.clipped)
            throw std::invalid_argument("contrastive batch: credibilities must be clipped");
}

// phi and its cosine for every pair; diagonal left at zero.
struct PairwiseSimilarity {
    std::vector<std::vector<double>> phi;
    std::vector<std::vector<double>> cosine;
    std::vector<double> norms;
};

inline PairwiseSimilarity pairwise_similarity(const std::vector<Embedding>& zs) {
    const std::size_t m = zs.size();
    PairwiseSimilarity out;
    out.phi.assign(m, std::vector<double>(m, 0.0));
    out.cosine.assign(m, std::vector<double>(m, 0.0));
    out.norms.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
        double n = 0.0;
        for (double v : zs[i]) n += v * v;
        if (n == 0.0) throw std::domain_error("contrastive batch: zero-norm embedding");
        out.norms[i] = std::sqrt(n);
    }
    for (std::size_t i = 0; i < m; ++i) {
        const double* zi = zs[i].data();
        for (std::size_t j = i + 1; j < m; ++j) {
            const double* zj = zs[j].data();
            double dot = 0.0;
            for (std::size_t d = 0; d < zs[i].size(); ++d) dot += zi[d] * zj[d];
            double c = std::clamp(dot / (out.norms[i] * out.norms[j]), -1.0, 1.0);
            double p = 1.0 - std::acos(c) / std::numbers::pi;
            out.cosine[i][j] = out.cosine[j][i] = c;
            out.phi[i][j] = out.phi[j][i] = p;
        }
    }
    return out;
}

// Soft contrastive loss restricted to the support: views with positive
// strength. Everything in the loss lives on support x support, because
// m_ij = q_i . q_j needs both strengths positive, every entry of the
// normalizer a_i . omega is weighted by the partner's strength, and the
// per-row weight carries omega_i. Views outside the support get zero
// gradient.
//
//   loss = -(1/N) sum_i (omega_i / mu_i) sum_j m_ij log(a_ij / s_i)
//
// with mu_i = sum_j m_ij, s_i = sum_j a_ij omega_j and N = |support|. Rows
// with mu_i = 0 contribute zero loss and zero gradient.
inline ContrastiveLoss soft_contrastive_core(const std::vector<Embedding>& zs,
                                             const PairwiseSimilarity& sim,
                                             const std::vector<double>& omega,
                                             const std::vector<std::size_t>& support,
                                             const std::vector<double>& match_s, double tau) {
    const std::size_t m = zs.size();
    const std::size_t dims = m == 0 ? 0 : zs[0].size();
    const std::size_t ns = support.size();

    ContrastiveLoss out;
    out.embedding_grads.assign(m, Embedding(dims, 0.0));
    if (ns == 0) return out;
    const double inv_n = 1.0 / static_cast<double>(ns);

    std::vector<double> aff(ns * ns, 0.0), mu(ns, 0.0), s(ns, 0.0);
    for (std::size_t a = 0; a < ns; ++a) {
        const std::size_t i = support[a];
        for (std::size_t b = 0; b < ns; ++b) {
            if (a == b) continue;
            const std::size_t j = support[b];
            double e = std::exp(sim.phi[i][j] / tau);
            aff[a * ns + b] = e;
            mu[a] += match_s[a * ns + b];
            s[a] += e * omega[j];
        }
    }

    // A row with mu > 0 always has s > 0: some partner holds matching mass,
    // hence positive strength, hence a positive term in s.
    std::vector<double> row_weight(ns, 0.0);
    double acc = 0.0;
    for (std::size_t a = 0; a < ns; ++a) {
        if (mu[a] <= 0.0) continue;
        row_weight[a] = omega[support[a]] / mu[a];
        const double log_s = std::log(s[a]);
        double row = 0.0;
        for (std::size_t b = 0; b < ns; ++b) {
            double mv = match_s[a * ns + b];
            if (mv != 0.0) row += mv * (sim.phi[support[a]][support[b]] / tau - log_s);
        }
        acc += row_weight[a] * row;
    }
    out.loss = -inv_n * acc;

    // d loss / d phi_uv folds the two rows that read the shared phi_uv plus
    // the normalizer paths through s_u and s_v, then chains into both
    // embeddings through the cosine.
    const double scale = -inv_n / tau;
    for (std::size_t a = 0; a < ns; ++a) {
        const std::size_t u = support[a];
        const double wu = omega[u];
        const Embedding& zu = zs[u];
        for (std::size_t b = a + 1; b < ns; ++b) {
            const std::size_t v = support[b];
            double g = (row_weight[a] + row_weight[b]) * match_s[a * ns + b];
            double norm_term = 0.0;
            const double wv = omega[v];
            if (mu[a] > 0.0) norm_term += aff[a * ns + b] * wv * wu / s[a];
            if (mu[b] > 0.0) norm_term += aff[b * ns + a] * wu * wv / s[b];
            double dldphi = scale * (g - norm_term);
            if (dldphi == 0.0) continue;

            const Embedding& zv = zs[v];
            const double c = sim.cosine[u][v];
            const double denom = std::sqrt(std::max(1.0 - c * c, 1e-12));
            const double k_c = dldphi / (std::numbers::pi * denom);
            const double inv_nu = 1.0 / sim.norms[u], inv_nv = 1.0 / sim.norms[v];
            const double cross = k_c * inv_nu * inv_nv;
            const double self_u = k_c * c * inv_nu * inv_nu;
            const double self_v = k_c * c * inv_nv * inv_nv;
            double* gu = out.embedding_grads[u].data();
            double* gv = out.embedding_grads[v].data();
            for (std::size_t d = 0; d < dims; ++d) {
                gu[d] += cross * zv[d] - self_u * zu[d];
                gv[d] += cross * zu[d] - self_v * zv[d];
            }
        }
    }
    return out;
}

inline ContrastiveLoss soft_contrastive_with(const PairwiseSimilarity& sim,
                                             const ContrastiveBatch& batch, ContrastiveMode mode) {
    validate_batch(batch);
    const std::size_t n = batch.pair_count();
    const std::size_t m = 2 * n;
    const double tau = batch.temperature;

    std::vector<double> omega(m, 1.0);
    std::vector<std::size_t> support;
    if (mode == ContrastiveMode::simclr_pretrain) {
        support.resize(m);
        for (std::size_t i = 0; i < m; ++i) support[i] = i;
        std::vector<double> match_s(m * m, 0.0);
        for (std::size_t i = 0; i < m; ++i) match_s[i * m + (i + n) % m] = 1.0;
        return soft_contrastive_core(batch.embeddings, sim, omega, support, match_s, tau);
    }

    for (std::size_t i = 0; i < m; ++i) {
        omega[i] = strength(batch.credibilities[i % n]);
        if (omega[i] > 0.0) support.push_back(i);
    }
    const std::size_t ns = support.size();
    std::vector<double> match_s(ns * ns, 0.0);
    for (std::size_t a = 0; a < ns; ++a) {
        const auto& qa = batch.credibilities[support[a] % n];
        for (std::size_t b = a + 1; b < ns; ++b) {
            const auto& qb = batch.credibilities[support[b] % n];
            double dot = 0.0;
            for (std::size_t k = 0; k < qa.size(); ++k) dot += qa[k] * qb[k];
            match_s[a * ns + b] = match_s[b * ns + a] = dot;
        }
    }
    return soft_contrastive_core(batch.embeddings, sim, omega, support, match_s, tau);
}

} // namespace detail

inline MatchingMatrices build_matching(const ContrastiveBatch& batch) {
    detail::validate_batch(batch);
    const std::size_t n = batch.pair_count();
    const std::size_t m = 2 * n;
    auto q_of = [&](std::size_t i) -> const CredibilityVector& {
        return batch.credibilities[i % n];
    };

    MatchingMatrices out;
    out.match.assign(m, std::vector<double>(m, 0.0));
    out.affinity.assign(m, std::vector<double>(m, 0.0));
    out.strengths.resize(m);
    for (std::size_t i = 0; i < m; ++i) out.strengths[i] = strength(q_of(i));

    auto sim = detail::pairwise_similarity(batch.embeddings);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            if (i == j) continue; // M = M o (1 - I), same for A
            double dot = 0.0;
            const auto& qi = q_of(i);
            const auto& qj = q_of(j);
            for (std::size_t k = 0; k < qi.size(); ++k) dot += qi[k] * qj[k];
            out.match[i][j] = dot;
            out.affinity[i][j] = std::exp(sim.phi[i][j] / batch.temperature);
        }
    }
    return out;
}

// Soft supervised contrastive loss over the 2n expansion, averaged over the
// views with positive strength. Zero-credibility samples are invisible: no
// matching mass, no share of the normalizer, no share of the average. In
// simclr_pretrain mode the matching matrix becomes the transform-pair
// indicator and all strengths are one, which recovers the unsupervised
// special case; with one-hot credibilities the loss reduces to the
// fully-supervised contrastive loss.
inline ContrastiveLoss soft_contrastive_loss(const ContrastiveBatch& batch, ContrastiveMode mode) {
    detail::validate_batch(batch);
    auto sim = detail::pairwise_similarity(batch.embeddings);
    return detail::soft_contrastive_with(sim, batch, mode);
}

// Credibility-weighted categorical cross-entropy:
//   L = -(1/n) sum_i sum_k q_ik log softmax(g_i)_k
// A clipped q has at most one nonzero entry, so each sample contributes
// omega_i times its one-hot cross-entropy. Softmax uses max-subtraction.
inline ClassificationLoss soft_cross_entropy(const std::vector<std::vector<double>>& logits,
                                             const std::vector<CredibilityVector>& credibilities) {
    if (logits.size() != credibilities.size())
        throw std::invalid_argument("soft_cross_entropy: size mismatch");
    const std::size_t n = logits.size();
    ClassificationLoss out;
    out.logit_grads.assign(n, {});
    if (n == 0) return out;
    const double inv_n = 1.0 / static_cast<double>(n);

    for (std::size_t i = 0; i < n; ++i) {
        const auto& g = logits[i];
        const auto& q = credibilities[i];
        if (!q.clipped)
            throw std::invalid_argument("soft_cross_entropy: credibilities must be clipped");
        if (g.size() != q.size())
            throw std::invalid_argument("soft_cross_entropy: class count mismatch");

        double g_max = g[0];
        for (double v : g) g_max = std::max(g_max, v);
        double z = 0.0;
        std::vector<double> p(g.size());
        for (std::size_t k = 0; k < g.size(); ++k) {
            p[k] = std::exp(g[k] - g_max);
            z += p[k];
        }
        double log_z = std::log(z);
        double q_sum = 0.0;
        for (std::size_t k = 0; k < g.size(); ++k) {
            p[k] /= z;
            q_sum += q[k];
            if (q[k] != 0.0) out.loss -= inv_n * q[k] * ((g[k] - g_max) - log_z);
        }
        out.logit_grads[i].resize(g.size());
        for (std::size_t k = 0; k < g.size(); ++k)
            out.logit_grads[i][k] = inv_n * (p[k] * q_sum - q.values[k]);
    }
    return out;
}

} // namespace ccp
