// Independent reference implementations used as test oracles. Everything here
// is written naively and directly from the defining formulas, with no code
// shared with the library paths it checks.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <vector>

#include "ccp/core_math.hpp"
#include "ccp/model.hpp"

namespace oracles {

inline double angular(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    double c = dot / (std::sqrt(na) * std::sqrt(nb));
    c = std::clamp(c, -1.0, 1.0);
    return 1.0 - std::acos(c) / std::numbers::pi;
}

// Supervised contrastive loss (the "L_out" form averaged over all views):
//   L = (1/|V|) sum_i -(1/|P(i)|) sum_{p in P(i)} log( exp(phi_ip/t) / sum_{a != i} exp(phi_ia/t) )
// over 2n views where view i and i+n share sample i's class. Views whose
// class has no other member contribute zero.
inline double supcon_loss(const std::vector<std::vector<double>>& views,
                          const std::vector<int>& labels_per_sample, double tau) {
    const std::size_t n = labels_per_sample.size();
    const std::size_t m = views.size();
    std::vector<int> label(m);
    for (std::size_t i = 0; i < m; ++i) label[i] = labels_per_sample[i % n];

    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        std::vector<std::size_t> positives;
        for (std::size_t j = 0; j < m; ++j)
            if (j != i && label[j] == label[i]) positives.push_back(j);
        if (positives.empty()) continue;
        double denom = 0.0;
        for (std::size_t a = 0; a < m; ++a)
            if (a != i) denom += std::exp(angular(views[i], views[a]) / tau);
        double inner = 0.0;
        for (std::size_t p : positives)
            inner += std::log(std::exp(angular(views[i], views[p]) / tau) / denom);
        total += -inner / static_cast<double>(positives.size());
    }
    return total / static_cast<double>(m);
}

// Normalized-temperature contrastive loss for exactly 2 samples (4 views),
// written out term by term. View pairs: (0,2) and (1,3).
inline double ntxent_4view_loss(const std::vector<std::vector<double>>& v, double tau) {
    auto a = [&](int i, int j) { return std::exp(angular(v[i], v[j]) / tau); };
    double l0 = -std::log(a(0, 2) / (a(0, 1) + a(0, 2) + a(0, 3)));
    double l1 = -std::log(a(1, 3) / (a(1, 0) + a(1, 2) + a(1, 3)));
    double l2 = -std::log(a(2, 0) / (a(2, 0) + a(2, 1) + a(2, 3)));
    double l3 = -std::log(a(3, 1) / (a(3, 0) + a(3, 1) + a(3, 2)));
    return (l0 + l1 + l2 + l3) / 4.0;
}

// Standard categorical cross-entropy of a one-hot target.
inline double cross_entropy_onehot(const std::vector<double>& logits, std::size_t cls) {
    double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double g : logits) z += std::exp(g - m);
    return -(logits[cls] - m - std::log(z));
}

// Propagated credibility vectors computed with plain nested loops following
// the propagation procedure line by line.
inline std::vector<std::vector<double>>
propagate_double_loop(const std::vector<std::vector<double>>& views,
                      const std::vector<std::vector<double>>& clipped_q, // n entries
                      const std::vector<std::size_t>& unlabeled) {
    const std::size_t n = clipped_q.size();
    const std::size_t num_classes = clipped_q[0].size();
    auto q = [&](std::size_t i, std::size_t k) { return clipped_q[i % n][k]; };

    std::vector<std::vector<double>> out;
    for (std::size_t j : unlabeled) {
        std::vector<std::vector<double>> tilde;
        for (std::size_t v : {j, j + n}) {
            std::vector<double> psi(num_classes);
            for (std::size_t k = 0; k < num_classes; ++k) {
                double num = 0.0, den = 0.0;
                for (std::size_t i = 0; i < 2 * n; ++i) {
                    if (i == v) continue;
                    num += angular(views[v], views[i]) * q(i, k);
                    den += q(i, k);
                }
                psi[k] = num / den;
            }
            std::vector<double> adj(num_classes);
            for (std::size_t k = 0; k < num_classes; ++k) {
                double best_other = -std::numeric_limits<double>::infinity();
                for (std::size_t kk = 0; kk < num_classes; ++kk)
                    if (kk != k) best_other = std::max(best_other, psi[kk]);
                adj[k] = psi[k] - best_other;
            }
            tilde.push_back(adj);
        }
        std::vector<double> avg(num_classes);
        for (std::size_t k = 0; k < num_classes; ++k) avg[k] = 0.5 * (tilde[0][k] + tilde[1][k]);
        out.push_back(avg);
    }
    return out;
}

// Subsample percentage by brute force: for every candidate p, zero the bottom
// floor(p |U| / 100) vectors of a scratch copy (ordered by confidence, ties
// by index) and recompute the class-mass divergence from scratch.
inline int subsample_brute_force(const std::vector<std::vector<double>>& averaged,
                                 const std::vector<std::vector<double>>& clipped, int p_last,
                                 double d_max) {
    const std::size_t count = clipped.size();
    const std::size_t num_classes = clipped.empty() ? 0 : clipped[0].size();
    if (d_max <= 0.0 || count == 0) return 0;

    std::vector<double> conf(count);
    for (std::size_t u = 0; u < count; ++u)
        conf[u] = *std::max_element(averaged[u].begin(), averaged[u].end());
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return conf[a] < conf[b]; });

    auto distribution = [&](const std::vector<std::vector<double>>& qs, std::vector<double>& out) {
        out.assign(num_classes, 0.0);
        for (std::size_t u = 0; u < qs.size(); ++u)
            for (std::size_t k = 0; k < num_classes; ++k) out[k] += qs[u][k];
        double total = std::accumulate(out.begin(), out.end(), 0.0);
        if (total <= 0.0) return false;
        for (double& m : out) m /= total;
        return true;
    };

    std::vector<double> anchor;
    if (!distribution(clipped, anchor)) return 0;

    int best = 0;
    for (int p = 0; p < p_last; ++p) {
        std::vector<std::vector<double>> scratch = clipped;
        std::size_t resets = static_cast<std::size_t>(static_cast<long long>(p) * count / 100);
        for (std::size_t r = 0; r < resets; ++r)
            std::fill(scratch[order[r]].begin(), scratch[order[r]].end(), 0.0);
        std::vector<double> current;
        if (!distribution(scratch, current)) continue;
        double d = 0.0;
        bool infinite = false;
        for (std::size_t k = 0; k < num_classes; ++k) {
            if (current[k] <= 0.0) continue;
            if (anchor[k] <= 0.0) {
                infinite = true;
                break;
            }
            d += current[k] * std::log2(current[k] / anchor[k]);
        }
        if (!infinite && d < d_max) best = p;
    }
    return best;
}

// A second, independently structured forward pass over the same parameters.
inline std::vector<std::vector<double>> reference_forward(const ccp::Parameters& params,
                                                          const ccp::NetworkConfig& config,
                                                          const std::vector<double>& input,
                                                          bool want_logits) {
    auto act = [&](double x) {
        if (config.activation == ccp::Activation::relu) return std::max(0.0, x);
        return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
    };
    std::vector<double> h = input;
    for (const auto& layer : params.encoder) {
        std::vector<double> next(layer.out);
        for (std::size_t r = 0; r < layer.out; ++r) {
            double acc = layer.b[r];
            for (std::size_t c = 0; c < layer.in; ++c) acc += layer.w[r * layer.in + c] * h[c];
            next[r] = act(acc);
        }
        h = next;
    }
    const ccp::Linear& head = want_logits ? params.proj_g : params.proj_z;
    std::vector<double> out(head.out);
    for (std::size_t r = 0; r < head.out; ++r) {
        double acc = head.b[r];
        for (std::size_t c = 0; c < head.in; ++c) acc += head.w[r * head.in + c] * h[c];
        out[r] = acc;
    }
    return {h, out};
}

// Central-difference gradient of a scalar function of one coordinate vector.
template <typename F>
inline std::vector<double> central_difference(F&& f, std::vector<double> x, double step = 1e-6) {
    std::vector<double> grad(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        double keep = x[i];
        x[i] = keep + step;
        double up = f(x);
        x[i] = keep - step;
        double down = f(x);
        x[i] = keep;
        grad[i] = (up - down) / (2.0 * step);
    }
    return grad;
}

inline double max_rel_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
    double worst = 0.0;
    double scale = 1.0;
    for (double v : numeric) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < analytic.size(); ++i)
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / scale);
    return worst;
}

} // namespace oracles
