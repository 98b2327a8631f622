#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "ccp/losses.hpp"
#include "oracles.hpp"

using namespace ccp;

namespace {

std::vector<double> random_vec(std::mt19937_64& rng, std::size_t dims) {
    std::normal_distribution<double> gauss;
    std::vector<double> v(dims);
    for (auto& x : v) x = gauss(rng);
    return v;
}

// All-labeled batch: every sample gets a one-hot credibility for a random class.
ContrastiveBatch labeled_batch(std::mt19937_64& rng, std::size_t n, std::size_t num_classes,
                               std::vector<int>* labels_out = nullptr, std::size_t dims = 8) {
    std::uniform_int_distribution<int> cls(0, static_cast<int>(num_classes) - 1);
    ContrastiveBatch batch;
    batch.temperature = 0.1;
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = cls(rng);
        batch.credibilities.push_back(clip_credibility(
            CredibilityVector::clamped_label(num_classes, static_cast<std::size_t>(labels[i]))));
    }
    for (std::size_t i = 0; i < 2 * n; ++i) batch.embeddings.push_back(random_vec(rng, dims));
    if (labels_out) *labels_out = labels;
    return batch;
}

} // namespace

TEST_CASE("build_matching on small cases", "[losses]") {
    ContrastiveBatch batch;
    batch.temperature = 0.1;
    batch.credibilities = {clip_credibility(CredibilityVector::clamped_label(2, 0)),
                           clip_credibility(CredibilityVector::clamped_label(2, 0))};
    std::mt19937_64 rng(3);
    for (int i = 0; i < 4; ++i) batch.embeddings.push_back(random_vec(rng, 4));

    auto mm = build_matching(batch);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(mm.match[i][i] == 0.0);
        CHECK(mm.affinity[i][i] == 0.0);
        CHECK(mm.strengths[i] == 1.0);
        for (std::size_t j = 0; j < 4; ++j) {
            if (i == j) continue;
            CHECK(mm.match[i][j] == 1.0); // identical one-hots
            CHECK(mm.affinity[i][j] > 0.0);
            CHECK(mm.match[i][j] == mm.match[j][i]);
        }
    }

    // labeled one-hot against a zero-credibility sample
    batch.credibilities[1] = CredibilityVector::zeros(2);
    mm = build_matching(batch);
    CHECK(mm.match[0][1] == 0.0);
    CHECK(mm.match[1][0] == 0.0);
    CHECK(mm.match[0][3] == 0.0);

    // partial strengths multiply
    batch.credibilities[0] = CredibilityVector{{0.5, 0.0}, true};
    batch.credibilities[1] = CredibilityVector{{0.5, 0.0}, true};
    mm = build_matching(batch);
    CHECK(mm.match[0][1] == Catch::Approx(0.25).margin(1e-15));

    batch.temperature = 0.0;
    CHECK_THROWS_AS(build_matching(batch), std::domain_error);
}

TEST_CASE("all-labeled batches reduce to the supervised contrastive oracle", "[losses][oracle]") {
    std::mt19937_64 rng(101);
    int checked = 0;
    for (std::size_t n : {4u, 8u, 16u}) {
        for (std::size_t k : {2u, 5u}) {
            for (int rep = 0; rep < 34 && checked < 200; ++rep, ++checked) {
                std::vector<int> labels;
                auto batch = labeled_batch(rng, n, k, &labels);
                auto result = soft_contrastive_loss(batch, ContrastiveMode::credibility);
                double expected = oracles::supcon_loss(batch.embeddings, labels, batch.temperature);
                REQUIRE(std::abs(result.loss - expected) < 1e-9);
            }
        }
    }
    CHECK(checked == 200);
}

TEST_CASE("simclr-pretrain mode matches the 4-view enumeration oracle", "[losses][oracle]") {
    std::mt19937_64 rng(7);
    for (int rep = 0; rep < 50; ++rep) {
        ContrastiveBatch batch;
        batch.temperature = 0.1;
        batch.credibilities = {CredibilityVector::zeros(3), CredibilityVector::zeros(3)};
        for (int i = 0; i < 4; ++i) batch.embeddings.push_back(random_vec(rng, 5));
        auto result = soft_contrastive_loss(batch, ContrastiveMode::simclr_pretrain);
        double expected = oracles::ntxent_4view_loss(batch.embeddings, batch.temperature);
        REQUIRE(std::abs(result.loss - expected) < 1e-9);
    }
}

TEST_CASE("zero credibility everywhere gives zero loss and gradient", "[losses]") {
    std::mt19937_64 rng(13);
    ContrastiveBatch batch;
    batch.temperature = 0.1;
    for (int i = 0; i < 3; ++i) batch.credibilities.push_back(CredibilityVector::zeros(4));
    for (int i = 0; i < 6; ++i) batch.embeddings.push_back(random_vec(rng, 5));
    auto result = soft_contrastive_loss(batch, ContrastiveMode::credibility);
    CHECK(result.loss == 0.0);
    for (const auto& g : result.embedding_grads)
        for (double v : g) CHECK(v == 0.0);
}

TEST_CASE("zero-credibility samples exert no effect on the loss", "[losses]") {
    std::mt19937_64 rng(17);
    std::vector<int> labels;
    auto batch = labeled_batch(rng, 6, 3, &labels);
    double before = soft_contrastive_loss(batch, ContrastiveMode::credibility).loss;

    // add one sample with q = 0; its two views land at positions 6 and 13
    ContrastiveBatch extended;
    extended.temperature = batch.temperature;
    extended.credibilities = batch.credibilities;
    extended.credibilities.push_back(CredibilityVector::zeros(3));
    for (std::size_t i = 0; i < 6; ++i) extended.embeddings.push_back(batch.embeddings[i]);
    extended.embeddings.push_back(random_vec(rng, 8));
    for (std::size_t i = 6; i < 12; ++i) extended.embeddings.push_back(batch.embeddings[i]);
    extended.embeddings.push_back(random_vec(rng, 8));

    auto after = soft_contrastive_loss(extended, ContrastiveMode::credibility);
    CHECK(std::abs(after.loss - before) < 1e-12);
    for (double v : after.embedding_grads[6]) CHECK(v == 0.0);
    for (double v : after.embedding_grads[13]) CHECK(v == 0.0);
}

TEST_CASE("permuting samples leaves both losses unchanged", "[losses]") {
    std::mt19937_64 rng(29);
    std::vector<int> labels;
    auto batch = labeled_batch(rng, 5, 3, &labels);
    batch.credibilities[2] = CredibilityVector{{0.0, 0.4, 0.0}, true};
    batch.credibilities[4] = CredibilityVector::zeros(3);
    double base = soft_contrastive_loss(batch, ContrastiveMode::credibility).loss;

    std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
    ContrastiveBatch permuted;
    permuted.temperature = batch.temperature;
    for (std::size_t i : perm) {
        permuted.credibilities.push_back(batch.credibilities[i]);
        permuted.embeddings.push_back(batch.embeddings[i]);
    }
    // keep pairs aligned: the twin block is permuted the same way
    for (std::size_t i : perm) permuted.embeddings.push_back(batch.embeddings[i + 5]);
    double shuffled = soft_contrastive_loss(permuted, ContrastiveMode::credibility).loss;
    CHECK(std::abs(shuffled - base) < 1e-12);

    std::vector<std::vector<double>> logits;
    for (int i = 0; i < 5; ++i) logits.push_back(random_vec(rng, 3));
    double cls = soft_cross_entropy(logits, batch.credibilities).loss;
    std::vector<std::vector<double>> logits_p;
    std::vector<CredibilityVector> creds_p;
    for (std::size_t i : perm) {
        logits_p.push_back(logits[i]);
        creds_p.push_back(batch.credibilities[i]);
    }
    CHECK(std::abs(soft_cross_entropy(logits_p, creds_p).loss - cls) < 1e-12);
}

TEST_CASE("soft contrastive gradient matches central differences", "[losses][gradcheck]") {
    std::mt19937_64 rng(31);
    for (int rep = 0; rep < 10; ++rep) {
        std::vector<int> labels;
        auto batch = labeled_batch(rng, 4, 3, &labels, 6);
        batch.credibilities[1] = CredibilityVector{{0.0, 0.6, 0.0}, true};
        batch.credibilities[3] = CredibilityVector::zeros(3);
        auto mode = rep % 2 == 0 ? ContrastiveMode::credibility : ContrastiveMode::simclr_pretrain;
        auto analytic = soft_contrastive_loss(batch, mode);

        for (std::size_t vi = 0; vi < batch.embeddings.size(); ++vi) {
            auto numeric = oracles::central_difference(
                [&](const std::vector<double>& x) {
                    ContrastiveBatch probe = batch;
                    probe.embeddings[vi] = x;
                    return soft_contrastive_loss(probe, mode).loss;
                },
                batch.embeddings[vi]);
            REQUIRE(oracles::max_rel_error(analytic.embedding_grads[vi], numeric) < 1e-5);
        }
    }
}

TEST_CASE("soft cross entropy against the one-hot oracle", "[losses][oracle]") {
    std::mt19937_64 rng(37);
    for (int rep = 0; rep < 50; ++rep) {
        auto logits = random_vec(rng, 4);
        std::size_t cls = static_cast<std::size_t>(rep % 4);
        auto q = clip_credibility(CredibilityVector::clamped_label(4, cls));
        auto loss = soft_cross_entropy({logits}, {q});
        CHECK(loss.loss == Catch::Approx(oracles::cross_entropy_onehot(logits, cls)).margin(1e-12));

        // zero vector contributes nothing
        auto zero = soft_cross_entropy({logits}, {CredibilityVector::zeros(4)});
        CHECK(zero.loss == 0.0);

        // linear in the single nonzero credibility entry
        CredibilityVector half = CredibilityVector::zeros(4);
        half.values[cls] = 0.5;
        auto half_loss = soft_cross_entropy({logits}, {half});
        CHECK(half_loss.loss == Catch::Approx(0.5 * loss.loss).margin(1e-12));
    }
}

TEST_CASE("soft cross entropy gradient matches central differences", "[losses][gradcheck]") {
    std::mt19937_64 rng(41);
    for (int rep = 0; rep < 10; ++rep) {
        std::vector<std::vector<double>> logits;
        std::vector<CredibilityVector> creds;
        for (int i = 0; i < 5; ++i) {
            logits.push_back(random_vec(rng, 4));
            CredibilityVector q = CredibilityVector::zeros(4);
            if (i != 2) q.values[static_cast<std::size_t>(i) % 4] = 0.2 + 0.2 * i;
            creds.push_back(q);
        }
        auto analytic = soft_cross_entropy(logits, creds);
        for (std::size_t i = 0; i < logits.size(); ++i) {
            auto numeric = oracles::central_difference(
                [&](const std::vector<double>& x) {
                    auto probe = logits;
                    probe[i] = x;
                    return soft_cross_entropy(probe, creds).loss;
                },
                logits[i]);
            REQUIRE(oracles::max_rel_error(analytic.logit_grads[i], numeric) < 1e-5);
        }
    }
}

TEST_CASE("stronger credibility strictly increases an imperfect sample's loss share", "[losses]") {
    std::vector<double> logits = {0.3, 1.1, -0.4};
    double previous = 0.0;
    for (double w : {0.1, 0.3, 0.5, 0.7, 0.9}) {
        CredibilityVector q = CredibilityVector::zeros(3);
        q.values[0] = w; // class 0 is not the argmax of the logits
        double loss = soft_cross_entropy({logits}, {q}).loss;
        CHECK(loss > previous);
        previous = loss;
    }
}
