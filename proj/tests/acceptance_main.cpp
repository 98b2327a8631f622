// Acceptance suite: runs every acceptance criterion at its stated tolerance
// and prints one PASS/FAIL line per criterion. Exits nonzero if any fail.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ccp/config.hpp"
#include "ccp/engine.hpp"
#include "ccp/report.hpp"
#include "oracles.hpp"

using namespace ccp;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
    std::printf("%s criterion %2d: %s\n", pass ? "PASS" : "FAIL", criterion, detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<double> random_embedding(std::mt19937_64& rng, std::size_t dims) {
    std::normal_distribution<double> gauss;
    std::vector<double> v(dims);
    for (auto& x : v) x = gauss(rng);
    return v;
}

// --------------------------------------------------------------------------
// 1: L_SSC equals the supervised contrastive oracle on 200 random all-labeled
//    batches and the 4-view normalized-temperature oracle in pretrain mode.
// --------------------------------------------------------------------------
void criterion_1() {
    auto start = Clock::now();
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> cls2(0, 1), cls5(0, 4);

    double worst = 0.0;
    int batches = 0;
    for (std::size_t n : {4u, 8u, 16u}) {
        for (std::size_t k : {2u, 5u}) {
            for (int rep = 0; rep < 34 && batches < 200; ++rep, ++batches) {
                ContrastiveBatch batch;
                batch.temperature = 0.1;
                std::vector<int> labels(n);
                for (std::size_t i = 0; i < n; ++i) {
                    labels[i] = k == 2 ? cls2(rng) : cls5(rng);
                    batch.credibilities.push_back(clip_credibility(CredibilityVector::clamped_label(
                        k, static_cast<std::size_t>(labels[i]))));
                }
                for (std::size_t i = 0; i < 2 * n; ++i)
                    batch.embeddings.push_back(random_embedding(rng, 8));
                double ours = soft_contrastive_loss(batch, ContrastiveMode::credibility).loss;
                double oracle = oracles::supcon_loss(batch.embeddings, labels, batch.temperature);
                worst = std::max(worst, std::abs(ours - oracle));
            }
        }
    }

    double worst_simclr = 0.0;
    for (int rep = 0; rep < 50; ++rep) {
        ContrastiveBatch batch;
        batch.temperature = 0.1;
        batch.credibilities = {CredibilityVector::zeros(2), CredibilityVector::zeros(2)};
        for (int i = 0; i < 4; ++i) batch.embeddings.push_back(random_embedding(rng, 6));
        double ours = soft_contrastive_loss(batch, ContrastiveMode::simclr_pretrain).loss;
        double oracle = oracles::ntxent_4view_loss(batch.embeddings, batch.temperature);
        worst_simclr = std::max(worst_simclr, std::abs(ours - oracle));
    }

    double elapsed = seconds_since(start);
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "loss-oracle equivalence: supcon max |diff| %.3g, simclr max |diff| %.3g over %d "
                  "batches (%.1fs)",
                  worst, worst_simclr, batches, elapsed);
    report(1, worst < 1e-9 && worst_simclr < 1e-9 && batches == 200 && elapsed < 10.0, buf);
}

// --------------------------------------------------------------------------
// 2: analytic gradients match central finite differences (step 1e-6) with
//    relative error < 1e-5 on 50 instances each.
// --------------------------------------------------------------------------
void criterion_2() {
    auto start = Clock::now();
    std::mt19937_64 rng(4096);
    std::uniform_int_distribution<int> cls(0, 2);
    const double step = 1e-6;
    double worst_ssc = 0.0, worst_cls = 0.0, worst_model = 0.0;

    for (int instance = 0; instance < 50; ++instance) {
        ContrastiveBatch batch;
        batch.temperature = 0.1;
        const std::size_t n = 3;
        for (std::size_t i = 0; i < n; ++i) {
            CredibilityVector q = CredibilityVector::zeros(3);
            if (i != 1) q.values[static_cast<std::size_t>(cls(rng))] = 0.3 + 0.2 * i;
            batch.credibilities.push_back(q);
        }
        for (std::size_t i = 0; i < 2 * n; ++i) batch.embeddings.push_back(random_embedding(rng, 5));
        auto mode = instance % 2 == 0 ? ContrastiveMode::credibility : ContrastiveMode::simclr_pretrain;
        auto analytic = soft_contrastive_loss(batch, mode);
        for (std::size_t vi = 0; vi < batch.embeddings.size(); ++vi) {
            auto numeric = oracles::central_difference(
                [&](const std::vector<double>& x) {
                    ContrastiveBatch probe = batch;
                    probe.embeddings[vi] = x;
                    return soft_contrastive_loss(probe, mode).loss;
                },
                batch.embeddings[vi], step);
            worst_ssc =
                std::max(worst_ssc, oracles::max_rel_error(analytic.embedding_grads[vi], numeric));
        }
    }

    for (int instance = 0; instance < 50; ++instance) {
        std::vector<std::vector<double>> logits;
        std::vector<CredibilityVector> creds;
        for (int i = 0; i < 4; ++i) {
            logits.push_back(random_embedding(rng, 3));
            CredibilityVector q = CredibilityVector::zeros(3);
            if (i != 0) q.values[static_cast<std::size_t>(cls(rng))] = 0.25 * i;
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
                logits[i], step);
            worst_cls = std::max(worst_cls, oracles::max_rel_error(analytic.logit_grads[i], numeric));
        }
    }

    int model_instances = 0;
    for (int attempt = 0; model_instances < 50 && attempt < 500; ++attempt) {
        NetworkConfig config;
        config.input_dim = 4;
        config.hidden_layers = {6, 5};
        config.embed_dim = 3;
        config.num_classes = 3;
        config.activation = attempt % 2 == 0 ? Activation::relu : Activation::gelu;
        config.weight_decay = 0.0005;
        ModelState model = make_model(config, 1000 + static_cast<std::uint64_t>(attempt));
        std::vector<std::vector<double>> xs = {random_embedding(rng, 4), random_embedding(rng, 4)};
        std::vector<std::vector<double>> rz(2, std::vector<double>(3));
        std::vector<std::vector<double>> rg(2, std::vector<double>(3));
        for (auto& row : rz) row = random_embedding(rng, 3);
        for (auto& row : rg) row = random_embedding(rng, 3);

        // Central differences are invalid across the relu kink; redraw when a
        // preactivation sits inside the perturbation band.
        if (config.activation == Activation::relu) {
            auto probe_fwd = forward(model.params, config, xs);
            double nearest = 1e300;
            for (const auto& layer : probe_fwd.preactivations)
                for (const auto& row : layer)
                    for (double a : row) nearest = std::min(nearest, std::abs(a));
            if (nearest < 1e-4) continue;
        }
        ++model_instances;

        auto objective = [&](const Parameters& p) {
            auto fwd = forward(p, config, xs);
            double acc = 0.0;
            for (std::size_t i = 0; i < xs.size(); ++i)
                for (std::size_t d = 0; d < 3; ++d)
                    acc += rz[i][d] * fwd.embeddings[i][d] + rg[i][d] * fwd.logits[i][d];
            auto l2 = [](const Linear& l) {
                double s = 0.0;
                for (double w : l.w) s += w * w;
                return s;
            };
            for (const auto& l : p.encoder) acc += config.weight_decay * l2(l);
            acc += config.weight_decay * (l2(p.proj_z) + l2(p.proj_g));
            return acc;
        };

        auto fwd = forward(model.params, config, xs);
        auto grads = backward(model.params, config, fwd, rz, rg);
        std::vector<double> flat;
        std::vector<double*> view;
        auto collect = [&](Linear& pl, const Linear& gl) {
            for (std::size_t i = 0; i < pl.w.size(); ++i) {
                view.push_back(&pl.w[i]);
                flat.push_back(gl.w[i]);
            }
            for (std::size_t i = 0; i < pl.b.size(); ++i) {
                view.push_back(&pl.b[i]);
                flat.push_back(gl.b[i]);
            }
        };
        Parameters probe = model.params;
        for (std::size_t li = 0; li < probe.encoder.size(); ++li)
            collect(probe.encoder[li], grads.encoder[li]);
        collect(probe.proj_z, grads.proj_z);
        collect(probe.proj_g, grads.proj_g);

        double scale = 1.0;
        for (double g : flat) scale = std::max(scale, std::abs(g));
        for (std::size_t i = 0; i < view.size(); ++i) {
            double keep = *view[i];
            *view[i] = keep + step;
            double up = objective(probe);
            *view[i] = keep - step;
            double down = objective(probe);
            *view[i] = keep;
            worst_model = std::max(worst_model, std::abs(flat[i] - (up - down) / (2 * step)) / scale);
        }
    }

    double elapsed = seconds_since(start);
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "gradient checks: L_SSC %.3g, L_CLS %.3g, model backward %.3g rel err over "
                  "50+50+%d instances (%.1fs)",
                  worst_ssc, worst_cls, worst_model, model_instances, elapsed);
    report(2,
           worst_ssc < 1e-5 && worst_cls < 1e-5 && worst_model < 1e-5 && model_instances == 50 &&
               elapsed < 30.0,
           buf);
}

// --------------------------------------------------------------------------
// 3: choose_subsample equals brute force on 100 random instances.
// --------------------------------------------------------------------------
void criterion_3() {
    auto start = Clock::now();
    std::mt19937_64 rng(8192);
    std::uniform_int_distribution<int> usize(2, 64), ksize(2, 4), plast(1, 100);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    int mismatches = 0, instances = 0;
    while (instances < 100) {
        const std::size_t count = static_cast<std::size_t>(usize(rng));
        const std::size_t k = static_cast<std::size_t>(ksize(rng));
        std::vector<CredibilityVector> averaged, clipped;
        std::vector<std::vector<double>> avg_plain, clip_plain;
        bool any_mass = false;
        for (std::size_t u = 0; u < count; ++u) {
            std::vector<double> a(k);
            for (auto& x : a) x = 2.0 * unit(rng) - 1.0;
            if (u > 0 && unit(rng) < 0.15) a = avg_plain.back();
            averaged.push_back({a, false});
            avg_plain.push_back(a);
            CredibilityVector q = CredibilityVector::zeros(k);
            if (unit(rng) < 0.85) {
                q.values[static_cast<std::size_t>(unit(rng) * k) % k] = unit(rng);
                any_mass = true;
            }
            clipped.push_back(q);
            clip_plain.push_back(q.values);
        }
        if (!any_mass) continue;
        ++instances;
        int p_last = plast(rng);
        double d_max = 0.2 * unit(rng);
        auto decision = choose_subsample(averaged, clipped, p_last, d_max);
        int expected = oracles::subsample_brute_force(avg_plain, clip_plain, p_last, d_max);
        if (decision.percent != expected) ++mismatches;
    }
    double elapsed = seconds_since(start);
    char buf[160];
    std::snprintf(buf, sizeof buf, "subsample brute-force equivalence: %d/100 mismatches (%.2fs)",
                  mismatches, elapsed);
    report(3, mismatches == 0 && elapsed < 5.0, buf);
}

// --------------------------------------------------------------------------
// 4: credibility property suite over 1e4 random vectors plus the worked
//    (0.99, 0.98) example.
// --------------------------------------------------------------------------
void criterion_4() {
    std::mt19937_64 rng(333);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_int_distribution<int> ksize(2, 6);
    bool ok = true;

    auto fig3 = credibility_adjust({0.99, 0.98});
    ok = ok && fig3.values[0] == 0.99 - 0.98 && fig3.values[1] == 0.98 - 0.99;
    auto fig3_clipped = clip_credibility(fig3);
    ok = ok && fig3_clipped.values[0] == 0.99 - 0.98 && fig3_clipped.values[1] == 0.0;

    for (int trial = 0; trial < 10000 && ok; ++trial) {
        int k = ksize(rng);
        std::vector<double> psi(k);
        for (auto& x : psi) x = unit(rng);
        auto adjusted = credibility_adjust(psi);

        double c = unit(rng);
        std::vector<double> shifted = psi;
        for (auto& x : shifted) x += c;
        auto adjusted2 = credibility_adjust(shifted);
        for (int i = 0; i < k; ++i)
            ok = ok && std::abs(adjusted.values[i] - adjusted2.values[i]) < 1e-12;

        std::size_t arg = 0;
        for (int i = 1; i < k; ++i)
            if (psi[i] > psi[arg]) arg = static_cast<std::size_t>(i);
        int positives = 0;
        for (int i = 0; i < k; ++i)
            if (adjusted.values[i] > 0.0) {
                ++positives;
                ok = ok && static_cast<std::size_t>(i) == arg;
            }
        ok = ok && positives <= 1;

        auto clipped = clip_credibility(adjusted);
        int nonzero = 0;
        for (int i = 0; i < k; ++i)
            if (clipped.values[i] != 0.0) ++nonzero;
        ok = ok && nonzero <= 1;
    }
    report(4, ok, ok ? "credibility properties hold over 10000 vectors and the worked example"
                     : "credibility property violated");
}

// --------------------------------------------------------------------------
// 5: propagation equals the naive double loop on 100 random batches.
// --------------------------------------------------------------------------
void criterion_5() {
    std::mt19937_64 rng(555);
    std::normal_distribution<double> gauss;
    std::uniform_int_distribution<int> nsize(3, 16), ksize(2, 4);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = static_cast<std::size_t>(nsize(rng));
        const std::size_t k = static_cast<std::size_t>(ksize(rng));
        std::vector<CredibilityVector> creds;
        std::vector<std::vector<double>> plain;
        for (std::size_t i = 0; i < n; ++i) {
            CredibilityVector q = CredibilityVector::zeros(k);
            if (i < k)
                q.values[i] = 1.0;
            else if (unit(rng) < 0.7)
                q.values[static_cast<std::size_t>(unit(rng) * k) % k] = unit(rng);
            creds.push_back(q);
            plain.push_back(q.values);
        }
        std::vector<Embedding> views(2 * n);
        for (auto& v : views) {
            v.resize(5);
            for (auto& x : v) x = gauss(rng);
        }
        std::vector<std::size_t> targets;
        for (std::size_t i = k; i < n; ++i) targets.push_back(i);
        if (targets.empty()) {
            --trial;
            continue;
        }
        auto fast = propagate_batch(views, creds, targets);
        auto reference = oracles::propagate_double_loop(views, plain, targets);
        for (std::size_t t = 0; t < fast.size(); ++t)
            for (std::size_t c = 0; c < k; ++c)
                worst = std::max(worst,
                                 std::abs(fast[t].second.values[c] - reference[t][c]));
    }
    char buf[128];
    std::snprintf(buf, sizeof buf, "propagation vs double-loop reference: max |diff| %.3g", worst);
    report(5, worst < 1e-10, buf);
}

// --------------------------------------------------------------------------
// 6-8: the scenario grid. One sweep provides the reliability claim (6), the
//      iteration trend (7) and the strength separation (8).
// --------------------------------------------------------------------------
struct SweepOutcome {
    AggregateReport report;
    std::string out_dir;
    double elapsed = 0.0;
};

SweepOutcome run_acceptance_sweep() {
    auto start = Clock::now();
    ExperimentConfig cfg; // desk-scale defaults: K=4, d=16, seeds {1,2,3}
    cfg.out = (std::filesystem::temp_directory_path() / "ccp_acceptance_sweep").string();
    std::filesystem::remove_all(cfg.out);
    SweepOutcome outcome;
    outcome.report = run_sweep(cfg, full_grid(), sweep_thread_count());
    outcome.out_dir = cfg.out;
    outcome.elapsed = seconds_since(start);
    return outcome;
}

void criterion_6(const SweepOutcome& sweep) {
    bool ok = true;
    std::string detail;
    for (const auto& cell : sweep.report.cells) {
        if (cell.failed) {
            ok = false;
            detail += cell.cell.scenario + " s" + std::to_string(cell.cell.severity) + " failed; ";
            continue;
        }
        double margin = cell.ccp_median() - cell.baseline_median();
        bool strict = cell.cell.scenario == "base" || cell.cell.scenario == "few-label";
        bool cell_ok = strict ? margin > 0.0 : margin >= -0.01;
        if (!cell_ok) {
            ok = false;
            char buf[128];
            std::snprintf(buf, sizeof buf, "%s s%d margin %+0.4f; ", cell.cell.scenario.c_str(),
                          cell.cell.severity, margin);
            detail += buf;
        }
    }
    bool in_time = sweep.elapsed < 1800.0;
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "reliability grid: %zu cells x 3 seeds, %s within margins, %.0fs %s budget%s%s",
                  sweep.report.cells.size(), ok ? "all" : "NOT all", sweep.elapsed,
                  in_time ? "within" : "OVER", detail.empty() ? "" : " -- ", detail.c_str());
    report(6, ok && in_time, buf);
}

void criterion_7(const SweepOutcome& sweep) {
    bool ok = true;
    std::string detail;
    for (const auto& cell : sweep.report.cells) {
        if (cell.cell.scenario != "base" && cell.cell.scenario != "noisy-label") continue;
        if (cell.failed) {
            ok = false;
            continue;
        }
        for (std::uint64_t seed : cell.seeds) {
            auto rows = read_metrics_csv(sweep.out_dir + "/" + cell_dir_name(cell.cell, seed) +
                                         "/metrics.csv");
            if (rows.empty()) {
                ok = false;
                continue;
            }
            for (std::size_t m = 1; m < rows.size(); ++m) {
                if (rows[m].pseudo_label_accuracy <
                    rows[m - 1].pseudo_label_accuracy - 0.02) {
                    ok = false;
                    char buf[128];
                    std::snprintf(buf, sizeof buf, "%s seed %llu iter %d drop %.3f->%.3f; ",
                                  cell.cell.scenario.c_str(),
                                  static_cast<unsigned long long>(seed), rows[m].iteration,
                                  rows[m - 1].pseudo_label_accuracy, rows[m].pseudo_label_accuracy);
                    detail += buf;
                }
            }
            if (rows.back().pseudo_label_accuracy < rows.front().pseudo_label_accuracy) {
                ok = false;
                detail += cell.cell.scenario + " seed " + std::to_string(seed) + " final<first; ";
            }
        }
    }
    report(7, ok,
           "iteration trend (base and noisy-label): no drop beyond 2pp, final >= first" +
               (detail.empty() ? std::string() : " -- " + detail));
}

void criterion_8(const SweepOutcome& sweep) {
    std::vector<double> separations;
    bool enough_iterations = true;
    for (const auto& cell : sweep.report.cells) {
        if (cell.cell.scenario != "base" || cell.failed) continue;
        for (std::uint64_t seed : cell.seeds) {
            auto rows = read_metrics_csv(sweep.out_dir + "/" + cell_dir_name(cell.cell, seed) +
                                         "/metrics.csv");
            if (rows.size() < 3) {
                enough_iterations = false;
                continue;
            }
            separations.push_back(rows.back().mean_strength_correct -
                                  rows.back().mean_strength_incorrect);
        }
    }
    double med = median_of(separations);
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "strength separation on base case after >=3 iterations: median %.3f (need >= 0.1)",
                  med);
    report(8, enough_iterations && separations.size() == 3 && med >= 0.1, buf);
}

// --------------------------------------------------------------------------
// 9: variance direction of epoch averaging on the noisy-label scenario.
// --------------------------------------------------------------------------
void criterion_9() {
    ExperimentConfig cfg;
    cfg.scenario = "noisy-label";
    cfg.severity = 2;
    cfg.seed = 1;
    auto ds = generate_scenario(to_scenario_spec(cfg, cfg.seed));
    auto rc = to_run_config(cfg, cfg.seed);
    auto summary = replicate_variance_summary(ds, rc, 10, 12);
    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "averaged-vs-single-epoch variance: %.1f%% of %zu cells satisfied "
                  "(%zu degenerate), need >= 90%%",
                  100.0 * summary.fraction_satisfied(), summary.cells, summary.degenerate);
    report(9, summary.fraction_satisfied() >= 0.9, buf);
}

// --------------------------------------------------------------------------
// 10: subsampling is no worse than no subsampling at few-label severity 3.
// --------------------------------------------------------------------------
void criterion_10() {
    std::vector<double> with_subsample, without_subsample;
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        for (bool subsample : {true, false}) {
            ExperimentConfig cfg;
            cfg.scenario = "few-label";
            cfg.severity = 3;
            cfg.seed = seed;
            cfg.subsampling = subsample;
            cfg.initial_d_max = 0.01;
            auto ds = generate_scenario(to_scenario_spec(cfg, seed));
            Engine engine(ds, to_run_config(cfg, seed));
            engine.warmup_pretrain();
            auto iterations = engine.run_ccp();
            double final_acc = iterations.back().pseudo_label_accuracy;
            (subsample ? with_subsample : without_subsample).push_back(final_acc);
        }
    }
    double med_on = median_of(with_subsample);
    double med_off = median_of(without_subsample);
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "subsampling ablation at few-label s3: median %.4f with vs %.4f without "
                  "(need >= without - 0.005)",
                  med_on, med_off);
    report(10, med_on >= med_off - 0.005, buf);
}

} // namespace

int main() {
    auto start = Clock::now();
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();

    std::printf("-- running the scenario grid (5 scenarios x 3 severities + base, 3 seeds) --\n");
    std::fflush(stdout);
    SweepOutcome sweep = run_acceptance_sweep();
    criterion_6(sweep);
    criterion_7(sweep);
    criterion_8(sweep);

    criterion_9();
    criterion_10();

    std::printf("acceptance finished in %.0fs: %s\n", seconds_since(start),
                g_failures == 0 ? "all criteria passed" : "FAILURES present");
    return g_failures == 0 ? 0 : 1;
}
