#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "ccp/core_math.hpp"
#include "ccp/losses.hpp"
#include "ccp/model.hpp"
#include "ccp/propagation.hpp"
#include "ccp/scenarios.hpp"
#include "ccp/subsampling.hpp"

namespace ccp {

struct RunConfig {
    // network (input_dim and num_classes are taken from the dataset)
    std::vector<std::size_t> hidden_layers = {64, 64, 32};
    std::size_t embed_dim = 16;
    Activation activation = Activation::relu;
    double weight_decay = 0.0005;

    // optimizer
    double learning_rate = 0.06;
    double first_iteration_learning_rate = 0.0006;
    double momentum = 0.9;
    bool nesterov = true;

    // CCP iterations
    std::size_t batch_size = 64; // unlabeled slots per balanced batch
    std::size_t class_guarantee = 4; // min nonzero-credibility samples per class per batch
    std::size_t max_epochs_per_iteration = 40;
    std::size_t first_iteration_epochs = 50;
    std::size_t max_iterations = 12;
    std::size_t min_iterations = 3;
    double ema_loss_decay = 0.99;
    std::size_t early_stop_patience = 5;
    double temperature = 0.1;
    bool trusted_labels = true;
    bool pretrain = true;
    std::size_t warmup_epochs = 30;
    bool subsampling = true;
    double initial_d_max = 0.01;
    double mass_plateau_tolerance = 0.005;
    bool single_iteration = false;
    bool reset_before_classifier = true;

    // classifier phase
    std::size_t classifier_epochs = 200;
    std::size_t classifier_batch_size = 64;
    bool classifier_joint_loss = true; // false: minimize L_CLS alone
    double ema_model_decay = 0.999;

    std::vector<TransformSpec> transforms = default_training_transforms();
    std::uint64_t seed = 1;
    std::size_t trace_samples = 0;
    bool verbose = false;
};

struct IterationMetrics {
    int iteration = 0;
    int epochs_run = 0;
    double pseudo_label_accuracy = 0.0;
    double mean_strength_correct = 0.0;
    double mean_strength_incorrect = 0.0;
    int p_chosen = 0;
    double d_max = 0.0; // bound in force for this iteration's subsample step
    double gamma = 0.0;
    double ema_loss_final = 0.0;
};

struct CCPState {
    std::vector<CredibilityVector> master_q;    // clipped, aligned with train
    std::vector<CredibilityVector> pre_reset_q; // last iteration's labels before subsampling
    std::vector<CredibilityVector> last_scaled_average; // q-hat of the last iteration, refine order
    std::vector<std::vector<double>> accum_sum; // running sums of stored q-tilde
    std::vector<std::size_t> accum_count;
    int p_last = 100;
    double d_max = 0.01;
    int iteration = 0;
};

struct TraceRow {
    std::size_t sample = 0;
    int iteration = 0;
    int epoch = 0;
    std::vector<double> q; // epoch-mean propagated credibility
};

struct PipelineResult {
    std::string scenario;
    int severity = 0;
    std::uint64_t seed = 0;
    std::vector<IterationMetrics> iterations;
    double ccp_test_accuracy = std::numeric_limits<double>::quiet_NaN();
    double baseline_test_accuracy = std::numeric_limits<double>::quiet_NaN();
    bool ran_ccp = false;
};

inline double evaluate_accuracy(const Parameters& params, const NetworkConfig& config,
                                const std::vector<SampleRecord>& samples) {
    if (samples.empty()) return 0.0;
    std::vector<std::vector<double>> inputs;
    inputs.reserve(samples.size());
    for (const auto& s : samples) inputs.push_back(s.features);
    ForwardResult fwd = forward(params, config, inputs);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& g = fwd.logits[i];
        std::size_t arg = 0;
        for (std::size_t k = 1; k < g.size(); ++k)
            if (g[k] > g[arg]) arg = k;
        if (samples[i].true_label == static_cast<int>(arg)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(samples.size());
}

class Engine {
public:
    Engine(ScenarioDataset dataset, RunConfig config)
        : ds_(std::move(dataset)), cfg_(std::move(config)) {
        if (ds_.train.empty()) throw InputError("engine: empty training set");
        net_.input_dim = ds_.feature_dim;
        net_.hidden_layers = cfg_.hidden_layers;
        net_.embed_dim = cfg_.embed_dim;
        net_.num_classes = ds_.num_classes;
        net_.activation = cfg_.activation;
        net_.weight_decay = cfg_.weight_decay;
        model_ = make_model(net_, cfg_.seed);
        take_snapshot(model_);

        for (std::size_t i = 0; i < ds_.train.size(); ++i) {
            if (ds_.train[i].given_label < 0 || !cfg_.trusted_labels) refine_.push_back(i);
        }
        // In the untrusted regime every label is refined; otherwise only the
        // unlabeled pool is.
        if (refine_.empty()) throw ContractError("engine: nothing to refine (no unlabeled data)");

        state_.master_q.reserve(ds_.train.size());
        for (const auto& s : ds_.train) {
            if (s.given_label >= 0)
                state_.master_q.push_back(clip_credibility(CredibilityVector::clamped_label(
                    ds_.num_classes, static_cast<std::size_t>(s.given_label))));
            else
                state_.master_q.push_back(CredibilityVector::zeros(ds_.num_classes));
        }
        state_.d_max = cfg_.initial_d_max;
        state_.p_last = 100;

        trace_set_.assign(ds_.train.size(), false);
        for (std::size_t i = 0; i < cfg_.trace_samples && i < refine_.size(); ++i)
            trace_set_[refine_[i]] = true;

        trusted_mask_.assign(ds_.train.size(), false);
        if (cfg_.trusted_labels)
            for (std::size_t i = 0; i < ds_.train.size(); ++i)
                trusted_mask_[i] = ds_.train[i].given_label >= 0;
    }

    const ScenarioDataset& dataset() const { return ds_; }
    const RunConfig& config() const { return cfg_; }
    const NetworkConfig& network() const { return net_; }
    const CCPState& state() const { return state_; }
    ModelState& model() { return model_; }
    const std::vector<std::size_t>& refine_indices() const { return refine_; }
    const std::vector<TraceRow>& trace_rows() const {
        if (cfg_.trace_samples == 0) throw std::logic_error("tracing is disabled");
        return traces_;
    }

    // Continue from another engine's model and pseudo-label state; used by
    // replicated-iteration diagnostics.
    void restore(const ModelState& m, const CCPState& s) {
        model_ = m;
        state_ = s;
    }

    // SimCLR warmup over all samples; the resulting parameters become the
    // snapshot that every CCP iteration resets to. Returns the mean loss per
    // warmup epoch.
    std::vector<double> warmup_pretrain() {
        if (!cfg_.pretrain || cfg_.warmup_epochs == 0) return {};
        Rng rng = make_stream(cfg_.seed, stream_tag::warmup);
        std::vector<std::size_t> all(ds_.train.size());
        std::iota(all.begin(), all.end(), 0);
        const std::size_t per = std::max<std::size_t>(1, std::min(cfg_.batch_size, all.size()));
        const std::size_t batches = (all.size() + per - 1) / per;
        auto opt = SgdOptimizer::make(model_.params, cfg_.learning_rate,
                                      static_cast<long>(cfg_.warmup_epochs * batches),
                                      cfg_.momentum, cfg_.nesterov);
        std::vector<double> epoch_losses;
        for (std::size_t epoch = 0; epoch < cfg_.warmup_epochs; ++epoch) {
            std::shuffle(all.begin(), all.end(), rng);
            double total = 0.0;
            for (std::size_t b = 0; b < batches; ++b) {
                std::vector<std::size_t> batch;
                for (std::size_t s = 0; s < per; ++s) batch.push_back(all[(b * per + s) % all.size()]);
                total += train_contrastive_step(batch, ContrastiveMode::simclr_pretrain, opt, rng, nullptr);
            }
            epoch_losses.push_back(total / static_cast<double>(batches));
        }
        take_snapshot(model_);
        return epoch_losses;
    }

    // One full Algorithm-1 iteration: reset the encoder and projection head,
    // train with per-batch propagation for up to Xi epochs (the first
    // iteration runs a fixed count at the reduced learning rate, later ones
    // early-stop on a loss EMA), then average, scale, adjust, clip and
    // subsample the stored pseudo-labels.
    IterationMetrics run_ccp_iteration() {
        const int iter = state_.iteration + 1;
        const bool first = iter == 1;
        Rng rng = make_stream(cfg_.seed, stream_tag::iteration, static_cast<std::uint64_t>(iter));

        reset_to_snapshot(model_, RestoreScope::encoder_and_z);
        state_.accum_sum.assign(ds_.train.size(), std::vector<double>(ds_.num_classes, 0.0));
        state_.accum_count.assign(ds_.train.size(), 0);

        const std::size_t planned_epochs =
            first ? cfg_.first_iteration_epochs : cfg_.max_epochs_per_iteration;
        const std::size_t batches_per_epoch =
            (refine_.size() + cfg_.batch_size - 1) / std::max<std::size_t>(1, cfg_.batch_size);
        auto opt = SgdOptimizer::make(
            model_.params, first ? cfg_.first_iteration_learning_rate : cfg_.learning_rate,
            static_cast<long>(planned_epochs * batches_per_epoch), cfg_.momentum, cfg_.nesterov);

        double ema_loss = 0.0;
        bool ema_started = false;
        double best_ema = std::numeric_limits<double>::infinity();
        std::size_t stale_epochs = 0;
        std::size_t epochs_run = 0;

        std::vector<double> epoch_trace_sum;
        std::vector<std::size_t> epoch_trace_count;
        for (std::size_t epoch = 0; epoch < planned_epochs; ++epoch) {
            epoch_trace_sum.assign(ds_.train.size() * ds_.num_classes, 0.0);
            epoch_trace_count.assign(ds_.train.size(), 0);
            auto batches =
                draw_balanced_batches(ds_, state_.master_q, refine_, cfg_.batch_size, rng,
                                      cfg_.class_guarantee,
                                      cfg_.trusted_labels ? &trusted_mask_ : nullptr);
            for (const auto& batch : batches) {
                double loss = train_ccp_batch(batch, opt, rng, epoch_trace_sum, epoch_trace_count);
                if (!ema_started) {
                    ema_loss = loss;
                    ema_started = true;
                } else {
                    ema_loss = cfg_.ema_loss_decay * ema_loss + (1.0 - cfg_.ema_loss_decay) * loss;
                }
            }
            ++epochs_run;
            flush_epoch_traces(iter, static_cast<int>(epoch) + 1, epoch_trace_sum, epoch_trace_count);
            if (!first) {
                if (ema_loss < best_ema) {
                    best_ema = ema_loss;
                    stale_epochs = 0;
                } else if (++stale_epochs >= cfg_.early_stop_patience) {
                    break;
                }
            } else {
                best_ema = std::min(best_ema, ema_loss);
            }
        }

        IterationMetrics metrics;
        metrics.iteration = iter;
        metrics.epochs_run = static_cast<int>(epochs_run);
        metrics.ema_loss_final = ema_loss;
        metrics.d_max = state_.d_max;
        finalize_iteration(metrics);
        return metrics;
    }

    // Iterations until the cap, a single-iteration request, or the total
    // pseudo-label confidence mass plateaus. Mass is measured on the labels
    // an iteration produced (before its subsampling reset) so the stop rule
    // is insensitive to the reset fraction.
    std::vector<IterationMetrics> run_ccp() {
        std::vector<IterationMetrics> all;
        double prev_mass = std::numeric_limits<double>::quiet_NaN();
        const std::size_t limit = cfg_.single_iteration ? 1 : cfg_.max_iterations;
        for (std::size_t m = 0; m < limit; ++m) {
            all.push_back(run_ccp_iteration());
            double mass = 0.0;
            for (std::size_t u : refine_) mass += strength(state_.pre_reset_q[u]);
            if (!cfg_.single_iteration && all.size() >= cfg_.min_iterations && !std::isnan(prev_mass)) {
                double rel = std::abs(mass - prev_mass) / std::max(prev_mass, 1e-12);
                if (rel < cfg_.mass_plateau_tolerance) break;
            }
            prev_mass = mass;
        }
        return all;
    }

    // Joint L_SSC + L_CLS training on the refined soft labels; evaluation
    // uses the parameter EMA. The final iteration's pre-subsampling labels
    // are used, so no pseudo-label is dropped at this stage.
    double train_classifier() {
        if (cfg_.reset_before_classifier) reset_to_snapshot(model_, RestoreScope::encoder_and_z);
        const auto& labels = state_.pre_reset_q.empty() ? state_.master_q : state_.pre_reset_q;

        Rng rng = make_stream(cfg_.seed, stream_tag::classifier);
        std::vector<std::size_t> all(ds_.train.size());
        std::iota(all.begin(), all.end(), 0);
        train_supervised_phase(model_, labels, all, cfg_.classifier_joint_loss, rng);
        return evaluate_accuracy(model_.ema ? *model_.ema : model_.params, net_, ds_.test);
    }

    // Same architecture and augmentation, given labels only, L_CLS only.
    double train_baseline() {
        std::vector<std::size_t> labeled;
        std::vector<CredibilityVector> labels(ds_.train.size(),
                                              CredibilityVector::zeros(ds_.num_classes));
        for (std::size_t i = 0; i < ds_.train.size(); ++i) {
            if (ds_.train[i].given_label < 0) continue;
            labeled.push_back(i);
            labels[i] = clip_credibility(CredibilityVector::clamped_label(
                ds_.num_classes, static_cast<std::size_t>(ds_.train[i].given_label)));
        }
        if (labeled.empty()) throw ContractError("baseline: no labeled samples");

        ModelState baseline = make_model(net_, detail::splitmix64(cfg_.seed ^ stream_tag::baseline));
        Rng rng = make_stream(cfg_.seed, stream_tag::baseline);
        train_supervised_phase(baseline, labels, labeled, /*with_contrastive=*/false, rng);
        return evaluate_accuracy(baseline.ema ? *baseline.ema : baseline.params, net_, ds_.test);
    }

    PipelineResult run_full_pipeline() {
        PipelineResult result;
        result.scenario = ds_.scenario;
        result.severity = ds_.severity;
        result.seed = cfg_.seed;
        warmup_pretrain();
        result.iterations = run_ccp();
        result.ccp_test_accuracy = train_classifier();
        result.baseline_test_accuracy = train_baseline();
        result.ran_ccp = true;
        return result;
    }

    PipelineResult run_baseline_only() {
        PipelineResult result;
        result.scenario = ds_.scenario;
        result.severity = ds_.severity;
        result.seed = cfg_.seed;
        result.baseline_test_accuracy = train_baseline();
        return result;
    }

private:
    ScenarioDataset ds_;
    RunConfig cfg_;
    NetworkConfig net_;
    ModelState model_;
    CCPState state_;
    std::vector<std::size_t> refine_;
    std::vector<bool> trace_set_;
    std::vector<bool> trusted_mask_;
    std::vector<TraceRow> traces_;

    std::vector<std::vector<double>> make_views(const std::vector<std::size_t>& batch, Rng& rng) {
        std::vector<std::vector<double>> views(2 * batch.size());
        if (cfg_.transforms.empty()) {
            for (std::size_t i = 0; i < batch.size(); ++i)
                views[i] = views[i + batch.size()] = ds_.train[batch[i]].features;
            return views;
        }
        std::uniform_int_distribution<std::size_t> pick(0, cfg_.transforms.size() - 1);
        const TransformSpec& t1 = cfg_.transforms[pick(rng)];
        const TransformSpec& t2 = cfg_.transforms[pick(rng)];
        for (std::size_t i = 0; i < batch.size(); ++i)
            views[i] = apply_transform(ds_.train[batch[i]].features, t1, rng);
        for (std::size_t i = 0; i < batch.size(); ++i)
            views[i + batch.size()] = apply_transform(ds_.train[batch[i]].features, t2, rng);
        return views;
    }

    double train_contrastive_step(const std::vector<std::size_t>& batch, ContrastiveMode mode,
                                  SgdOptimizer& opt, Rng& rng,
                                  const std::vector<CredibilityVector>* creds) {
        auto views = make_views(batch, rng);
        ForwardResult fwd = forward(model_.params, net_, views);
        ContrastiveBatch cb;
        cb.embeddings = std::move(fwd.embeddings);
        cb.temperature = cfg_.temperature;
        if (creds) {
            for (std::size_t i : batch) cb.credibilities.push_back((*creds)[i]);
        } else {
            cb.credibilities.assign(batch.size(), CredibilityVector::zeros(ds_.num_classes));
        }
        ContrastiveLoss loss = soft_contrastive_loss(cb, mode);
        fwd.embeddings = std::move(cb.embeddings);
        Gradients grads = backward(model_.params, net_, fwd, loss.embedding_grads, {});
        opt.sgd_step(model_.params, grads);
        return loss.loss;
    }

    // Propagate, store, then one gradient step on L_SSC; Algorithm 1 computes
    // the batch's pseudo-labels from the embeddings as they were before the
    // step. Both consumers share one pairwise-similarity pass.
    double train_ccp_batch(const std::vector<std::size_t>& batch, SgdOptimizer& opt, Rng& rng,
                           std::vector<double>& epoch_trace_sum,
                           std::vector<std::size_t>& epoch_trace_count) {
        auto views = make_views(batch, rng);
        ForwardResult fwd = forward(model_.params, net_, views);

        std::vector<CredibilityVector> creds;
        creds.reserve(batch.size());
        for (std::size_t i : batch) creds.push_back(state_.master_q[i]);

        std::vector<std::size_t> targets;
        for (std::size_t local = 0; local < batch.size(); ++local) {
            std::size_t global = batch[local];
            bool refinable = cfg_.trusted_labels ? ds_.train[global].given_label < 0 : true;
            if (refinable) targets.push_back(local);
        }
        auto sim = detail::pairwise_similarity(fwd.embeddings);
        auto propagated = detail::propagate_with(sim, creds, targets);
        for (const auto& [local, q] : propagated) {
            std::size_t global = batch[local];
            for (std::size_t k = 0; k < ds_.num_classes; ++k)
                state_.accum_sum[global][k] += q[k];
            ++state_.accum_count[global];
            if (trace_set_[global]) {
                for (std::size_t k = 0; k < ds_.num_classes; ++k)
                    epoch_trace_sum[global * ds_.num_classes + k] += q[k];
                ++epoch_trace_count[global];
            }
        }

        ContrastiveBatch cb{std::move(fwd.embeddings), std::move(creds), cfg_.temperature};
        ContrastiveLoss loss = detail::soft_contrastive_with(sim, cb, ContrastiveMode::credibility);
        fwd.embeddings = std::move(cb.embeddings);
        Gradients grads = backward(model_.params, net_, fwd, loss.embedding_grads, {});
        opt.sgd_step(model_.params, grads);
        return loss.loss;
    }

    void flush_epoch_traces(int iteration, int epoch, const std::vector<double>& sums,
                            const std::vector<std::size_t>& counts) {
        if (cfg_.trace_samples == 0) return;
        for (std::size_t i = 0; i < ds_.train.size(); ++i) {
            if (!trace_set_[i] || counts[i] == 0) continue;
            TraceRow row{i, iteration, epoch, std::vector<double>(ds_.num_classes)};
            for (std::size_t k = 0; k < ds_.num_classes; ++k)
                row.q[k] = sums[i * ds_.num_classes + k] / static_cast<double>(counts[i]);
            traces_.push_back(std::move(row));
        }
    }

    // Algorithm 1 lines 14-22 on the stored pseudo-labels.
    void finalize_iteration(IterationMetrics& metrics) {
        std::vector<CredibilityVector> averaged(refine_.size());
        double gamma = -std::numeric_limits<double>::infinity();
        for (std::size_t r = 0; r < refine_.size(); ++r) {
            std::size_t u = refine_[r];
            if (state_.accum_count[u] == 0)
                throw ContractError("iteration stored no pseudo-label for sample " + std::to_string(u));
            CredibilityVector q{std::vector<double>(ds_.num_classes), false};
            for (std::size_t k = 0; k < ds_.num_classes; ++k) {
                q.values[k] =
                    state_.accum_sum[u][k] / static_cast<double>(state_.accum_count[u]);
                gamma = std::max(gamma, q.values[k]);
            }
            averaged[r] = std::move(q);
        }
        metrics.gamma = gamma;

        if (gamma > 1e-9) {
            for (auto& q : averaged)
                for (double& v : q.values) v /= gamma;
        } else if (cfg_.verbose) {
            std::cerr << "warning: degenerate iteration, max averaged credibility " << gamma
                      << "; scaling skipped\n";
        }

        state_.last_scaled_average = averaged;

        std::vector<CredibilityVector> clipped(refine_.size());
        for (std::size_t r = 0; r < refine_.size(); ++r)
            clipped[r] = clip_credibility(credibility_adjust(averaged[r].values));

        state_.pre_reset_q = state_.master_q;
        for (std::size_t r = 0; r < refine_.size(); ++r)
            state_.pre_reset_q[refine_[r]] = clipped[r];
        label_metrics(metrics);

        // Subsampling operates on the scaled averages for confidence and on
        // the clipped vectors for the class-mass constraint.
        state_.master_q = state_.pre_reset_q;
        int p = 0;
        if (cfg_.subsampling && state_.d_max > 0.0) {
            double total_mass = 0.0;
            for (const auto& q : clipped) total_mass += strength(q);
            if (total_mass > 0.0) {
                SubsampleDecision decision =
                    choose_subsample(averaged, clipped, std::max(state_.p_last, 1), state_.d_max);
                p = decision.percent;
                std::size_t reset_count =
                    static_cast<std::size_t>(static_cast<long long>(p) * refine_.size() / 100);
                auto order = detail::confidence_order(decision.confidences);
                for (std::size_t r = 0; r < reset_count; ++r)
                    state_.master_q[refine_[order[r]]] = CredibilityVector::zeros(ds_.num_classes);
            } else if (cfg_.verbose) {
                std::cerr << "warning: no clipped credibility mass, subsampling skipped\n";
            }
            state_.p_last = p;
        }
        metrics.p_chosen = p;
        state_.d_max /= 2.0;
        ++state_.iteration;
    }

    // Accuracy and strength statistics of the refined labels before the
    // subsampling reset. OOD samples never count toward accuracy; when they
    // carry a nonzero pseudo-label they count as incorrect for strengths.
    void label_metrics(IterationMetrics& metrics) const {
        std::size_t id_total = 0, id_correct = 0;
        double sum_correct = 0.0, sum_incorrect = 0.0;
        std::size_t n_correct = 0, n_incorrect = 0;
        for (std::size_t u : refine_) {
            const auto& q = state_.pre_reset_q[u];
            double w = strength(q);
            std::size_t arg = 0;
            for (std::size_t k = 1; k < q.size(); ++k)
                if (q[k] > q[arg]) arg = k;
            bool labeled = w > 0.0;
            bool correct = labeled && !ds_.train[u].is_ood &&
                           ds_.train[u].true_label == static_cast<int>(arg);
            if (!ds_.train[u].is_ood) {
                ++id_total;
                if (correct) ++id_correct;
            }
            if (!labeled) continue;
            if (correct) {
                sum_correct += w;
                ++n_correct;
            } else {
                sum_incorrect += w;
                ++n_incorrect;
            }
        }
        metrics.pseudo_label_accuracy =
            id_total == 0 ? 0.0 : static_cast<double>(id_correct) / static_cast<double>(id_total);
        metrics.mean_strength_correct = n_correct == 0 ? 0.0 : sum_correct / static_cast<double>(n_correct);
        metrics.mean_strength_incorrect =
            n_incorrect == 0 ? 0.0 : sum_incorrect / static_cast<double>(n_incorrect);
    }

    // Shared by the classifier phase (joint losses) and the supervised
    // baseline (L_CLS only). Maintains the evaluation EMA with the usual
    // (1+t)/(10+t) ramp so short phases are not dominated by the init.
    void train_supervised_phase(ModelState& m, const std::vector<CredibilityVector>& labels,
                                std::vector<std::size_t> pool, bool with_contrastive, Rng& rng) {
        const std::size_t per = std::max<std::size_t>(1, std::min(cfg_.classifier_batch_size, pool.size()));
        const std::size_t batches = (pool.size() + per - 1) / per;
        auto opt = SgdOptimizer::make(m.params, cfg_.learning_rate,
                                      static_cast<long>(cfg_.classifier_epochs * batches),
                                      cfg_.momentum, cfg_.nesterov);
        ema_reset(m);
        long updates = 0;
        for (std::size_t epoch = 0; epoch < cfg_.classifier_epochs; ++epoch) {
            std::shuffle(pool.begin(), pool.end(), rng);
            for (std::size_t b = 0; b < batches; ++b) {
                std::vector<std::size_t> batch;
                for (std::size_t s = 0; s < per; ++s) batch.push_back(pool[(b * per + s) % pool.size()]);
                auto views = make_views(batch, rng);
                ForwardResult fwd = forward(m.params, net_, views);

                std::vector<CredibilityVector> view_creds;
                view_creds.reserve(2 * batch.size());
                for (std::size_t round = 0; round < 2; ++round)
                    for (std::size_t i : batch) view_creds.push_back(labels[i]);

                ClassificationLoss cls = soft_cross_entropy(fwd.logits, view_creds);
                std::vector<Embedding> dz;
                if (with_contrastive) {
                    ContrastiveBatch cb;
                    cb.embeddings = std::move(fwd.embeddings);
                    cb.temperature = cfg_.temperature;
                    for (std::size_t i : batch) cb.credibilities.push_back(labels[i]);
                    ContrastiveLoss ssc = soft_contrastive_loss(cb, ContrastiveMode::credibility);
                    dz = std::move(ssc.embedding_grads);
                    fwd.embeddings = std::move(cb.embeddings);
                }
                Gradients grads = backward(m.params, net_, fwd, dz, cls.logit_grads);
                opt.sgd_step(m.params, grads);
                ++updates;
                double decay = std::min(cfg_.ema_model_decay,
                                        (1.0 + static_cast<double>(updates)) /
                                            (10.0 + static_cast<double>(updates)));
                ema_update(m, decay);
            }
        }
    }
};

// ---------------------------------------------------------------------------
// Replicated-iteration variance diagnostics.
//
// R replicate iterations start from the same model snapshot and pseudo-label
// state but use independent random streams. For each (sample, class) cell the
// variance across replicates of the iteration-end epoch average is compared
// to the mean across epochs of the per-epoch variance across replicates.
// Epoch averaging should not increase variance, which is the direction the
// pseudo-label model predicts.
// ---------------------------------------------------------------------------

struct CellVariance {
    double averaged_variance = 0.0;
    double mean_epoch_variance = 0.0;
    bool degenerate = false;
    bool satisfied = false;
};

// epoch_series[r][e]: the cell's value at epoch e of replicate r.
inline CellVariance cell_variance(const std::vector<std::vector<double>>& epoch_series) {
    CellVariance out;
    const std::size_t reps = epoch_series.size();
    if (reps < 2 || epoch_series[0].empty()) {
        out.degenerate = true;
        out.satisfied = true;
        return out;
    }
    const std::size_t epochs = epoch_series[0].size();

    auto sample_variance = [](const std::vector<double>& xs) {
        double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
        double acc = 0.0;
        for (double x : xs) acc += (x - mean) * (x - mean);
        return acc / static_cast<double>(xs.size() - 1);
    };

    std::vector<double> replicate_avgs(reps);
    for (std::size_t r = 0; r < reps; ++r)
        replicate_avgs[r] = std::accumulate(epoch_series[r].begin(), epoch_series[r].end(), 0.0) /
                            static_cast<double>(epochs);
    out.averaged_variance = sample_variance(replicate_avgs);

    std::vector<double> column(reps);
    for (std::size_t e = 0; e < epochs; ++e) {
        for (std::size_t r = 0; r < reps; ++r) column[r] = epoch_series[r][e];
        out.mean_epoch_variance += sample_variance(column);
    }
    out.mean_epoch_variance /= static_cast<double>(epochs);

    out.degenerate = out.averaged_variance == 0.0 && out.mean_epoch_variance == 0.0;
    out.satisfied = out.averaged_variance <= out.mean_epoch_variance + 1e-15;
    return out;
}

struct VarianceSummary {
    std::size_t cells = 0;
    std::size_t satisfied = 0;
    std::size_t degenerate = 0;
    double fraction_satisfied() const {
        return cells == 0 ? 1.0 : static_cast<double>(satisfied) / static_cast<double>(cells);
    }
};

// Runs one normal first iteration to obtain a realistic pseudo-label state,
// then replicates the second iteration with a fixed epoch count and
// independent seeds, tracing every refined sample.
inline VarianceSummary replicate_variance_summary(const ScenarioDataset& ds, RunConfig cfg,
                                                  std::size_t replicates, std::size_t epochs) {
    if (replicates < 2) throw std::invalid_argument("replicate_variance_summary: need >= 2 replicates");
    cfg.trace_samples = ds.train.size();
    cfg.subsampling = false;

    RunConfig base_cfg = cfg;
    Engine seed_engine(ds, base_cfg);
    seed_engine.warmup_pretrain();
    seed_engine.run_ccp_iteration();
    const CCPState start_state = seed_engine.state();

    const std::size_t refine_count = seed_engine.refine_indices().size();
    const std::size_t num_classes = ds.num_classes;
    std::vector<std::size_t> position_of(ds.train.size(), 0);
    for (std::size_t r = 0; r < refine_count; ++r)
        position_of[seed_engine.refine_indices()[r]] = r;

    // series[cell][replicate][epoch]
    std::vector<std::vector<std::vector<double>>> series(
        refine_count * num_classes,
        std::vector<std::vector<double>>(replicates, std::vector<double>(epochs, 0.0)));

    for (std::size_t r = 0; r < replicates; ++r) {
        RunConfig rep_cfg = cfg;
        rep_cfg.seed = detail::splitmix64(cfg.seed ^ stream_tag::replicate ^ (r + 1));
        rep_cfg.max_epochs_per_iteration = epochs;
        rep_cfg.early_stop_patience = epochs + 1; // fixed epoch count: never stop early
        Engine rep(ds, rep_cfg);
        rep.restore(seed_engine.model(), start_state);
        rep.run_ccp_iteration();

        for (const auto& row : rep.trace_rows()) {
            if (row.iteration != start_state.iteration + 1) continue;
            std::size_t pos = position_of[row.sample];
            std::size_t e = static_cast<std::size_t>(row.epoch) - 1;
            if (e >= epochs) continue;
            for (std::size_t k = 0; k < num_classes; ++k)
                series[pos * num_classes + k][r][e] = row.q[k];
        }
    }

    VarianceSummary summary;
    for (const auto& cell : series) {
        CellVariance cv = cell_variance(cell);
        ++summary.cells;
        if (cv.satisfied) ++summary.satisfied;
        if (cv.degenerate) ++summary.degenerate;
    }
    return summary;
}

} // namespace ccp
