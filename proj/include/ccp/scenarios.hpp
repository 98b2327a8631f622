#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ccp/common.hpp"
#include "ccp/core_math.hpp"

namespace ccp {

struct SampleRecord {
    std::vector<double> features;
    int given_label = -1; // -1 = unlabeled
    int true_label = -1;  // hidden ground truth; -1 for OOD samples
    bool is_ood = false;
};

enum class Scenario { base, few_label, open_set, noisy_label, imbalance_u, imbalance_l };

inline std::string scenario_name(Scenario s) {
    switch (s) {
        case Scenario::base: return "base";
        case Scenario::few_label: return "few-label";
        case Scenario::open_set: return "open-set";
        case Scenario::noisy_label: return "noisy-label";
        case Scenario::imbalance_u: return "imbalance-U";
        case Scenario::imbalance_l: return "imbalance-L";
    }
    return "base";
}

inline Scenario scenario_from_name(const std::string& s) {
    if (s == "base") return Scenario::base;
    if (s == "few-label") return Scenario::few_label;
    if (s == "open-set") return Scenario::open_set;
    if (s == "noisy-label") return Scenario::noisy_label;
    if (s == "imbalance-U") return Scenario::imbalance_u;
    if (s == "imbalance-L") return Scenario::imbalance_l;
    throw InputError("unknown scenario: " + s);
}

// Desk-scale defaults: 4 in-distribution classes with 40 labeled / 460
// unlabeled samples each, plus 6 reserve out-of-distribution clusters.
struct ScenarioSpec {
    Scenario scenario = Scenario::base;
    int severity = 1; // in {1, 2, 3}; ignored for base
    std::uint64_t seed = 1;
    std::size_t num_classes = 4;
    std::size_t feature_dim = 16;
    std::size_t labeled_per_class = 40;
    std::size_t unlabeled_per_class = 460;
    std::size_t test_per_class = 200;
    std::size_t ood_clusters = 6;
    std::size_t ood_cluster_size = 500;
    double class_separation = 3.5; // pairwise distance between cluster means
    double noise_sigma = 1.0;
};

struct ScenarioDataset {
    std::size_t num_classes = 0;
    std::size_t feature_dim = 0;
    std::vector<SampleRecord> train; // L and U together; split = given_label >= 0
    std::vector<SampleRecord> test;  // held-out ID samples
    std::vector<std::vector<SampleRecord>> ood_reserve; // per cluster, not yet in train
    std::string scenario = "base";
    int severity = 0;
    std::uint64_t seed = 0;

    std::size_t labeled_count() const {
        std::size_t c = 0;
        for (const auto& s : train) c += s.given_label >= 0;
        return c;
    }
    std::size_t unlabeled_count() const { return train.size() - labeled_count(); }
};

namespace detail {

// Cluster means on a regular simplex with the requested pairwise distance,
// embedded in feature space through a seeded random rotation.
inline std::vector<std::vector<double>> simplex_means(std::size_t vertices, std::size_t dim,
                                                      double separation, Rng& rng) {
    if (vertices > dim)
        throw std::invalid_argument("simplex_means: need feature_dim >= classes + ood clusters");
    const double scale = separation / std::sqrt(2.0);
    std::vector<std::vector<double>> raw(vertices, std::vector<double>(dim, 0.0));
    for (std::size_t i = 0; i < vertices; ++i) {
        for (std::size_t j = 0; j < vertices; ++j)
            raw[i][j] = scale * ((i == j ? 1.0 : 0.0) - 1.0 / static_cast<double>(vertices));
    }

    // Random orthonormal basis via Gram-Schmidt on Gaussian draws.
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<std::vector<double>> basis;
    while (basis.size() < dim) {
        std::vector<double> v(dim);
        for (double& x : v) x = gauss(rng);
        for (const auto& b : basis) {
            double dot = std::inner_product(v.begin(), v.end(), b.begin(), 0.0);
            for (std::size_t j = 0; j < dim; ++j) v[j] -= dot * b[j];
        }
        double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
        if (norm < 1e-8) continue;
        for (double& x : v) x /= norm;
        basis.push_back(std::move(v));
    }

    std::vector<std::vector<double>> means(vertices, std::vector<double>(dim, 0.0));
    for (std::size_t i = 0; i < vertices; ++i)
        for (std::size_t r = 0; r < dim; ++r)
            for (std::size_t c = 0; c < dim; ++c) means[i][r] += basis[c][r] * raw[i][c];
    return means;
}

inline std::vector<double> gaussian_sample(const std::vector<double>& mean, double sigma, Rng& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> x(mean.size());
    for (std::size_t j = 0; j < mean.size(); ++j) x[j] = mean[j] + sigma * gauss(rng);
    return x;
}

inline int severity_index(int severity) {
    if (severity < 1 || severity > 3)
        throw std::invalid_argument("severity must be 1, 2, or 3");
    return severity - 1;
}

} // namespace detail

// K in-distribution Gaussian clusters plus an OOD reserve, all placed on one
// simplex so every pair of clusters is equally separated. Deterministic per
// seed.
inline ScenarioDataset generate_base(const ScenarioSpec& spec) {
    if (spec.num_classes < 2 || spec.feature_dim == 0 || spec.labeled_per_class == 0 ||
        spec.unlabeled_per_class == 0)
        throw std::invalid_argument("generate_base: nonpositive size");

    Rng rng = make_stream(spec.seed, stream_tag::dataset);
    auto means = detail::simplex_means(spec.num_classes + spec.ood_clusters, spec.feature_dim,
                                       spec.class_separation, rng);

    ScenarioDataset ds;
    ds.num_classes = spec.num_classes;
    ds.feature_dim = spec.feature_dim;
    ds.seed = spec.seed;
    for (std::size_t k = 0; k < spec.num_classes; ++k) {
        for (std::size_t i = 0; i < spec.labeled_per_class; ++i)
            ds.train.push_back({detail::gaussian_sample(means[k], spec.noise_sigma, rng),
                                static_cast<int>(k), static_cast<int>(k), false});
        for (std::size_t i = 0; i < spec.unlabeled_per_class; ++i)
            ds.train.push_back({detail::gaussian_sample(means[k], spec.noise_sigma, rng), -1,
                                static_cast<int>(k), false});
        for (std::size_t i = 0; i < spec.test_per_class; ++i)
            ds.test.push_back({detail::gaussian_sample(means[k], spec.noise_sigma, rng), -1,
                               static_cast<int>(k), false});
    }
    for (std::size_t c = 0; c < spec.ood_clusters; ++c) {
        std::vector<SampleRecord> cluster;
        for (std::size_t i = 0; i < spec.ood_cluster_size; ++i)
            cluster.push_back({detail::gaussian_sample(means[spec.num_classes + c], spec.noise_sigma, rng),
                               -1, -1, true});
        ds.ood_reserve.push_back(std::move(cluster));
    }
    return ds;
}

// Severity 1/2/3 leaves 25/4/2 labels per class; the rest move to the
// unlabeled pool with their ground truth hidden from training.
inline ScenarioDataset apply_few_label(const ScenarioDataset& ds, int severity) {
    static constexpr std::size_t keep[3] = {25, 4, 2};
    const std::size_t target = keep[detail::severity_index(severity)];
    ScenarioDataset out = ds;
    std::vector<std::size_t> kept(out.num_classes, 0);
    for (auto& s : out.train) {
        if (s.given_label < 0) continue;
        if (kept[static_cast<std::size_t>(s.given_label)] < target)
            ++kept[static_cast<std::size_t>(s.given_label)];
        else
            s.given_label = -1;
    }
    out.scenario = scenario_name(Scenario::few_label);
    out.severity = severity;
    return out;
}

// Moves OOD reserve clusters into the unlabeled pool: 2, 4, then all 6 at the
// scaled analogue of unlabeled classes [0,5], [0,7], [0,9].
inline ScenarioDataset apply_open_set(const ScenarioDataset& ds, int severity) {
    detail::severity_index(severity);
    // Thirds of the reserve per severity step; severity 3 moves every cluster.
    const std::size_t want = ds.ood_reserve.size() * static_cast<std::size_t>(severity) / 3;
    ScenarioDataset out = ds;
    for (std::size_t c = 0; c < want; ++c)
        out.train.insert(out.train.end(), ds.ood_reserve[c].begin(), ds.ood_reserve[c].end());
    out.ood_reserve.erase(out.ood_reserve.begin(), out.ood_reserve.begin() + static_cast<long>(want));
    out.scenario = scenario_name(Scenario::open_set);
    out.severity = severity;
    return out;
}

// Flips exactly round(rho |L|) given labels, rho in {0.2, 0.4, 0.6}, each to
// a uniformly chosen different ID class. Ground truth stays untouched.
inline ScenarioDataset apply_label_noise(const ScenarioDataset& ds, int severity) {
    static constexpr double rho[3] = {0.2, 0.4, 0.6};
    const double rate = rho[detail::severity_index(severity)];
    ScenarioDataset out = ds;

    std::vector<std::size_t> labeled;
    for (std::size_t i = 0; i < out.train.size(); ++i)
        if (out.train[i].given_label >= 0) labeled.push_back(i);
    const auto flips = static_cast<std::size_t>(std::llround(rate * static_cast<double>(labeled.size())));

    Rng rng = make_stream(ds.seed, stream_tag::dataset, 0x100 + static_cast<std::uint64_t>(severity));
    std::shuffle(labeled.begin(), labeled.end(), rng);
    std::uniform_int_distribution<int> cls(0, static_cast<int>(out.num_classes) - 2);
    for (std::size_t i = 0; i < flips; ++i) {
        auto& s = out.train[labeled[i]];
        int wrong = cls(rng);
        if (wrong >= s.true_label) ++wrong; // uniform over classes != true label
        s.given_label = wrong;
    }
    out.scenario = scenario_name(Scenario::noisy_label);
    out.severity = severity;
    return out;
}

// Imbalances the last half of ID classes. U-mode keeps 20%/10%/0% of their
// unlabeled samples; L-mode reduces their labeled counts to 25/4/2. Either
// way the removed samples are discarded outright.
inline ScenarioDataset apply_imbalance(const ScenarioDataset& ds, char which, int severity) {
    const int idx = detail::severity_index(severity);
    if (which != 'U' && which != 'L')
        throw std::invalid_argument("apply_imbalance: which must be 'U' or 'L'");
    const std::size_t first_affected = ds.num_classes / 2;

    ScenarioDataset out = ds;
    out.train.clear();
    if (which == 'U') {
        static constexpr double keep_frac[3] = {0.2, 0.1, 0.0};
        std::vector<std::size_t> total(ds.num_classes, 0), kept(ds.num_classes, 0);
        for (const auto& s : ds.train)
            if (s.given_label < 0 && !s.is_ood) ++total[static_cast<std::size_t>(s.true_label)];
        for (const auto& s : ds.train) {
            bool affected = s.given_label < 0 && !s.is_ood &&
                            static_cast<std::size_t>(s.true_label) >= first_affected;
            if (!affected) {
                out.train.push_back(s);
                continue;
            }
            auto k = static_cast<std::size_t>(s.true_label);
            auto budget = static_cast<std::size_t>(
                std::llround(keep_frac[idx] * static_cast<double>(total[k])));
            if (kept[k] < budget) {
                ++kept[k];
                out.train.push_back(s);
            }
        }
    } else {
        static constexpr std::size_t keep_count[3] = {25, 4, 2};
        std::vector<std::size_t> kept(ds.num_classes, 0);
        for (const auto& s : ds.train) {
            bool affected =
                s.given_label >= 0 && static_cast<std::size_t>(s.given_label) >= first_affected;
            if (!affected) {
                out.train.push_back(s);
                continue;
            }
            auto k = static_cast<std::size_t>(s.given_label);
            if (kept[k] < keep_count[idx]) {
                ++kept[k];
                out.train.push_back(s);
            }
        }
    }
    out.scenario = scenario_name(which == 'U' ? Scenario::imbalance_u : Scenario::imbalance_l);
    out.severity = severity;
    return out;
}

inline ScenarioDataset generate_scenario(const ScenarioSpec& spec) {
    ScenarioDataset base = generate_base(spec);
    switch (spec.scenario) {
        case Scenario::base: return base;
        case Scenario::few_label: return apply_few_label(base, spec.severity);
        case Scenario::open_set: return apply_open_set(base, spec.severity);
        case Scenario::noisy_label: return apply_label_noise(base, spec.severity);
        case Scenario::imbalance_u: return apply_imbalance(base, 'U', spec.severity);
        case Scenario::imbalance_l: return apply_imbalance(base, 'L', spec.severity);
    }
    return base;
}

// ---------------------------------------------------------------------------
// Input transforms: feature-space analogues of the embedding-vector noise,
// hide and scramble operations, plus a multiplicative jitter.
// ---------------------------------------------------------------------------

enum class TransformKind { gaussian_noise, feature_hide, feature_scramble, scale_jitter };

inline std::string transform_kind_name(TransformKind k) {
    switch (k) {
        case TransformKind::gaussian_noise: return "gaussian-noise";
        case TransformKind::feature_hide: return "feature-hide";
        case TransformKind::feature_scramble: return "feature-scramble";
        case TransformKind::scale_jitter: return "scale-jitter";
    }
    return "gaussian-noise";
}

inline TransformKind transform_kind_from_name(const std::string& s) {
    if (s == "gaussian-noise") return TransformKind::gaussian_noise;
    if (s == "feature-hide") return TransformKind::feature_hide;
    if (s == "feature-scramble") return TransformKind::feature_scramble;
    if (s == "scale-jitter") return TransformKind::scale_jitter;
    throw InputError("unknown transform: " + s);
}

struct TransformSpec {
    TransformKind kind = TransformKind::gaussian_noise;
    // Primary magnitude range: noise sigma, hidden/scrambled fraction, or
    // scale factor depending on kind.
    double magnitude_min = 0.05;
    double magnitude_max = 0.3;
    // Secondary range, used as the noise mean for gaussian_noise.
    double shift_min = -0.1;
    double shift_max = 0.1;
};

inline TransformSpec make_transform(TransformKind kind) {
    switch (kind) {
        case TransformKind::gaussian_noise: return {kind, 0.05, 0.3, -0.1, 0.1};
        case TransformKind::feature_hide: return {kind, 0.10, 0.25, 0.0, 0.0};
        case TransformKind::feature_scramble: return {kind, 0.10, 0.25, 0.0, 0.0};
        case TransformKind::scale_jitter: return {kind, 0.8, 1.25, 0.0, 0.0};
    }
    return {};
}

// Every implemented transform kind.
inline std::vector<TransformSpec> default_transform_set() {
    return {make_transform(TransformKind::gaussian_noise), make_transform(TransformKind::feature_hide),
            make_transform(TransformKind::feature_scramble),
            make_transform(TransformKind::scale_jitter)};
}

// The set used for training by default. Scrambling feature dimensions is
// omitted here: unlike scrambling token positions in a sequence, permuting
// 10-25% of the coordinates of a single feature vector displaces it by about
// one full cluster separation, which crosses class boundaries.
inline std::vector<TransformSpec> default_training_transforms() {
    return {make_transform(TransformKind::gaussian_noise), make_transform(TransformKind::feature_hide),
            make_transform(TransformKind::scale_jitter)};
}

inline std::vector<double> apply_transform(const std::vector<double>& x, const TransformSpec& t,
                                           Rng& rng) {
    std::vector<double> out = x;
    std::uniform_real_distribution<double> mag(t.magnitude_min, t.magnitude_max);
    switch (t.kind) {
        case TransformKind::gaussian_noise: {
            std::uniform_real_distribution<double> shift(t.shift_min, t.shift_max);
            double mu = shift(rng);
            double sigma = mag(rng);
            std::normal_distribution<double> gauss(0.0, 1.0);
            for (double& v : out) v += mu + (sigma > 0.0 ? sigma * gauss(rng) : 0.0);
            break;
        }
        case TransformKind::feature_hide: {
            auto count = static_cast<std::size_t>(std::llround(mag(rng) * static_cast<double>(x.size())));
            std::vector<std::size_t> idx(x.size());
            std::iota(idx.begin(), idx.end(), 0);
            std::shuffle(idx.begin(), idx.end(), rng);
            for (std::size_t i = 0; i < count && i < idx.size(); ++i) out[idx[i]] = 0.0;
            break;
        }
        case TransformKind::feature_scramble: {
            auto count = static_cast<std::size_t>(std::llround(mag(rng) * static_cast<double>(x.size())));
            std::vector<std::size_t> idx(x.size());
            std::iota(idx.begin(), idx.end(), 0);
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(std::min(count, idx.size()));
            std::vector<std::size_t> dest = idx;
            std::shuffle(dest.begin(), dest.end(), rng);
            std::vector<double> vals(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) vals[i] = x[idx[i]];
            for (std::size_t i = 0; i < idx.size(); ++i) out[dest[i]] = vals[i];
            break;
        }
        case TransformKind::scale_jitter: {
            double f = mag(rng);
            for (double& v : out) v *= f;
            break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Balanced batching: cover_indices are partitioned into ceil(|cover|/slots)
// shuffled chunks (the last chunk wraps around to stay full); every class
// short of `guarantee` nonzero-credibility members in a chunk is topped up
// with draws (with replacement) from that class's nonzero-credibility pool.
// A guarantee above one keeps the per-batch class-similarity estimates from
// being dominated by a single draw when a class has little credibility mass.
// ---------------------------------------------------------------------------

inline std::vector<std::vector<std::size_t>>
draw_balanced_batches(const ScenarioDataset& ds, const std::vector<CredibilityVector>& qs,
                      const std::vector<std::size_t>& cover_indices, std::size_t slots, Rng& rng,
                      std::size_t guarantee = 1, const std::vector<bool>* trusted = nullptr) {
    if (qs.size() != ds.train.size())
        throw std::invalid_argument("draw_balanced_batches: credibilities misaligned with dataset");
    if (guarantee == 0)
        throw std::invalid_argument("draw_balanced_batches: guarantee must be at least 1");
    const std::size_t num_classes = ds.num_classes;

    // Guarantee slots are drawn from each class's nonzero-credibility pool.
    // When a trusted mask is given, classes that have trusted members use
    // only those: a pseudo-labeled stand-in whose label is wrong would seed
    // its own error into every propagation that relies on the guarantee.
    std::vector<std::vector<std::size_t>> pools(num_classes);
    std::vector<std::vector<std::size_t>> trusted_pools(num_classes);
    for (std::size_t i = 0; i < qs.size(); ++i) {
        for (std::size_t k = 0; k < num_classes; ++k) {
            if (qs[i][k] <= 0.0) continue;
            pools[k].push_back(i);
            if (trusted && (*trusted)[i]) trusted_pools[k].push_back(i);
        }
    }
    for (std::size_t k = 0; k < num_classes; ++k) {
        if (pools[k].empty())
            throw ContractError("draw_balanced_batches: no credibility mass for class " +
                                std::to_string(k));
        if (!trusted_pools[k].empty()) pools[k] = std::move(trusted_pools[k]);
    }

    std::vector<std::size_t> shuffled = cover_indices;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const std::size_t per_batch = std::min(slots, shuffled.size());
    const std::size_t num_batches = shuffled.empty() ? 0 : (shuffled.size() + slots - 1) / slots;

    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t bi = 0; bi < num_batches; ++bi) {
        std::vector<std::size_t> batch;
        for (std::size_t s = 0; s < per_batch; ++s)
            batch.push_back(shuffled[(bi * slots + s) % shuffled.size()]);

        std::vector<std::size_t> have(num_classes, 0);
        for (std::size_t i : batch)
            for (std::size_t k = 0; k < num_classes; ++k)
                if (qs[i][k] > 0.0) ++have[k];
        for (std::size_t k = 0; k < num_classes; ++k) {
            std::uniform_int_distribution<std::size_t> pick(0, pools[k].size() - 1);
            for (std::size_t g = have[k]; g < guarantee; ++g)
                batch.push_back(pools[k][pick(rng)]);
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

// ---------------------------------------------------------------------------
// Dataset files: delimited text with header
//   feature_0,...,feature_{d-1},given_label,true_label,is_ood
// given_label is -1 for unlabeled rows. The loader validates invariants.
// ---------------------------------------------------------------------------

inline void write_samples_csv(const std::string& path, const std::vector<SampleRecord>& samples,
                              std::size_t feature_dim) {
    std::ofstream os(path);
    if (!os) throw InputError("cannot open for writing: " + path);
    for (std::size_t j = 0; j < feature_dim; ++j) os << "feature_" << j << ",";
    os << "given_label,true_label,is_ood\n";
    char buf[40];
    for (const auto& s : samples) {
        for (double v : s.features) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            os << buf << ",";
        }
        os << s.given_label << "," << s.true_label << "," << (s.is_ood ? 1 : 0) << "\n";
    }
    if (!os) throw InputError("write failed: " + path);
}

inline std::vector<SampleRecord> load_samples_csv(const std::string& path, std::size_t& feature_dim) {
    std::ifstream is(path);
    if (!is) throw InputError("cannot open dataset: " + path);
    std::string line;
    if (!std::getline(is, line)) throw InputError("empty dataset file: " + path);

    std::size_t columns = 1 + std::count(line.begin(), line.end(), ',');
    if (columns < 4 || line.rfind("feature_0,", 0) != 0)
        throw InputError("malformed dataset header in " + path);
    feature_dim = columns - 3;

    std::vector<SampleRecord> samples;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        SampleRecord s;
        s.features.reserve(feature_dim);
        std::stringstream ss(line);
        std::string cell;
        for (std::size_t c = 0; c < columns; ++c) {
            if (!std::getline(ss, cell, ','))
                throw InputError(path + ":" + std::to_string(line_no) + ": expected " +
                                 std::to_string(columns) + " columns");
            try {
                if (c < feature_dim)
                    s.features.push_back(std::stod(cell));
                else if (c == feature_dim)
                    s.given_label = std::stoi(cell);
                else if (c == feature_dim + 1)
                    s.true_label = std::stoi(cell);
                else
                    s.is_ood = std::stoi(cell) != 0;
            } catch (const std::exception&) {
                throw InputError(path + ":" + std::to_string(line_no) + ": bad value '" + cell + "'");
            }
        }
        if (s.is_ood && s.given_label >= 0)
            throw InputError(path + ":" + std::to_string(line_no) + ": OOD sample carries a label");
        samples.push_back(std::move(s));
    }
    return samples;
}

inline std::string test_path_for(const std::string& dataset_path) {
    auto dot = dataset_path.rfind('.');
    if (dot == std::string::npos || dataset_path.find('/', dot) != std::string::npos)
        return dataset_path + "_test";
    return dataset_path.substr(0, dot) + "_test" + dataset_path.substr(dot);
}

inline ScenarioDataset load_scenario(const std::string& train_path, const std::string& test_path) {
    ScenarioDataset ds;
    std::size_t d_train = 0, d_test = 0;
    ds.train = load_samples_csv(train_path, d_train);
    ds.test = load_samples_csv(test_path, d_test);
    if (d_train != d_test)
        throw InputError("train/test feature dimensions differ between " + train_path + " and " +
                         test_path);
    ds.feature_dim = d_train;
    int max_label = -1;
    for (const auto& s : ds.train) max_label = std::max({max_label, s.given_label, s.true_label});
    for (const auto& s : ds.test) max_label = std::max(max_label, s.true_label);
    if (max_label < 1) throw InputError("dataset needs at least two classes: " + train_path);
    ds.num_classes = static_cast<std::size_t>(max_label) + 1;
    for (const auto& s : ds.train)
        if (s.given_label >= static_cast<int>(ds.num_classes))
            throw InputError("label out of range in " + train_path);
    return ds;
}

} // namespace ccp
