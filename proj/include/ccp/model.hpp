#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "ccp/common.hpp"

namespace ccp {

enum class Activation { relu, gelu };

inline std::string activation_name(Activation a) { return a == Activation::relu ? "relu" : "gelu"; }
inline Activation activation_from_name(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "gelu") return Activation::gelu;
    throw std::invalid_argument("unknown activation: " + s);
}

// Encoder f_b is a small MLP whose widths are hidden_layers (the last width
// is the encoding dimension of b); f_z and f_g are single linear heads on b.
struct NetworkConfig {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_layers; // e.g. {64, 64, 32}
    std::size_t embed_dim = 16;             // f_z output
    std::size_t num_classes = 2;            // f_g output
    Activation activation = Activation::relu;
    double weight_decay = 0.0005; // lambda in the L2 term lambda * ||W||^2

    bool operator==(const NetworkConfig&) const = default;
};

struct Linear {
    std::size_t in = 0, out = 0;
    std::vector<double> w; // row-major, out x in
    std::vector<double> b; // out

    static Linear zeros(std::size_t in, std::size_t out) {
        return Linear{in, out, std::vector<double>(in * out, 0.0), std::vector<double>(out, 0.0)};
    }
    bool operator==(const Linear&) const = default;
};

struct Parameters {
    std::vector<Linear> encoder;
    Linear proj_z;
    Linear proj_g;

    bool operator==(const Parameters&) const = default;
};

struct ModelState {
    NetworkConfig config;
    Parameters params;
    std::optional<Parameters> snapshot;
    std::optional<Parameters> ema;
    std::uint64_t init_seed = 0;
};

// Which parameter blocks a restore touches. CCP iterations reset only
// f_b and f_z; f_g is left alone until the classifier phase.
enum class RestoreScope { encoder_and_z, all };

namespace detail {

inline double activate(double x, Activation a) {
    if (a == Activation::relu) return x > 0.0 ? x : 0.0;
    return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
}

inline double activate_grad(double x, Activation a) {
    if (a == Activation::relu) return x > 0.0 ? 1.0 : 0.0;
    double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

inline void linear_forward(const Linear& l, const std::vector<std::vector<double>>& x,
                           std::vector<std::vector<double>>& y) {
    y.assign(x.size(), std::vector<double>(l.out));
    for (std::size_t i = 0; i < x.size(); ++i) {
        for (std::size_t r = 0; r < l.out; ++r) {
            double acc = l.b[r];
            const double* wr = &l.w[r * l.in];
            for (std::size_t c = 0; c < l.in; ++c) acc += wr[c] * x[i][c];
            y[i][r] = acc;
        }
    }
}

// Accumulates dW, db and returns dX.
inline void linear_backward(const Linear& l, const std::vector<std::vector<double>>& x,
                            const std::vector<std::vector<double>>& dy, Linear& grad,
                            std::vector<std::vector<double>>& dx) {
    dx.assign(x.size(), std::vector<double>(l.in, 0.0));
    for (std::size_t i = 0; i < x.size(); ++i) {
        for (std::size_t r = 0; r < l.out; ++r) {
            double g = dy[i][r];
            if (g == 0.0) continue;
            grad.b[r] += g;
            double* wr = &grad.w[r * l.in];
            const double* lw = &l.w[r * l.in];
            for (std::size_t c = 0; c < l.in; ++c) {
                wr[c] += g * x[i][c];
                dx[i][c] += g * lw[c];
            }
        }
    }
}

} // namespace detail

// He-style fan-in uniform initialization, deterministic per seed.
inline ModelState make_model(const NetworkConfig& config, std::uint64_t seed) {
    ModelState state;
    state.config = config;
    state.init_seed = seed;
    Rng rng = make_stream(seed, stream_tag::init);

    auto init_linear = [&](std::size_t in, std::size_t out) {
        Linear l = Linear::zeros(in, out);
        double limit = std::sqrt(6.0 / static_cast<double>(in));
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (double& w : l.w) w = dist(rng);
        return l;
    };

    std::size_t prev = config.input_dim;
    for (std::size_t width : config.hidden_layers) {
        state.params.encoder.push_back(init_linear(prev, width));
        prev = width;
    }
    state.params.proj_z = init_linear(prev, config.embed_dim);
    state.params.proj_g = init_linear(prev, config.num_classes);
    return state;
}

struct ForwardResult {
    std::vector<std::vector<double>> encodings; // b
    std::vector<std::vector<double>> embeddings; // z
    std::vector<std::vector<double>> logits;     // g
    // caches for backward
    std::vector<std::vector<std::vector<double>>> layer_inputs;  // input to each encoder layer
    std::vector<std::vector<std::vector<double>>> preactivations;
};

inline ForwardResult forward(const Parameters& params, const NetworkConfig& config,
                             const std::vector<std::vector<double>>& inputs) {
    for (const auto& x : inputs)
        if (x.size() != config.input_dim)
            throw std::invalid_argument("forward: input dimension mismatch");

    ForwardResult r;
    std::vector<std::vector<double>> h = inputs;
    for (const auto& layer : params.encoder) {
        r.layer_inputs.push_back(h);
        std::vector<std::vector<double>> a;
        detail::linear_forward(layer, h, a);
        r.preactivations.push_back(a);
        for (auto& row : a)
            for (double& v : row) v = detail::activate(v, config.activation);
        h = std::move(a);
    }
    r.encodings = h;
    detail::linear_forward(params.proj_z, r.encodings, r.embeddings);
    detail::linear_forward(params.proj_g, r.encodings, r.logits);
    return r;
}

struct Gradients {
    std::vector<Linear> encoder;
    Linear proj_z;
    Linear proj_g;
    bool has_z = false;
    bool has_g = false;
};

// Reverse accumulation from upstream gradients on z and/or g (either may be
// empty to leave that head untrained). Weight decay enters as the gradient of
// lambda * ||W||^2 on every weight matrix in the trained set; biases are not
// decayed.
inline Gradients backward(const Parameters& params, const NetworkConfig& config,
                          const ForwardResult& cache,
                          const std::vector<std::vector<double>>& dz,
                          const std::vector<std::vector<double>>& dg) {
    if (cache.encodings.empty())
        throw std::logic_error("backward: forward cache is empty");

    Gradients grads;
    for (const auto& l : params.encoder) grads.encoder.push_back(Linear::zeros(l.in, l.out));
    grads.proj_z = Linear::zeros(params.proj_z.in, params.proj_z.out);
    grads.proj_g = Linear::zeros(params.proj_g.in, params.proj_g.out);
    grads.has_z = !dz.empty();
    grads.has_g = !dg.empty();

    const std::size_t n = cache.encodings.size();
    std::vector<std::vector<double>> db(n, std::vector<double>(cache.encodings[0].size(), 0.0));
    std::vector<std::vector<double>> scratch;
    if (grads.has_z) {
        detail::linear_backward(params.proj_z, cache.encodings, dz, grads.proj_z, scratch);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < db[i].size(); ++c) db[i][c] += scratch[i][c];
    }
    if (grads.has_g) {
        detail::linear_backward(params.proj_g, cache.encodings, dg, grads.proj_g, scratch);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < db[i].size(); ++c) db[i][c] += scratch[i][c];
    }

    std::vector<std::vector<double>> delta = std::move(db);
    for (std::size_t li = params.encoder.size(); li-- > 0;) {
        const auto& pre = cache.preactivations[li];
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < delta[i].size(); ++c)
                delta[i][c] *= detail::activate_grad(pre[i][c], config.activation);
        detail::linear_backward(params.encoder[li], cache.layer_inputs[li], delta,
                                grads.encoder[li], scratch);
        delta = std::move(scratch);
    }

    const double wd = 2.0 * config.weight_decay;
    if (wd != 0.0) {
        for (std::size_t li = 0; li < params.encoder.size(); ++li)
            for (std::size_t i = 0; i < grads.encoder[li].w.size(); ++i)
                grads.encoder[li].w[i] += wd * params.encoder[li].w[i];
        if (grads.has_z)
            for (std::size_t i = 0; i < grads.proj_z.w.size(); ++i)
                grads.proj_z.w[i] += wd * params.proj_z.w[i];
        if (grads.has_g)
            for (std::size_t i = 0; i < grads.proj_g.w.size(); ++i)
                grads.proj_g.w[i] += wd * params.proj_g.w[i];
    }
    return grads;
}

// SGD with Nesterov momentum and the cosine schedule
//   lr(s) = base * max(0, cos(7 pi s / (16 S))).
struct SgdOptimizer {
    double base_lr = 0.06;
    double momentum = 0.9;
    bool nesterov = true;
    long step = 0;        // schedule position s
    long total_steps = 1; // S
    Parameters velocity;  // momentum buffers, shaped like the parameters

    static SgdOptimizer make(const Parameters& params, double base_lr, long total_steps,
                             double momentum = 0.9, bool nesterov = true) {
        SgdOptimizer opt;
        opt.base_lr = base_lr;
        opt.momentum = momentum;
        opt.nesterov = nesterov;
        opt.total_steps = std::max(1l, total_steps);
        for (const auto& l : params.encoder) opt.velocity.encoder.push_back(Linear::zeros(l.in, l.out));
        return opt;
    }

    double current_lr() const {
        double angle = 7.0 * std::numbers::pi * static_cast<double>(step) /
                       (16.0 * static_cast<double>(total_steps));
        return base_lr * std::max(0.0, std::cos(angle));
    }

private:
    void ensure_buffer(Linear& buf, const Linear& param) {
        if (buf.w.size() != param.w.size()) buf = Linear::zeros(param.in, param.out);
    }

    void update_block(Linear& param, const Linear& grad, Linear& vel, double lr) {
        ensure_buffer(vel, param);
        auto apply = [&](std::vector<double>& p, const std::vector<double>& g, std::vector<double>& v) {
            for (std::size_t i = 0; i < p.size(); ++i) {
                v[i] = momentum * v[i] + g[i];
                double d = nesterov ? g[i] + momentum * v[i] : v[i];
                p[i] -= lr * d;
            }
        };
        apply(param.w, grad.w, vel.w);
        apply(param.b, grad.b, vel.b);
    }

public:
    void sgd_step(Parameters& params, const Gradients& grads) {
        double lr = current_lr();
        ++step;
        if (lr == 0.0) return;
        for (std::size_t li = 0; li < params.encoder.size(); ++li)
            update_block(params.encoder[li], grads.encoder[li], velocity.encoder[li], lr);
        if (grads.has_z) update_block(params.proj_z, grads.proj_z, velocity.proj_z, lr);
        if (grads.has_g) update_block(params.proj_g, grads.proj_g, velocity.proj_g, lr);
    }
};

inline void take_snapshot(ModelState& state) { state.snapshot = state.params; }

inline void reset_to_snapshot(ModelState& state, RestoreScope scope = RestoreScope::encoder_and_z) {
    if (!state.snapshot)
        throw std::logic_error("reset_to_snapshot: no snapshot taken");
    if (scope == RestoreScope::all) {
        state.params = *state.snapshot;
    } else {
        state.params.encoder = state.snapshot->encoder;
        state.params.proj_z = state.snapshot->proj_z;
    }
}

inline void ema_reset(ModelState& state) { state.ema = state.params; }

inline void ema_update(ModelState& state, double decay) {
    if (!state.ema) {
        state.ema = state.params;
        return;
    }
    auto blend = [&](Linear& e, const Linear& p) {
        for (std::size_t i = 0; i < e.w.size(); ++i) e.w[i] = decay * e.w[i] + (1.0 - decay) * p.w[i];
        for (std::size_t i = 0; i < e.b.size(); ++i) e.b[i] = decay * e.b[i] + (1.0 - decay) * p.b[i];
    };
    for (std::size_t li = 0; li < state.params.encoder.size(); ++li)
        blend(state.ema->encoder[li], state.params.encoder[li]);
    blend(state.ema->proj_z, state.params.proj_z);
    blend(state.ema->proj_g, state.params.proj_g);
}

// ---------------------------------------------------------------------------
// Checkpoints: a JSON manifest (layer names, shapes, seed, schedule position)
// followed by the raw little-endian 64-bit float arrays in declared order.
// Round-trips are bit-exact.
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kCheckpointMagic[8] = {'C', 'C', 'P', 'M', 'D', 'L', '1', '\n'};

inline void write_u64(std::ostream& os, std::uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(buf, 8);
}

inline std::uint64_t read_u64(std::istream& is) {
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

inline void write_doubles(std::ostream& os, const std::vector<double>& xs) {
    for (double x : xs) {
        std::uint64_t bits;
        std::memcpy(&bits, &x, 8);
        write_u64(os, bits);
    }
}

inline void read_doubles(std::istream& is, std::vector<double>& xs) {
    for (double& x : xs) {
        std::uint64_t bits = read_u64(is);
        std::memcpy(&x, &bits, 8);
    }
}

} // namespace detail

inline void save_checkpoint(const ModelState& state, const std::string& path,
                            long schedule_step = 0, long schedule_total = 0) {
    nlohmann::json manifest;
    manifest["input_dim"] = state.config.input_dim;
    manifest["hidden_layers"] = state.config.hidden_layers;
    manifest["embed_dim"] = state.config.embed_dim;
    manifest["num_classes"] = state.config.num_classes;
    manifest["activation"] = activation_name(state.config.activation);
    manifest["weight_decay"] = state.config.weight_decay;
    manifest["seed"] = state.init_seed;
    manifest["schedule_step"] = schedule_step;
    manifest["schedule_total"] = schedule_total;

    nlohmann::json blocks = nlohmann::json::array();
    auto declare = [&](const std::string& name, const Linear& l) {
        blocks.push_back({{"name", name}, {"rows", l.out}, {"cols", l.in}});
    };
    for (std::size_t li = 0; li < state.params.encoder.size(); ++li)
        declare("encoder" + std::to_string(li), state.params.encoder[li]);
    declare("proj_z", state.params.proj_z);
    declare("proj_g", state.params.proj_g);
    manifest["blocks"] = blocks;

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    os.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
    std::string text = manifest.dump();
    detail::write_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    auto dump_block = [&](const Linear& l) {
        detail::write_doubles(os, l.w);
        detail::write_doubles(os, l.b);
    };
    for (const auto& l : state.params.encoder) dump_block(l);
    dump_block(state.params.proj_z);
    dump_block(state.params.proj_g);
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

struct Checkpoint {
    ModelState model;
    long schedule_step = 0;
    long schedule_total = 0;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, detail::kCheckpointMagic, 8) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    std::uint64_t len = detail::read_u64(is);
    std::string text(len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(len));
    nlohmann::json manifest = nlohmann::json::parse(text);

    Checkpoint ck;
    ck.model.config.input_dim = manifest.at("input_dim").get<std::size_t>();
    ck.model.config.hidden_layers = manifest.at("hidden_layers").get<std::vector<std::size_t>>();
    ck.model.config.embed_dim = manifest.at("embed_dim").get<std::size_t>();
    ck.model.config.num_classes = manifest.at("num_classes").get<std::size_t>();
    ck.model.config.activation = activation_from_name(manifest.at("activation").get<std::string>());
    ck.model.config.weight_decay = manifest.at("weight_decay").get<double>();
    ck.model.init_seed = manifest.at("seed").get<std::uint64_t>();
    ck.schedule_step = manifest.at("schedule_step").get<long>();
    ck.schedule_total = manifest.at("schedule_total").get<long>();

    for (const auto& blk : manifest.at("blocks")) {
        Linear l = Linear::zeros(blk.at("cols").get<std::size_t>(), blk.at("rows").get<std::size_t>());
        detail::read_doubles(is, l.w);
        detail::read_doubles(is, l.b);
        std::string name = blk.at("name").get<std::string>();
        if (name == "proj_z")
            ck.model.params.proj_z = std::move(l);
        else if (name == "proj_g")
            ck.model.params.proj_g = std::move(l);
        else
            ck.model.params.encoder.push_back(std::move(l));
    }
    if (!is) throw std::runtime_error("load_checkpoint: truncated file " + path);
    return ck;
}

} // namespace ccp
