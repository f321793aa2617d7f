#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "gramreg/errors.hpp"
#include "gramreg/gram.hpp"
#include "gramreg/layers.hpp"
#include "gramreg/rng.hpp"
#include "gramreg/tensor.hpp"

namespace gramreg {

enum class Architecture : std::uint8_t { view_cnn = 0, mvcnn = 1, cnn_lstm = 2 };

inline const char* architecture_name(Architecture a) {
    switch (a) {
        case Architecture::view_cnn: return "view_cnn";
        case Architecture::mvcnn: return "mvcnn";
        case Architecture::cnn_lstm: return "cnn_lstm";
    }
    return "?";
}

inline Architecture architecture_from(const std::string& s) {
    if (s == "view_cnn" || s == "view-cnn") return Architecture::view_cnn;
    if (s == "mvcnn") return Architecture::mvcnn;
    if (s == "cnn_lstm" || s == "cnn-lstm") return Architecture::cnn_lstm;
    throw ConfigError("unknown architecture '" + s + "'");
}

enum class LayerKind : std::uint8_t {
    conv2d = 0,
    relu = 1,
    fully_connected = 2,
    view_max_pool = 3,
    lstm_cell = 4,
};

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    std::string name;                        // empty for parameterless kinds
    std::size_t out = 0;                     // conv: kernels; fc: width; lstm: hidden
    std::size_t kh = 0, kw = 0, stride = 1;  // conv only
};

inline LayerSpec conv_layer(std::string name, std::size_t out, std::size_t k,
                            std::size_t stride) {
    return {LayerKind::conv2d, std::move(name), out, k, k, stride};
}
inline LayerSpec relu_layer() { return {LayerKind::relu, "", 0, 0, 0, 1}; }
inline LayerSpec fc_layer(std::string name, std::size_t out) {
    return {LayerKind::fully_connected, std::move(name), out, 0, 0, 1};
}
inline LayerSpec pool_layer() { return {LayerKind::view_max_pool, "", 0, 0, 0, 1}; }
inline LayerSpec lstm_layer(std::string name, std::size_t hidden) {
    return {LayerKind::lstm_cell, std::move(name), hidden, 0, 0, 1};
}

/// Static description of one of the three view architectures. The last layer
/// is always the classification layer; the layer before it produces the
/// retrieval feature.
struct NetworkSpec {
    Architecture architecture = Architecture::view_cnn;
    std::size_t views = 8;
    std::size_t input_channels = 1;
    std::size_t input_height = 32;
    std::size_t input_width = 32;
    std::size_t classes = 6;
    std::vector<LayerSpec> layers;
    std::size_t feature_layer = 0;

    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

    std::size_t classifier_index() const { return layers.size() - 1; }

    std::size_t find_kind(LayerKind k) const {
        for (std::size_t i = 0; i < layers.size(); ++i)
            if (layers[i].kind == k) return i;
        return npos;
    }

    std::size_t count_kind(LayerKind k) const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.kind == k ? 1 : 0;
        return n;
    }

    void validate() const {
        if (layers.size() < 2) throw ConfigError("network: need at least feature and classifier layers");
        if (views == 0 || classes < 2 || input_channels == 0 || input_height == 0 ||
            input_width == 0)
            throw ConfigError("network: extents must be positive and classes >= 2");
        const LayerSpec& last = layers.back();
        if (last.kind != LayerKind::fully_connected || last.out != classes)
            throw ConfigError("network: last layer must be the fully connected classifier");
        if (feature_layer != layers.size() - 2)
            throw ConfigError("network: feature layer must immediately precede the classifier");
        for (const auto& l : layers) {
            const bool parameterized = l.kind == LayerKind::conv2d ||
                                       l.kind == LayerKind::fully_connected ||
                                       l.kind == LayerKind::lstm_cell;
            if (parameterized && (l.name.empty() || l.out == 0))
                throw ConfigError("network: parameterized layers need a name and positive width");
            if (l.kind == LayerKind::conv2d && (l.kh == 0 || l.kw == 0 || l.stride == 0))
                throw ConfigError("network: conv layer '" + l.name + "' has degenerate geometry");
        }
        const std::size_t pools = count_kind(LayerKind::view_max_pool);
        const std::size_t lstms = count_kind(LayerKind::lstm_cell);
        switch (architecture) {
            case Architecture::view_cnn:
                if (pools != 0 || lstms != 0)
                    throw ConfigError("view_cnn: no view pooling or lstm layers allowed");
                break;
            case Architecture::mvcnn:
                if (pools != 1 || lstms != 0)
                    throw ConfigError("mvcnn: exactly one view_max_pool layer required");
                if (find_kind(LayerKind::view_max_pool) >= feature_layer)
                    throw ConfigError("mvcnn: view pool must come before the feature layer");
                break;
            case Architecture::cnn_lstm:
                if (pools != 0 || lstms != 1)
                    throw ConfigError("cnn_lstm: exactly one lstm_cell layer required");
                if (find_kind(LayerKind::lstm_cell) != feature_layer)
                    throw ConfigError("cnn_lstm: the lstm_cell must be the feature layer");
                break;
        }
    }
};

/// The small reference backbone used throughout:
/// conv(8, 4x4, stride 2) -> relu -> conv(16, 3x3, stride 2) -> relu
///   [-> view max pool for mvcnn]
/// -> fc(64) -> relu -> fc(32) [-> lstm(32) for cnn_lstm] -> fc(classes).
inline NetworkSpec desk_spec(Architecture arch, std::size_t classes = 6, std::size_t views = 8,
                             std::size_t size = 32) {
    NetworkSpec s;
    s.architecture = arch;
    s.views = views;
    s.classes = classes;
    s.input_height = s.input_width = size;
    s.layers = {conv_layer("conv1", 8, 4, 2), relu_layer(), conv_layer("conv2", 16, 3, 2),
                relu_layer()};
    if (arch == Architecture::mvcnn) s.layers.push_back(pool_layer());
    s.layers.push_back(fc_layer("fc1", 64));
    s.layers.push_back(relu_layer());
    s.layers.push_back(fc_layer("fc2", 32));
    if (arch == Architecture::cnn_lstm) s.layers.push_back(lstm_layer("lstm", 32));
    s.layers.push_back(fc_layer("classifier", classes));
    s.feature_layer = s.layers.size() - 2;
    s.validate();
    return s;
}

template <typename T>
struct ParamEntry {
    LayerWeights<T> weights;
    Tensor<T> vel_kernels;  // momentum buffer, shape of kernels
    Tensor<T> vel_bias;     // momentum buffer, shape of bias (empty if no bias)
    bool trainable = true;
};

/// Fixed order of the eight LSTM matrices wherever they are enumerated.
inline const char* const kLstmMatrixNames[8] = {"w_gx", "w_ix", "w_fx", "w_ox",
                                                "w_gh", "w_ih", "w_fh", "w_oh"};

template <typename T>
struct NetworkState {
    NetworkSpec spec;
    std::vector<ParamEntry<T>> params;
    std::vector<std::size_t> layer_param;  // per layer: params index or npos
    std::size_t lstm_param_base = NetworkSpec::npos;
    std::uint64_t epoch = 0;
    Rng rng{0};

    ParamEntry<T>* find(const std::string& name) {
        for (auto& p : params)
            if (p.weights.name == name) return &p;
        return nullptr;
    }
    const ParamEntry<T>* find(const std::string& name) const {
        for (const auto& p : params)
            if (p.weights.name == name) return &p;
        return nullptr;
    }
};

namespace detail {

template <typename T>
ParamEntry<T> init_entry(std::string name, LayoutTag layout, std::vector<std::size_t> kshape,
                         std::size_t bias_n, std::size_t fan_in, std::size_t fan_out,
                         std::uint64_t stream_seed) {
    Rng rng(stream_seed);
    Tensor<T> kernels(kshape);
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (std::size_t i = 0; i < kernels.numel(); ++i)
        kernels[i] = static_cast<T>(rng.uniform(-limit, limit));
    Tensor<T> bias = bias_n ? Tensor<T>({bias_n}) : Tensor<T>{};
    ParamEntry<T> e{make_layer<T>(std::move(name), layout, std::move(kernels), std::move(bias)),
                   Tensor<T>(kshape), bias_n ? Tensor<T>({bias_n}) : Tensor<T>{}, true};
    return e;
}

}  // namespace detail

/// Builds parameter storage for a spec with seeded Xavier-uniform weights and
/// zero biases. Each parameter tensor draws from its own derived stream, so
/// layer initializations are independent of one another.
template <typename T>
NetworkState<T> init_network(const NetworkSpec& spec, std::uint64_t seed) {
    spec.validate();
    NetworkState<T> net;
    net.spec = spec;
    net.rng = Rng(Rng::derive(seed, 0));
    net.layer_param.assign(spec.layers.size(), NetworkSpec::npos);

    std::size_t ch = spec.input_channels, h = spec.input_height, w = spec.input_width;
    bool flat = false;
    std::size_t width = 0;  // meaningful once flat
    std::uint64_t stream = 1;

    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        const LayerSpec& l = spec.layers[li];
        switch (l.kind) {
            case LayerKind::conv2d: {
                if (flat) throw ConfigError("network: conv layer after flattening");
                const std::size_t oh = conv_out_extent(h, l.kh, l.stride, "height");
                const std::size_t ow = conv_out_extent(w, l.kw, l.stride, "width");
                net.layer_param[li] = net.params.size();
                net.params.push_back(detail::init_entry<T>(
                    l.name, LayoutTag::conv2d, {l.out, ch, l.kh * l.kw}, l.out, ch * l.kh * l.kw,
                    l.out * l.kh * l.kw, Rng::derive(seed, stream++)));
                ch = l.out;
                h = oh;
                w = ow;
                break;
            }
            case LayerKind::relu:
            case LayerKind::view_max_pool:
                break;
            case LayerKind::fully_connected: {
                const std::size_t in = flat ? width : ch * h * w;
                net.layer_param[li] = net.params.size();
                net.params.push_back(detail::init_entry<T>(l.name, LayoutTag::fully_connected,
                                                           {l.out, in, 1}, l.out, in, l.out,
                                                           Rng::derive(seed, stream++)));
                flat = true;
                width = l.out;
                break;
            }
            case LayerKind::lstm_cell: {
                if (!flat) throw ConfigError("network: lstm input must be a flat feature");
                net.layer_param[li] = net.params.size();
                net.lstm_param_base = net.params.size();
                const std::size_t hidden = l.out;
                for (std::size_t m = 0; m < 8; ++m) {
                    const bool x_side = m < 4;
                    net.params.push_back(detail::init_entry<T>(
                        l.name + "." + kLstmMatrixNames[m], LayoutTag::lstm_gate,
                        {hidden, x_side ? width : hidden, 1}, x_side ? hidden : 0,
                        x_side ? width : hidden, hidden, Rng::derive(seed, stream++)));
                }
                flat = true;
                width = hidden;
                break;
            }
        }
    }
    for (const auto& p : net.params) p.weights.validate();
    return net;
}

template <typename T>
std::size_t feature_dim(const NetworkSpec& spec) {
    return spec.layers[spec.feature_layer].out;
}

/// Copies the eight LSTM matrices out of the parameter table in their fixed
/// order so the cell routines can run against one struct.
template <typename T>
LstmCellWeights<T> assemble_lstm(const NetworkState<T>& net) {
    if (net.lstm_param_base == NetworkSpec::npos)
        throw StateError("network has no lstm parameters");
    const std::size_t b = net.lstm_param_base;
    LstmCellWeights<T> w{net.params[b + 0].weights, net.params[b + 1].weights,
                         net.params[b + 2].weights, net.params[b + 3].weights,
                         net.params[b + 4].weights, net.params[b + 5].weights,
                         net.params[b + 6].weights, net.params[b + 7].weights};
    w.validate();
    return w;
}

/// Per-parameter gradient accumulators, parallel to NetworkState::params.
template <typename T>
struct Grads {
    std::vector<Tensor<T>> kernels;
    std::vector<Tensor<T>> bias;

    static Grads zero_like(const NetworkState<T>& net) {
        Grads g;
        for (const auto& p : net.params) {
            g.kernels.push_back(Tensor<T>(p.weights.kernels.shape()));
            g.bias.push_back(p.weights.bias.numel() ? Tensor<T>({p.weights.bias.numel()})
                                                    : Tensor<T>{});
        }
        return g;
    }
};

template <typename T>
struct SegmentCache {
    std::vector<Tensor<T>> inputs;                      // tensor fed to each layer
    std::vector<std::vector<std::size_t>> fed_shape;    // shape before any flatten
    Tensor<T> output;
};

template <typename T>
struct ForwardCache {
    bool valid = false;
    std::size_t batch = 0;
    std::vector<std::vector<SegmentCache<T>>> heads;     // per sample, per view
    std::vector<SegmentCache<T>> tails;                  // mvcnn: pooled-to-feature segment
    std::vector<std::vector<std::size_t>> pool_argmax;   // mvcnn: per sample
    std::vector<std::vector<std::size_t>> pooled_shape;  // mvcnn: per sample
    std::vector<std::vector<LstmStep<T>>> lstm_steps;    // cnn_lstm: per sample, per view
    std::vector<std::vector<Tensor<T>>> lstm_h;          // cnn_lstm: h(0..V)
    std::vector<std::vector<Tensor<T>>> lstm_s;          // cnn_lstm: s(0..V)
    Tensor<T> features;                                  // (B, D)
    Tensor<T> logits;                                    // (B, classes)
};

template <typename T>
struct ForwardResult {
    Tensor<T> logits;
    Tensor<T> features;
    ForwardCache<T> cache;
};

namespace detail {

template <typename T>
SegmentCache<T> run_segment(const NetworkState<T>& net, std::size_t first, std::size_t last,
                            Tensor<T> x) {
    SegmentCache<T> c;
    for (std::size_t li = first; li < last; ++li) {
        const LayerSpec& l = net.spec.layers[li];
        c.fed_shape.push_back(x.shape());
        switch (l.kind) {
            case LayerKind::conv2d: {
                c.inputs.push_back(std::move(x));
                x = conv2d_forward(net.params[net.layer_param[li]].weights, c.inputs.back(), l.kh,
                                   l.kw, l.stride);
                break;
            }
            case LayerKind::relu: {
                c.inputs.push_back(std::move(x));
                x = relu_forward(c.inputs.back());
                break;
            }
            case LayerKind::fully_connected: {
                if (x.rank() != 1) x = x.reshape({x.numel()});
                c.inputs.push_back(std::move(x));
                x = fc_forward(net.params[net.layer_param[li]].weights, c.inputs.back());
                break;
            }
            default:
                throw StateError("network: layer kind cannot run inside a straight segment");
        }
    }
    c.output = std::move(x);
    return c;
}

template <typename T>
void accumulate_param(Grads<T>& grads, std::size_t p, const Tensor<T>& dk, const Tensor<T>& db) {
    for (std::size_t i = 0; i < dk.numel(); ++i) grads.kernels[p][i] += dk[i];
    for (std::size_t i = 0; i < grads.bias[p].numel(); ++i) grads.bias[p][i] += db[i];
}

template <typename T>
Tensor<T> segment_backward(const NetworkState<T>& net, std::size_t first, std::size_t last,
                           const SegmentCache<T>& c, Tensor<T> dy, Grads<T>& grads) {
    for (std::size_t li = last; li-- > first;) {
        const LayerSpec& l = net.spec.layers[li];
        const std::size_t slot = li - first;
        switch (l.kind) {
            case LayerKind::conv2d: {
                auto g = conv2d_backward(net.params[net.layer_param[li]].weights, c.inputs[slot],
                                         dy, l.kh, l.kw, l.stride);
                accumulate_param(grads, net.layer_param[li], g.kernels, g.bias);
                dy = std::move(g.input);
                break;
            }
            case LayerKind::relu:
                dy = relu_backward(c.inputs[slot], dy);
                break;
            case LayerKind::fully_connected: {
                auto g = fc_backward(net.params[net.layer_param[li]].weights, c.inputs[slot], dy);
                accumulate_param(grads, net.layer_param[li], g.kernels, g.bias);
                dy = std::move(g.input);
                break;
            }
            default:
                throw StateError("network: layer kind cannot run inside a straight segment");
        }
        if (dy.shape() != c.fed_shape[slot]) dy = dy.reshape(c.fed_shape[slot]);
    }
    return dy;
}

template <typename T>
void check_view_item(const NetworkSpec& spec, const Tensor<T>& item) {
    if (item.rank() != 3 || item.dim(0) != spec.input_channels ||
        item.dim(1) != spec.input_height || item.dim(2) != spec.input_width)
        throw DimensionError("network_forward: view image shape " +
                             Tensor<T>::shape_string(item.shape()) + " does not match spec");
}

}  // namespace detail

/// Runs the batch through the architecture. view_cnn items are single views
/// (C,H,W); mvcnn and cnn_lstm items are whole shapes (V,C,H,W). Returns
/// logits, retrieval features, and the caches backward needs.
template <typename T>
ForwardResult<T> network_forward(const NetworkState<T>& net, const std::vector<Tensor<T>>& items) {
    const NetworkSpec& spec = net.spec;
    const std::size_t b = items.size();
    if (b == 0) throw DomainError("network_forward: empty batch");
    const std::size_t cls = spec.classifier_index();
    const std::size_t d = feature_dim<T>(spec);

    ForwardCache<T> cache;
    cache.batch = b;
    cache.heads.resize(b);
    Tensor<T> features({b, d});

    auto store_feature = [&](std::size_t row, const Tensor<T>& f) {
        if (f.numel() != d) throw DimensionError("network_forward: feature width mismatch");
        for (std::size_t i = 0; i < d; ++i) features[row * d + i] = f[i];
    };

    switch (spec.architecture) {
        case Architecture::view_cnn: {
            for (std::size_t s = 0; s < b; ++s) {
                detail::check_view_item(spec, items[s]);
                cache.heads[s].push_back(detail::run_segment(net, 0, cls, items[s]));
                store_feature(s, cache.heads[s][0].output);
            }
            break;
        }
        case Architecture::mvcnn: {
            const std::size_t pool = spec.find_kind(LayerKind::view_max_pool);
            cache.tails.resize(b);
            cache.pool_argmax.resize(b);
            cache.pooled_shape.resize(b);
            for (std::size_t s = 0; s < b; ++s) {
                const Tensor<T>& item = items[s];
                if (item.rank() != 4 || item.dim(0) != spec.views)
                    throw DomainError("network_forward: expected " + std::to_string(spec.views) +
                                      " views per shape");
                const std::size_t view_sz = item.numel() / spec.views;
                Tensor<T> stacked;
                for (std::size_t v = 0; v < spec.views; ++v) {
                    Tensor<T> view({spec.input_channels, spec.input_height, spec.input_width});
                    if (view.numel() != view_sz)
                        throw DimensionError("network_forward: view extents do not match spec");
                    std::copy(item.data().begin() + v * view_sz,
                              item.data().begin() + (v + 1) * view_sz, view.data().begin());
                    cache.heads[s].push_back(detail::run_segment(net, 0, pool, std::move(view)));
                    const Tensor<T>& out = cache.heads[s].back().output;
                    if (v == 0) {
                        cache.pooled_shape[s] = out.shape();
                        stacked = Tensor<T>({spec.views, out.numel()});
                    }
                    std::copy(out.data().begin(), out.data().end(),
                              stacked.data().begin() + v * out.numel());
                }
                auto pooled = view_max_pool(stacked);
                cache.pool_argmax[s] = std::move(pooled.argmax);
                cache.tails[s] = detail::run_segment(net, pool + 1, cls,
                                                     pooled.pooled.reshape(cache.pooled_shape[s]));
                store_feature(s, cache.tails[s].output);
            }
            break;
        }
        case Architecture::cnn_lstm: {
            const std::size_t lstm = spec.feature_layer;
            const auto w = assemble_lstm(net);
            cache.lstm_steps.resize(b);
            cache.lstm_h.resize(b);
            cache.lstm_s.resize(b);
            for (std::size_t s = 0; s < b; ++s) {
                const Tensor<T>& item = items[s];
                if (item.rank() != 4 || item.dim(0) != spec.views)
                    throw DomainError("network_forward: expected " + std::to_string(spec.views) +
                                      " views per shape");
                const std::size_t view_sz = item.numel() / spec.views;
                cache.lstm_h[s].push_back(Tensor<T>({w.hidden()}));
                cache.lstm_s[s].push_back(Tensor<T>({w.hidden()}));
                for (std::size_t v = 0; v < spec.views; ++v) {
                    Tensor<T> view({spec.input_channels, spec.input_height, spec.input_width});
                    if (view.numel() != view_sz)
                        throw DimensionError("network_forward: view extents do not match spec");
                    std::copy(item.data().begin() + v * view_sz,
                              item.data().begin() + (v + 1) * view_sz, view.data().begin());
                    cache.heads[s].push_back(detail::run_segment(net, 0, lstm, std::move(view)));
                    auto st = lstm_cell_step(w, cache.heads[s].back().output,
                                             cache.lstm_h[s].back(), cache.lstm_s[s].back());
                    cache.lstm_h[s].push_back(st.h);
                    cache.lstm_s[s].push_back(st.s);
                    cache.lstm_steps[s].push_back(std::move(st));
                }
                store_feature(s, cache.lstm_h[s].back());
            }
            break;
        }
    }

    Tensor<T> logits = fc_forward(net.params[net.layer_param[cls]].weights, features);
    cache.features = features;
    cache.logits = logits;
    cache.valid = true;
    return {std::move(logits), std::move(features), std::move(cache)};
}

/// Backward pass over a cached forward. Accumulates data-loss gradients in a
/// fixed sample order, then adds the regularizer gradient for every selected
/// parameter, so the result is the gradient of L_total.
template <typename T>
Grads<T> network_backward(const NetworkState<T>& net, const ForwardCache<T>& cache,
                          const Tensor<T>& dlogits, const RegConfig& reg) {
    if (!cache.valid) throw StateError("network_backward called before network_forward");
    const NetworkSpec& spec = net.spec;
    const std::size_t cls = spec.classifier_index();
    const std::size_t d = feature_dim<T>(spec);
    auto grads = Grads<T>::zero_like(net);

    auto cg = fc_backward(net.params[net.layer_param[cls]].weights, cache.features, dlogits);
    detail::accumulate_param(grads, net.layer_param[cls], cg.kernels, cg.bias);

    auto feature_grad_row = [&](std::size_t s) {
        Tensor<T> row({d});
        for (std::size_t i = 0; i < d; ++i) row[i] = cg.input[s * d + i];
        return row;
    };

    switch (spec.architecture) {
        case Architecture::view_cnn: {
            for (std::size_t s = 0; s < cache.batch; ++s)
                detail::segment_backward(net, 0, cls, cache.heads[s][0], feature_grad_row(s),
                                         grads);
            break;
        }
        case Architecture::mvcnn: {
            const std::size_t pool = spec.find_kind(LayerKind::view_max_pool);
            for (std::size_t s = 0; s < cache.batch; ++s) {
                Tensor<T> dtail = detail::segment_backward(net, pool + 1, cls, cache.tails[s],
                                                           feature_grad_row(s), grads);
                Tensor<T> dstack = view_pool_backward(dtail.reshape({dtail.numel()}),
                                                      cache.pool_argmax[s], spec.views);
                const std::size_t view_out = dtail.numel();
                for (std::size_t v = 0; v < spec.views; ++v) {
                    Tensor<T> dview(cache.pooled_shape[s]);
                    std::copy(dstack.data().begin() + v * view_out,
                              dstack.data().begin() + (v + 1) * view_out, dview.data().begin());
                    detail::segment_backward(net, 0, pool, cache.heads[s][v], std::move(dview),
                                             grads);
                }
            }
            break;
        }
        case Architecture::cnn_lstm: {
            const std::size_t lstm = spec.feature_layer;
            const auto w = assemble_lstm(net);
            auto lacc = LstmGrads<T>::zero_like(w);
            for (std::size_t s = 0; s < cache.batch; ++s) {
                Tensor<T> dh = feature_grad_row(s);
                Tensor<T> ds({w.hidden()});
                for (std::size_t v = spec.views; v-- > 0;) {
                    auto back = lstm_cell_backward(w, cache.heads[s][v].output, cache.lstm_h[s][v],
                                                   cache.lstm_s[s][v], cache.lstm_steps[s][v], dh,
                                                   ds, lacc);
                    detail::segment_backward(net, 0, lstm, cache.heads[s][v], std::move(back.dx),
                                             grads);
                    dh = std::move(back.dh_prev);
                    ds = std::move(back.ds_prev);
                }
            }
            const std::size_t base = net.lstm_param_base;
            const Tensor<T>* dk[8] = {&lacc.k_gx, &lacc.k_ix, &lacc.k_fx, &lacc.k_ox,
                                      &lacc.k_gh, &lacc.k_ih, &lacc.k_fh, &lacc.k_oh};
            const Tensor<T>* db[4] = {&lacc.b_g, &lacc.b_i, &lacc.b_f, &lacc.b_o};
            for (std::size_t m = 0; m < 8; ++m) {
                for (std::size_t i = 0; i < dk[m]->numel(); ++i)
                    grads.kernels[base + m][i] += (*dk[m])[i];
                if (m < 4)
                    for (std::size_t i = 0; i < db[m]->numel(); ++i)
                        grads.bias[base + m][i] += (*db[m])[i];
            }
            break;
        }
    }

    if (reg.lambda1 != 0.0 || reg.lambda2 != 0.0) {
        for (std::size_t p = 0; p < net.params.size(); ++p) {
            if (!reg.selects(net.params[p].weights.name)) continue;
            Tensor<T> gg = gram_grad(net.params[p].weights, reg);
            for (std::size_t i = 0; i < gg.numel(); ++i) grads.kernels[p][i] += gg[i];
        }
    }
    return grads;
}

/// Gram penalty over every selected parameter of the network.
template <typename T>
GramLossResult<T> network_gram_loss(const NetworkState<T>& net, const RegConfig& reg) {
    std::vector<const LayerWeights<T>*> layers;
    for (const auto& p : net.params) layers.push_back(&p.weights);
    return gram_loss(layers, reg);
}

}  // namespace gramreg
