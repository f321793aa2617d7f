#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "gramreg/dataset.hpp"
#include "gramreg/errors.hpp"
#include "gramreg/gram.hpp"
#include "gramreg/network.hpp"

namespace gramreg {

struct TrainConfig {
    double base_lr = 1e-2;
    std::size_t lr_drop_epoch = 40;
    double lr_drop_factor = 10.0;
    std::size_t total_epochs = 60;
    std::size_t batch_size = 16;
    double momentum = 0.9;
    RegConfig reg;  // lambda1 = 1e-3, lambda2 = 1e-4
    std::uint64_t seed = 0;
    double step_lr[3] = {1e-2, 1e-2, 1e-3};  // cnn_lstm three-step base rates

    void validate() const {
        if (base_lr <= 0.0 || step_lr[0] <= 0.0 || step_lr[1] <= 0.0 || step_lr[2] <= 0.0)
            throw ConfigError("train: learning rates must be positive");
        if (total_epochs == 0) throw ConfigError("train: total_epochs must be at least 1");
        if (batch_size == 0) throw ConfigError("train: batch_size must be at least 1");
        if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train: momentum must be in [0,1)");
        if (lr_drop_factor <= 0.0) throw ConfigError("train: lr_drop_factor must be positive");
    }

    double lr_at(std::size_t epoch) const { return lr_at(epoch, base_lr); }
    double lr_at(std::size_t epoch, double base) const {
        return epoch >= lr_drop_epoch ? base / lr_drop_factor : base;
    }
};

/// One loss-curve row. The softmax column is the mean per-sample training
/// loss across the epoch; the gram columns are the weighted penalty terms
/// recomputed from the parameters at the end of the epoch.
struct EpochLog {
    std::size_t epoch = 0;
    std::size_t step = 0;  // 0 single-phase, 1..3 for the three-step schedule
    double lr = 0.0;
    double softmax = 0.0;
    double gram_cross = 0.0;
    double gram_l2 = 0.0;
    double total = 0.0;
};

inline std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

inline const char* loss_csv_header() { return "epoch,step,lr,softmax,gram_cross,gram_l2,total"; }

inline std::string loss_csv(const std::vector<EpochLog>& log) {
    std::string out = loss_csv_header();
    out += "\n";
    for (const auto& row : log) {
        out += std::to_string(row.epoch) + "," + std::to_string(row.step) + "," +
               format_double(row.lr) + "," + format_double(row.softmax) + "," +
               format_double(row.gram_cross) + "," + format_double(row.gram_l2) + "," +
               format_double(row.total) + "\n";
    }
    return out;
}

/// v <- momentum*v + g; w <- w - lr(epoch)*v. Frozen entries are untouched,
/// momentum buffers included.
template <typename T>
void sgd_step(NetworkState<T>& net, const Grads<T>& grads, const TrainConfig& cfg,
              std::size_t epoch) {
    const T lr = static_cast<T>(cfg.lr_at(epoch));
    const T mom = static_cast<T>(cfg.momentum);
    for (std::size_t p = 0; p < net.params.size(); ++p) {
        ParamEntry<T>& e = net.params[p];
        if (!e.trainable) continue;
        for (std::size_t i = 0; i < grads.kernels[p].numel(); ++i) {
            if (!std::isfinite(grads.kernels[p][i]))
                throw TrainingError("non-finite gradient in layer '" + e.weights.name + "'");
            e.vel_kernels[i] = mom * e.vel_kernels[i] + grads.kernels[p][i];
            e.weights.kernels[i] -= lr * e.vel_kernels[i];
        }
        for (std::size_t i = 0; i < grads.bias[p].numel(); ++i) {
            if (!std::isfinite(grads.bias[p][i]))
                throw TrainingError("non-finite gradient in layer '" + e.weights.name + "'");
            e.vel_bias[i] = mom * e.vel_bias[i] + grads.bias[p][i];
            e.weights.bias[i] -= lr * e.vel_bias[i];
        }
    }
}

namespace detail {

template <typename T>
void build_train_units(const NetworkSpec& spec, const Dataset& ds,
                       std::vector<Tensor<T>>& items, std::vector<std::size_t>& labels) {
    for (const auto& s : ds.samples) {
        if (s.split != Split::train) continue;
        if (spec.architecture == Architecture::view_cnn) {
            for (std::size_t v = 0; v < s.views.size(); ++v) {
                items.push_back(view_item<T>(s, v));
                labels.push_back(s.class_id);
            }
        } else {
            items.push_back(shape_item<T>(s));
            labels.push_back(s.class_id);
        }
    }
}

inline void check_compatible(const NetworkSpec& spec, const Dataset& ds) {
    if (ds.class_names.size() != spec.classes)
        throw ConfigError("train: dataset has " + std::to_string(ds.class_names.size()) +
                          " classes but the network expects " + std::to_string(spec.classes));
    if (ds.manifest.height != spec.input_height || ds.manifest.width != spec.input_width ||
        spec.input_channels != 1)
        throw ConfigError("train: dataset image extents do not match the network input");
    if (spec.architecture != Architecture::view_cnn && ds.manifest.views != spec.views)
        throw ConfigError("train: dataset has " + std::to_string(ds.manifest.views) +
                          " views per shape but the network expects " +
                          std::to_string(spec.views));
}

/// Shuffled mini-batch epochs over prebuilt units. The learning-rate schedule
/// runs on the epoch index local to this phase; logged epoch numbers continue
/// the network's global counter.
template <typename T>
void run_epochs(NetworkState<T>& net, const std::vector<Tensor<T>>& items,
                const std::vector<std::size_t>& labels, const TrainConfig& cfg,
                std::size_t epochs, std::size_t step_tag, std::vector<EpochLog>& log) {
    if (items.empty()) throw DomainError("train: no training samples");
    std::vector<std::size_t> order(items.size());

    for (std::size_t e = 0; e < epochs; ++e) {
        // Reshuffled from identity so an epoch depends only on the generator
        // state at its start; a reloaded checkpoint reproduces the run.
        std::iota(order.begin(), order.end(), std::size_t{0});
        net.rng.shuffle(order);
        const double lr = cfg.lr_at(e);
        double softmax_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            std::vector<Tensor<T>> batch;
            std::vector<std::size_t> batch_labels;
            for (std::size_t k = start; k < stop; ++k) {
                batch.push_back(items[order[k]]);
                batch_labels.push_back(labels[order[k]]);
            }
            auto fwd = network_forward(net, batch);
            auto sm = softmax_ce(fwd.logits, batch_labels);
            if (!std::isfinite(sm.loss))
                throw TrainingError("loss diverged at epoch " + std::to_string(net.epoch));
            auto grads = network_backward(net, fwd.cache, sm.dlogits, cfg.reg);
            sgd_step(net, grads, cfg, e);
            softmax_sum += static_cast<double>(sm.loss) * static_cast<double>(stop - start);
            seen += stop - start;
        }

        const auto gl = network_gram_loss(net, cfg.reg);
        double cross_raw = 0.0, l2_raw = 0.0;
        for (const auto& row : gl.breakdown) {
            cross_raw += row.offdiag;
            l2_raw += row.l2;
        }
        EpochLog row;
        row.epoch = static_cast<std::size_t>(net.epoch);
        row.step = step_tag;
        row.lr = lr;
        row.softmax = softmax_sum / static_cast<double>(seen);
        row.gram_cross = cfg.reg.lambda1 * cross_raw;
        row.gram_l2 = cfg.reg.lambda2 * l2_raw;
        row.total = row.softmax + row.gram_cross + row.gram_l2;
        log.push_back(row);
        ++net.epoch;
    }
}

}  // namespace detail

template <typename T>
struct TrainResult {
    NetworkState<T> net;
    std::vector<EpochLog> log;
};

/// Single-phase training from a fresh seeded initialization.
template <typename T>
TrainResult<T> train(const NetworkSpec& spec, const Dataset& ds, const TrainConfig& cfg) {
    spec.validate();
    cfg.validate();
    detail::check_compatible(spec, ds);
    TrainResult<T> r{init_network<T>(spec, cfg.seed), {}};
    std::vector<Tensor<T>> items;
    std::vector<std::size_t> labels;
    detail::build_train_units<T>(spec, ds, items, labels);
    detail::run_epochs(r.net, items, labels, cfg, cfg.total_epochs, 0, r.log);
    return r;
}

/// The cnn_lstm spec with the lstm removed: the per-view network used to
/// pretrain the shared convolutional part.
inline NetworkSpec strip_lstm(const NetworkSpec& spec) {
    NetworkSpec view = spec;
    view.architecture = Architecture::view_cnn;
    view.layers.clear();
    for (const auto& l : spec.layers)
        if (l.kind != LayerKind::lstm_cell) view.layers.push_back(l);
    view.feature_layer = view.layers.size() - 2;
    view.validate();
    return view;
}

/// Three-phase schedule: pretrain the per-view CNN, train the LSTM and
/// classifier with the copied CNN frozen, then fine-tune everything jointly.
/// Each phase uses its own base learning rate from cfg.step_lr.
template <typename T>
TrainResult<T> train_cnn_lstm_multistep(const NetworkSpec& spec, const Dataset& ds,
                                        const TrainConfig& cfg) {
    spec.validate();
    cfg.validate();
    if (spec.architecture != Architecture::cnn_lstm)
        throw ConfigError("multi-step training requires the cnn_lstm architecture");
    detail::check_compatible(spec, ds);

    const NetworkSpec view_spec = strip_lstm(spec);
    std::vector<EpochLog> log;

    NetworkState<T> pre = init_network<T>(view_spec, cfg.seed);
    {
        std::vector<Tensor<T>> items;
        std::vector<std::size_t> labels;
        detail::build_train_units<T>(view_spec, ds, items, labels);
        TrainConfig phase = cfg;
        phase.base_lr = cfg.step_lr[0];
        detail::run_epochs(pre, items, labels, phase, cfg.total_epochs, 1, log);
    }

    NetworkState<T> net = init_network<T>(spec, cfg.seed);
    const std::string classifier_name = spec.layers.back().name;
    for (const auto& src : pre.params) {
        if (src.weights.name == classifier_name) continue;
        ParamEntry<T>* dst = net.find(src.weights.name);
        if (!dst) throw StateError("multi-step: missing shared layer '" + src.weights.name + "'");
        dst->weights = src.weights;
        dst->trainable = false;
    }

    std::vector<Tensor<T>> items;
    std::vector<std::size_t> labels;
    detail::build_train_units<T>(spec, ds, items, labels);
    {
        TrainConfig phase = cfg;
        phase.base_lr = cfg.step_lr[1];
        detail::run_epochs(net, items, labels, phase, cfg.total_epochs, 2, log);
    }
    for (auto& p : net.params) p.trainable = true;
    {
        TrainConfig phase = cfg;
        phase.base_lr = cfg.step_lr[2];
        detail::run_epochs(net, items, labels, phase, cfg.total_epochs, 3, log);
    }
    return {std::move(net), std::move(log)};
}

}  // namespace gramreg
