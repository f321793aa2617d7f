#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gramreg/errors.hpp"
#include "gramreg/tensor.hpp"

namespace gramreg {

/// How a layer's kernels map onto the (N, C, S) decomposition.
enum class LayoutTag { fully_connected, conv2d, lstm_gate };

inline const char* layout_name(LayoutTag t) {
    switch (t) {
        case LayoutTag::fully_connected: return "fully_connected";
        case LayoutTag::conv2d: return "conv2d";
        case LayoutTag::lstm_gate: return "lstm_gate";
    }
    return "?";
}

/// A learnable layer's kernels as an (N, C, S) tensor: N output kernels,
/// C input channels, S spatial positions. The bias is excluded from every
/// regularization computation; it may be empty for parameters whose gate
/// bias lives on a sibling entry (recurrent LSTM matrices).
template <typename T>
struct LayerWeights {
    std::string name;
    LayoutTag layout = LayoutTag::fully_connected;
    Tensor<T> kernels;  // shape (N, C, S)
    Tensor<T> bias;     // shape (N) or empty

    std::size_t n() const { return kernels.dim(0); }
    std::size_t c() const { return kernels.dim(1); }
    std::size_t s() const { return kernels.dim(2); }

    void validate() const {
        if (kernels.rank() != 3 || n() == 0 || c() == 0 || s() == 0) {
            throw DimensionError("layer '" + name + "': kernels must be (N,C,S) with positive extents");
        }
        if ((layout == LayoutTag::fully_connected || layout == LayoutTag::lstm_gate) && s() != 1) {
            throw DimensionError("layer '" + name + "': layout " + layout_name(layout) +
                                 " requires S=1, got S=" + std::to_string(s()));
        }
        if (bias.numel() != 0 && !(bias.rank() == 1 && bias.dim(0) == n())) {
            throw DimensionError("layer '" + name + "': bias must be (N) or empty");
        }
    }
};

template <typename T>
LayerWeights<T> make_layer(std::string name, LayoutTag layout, Tensor<T> kernels, Tensor<T> bias) {
    LayerWeights<T> w{std::move(name), layout, std::move(kernels), std::move(bias)};
    w.validate();
    return w;
}

/// All kernels' weight vectors at one spatial position: N vectors of
/// dimension C. A reindexing view into the parent kernels, never a copy.
template <typename T>
class SpatialWeightGroup {
public:
    SpatialWeightGroup(const Tensor<T>& kernels, std::size_t group_index)
        : kernels_(&kernels), k_(group_index) {}
    SpatialWeightGroup(Tensor<T>&&, std::size_t) = delete;  // views must outlive nothing

    std::size_t group_index() const { return k_; }
    std::size_t size() const { return kernels_->dim(0); }    // N vectors
    std::size_t dim() const { return kernels_->dim(1); }     // each of dimension C

    /// Component c of the vector belonging to kernel i.
    T value(std::size_t i, std::size_t c) const {
        const std::size_t s = kernels_->dim(2);
        return (*kernels_)[(i * kernels_->dim(1) + c) * s + k_];
    }

    /// Inner product of the vectors of kernels i and j, accumulated over
    /// channels in ascending order.
    T dot(std::size_t i, std::size_t j) const {
        T acc{0};
        for (std::size_t c = 0; c < dim(); ++c) acc += value(i, c) * value(j, c);
        return acc;
    }

private:
    const Tensor<T>* kernels_;
    std::size_t k_;
};

/// Splits a layer into its S spatial weight groups.
template <typename T>
std::vector<SpatialWeightGroup<T>> regroup_weights(const LayerWeights<T>& layer) {
    layer.validate();
    std::vector<SpatialWeightGroup<T>> groups;
    groups.reserve(layer.s());
    for (std::size_t k = 0; k < layer.s(); ++k) groups.emplace_back(layer.kernels, k);
    return groups;
}

template <typename T>
std::vector<SpatialWeightGroup<T>> regroup_weights(LayerWeights<T>&& layer) = delete;

/// Gram matrix of one spatial group: G[i,j] = w(i,s)^T w(j,s).
template <typename T>
Tensor<T> group_gram(const SpatialWeightGroup<T>& g) {
    if (g.size() == 0) throw DomainError("group_gram: empty group");
    const std::size_t n = g.size();
    Tensor<T> gram({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) {
            const T d = g.dot(i, j);
            gram[i * n + j] = d;
            gram[j * n + i] = d;
        }
    }
    return gram;
}

/// Kernel Gram matrix: sum over spatial groups of the positive part of each
/// group's Gram matrix. Symmetric with nonnegative entries; the diagonal
/// equals the per-kernel squared norms, on which the positive-part filter is
/// a no-op.
template <typename T>
struct KernelGramMatrix {
    Tensor<T> entries;  // (N, N)

    std::size_t n() const { return entries.dim(0); }
};

template <typename T>
KernelGramMatrix<T> kernel_gram(const LayerWeights<T>& layer) {
    layer.validate();
    const std::size_t n = layer.n();
    KernelGramMatrix<T> k{Tensor<T>({n, n})};
    // Each unordered pair is computed once and mirrored, so symmetry is exact.
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) {
            T acc{0};
            for (std::size_t s = 0; s < layer.s(); ++s) {
                const SpatialWeightGroup<T> g(layer.kernels, s);
                const T d = g.dot(i, j);
                acc += d > T{0} ? d : T{0};
            }
            k.entries[i * n + j] = acc;
            k.entries[j * n + i] = acc;
        }
    }
    return k;
}

/// Sum of K over all ordered pairs (x, y) with x != y.
template <typename T>
T offdiag_sum(const KernelGramMatrix<T>& k) {
    const std::size_t n = k.n();
    T acc{0};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) acc += k.entries[i * n + j];
    return acc;
}

/// Sum of squared kernel elements (bias excluded). Equals trace(kernel_gram).
template <typename T>
T l2_sum(const LayerWeights<T>& layer) {
    layer.validate();
    T acc{0};
    for (std::size_t i = 0; i < layer.kernels.numel(); ++i)
        acc += layer.kernels[i] * layer.kernels[i];
    return acc;
}

/// Trade-off weights of the regularizer plus the layer selection rule.
/// A null filter accepts every layer, which is the default: the penalty
/// covers every learnable matrix in the network, classifier included.
struct RegConfig {
    double lambda1 = 1e-3;  // cross-kernel term
    double lambda2 = 1e-4;  // L2 term
    std::function<bool(std::string_view)> layer_filter;  // null = all layers

    bool selects(std::string_view layer_name) const {
        return !layer_filter || layer_filter(layer_name);
    }
};

/// Per-layer contribution, raw (unweighted) sums.
struct GramBreakdownRow {
    std::string layer_name;
    double offdiag = 0.0;
    double l2 = 0.0;
};

template <typename T>
struct GramLossResult {
    T total{0};
    std::vector<GramBreakdownRow> breakdown;
};

/// lambda1 * sum_l offdiag(K_l) + lambda2 * sum_l l2(l) over the selected
/// layers, with the per-layer raw sums reported for loss-curve output.
template <typename T>
GramLossResult<T> gram_loss(const std::vector<const LayerWeights<T>*>& layers,
                            const RegConfig& cfg) {
    GramLossResult<T> r;
    T cross{0};
    T l2{0};
    for (const LayerWeights<T>* layer : layers) {
        if (!cfg.selects(layer->name)) continue;
        const T layer_cross = offdiag_sum(kernel_gram(*layer));
        const T layer_l2 = l2_sum(*layer);
        cross += layer_cross;
        l2 += layer_l2;
        r.breakdown.push_back({layer->name, static_cast<double>(layer_cross),
                               static_cast<double>(layer_l2)});
    }
    r.total = static_cast<T>(cfg.lambda1) * cross + static_cast<T>(cfg.lambda2) * l2;
    return r;
}

template <typename T>
GramLossResult<T> gram_loss(const std::vector<LayerWeights<T>>& layers, const RegConfig& cfg) {
    std::vector<const LayerWeights<T>*> ptrs;
    ptrs.reserve(layers.size());
    for (const auto& layer : layers) ptrs.push_back(&layer);
    return gram_loss(ptrs, cfg);
}

/// Analytic gradient of gram_loss with respect to one layer's kernels:
///
///   d/dw(i,s) = 2*lambda1 * sum_{j != i} [w(i,s)^T w(j,s) > 0] * w(j,s)
///             + 2*lambda2 * w(i,s)
///
/// The cross term carries a factor 2 because the loss sums ordered pairs and
/// K is symmetric, so each unordered pair contributes twice. The indicator
/// uses strict inequality; an inner product of exactly 0 contributes nothing.
/// Layers rejected by the filter get a zero gradient, keeping the gradient
/// consistent with the loss for finite-difference checks.
template <typename T>
Tensor<T> gram_grad(const LayerWeights<T>& layer, const RegConfig& cfg) {
    layer.validate();
    Tensor<T> grad(layer.kernels.shape());
    if (!cfg.selects(layer.name)) return grad;
    const std::size_t n = layer.n(), c = layer.c(), s = layer.s();
    const T l1 = static_cast<T>(cfg.lambda1);
    const T l2 = static_cast<T>(cfg.lambda2);
    for (std::size_t sp = 0; sp < s; ++sp) {
        const SpatialWeightGroup<T> g(layer.kernels, sp);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                if (g.dot(i, j) > T{0}) {
                    for (std::size_t ch = 0; ch < c; ++ch)
                        grad[(i * c + ch) * s + sp] += T{2} * l1 * g.value(j, ch);
                }
            }
            for (std::size_t ch = 0; ch < c; ++ch)
                grad[(i * c + ch) * s + sp] += T{2} * l2 * g.value(i, ch);
        }
    }
    return grad;
}

}  // namespace gramreg
