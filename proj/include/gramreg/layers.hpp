#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "gramreg/errors.hpp"
#include "gramreg/gram.hpp"
#include "gramreg/tensor.hpp"

namespace gramreg {

// ---------------------------------------------------------------------------
// Fully connected: y = x W^T + b with kernels stored as (N, C, 1).
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> fc_forward(const LayerWeights<T>& w, const Tensor<T>& x) {
    const bool batched = x.rank() == 2;
    if (!batched && x.rank() != 1) throw DimensionError("fc_forward: input must be (C) or (B,C)");
    const std::size_t b = batched ? x.dim(0) : 1;
    const std::size_t c = batched ? x.dim(1) : x.dim(0);
    const std::size_t n = w.n();
    if (c != w.c())
        throw DimensionError("fc_forward '" + w.name + "': input dim " + std::to_string(c) +
                             " vs C=" + std::to_string(w.c()));
    Tensor<T> y(batched ? std::vector<std::size_t>{b, n} : std::vector<std::size_t>{n});
    const T* px = x.data().data();
    const T* pw = w.kernels.data().data();
    T* py = y.data().data();
    for (std::size_t row = 0; row < b; ++row) {
        for (std::size_t out = 0; out < n; ++out) {
            T acc = w.bias.numel() ? w.bias[out] : T{0};
            const T* wrow = pw + out * c;
            const T* xrow = px + row * c;
            for (std::size_t ch = 0; ch < c; ++ch) acc += xrow[ch] * wrow[ch];
            py[row * n + out] = acc;
        }
    }
    return y;
}

template <typename T>
struct FcGrads {
    Tensor<T> input;    // same shape as x
    Tensor<T> kernels;  // (N, C, 1)
    Tensor<T> bias;     // (N)
};

template <typename T>
FcGrads<T> fc_backward(const LayerWeights<T>& w, const Tensor<T>& x, const Tensor<T>& dy) {
    const bool batched = x.rank() == 2;
    const std::size_t b = batched ? x.dim(0) : 1;
    const std::size_t c = batched ? x.dim(1) : x.dim(0);
    const std::size_t n = w.n();
    FcGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(w.kernels.shape()), Tensor<T>({n})};
    const T* px = x.data().data();
    const T* pw = w.kernels.data().data();
    const T* pdy = dy.data().data();
    for (std::size_t row = 0; row < b; ++row) {
        const T* xrow = px + row * c;
        const T* dyrow = pdy + row * n;
        T* dxrow = g.input.data().data() + row * c;
        for (std::size_t out = 0; out < n; ++out) {
            const T d = dyrow[out];
            const T* wrow = pw + out * c;
            T* dwrow = g.kernels.data().data() + out * c;
            for (std::size_t ch = 0; ch < c; ++ch) {
                dxrow[ch] += d * wrow[ch];
                dwrow[ch] += d * xrow[ch];
            }
            g.bias[out] += d;
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// 2-D convolution (cross-correlation), no padding. Kernels (N, C, kh*kw)
// with spatial index s = ky*kw + kx; inputs (C, H, W) or (B, C, H, W).
// ---------------------------------------------------------------------------

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride,
                                   const char* what) {
    if (k > in)
        throw DimensionError(std::string("conv2d: kernel ") + what + " exceeds input");
    if ((in - k) % stride != 0)
        throw DimensionError(std::string("conv2d: non-integral output ") + what +
                             " for input " + std::to_string(in) + ", kernel " + std::to_string(k) +
                             ", stride " + std::to_string(stride));
    return (in - k) / stride + 1;
}

template <typename T>
Tensor<T> conv2d_forward(const LayerWeights<T>& w, const Tensor<T>& x, std::size_t kh,
                         std::size_t kw, std::size_t stride) {
    if (x.rank() == 4) {
        const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
        const std::size_t oh = conv_out_extent(h, kh, stride, "height");
        const std::size_t ow = conv_out_extent(wd, kw, stride, "width");
        Tensor<T> y({b, w.n(), oh, ow});
        const std::size_t in_sz = c * h * wd, out_sz = w.n() * oh * ow;
        for (std::size_t s = 0; s < b; ++s) {
            Tensor<T> xi({c, h, wd});
            std::copy(x.data().begin() + s * in_sz, x.data().begin() + (s + 1) * in_sz,
                      xi.data().begin());
            auto yi = conv2d_forward(w, xi, kh, kw, stride);
            std::copy(yi.data().begin(), yi.data().end(), y.data().begin() + s * out_sz);
        }
        return y;
    }
    if (x.rank() != 3) throw DimensionError("conv2d_forward: input must be (C,H,W) or (B,C,H,W)");
    const std::size_t c = x.dim(0), h = x.dim(1), wd = x.dim(2);
    if (c != w.c())
        throw DimensionError("conv2d_forward '" + w.name + "': input channels " +
                             std::to_string(c) + " vs C=" + std::to_string(w.c()));
    if (w.s() != kh * kw) throw DimensionError("conv2d_forward: kernel extent mismatch");
    const std::size_t oh = conv_out_extent(h, kh, stride, "height");
    const std::size_t ow = conv_out_extent(wd, kw, stride, "width");
    const std::size_t n = w.n(), s_total = kh * kw;
    Tensor<T> y({n, oh, ow});
    const T* px = x.data().data();
    const T* pw = w.kernels.data().data();
    T* py = y.data().data();
    for (std::size_t out = 0; out < n; ++out) {
        const T bias = w.bias.numel() ? w.bias[out] : T{0};
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                T acc = bias;
                // Summation order fixed: channels, then kernel rows, then cols.
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const T* wbase = pw + (out * c + ch) * s_total;
                    const T* xbase = px + ch * h * wd;
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        const T* xrow = xbase + (oy * stride + ky) * wd + ox * stride;
                        const T* wrow = wbase + ky * kw;
                        for (std::size_t kx = 0; kx < kw; ++kx) acc += wrow[kx] * xrow[kx];
                    }
                }
                py[(out * oh + oy) * ow + ox] = acc;
            }
        }
    }
    return y;
}

template <typename T>
struct ConvGrads {
    Tensor<T> input;    // (C, H, W)
    Tensor<T> kernels;  // (N, C, kh*kw)
    Tensor<T> bias;     // (N)
};

template <typename T>
ConvGrads<T> conv2d_backward(const LayerWeights<T>& w, const Tensor<T>& x, const Tensor<T>& dy,
                             std::size_t kh, std::size_t kw, std::size_t stride) {
    const std::size_t c = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const std::size_t n = w.n(), s_total = kh * kw;
    const std::size_t oh = dy.dim(1), ow = dy.dim(2);
    ConvGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(w.kernels.shape()), Tensor<T>({n})};
    const T* px = x.data().data();
    const T* pw = w.kernels.data().data();
    const T* pdy = dy.data().data();
    for (std::size_t out = 0; out < n; ++out) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const T d = pdy[(out * oh + oy) * ow + ox];
                g.bias[out] += d;
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const T* wbase = pw + (out * c + ch) * s_total;
                    T* dwbase = g.kernels.data().data() + (out * c + ch) * s_total;
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        const std::size_t iy = oy * stride + ky;
                        const T* xrow = px + (ch * h + iy) * wd + ox * stride;
                        T* dxrow = g.input.data().data() + (ch * h + iy) * wd + ox * stride;
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            dwbase[ky * kw + kx] += d * xrow[kx];
                            dxrow[kx] += d * wbase[ky * kw + kx];
                        }
                    }
                }
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// ReLU. Subgradient at 0 is 0.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
    return relu(x);
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
    detail::require_same_shape(x, dy, "relu_backward");
    Tensor<T> dx(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) dx[i] = x[i] > T{0} ? dy[i] : T{0};
    return dx;
}

// ---------------------------------------------------------------------------
// View aggregation over axis 0 of a (V, ...) tensor.
// ---------------------------------------------------------------------------

template <typename T>
struct ViewPool {
    Tensor<T> pooled;                 // input shape minus the view axis
    std::vector<std::size_t> argmax;  // winning view per element, lowest on ties
};

template <typename T>
ViewPool<T> view_max_pool(const Tensor<T>& views) {
    if (views.rank() == 0 || views.dim(0) == 0) throw DomainError("view_max_pool: no views");
    auto r = max(views, 0);
    return {std::move(r.values), std::move(r.argmax)};
}

/// Routes the pooled gradient back to the winning view per element.
template <typename T>
Tensor<T> view_pool_backward(const Tensor<T>& dpooled, const std::vector<std::size_t>& argmax,
                             std::size_t views) {
    std::vector<std::size_t> shape{views};
    for (std::size_t d : dpooled.shape()) shape.push_back(d);
    Tensor<T> dx(shape);
    const std::size_t inner = dpooled.numel();
    for (std::size_t i = 0; i < inner; ++i) dx[argmax[i] * inner + i] = dpooled[i];
    return dx;
}

template <typename T>
Tensor<T> view_mean(const Tensor<T>& views) {
    if (views.rank() == 0 || views.dim(0) == 0) throw DomainError("view_mean: no views");
    return mean(views, 0);
}

// ---------------------------------------------------------------------------
// LSTM cell.
//
//   g = tanh(Wgx x + Wgh h' + bg)     s = g*i + s'*f
//   i = sigm(Wix x + Wih h' + bi)     h = tanh(s)*o
//   f = sigm(Wfx x + Wfh h' + bf)
//   o = sigm(Wox x + Woh h' + bo)
//
// The four x-side matrices carry the gate biases; the recurrent matrices
// have none.
// ---------------------------------------------------------------------------

template <typename T>
struct LstmCellWeights {
    LayerWeights<T> w_gx, w_ix, w_fx, w_ox;  // (hidden, input, 1), bias = gate bias
    LayerWeights<T> w_gh, w_ih, w_fh, w_oh;  // (hidden, hidden, 1), no bias

    std::size_t hidden() const { return w_gx.n(); }
    std::size_t input() const { return w_gx.c(); }

    void validate() const {
        const std::size_t hd = hidden(), in = input();
        for (const LayerWeights<T>* m : {&w_gx, &w_ix, &w_fx, &w_ox}) {
            m->validate();
            if (m->n() != hd || m->c() != in || m->bias.numel() != hd)
                throw DimensionError("lstm: x-side matrix '" + m->name + "' dims inconsistent");
        }
        for (const LayerWeights<T>* m : {&w_gh, &w_ih, &w_fh, &w_oh}) {
            m->validate();
            if (m->n() != hd || m->c() != hd)
                throw DimensionError("lstm: recurrent matrix '" + m->name + "' dims inconsistent");
        }
    }

    std::vector<const LayerWeights<T>*> matrices() const {
        return {&w_gx, &w_ix, &w_fx, &w_ox, &w_gh, &w_ih, &w_fh, &w_oh};
    }
    std::vector<LayerWeights<T>*> matrices() {
        return {&w_gx, &w_ix, &w_fx, &w_ox, &w_gh, &w_ih, &w_fh, &w_oh};
    }
};

template <typename T>
struct LstmStep {
    Tensor<T> g, i, f, o;  // gate outputs
    Tensor<T> s, h;        // cell and hidden state
    Tensor<T> tanh_s;
};

template <typename T>
LstmStep<T> lstm_cell_step(const LstmCellWeights<T>& w, const Tensor<T>& x_t,
                           const Tensor<T>& h_prev, const Tensor<T>& s_prev) {
    const std::size_t hd = w.hidden();
    if (x_t.numel() != w.input() || h_prev.numel() != hd || s_prev.numel() != hd)
        throw DimensionError("lstm_cell_step: state dims inconsistent with weights");
    auto pre = [&](const LayerWeights<T>& wx, const LayerWeights<T>& wh) {
        Tensor<T> p = fc_forward(wx, x_t);
        const Tensor<T> ph = fc_forward(wh, h_prev);
        for (std::size_t j = 0; j < hd; ++j) p[j] += ph[j];
        return p;
    };
    LstmStep<T> st;
    st.g = gramreg::tanh(pre(w.w_gx, w.w_gh));
    st.i = sigmoid(pre(w.w_ix, w.w_ih));
    st.f = sigmoid(pre(w.w_fx, w.w_fh));
    st.o = sigmoid(pre(w.w_ox, w.w_oh));
    st.s = Tensor<T>({hd});
    for (std::size_t j = 0; j < hd; ++j) st.s[j] = st.g[j] * st.i[j] + s_prev[j] * st.f[j];
    st.tanh_s = gramreg::tanh(st.s);
    st.h = Tensor<T>({hd});
    for (std::size_t j = 0; j < hd; ++j) st.h[j] = st.tanh_s[j] * st.o[j];
    return st;
}

template <typename T>
struct LstmGrads {
    Tensor<T> k_gx, k_ix, k_fx, k_ox, k_gh, k_ih, k_fh, k_oh;
    Tensor<T> b_g, b_i, b_f, b_o;

    static LstmGrads zero_like(const LstmCellWeights<T>& w) {
        LstmGrads g;
        g.k_gx = Tensor<T>(w.w_gx.kernels.shape());
        g.k_ix = Tensor<T>(w.w_ix.kernels.shape());
        g.k_fx = Tensor<T>(w.w_fx.kernels.shape());
        g.k_ox = Tensor<T>(w.w_ox.kernels.shape());
        g.k_gh = Tensor<T>(w.w_gh.kernels.shape());
        g.k_ih = Tensor<T>(w.w_ih.kernels.shape());
        g.k_fh = Tensor<T>(w.w_fh.kernels.shape());
        g.k_oh = Tensor<T>(w.w_oh.kernels.shape());
        g.b_g = Tensor<T>({w.hidden()});
        g.b_i = Tensor<T>({w.hidden()});
        g.b_f = Tensor<T>({w.hidden()});
        g.b_o = Tensor<T>({w.hidden()});
        return g;
    }
};

template <typename T>
struct LstmBackResult {
    Tensor<T> dx, dh_prev, ds_prev;
};

/// One step of backpropagation through time. dh/ds are the gradients flowing
/// into h(t) and s(t); parameter gradients accumulate into `acc`.
template <typename T>
LstmBackResult<T> lstm_cell_backward(const LstmCellWeights<T>& w, const Tensor<T>& x_t,
                                     const Tensor<T>& h_prev, const Tensor<T>& s_prev,
                                     const LstmStep<T>& st, const Tensor<T>& dh,
                                     const Tensor<T>& ds, LstmGrads<T>& acc) {
    const std::size_t hd = w.hidden();
    // ds_total = ds + dh * o * (1 - tanh(s)^2)
    Tensor<T> ds_total({hd}), dg_pre({hd}), di_pre({hd}), df_pre({hd}), do_pre({hd});
    for (std::size_t j = 0; j < hd; ++j) {
        ds_total[j] = ds[j] + dh[j] * st.o[j] * (T{1} - st.tanh_s[j] * st.tanh_s[j]);
        do_pre[j] = dh[j] * st.tanh_s[j] * st.o[j] * (T{1} - st.o[j]);
        dg_pre[j] = ds_total[j] * st.i[j] * (T{1} - st.g[j] * st.g[j]);
        di_pre[j] = ds_total[j] * st.g[j] * st.i[j] * (T{1} - st.i[j]);
        df_pre[j] = ds_total[j] * s_prev[j] * st.f[j] * (T{1} - st.f[j]);
    }

    LstmBackResult<T> out{Tensor<T>({w.input()}), Tensor<T>({hd}), Tensor<T>({hd})};
    for (std::size_t j = 0; j < hd; ++j) out.ds_prev[j] = ds_total[j] * st.f[j];

    auto accumulate = [&](const LayerWeights<T>& wx, const LayerWeights<T>& wh,
                          const Tensor<T>& dpre, Tensor<T>& dkx, Tensor<T>& dkh, Tensor<T>& db) {
        auto gx = fc_backward(wx, x_t, dpre);
        auto gh = fc_backward(wh, h_prev, dpre);
        for (std::size_t i = 0; i < dkx.numel(); ++i) dkx[i] += gx.kernels[i];
        for (std::size_t i = 0; i < dkh.numel(); ++i) dkh[i] += gh.kernels[i];
        for (std::size_t i = 0; i < hd; ++i) db[i] += dpre[i];
        for (std::size_t i = 0; i < w.input(); ++i) out.dx[i] += gx.input[i];
        for (std::size_t i = 0; i < hd; ++i) out.dh_prev[i] += gh.input[i];
    };
    accumulate(w.w_gx, w.w_gh, dg_pre, acc.k_gx, acc.k_gh, acc.b_g);
    accumulate(w.w_ix, w.w_ih, di_pre, acc.k_ix, acc.k_ih, acc.b_i);
    accumulate(w.w_fx, w.w_fh, df_pre, acc.k_fx, acc.k_fh, acc.b_f);
    accumulate(w.w_ox, w.w_oh, do_pre, acc.k_ox, acc.k_oh, acc.b_o);
    return out;
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy, numerically stabilized by max subtraction.
// ---------------------------------------------------------------------------

template <typename T>
struct SoftmaxResult {
    T loss;             // mean over the batch
    Tensor<T> dlogits;  // (softmax - onehot) / batch
};

template <typename T>
SoftmaxResult<T> softmax_ce(const Tensor<T>& logits, const std::vector<std::size_t>& labels) {
    if (logits.rank() != 2) throw DimensionError("softmax_ce: logits must be (B, classes)");
    const std::size_t b = logits.dim(0), k = logits.dim(1);
    if (labels.size() != b) throw DimensionError("softmax_ce: label count mismatch");
    SoftmaxResult<T> r{T{0}, Tensor<T>({b, k})};
    for (std::size_t row = 0; row < b; ++row) {
        if (labels[row] >= k)
            throw DomainError("softmax_ce: label " + std::to_string(labels[row]) +
                              " out of range for " + std::to_string(k) + " classes");
        const T* l = logits.data().data() + row * k;
        T m = l[0];
        for (std::size_t j = 1; j < k; ++j) m = std::max(m, l[j]);
        T z{0};
        for (std::size_t j = 0; j < k; ++j) z += std::exp(l[j] - m);
        const T logz = std::log(z);
        r.loss += -(l[labels[row]] - m - logz);
        T* d = r.dlogits.data().data() + row * k;
        for (std::size_t j = 0; j < k; ++j) {
            d[j] = std::exp(l[j] - m) / z / static_cast<T>(b);
        }
        d[labels[row]] -= T{1} / static_cast<T>(b);
    }
    r.loss /= static_cast<T>(b);
    return r;
}

}  // namespace gramreg
