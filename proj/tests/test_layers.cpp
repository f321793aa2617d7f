#include <cmath>
#include <functional>
#include <vector>

#include "catch_amalgamated.hpp"
#include "gramreg/layers.hpp"
#include "gramreg/rng.hpp"

using gramreg::conv2d_backward;
using gramreg::conv2d_forward;
using gramreg::DimensionError;
using gramreg::DomainError;
using gramreg::fc_backward;
using gramreg::fc_forward;
using gramreg::LayerWeights;
using gramreg::LayoutTag;
using gramreg::LstmCellWeights;
using gramreg::LstmGrads;
using gramreg::make_layer;
using gramreg::Rng;
using gramreg::Tensor;

namespace {

void fill_random(Tensor<double>& t, Rng& rng, double lo = -1.0, double hi = 1.0) {
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
}

Tensor<double> random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0,
                             double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    fill_random(t, rng, lo, hi);
    return t;
}

// Relative error with an absolute floor so exact zero gradients do not divide
// finite-difference noise by itself.
double fd_rel(double a, double fd) {
    return std::abs(a - fd) / std::max(std::max(std::abs(a), std::abs(fd)), 1e-4);
}

// Central finite differences of a scalar objective with respect to one tensor,
// perturbing elements in place.
Tensor<double> central_fd(Tensor<double>& param, const std::function<double()>& objective,
                          double h = 1e-6) {
    Tensor<double> fd(param.shape());
    for (std::size_t i = 0; i < param.numel(); ++i) {
        const double saved = param[i];
        param[i] = saved + h;
        const double up = objective();
        param[i] = saved - h;
        const double down = objective();
        param[i] = saved;
        fd[i] = (up - down) / (2.0 * h);
    }
    return fd;
}

double max_fd_rel(const Tensor<double>& analytic, const Tensor<double>& fd) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.numel(); ++i)
        worst = std::max(worst, fd_rel(analytic[i], fd[i]));
    return worst;
}

LayerWeights<double> random_fc(std::size_t n, std::size_t c, Rng& rng) {
    return make_layer<double>("fc", LayoutTag::fully_connected, random_tensor({n, c, 1}, rng),
                              random_tensor({n}, rng));
}

LstmCellWeights<double> random_lstm(std::size_t hidden, std::size_t input, Rng& rng) {
    auto mat = [&](const char* name, std::size_t cols, bool with_bias) {
        return make_layer<double>(name, LayoutTag::lstm_gate,
                                  random_tensor({hidden, cols, 1}, rng, -0.5, 0.5),
                                  with_bias ? random_tensor({hidden}, rng, -0.5, 0.5)
                                            : Tensor<double>{});
    };
    LstmCellWeights<double> w{mat("w_gx", input, true),  mat("w_ix", input, true),
                              mat("w_fx", input, true),  mat("w_ox", input, true),
                              mat("w_gh", hidden, false), mat("w_ih", hidden, false),
                              mat("w_fh", hidden, false), mat("w_oh", hidden, false)};
    w.validate();
    return w;
}

LstmCellWeights<double> zero_lstm(std::size_t hidden, std::size_t input) {
    auto mat = [&](const char* name, std::size_t cols, bool with_bias) {
        return make_layer<double>(name, LayoutTag::lstm_gate, Tensor<double>({hidden, cols, 1}),
                                  with_bias ? Tensor<double>({hidden}) : Tensor<double>{});
    };
    return {mat("w_gx", input, true),  mat("w_ix", input, true),  mat("w_fx", input, true),
            mat("w_ox", input, true),  mat("w_gh", hidden, false), mat("w_ih", hidden, false),
            mat("w_fh", hidden, false), mat("w_oh", hidden, false)};
}

}  // namespace

TEST_CASE("fc forward with identity weights passes input through") {
    auto w = make_layer<double>("id", LayoutTag::fully_connected,
                                Tensor<double>::identity(3).reshape({3, 3, 1}),
                                Tensor<double>({3}));
    auto x = Tensor<double>::from({2, 3}, {1.0, -2.0, 3.0, 0.5, 0.0, -1.5});
    auto y = fc_forward(w, x);
    REQUIRE(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("fc forward computes the hand dot product") {
    auto w = make_layer<double>("w", LayoutTag::fully_connected,
                                Tensor<double>::from({1, 2, 1}, {1.0, 2.0}),
                                Tensor<double>::from({1}, {0.0}));
    auto y = fc_forward(w, Tensor<double>::from({1, 2}, {3.0, 4.0}));
    REQUIRE(y.shape() == std::vector<std::size_t>{1, 1});
    CHECK(y[0] == 11.0);
}

TEST_CASE("fc forward with zero weights yields the bias in every row") {
    auto w = make_layer<double>("b", LayoutTag::fully_connected, Tensor<double>({2, 3, 1}),
                                Tensor<double>::from({2}, {0.25, -1.5}));
    auto y = fc_forward(w, Tensor<double>::from({3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}));
    for (std::size_t b = 0; b < 3; ++b) {
        CHECK(y.at(b, 0) == 0.25);
        CHECK(y.at(b, 1) == -1.5);
    }
}

TEST_CASE("fc forward rejects mismatched input width") {
    Rng rng(1);
    auto w = random_fc(4, 6, rng);
    CHECK_THROWS_AS(fc_forward(w, Tensor<double>({2, 5})), DimensionError);
}

TEST_CASE("fc backward matches finite differences") {
    Rng rng(11);
    auto w = random_fc(5, 7, rng);
    auto x = random_tensor({3, 7}, rng);
    const auto coeff = random_tensor({3, 5}, rng);

    auto objective = [&] {
        const auto y = fc_forward(w, x);
        double acc = 0.0;
        for (std::size_t i = 0; i < y.numel(); ++i) acc += coeff[i] * y[i];
        return acc;
    };
    auto g = fc_backward(w, x, coeff);
    CHECK(max_fd_rel(g.input, central_fd(x, objective)) < 1e-6);
    CHECK(max_fd_rel(g.kernels, central_fd(w.kernels, objective)) < 1e-6);
    CHECK(max_fd_rel(g.bias, central_fd(w.bias, objective)) < 1e-6);
}

TEST_CASE("conv with a unit 1x1 kernel reproduces the input") {
    auto w = make_layer<double>("id", LayoutTag::conv2d, Tensor<double>::from({1, 1, 1}, {1.0}),
                                Tensor<double>({1}));
    Rng rng(3);
    auto x = random_tensor({1, 4, 5}, rng);
    auto y = conv2d_forward(w, x, 1, 1, 1);
    REQUIRE(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("conv sums a 2x2 all-ones window") {
    auto w = make_layer<double>("ones", LayoutTag::conv2d,
                                Tensor<double>::from({1, 1, 4}, {1, 1, 1, 1}),
                                Tensor<double>({1}));
    auto x = Tensor<double>::from({1, 2, 2}, {1, 2, 3, 4});
    auto y = conv2d_forward(w, x, 2, 2, 1);
    REQUIRE(y.shape() == std::vector<std::size_t>{1, 1, 1});
    CHECK(y[0] == 10.0);
}

TEST_CASE("conv with zero kernels emits bias everywhere") {
    auto w = make_layer<double>("z", LayoutTag::conv2d, Tensor<double>({2, 1, 4}),
                                Tensor<double>::from({2}, {0.5, -2.0}));
    Rng rng(4);
    auto x = random_tensor({1, 5, 5}, rng);
    auto y = conv2d_forward(w, x, 2, 2, 1);
    REQUIRE(y.shape() == std::vector<std::size_t>{2, 4, 4});
    for (std::size_t i = 0; i < 16; ++i) {
        CHECK(y[i] == 0.5);
        CHECK(y[16 + i] == -2.0);
    }
}

TEST_CASE("conv rejects geometry that does not tile the input") {
    auto w = make_layer<double>("k", LayoutTag::conv2d, Tensor<double>({1, 1, 4}),
                                Tensor<double>({1}));
    CHECK_THROWS_AS(conv2d_forward(w, Tensor<double>({1, 3, 3}), 2, 2, 2), DimensionError);
    CHECK_THROWS_AS(conv2d_forward(w, Tensor<double>({1, 1, 1}), 2, 2, 1), DimensionError);
}

TEST_CASE("batched conv equals per-sample conv") {
    Rng rng(5);
    auto w = make_layer<double>("c", LayoutTag::conv2d, random_tensor({3, 2, 9}, rng),
                                random_tensor({3}, rng));
    auto batch = random_tensor({4, 2, 7, 7}, rng);
    auto y = conv2d_forward(w, batch, 3, 3, 2);
    REQUIRE(y.shape() == std::vector<std::size_t>{4, 3, 3, 3});
    for (std::size_t s = 0; s < 4; ++s) {
        Tensor<double> xi({2, 7, 7});
        std::copy(batch.data().begin() + s * 98, batch.data().begin() + (s + 1) * 98,
                  xi.data().begin());
        auto yi = conv2d_forward(w, xi, 3, 3, 2);
        for (std::size_t i = 0; i < yi.numel(); ++i) CHECK(y[s * 27 + i] == yi[i]);
    }
}

TEST_CASE("conv backward matches finite differences") {
    Rng rng(17);
    auto w = make_layer<double>("c", LayoutTag::conv2d, random_tensor({2, 3, 9}, rng),
                                random_tensor({2}, rng));
    auto x = random_tensor({3, 7, 5}, rng);
    const auto coeff = random_tensor({2, 3, 2}, rng);

    auto objective = [&] {
        const auto y = conv2d_forward(w, x, 3, 3, 2);
        double acc = 0.0;
        for (std::size_t i = 0; i < y.numel(); ++i) acc += coeff[i] * y[i];
        return acc;
    };
    auto g = conv2d_backward(w, x, coeff, 3, 3, 2);
    CHECK(max_fd_rel(g.input, central_fd(x, objective)) < 1e-6);
    CHECK(max_fd_rel(g.kernels, central_fd(w.kernels, objective)) < 1e-6);
    CHECK(max_fd_rel(g.bias, central_fd(w.bias, objective)) < 1e-6);
}

TEST_CASE("relu backward gates on strict positivity") {
    auto x = Tensor<double>::from({5}, {-2.0, -1e-9, 0.0, 1e-9, 3.0});
    auto dy = Tensor<double>::from({5}, {1.0, 1.0, 1.0, 1.0, 1.0});
    auto dx = gramreg::relu_backward(x, dy);
    CHECK(dx[0] == 0.0);
    CHECK(dx[1] == 0.0);
    CHECK(dx[2] == 0.0);
    CHECK(dx[3] == 1.0);
    CHECK(dx[4] == 1.0);
}

TEST_CASE("relu backward matches finite differences away from the kink") {
    Rng rng(23);
    Tensor<double> x({40});
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        x[i] = sign * rng.uniform(0.1, 1.0);
    }
    const auto coeff = random_tensor({40}, rng);
    auto objective = [&] {
        const auto y = gramreg::relu_forward(x);
        double acc = 0.0;
        for (std::size_t i = 0; i < y.numel(); ++i) acc += coeff[i] * y[i];
        return acc;
    };
    auto dx = gramreg::relu_backward(x, coeff);
    CHECK(max_fd_rel(dx, central_fd(x, objective)) < 1e-6);
}

TEST_CASE("view max pool picks the per-dimension maximum") {
    auto pooled = gramreg::view_max_pool(Tensor<double>::from({2, 2}, {1, 5, 4, 2}));
    CHECK(pooled.pooled[0] == 4.0);
    CHECK(pooled.pooled[1] == 5.0);
    CHECK(pooled.argmax == std::vector<std::size_t>{1, 0});
}

TEST_CASE("view max pool over a single view is the identity") {
    auto x = Tensor<double>::from({1, 3}, {7.0, -1.0, 0.5});
    auto pooled = gramreg::view_max_pool(x);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(pooled.pooled[i] == x[i]);
        CHECK(pooled.argmax[i] == 0);
    }
}

TEST_CASE("view max pool ties route to the first view") {
    auto pooled = gramreg::view_max_pool(Tensor<double>::from({2, 2}, {2, 2, 2, 2}));
    CHECK(pooled.pooled[0] == 2.0);
    CHECK(pooled.argmax == std::vector<std::size_t>{0, 0});

    auto dx = gramreg::view_pool_backward(Tensor<double>::from({2}, {3.0, 4.0}), pooled.argmax, 2);
    CHECK(dx.at(0, 0) == 3.0);
    CHECK(dx.at(0, 1) == 4.0);
    CHECK(dx.at(1, 0) == 0.0);
    CHECK(dx.at(1, 1) == 0.0);
}

TEST_CASE("view max pool rejects an empty view axis") {
    CHECK_THROWS_AS(gramreg::view_max_pool(Tensor<double>({0, 3})), DomainError);
    CHECK_THROWS_AS(gramreg::view_mean(Tensor<double>({0, 3})), DomainError);
}

TEST_CASE("view pool backward deposits each gradient on exactly one view") {
    Rng rng(29);
    auto views = random_tensor({6, 10}, rng);
    auto pooled = gramreg::view_max_pool(views);
    auto upstream = random_tensor({10}, rng);
    auto dx = gramreg::view_pool_backward(upstream, pooled.argmax, 6);

    for (std::size_t d = 0; d < 10; ++d) {
        std::size_t touched = 0;
        double column_sum = 0.0;
        for (std::size_t v = 0; v < 6; ++v) {
            if (dx.at(v, d) != 0.0) ++touched;
            column_sum += dx.at(v, d);
        }
        CHECK(touched <= 1);
        CHECK(column_sum == upstream[d]);
    }
}

TEST_CASE("view mean averages per dimension") {
    auto m = gramreg::view_mean(Tensor<double>::from({2, 1}, {2.0, 4.0}));
    CHECK(m[0] == 3.0);

    auto same = gramreg::view_mean(Tensor<double>::from({3, 2}, {1.5, -2.0, 1.5, -2.0, 1.5, -2.0}));
    CHECK(same[0] == 1.5);
    CHECK(same[1] == -2.0);

    auto cross = gramreg::view_mean(Tensor<double>::from({2, 2}, {1, 0, 0, 1}));
    CHECK(cross[0] == 0.5);
    CHECK(cross[1] == 0.5);
}

TEST_CASE("lstm step with all-zero parameters hits the activation fixed points") {
    auto w = zero_lstm(4, 3);
    Rng rng(31);
    auto st = gramreg::lstm_cell_step(w, random_tensor({3}, rng), Tensor<double>({4}),
                                      Tensor<double>({4}));
    for (std::size_t j = 0; j < 4; ++j) {
        CHECK(st.g[j] == 0.0);
        CHECK(st.i[j] == 0.5);
        CHECK(st.f[j] == 0.5);
        CHECK(st.o[j] == 0.5);
        CHECK(st.s[j] == 0.0);
        CHECK(st.h[j] == 0.0);
    }
}

TEST_CASE("lstm forget gate saturates with a large bias") {
    Rng rng(37);
    auto w = random_lstm(4, 3, rng);
    for (std::size_t j = 0; j < 4; ++j) w.w_fx.bias[j] = 50.0;
    for (std::size_t i = 0; i < w.w_fx.kernels.numel(); ++i) w.w_fx.kernels[i] = 0.0;
    for (std::size_t i = 0; i < w.w_fh.kernels.numel(); ++i) w.w_fh.kernels[i] = 0.0;

    auto x = random_tensor({3}, rng);
    auto h_prev = random_tensor({4}, rng);
    auto s_prev = random_tensor({4}, rng);
    auto st = gramreg::lstm_cell_step(w, x, h_prev, s_prev);
    for (std::size_t j = 0; j < 4; ++j) {
        CHECK(st.f[j] >= 1.0 - 1e-12);
        CHECK(std::abs(st.s[j] - (s_prev[j] + st.g[j] * st.i[j])) < 1e-12);
    }
}

TEST_CASE("lstm with zero input and zero recurrent weights emits zero hidden state") {
    Rng rng(41);
    auto w = random_lstm(4, 3, rng);
    for (auto* m : {&w.w_gh, &w.w_ih, &w.w_fh, &w.w_oh})
        for (std::size_t i = 0; i < m->kernels.numel(); ++i) m->kernels[i] = 0.0;
    for (auto* m : {&w.w_gx, &w.w_ix, &w.w_fx, &w.w_ox})
        for (std::size_t j = 0; j < 4; ++j) m->bias[j] = 0.0;

    auto st = gramreg::lstm_cell_step(w, Tensor<double>({3}), random_tensor({4}, rng),
                                      Tensor<double>({4}));
    for (std::size_t j = 0; j < 4; ++j) CHECK(st.h[j] == 0.0);
}

TEST_CASE("lstm step rejects inconsistent state dimensions") {
    Rng rng(43);
    auto w = random_lstm(4, 3, rng);
    CHECK_THROWS_AS(gramreg::lstm_cell_step(w, Tensor<double>({2}), Tensor<double>({4}),
                                            Tensor<double>({4})),
                    DimensionError);
    CHECK_THROWS_AS(gramreg::lstm_cell_step(w, Tensor<double>({3}), Tensor<double>({5}),
                                            Tensor<double>({4})),
                    DimensionError);
}

TEST_CASE("single lstm step backward matches finite differences") {
    Rng rng(47);
    auto w = random_lstm(4, 3, rng);
    auto x = random_tensor({3}, rng);
    auto h0 = random_tensor({4}, rng);
    auto s0 = random_tensor({4}, rng);
    const auto ch = random_tensor({4}, rng);
    const auto cs = random_tensor({4}, rng);

    auto objective = [&] {
        auto st = gramreg::lstm_cell_step(w, x, h0, s0);
        double acc = 0.0;
        for (std::size_t j = 0; j < 4; ++j) acc += ch[j] * st.h[j] + cs[j] * st.s[j];
        return acc;
    };

    auto st = gramreg::lstm_cell_step(w, x, h0, s0);
    auto acc = LstmGrads<double>::zero_like(w);
    auto back = gramreg::lstm_cell_backward(w, x, h0, s0, st, ch, cs, acc);

    CHECK(max_fd_rel(back.dx, central_fd(x, objective)) < 1e-6);
    CHECK(max_fd_rel(back.dh_prev, central_fd(h0, objective)) < 1e-6);
    CHECK(max_fd_rel(back.ds_prev, central_fd(s0, objective)) < 1e-6);
    CHECK(max_fd_rel(acc.k_gx, central_fd(w.w_gx.kernels, objective)) < 1e-6);
    CHECK(max_fd_rel(acc.k_ih, central_fd(w.w_ih.kernels, objective)) < 1e-6);
    CHECK(max_fd_rel(acc.k_oh, central_fd(w.w_oh.kernels, objective)) < 1e-6);
    CHECK(max_fd_rel(acc.b_f, central_fd(w.w_fx.bias, objective)) < 1e-6);
}

TEST_CASE("three-step lstm chain backward matches finite differences") {
    Rng rng(53);
    const std::size_t hd = 3, in = 2, steps = 3;
    auto w = random_lstm(hd, in, rng);
    std::vector<Tensor<double>> xs;
    for (std::size_t t = 0; t < steps; ++t) xs.push_back(random_tensor({in}, rng));
    const auto coeff = random_tensor({hd}, rng);

    auto run = [&] {
        Tensor<double> h({hd}), s({hd});
        for (std::size_t t = 0; t < steps; ++t) {
            auto st = gramreg::lstm_cell_step(w, xs[t], h, s);
            h = st.h;
            s = st.s;
        }
        double acc = 0.0;
        for (std::size_t j = 0; j < hd; ++j) acc += coeff[j] * h[j];
        return acc;
    };

    // Forward with caches, then backpropagation through time.
    std::vector<gramreg::LstmStep<double>> cache;
    std::vector<Tensor<double>> hs{Tensor<double>({hd})}, ss{Tensor<double>({hd})};
    for (std::size_t t = 0; t < steps; ++t) {
        cache.push_back(gramreg::lstm_cell_step(w, xs[t], hs.back(), ss.back()));
        hs.push_back(cache.back().h);
        ss.push_back(cache.back().s);
    }
    auto acc = LstmGrads<double>::zero_like(w);
    Tensor<double> dh = coeff, ds({hd});
    std::vector<Tensor<double>> dxs(steps, Tensor<double>({in}));
    for (std::size_t t = steps; t-- > 0;) {
        auto back = gramreg::lstm_cell_backward(w, xs[t], hs[t], ss[t], cache[t], dh, ds, acc);
        dxs[t] = back.dx;
        dh = back.dh_prev;
        ds = back.ds_prev;
    }

    for (auto& [analytic, param] :
         std::vector<std::pair<Tensor<double>*, Tensor<double>*>>{
             {&acc.k_gx, &w.w_gx.kernels}, {&acc.k_ix, &w.w_ix.kernels},
             {&acc.k_fx, &w.w_fx.kernels}, {&acc.k_ox, &w.w_ox.kernels},
             {&acc.k_gh, &w.w_gh.kernels}, {&acc.k_ih, &w.w_ih.kernels},
             {&acc.k_fh, &w.w_fh.kernels}, {&acc.k_oh, &w.w_oh.kernels},
             {&acc.b_g, &w.w_gx.bias},     {&acc.b_i, &w.w_ix.bias},
             {&acc.b_f, &w.w_fx.bias},     {&acc.b_o, &w.w_ox.bias}}) {
        CHECK(max_fd_rel(*analytic, central_fd(*param, run)) < 1e-5);
    }
    for (std::size_t t = 0; t < steps; ++t)
        CHECK(max_fd_rel(dxs[t], central_fd(xs[t], run)) < 1e-5);
}

TEST_CASE("uniform logits cost log of the class count") {
    auto logits = Tensor<double>({2, 3}, 0.7);
    auto r = gramreg::softmax_ce(logits, {0, 2});
    CHECK(std::abs(r.loss - std::log(3.0)) < 1e-12);
}

TEST_CASE("a huge correct logit drives the loss to zero") {
    auto logits = Tensor<double>::from({1, 3}, {50.0, 0.0, 0.0});
    auto r = gramreg::softmax_ce(logits, {0});
    CHECK(r.loss >= 0.0);
    CHECK(r.loss < 1e-12);
}

TEST_CASE("softmax gradient matches finite differences") {
    Rng rng(59);
    auto logits = random_tensor({4, 5}, rng, -2.0, 2.0);
    std::vector<std::size_t> labels{3, 0, 1, 4};
    auto objective = [&] { return gramreg::softmax_ce(logits, labels).loss; };
    auto r = gramreg::softmax_ce(logits, labels);
    CHECK(max_fd_rel(r.dlogits, central_fd(logits, objective)) < 1e-6);
}

TEST_CASE("softmax gradient rows sum to zero") {
    Rng rng(61);
    auto logits = random_tensor({6, 4}, rng, -3.0, 3.0);
    auto r = gramreg::softmax_ce(logits, {0, 1, 2, 3, 0, 1});
    for (std::size_t b = 0; b < 6; ++b) {
        double row = 0.0;
        for (std::size_t k = 0; k < 4; ++k) row += r.dlogits.at(b, k);
        CHECK(std::abs(row) < 1e-12);
    }
}

TEST_CASE("softmax loss is the mean of per-sample losses") {
    Rng rng(67);
    auto logits = random_tensor({3, 4}, rng, -2.0, 2.0);
    std::vector<std::size_t> labels{1, 3, 0};
    auto all = gramreg::softmax_ce(logits, labels);
    double acc = 0.0;
    for (std::size_t b = 0; b < 3; ++b) {
        Tensor<double> row({1, 4});
        for (std::size_t k = 0; k < 4; ++k) row[k] = logits.at(b, k);
        acc += gramreg::softmax_ce(row, {labels[b]}).loss;
    }
    CHECK(std::abs(all.loss - acc / 3.0) < 1e-12);
}

TEST_CASE("softmax rejects out-of-range labels") {
    auto logits = Tensor<double>({2, 3});
    CHECK_THROWS_AS(gramreg::softmax_ce(logits, {0, 3}), DomainError);
    CHECK_THROWS_AS(gramreg::softmax_ce<double>(logits, {0}), DimensionError);
}

TEST_CASE("softmax loss stays finite for extreme logits") {
    auto logits = Tensor<double>::from({1, 2}, {1000.0, -1000.0});
    auto r = gramreg::softmax_ce(logits, {1});
    CHECK(std::isfinite(r.loss));
    CHECK(r.loss == 2000.0);
}
