#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <omp.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "attmetnet/error.hpp"
#include "attmetnet/kernels.hpp"
#include "attmetnet/naive_ref.hpp"
#include "attmetnet/rng.hpp"
#include "attmetnet/tensor.hpp"

using namespace attmetnet;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (long i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
    return t;
}

double max_abs_diff(const Tensor& a, const std::vector<double>& b) {
    double m = 0.0;
    for (long i = 0; i < a.numel(); ++i) {
        const double d = std::fabs(a.data()[i] - b[static_cast<std::size_t>(i)]);
        if (d > m) m = d;
    }
    return m;
}

}  // namespace

TEST_CASE("conv2d all-ones 3x3 gives 9") {
    Graph g;
    Tensor x = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor k = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor b = Tensor::zeros({1});
    Tensor y = g.conv2d(x, k, b, 1, 0);
    REQUIRE(y.shape() == std::vector<int>{1, 1, 1, 1});
    CHECK(y.data()[0] == 9.0);
}

TEST_CASE("conv2d 1x1 identity kernel preserves input") {
    Rng rng(11);
    Graph g;
    Tensor x = random_tensor({2, 1, 4, 5}, rng);
    Tensor k = Tensor::full({1, 1, 1, 1}, 1.0);
    Tensor y = g.conv2d(x, k, Tensor(), 1, 0);
    for (long i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d matches naive reference on fixed case") {
    Rng rng(21);
    Tensor x = random_tensor({1, 2, 5, 5}, rng);
    Tensor k = random_tensor({3, 2, 3, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    Graph g;
    Tensor y = g.conv2d(x, k, b, 1, 1);
    std::vector<double> ref(static_cast<std::size_t>(y.numel()));
    refk::conv2d_forward(x.data(), 1, 2, 5, 5, k.data(), 3, 3, 3, b.data(), 1, 1,
                         ref.data(), 5, 5);
    CHECK(max_abs_diff(y, ref) < 1e-12);
}

TEST_CASE("conv2d matches naive reference on randomized shapes") {
    Rng rng(31);
    for (int trial = 0; trial < 40; ++trial) {
        const int n = 1 + static_cast<int>(rng.uniform_int(2));
        const int cin = 1 + static_cast<int>(rng.uniform_int(4));
        const int cout = 1 + static_cast<int>(rng.uniform_int(4));
        const int kh = 1 + static_cast<int>(rng.uniform_int(3));
        const int kw = 1 + static_cast<int>(rng.uniform_int(3));
        const int stride = 1 + static_cast<int>(rng.uniform_int(2));
        const int pad = static_cast<int>(rng.uniform_int(3));
        int h = kh + static_cast<int>(rng.uniform_int(6));
        int w = kw + static_cast<int>(rng.uniform_int(6));
        h += (h + 2 * pad - kh) % stride ? stride - (h + 2 * pad - kh) % stride : 0;
        w += (w + 2 * pad - kw) % stride ? stride - (w + 2 * pad - kw) % stride : 0;
        if (h > 8 || w > 8) continue;
        const bool with_bias = rng.uniform() < 0.5;
        Tensor x = random_tensor({n, cin, h, w}, rng);
        Tensor k = random_tensor({cout, cin, kh, kw}, rng);
        Tensor b = with_bias ? random_tensor({cout}, rng) : Tensor();
        Graph g;
        Tensor y = g.conv2d(x, k, b, stride, pad);
        std::vector<double> ref(static_cast<std::size_t>(y.numel()));
        refk::conv2d_forward(x.data(), n, cin, h, w, k.data(), cout, kh, kw,
                             with_bias ? b.data() : nullptr, stride, pad, ref.data(),
                             y.size(2), y.size(3));
        CHECK(max_abs_diff(y, ref) < 1e-12);
    }
}

TEST_CASE("conv2d backward matches naive reference") {
    Rng rng(41);
    Tensor x = random_tensor({2, 3, 6, 6}, rng);
    Tensor k = random_tensor({4, 3, 3, 3}, rng);
    Tensor b = random_tensor({4}, rng);
    x.set_requires_grad(true);
    k.set_requires_grad(true);
    b.set_requires_grad(true);
    Graph g;
    Tensor y = g.conv2d(x, k, b, 1, 1);
    Tensor s = g.sum(y);
    g.backward(s);
    // dy is all-ones through the sum
    std::vector<double> dy(static_cast<std::size_t>(y.numel()), 1.0);
    std::vector<double> dx(static_cast<std::size_t>(x.numel()), 0.0);
    std::vector<double> dk(static_cast<std::size_t>(k.numel()), 0.0);
    std::vector<double> db(4, 0.0);
    refk::conv2d_backward_input(dy.data(), 2, 4, 6, 6, k.data(), 3, 3, 3, 1, 1,
                                dx.data(), 6, 6);
    refk::conv2d_backward_kernel(dy.data(), 2, 4, 6, 6, x.data(), 3, 6, 6, 3, 3, 1, 1,
                                 dk.data());
    refk::conv2d_backward_bias(dy.data(), 2, 4, 6, 6, db.data());
    for (long i = 0; i < x.numel(); ++i) CHECK(std::fabs(x.grad()[i] - dx[i]) < 1e-12);
    for (long i = 0; i < k.numel(); ++i) CHECK(std::fabs(k.grad()[i] - dk[i]) < 1e-12);
    for (long i = 0; i < 4; ++i) CHECK(std::fabs(b.grad()[i] - db[i]) < 1e-12);
}

TEST_CASE("conv_transpose2d broadcasts a single pixel through the kernel") {
    Graph g;
    Tensor x = Tensor::full({1, 1, 1, 1}, 1.0);
    Tensor k = Tensor::from({1, 1, 2, 2}, {1.5, -2.0, 0.25, 3.0});
    Tensor y = g.conv_transpose2d(x, k, 2);
    REQUIRE(y.shape() == std::vector<int>{1, 1, 2, 2});
    CHECK(y.data()[0] == 1.5);
    CHECK(y.data()[1] == -2.0);
    CHECK(y.data()[2] == 0.25);
    CHECK(y.data()[3] == 3.0);
}

TEST_CASE("conv_transpose2d doubles spatial extents") {
    Rng rng(51);
    Graph g;
    Tensor x = random_tensor({1, 1, 8, 8}, rng);
    Tensor k = random_tensor({1, 1, 2, 2}, rng);
    Tensor y = g.conv_transpose2d(x, k, 2);
    CHECK(y.shape() == std::vector<int>{1, 1, 16, 16});
}

TEST_CASE("conv_transpose2d matches naive reference on randomized shapes") {
    Rng rng(61);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 1 + static_cast<int>(rng.uniform_int(2));
        const int cin = 1 + static_cast<int>(rng.uniform_int(4));
        const int cout = 1 + static_cast<int>(rng.uniform_int(4));
        const int stride = 1 + static_cast<int>(rng.uniform_int(2));
        const int kh = stride + static_cast<int>(rng.uniform_int(2));
        const int h = 1 + static_cast<int>(rng.uniform_int(6));
        const int w = 1 + static_cast<int>(rng.uniform_int(6));
        Tensor x = random_tensor({n, cin, h, w}, rng);
        Tensor k = random_tensor({cin, cout, kh, kh}, rng);
        Graph g;
        Tensor y = g.conv_transpose2d(x, k, stride);
        std::vector<double> ref(static_cast<std::size_t>(y.numel()));
        refk::conv_transpose2d_forward(x.data(), n, cin, h, w, k.data(), cout, kh, kh,
                                       stride, ref.data(), y.size(2), y.size(3));
        CHECK(max_abs_diff(y, ref) < 1e-12);
    }
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
    Rng rng(71);
    for (int trial = 0; trial < 10; ++trial) {
        const int stride = 1 + static_cast<int>(rng.uniform_int(2));
        const int k = stride + static_cast<int>(rng.uniform_int(2));
        const int cin = 1 + static_cast<int>(rng.uniform_int(3));
        const int cout = 1 + static_cast<int>(rng.uniform_int(3));
        const int hy = 1 + static_cast<int>(rng.uniform_int(4));
        const int h = (hy - 1) * stride + k;
        Tensor x = random_tensor({2, cin, h, h}, rng);
        Tensor kern = random_tensor({cout, cin, k, k}, rng);
        Tensor y = random_tensor({2, cout, hy, hy}, rng);
        Graph g;
        Tensor cx = g.conv2d(x, kern, Tensor(), stride, 0);
        REQUIRE(cx.shape() == y.shape());
        // same buffer reinterpreted as a [cout -> cin] transpose kernel
        Tensor kt = Tensor::from({cout, cin, k, k}, kern.vec());
        Tensor ty = g.conv_transpose2d(y, kt, stride);
        REQUIRE(ty.shape() == x.shape());
        double lhs = 0.0, rhs = 0.0;
        for (long i = 0; i < cx.numel(); ++i) lhs += cx.data()[i] * y.data()[i];
        for (long i = 0; i < x.numel(); ++i) rhs += x.data()[i] * ty.data()[i];
        CHECK(std::fabs(lhs - rhs) < 1e-9);
    }
}

TEST_CASE("maxpool2d picks window max") {
    Graph g;
    Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor y = g.maxpool2d(x, 2);
    REQUIRE(y.numel() == 1);
    CHECK(y.data()[0] == 4.0);
}

TEST_CASE("maxpool2d tie-break routes gradient to first window element") {
    Tensor x = Tensor::full({1, 1, 4, 4}, 2.5, true);
    Graph g;
    Tensor y = g.maxpool2d(x, 2);
    for (long i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 2.5);
    Tensor s = g.sum(y);
    g.backward(s);
    for (int oh = 0; oh < 2; ++oh)
        for (int ow = 0; ow < 2; ++ow)
            for (int r = 0; r < 2; ++r)
                for (int c = 0; c < 2; ++c) {
                    const double expect = (r == 0 && c == 0) ? 1.0 : 0.0;
                    CHECK(x.grad()[(oh * 2 + r) * 4 + (ow * 2 + c)] == expect);
                }
}

TEST_CASE("maxpool2d matches naive reference") {
    Rng rng(81);
    Tensor x = random_tensor({1, 3, 8, 8}, rng);
    Graph g;
    std::vector<std::int32_t> am;
    Tensor y = g.maxpool2d(x, 2, &am);
    std::vector<double> ref(static_cast<std::size_t>(y.numel()));
    std::vector<std::int32_t> ref_am(static_cast<std::size_t>(y.numel()));
    refk::maxpool2d_forward(x.data(), 1, 3, 8, 8, 2, ref.data(), ref_am.data());
    CHECK(max_abs_diff(y, ref) == 0.0);
    for (std::size_t i = 0; i < am.size(); ++i) CHECK(am[i] == ref_am[i]);
}

TEST_CASE("batchnorm2d zero-variance channel maps to zero") {
    Tensor x = Tensor::full({2, 1, 3, 3}, 7.0);
    Tensor gamma = Tensor::full({1}, 1.0);
    Tensor beta = Tensor::zeros({1});
    BnState st{Tensor::zeros({1}), Tensor::full({1}, 1.0)};
    Graph g;
    Tensor y = g.batchnorm2d(x, gamma, beta, st, BnMode::train);
    for (long i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 0.0);
}

TEST_CASE("batchnorm2d train output has zero mean and unit variance per channel") {
    Rng rng(91);
    Tensor x = random_tensor({4, 3, 5, 5}, rng, -2.0, 5.0);
    Tensor gamma = Tensor::full({3}, 1.0);
    Tensor beta = Tensor::zeros({3});
    BnState st{Tensor::zeros({3}), Tensor::full({3}, 1.0)};
    Graph g;
    Tensor y = g.batchnorm2d(x, gamma, beta, st, BnMode::train);
    const long hw = 25;
    for (int c = 0; c < 3; ++c) {
        double mean = 0.0, var = 0.0;
        for (int n = 0; n < 4; ++n)
            for (long i = 0; i < hw; ++i) mean += y.data()[(n * 3 + c) * hw + i];
        mean /= 4 * hw;
        for (int n = 0; n < 4; ++n)
            for (long i = 0; i < hw; ++i) {
                const double d = y.data()[(n * 3 + c) * hw + i] - mean;
                var += d * d;
            }
        var /= 4 * hw;
        CHECK(std::fabs(mean) < 1e-12);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("batchnorm2d eval matches hand formula") {
    Tensor x = Tensor::from({1, 1, 1, 3}, {1.0, 2.0, 4.0});
    Tensor gamma = Tensor::full({1}, 1.5);
    Tensor beta = Tensor::full({1}, -0.25);
    BnState st{Tensor::full({1}, 2.0), Tensor::full({1}, 4.0)};
    Graph g;
    Tensor y = g.batchnorm2d(x, gamma, beta, st, BnMode::eval, 1e-5, 0.1);
    for (int i = 0; i < 3; ++i) {
        const double expect = (x.data()[i] - 2.0) / std::sqrt(4.0 + 1e-5) * 1.5 - 0.25;
        CHECK(y.data()[i] == doctest::Approx(expect).epsilon(1e-15));
    }
    // eval mode must not touch running stats
    CHECK(st.running_mean.data()[0] == 2.0);
    CHECK(st.running_var.data()[0] == 4.0);
}

TEST_CASE("batchnorm2d train updates running stats with momentum") {
    Tensor x = Tensor::from({1, 1, 1, 4}, {1.0, 3.0, 5.0, 7.0});
    Tensor gamma = Tensor::full({1}, 1.0);
    Tensor beta = Tensor::zeros({1});
    BnState st{Tensor::full({1}, 10.0), Tensor::full({1}, 2.0)};
    Graph g;
    g.batchnorm2d(x, gamma, beta, st, BnMode::train, 1e-5, 0.1);
    // batch mean 4, biased variance 5
    CHECK(st.running_mean.data()[0] == doctest::Approx(0.9 * 10.0 + 0.1 * 4.0).epsilon(1e-15));
    CHECK(st.running_var.data()[0] == doctest::Approx(0.9 * 2.0 + 0.1 * 5.0).epsilon(1e-15));
}

TEST_CASE("pointwise basics") {
    Graph g;
    Tensor z = Tensor::scalar(0.0);
    CHECK(g.sigmoid(z).data()[0] == 0.5);
    Tensor a = Tensor::from({2}, {-3.2, 3.2});
    Tensor r = g.relu(a);
    CHECK(r.data()[0] == 0.0);
    CHECK(r.data()[1] == 3.2);
}

TEST_CASE("sigmoid stays strictly inside (0,1) for extreme inputs") {
    Graph g;
    Tensor x = Tensor::from({4}, {-800.0, -40.0, 40.0, 800.0});
    Tensor y = g.sigmoid(x);
    for (int i = 0; i < 4; ++i) {
        CHECK(std::isfinite(y.data()[i]));
        CHECK(y.data()[i] > 0.0);
        CHECK(y.data()[i] < 1.0);
    }
}

TEST_CASE("concat_channels stacks 64+64 into 128") {
    Rng rng(101);
    Tensor a = random_tensor({1, 64, 2, 2}, rng);
    Tensor b = random_tensor({1, 64, 2, 2}, rng);
    Graph g;
    Tensor y = g.concat_channels(a, b);
    REQUIRE(y.shape() == std::vector<int>{1, 128, 2, 2});
    for (long i = 0; i < a.numel(); ++i) CHECK(y.data()[i] == a.data()[i]);
    for (long i = 0; i < b.numel(); ++i) CHECK(y.data()[a.numel() + i] == b.data()[i]);
}

TEST_CASE("backward of sum is all ones") {
    Rng rng(111);
    Tensor x = random_tensor({3, 2, 2, 2}, rng);
    x.set_requires_grad(true);
    Graph g;
    Tensor s = g.sum(x);
    g.backward(s);
    for (long i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == 1.0);
}

TEST_CASE("backward of sigmoid at zero is a quarter") {
    Tensor x = Tensor::scalar(0.0);
    x.set_requires_grad(true);
    Graph g;
    Tensor s = g.sum(g.sigmoid(x));
    g.backward(s);
    CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("composite conv-relu-sum gradient matches finite differences") {
    Rng rng(121);
    Tensor k = random_tensor({2, 2, 3, 3}, rng);
    Tensor b = random_tensor({2}, rng);
    Tensor x = random_tensor({1, 2, 5, 5}, rng);
    auto f = [&](Graph& g, const Tensor& t) {
        return g.sum(g.relu(g.conv2d(t, k, b, 1, 1)));
    };
    CHECK(grad_check(f, x, 1e-5) < 1e-6);
}

TEST_CASE("backward is bit-identical across repeated runs") {
    Rng rng(131);
    Tensor x = random_tensor({1, 2, 4, 4}, rng);
    Tensor k = random_tensor({3, 2, 3, 3}, rng);
    x.set_requires_grad(true);
    k.set_requires_grad(true);
    Graph g;
    Tensor s = g.sum(g.sigmoid(g.conv2d(x, k, Tensor(), 1, 1)));
    g.backward(s);
    std::vector<double> gx(x.grad(), x.grad() + x.numel());
    std::vector<double> gk(k.grad(), k.grad() + k.numel());
    g.backward(s);
    CHECK(std::memcmp(gx.data(), x.grad(), sizeof(double) * gx.size()) == 0);
    CHECK(std::memcmp(gk.data(), k.grad(), sizeof(double) * gk.size()) == 0);
}

TEST_CASE("grad_check on sum of squares is near exact") {
    Rng rng(141);
    Tensor x = random_tensor({7}, rng, -2.0, 2.0);
    auto f = [](Graph& g, const Tensor& t) { return g.sum(g.mul_ew(t, t)); };
    CHECK(grad_check(f, x, 1e-5) < 1e-9);
}

TEST_CASE("grad_check passes for every differentiable op across seeds") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng = Rng::derive(900, {seed});
        Tensor x = random_tensor({1, 3, 4, 4}, rng);
        Tensor k = random_tensor({2, 3, 3, 3}, rng);
        Tensor bias = random_tensor({2}, rng);
        Tensor kt = random_tensor({3, 2, 2, 2}, rng);
        Tensor other = random_tensor({1, 3, 4, 4}, rng);
        Tensor gamma = random_tensor({3}, rng, 0.5, 1.5);
        Tensor beta = random_tensor({3}, rng);
        Tensor alpha = random_tensor({1, 1, 4, 4}, rng, 0.05, 0.95);

        auto conv_x = [&](Graph& g, const Tensor& t) {
            return g.sum(g.conv2d(t, k, bias, 1, 1));
        };
        CHECK(grad_check(conv_x, x, 1e-5) < 1e-6);
        auto conv_k = [&](Graph& g, const Tensor& t) {
            return g.sum(g.sigmoid(g.conv2d(x, t, bias, 1, 1)));
        };
        CHECK(grad_check(conv_k, k, 1e-5) < 1e-6);
        auto conv_b = [&](Graph& g, const Tensor& t) {
            return g.sum(g.sigmoid(g.conv2d(x, k, t, 1, 1)));
        };
        CHECK(grad_check(conv_b, bias, 1e-5) < 1e-6);
        auto convt_x = [&](Graph& g, const Tensor& t) {
            return g.sum(g.sigmoid(g.conv_transpose2d(t, kt, 2)));
        };
        CHECK(grad_check(convt_x, x, 1e-5) < 1e-6);
        auto convt_k = [&](Graph& g, const Tensor& t) {
            return g.sum(g.sigmoid(g.conv_transpose2d(x, t, 2)));
        };
        CHECK(grad_check(convt_k, kt, 1e-5) < 1e-6);
        auto pool = [&](Graph& g, const Tensor& t) { return g.sum(g.maxpool2d(t, 2)); };
        CHECK(grad_check(pool, x, 1e-6) < 1e-6);
        auto bn_train_x = [&](Graph& g, const Tensor& t) {
            BnState st{Tensor::zeros({3}), Tensor::full({3}, 1.0)};
            return g.sum(g.sigmoid(g.batchnorm2d(t, gamma, beta, st, BnMode::train)));
        };
        CHECK(grad_check(bn_train_x, x, 1e-5) < 1e-6);
        auto bn_train_gamma = [&](Graph& g, const Tensor& t) {
            BnState st{Tensor::zeros({3}), Tensor::full({3}, 1.0)};
            return g.sum(g.sigmoid(g.batchnorm2d(x, t, beta, st, BnMode::train)));
        };
        CHECK(grad_check(bn_train_gamma, gamma, 1e-5) < 1e-6);
        auto bn_train_beta = [&](Graph& g, const Tensor& t) {
            BnState st{Tensor::zeros({3}), Tensor::full({3}, 1.0)};
            return g.sum(g.sigmoid(g.batchnorm2d(x, gamma, t, st, BnMode::train)));
        };
        CHECK(grad_check(bn_train_beta, beta, 1e-5) < 1e-6);
        auto bn_eval_x = [&](Graph& g, const Tensor& t) {
            BnState st{Tensor::full({3}, 0.2), Tensor::full({3}, 1.3)};
            return g.sum(g.sigmoid(g.batchnorm2d(t, gamma, beta, st, BnMode::eval)));
        };
        CHECK(grad_check(bn_eval_x, x, 1e-5) < 1e-6);
        auto relu_f = [&](Graph& g, const Tensor& t) { return g.sum(g.relu(t)); };
        CHECK(grad_check(relu_f, x, 1e-7) < 1e-6);
        auto sig_f = [&](Graph& g, const Tensor& t) { return g.sum(g.sigmoid(t)); };
        CHECK(grad_check(sig_f, x, 1e-5) < 1e-6);
        auto add_f = [&](Graph& g, const Tensor& t) {
            return g.sum(g.sigmoid(g.add_ew(t, other)));
        };
        CHECK(grad_check(add_f, x, 1e-5) < 1e-6);
        auto mul_f = [&](Graph& g, const Tensor& t) {
            return g.sum(g.mul_ew(t, other));
        };
        CHECK(grad_check(mul_f, x, 1e-5) < 1e-6);
        auto scale_f = [&](Graph& g, const Tensor& t) {
            return g.sum(g.sigmoid(g.scale(t, -1.7)));
        };
        CHECK(grad_check(scale_f, x, 1e-5) < 1e-6);
        auto bcast_alpha = [&](Graph& g, const Tensor& t) {
            return g.sum(g.sigmoid(g.mul_bcast(t, x)));
        };
        CHECK(grad_check(bcast_alpha, alpha, 1e-5) < 1e-6);
        auto bcast_x = [&](Graph& g, const Tensor& t) {
            return g.sum(g.sigmoid(g.mul_bcast(alpha, t)));
        };
        CHECK(grad_check(bcast_x, x, 1e-5) < 1e-6);
        auto concat_f = [&](Graph& g, const Tensor& t) {
            return g.sum(g.sigmoid(g.concat_channels(t, other)));
        };
        CHECK(grad_check(concat_f, x, 1e-5) < 1e-6);
    }
}

TEST_CASE("grad_check on a composed attention gate") {
    Rng rng(151);
    Tensor gate = random_tensor({1, 8, 4, 4}, rng);
    Tensor x = random_tensor({1, 8, 4, 4}, rng);
    Tensor wg = random_tensor({4, 8, 1, 1}, rng);
    Tensor bg = random_tensor({4}, rng);
    Tensor wx = random_tensor({4, 8, 1, 1}, rng);
    Tensor psi = random_tensor({1, 4, 1, 1}, rng);
    Tensor bpsi = random_tensor({1}, rng);
    auto gate_block = [&](Graph& g, const Tensor& t) {
        Tensor a = g.add_ew(g.conv2d(gate, wg, bg, 1, 0), g.conv2d(t, wx, Tensor(), 1, 0));
        Tensor coeff = g.sigmoid(g.conv2d(g.relu(a), psi, bpsi, 1, 0));
        return g.sum(g.sigmoid(g.mul_bcast(coeff, t)));
    };
    CHECK(grad_check(gate_block, x, 1e-5) < 1e-6);
}

TEST_CASE("results are bit-identical across worker counts") {
    Rng rng(161);
    Tensor x = random_tensor({2, 4, 16, 16}, rng);
    Tensor k = random_tensor({8, 4, 3, 3}, rng);
    std::vector<double> flat(20000);
    for (auto& v : flat) v = rng.uniform(-1.0, 1.0);

    omp_set_num_threads(1);
    Graph g1;
    Tensor y1 = g1.conv2d(x, k, Tensor(), 1, 1);
    const double s1 = kernels::sum_all(flat.data(), static_cast<long>(flat.size()));

    omp_set_num_threads(4);
    Graph g4;
    Tensor y4 = g4.conv2d(x, k, Tensor(), 1, 1);
    const double s4 = kernels::sum_all(flat.data(), static_cast<long>(flat.size()));
    omp_set_num_threads(omp_get_num_procs());

    CHECK(std::memcmp(y1.data(), y4.data(), sizeof(double) * y1.numel()) == 0);
    CHECK(std::memcmp(&s1, &s4, sizeof(double)) == 0);
}

TEST_CASE("shape errors name the offending dimension") {
    Graph g;
    Tensor x = Tensor::zeros({1, 3, 4, 4});
    Tensor k = Tensor::zeros({2, 4, 3, 3});
    CHECK_THROWS_AS(g.conv2d(x, k, Tensor(), 1, 1), ShapeError);
    Tensor k2 = Tensor::zeros({2, 3, 3, 3});
    CHECK_THROWS_AS(g.conv2d(x, k2, Tensor(), 2, 0), ShapeError);  // (4-3)%2 != 0
    Tensor x5 = Tensor::zeros({1, 1, 5, 5});
    CHECK_THROWS_AS(g.maxpool2d(x5, 2), ShapeError);
    Tensor a = Tensor::zeros({2, 2});
    Tensor b = Tensor::zeros({2, 3});
    CHECK_THROWS_AS(g.add_ew(a, b), ShapeError);
    Tensor big = Tensor::zeros({1, 1, 2, 2});
    CHECK_THROWS_AS(g.backward(big), ShapeError);
}

TEST_CASE("tensor invariants hold") {
    Tensor t = Tensor::zeros({2, 3, 4});
    CHECK(t.numel() == 24);
    CHECK_THROWS_AS(Tensor::zeros({2, 0, 3}), ShapeError);
    CHECK_THROWS_AS(Tensor::from({2}, {1.0, 2.0, 3.0}), ShapeError);
    t.set_requires_grad(true);
    t.zero_grad();
    CHECK(t.has_grad());
}
