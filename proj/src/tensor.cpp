#include "attmetnet/tensor.hpp"

#include <cmath>
#include <unordered_set>
#include <utility>

#include "attmetnet/error.hpp"
#include "attmetnet/kernels.hpp"

namespace attmetnet {

namespace {
long shape_numel(const std::vector<int>& shape) {
    long n = 1;
    for (int e : shape) n *= e;
    return n;
}
}  // namespace

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    for (int e : shape) {
        if (e <= 0) throw ShapeError("tensor: non-positive extent in shape " + shape_str(shape));
    }
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data.assign(static_cast<std::size_t>(shape_numel(t.impl_->shape)), 0.0);
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& v : t.impl_->data) v = value;
    return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    if (static_cast<long>(values.size()) != t.numel()) {
        throw ShapeError("tensor: " + std::to_string(values.size()) +
                         " values for shape " + shape_str(t.shape()));
    }
    t.impl_->data = std::move(values);
    return t;
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

const std::vector<int>& Tensor::shape() const { return impl_->shape; }
int Tensor::size(int dim) const { return impl_->shape.at(static_cast<std::size_t>(dim)); }
int Tensor::ndim() const { return static_cast<int>(impl_->shape.size()); }
long Tensor::numel() const { return static_cast<long>(impl_->data.size()); }

double* Tensor::data() { return impl_->data.data(); }
const double* Tensor::data() const { return impl_->data.data(); }
std::vector<double>& Tensor::vec() { return impl_->data; }
const std::vector<double>& Tensor::vec() const { return impl_->data; }

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
void Tensor::set_requires_grad(bool v) { impl_->requires_grad = v; }

double* Tensor::grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad.data();
}

const double* Tensor::grad() const {
    return impl_->grad.empty() ? nullptr : impl_->grad.data();
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

void Tensor::zero_grad() {
    impl_->grad.assign(impl_->data.size(), 0.0);
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("tensor: item() on shape " + shape_str(shape()));
    return impl_->data[0];
}

Tensor Tensor::clone() const {
    Tensor t;
    t.impl_ = std::make_shared<Impl>(*impl_);
    return t;
}

namespace {

bool any_requires(std::initializer_list<const Tensor*> ts) {
    for (const Tensor* t : ts) {
        if (t->defined() && t->requires_grad()) return true;
    }
    return false;
}

void require_4d(const Tensor& t, const char* op, const char* name) {
    if (t.ndim() != 4) {
        throw ShapeError(std::string(op) + ": " + name + " must be 4-d, got shape " +
                         shape_str(t.shape()));
    }
}

struct LeafNode final : Node {
    explicit LeafNode(Tensor t) { out = std::move(t); }
    void backward() override {}
};

struct Conv2dNode final : Node {
    int stride, pad;
    Conv2dNode(Tensor x, Tensor k, Tensor b, int stride_, int pad_, Tensor y)
        : stride(stride_), pad(pad_) {
        inputs = {std::move(x), std::move(k)};
        if (b.defined()) inputs.push_back(std::move(b));
        out = std::move(y);
    }
    void backward() override {
        if (!out.requires_grad()) return;
        Tensor& x = inputs[0];
        Tensor& k = inputs[1];
        const double* dy = out.grad();
        const int n = x.size(0), cin = x.size(1), h = x.size(2), w = x.size(3);
        const int cout = k.size(0), kh = k.size(2), kw = k.size(3);
        const int ho = out.size(2), wo = out.size(3);
        if (x.requires_grad()) {
            kernels::conv2d_backward_input(dy, n, cout, ho, wo, k.data(), cin, kh, kw,
                                           stride, pad, x.grad(), h, w);
        }
        if (k.requires_grad()) {
            kernels::conv2d_backward_kernel(dy, n, cout, ho, wo, x.data(), cin, h, w,
                                            kh, kw, stride, pad, k.grad());
        }
        if (inputs.size() == 3 && inputs[2].requires_grad()) {
            kernels::conv2d_backward_bias(dy, n, cout, ho, wo, inputs[2].grad());
        }
    }
};

struct ConvT2dNode final : Node {
    int stride;
    ConvT2dNode(Tensor x, Tensor k, int stride_, Tensor y) : stride(stride_) {
        inputs = {std::move(x), std::move(k)};
        out = std::move(y);
    }
    void backward() override {
        if (!out.requires_grad()) return;
        Tensor& x = inputs[0];
        Tensor& k = inputs[1];
        const double* dy = out.grad();
        const int n = x.size(0), cin = x.size(1), h = x.size(2), w = x.size(3);
        const int cout = k.size(1), kh = k.size(2), kw = k.size(3);
        const int ho = out.size(2), wo = out.size(3);
        if (x.requires_grad()) {
            kernels::conv_transpose2d_backward_input(dy, n, cout, ho, wo, k.data(), cin,
                                                     kh, kw, stride, x.grad(), h, w);
        }
        if (k.requires_grad()) {
            kernels::conv_transpose2d_backward_kernel(dy, n, cout, ho, wo, x.data(), cin,
                                                      h, w, kh, kw, stride, k.grad());
        }
    }
};

struct MaxPoolNode final : Node {
    std::vector<std::int32_t> argmax;
    MaxPoolNode(Tensor x, std::vector<std::int32_t> am, Tensor y) : argmax(std::move(am)) {
        inputs = {std::move(x)};
        out = std::move(y);
    }
    void backward() override {
        if (!out.requires_grad() || !inputs[0].requires_grad()) return;
        kernels::maxpool2d_backward(out.grad(), out.size(0), out.size(1), out.size(2),
                                    out.size(3), argmax.data(), inputs[0].grad());
    }
};

struct BnNode final : Node {
    std::vector<double> xhat;
    std::vector<double> invstd;
    bool stats_fixed;
    BnNode(Tensor x, Tensor gamma, Tensor beta, std::vector<double> xhat_,
           std::vector<double> invstd_, bool fixed, Tensor y)
        : xhat(std::move(xhat_)), invstd(std::move(invstd_)), stats_fixed(fixed) {
        inputs = {std::move(x), std::move(gamma), std::move(beta)};
        out = std::move(y);
    }
    void backward() override {
        if (!out.requires_grad()) return;
        Tensor& x = inputs[0];
        Tensor& gamma = inputs[1];
        Tensor& beta = inputs[2];
        const int n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
        std::vector<double> scratch_x, scratch_g, scratch_b;
        double* dx = x.requires_grad() ? x.grad() : nullptr;
        double* dg = gamma.requires_grad() ? gamma.grad() : nullptr;
        double* db = beta.requires_grad() ? beta.grad() : nullptr;
        if (!dx) {
            scratch_x.assign(static_cast<std::size_t>(x.numel()), 0.0);
            dx = scratch_x.data();
        }
        if (!dg) {
            scratch_g.assign(static_cast<std::size_t>(c), 0.0);
            dg = scratch_g.data();
        }
        if (!db) {
            scratch_b.assign(static_cast<std::size_t>(c), 0.0);
            db = scratch_b.data();
        }
        kernels::batchnorm_backward(out.grad(), xhat.data(), n, c, h, w, gamma.data(),
                                    invstd.data(), stats_fixed, dx, dg, db);
    }
};

struct ReluNode final : Node {
    ReluNode(Tensor x, Tensor y) {
        inputs = {std::move(x)};
        out = std::move(y);
    }
    void backward() override {
        if (!out.requires_grad() || !inputs[0].requires_grad()) return;
        kernels::relu_backward(out.grad(), inputs[0].data(), inputs[0].grad(),
                               inputs[0].numel());
    }
};

struct SigmoidNode final : Node {
    SigmoidNode(Tensor x, Tensor y) {
        inputs = {std::move(x)};
        out = std::move(y);
    }
    void backward() override {
        if (!out.requires_grad() || !inputs[0].requires_grad()) return;
        kernels::sigmoid_backward(out.grad(), out.data(), inputs[0].grad(),
                                  inputs[0].numel());
    }
};

struct AddNode final : Node {
    AddNode(Tensor a, Tensor b, Tensor y) {
        inputs = {std::move(a), std::move(b)};
        out = std::move(y);
    }
    void backward() override {
        if (!out.requires_grad()) return;
        for (Tensor& t : inputs) {
            if (t.requires_grad()) kernels::accumulate(t.grad(), out.grad(), t.numel());
        }
    }
};

struct MulNode final : Node {
    MulNode(Tensor a, Tensor b, Tensor y) {
        inputs = {std::move(a), std::move(b)};
        out = std::move(y);
    }
    void backward() override {
        if (!out.requires_grad()) return;
        Tensor& a = inputs[0];
        Tensor& b = inputs[1];
        kernels::mul_backward(out.grad(), a.data(), b.data(),
                              a.requires_grad() ? a.grad() : nullptr,
                              b.requires_grad() ? b.grad() : nullptr, a.numel());
    }
};

struct ScaleNode final : Node {
    double s;
    ScaleNode(Tensor x, double s_, Tensor y) : s(s_) {
        inputs = {std::move(x)};
        out = std::move(y);
    }
    void backward() override {
        if (!out.requires_grad() || !inputs[0].requires_grad()) return;
        kernels::accumulate_scaled(inputs[0].grad(), out.grad(), s, inputs[0].numel());
    }
};

struct MulBcastNode final : Node {
    MulBcastNode(Tensor alpha, Tensor x, Tensor y) {
        inputs = {std::move(alpha), std::move(x)};
        out = std::move(y);
    }
    void backward() override {
        if (!out.requires_grad()) return;
        Tensor& alpha = inputs[0];
        Tensor& x = inputs[1];
        kernels::mul_bcast_backward(out.grad(), alpha.data(), x.data(), x.size(0),
                                    x.size(1), static_cast<long>(x.size(2)) * x.size(3),
                                    alpha.requires_grad() ? alpha.grad() : nullptr,
                                    x.requires_grad() ? x.grad() : nullptr);
    }
};

struct ConcatNode final : Node {
    ConcatNode(Tensor a, Tensor b, Tensor y) {
        inputs = {std::move(a), std::move(b)};
        out = std::move(y);
    }
    void backward() override {
        if (!out.requires_grad()) return;
        Tensor& a = inputs[0];
        Tensor& b = inputs[1];
        kernels::concat2_backward(out.grad(), a.size(1), b.size(1), a.size(0),
                                  static_cast<long>(a.size(2)) * a.size(3),
                                  a.requires_grad() ? a.grad() : nullptr,
                                  b.requires_grad() ? b.grad() : nullptr);
    }
};

struct SumNode final : Node {
    SumNode(Tensor x, Tensor y) {
        inputs = {std::move(x)};
        out = std::move(y);
    }
    void backward() override {
        if (!out.requires_grad() || !inputs[0].requires_grad()) return;
        const double g = out.grad()[0];
        double* dx = inputs[0].grad();
        const long n = inputs[0].numel();
#pragma omp parallel for schedule(static) if (n > 8192)
        for (long i = 0; i < n; ++i) dx[i] += g;
    }
};

}  // namespace

Tensor Graph::leaf(Tensor t) {
    auto node = std::make_unique<LeafNode>(t);
    nodes_.push_back(std::move(node));
    return t;
}

Tensor Graph::conv2d(Tensor x, Tensor kernel, Tensor bias, int stride, int padding) {
    require_4d(x, "conv2d", "input");
    require_4d(kernel, "conv2d", "kernel");
    if (stride < 1) throw ValueError("conv2d: stride must be >= 1");
    if (padding < 0) throw ValueError("conv2d: padding must be >= 0");
    const int n = x.size(0), cin = x.size(1), h = x.size(2), w = x.size(3);
    const int cout = kernel.size(0), kh = kernel.size(2), kw = kernel.size(3);
    if (kernel.size(1) != cin) {
        throw ShapeError("conv2d: input channel extent " + std::to_string(cin) +
                         " does not match kernel channel extent " +
                         std::to_string(kernel.size(1)));
    }
    if (bias.defined() && (bias.ndim() != 1 || bias.size(0) != cout)) {
        throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()) +
                         " does not match output channel extent " + std::to_string(cout));
    }
    if (kh > h + 2 * padding || kw > w + 2 * padding) {
        throw ShapeError("conv2d: kernel extent " + std::to_string(kh) + "x" +
                         std::to_string(kw) + " exceeds padded input " +
                         std::to_string(h + 2 * padding) + "x" +
                         std::to_string(w + 2 * padding));
    }
    if ((h + 2 * padding - kh) % stride != 0) {
        throw ShapeError("conv2d: output height extent not integral for input height " +
                         std::to_string(h));
    }
    if ((w + 2 * padding - kw) % stride != 0) {
        throw ShapeError("conv2d: output width extent not integral for input width " +
                         std::to_string(w));
    }
    const int ho = (h + 2 * padding - kh) / stride + 1;
    const int wo = (w + 2 * padding - kw) / stride + 1;
    Tensor y = Tensor::zeros({n, cout, ho, wo});
    kernels::conv2d_forward(x.data(), n, cin, h, w, kernel.data(), cout, kh, kw,
                            bias.defined() ? bias.data() : nullptr, stride, padding,
                            y.data(), ho, wo);
    y.set_requires_grad(any_requires({&x, &kernel, &bias}));
    nodes_.push_back(std::make_unique<Conv2dNode>(std::move(x), std::move(kernel),
                                                  std::move(bias), stride, padding, y));
    return y;
}

Tensor Graph::conv_transpose2d(Tensor x, Tensor kernel, int stride) {
    require_4d(x, "conv_transpose2d", "input");
    require_4d(kernel, "conv_transpose2d", "kernel");
    if (stride < 1) throw ValueError("conv_transpose2d: stride must be >= 1");
    const int n = x.size(0), cin = x.size(1), h = x.size(2), w = x.size(3);
    const int cout = kernel.size(1), kh = kernel.size(2), kw = kernel.size(3);
    if (kernel.size(0) != cin) {
        throw ShapeError("conv_transpose2d: input channel extent " + std::to_string(cin) +
                         " does not match kernel channel extent " +
                         std::to_string(kernel.size(0)));
    }
    const int ho = (h - 1) * stride + kh;
    const int wo = (w - 1) * stride + kw;
    Tensor y = Tensor::zeros({n, cout, ho, wo});
    kernels::conv_transpose2d_forward(x.data(), n, cin, h, w, kernel.data(), cout, kh, kw,
                                      stride, y.data(), ho, wo);
    y.set_requires_grad(any_requires({&x, &kernel}));
    nodes_.push_back(
        std::make_unique<ConvT2dNode>(std::move(x), std::move(kernel), stride, y));
    return y;
}

Tensor Graph::maxpool2d(Tensor x, int k, std::vector<std::int32_t>* argmax_out) {
    require_4d(x, "maxpool2d", "input");
    if (k < 1) throw ValueError("maxpool2d: window must be >= 1");
    const int n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    if (h % k != 0 || w % k != 0) {
        throw ShapeError("maxpool2d: spatial extents " + std::to_string(h) + "x" +
                         std::to_string(w) + " not divisible by window " + std::to_string(k));
    }
    const int ho = h / k, wo = w / k;
    Tensor y = Tensor::zeros({n, c, ho, wo});
    std::vector<std::int32_t> argmax(static_cast<std::size_t>(y.numel()));
    kernels::maxpool2d_forward(x.data(), n, c, h, w, k, y.data(), argmax.data());
    if (argmax_out) *argmax_out = argmax;
    y.set_requires_grad(x.requires_grad());
    nodes_.push_back(std::make_unique<MaxPoolNode>(std::move(x), std::move(argmax), y));
    return y;
}

Tensor Graph::batchnorm2d(Tensor x, Tensor gamma, Tensor beta, BnState& state, BnMode mode,
                          double eps, double momentum) {
    require_4d(x, "batchnorm2d", "input");
    const int n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    if (gamma.ndim() != 1 || gamma.size(0) != c || beta.ndim() != 1 || beta.size(0) != c) {
        throw ShapeError("batchnorm2d: gamma/beta must have shape [" + std::to_string(c) +
                         "], got " + shape_str(gamma.shape()) + " and " +
                         shape_str(beta.shape()));
    }
    if (state.running_mean.numel() != c || state.running_var.numel() != c) {
        throw ShapeError("batchnorm2d: running stats extent does not match channel extent " +
                         std::to_string(c));
    }
    if (eps <= 0.0) throw ValueError("batchnorm2d: eps must be > 0");
    std::vector<double> mean(static_cast<std::size_t>(c));
    std::vector<double> var(static_cast<std::size_t>(c));
    const bool train = mode == BnMode::train;
    if (train) {
        kernels::channel_mean_var(x.data(), n, c, h, w, mean.data(), var.data());
        double* rm = state.running_mean.data();
        double* rv = state.running_var.data();
        for (int i = 0; i < c; ++i) {
            rm[i] = (1.0 - momentum) * rm[i] + momentum * mean[i];
            rv[i] = (1.0 - momentum) * rv[i] + momentum * var[i];
        }
    } else {
        const double* rm = state.running_mean.data();
        const double* rv = state.running_var.data();
        for (int i = 0; i < c; ++i) {
            mean[i] = rm[i];
            var[i] = rv[i];
        }
    }
    std::vector<double> invstd(static_cast<std::size_t>(c));
    for (int i = 0; i < c; ++i) invstd[i] = 1.0 / std::sqrt(var[i] + eps);
    Tensor y = Tensor::zeros({n, c, h, w});
    std::vector<double> xhat(static_cast<std::size_t>(x.numel()));
    kernels::batchnorm_forward(x.data(), n, c, h, w, mean.data(), invstd.data(),
                               gamma.data(), beta.data(), y.data(), xhat.data());
    y.set_requires_grad(any_requires({&x, &gamma, &beta}));
    nodes_.push_back(std::make_unique<BnNode>(std::move(x), std::move(gamma), std::move(beta),
                                              std::move(xhat), std::move(invstd), !train, y));
    return y;
}

Tensor Graph::relu(Tensor x) {
    Tensor y = Tensor::zeros(x.shape());
    kernels::relu_forward(x.data(), y.data(), x.numel());
    y.set_requires_grad(x.requires_grad());
    nodes_.push_back(std::make_unique<ReluNode>(std::move(x), y));
    return y;
}

Tensor Graph::sigmoid(Tensor x) {
    Tensor y = Tensor::zeros(x.shape());
    kernels::sigmoid_forward(x.data(), y.data(), x.numel());
    y.set_requires_grad(x.requires_grad());
    nodes_.push_back(std::make_unique<SigmoidNode>(std::move(x), y));
    return y;
}

Tensor Graph::add_ew(Tensor a, Tensor b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("add: shape " + shape_str(a.shape()) + " does not match " +
                         shape_str(b.shape()));
    }
    Tensor y = Tensor::zeros(a.shape());
    kernels::add_forward(a.data(), b.data(), y.data(), a.numel());
    y.set_requires_grad(any_requires({&a, &b}));
    nodes_.push_back(std::make_unique<AddNode>(std::move(a), std::move(b), y));
    return y;
}

Tensor Graph::mul_ew(Tensor a, Tensor b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("mul: shape " + shape_str(a.shape()) + " does not match " +
                         shape_str(b.shape()));
    }
    Tensor y = Tensor::zeros(a.shape());
    kernels::mul_forward(a.data(), b.data(), y.data(), a.numel());
    y.set_requires_grad(any_requires({&a, &b}));
    nodes_.push_back(std::make_unique<MulNode>(std::move(a), std::move(b), y));
    return y;
}

Tensor Graph::scale(Tensor x, double s) {
    Tensor y = Tensor::zeros(x.shape());
    kernels::scale_forward(x.data(), s, y.data(), x.numel());
    y.set_requires_grad(x.requires_grad());
    nodes_.push_back(std::make_unique<ScaleNode>(std::move(x), s, y));
    return y;
}

Tensor Graph::mul_bcast(Tensor alpha, Tensor x) {
    require_4d(alpha, "mul_bcast", "alpha");
    require_4d(x, "mul_bcast", "input");
    if (alpha.size(0) != x.size(0) || alpha.size(1) != 1 || alpha.size(2) != x.size(2) ||
        alpha.size(3) != x.size(3)) {
        throw ShapeError("mul_bcast: alpha shape " + shape_str(alpha.shape()) +
                         " does not broadcast over " + shape_str(x.shape()));
    }
    Tensor y = Tensor::zeros(x.shape());
    kernels::mul_bcast_forward(alpha.data(), x.data(), x.size(0), x.size(1),
                               static_cast<long>(x.size(2)) * x.size(3), y.data());
    y.set_requires_grad(any_requires({&alpha, &x}));
    nodes_.push_back(std::make_unique<MulBcastNode>(std::move(alpha), std::move(x), y));
    return y;
}

Tensor Graph::concat_channels(Tensor a, Tensor b) {
    require_4d(a, "concat_channels", "lhs");
    require_4d(b, "concat_channels", "rhs");
    if (a.size(0) != b.size(0) || a.size(2) != b.size(2) || a.size(3) != b.size(3)) {
        throw ShapeError("concat_channels: non-channel extents of " + shape_str(a.shape()) +
                         " do not match " + shape_str(b.shape()));
    }
    Tensor y = Tensor::zeros({a.size(0), a.size(1) + b.size(1), a.size(2), a.size(3)});
    kernels::concat2_forward(a.data(), a.size(1), b.data(), b.size(1), a.size(0),
                             static_cast<long>(a.size(2)) * a.size(3), y.data());
    y.set_requires_grad(any_requires({&a, &b}));
    nodes_.push_back(std::make_unique<ConcatNode>(std::move(a), std::move(b), y));
    return y;
}

Tensor Graph::sum(Tensor x) {
    Tensor y = Tensor::scalar(kernels::sum_all(x.data(), x.numel()));
    y.set_requires_grad(x.requires_grad());
    nodes_.push_back(std::make_unique<SumNode>(std::move(x), y));
    return y;
}

Tensor Graph::add(std::unique_ptr<Node> node) {
    Tensor out = node->out;
    nodes_.push_back(std::move(node));
    return out;
}

void Graph::backward(const Tensor& output) {
    if (!output.defined() || output.numel() != 1) {
        throw ShapeError("backward: output must be scalar, got shape " +
                         (output.defined() ? shape_str(output.shape()) : "[]"));
    }
    std::unordered_set<const void*> seen;
    auto reset = [&seen](Tensor& t) {
        if (t.defined() && t.requires_grad() && seen.insert(t.id()).second) t.zero_grad();
    };
    for (auto& node : nodes_) {
        for (Tensor& in : node->inputs) reset(in);
        reset(node->out);
    }
    if (!output.requires_grad()) return;
    Tensor seed = output;
    seed.grad()[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)->backward();
}

double grad_check(const std::function<Tensor(Graph&, const Tensor&)>& f,
                  const Tensor& x, double h) {
    Tensor xt = x;
    xt.set_requires_grad(true);
    std::vector<double> analytic;
    {
        Graph g;
        Tensor y = f(g, xt);
        g.backward(y);
        analytic.assign(xt.grad(), xt.grad() + xt.numel());
    }
    double max_err = 0.0;
    double* d = xt.data();
    for (long i = 0; i < xt.numel(); ++i) {
        const double saved = d[i];
        d[i] = saved + h;
        double fp;
        {
            Graph g;
            fp = f(g, xt).item();
        }
        d[i] = saved - h;
        double fm;
        {
            Graph g;
            fm = f(g, xt).item();
        }
        d[i] = saved;
        const double numeric = (fp - fm) / (2.0 * h);
        const double a = analytic[static_cast<std::size_t>(i)];
        double denom = 1.0;
        if (std::fabs(a) > denom) denom = std::fabs(a);
        if (std::fabs(numeric) > denom) denom = std::fabs(numeric);
        const double err = std::fabs(a - numeric) / denom;
        if (err > max_err) max_err = err;
    }
    return max_err;
}

}  // namespace attmetnet
