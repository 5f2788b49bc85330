#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace attmetnet {

// Dense row-major f64 array. Copies share storage; use clone() for a deep copy.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor from(std::vector<int> shape, std::vector<double> values,
                       bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int>& shape() const;
    int size(int dim) const;
    int ndim() const;
    long numel() const;

    double* data();
    const double* data() const;
    std::vector<double>& vec();
    const std::vector<double>& vec() const;

    bool requires_grad() const;
    void set_requires_grad(bool v);
    // Allocates the grad buffer (zero-filled) if absent.
    double* grad();
    const double* grad() const;
    bool has_grad() const;
    void zero_grad();

    double item() const;
    Tensor clone() const;

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
    const void* id() const { return impl_.get(); }

private:
    struct Impl {
        std::vector<int> shape;
        std::vector<double> data;
        std::vector<double> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Impl> impl_;
};

// One op record: inputs, saved forward context, and its adjoint rule.
// Subclasses compute `out` eagerly at construction.
struct Node {
    virtual ~Node() = default;
    virtual void backward() = 0;
    std::vector<Tensor> inputs;
    Tensor out;
};

enum class BnMode { train, eval };

// Running statistics owned by the model; updated in train-mode forward.
struct BnState {
    Tensor running_mean;
    Tensor running_var;
};

// Records ops in execution order (which is a topological order) and replays
// their adjoints in exact reverse. Ops run eagerly as the graph is built.
class Graph {
public:
    Tensor leaf(Tensor t);

    Tensor conv2d(Tensor x, Tensor kernel, Tensor bias, int stride, int padding);
    Tensor conv_transpose2d(Tensor x, Tensor kernel, int stride);
    Tensor maxpool2d(Tensor x, int k = 2, std::vector<std::int32_t>* argmax_out = nullptr);
    Tensor batchnorm2d(Tensor x, Tensor gamma, Tensor beta, BnState& state, BnMode mode,
                       double eps = 1e-5, double momentum = 0.1);
    Tensor relu(Tensor x);
    Tensor sigmoid(Tensor x);
    Tensor add_ew(Tensor a, Tensor b);
    Tensor mul_ew(Tensor a, Tensor b);
    Tensor scale(Tensor x, double s);
    // alpha is [N,1,H,W], x is [N,C,H,W]; broadcast multiply over channels.
    Tensor mul_bcast(Tensor alpha, Tensor x);
    Tensor concat_channels(Tensor a, Tensor b);
    Tensor sum(Tensor x);

    // For custom nodes (losses). The node's `out` must already be computed.
    Tensor add(std::unique_ptr<Node> node);

    // Zeroes every grad reachable from the graph, seeds d(output)=1, then
    // walks nodes in reverse insertion order. Output must be scalar.
    void backward(const Tensor& output);

    std::size_t node_count() const { return nodes_.size(); }

private:
    std::vector<std::unique_ptr<Node>> nodes_;
};

// Max over coordinates of |analytic - central difference| / max(1,|a|,|n|).
// f must build a fresh graph over x and return a scalar output tensor.
double grad_check(const std::function<Tensor(Graph&, const Tensor&)>& f,
                  const Tensor& x, double h);

std::string shape_str(const std::vector<int>& shape);

}  // namespace attmetnet
