#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace cmarl::diff {

/// Dense row-major array of 64-bit reals, rank 0..2 in practice.
class Tensor {
  public:
    Tensor() = default;
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor full(std::vector<std::size_t> shape, double v);
    static Tensor scalar(double v) { return full({1}, v); }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
    std::size_t cols() const { return shape_.size() == 2 ? shape_[1] : size(); }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    std::string shape_str() const;

  private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

Tensor randn(std::vector<std::size_t> shape, std::mt19937_64& rng, double stddev);

struct Node;
using Var = std::shared_ptr<Node>;

/// One node of the computation graph. Inputs precede the node in creation
/// order; the graph is acyclic by construction.
struct Node {
    Tensor value;
    Tensor grad;  // allocated during backward for reached nodes
    bool requires_grad = false;
    std::vector<Var> inputs;
    std::function<void(Node&)> backprop;  // reads this->grad, accumulates into inputs

    void accumulate(const Tensor& g);
};

Var constant(Tensor t);
Var make_leaf(Tensor t);  // requires_grad = true

// Forward ops. Standard semantics; shape mismatches throw with both shapes.
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);  // equal shapes, or b broadcast across rows of a
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise
Var divide(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double c);
Var tanh_op(const Var& a);
Var exp_op(const Var& a);  // argument clamped at 700 as overflow guard
Var log_op(const Var& a);
Var softplus(const Var& a);
Var softmax(const Var& a, int axis);  // rank <= 2; axis is the reduced axis
Var concat(const std::vector<Var>& parts, int axis);
Var slice(const Var& a, int axis, std::size_t start, std::size_t len);
Var sum_all(const Var& a);
Var sum_axis(const Var& a, int axis);
Var mean_all(const Var& a);
Var mean_axis(const Var& a, int axis);
Var minimum(const Var& a, const Var& b);  // elementwise; ties route gradient to a
Var mul_scalar_var(const Var& a, const Var& s);  // s holds a single element
Var clamp_op(const Var& a, double lo, double hi);  // pass-through gradient inside range

/// Reverse-mode sweep from a scalar loss. Parameters not reachable from the
/// loss keep an empty gradient.
void backward(const Var& loss);

/// Memoizing lift of persistent parameter tensors into leaf variables, one
/// tape per training step.
class Tape {
  public:
    Var param(Tensor& t);
    const Tensor* grad_of(const Tensor& t) const;

  private:
    std::unordered_map<const Tensor*, Var> leaves_;
};

/// Max over parameter elements of
/// |analytic - central difference| / max(1e-3, |analytic| + |numeric|);
/// the floor turns the bound absolute for near-zero gradients.
double grad_check(const std::function<Var(Tape&)>& build, const std::vector<Tensor*>& params,
                  double eps);

/// Decoupled-weight-decay adaptive-moment optimizer. State is keyed by
/// parameter name so it can ride along in checkpoints.
class AdamW {
  public:
    explicit AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                   double weight_decay = 0.0);

    struct Entry {
        std::string name;
        Tensor* param;
        const Tensor* grad;  // nullptr means zero gradient
    };
    void step(double lr, const std::vector<Entry>& entries);

    void visit_state(const std::function<void(const std::string&, Tensor&)>& fn);
    void restore_state(const std::map<std::string, Tensor>& named);

  private:
    double beta1_, beta2_, eps_, weight_decay_;
    std::int64_t t_ = 0;
    std::map<std::string, std::pair<Tensor, Tensor>> moments_;
};

}  // namespace cmarl::diff
