// SPDX-License-Identifier: Apache-2.0
#pragma once

// Minimal tape-based reverse-mode autodiff over dense f64 tensors (1-D/2-D).
// A thread-local Tape records backward closures as ops execute; backward()
// replays them in reverse.  Repeated backward() on the same tape re-zeroes
// intermediate grads and accumulates into leaf (parameter) grads, so two
// calls yield exactly twice the gradient of one.

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "latentplan/common.hpp"

namespace latentplan {

enum class Activation { identity, relu, tanh_fn, gelu };
Activation parse_activation(const std::string& name);
std::string activation_name(Activation a);

struct TensorStorage {
    std::vector<std::size_t> shape;
    std::vector<double> value;
    std::vector<double> grad;     // empty unless requires_grad
    bool requires_grad = false;
    bool leaf = true;             // false for op outputs
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<std::size_t> shape, double v, bool requires_grad = false);
    static Tensor from(std::vector<std::size_t> shape, std::vector<double> value,
                       bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(st_); }
    const std::vector<std::size_t>& shape() const { return st_->shape; }
    std::size_t ndim() const { return st_->shape.size(); }
    std::size_t numel() const { return st_->value.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    // handle semantics (like shared_ptr): a const Tensor still exposes
    // mutable storage, which backward closures rely on
    std::vector<double>& value() const { return st_->value; }
    std::vector<double>& grad() const;

    bool requires_grad() const { return st_->requires_grad; }
    void set_requires_grad(bool b);
    bool leaf() const { return st_->leaf; }
    void mark_output() { st_->leaf = false; }

    double item() const;
    void zero_grad() const;

    bool same_storage(const Tensor& o) const { return st_ == o.st_; }

private:
    std::shared_ptr<TensorStorage> st_;
};

class Tape {
public:
    // installs/uninstalls a tape as the thread-local recorder
    class Scope {
    public:
        explicit Scope(Tape& t);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* prev_;
    };

    static Tape* current();

    void record(const Tensor& out, std::function<void()> fn);
    void backward(const Tensor& loss);
    void clear();
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor out;
        std::function<void()> fn;
    };
    std::vector<Node> nodes_;
};

// Registers `out` (already computed by the caller from `inputs`) as a
// differentiable node.  `fn` must accumulate into the inputs' grads from
// out.grad().  Also validates that every output value is finite.
Tensor custom_op(const char* name, Tensor out, const std::vector<Tensor>& inputs,
                 std::function<void()> fn);

// --- primitive ops -------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);         // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);         // elementwise
Tensor scale(const Tensor& a, double s);
Tensor add_row(const Tensor& a, const Tensor& bias);  // bias [1,n] over rows of [m,n]
Tensor transpose(const Tensor& a);
Tensor concat_cols(const std::vector<Tensor>& parts); // [m,p_i] -> [m, sum p_i]
Tensor concat_rows(const std::vector<Tensor>& parts); // [m_i,n] -> [sum m_i, n]
Tensor slice_cols(const Tensor& a, std::size_t lo, std::size_t hi);
Tensor slice_rows(const Tensor& a, std::size_t lo, std::size_t hi);
Tensor sum(const Tensor& a);                          // scalar
Tensor mean(const Tensor& a);                         // scalar
Tensor mse(const Tensor& pred, const Tensor& target); // scalar, mean over elements
// sum(mask*(pred-target)^2)/sum(mask); mask is 0/1 and non-differentiable
Tensor masked_mse(const Tensor& pred, const Tensor& target, const Tensor& mask);
Tensor apply_activation(const Tensor& a, Activation act);

// value copy with no recording; used for stop-gradient feedback
Tensor detach(const Tensor& a);

} // namespace latentplan
