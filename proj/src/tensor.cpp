// SPDX-License-Identifier: Apache-2.0
#include "latentplan/tensor.hpp"

#include <cmath>
#include <numeric>

#include "latentplan/kernels.hpp"

namespace latentplan {

namespace {
thread_local Tape* g_tape = nullptr;

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

void require_2d(const Tensor& t, const char* who) {
    if (t.ndim() != 2) throw ShapeError(std::string(who) + ": expected 2-D, got " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(who) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}
} // namespace

Activation parse_activation(const std::string& name) {
    if (name == "identity") return Activation::identity;
    if (name == "relu") return Activation::relu;
    if (name == "tanh") return Activation::tanh_fn;
    if (name == "gelu") return Activation::gelu;
    throw ConfigError("unknown activation '" + name + "'");
}

std::string activation_name(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::relu: return "relu";
        case Activation::tanh_fn: return "tanh";
        case Activation::gelu: return "gelu";
    }
    return "?";
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
    Tensor t;
    t.st_ = std::make_shared<TensorStorage>();
    t.st_->shape = std::move(shape);
    t.st_->value.assign(shape_numel(t.st_->shape), 0.0);
    t.set_requires_grad(requires_grad);
    return t;
}

Tensor Tensor::full(std::vector<std::size_t> shape, double v, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& x : t.value()) x = v;
    return t;
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> value, bool requires_grad) {
    if (shape_numel(shape) != value.size())
        throw ShapeError("Tensor::from: " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(value.size()));
    Tensor t;
    t.st_ = std::make_shared<TensorStorage>();
    t.st_->shape = std::move(shape);
    t.st_->value = std::move(value);
    t.set_requires_grad(requires_grad);
    return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return from({1}, {v}, requires_grad);
}

std::size_t Tensor::rows() const {
    require_2d(*this, "rows");
    return st_->shape[0];
}

std::size_t Tensor::cols() const {
    require_2d(*this, "cols");
    return st_->shape[1];
}

std::vector<double>& Tensor::grad() const {
    if (!st_->requires_grad) throw ContractError("grad() on tensor without requires_grad");
    return st_->grad;
}

void Tensor::set_requires_grad(bool b) {
    st_->requires_grad = b;
    if (b && st_->grad.size() != st_->value.size()) st_->grad.assign(st_->value.size(), 0.0);
    if (!b) st_->grad.clear();
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item(): tensor has " + std::to_string(numel()) + " elements");
    return st_->value[0];
}

void Tensor::zero_grad() const {
    if (st_->requires_grad) std::fill(st_->grad.begin(), st_->grad.end(), 0.0);
}

Tape::Scope::Scope(Tape& t) : prev_(g_tape) { g_tape = &t; }
Tape::Scope::~Scope() { g_tape = prev_; }
Tape* Tape::current() { return g_tape; }

void Tape::record(const Tensor& out, std::function<void()> fn) {
    nodes_.push_back(Node{out, std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1) throw ContractError("backward: loss must be scalar");
    if (!loss.requires_grad()) throw ContractError("backward: loss does not require grad");
    // Re-zero every tape-produced grad (intermediates and the loss itself);
    // leaf grads are left alone so they accumulate across calls.
    for (auto& n : nodes_)
        if (n.out.requires_grad()) n.out.zero_grad();
    Tensor seed = loss;  // shares storage
    seed.grad()[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->fn();
}

void Tape::clear() { nodes_.clear(); }

Tensor custom_op(const char* name, Tensor out, const std::vector<Tensor>& inputs,
                 std::function<void()> fn) {
    for (double v : out.value())
        if (!std::isfinite(v)) throw NumericError(std::string(name) + ": non-finite output");
    Tape* tape = Tape::current();
    if (!tape) return out;
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    if (!needs) return out;
    out.set_requires_grad(true);
    out.mark_output();
    tape->record(out, std::move(fn));
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul lhs");
    require_2d(b, "matmul rhs");
    if (a.cols() != b.rows())
        throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = Tensor::zeros({m, n});
    kernels::matmul(a.value().data(), b.value().data(), out.value().data(), m, k, n);
    return custom_op("matmul", out, {a, b}, [a, b, out, m, k, n]() mutable {
        const std::vector<double>& go = out.grad();
        if (a.requires_grad()) {
            // dA += dC * B^T
            std::vector<double> bt(k * n);
            for (std::size_t p = 0; p < k; ++p)
                for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b.value()[p * n + j];
            std::vector<double> tmp(m * k);
            kernels::matmul(go.data(), bt.data(), tmp.data(), m, n, k);
            std::vector<double>& ga = a.grad();
            for (std::size_t i = 0; i < tmp.size(); ++i) ga[i] += tmp[i];
        }
        if (b.requires_grad()) {
            // dB += A^T * dC
            std::vector<double> at(k * m);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) at[p * m + i] = a.value()[i * k + p];
            std::vector<double> tmp(k * n);
            kernels::matmul(at.data(), go.data(), tmp.data(), k, m, n);
            std::vector<double>& gb = b.grad();
            for (std::size_t i = 0; i < tmp.size(); ++i) gb[i] += tmp[i];
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    kernels::add(a.value().data(), b.value().data(), out.value().data(), a.numel());
    return custom_op("add", out, {a, b}, [a, b, out]() mutable {
        const std::vector<double>& go = out.grad();
        if (a.requires_grad()) {
            std::vector<double>& ga = a.grad();
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        }
        if (b.requires_grad()) {
            std::vector<double>& gb = b.grad();
            for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.value()[i] = a.value()[i] - b.value()[i];
    return custom_op("sub", out, {a, b}, [a, b, out]() mutable {
        const std::vector<double>& go = out.grad();
        if (a.requires_grad()) {
            std::vector<double>& ga = a.grad();
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        }
        if (b.requires_grad()) {
            std::vector<double>& gb = b.grad();
            for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    kernels::mul(a.value().data(), b.value().data(), out.value().data(), a.numel());
    return custom_op("mul", out, {a, b}, [a, b, out]() mutable {
        const std::vector<double>& go = out.grad();
        if (a.requires_grad()) {
            std::vector<double>& ga = a.grad();
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * b.value()[i];
        }
        if (b.requires_grad()) {
            std::vector<double>& gb = b.grad();
            for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * a.value()[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = Tensor::zeros(a.shape());
    kernels::scale(a.value().data(), s, out.value().data(), a.numel());
    return custom_op("scale", out, {a}, [a, out, s]() mutable {
        if (!a.requires_grad()) return;
        const std::vector<double>& go = out.grad();
        std::vector<double>& ga = a.grad();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * s;
    });
}

Tensor add_row(const Tensor& a, const Tensor& bias) {
    require_2d(a, "add_row lhs");
    const std::size_t m = a.rows(), n = a.cols();
    if (!((bias.ndim() == 1 && bias.shape()[0] == n) ||
          (bias.ndim() == 2 && bias.shape()[0] == 1 && bias.shape()[1] == n)))
        throw ShapeError("add_row: bias " + shape_str(bias.shape()) + " vs cols " + std::to_string(n));
    Tensor out = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out.value()[i * n + j] = a.value()[i * n + j] + bias.value()[j];
    return custom_op("add_row", out, {a, bias}, [a, bias, out, m, n]() mutable {
        const std::vector<double>& go = out.grad();
        if (a.requires_grad()) {
            std::vector<double>& ga = a.grad();
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        }
        if (bias.requires_grad()) {
            std::vector<double>& gb = bias.grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gb[j] += go[i * n + j];
        }
    });
}

Tensor transpose(const Tensor& a) {
    require_2d(a, "transpose");
    const std::size_t m = a.rows(), n = a.cols();
    Tensor out = Tensor::zeros({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.value()[j * m + i] = a.value()[i * n + j];
    return custom_op("transpose", out, {a}, [a, out, m, n]() mutable {
        if (!a.requires_grad()) return;
        const std::vector<double>& go = out.grad();
        std::vector<double>& ga = a.grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += go[j * m + i];
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: empty");
    const std::size_t m = parts[0].rows();
    std::size_t total = 0;
    for (const auto& p : parts) {
        require_2d(p, "concat_cols");
        if (p.rows() != m) throw ShapeError("concat_cols: row mismatch");
        total += p.cols();
    }
    Tensor out = Tensor::zeros({m, total});
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t n = p.cols();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                out.value()[i * total + off + j] = p.value()[i * n + j];
        off += n;
    }
    return custom_op("concat_cols", out, parts, [parts, out, m, total]() mutable {
        const std::vector<double>& go = out.grad();
        std::size_t off = 0;
        for (auto& p : parts) {
            const std::size_t n = p.cols();
            if (p.requires_grad()) {
                std::vector<double>& gp = p.grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j)
                        gp[i * n + j] += go[i * total + off + j];
            }
            off += n;
        }
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: empty");
    const std::size_t n = parts[0].cols();
    std::size_t total = 0;
    for (const auto& p : parts) {
        require_2d(p, "concat_rows");
        if (p.cols() != n) throw ShapeError("concat_rows: column mismatch");
        total += p.rows();
    }
    Tensor out = Tensor::zeros({total, n});
    std::size_t off = 0;
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < p.numel(); ++i) out.value()[off + i] = p.value()[i];
        off += p.numel();
    }
    return custom_op("concat_rows", out, parts, [parts, out]() mutable {
        const std::vector<double>& go = out.grad();
        std::size_t off = 0;
        for (auto& p : parts) {
            if (p.requires_grad()) {
                std::vector<double>& gp = p.grad();
                for (std::size_t i = 0; i < p.numel(); ++i) gp[i] += go[off + i];
            }
            off += p.numel();
        }
    });
}

Tensor slice_cols(const Tensor& a, std::size_t lo, std::size_t hi) {
    require_2d(a, "slice_cols");
    const std::size_t m = a.rows(), n = a.cols();
    if (lo >= hi || hi > n)
        throw ShapeError("slice_cols: [" + std::to_string(lo) + "," + std::to_string(hi) +
                         ") of " + std::to_string(n) + " cols");
    const std::size_t w = hi - lo;
    Tensor out = Tensor::zeros({m, w});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) out.value()[i * w + j] = a.value()[i * n + lo + j];
    return custom_op("slice_cols", out, {a}, [a, out, m, n, lo, w]() mutable {
        if (!a.requires_grad()) return;
        const std::vector<double>& go = out.grad();
        std::vector<double>& ga = a.grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) ga[i * n + lo + j] += go[i * w + j];
    });
}

Tensor slice_rows(const Tensor& a, std::size_t lo, std::size_t hi) {
    require_2d(a, "slice_rows");
    const std::size_t m = a.rows(), n = a.cols();
    if (lo >= hi || hi > m)
        throw ShapeError("slice_rows: [" + std::to_string(lo) + "," + std::to_string(hi) +
                         ") of " + std::to_string(m) + " rows");
    const std::size_t h = hi - lo;
    Tensor out = Tensor::zeros({h, n});
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < n; ++j) out.value()[i * n + j] = a.value()[(lo + i) * n + j];
    return custom_op("slice_rows", out, {a}, [a, out, n, lo, h]() mutable {
        if (!a.requires_grad()) return;
        const std::vector<double>& go = out.grad();
        std::vector<double>& ga = a.grad();
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < n; ++j) ga[(lo + i) * n + j] += go[i * n + j];
    });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.value()) s += v;
    Tensor out = Tensor::scalar(s);
    return custom_op("sum", out, {a}, [a, out]() mutable {
        if (!a.requires_grad()) return;
        const double g = out.grad()[0];
        std::vector<double>& ga = a.grad();
        for (double& v : ga) v += g;
    });
}

Tensor mean(const Tensor& a) {
    const double inv = 1.0 / static_cast<double>(a.numel());
    double s = 0.0;
    for (double v : a.value()) s += v;
    Tensor out = Tensor::scalar(s * inv);
    return custom_op("mean", out, {a}, [a, out, inv]() mutable {
        if (!a.requires_grad()) return;
        const double g = out.grad()[0] * inv;
        std::vector<double>& ga = a.grad();
        for (double& v : ga) v += g;
    });
}

Tensor mse(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "mse");
    const double inv = 1.0 / static_cast<double>(pred.numel());
    double s = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double d = pred.value()[i] - target.value()[i];
        s += d * d;
    }
    Tensor out = Tensor::scalar(s * inv);
    return custom_op("mse", out, {pred, target}, [pred, target, out, inv]() mutable {
        const double g = out.grad()[0] * inv * 2.0;
        if (pred.requires_grad()) {
            std::vector<double>& gp = pred.grad();
            for (std::size_t i = 0; i < gp.size(); ++i)
                gp[i] += g * (pred.value()[i] - target.value()[i]);
        }
        if (target.requires_grad()) {
            std::vector<double>& gt = target.grad();
            for (std::size_t i = 0; i < gt.size(); ++i)
                gt[i] -= g * (pred.value()[i] - target.value()[i]);
        }
    });
}

Tensor masked_mse(const Tensor& pred, const Tensor& target, const Tensor& mask) {
    require_same_shape(pred, target, "masked_mse");
    require_same_shape(pred, mask, "masked_mse mask");
    double denom = 0.0;
    for (double v : mask.value()) denom += v;
    if (denom <= 0.0) throw ContractError("masked_mse: empty mask");
    const double inv = 1.0 / denom;
    double s = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double d = pred.value()[i] - target.value()[i];
        s += mask.value()[i] * d * d;
    }
    Tensor out = Tensor::scalar(s * inv);
    return custom_op("masked_mse", out, {pred, target}, [pred, target, mask, out, inv]() mutable {
        const double g = out.grad()[0] * inv * 2.0;
        if (pred.requires_grad()) {
            std::vector<double>& gp = pred.grad();
            for (std::size_t i = 0; i < gp.size(); ++i)
                gp[i] += g * mask.value()[i] * (pred.value()[i] - target.value()[i]);
        }
        if (target.requires_grad()) {
            std::vector<double>& gt = target.grad();
            for (std::size_t i = 0; i < gt.size(); ++i)
                gt[i] -= g * mask.value()[i] * (pred.value()[i] - target.value()[i]);
        }
    });
}

Tensor apply_activation(const Tensor& a, Activation act) {
    if (act == Activation::identity) return a;
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.numel();
    switch (act) {
        case Activation::gelu:
            kernels::gelu(a.value().data(), out.value().data(), n);
            break;
        case Activation::relu:
            for (std::size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] > 0.0 ? a.value()[i] : 0.0;
            break;
        case Activation::tanh_fn:
            for (std::size_t i = 0; i < n; ++i) out.value()[i] = std::tanh(a.value()[i]);
            break;
        case Activation::identity:
            break;
    }
    return custom_op("activation", out, {a}, [a, out, act, n]() mutable {
        if (!a.requires_grad()) return;
        const std::vector<double>& go = out.grad();
        std::vector<double>& ga = a.grad();
        switch (act) {
            case Activation::gelu: {
                std::vector<double> d(n);
                kernels::gelu_grad(a.value().data(), d.data(), n);
                for (std::size_t i = 0; i < n; ++i) ga[i] += go[i] * d[i];
                break;
            }
            case Activation::relu:
                for (std::size_t i = 0; i < n; ++i) ga[i] += a.value()[i] > 0.0 ? go[i] : 0.0;
                break;
            case Activation::tanh_fn:
                for (std::size_t i = 0; i < n; ++i) {
                    const double t = out.value()[i];
                    ga[i] += go[i] * (1.0 - t * t);
                }
                break;
            case Activation::identity:
                break;
        }
    });
}

Tensor detach(const Tensor& a) {
    return Tensor::from(a.shape(), a.value(), false);
}

} // namespace latentplan
