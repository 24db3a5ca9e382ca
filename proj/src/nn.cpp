// SPDX-License-Identifier: Apache-2.0
#include "latentplan/nn.hpp"

#include <cmath>

namespace latentplan {

Linear::Linear(std::size_t in, std::size_t out, Rng& rng) {
    if (in == 0 || out == 0) throw ContractError("Linear: zero dimension");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::vector<double> w(in * out);
    for (double& v : w) v = rng.uniform(-bound, bound);
    W = Tensor::from({in, out}, std::move(w), true);
    b = Tensor::zeros({1, out}, true);
}

Tensor Linear::forward(const Tensor& x) const {
    return add_row(matmul(x, W), b);
}

void Linear::collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".W", W);
    out.emplace_back(prefix + ".b", b);
}

Mlp::Mlp(const std::vector<std::size_t>& dims, Activation a, Rng& rng) : act(a) {
    if (dims.size() < 2) throw ContractError("Mlp: need at least input and output dims");
    for (std::size_t i = 0; i + 1 < dims.size(); ++i)
        layers.emplace_back(dims[i], dims[i + 1], rng);
}

Tensor Mlp::forward(const Tensor& x) const {
    Tensor h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        h = layers[i].forward(h);
        if (i + 1 < layers.size()) h = apply_activation(h, act);
    }
    return h;
}

void Mlp::collect(const std::string& prefix, NamedParams& out) const {
    for (std::size_t i = 0; i < layers.size(); ++i)
        layers[i].collect(prefix + ".l" + std::to_string(i), out);
}

ResidualMlp::ResidualMlp(std::size_t in, std::size_t hidden, std::size_t out,
                         std::size_t n_blocks, Activation a, Rng& rng)
    : input(in, hidden, rng), head(hidden, out, rng), act(a) {
    for (std::size_t i = 0; i < n_blocks; ++i)
        blocks.emplace_back(Linear(hidden, hidden, rng), Linear(hidden, hidden, rng));
}

Tensor ResidualMlp::forward(const Tensor& x) const {
    Tensor h = input.forward(x);
    for (const auto& [l1, l2] : blocks) {
        Tensor u = l2.forward(apply_activation(l1.forward(apply_activation(h, act)), act));
        h = add(h, u);
    }
    return head.forward(apply_activation(h, act));
}

void ResidualMlp::collect(const std::string& prefix, NamedParams& out) const {
    input.collect(prefix + ".in", out);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        blocks[i].first.collect(prefix + ".b" + std::to_string(i) + ".f", out);
        blocks[i].second.collect(prefix + ".b" + std::to_string(i) + ".g", out);
    }
    head.collect(prefix + ".head", out);
}

std::vector<Tensor> param_tensors(const NamedParams& named) {
    std::vector<Tensor> out;
    out.reserve(named.size());
    for (const auto& [n, t] : named) out.push_back(t);
    return out;
}

} // namespace latentplan
