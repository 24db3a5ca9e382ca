// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "latentplan/rng.hpp"
#include "latentplan/tensor.hpp"

namespace latentplan {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

// y = x W + b, W initialized U(-1/sqrt(fan_in), +1/sqrt(fan_in)), b = 0
struct Linear {
    Tensor W;  // [in, out]
    Tensor b;  // [1, out]

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, NamedParams& out) const;
};

// stack of Linear layers with an activation between (not after the last)
struct Mlp {
    std::vector<Linear> layers;
    Activation act = Activation::gelu;

    Mlp() = default;
    Mlp(const std::vector<std::size_t>& dims, Activation act, Rng& rng);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, NamedParams& out) const;
};

// input proj -> R residual blocks (h += lin2(act(lin1(act(h))))) -> head
struct ResidualMlp {
    Linear input;
    std::vector<std::pair<Linear, Linear>> blocks;
    Linear head;
    Activation act = Activation::gelu;

    ResidualMlp() = default;
    ResidualMlp(std::size_t in, std::size_t hidden, std::size_t out, std::size_t n_blocks,
                Activation act, Rng& rng);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, NamedParams& out) const;
};

// flatten helpers for optimizers / checkpoints
std::vector<Tensor> param_tensors(const NamedParams& named);

} // namespace latentplan
