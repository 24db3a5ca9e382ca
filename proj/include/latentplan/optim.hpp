// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "latentplan/tensor.hpp"

namespace latentplan {

// AdamW with bias correction and decoupled weight decay.
class AdamW {
public:
    struct Options {
        double lr = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.0;
    };

    AdamW(std::vector<Tensor> params, Options opt);

    void step();
    void zero_grad();
    std::size_t steps_taken() const { return t_; }
    const Options& options() const { return opt_; }
    void set_lr(double lr) { opt_.lr = lr; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    Options opt_;
    std::size_t t_ = 0;
};

} // namespace latentplan
