// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "latentplan/tensor.hpp"

namespace testutil {

// Central finite differences against tape gradients.  `make_loss` must build
// the loss from the given parameters on the active tape.
inline double max_grad_error(std::vector<latentplan::Tensor>& params,
                             const std::function<latentplan::Tensor()>& make_loss,
                             double h = 1e-5) {
    using namespace latentplan;
    Tape tape;
    Tensor loss;
    {
        Tape::Scope scope(tape);
        loss = make_loss();
    }
    for (auto& p : params) p.zero_grad();
    tape.backward(loss);

    double worst = 0.0;
    for (auto& p : params) {
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double keep = p.value()[i];
            p.value()[i] = keep + h;
            const double fp = make_loss().item();
            p.value()[i] = keep - h;
            const double fm = make_loss().item();
            p.value()[i] = keep;
            const double fd = (fp - fm) / (2.0 * h);
            const double ad = p.grad()[i];
            const double err = std::fabs(fd - ad) / std::max(1.0, std::fabs(fd));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

} // namespace testutil
