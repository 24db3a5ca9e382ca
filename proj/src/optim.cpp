// SPDX-License-Identifier: Apache-2.0
#include "latentplan/optim.hpp"

#include <cmath>

namespace latentplan {

AdamW::AdamW(std::vector<Tensor> params, Options opt) : params_(std::move(params)), opt_(opt) {
    if (!(opt_.lr > 0.0)) throw ConfigError("AdamW: lr must be positive");
    if (!(opt_.beta1 >= 0.0 && opt_.beta1 < 1.0)) throw ConfigError("AdamW: beta1 out of [0,1)");
    if (!(opt_.beta2 >= 0.0 && opt_.beta2 < 1.0)) throw ConfigError("AdamW: beta2 out of [0,1)");
    for (const auto& p : params_) {
        if (!p.requires_grad()) throw ContractError("AdamW: parameter without requires_grad");
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void AdamW::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        Tensor& p = params_[pi];
        const std::vector<double>& g = p.grad();
        std::vector<double>& m = m_[pi];
        std::vector<double>& v = v_[pi];
        std::vector<double>& w = p.value();
        for (std::size_t i = 0; i < w.size(); ++i) {
            if (!std::isfinite(g[i])) throw NumericError("AdamW: non-finite gradient");
            m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g[i];
            v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= opt_.lr * (mhat / (std::sqrt(vhat) + opt_.eps) + opt_.weight_decay * w[i]);
        }
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

} // namespace latentplan
