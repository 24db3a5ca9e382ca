// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "latentplan/nn.hpp"
#include "latentplan/optim.hpp"

using namespace latentplan;

TEST_CASE("nn: linear init is fan-in bounded, bias zero") {
    Rng rng(7);
    Linear lin(64, 32, rng);
    const double bound = 1.0 / std::sqrt(64.0);
    for (double w : lin.W.value()) {
        CHECK(w >= -bound);
        CHECK(w <= bound);
    }
    for (double b : lin.b.value()) CHECK(b == 0.0);
    CHECK(lin.W.shape() == std::vector<std::size_t>{64, 32});
}

TEST_CASE("nn: mlp forward shape and gradient flow") {
    Rng rng(8);
    Mlp mlp({6, 16, 4}, Activation::gelu, rng);
    NamedParams named;
    mlp.collect("mlp", named);
    CHECK(named.size() == 4);

    Tensor x = Tensor::zeros({3, 6}, true);
    for (double& v : x.value()) v = rng.uniform(-1.0, 1.0);
    std::vector<Tensor> params = param_tensors(named);
    params.push_back(x);
    auto make_loss = [&]() { return mean(mul(mlp.forward(x), mlp.forward(x))); };
    CHECK(testutil::max_grad_error(params, make_loss) < 1e-6);
}

TEST_CASE("nn: residual mlp gradient flow") {
    Rng rng(9);
    ResidualMlp net(5, 12, 3, 2, Activation::gelu, rng);
    NamedParams named;
    net.collect("net", named);
    CHECK(named.size() == 2 * (1 + 2 * 2 + 1));
    Tensor x = Tensor::zeros({2, 5}, true);
    for (double& v : x.value()) v = rng.uniform(-1.0, 1.0);
    std::vector<Tensor> params = param_tensors(named);
    params.push_back(x);
    auto make_loss = [&]() { return mean(mul(net.forward(x), net.forward(x))); };
    CHECK(testutil::max_grad_error(params, make_loss) < 1e-6);
}

TEST_CASE("optim: adamw first step matches hand-computed update") {
    Tensor p = Tensor::from({1}, {1.0}, true);
    p.grad()[0] = 1.0;
    AdamW::Options opt;
    opt.lr = 1e-3;
    AdamW adam({p}, opt);
    adam.step();
    // bc1 = 0.1, m_hat = 0.1/0.1 = 1; bc2 = 1e-3, v_hat = 1e-3/1e-3 = 1
    const double expected = 1.0 - 1e-3 * (1.0 / (std::sqrt(1.0) + 1e-8));
    CHECK(p.value()[0] == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("optim: decoupled weight decay is applied to the weight, not the moment") {
    Tensor p = Tensor::from({1}, {2.0}, true);
    p.grad()[0] = 0.0;  // decay acts alone
    AdamW::Options opt;
    opt.lr = 0.1;
    opt.weight_decay = 0.5;
    AdamW adam({p}, opt);
    adam.step();
    // grad path contributes 0 (m=v=0); decay: 2.0 - 0.1*0.5*2.0 = 1.9
    CHECK(p.value()[0] == doctest::Approx(1.9).epsilon(1e-15));
}

TEST_CASE("optim: adamw drives a quadratic toward its minimum") {
    Tensor p = Tensor::from({2}, {3.0, -2.0}, true);
    AdamW::Options opt;
    opt.lr = 0.05;
    AdamW adam({p}, opt);
    for (int i = 0; i < 500; ++i) {
        Tape tape;
        Tensor loss;
        {
            Tape::Scope scope(tape);
            loss = mean(mul(p, p));
        }
        adam.zero_grad();
        tape.backward(loss);
        adam.step();
    }
    CHECK(std::fabs(p.value()[0]) < 1e-2);
    CHECK(std::fabs(p.value()[1]) < 1e-2);
}

TEST_CASE("optim: non-finite gradient raises NumericError") {
    Tensor p = Tensor::from({1}, {1.0}, true);
    p.grad()[0] = std::nan("");
    AdamW adam({p}, {});
    CHECK_THROWS_AS(adam.step(), NumericError);
}
