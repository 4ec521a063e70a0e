/*
 * sweep4d: respiratory-resolved 4D reconstruction of SWEEP slice stacks
 *
 * Copyright 2026 The sweep4d Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <doctest.h>

#include <cmath>
#include <functional>
#include <numeric>

#include "sweep4d/autodiff.hpp"
#include "sweep4d/error.hpp"
#include "fd_check.hpp"
#include "support.hpp"

using namespace sweep4d;
using ad::Tape;
using ad::Tensor;

namespace {

using test::max_fd_error;
using test::random_tensor;

} // namespace

TEST_CASE("elementary values")
{
    CHECK(ad::sigmoid(nullptr, Tensor::scalar(0.0)).item() == 0.5);
    const Tensor alpha = Tensor::scalar(0.25);
    CHECK(ad::prelu(nullptr, Tensor::scalar(-2.0), alpha).item() == -0.5);
    CHECK(ad::prelu(nullptr, Tensor::scalar(3.0), alpha).item() == 3.0);
    const Tensor sm = ad::softmax(nullptr, Tensor::zeros({1, 10}));
    for (double v : sm.data())
        CHECK(v == doctest::Approx(0.1).epsilon(1e-12));

    Tape tape;
    Tensor x = Tensor::scalar(3.0, true);
    tape.backward(ad::square(&tape, x));
    CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("finite-difference agreement for every op")
{
    Rng rng(1);
    for (test::OpCase& c : test::op_catalogue(rng)) {
        CAPTURE(c.name);
        CHECK(max_fd_error(c.inputs, c.op) < 1e-4);
    }
}

TEST_CASE("conv3d matches a direct zero-padded sum")
{
    Rng rng(2);
    const Tensor x = random_tensor(rng, {2, 3, 4, 5});
    const Tensor w = random_tensor(rng, {3, 2, 3, 3, 3});
    const Tensor b = random_tensor(rng, {3});
    const Tensor y = ad::conv3d(nullptr, x, w, b);
    REQUIRE(y.shape() == std::vector<int>{3, 3, 4, 5});
    auto X = [&](int c, int z, int yy, int xx) {
        if (z < 0 || z >= 3 || yy < 0 || yy >= 4 || xx < 0 || xx >= 5)
            return 0.0;
        return x.data()[((c * 3 + z) * 4 + yy) * 5 + xx];
    };
    for (int o = 0; o < 3; ++o)
        for (int z = 0; z < 3; ++z)
            for (int yy = 0; yy < 4; ++yy)
                for (int xx = 0; xx < 5; ++xx) {
                    double s = b.data()[o];
                    for (int c = 0; c < 2; ++c)
                        for (int dz = 0; dz < 3; ++dz)
                            for (int dy = 0; dy < 3; ++dy)
                                for (int dx = 0; dx < 3; ++dx)
                                    s += w.data()[(((o * 2 + c) * 3 + dz) * 3 + dy) * 3 + dx] *
                                         X(c, z + dz - 1, yy + dy - 1, xx + dx - 1);
                    CHECK(y.data()[((o * 3 + z) * 4 + yy) * 5 + xx] == doctest::Approx(s).epsilon(1e-12));
                }
}

TEST_CASE("backward preconditions")
{
    Tape tape;
    Tensor x = Tensor::from({1, 2}, {2}, true);
    const Tensor y = ad::square(&tape, x);
    CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
    Tape other;
    CHECK_THROWS_AS(other.backward(ad::sum(nullptr, x)), std::invalid_argument);
    CHECK_THROWS_AS(ad::add(nullptr, Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), std::invalid_argument);
}

TEST_CASE("non-finite results raise a numeric error")
{
    const Tensor big = Tensor::from({1e300, 1e300}, {1, 2});
    CHECK_THROWS_AS(ad::mul(nullptr, big, big), NumericError);
}

TEST_CASE("backward runs each recorded closure exactly once")
{
    Rng rng(3);
    Tensor w = random_tensor(rng, {3, 3});
    for (int depth : {1, 5, 20}) {
        Tape tape;
        Tensor h = Tensor::from({0.1, 0.2, 0.3}, {1, 3});
        for (int i = 0; i < depth; ++i)
            h = ad::tanh(&tape, ad::matmul(&tape, h, w));
        tape.backward(ad::sum(&tape, h));
        CHECK(tape.size() == static_cast<std::size_t>(2 * depth + 1));
        CHECK(tape.backward_calls() == tape.size());
        w.zero_grad();
    }
}

TEST_CASE("adam: zero gradient leaves the parameter, zero betas give sign steps")
{
    std::vector<double> theta{1.0}, g{0.0}, m{0.0}, v{0.0};
    ad::AdamConfig cfg;
    ad::adam_update(theta, g, m, v, 1, cfg);
    CHECK(theta[0] == 1.0);

    cfg.beta1 = 0.0;
    cfg.beta2 = 0.0;
    cfg.lr = 0.01;
    for (double grad : {3.0, -0.2, 1e-3}) {
        std::vector<double> t{0.0}, gg{grad}, mm{0.0}, vv{0.0};
        for (long step = 1; step <= 5; ++step) {
            const double before = t[0];
            ad::adam_update(t, gg, mm, vv, step, cfg);
            CHECK(before - t[0] == doctest::Approx(cfg.lr * grad / (std::abs(grad) + cfg.eps)).epsilon(1e-12));
        }
    }
}

TEST_CASE("adam minimises a quadratic bowl from 5")
{
    Tensor theta = Tensor::scalar(5.0, true);
    ad::AdamState state;
    state.config.lr = 0.1;
    std::vector<Tensor> params{theta};
    for (int i = 0; i < 500; ++i) {
        Tape tape;
        theta.zero_grad();
        tape.backward(ad::square(&tape, theta));
        ad::adam_step(params, state);
    }
    CHECK(theta.item() * theta.item() < 1e-3);
}

TEST_CASE("adam weight decay adds the L2 term to the gradient")
{
    ad::AdamConfig cfg;
    cfg.weight_decay = 0.5;
    cfg.beta1 = 0;
    cfg.beta2 = 0;
    std::vector<double> a{2.0}, ga{0.0}, ma{0}, va{0};
    std::vector<double> b{2.0}, gb{1.0}, mb{0}, vb{0};
    cfg.lr = 0.1;
    ad::adam_update(a, ga, ma, va, 1, cfg);
    ad::AdamConfig plain = cfg;
    plain.weight_decay = 0;
    ad::adam_update(b, gb, mb, vb, 1, plain);
    CHECK(a[0] == doctest::Approx(b[0]).epsilon(1e-12));
}

TEST_CASE("adam_step requires gradients")
{
    Tensor p = Tensor::scalar(1.0, true);
    std::vector<Tensor> params{p};
    ad::AdamState state;
    CHECK_THROWS_AS(ad::adam_step(params, state), std::logic_error);
}

TEST_CASE("clip_grad_norm rescales to the bound")
{
    Tensor a = Tensor::from({0, 0}, {2}, true), b = Tensor::from({0}, {1}, true);
    a.mutable_grad()[0] = 3;
    a.mutable_grad()[1] = 0;
    b.mutable_grad()[0] = 4;
    std::vector<Tensor> params{a, b};
    CHECK(ad::clip_grad_norm(params, 1.0) == doctest::Approx(5.0));
    CHECK(a.grad()[0] == doctest::Approx(0.6));
    CHECK(b.grad()[0] == doctest::Approx(0.8));
}

TEST_CASE("identical seeds give bit-identical training trajectories")
{
    auto run = [] {
        Rng rng(4);
        Tensor w = random_tensor(rng, {3, 2});
        const Tensor x = Tensor::from({0.1, -0.4, 0.7, 0.2, 0.9, -0.3}, {2, 3});
        const std::vector<int> labels{0, 1};
        ad::AdamState state;
        state.config.weight_decay = 0.01;
        std::vector<Tensor> params{w};
        std::vector<double> trace;
        for (int i = 0; i < 50; ++i) {
            Tape tape;
            w.zero_grad();
            const Tensor loss = ad::softmax_cross_entropy(&tape, ad::matmul(&tape, x, w), labels);
            tape.backward(loss);
            ad::adam_step(params, state);
            trace.push_back(loss.item());
        }
        trace.insert(trace.end(), w.data().begin(), w.data().end());
        return trace;
    };
    CHECK(run() == run());
}

TEST_CASE("parameter checkpoints round-trip and reject corruption")
{
    const auto dir = test::temp_dir("checkpoint");
    Rng rng(5);
    std::vector<Tensor> params{random_tensor(rng, {2, 3}), random_tensor(rng, {4})};
    ad::save_parameters(dir / "p", "toy", params, {{"note", "x"}});
    const ad::LoadedParameters lp = ad::load_parameters(dir / "p", "toy");
    REQUIRE(lp.params.size() == 2);
    CHECK(lp.params[0].shape() == params[0].shape());
    for (std::size_t i = 0; i < params.size(); ++i)
        for (std::size_t j = 0; j < params[i].size(); ++j)
            CHECK(lp.params[i].data()[j] == static_cast<double>(static_cast<float>(params[i].data()[j])));
    CHECK(lp.meta.at("note") == "x");

    CHECK_THROWS_AS(ad::load_parameters(dir / "p", "other"), DataError);
    CHECK_THROWS_AS(ad::load_parameters(dir / "missing", "toy"), DataError);
    std::filesystem::resize_file(dir / "p.f32", 8);
    CHECK_THROWS_AS(ad::load_parameters(dir / "p", "toy"), DataError);
}
