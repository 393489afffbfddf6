/*
 * facelab - analysis-by-neural-synthesis 3D face reconstruction.
 *
 * File: tests/test_losses.cpp
 *
 * Copyright 2026 The facelab contributors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "facelab/losses.hpp"

#include "helpers.hpp"

#include <doctest.h>

using namespace facelab;

namespace {

Tensor<double> random_tensor(std::initializer_list<int> shape, std::uint64_t seed, double lo = 0.0,
                             double hi = 1.0)
{
    Tensor<double> t = Tensor<double>::zeros(shape);
    Rng rng(seed);
    for (auto& v : t.v)
        v = rng.uniform(lo, hi);
    return t;
}

} // namespace

TEST_CASE("photometric: zero at equality, exact offsets, brute-force agreement")
{
    Graph<double> g;
    const Tensor<double> a = random_tensor({3, 8, 8}, 3);
    const int ia = g.add_input(a);
    CHECK(g.value(ops::photometric(g, ia, g.add_input(a))).v[0] == 0.0);

    Tensor<double> b = a;
    for (auto& v : b.v)
        v += 0.1;
    CHECK(g.value(ops::photometric(g, ia, g.add_input(b))).v[0] == doctest::Approx(0.1));

    const Tensor<double> c = random_tensor({3, 8, 8}, 9);
    double brute = 0.0;
    for (int i = 0; i < a.size(); ++i)
        brute += std::abs(a.v[i] - c.v[i]);
    brute /= a.size();
    CHECK(g.value(ops::photometric(g, ia, g.add_input(c))).v[0] == doctest::Approx(brute));
}

TEST_CASE("perceptual: zero at equality, symmetric, monotone in perturbation amplitude")
{
    FeatureExtractor<double> gamma("gamma", FeatureExtractor<double>::Kind::kPerceptual, 7);
    Graph<double> g;
    Tensor<double> a = random_tensor({3, 16, 16}, 3);
    a.rank = 4;
    a.dims = {1, 3, 16, 16};
    const int ia = g.add_input(a);
    CHECK(g.value(ops::perceptual(g, gamma, ia, g.add_input(a))).v[0] == 0.0);

    auto perturbed = [&](double amp) {
        Tensor<double> b = a;
        Rng rng(11);
        for (auto& v : b.v)
            v = std::clamp(v + amp * (rng.uniform() - 0.5), 0.0, 1.0);
        return b;
    };
    const Tensor<double> b = perturbed(0.4);
    const double ab = g.value(ops::perceptual(g, gamma, ia, g.add_input(b))).v[0];
    const double ba = g.value(ops::perceptual(g, gamma, g.add_input(b), ia)).v[0];
    CHECK(ab == doctest::Approx(ba));

    const double d0 = 0.0;
    const double d1 = g.value(ops::perceptual(g, gamma, ia, g.add_input(perturbed(0.1)))).v[0];
    const double d2 = g.value(ops::perceptual(g, gamma, ia, g.add_input(perturbed(0.4)))).v[0];
    CHECK(d0 < d1);
    CHECK(d1 < d2);

    SUBCASE("fixed seeds give identical features across instances")
    {
        FeatureExtractor<double> again("gamma", FeatureExtractor<double>::Kind::kPerceptual, 7);
        CHECK(again.checksum() == gamma.checksum());
        FeatureExtractor<double> other("gamma", FeatureExtractor<double>::Kind::kPerceptual, 8);
        CHECK(other.checksum() != gamma.checksum());
    }
}

TEST_CASE("landmark loss: zero at equality, hand value, brute force, normalization")
{
    Graph<double> g;
    Eigen::MatrixX2d target(1, 2);
    target << 32.0, 16.0;
    Tensor<double> pred = Tensor<double>::from_vector({32.0, 16.0}, {1, 2});
    CHECK(g.value(ops::landmark_loss(g, g.add_input(pred), target, 64, 64)).v[0] == 0.0);

    // a single landmark offset by 0.1 of the image width contributes 0.01
    Tensor<double> off = Tensor<double>::from_vector({32.0 + 6.4, 16.0}, {1, 2});
    CHECK(g.value(ops::landmark_loss(g, g.add_input(off), target, 64, 64)).v[0] ==
          doctest::Approx(0.01));

    Rng rng(5);
    Eigen::MatrixX2d t8(8, 2);
    Tensor<double> p8 = Tensor<double>::zeros({8, 2});
    for (int k = 0; k < 8; ++k)
    {
        t8(k, 0) = rng.uniform(0, 64);
        t8(k, 1) = rng.uniform(0, 64);
        p8.v[static_cast<size_t>(k) * 2] = rng.uniform(0, 64);
        p8.v[static_cast<size_t>(k) * 2 + 1] = rng.uniform(0, 64);
    }
    double brute = 0.0;
    for (int k = 0; k < 8; ++k)
    {
        const double dx = (p8.v[static_cast<size_t>(k) * 2] - t8(k, 0)) / 64.0;
        const double dy = (p8.v[static_cast<size_t>(k) * 2 + 1] - t8(k, 1)) / 64.0;
        brute += dx * dx + dy * dy;
    }
    CHECK(g.value(ops::landmark_loss(g, g.add_input(p8), t8, 64, 64)).v[0] ==
          doctest::Approx(brute));
}

TEST_CASE("expression regularizer: zeros, unit norm, quadratic homogeneity")
{
    Graph<double> g;
    const int d_psi = 6;
    Tensor<double> zeros = Tensor<double>::zeros({d_psi + 5});
    CHECK(g.value(ops::expression_reg(g, g.add_input(zeros), d_psi)).v[0] == 0.0);

    Tensor<double> unit = Tensor<double>::zeros({d_psi + 5});
    unit.v[2] = 1.0;
    unit.v[d_psi + 2] = 5.0; // jaw is excluded by default
    CHECK(g.value(ops::expression_reg(g, g.add_input(unit), d_psi)).v[0] == doctest::Approx(1.0));
    CHECK(g.value(ops::expression_reg(g, g.add_input(unit), d_psi, true)).v[0] ==
          doctest::Approx(26.0));

    Tensor<double> twice = unit;
    for (auto& v : twice.v)
        v *= 2.0;
    CHECK(g.value(ops::expression_reg(g, g.add_input(twice), d_psi)).v[0] == doctest::Approx(4.0));
}

TEST_CASE("cycle losses: equality, unit offset, brute force")
{
    Graph<double> g;
    const Tensor<double> a = random_tensor({2, 11}, 3, -1.0, 1.0);
    CHECK(g.value(ops::cycle_expression(g, g.add_input(a), g.add_input(a))).v[0] == 0.0);

    Tensor<double> plus1 = a;
    for (auto& v : plus1.v)
        v += 1.0;
    CHECK(g.value(ops::cycle_expression(g, g.add_input(plus1), g.add_input(a))).v[0] ==
          doctest::Approx(1.0));

    const Tensor<double> b = random_tensor({2, 11}, 5, -1.0, 1.0);
    double brute = 0.0;
    for (int i = 0; i < a.size(); ++i)
        brute += (a.v[i] - b.v[i]) * (a.v[i] - b.v[i]);
    brute /= a.size();
    CHECK(g.value(ops::cycle_shape(g, g.add_input(a), g.add_input(b))).v[0] ==
          doctest::Approx(brute));
}

TEST_CASE("emotion loss: zero at equality and gradient reaches the probe input")
{
    FeatureExtractor<double> pe("emo", FeatureExtractor<double>::Kind::kDescriptor, 13);
    Graph<double> g;
    Tensor<double> a = random_tensor({3, 16, 16}, 3);
    a.rank = 4;
    a.dims = {1, 3, 16, 16};
    CHECK(g.value(ops::emotion_loss(g, pe, g.add_input(a), g.add_input(a))).v[0] == 0.0);

    Param<double> img;
    img.name = "img";
    img.component = Component::kExprEncoder;
    img.value = a;
    for (auto& v : img.value.v)
        v = std::clamp(v + 0.2, 0.0, 1.0);
    img.init_state();
    const int loss = ops::emotion_loss(g, pe, g.add_param(img), g.add_input(a));
    CHECK(g.value(loss).v[0] > 0.0);
    g.backward(loss, component_bit(Component::kExprEncoder));
    double n = 0.0;
    for (double v : img.grad.v)
        n += v * v;
    CHECK(n > 0.0);
}

TEST_CASE("weighted total: value and gradient are the weight-scaled sums (1e-6)")
{
    // tiny double-precision model: two scalar-ish losses over one parameter
    Param<double> x;
    x.name = "x";
    x.component = Component::kExprEncoder;
    x.value = random_tensor({5}, 3, -1.0, 1.0);
    x.init_state();
    const std::vector<double> w{0.7, 2.5};

    auto build = [&](Graph<double>& g, int which) {
        const int xi = g.add_param(x);
        const int l0 = ops::sum_squares(g, xi);
        Tensor<double> target = Tensor<double>::zeros({5});
        target.fill(0.25);
        const int l1 = ops::mean_abs_diff(g, xi, g.add_input(std::move(target)));
        if (which == 0)
            return l0;
        if (which == 1)
            return l1;
        return ops::weighted_sum(g, std::vector<int>{l0, l1}, w);
    };

    Graph<double> g0, g1, gt;
    x.grad.fill(0.0);
    const int r0 = build(g0, 0);
    g0.backward(r0, 0xffffffffu);
    const Eigen::VectorXd grad0 = Eigen::Map<Eigen::VectorXd>(x.grad.data(), 5);
    x.grad.fill(0.0);
    const int r1 = build(g1, 1);
    g1.backward(r1, 0xffffffffu);
    const Eigen::VectorXd grad1 = Eigen::Map<Eigen::VectorXd>(x.grad.data(), 5);
    x.grad.fill(0.0);
    const int rt = build(gt, 2);
    gt.backward(rt, 0xffffffffu);
    const Eigen::VectorXd gradt = Eigen::Map<Eigen::VectorXd>(x.grad.data(), 5);

    CHECK(gt.value(rt).v[0] ==
          doctest::Approx(w[0] * g0.value(r0).v[0] + w[1] * g1.value(r1).v[0]).epsilon(1e-12));
    CHECK((gradt - (w[0] * grad0 + w[1] * grad1)).norm() < 1e-6);
}

TEST_CASE("loss weights: defaults carry the reference configuration")
{
    const LossWeights w;
    CHECK(w.cycle == 10.0);
    CHECK(w.lmk == 100.0);
    CHECK(w.vgg == 10.0);
    CHECK(w.photo == 1.0);
    CHECK(w.emo == 1.0);
    CHECK(w.reg == 1e-3);
}

TEST_CASE("every loss is nonnegative on random inputs")
{
    Graph<double> g;
    FeatureExtractor<double> gamma("gamma", FeatureExtractor<double>::Kind::kPerceptual, 7);
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial)
    {
        Tensor<double> a = random_tensor({3, 8, 8}, 100 + trial);
        Tensor<double> b = random_tensor({3, 8, 8}, 200 + trial);
        CHECK(g.value(ops::photometric(g, g.add_input(a), g.add_input(b))).v[0] >= 0.0);
        CHECK(g.value(ops::mse(g, g.add_input(a), g.add_input(b))).v[0] >= 0.0);
    }
}
