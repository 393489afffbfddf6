/*
 * facelab - analysis-by-neural-synthesis 3D face reconstruction.
 *
 * File: tests/test_autodiff.cpp
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
#include "facelab/core/graph.hpp"

#include "facelab/core/rng.hpp"

#include <doctest.h>

using namespace facelab;
using G = Graph<double>;

namespace {

Param<double> random_param(std::initializer_list<int> shape, Component comp, std::uint64_t seed,
                           double scale = 1.0)
{
    Param<double> p;
    p.component = comp;
    p.value = Tensor<double>::zeros(shape);
    Rng rng(seed);
    for (auto& v : p.value.v)
        v = rng.normal(0.0, scale);
    p.init_state();
    return p;
}

/// Max relative |analytic - central difference| over (up to) 40 coordinates.
template <typename Build>
double max_fd_error(Param<double>& p, Build build, double h = 1e-6)
{
    G g;
    const int loss = build(g);
    p.grad.fill(0.0);
    g.backward(loss, 0xffffffffu);
    double worst = 0.0;
    const int n = std::min(p.value.size(), 40);
    for (int i = 0; i < n; ++i)
    {
        const double keep = p.value.v[i];
        p.value.v[i] = keep + h;
        G g1;
        const double f1 = g1.value(build(g1)).v[0];
        p.value.v[i] = keep - h;
        G g2;
        const double f2 = g2.value(build(g2)).v[0];
        p.value.v[i] = keep;
        const double fd = (f1 - f2) / (2 * h);
        worst = std::max(worst,
                         std::abs(fd - p.grad.v[i]) / std::max({1.0, std::abs(fd), std::abs(p.grad.v[i])}));
    }
    return worst;
}

} // namespace

TEST_CASE("conv2d forward/backward agree with finite differences")
{
    auto x = random_param({2, 3, 9, 9}, Component::kTranslator, 1);
    auto w = random_param({4, 3, 3, 3}, Component::kTranslator, 2, 0.4);
    auto b = random_param({4}, Component::kTranslator, 3, 0.1);
    for (int stride : {1, 2})
    {
        auto build = [&](G& g) {
            const int y = ops::conv2d(g, g.add_param(x), g.add_param(w), g.add_param(b), stride, 1);
            return ops::sum_squares(g, ops::sigmoid(g, y));
        };
        CHECK(max_fd_error(w, build) < 1e-5);
        CHECK(max_fd_error(x, build) < 1e-5);
        CHECK(max_fd_error(b, build) < 1e-5);
    }
}

TEST_CASE("tconv2x2 doubles the resolution and matches finite differences")
{
    auto x = random_param({1, 3, 5, 5}, Component::kTranslator, 4);
    auto w = random_param({3, 2, 2, 2}, Component::kTranslator, 5, 0.4);
    auto b = random_param({2}, Component::kTranslator, 6, 0.1);
    {
        G g;
        const int y = ops::tconv2x2(g, g.add_param(x), g.add_param(w), g.add_param(b));
        CHECK(g.value(y).dims[2] == 10);
        CHECK(g.value(y).dims[3] == 10);
    }
    auto build = [&](G& g) {
        const int y = ops::tconv2x2(g, g.add_param(x), g.add_param(w), g.add_param(b));
        return ops::sum_squares(g, y);
    };
    CHECK(max_fd_error(w, build) < 1e-6);
    CHECK(max_fd_error(x, build) < 1e-6);
    CHECK(max_fd_error(b, build) < 1e-6);
}

TEST_CASE("linear, pooling, slicing, stacking and the reductions differentiate correctly")
{
    auto x = random_param({2, 4, 6, 6}, Component::kExprEncoder, 7);
    auto w = random_param({3, 4}, Component::kExprEncoder, 8, 0.4);
    auto b = random_param({3}, Component::kExprEncoder, 9, 0.1);
    auto build = [&](G& g) {
        const int xi = g.add_param(x);
        const int pooled = ops::global_avg_pool(g, xi);          // [2,4]
        const int lin = ops::linear(g, pooled, g.add_param(w), g.add_param(b)); // [2,3]
        const int r0 = ops::slice_row(g, lin, 0);
        const int r1 = ops::slice_row(g, lin, 1);
        const int l1 = ops::mean_abs_diff(g, r0, r1);
        const int part = ops::slice_vec(g, r0, 1, 2);
        const int sq = ops::sum_squares(g, part);
        const int s0 = ops::slice_batch(g, xi, 0);
        const int s1 = ops::slice_batch(g, xi, 1);
        const int cat = ops::concat_ch(g, s0, ops::relu(g, s1));
        const int st = ops::stack(g, std::vector<int>{cat, cat});
        const int m = ops::mse(g, st, ops::scale(g, ops::detach(g, st), 0.0));
        return ops::weighted_sum(g, std::vector<int>{l1, sq, m},
                                 std::vector<double>{0.4, 1.2, 0.9});
    };
    CHECK(max_fd_error(x, build) < 1e-5);
    CHECK(max_fd_error(w, build) < 1e-5);
    CHECK(max_fd_error(b, build) < 1e-5);
}

TEST_CASE("detach blocks gradients; add/sub/scale route them")
{
    auto x = random_param({5}, Component::kExprEncoder, 10);
    {
        G g;
        const int xi = g.add_param(x);
        const int loss = ops::sum_squares(g, ops::detach(g, xi));
        x.grad.fill(0.0);
        g.backward(loss, 0xffffffffu);
        for (double v : x.grad.v)
            CHECK(v == 0.0);
    }
    auto build = [&](G& g) {
        const int xi = g.add_param(x);
        const int a = ops::add(g, xi, ops::scale(g, xi, 0.5));
        const int s = ops::sub(g, a, ops::scale(g, xi, 2.0));
        return ops::sum_squares(g, s);
    };
    CHECK(max_fd_error(x, build) < 1e-7);
}

TEST_CASE("component gating: only allowed components receive weight gradients")
{
    auto a = random_param({4}, Component::kExprEncoder, 11);
    auto b = random_param({4}, Component::kTranslator, 12);
    G g;
    const int ai = g.add_param(a);
    const int bi = g.add_param(b);
    const int loss = ops::sum_squares(g, ops::add(g, ai, bi));
    a.grad.fill(0.0);
    b.grad.fill(0.0);
    g.backward(loss, component_bit(Component::kExprEncoder));
    double na = 0, nb = 0;
    for (int i = 0; i < 4; ++i)
    {
        na += std::abs(a.grad.v[i]);
        nb += std::abs(b.grad.v[i]);
    }
    CHECK(na > 0.0);
    CHECK(nb == 0.0);

    // gradients still flowed *through* the translator-side node: allowing both
    // components in a second pass deposits them
    g.backward(loss, components({Component::kExprEncoder, Component::kTranslator}));
    nb = 0;
    for (int i = 0; i < 4; ++i)
        nb += std::abs(b.grad.v[i]);
    CHECK(nb > 0.0);
}

TEST_CASE("backward on a non-scalar root is a logic error")
{
    auto x = random_param({4}, Component::kExprEncoder, 13);
    G g;
    const int xi = g.add_param(x);
    CHECK_THROWS_AS(g.backward(xi, 0xffffffffu), std::logic_error);
}
