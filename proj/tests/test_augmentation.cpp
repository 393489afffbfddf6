/*
 * facelab - analysis-by-neural-synthesis 3D face reconstruction.
 *
 * File: tests/test_augmentation.cpp
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
#include "facelab/augmentation.hpp"

#include "helpers.hpp"

#include <doctest.h>

using namespace facelab;
using facelab::test::scratch_dir;
using facelab::test::tiny_spec;

namespace {

std::vector<Eigen::VectorXd> random_psi_batch(int n, int d_expr, std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<Eigen::VectorXd> out;
    for (int i = 0; i < n; ++i)
    {
        Eigen::VectorXd v(d_expr + 5);
        for (int k = 0; k < v.size(); ++k)
            v[k] = rng.normal(0.0, 0.4);
        out.push_back(v);
    }
    return out;
}

} // namespace

TEST_CASE("zero mode: expressions zeroed, jaw drawn from the wider range")
{
    AugmentPlan plan;
    plan.mode = AugmentMode::kZero;
    Rng rng(4);
    const auto batch = random_psi_batch(6, 6, 1);
    const auto out = augment_expressions(batch, plan, nullptr, rng);
    for (const auto& v : out)
    {
        CHECK(v.head(6).norm() == 0.0);
        CHECK(v[6 + 2] >= plan.zero_jaw_min);
        CHECK(v[6 + 2] <= plan.zero_jaw_max);
        CHECK(v[6] >= plan.eyelid_min);
        CHECK(v[6] <= plan.eyelid_max);
    }
}

TEST_CASE("permute on a batch of two swaps the expressions")
{
    AugmentPlan plan;
    plan.mode = AugmentMode::kPermute;
    Rng rng(4);
    const auto batch = random_psi_batch(2, 6, 2);
    const auto out = augment_expressions(batch, plan, nullptr, rng);
    CHECK((out[0].head(6) - batch[1].head(6)).norm() == 0.0);
    CHECK((out[1].head(6) - batch[0].head(6)).norm() == 0.0);
}

TEST_CASE("permute never maps an element to itself")
{
    AugmentPlan plan;
    plan.mode = AugmentMode::kPermute;
    Rng rng(9);
    const auto batch = random_psi_batch(8, 6, 3);
    for (int trial = 0; trial < 20; ++trial)
    {
        const auto out = augment_expressions(batch, plan, nullptr, rng);
        for (size_t i = 0; i < batch.size(); ++i)
            CHECK((out[i].head(6) - batch[i].head(6)).norm() > 0.0);
    }
    const auto one = random_psi_batch(1, 6, 4);
    CHECK_THROWS_AS(augment_expressions(one, plan, nullptr, rng), ContractViolation);
}

TEST_CASE("perturb with zero noise keeps expressions, still re-draws jaw/eyelids")
{
    AugmentPlan plan;
    plan.mode = AugmentMode::kPerturb;
    plan.noise_scale = 0.0;
    Rng rng(4);
    const auto batch = random_psi_batch(4, 6, 5);
    const auto out = augment_expressions(batch, plan, nullptr, rng);
    for (size_t i = 0; i < batch.size(); ++i)
    {
        CHECK((out[i].head(6) - batch[i].head(6)).norm() == 0.0);
        CHECK(out[i][6 + 2] >= plan.jaw_min);
        CHECK(out[i][6 + 2] <= plan.jaw_max);
    }
}

TEST_CASE("inject requires a non-empty library and substitutes template expressions")
{
    AugmentPlan plan;
    plan.mode = AugmentMode::kInject;
    Rng rng(4);
    const auto batch = random_psi_batch(4, 6, 6);
    CHECK_THROWS_AS(augment_expressions(batch, plan, nullptr, rng), ConfigError);
    TemplateLibrary empty;
    CHECK_THROWS_AS(augment_expressions(batch, plan, &empty, rng), ConfigError);

    TemplateLibrary lib;
    TemplateEntry e;
    e.name = "probe";
    e.provenance = "authored";
    e.psi_full = Eigen::VectorXd::Zero(11);
    e.psi_full[0] = 3.0;
    lib.entries.push_back(e);
    const auto out = augment_expressions(batch, plan, &lib, rng);
    for (const auto& v : out)
        CHECK(v[0] == 3.0);
}

TEST_CASE("augmentation only rewrites the Psi group")
{
    // the shape/pose/camera parameters are outside the vectors entirely; check
    // that batch entries keep their length and the expression slots change only
    AugmentPlan plan;
    plan.mode = AugmentMode::kPerturb;
    plan.noise_scale = 0.3;
    Rng rng(4);
    const auto batch = random_psi_batch(4, 6, 7);
    const auto out = augment_expressions(batch, plan, nullptr, rng);
    for (size_t i = 0; i < batch.size(); ++i)
        CHECK(out[i].size() == batch[i].size());
}

TEST_CASE("invalid plans are configuration errors")
{
    AugmentPlan plan;
    plan.zero_jaw_max = plan.jaw_max - 0.1; // zero range must contain the jaw range
    Rng rng(1);
    CHECK_THROWS_AS(augment_expressions(random_psi_batch(2, 6, 1), plan, nullptr, rng),
                    ConfigError);
}

TEST_CASE("mode frequencies match a uniform mixture within 2%")
{
    Rng rng(123);
    const std::vector<double> mix{0.25, 0.25, 0.25, 0.25};
    std::array<int, 4> counts{0, 0, 0, 0};
    const int trials = 40000;
    for (int i = 0; i < trials; ++i)
    {
        double u = rng.uniform();
        int mode = 3;
        double acc = 0.0;
        for (int k = 0; k < 4; ++k)
        {
            acc += mix[static_cast<size_t>(k)];
            if (u < acc)
            {
                mode = k;
                break;
            }
        }
        counts[static_cast<size_t>(mode)]++;
    }
    for (int k = 0; k < 4; ++k)
        CHECK(std::abs(counts[static_cast<size_t>(k)] / static_cast<double>(trials) - 0.25) <
              0.02);
}

TEST_CASE("fit_template")
{
    const MorphableModel m = build_synthetic_model(tiny_spec(), 7);
    const Eigen::VectorXd beta = Eigen::VectorXd::Zero(m.spec.d_beta);

    SUBCASE("round trip: a mesh decoded from known parameters is recovered")
    {
        Rng rng(3);
        FaceParams truth = FaceParams::zero(m.spec.d_beta, m.spec.d_psi);
        for (int i = 0; i < m.spec.d_psi; ++i)
            truth.psi_expr[i] = rng.normal(0.0, 0.6);
        truth.eyelids = Eigen::Vector2d(0.5, 0.3);
        truth.jaw = Eigen::Vector3d(0.3, 0.0, 0.0);
        FitTarget target;
        target.points = decode(m, truth);
        const FitResult fit = fit_template({target}, m, beta);
        FaceParams rec = FaceParams::zero(m.spec.d_beta, m.spec.d_psi);
        rec.set_psi_full(fit.psi_full[0]);
        rec.pose = fit.pose[0];
        const Eigen::MatrixX3d got = decode(m, rec);
        CHECK((got - target.points).cwiseAbs().maxCoeff() < 1e-3);
    }

    SUBCASE("neutral target fits to (nearly) zero parameters")
    {
        FitTarget target;
        target.points = m.template_verts;
        const FitResult fit = fit_template({target}, m, beta);
        CHECK(fit.psi_full[0].norm() < 1e-3);
        CHECK(fit.residual[0] < 1e-9);
    }

    SUBCASE("a rigidly rotated neutral is absorbed by pose, not expression")
    {
        const Eigen::Matrix3d R = rodrigues(Eigen::Vector3d(0.1, -0.12, 0.08));
        FitTarget target;
        target.points = (R * m.template_verts.transpose()).transpose();
        const FitResult fit = fit_template({target}, m, beta);
        CHECK(fit.psi_full[0].norm() < 5e-3);
        CHECK(fit.pose[0].norm() > 0.05);
        CHECK(fit.residual[0] < 1e-6);
    }

    SUBCASE("residual history is monotone non-increasing (accepted steps)")
    {
        // implied by the step-halving acceptance rule; spot-check convergence
        Rng rng(5);
        FaceParams truth = FaceParams::zero(m.spec.d_beta, m.spec.d_psi);
        truth.psi_expr[0] = 1.0;
        FitTarget target;
        target.points = decode(m, truth);
        const FitResult fit = fit_template({target}, m, beta);
        CHECK(fit.residual[0] < 1e-6);
        CHECK(fit.iterations[0] <= 2000);
    }
}

TEST_CASE("extreme library: labels, determinism, scale floor, round trip")
{
    const MorphableModel m = build_synthetic_model(tiny_spec(), 7);
    LibrarySpec spec;
    spec.per_class = 2;
    spec.mean_data_norm = 1.0;
    spec.min_norm_factor = 2.2;
    Rng rng(71);
    const TemplateLibrary lib = build_extreme_library(m, spec, rng);
    CHECK(lib.size() == extreme_class_names().size() * 2);

    Rng rng2(71);
    const TemplateLibrary again = build_extreme_library(m, spec, rng2);
    for (size_t i = 0; i < lib.size(); ++i)
        CHECK((lib.entries[i].psi_full - again.entries[i].psi_full).norm() == 0.0);

    for (const auto& e : lib.entries)
    {
        CHECK(e.psi_full.head(m.spec.d_psi).norm() >= 2.2);
        FaceParams p = FaceParams::zero(m.spec.d_beta, m.spec.d_psi);
        p.set_psi_full(e.psi_full);
        CHECK(decode(m, p).allFinite());
    }

    SUBCASE("each entry survives a fit_template round trip within 1e-3")
    {
        const Eigen::VectorXd beta = Eigen::VectorXd::Zero(m.spec.d_beta);
        for (size_t i = 0; i < 3; ++i) // spot-check a few entries
        {
            FaceParams p = FaceParams::zero(m.spec.d_beta, m.spec.d_psi);
            p.set_psi_full(lib.entries[i].psi_full);
            FitTarget t;
            t.points = decode(m, p);
            const FitResult fit = fit_template({t}, m, beta);
            FaceParams rec = FaceParams::zero(m.spec.d_beta, m.spec.d_psi);
            rec.set_psi_full(fit.psi_full[0]);
            rec.pose = fit.pose[0];
            CHECK((decode(m, rec) - t.points).cwiseAbs().maxCoeff() < 1e-3);
        }
    }

    SUBCASE("library JSON round-trips")
    {
        const auto dir = scratch_dir("library_io");
        lib.save(dir / "lib.json");
        const TemplateLibrary r = TemplateLibrary::load(dir / "lib.json");
        REQUIRE(r.size() == lib.size());
        for (size_t i = 0; i < lib.size(); ++i)
        {
            CHECK(r.entries[i].name == lib.entries[i].name);
            CHECK((r.entries[i].psi_full - lib.entries[i].psi_full).cwiseAbs().maxCoeff() < 1e-15);
        }
    }
}
