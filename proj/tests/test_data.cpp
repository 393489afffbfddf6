/*
 * facelab - analysis-by-neural-synthesis 3D face reconstruction.
 *
 * File: tests/test_data.cpp
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
#include "facelab/data.hpp"

#include "facelab/raster.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <set>

using namespace facelab;
using facelab::test::files_equal;
using facelab::test::scratch_dir;
using facelab::test::tiny_spec;

TEST_CASE("generate_dataset writes n samples plus a manifest")
{
    const MorphableModel m = build_synthetic_model(tiny_spec(), 5);
    const auto dir = scratch_dir("gen10");
    GenerateOptions opt;
    opt.count = 10;
    opt.image_size = 32;
    const DatasetManifest manifest = generate_dataset(m, opt, 9, dir);
    CHECK(manifest.count == 10);
    CHECK(std::filesystem::exists(dir / "manifest.json"));
    for (int i = 0; i < 10; ++i)
    {
        char name[64];
        std::snprintf(name, sizeof(name), "sample_%05d", i);
        CHECK(std::filesystem::exists(dir / "images" / (std::string(name) + ".png")));
        CHECK(std::filesystem::exists(dir / "params" / (std::string(name) + ".json")));
    }
    CHECK_THROWS_AS(generate_dataset(m, GenerateOptions{.count = 0}, 1, dir), ConfigError);
}

TEST_CASE("the same seed regenerates byte-identical files")
{
    const MorphableModel m = build_synthetic_model(tiny_spec(), 5);
    const auto a = scratch_dir("gen_a");
    const auto b = scratch_dir("gen_b");
    GenerateOptions opt;
    opt.count = 6;
    opt.image_size = 32;
    generate_dataset(m, opt, 42, a);
    generate_dataset(m, opt, 42, b);
    for (int i = 0; i < 6; ++i)
    {
        char name[64];
        std::snprintf(name, sizeof(name), "sample_%05d", i);
        CHECK(files_equal(a / "images" / (std::string(name) + ".png"),
                          b / "images" / (std::string(name) + ".png")));
        CHECK(files_equal(a / "params" / (std::string(name) + ".json"),
                          b / "params" / (std::string(name) + ".json")));
    }
    CHECK(files_equal(a / "manifest.json", b / "manifest.json"));

    SUBCASE("re-rendering a stored sample reproduces the stored image bit-exactly")
    {
        const Dataset ds = Dataset::load(a);
        for (int i : {0, 3})
        {
            const Image re = regenerate_sample_image(ds.model(), ds.manifest(), i);
            CHECK(re.v == ds.image(i).v);
        }
    }
}

TEST_CASE("dataset round trip: params to float32 precision, landmarks recomputable")
{
    const MorphableModel m = build_synthetic_model(tiny_spec(), 5);
    const auto dir = scratch_dir("gen_rt");
    GenerateOptions opt;
    opt.count = 8;
    opt.image_size = 32;
    generate_dataset(m, opt, 13, dir);
    const Dataset ds = Dataset::load(dir);

    for (int i = 0; i < 8; ++i)
    {
        FaceParams regen;
        regenerate_sample_image(ds.model(), ds.manifest(), i, &regen);
        const FaceParams& loaded = ds.params(i);
        CHECK((loaded.beta - regen.beta).cwiseAbs().maxCoeff() == 0.0);
        CHECK((loaded.psi_expr - regen.psi_expr).cwiseAbs().maxCoeff() == 0.0);
        CHECK(loaded.cam_scale == regen.cam_scale);

        // landmarks recomputed from the loaded parameters agree to float32 print precision
        const Eigen::MatrixX2d lmk = landmarks2d(ds.model(), loaded);
        CHECK((lmk - ds.landmarks(i)).cwiseAbs().maxCoeff() < 1e-4);
    }
}

TEST_CASE("splits are disjoint and exhaustive; out-of-range access throws")
{
    const MorphableModel m = build_synthetic_model(tiny_spec(), 5);
    const auto dir = scratch_dir("gen_split");
    GenerateOptions opt;
    opt.count = 10;
    opt.image_size = 32;
    opt.train_frac = 0.6;
    opt.val_frac = 0.2;
    generate_dataset(m, opt, 3, dir);
    const Dataset ds = Dataset::load(dir);
    CHECK(ds.split_size(Split::kTrain) == 6);
    CHECK(ds.split_size(Split::kVal) == 2);
    CHECK(ds.split_size(Split::kTest) == 2);
    std::set<int> seen;
    for (auto s : {Split::kTrain, Split::kVal, Split::kTest})
        for (int i = 0; i < ds.split_size(s); ++i)
            seen.insert(ds.split_index(s, i));
    CHECK(seen.size() == 10);
    CHECK_THROWS_AS(ds.split_index(Split::kTrain, 6), ContractViolation);
    CHECK_THROWS_AS(load_batch(ds, Split::kTest, {5}), ContractViolation);
}

TEST_CASE("load_batch gathers images, parameters and landmarks")
{
    const MorphableModel m = build_synthetic_model(tiny_spec(), 5);
    const auto dir = scratch_dir("gen_batch");
    GenerateOptions opt;
    opt.count = 10;
    opt.image_size = 32;
    generate_dataset(m, opt, 3, dir);
    const Dataset ds = Dataset::load(dir);
    const Batch b = load_batch(ds, Split::kTrain, {0, 2, 3});
    REQUIRE(b.images.size() == 3);
    CHECK(b.images[1] == &ds.image(2));
    CHECK(b.params[2]->beta.size() == m.spec.d_beta);
    CHECK(b.landmarks[0]->rows() == m.n_landmarks());
    for (float v : b.images[0]->v)
    {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("expression sampling has a heavy tail beyond twice the mean norm")
{
    const MorphableModel m = build_synthetic_model(tiny_spec(), 5);
    SampleDistribution dist;
    Rng rng(77);
    std::vector<double> norms;
    for (int i = 0; i < 2000; ++i)
    {
        Rng sample_rng = rng.fork(static_cast<std::uint64_t>(i));
        const FaceParams p = sample_params(m, dist, 32, sample_rng);
        norms.push_back(p.psi_expr.norm());
    }
    double mean = 0.0;
    for (double n : norms)
        mean += n;
    mean /= static_cast<double>(norms.size());
    int beyond = 0;
    for (double n : norms)
        if (n > 2.0 * mean)
            ++beyond;
    CHECK(static_cast<double>(beyond) / static_cast<double>(norms.size()) >= 0.05);
}

TEST_CASE("the appearance model never reaches the reconstruction inputs")
{
    // the geometry render depends only on (model, params); changing the
    // appearance configuration changes the dataset images but not S
    const MorphableModel m = build_synthetic_model(tiny_spec(), 5);
    Rng rng(3);
    SampleDistribution dist;
    Rng sample_rng = rng.fork(1);
    const FaceParams p = sample_params(m, dist, 32, sample_rng);
    RasterConfig rcfg;
    rcfg.height = 32;
    rcfg.width = 32;
    rcfg.sigma = 0.02;
    const RenderOutput s1 = render_geometry(m, p, rcfg);

    AppearanceConfig bright;
    bright.albedo_min = 0.9;
    bright.albedo_max = 1.0;
    AppearanceConfig dark;
    dark.albedo_min = 0.0;
    dark.albedo_max = 0.1;
    Rng a1(5), a2(5);
    const Eigen::MatrixX3d alb1 = sample_albedo(m, bright, a1);
    const Eigen::MatrixX3d alb2 = sample_albedo(m, dark, a2);
    Rng b1(6), b2(6);
    const Image img1 = render_textured(m, p, alb1, bright, 32, b1);
    const Image img2 = render_textured(m, p, alb2, dark, 32, b2);
    CHECK(img1.v != img2.v); // appearance changes the observed image...

    const RenderOutput s2 = render_geometry(m, p, rcfg);
    CHECK(s1.geometry.v == s2.geometry.v); // ...but never the geometry render
}

TEST_CASE("PNG io round-trips 8-bit images exactly")
{
    const auto dir = scratch_dir("png_io");
    Image img(3, 9, 13);
    Rng rng(2);
    for (auto& v : img.v)
        v = static_cast<float>(rng.uniform());
    img.quantize_u8();
    write_png(dir / "x.png", img);
    const Image r = read_png(dir / "x.png");
    REQUIRE(r.channels == 3);
    REQUIRE(r.height == 9);
    REQUIRE(r.width == 13);
    CHECK(r.v == img.v);
}
