/*
 * facelab - analysis-by-neural-synthesis 3D face reconstruction.
 *
 * File: tests/test_raster.cpp
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
#include "facelab/raster.hpp"

#include "helpers.hpp"

#include <doctest.h>

using namespace facelab;
using facelab::test::tiny_spec;

namespace {

Eigen::Matrix<int, Eigen::Dynamic, 3> one_triangle()
{
    Eigen::Matrix<int, Eigen::Dynamic, 3> t(1, 3);
    t << 0, 1, 2;
    return t;
}

} // namespace

TEST_CASE("a mesh outside the frame renders to zeros")
{
    Eigen::MatrixX3d verts(3, 3);
    verts << 100, 100, 0, 101, 100, 0, 100, 101, 0;
    RasterConfig cfg;
    cfg.height = 16;
    cfg.width = 16;
    cfg.sigma = 0.05;
    const RenderOutput r = render_geometry(verts, one_triangle(), 1.0, -500.0, -500.0, cfg);
    for (float v : r.geometry.v)
        CHECK(v == 0.0f);
    for (auto v : r.face_mask)
        CHECK(v == 0);
}

TEST_CASE("a large camera-facing triangle shades to 1 in its interior")
{
    Eigen::MatrixX3d verts(3, 3);
    verts << -3, -3, 0, 3, -3, 0, 0, 4, 0; // counterclockwise, normal +z
    RasterConfig cfg;
    cfg.height = 32;
    cfg.width = 32;
    cfg.sigma = 0.01;
    const RenderOutput r = render_geometry(verts, one_triangle(), 8.0, 16.0, 16.0, cfg);
    // probe well inside the triangle
    CHECK(r.geometry.at(0, 16, 16) == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(r.geometry.at(0, 12, 16) == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(r.soft_coverage.at(0, 16, 16) > 0.99f);
    CHECK(r.face_mask[16 * 32 + 16] == 1);
}

TEST_CASE("S is zero wherever soft coverage is zero, and the mask implies coverage > 0.5")
{
    const MorphableModel m = build_synthetic_model(tiny_spec(), 3);
    FaceParams p = FaceParams::zero(m.spec.d_beta, m.spec.d_psi);
    p.cam_scale = 12.0;
    p.cam_tx = 16.0;
    p.cam_ty = 16.0;
    RasterConfig cfg;
    cfg.height = 32;
    cfg.width = 32;
    cfg.sigma = 0.02;
    const RenderOutput r = render_geometry(m, p, cfg);
    for (size_t i = 0; i < r.geometry.v.size(); ++i)
    {
        if (r.soft_coverage.v[i] == 0.0f)
            CHECK(r.geometry.v[i] == 0.0f);
        if (r.face_mask[i])
            CHECK(r.soft_coverage.v[i] > 0.5f);
    }
}

TEST_CASE("degenerate triangles contribute nothing and never NaN")
{
    Eigen::MatrixX3d verts(3, 3);
    verts << 0, 0, 0, 1, 1, 0, 2, 2, 0; // collinear
    RasterConfig cfg;
    cfg.height = 8;
    cfg.width = 8;
    cfg.sigma = 0.1;
    const RenderOutput r = render_geometry(verts, one_triangle(), 2.0, 4.0, 4.0, cfg);
    for (float v : r.geometry.v)
    {
        CHECK(std::isfinite(v));
        CHECK(v == 0.0f);
    }
}

TEST_CASE("render gradients match central finite differences (8x8, 2 triangles)")
{
    Eigen::MatrixX3d verts(4, 3);
    verts << -0.6, -0.5, 0.05, 0.7, -0.55, 0.3, 0.6, 0.6, 0.0, -0.5, 0.62, 0.2;
    Eigen::Matrix<int, Eigen::Dynamic, 3> tris(2, 3);
    tris << 0, 1, 2, 0, 2, 3;
    RasterConfig cfg;
    cfg.height = 8;
    cfg.width = 8;
    cfg.sigma = 0.25;
    cfg.z_temp = 0.15;
    double cam[3] = {4.0, 4.0, 4.0};
    std::vector<double> vbuf(12);
    for (int i = 0; i < 12; ++i)
        vbuf[static_cast<size_t>(i)] = verts.data()[0]; // filled below
    for (int i = 0; i < 4; ++i)
        for (int c = 0; c < 3; ++c)
            vbuf[static_cast<size_t>(i) * 3 + c] = verts(i, c);

    auto total = [&](const std::vector<double>& vb, const double* cm) {
        const auto out = render_soft<double>(vb.data(), 4, tris, cm, cfg);
        double s = 0;
        for (double e : out.image)
            s += e;
        return s;
    };

    // analytic
    const auto saved = render_soft<double>(vbuf.data(), 4, tris, cam, cfg);
    std::vector<double> dS(saved.image.size(), 1.0);
    std::vector<double> dverts(12, 0.0);
    double dcam[3] = {0, 0, 0};
    render_soft_backward<double>(vbuf.data(), 4, tris, cam, cfg, saved, dS.data(), dverts.data(),
                                 dcam);

    const double h = 1e-4;
    for (int i = 0; i < 12; ++i)
    {
        std::vector<double> a = vbuf, b = vbuf;
        a[static_cast<size_t>(i)] += h;
        b[static_cast<size_t>(i)] -= h;
        const double fd = (total(a, cam) - total(b, cam)) / (2 * h);
        const double an = dverts[static_cast<size_t>(i)];
        CHECK(std::abs(fd - an) / std::max(1.0, std::abs(fd)) < 1e-2);
    }
    for (int i = 0; i < 3; ++i)
    {
        double a[3] = {cam[0], cam[1], cam[2]}, b[3] = {cam[0], cam[1], cam[2]};
        a[i] += h;
        b[i] -= h;
        const double fd = (total(vbuf, a) - total(vbuf, b)) / (2 * h);
        CHECK(std::abs(fd - dcam[i]) / std::max(1.0, std::abs(fd)) < 1e-2);
    }
}

TEST_CASE("gradients are finite for a face render at the sharp default softness")
{
    const MorphableModel m = build_synthetic_model(tiny_spec(), 3);
    FaceParams p = FaceParams::zero(m.spec.d_beta, m.spec.d_psi);
    p.cam_scale = 12.0;
    p.cam_tx = 16.0;
    p.cam_ty = 16.0;
    RasterConfig cfg;
    cfg.height = 32;
    cfg.width = 32;
    cfg.sigma = 1e-4; // production default
    const Eigen::MatrixX3d verts = decode(m, p);
    std::vector<double> vbuf(static_cast<size_t>(verts.rows()) * 3);
    for (int i = 0; i < verts.rows(); ++i)
        for (int c = 0; c < 3; ++c)
            vbuf[static_cast<size_t>(i) * 3 + c] = verts(i, c);
    const double cam[3] = {p.cam_scale, p.cam_tx, p.cam_ty};
    const auto saved = render_soft<double>(vbuf.data(), verts.rows(), m.face_triangles, cam, cfg);
    std::vector<double> dS(saved.image.size(), 1.0);
    std::vector<double> dverts(vbuf.size(), 0.0);
    double dcam[3] = {0, 0, 0};
    render_soft_backward<double>(vbuf.data(), verts.rows(), m.face_triangles, cam, cfg, saved,
                                 dS.data(), dverts.data(), dcam);
    for (double d : dverts)
        CHECK(std::isfinite(d));
    for (double d : dcam)
        CHECK(std::isfinite(d));
}

TEST_CASE("integer camera translation shifts the image")
{
    const MorphableModel m = build_synthetic_model(tiny_spec(), 3);
    FaceParams p = FaceParams::zero(m.spec.d_beta, m.spec.d_psi);
    p.cam_scale = 10.0;
    p.cam_tx = 14.0;
    p.cam_ty = 16.0;
    RasterConfig cfg;
    cfg.height = 32;
    cfg.width = 32;
    cfg.sigma = 0.02;
    const RenderOutput a = render_geometry(m, p, cfg);
    p.cam_tx += 3.0;
    p.cam_ty += 2.0;
    const RenderOutput b = render_geometry(m, p, cfg);
    double max_diff = 0.0;
    for (int y = 4; y < 28; ++y)
        for (int x = 4; x < 28; ++x)
        {
            if (x - 3 < 0 || y - 2 < 0)
                continue;
            max_diff = std::max(max_diff, std::abs(static_cast<double>(b.geometry.at(0, y, x)) -
                                                   a.geometry.at(0, y - 2, x - 3)));
        }
    CHECK(max_diff < 1e-3);
}

TEST_CASE("soft coverage converges to the hard point-in-triangle indicator as sigma shrinks")
{
    Eigen::MatrixX3d verts(3, 3);
    verts << -0.6, -0.6, 0, 0.7, -0.4, 0, 0.05, 0.7, 0;
    RasterConfig cfg;
    cfg.height = 24;
    cfg.width = 24;
    const double cam[3] = {12.0, 12.0, 12.0};

    // hard indicator at pixel centers
    auto inside = [&](double cx, double cy) {
        double px[3], py[3];
        for (int k = 0; k < 3; ++k)
        {
            px[k] = cam[0] * verts(k, 0) + cam[1];
            py[k] = cam[0] * verts(k, 1) + cam[2];
        }
        bool all_pos = true, all_neg = true;
        for (int e = 0; e < 3; ++e)
        {
            const int j = (e + 1) % 3;
            const double c =
                (px[j] - px[e]) * (cy - py[e]) - (py[j] - py[e]) * (cx - px[e]);
            all_pos &= c >= 0;
            all_neg &= c <= 0;
        }
        return all_pos || all_neg;
    };

    // pointwise convergence: judge pixels at least half a pixel from the edge
    double tri2d[6];
    for (int k = 0; k < 3; ++k)
    {
        tri2d[2 * k] = cam[0] * verts(k, 0) + cam[1];
        tri2d[2 * k + 1] = cam[0] * verts(k, 1) + cam[2];
    }
    double prev_err = 1e9;
    for (double sigma : {1.0, 0.1, 0.01})
    {
        cfg.sigma = sigma;
        const RenderOutput r = render_geometry(verts, one_triangle(), cam[0], cam[1], cam[2], cfg);
        double err = 0.0;
        for (int y = 0; y < 24; ++y)
            for (int x = 0; x < 24; ++x)
            {
                const double d = raster_detail::signed_distance<double>(x + 0.5, y + 0.5, tri2d,
                                                                        nullptr);
                if (std::abs(d) < 0.5)
                    continue;
                const double hard = inside(x + 0.5, y + 0.5) ? 1.0 : 0.0;
                err = std::max(err, std::abs(r.soft_coverage.at(0, y, x) - hard));
            }
        CHECK(err < prev_err);
        prev_err = err;
    }
    CHECK(prev_err < 0.05);
}

TEST_CASE("hard_face_mask thresholds coverage and is monotone in the threshold")
{
    Eigen::MatrixX3d verts(3, 3);
    verts << -0.8, -0.8, 0, 0.8, -0.7, 0, 0.0, 0.8, 0;
    RasterConfig cfg;
    cfg.height = 32;
    cfg.width = 32;
    cfg.sigma = 0.15;
    const RenderOutput r = render_geometry(verts, one_triangle(), 16.0, 16.0, 16.0, cfg);

    SUBCASE("all-zero coverage thresholds to all-false")
    {
        RenderOutput empty;
        empty.height = 4;
        empty.width = 4;
        empty.soft_coverage = Image(1, 4, 4);
        const auto mask = hard_face_mask(empty, 0.5);
        for (auto v : mask)
            CHECK(v == 0);
    }

    SUBCASE("mask area is monotone non-increasing in the threshold")
    {
        size_t prev = static_cast<size_t>(-1);
        for (double t : {0.2, 0.5, 0.8})
        {
            const auto mask = hard_face_mask(r, t);
            const size_t area = std::count(mask.begin(), mask.end(), std::uint8_t(1));
            CHECK(area <= prev);
            prev = area;
        }
        CHECK_THROWS_AS(hard_face_mask(r, 0.0), ContractViolation);
    }

    SUBCASE("mask area approximates the projected polygon area")
    {
        // exact projected triangle area in pixels
        double px[3], py[3];
        for (int k = 0; k < 3; ++k)
        {
            px[k] = 16.0 * verts(k, 0) + 16.0;
            py[k] = 16.0 * verts(k, 1) + 16.0;
        }
        const double area =
            0.5 * std::abs((px[1] - px[0]) * (py[2] - py[0]) - (py[1] - py[0]) * (px[2] - px[0]));
        const auto mask = hard_face_mask(r, 0.5);
        const double masked = static_cast<double>(std::count(mask.begin(), mask.end(), std::uint8_t(1)));
        CHECK(masked > 0.95 * area);
        CHECK(masked < 1.05 * area);
    }
}
