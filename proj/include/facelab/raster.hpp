/*
 * facelab - analysis-by-neural-synthesis 3D face reconstruction.
 *
 * File: include/facelab/raster.hpp
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
#pragma once

#include "facelab/core/image.hpp"
#include "facelab/model.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace facelab {

/**
 * Soft rasterization settings. Edge coverage is a sigmoid of the signed
 * distance to the triangle boundary (temperature `sigma`, in normalized
 * device units where the short image side spans [-1,1]); depth is resolved
 * by a softmax over per-triangle centroid depth with temperature `z_temp`.
 * Shading is Lambertian against a fixed frontal light, so the output encodes
 * geometry only.
 */
struct RasterConfig
{
    int height = 128;
    int width = 128;
    double sigma = 1e-4;
    double z_temp = 0.05;
    double bg_z = -2.0;   // pseudo-depth of the background
    double cutoff = 12.0; // ignore coverage beyond cutoff*sigma outside an edge

    Json to_json() const
    {
        return Json{{"height", height}, {"width", width},   {"sigma", sigma},
                    {"z_temp", z_temp}, {"bg_z", bg_z},     {"cutoff", cutoff}};
    }
    static RasterConfig from_json(const Json& j)
    {
        RasterConfig c;
        c.height = j.at("height").get<int>();
        c.width = j.at("width").get<int>();
        c.sigma = j.at("sigma").get<double>();
        c.z_temp = j.at("z_temp").get<double>();
        c.bg_z = j.at("bg_z").get<double>();
        c.cutoff = j.at("cutoff").get<double>();
        return c;
    }
};

struct RenderOutput
{
    Image geometry;              // S: H x W grayscale in [0,1]
    Image soft_coverage;         // H x W in [0,1]
    std::vector<std::uint8_t> face_mask; // H*W, soft_coverage > 0.5
    int height = 0;
    int width = 0;
};

inline std::vector<std::uint8_t> hard_face_mask(const RenderOutput& r, double threshold = 0.5)
{
    if (!(threshold > 0.0 && threshold < 1.0))
        throw ContractViolation("hard_face_mask: threshold must be in (0,1)");
    std::vector<std::uint8_t> mask(r.soft_coverage.v.size());
    for (size_t i = 0; i < mask.size(); ++i)
        mask[i] = r.soft_coverage.v[i] > threshold ? 1 : 0;
    return mask;
}

namespace raster_detail {

/**
 * Signed distance (pixels, positive inside) from point p to the triangle
 * (a,b,c), plus its gradient with respect to the three vertices when
 * `grads` is non-null. The gradient follows the closest boundary feature.
 */
template <typename S>
S signed_distance(const S px, const S py, const S* tri /*6 values: ax,ay,bx,by,cx,cy*/,
                  S grads[6] /*nullable*/)
{
    // orientation from signed area (may be either winding after projection)
    const S ax = tri[0], ay = tri[1], bx = tri[2], by = tri[3], cx = tri[4], cy = tri[5];
    const S area2 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax);
    const S orient = area2 >= S(0) ? S(1) : S(-1);

    bool inside = true;
    S best = std::numeric_limits<S>::max();
    int best_edge = -1, best_case = 0; // 0: interior of edge, 1: endpoint a, 2: endpoint b
    for (int e = 0; e < 3; ++e)
    {
        const int i0 = e, i1 = (e + 1) % 3;
        const S x0 = tri[2 * i0], y0 = tri[2 * i0 + 1];
        const S x1 = tri[2 * i1], y1 = tri[2 * i1 + 1];
        const S ex = x1 - x0, ey = y1 - y0;
        const S wx = px - x0, wy = py - y0;
        const S cross = ex * wy - ey * wx; // z of (b-a) x (p-a)
        if (cross * orient < S(0))
            inside = false;
        const S ee = ex * ex + ey * ey;
        S d;
        int cse;
        if (ee <= S(0))
        {
            d = std::sqrt(wx * wx + wy * wy);
            cse = 1;
        }
        else
        {
            const S u = (wx * ex + wy * ey) / ee;
            if (u <= S(0))
            {
                d = std::sqrt(wx * wx + wy * wy);
                cse = 1;
            }
            else if (u >= S(1))
            {
                const S vx = px - x1, vy = py - y1;
                d = std::sqrt(vx * vx + vy * vy);
                cse = 2;
            }
            else
            {
                d = std::abs(cross) / std::sqrt(ee);
                cse = 0;
            }
        }
        if (d < best)
        {
            best = d;
            best_edge = e;
            best_case = cse;
        }
    }
    const S sgn = inside ? S(1) : S(-1);
    if (grads != nullptr)
    {
        for (int i = 0; i < 6; ++i)
            grads[i] = S(0);
        const int i0 = best_edge, i1 = (best_edge + 1) % 3;
        const S x0 = tri[2 * i0], y0 = tri[2 * i0 + 1];
        const S x1 = tri[2 * i1], y1 = tri[2 * i1 + 1];
        if (best_case == 1)
        {
            const S wx = px - x0, wy = py - y0;
            if (best > S(0))
            {
                grads[2 * i0] = sgn * (-wx / best);
                grads[2 * i0 + 1] = sgn * (-wy / best);
            }
        }
        else if (best_case == 2)
        {
            const S vx = px - x1, vy = py - y1;
            if (best > S(0))
            {
                grads[2 * i1] = sgn * (-vx / best);
                grads[2 * i1 + 1] = sgn * (-vy / best);
            }
        }
        else
        {
            const S ex = x1 - x0, ey = y1 - y0;
            const S wx = px - x0, wy = py - y0;
            const S L2 = ex * ex + ey * ey;
            const S L = std::sqrt(L2);
            const S cross = ex * wy - ey * wx;
            const S sc = cross >= S(0) ? S(1) : S(-1);
            // d = |cross| / L
            const S dc_dax = ey - wy, dc_day = wx - ex; // d cross / d a
            const S dc_dbx = wy, dc_dby = -wx;          // d cross / d b
            const S dabs = best; // |cross|/L
            grads[2 * i0] = sgn * (sc * dc_dax / L + dabs * ex / L2);
            grads[2 * i0 + 1] = sgn * (sc * dc_day / L + dabs * ey / L2);
            grads[2 * i1] = sgn * (sc * dc_dbx / L - dabs * ex / L2);
            grads[2 * i1 + 1] = sgn * (sc * dc_dby / L - dabs * ey / L2);
        }
    }
    return sgn * best;
}

/// Flat Lambertian shade of a camera-frame triangle under the frontal light.
template <typename S>
S shade_of(const S* v0, const S* v1, const S* v2)
{
    const S ux = v1[0] - v0[0], uy = v1[1] - v0[1], uz = v1[2] - v0[2];
    const S wx = v2[0] - v0[0], wy = v2[1] - v0[1], wz = v2[2] - v0[2];
    const S nx = uy * wz - uz * wy;
    const S ny = uz * wx - ux * wz;
    const S nz = ux * wy - uy * wx;
    const S nn = std::sqrt(nx * nx + ny * ny + nz * nz);
    if (nn <= S(0))
        return S(0);
    return std::max(S(0), nz / nn);
}

/// d shade / d vertices (9 values) for the flat shade above; zero if clamped.
template <typename S>
void shade_grad(const S* v0, const S* v1, const S* v2, S out[9])
{
    const S ux = v1[0] - v0[0], uy = v1[1] - v0[1], uz = v1[2] - v0[2];
    const S wx = v2[0] - v0[0], wy = v2[1] - v0[1], wz = v2[2] - v0[2];
    const S nx = uy * wz - uz * wy;
    const S ny = uz * wx - ux * wz;
    const S nz = ux * wy - uy * wx;
    const S nn2 = nx * nx + ny * ny + nz * nz;
    const S nn = std::sqrt(nn2);
    for (int i = 0; i < 9; ++i)
        out[i] = S(0);
    if (nn <= S(0) || nz / nn <= S(0))
        return;
    // d(nz/|n|)/dn = (e_z - (nz/|n|) n_hat) / |n|
    const S inv = S(1) / nn;
    const S sh = nz * inv;
    const S gx = (-sh * nx * inv) * inv;
    const S gy = (-sh * ny * inv) * inv;
    const S gz = (S(1) - sh * nz * inv) * inv;
    // n = u x w, u = v1 - v0, w = v2 - v0
    // dn/du = -[w]x applied to gradient: dL/du = g x w? use: d(u x w) . g => dL/du = w x g, dL/dw = g x u
    const S dLdu_x = wy * gz - wz * gy;
    const S dLdu_y = wz * gx - wx * gz;
    const S dLdu_z = wx * gy - wy * gx;
    const S dLdw_x = gy * uz - gz * uy;
    const S dLdw_y = gz * ux - gx * uz;
    const S dLdw_z = gx * uy - gy * ux;
    out[3] += dLdu_x;
    out[4] += dLdu_y;
    out[5] += dLdu_z;
    out[6] += dLdw_x;
    out[7] += dLdw_y;
    out[8] += dLdw_z;
    out[0] -= dLdu_x + dLdw_x;
    out[1] -= dLdu_y + dLdw_y;
    out[2] -= dLdu_z + dLdw_z;
}

} // namespace raster_detail

/// Intermediate buffers the soft renderer saves for its backward pass.
template <typename S>
struct SoftRenderBuffers
{
    std::vector<S> image;    // H*W: S = coverage * depth-blended shade
    std::vector<S> coverage; // H*W: 1 - prod(1 - c_t)
    std::vector<S> wsum;     // H*W: sum of c_t * exp((z_t - zref)/temp)
    std::vector<S> avg;      // H*W: depth-softmax blended shade (0 where empty)
    std::vector<S> keep;     // H*W: prod(1 - c_t)
    std::vector<S> zref;     // H*W: per-pixel softmax shift
};

/**
 * Differentiable monochrome render of (verts, tris) under the orthographic
 * camera cam = (scale, tx, ty). Verts are camera-frame: x,y project to
 * pixels, larger z is nearer. Coverage is the soft silhouette
 * 1 - prod(1 - c_t); shading blends covering triangles with a softmax over
 * their centroid depths. Degenerate triangles contribute nothing.
 */
template <typename S>
SoftRenderBuffers<S> render_soft(const S* verts, int n_verts,
                                 const Eigen::Matrix<int, Eigen::Dynamic, 3>& tris, const S cam[3],
                                 const RasterConfig& cfg)
{
    (void)n_verts;
    const int H = cfg.height, W = cfg.width;
    const S px_per_ndc = static_cast<S>(std::min(H, W)) / S(2);
    const S sigma_px = static_cast<S>(cfg.sigma) * px_per_ndc;
    const S margin = static_cast<S>(cfg.cutoff) * sigma_px + S(1);
    const S inv_zt = S(1) / static_cast<S>(cfg.z_temp);
    const S c_max = S(1) - static_cast<S>(1e-7); // keep 1-c away from zero

    SoftRenderBuffers<S> out;
    out.image.assign(static_cast<size_t>(H) * W, S(0));
    out.coverage.assign(static_cast<size_t>(H) * W, S(0));
    out.wsum.assign(static_cast<size_t>(H) * W, S(0));
    out.avg.assign(static_cast<size_t>(H) * W, S(0));
    out.keep.assign(static_cast<size_t>(H) * W, S(1));
    out.zref.assign(static_cast<size_t>(H) * W, static_cast<S>(cfg.bg_z));

    const int nt = static_cast<int>(tris.rows());
    std::vector<S> tri2d(static_cast<size_t>(nt) * 6);
    std::vector<S> triz(static_cast<size_t>(nt));
    std::vector<S> tris_shade(static_cast<size_t>(nt));
    std::vector<int> bbox(static_cast<size_t>(nt) * 4);
    for (int t = 0; t < nt; ++t)
    {
        S minx = std::numeric_limits<S>::max(), maxx = std::numeric_limits<S>::lowest();
        S miny = minx, maxy = maxx;
        S zsum = S(0);
        for (int k = 0; k < 3; ++k)
        {
            const int vi = tris(t, k);
            const S x = cam[0] * verts[3 * vi] + cam[1];
            const S y = cam[0] * verts[3 * vi + 1] + cam[2];
            tri2d[static_cast<size_t>(t) * 6 + 2 * k] = x;
            tri2d[static_cast<size_t>(t) * 6 + 2 * k + 1] = y;
            zsum += verts[3 * vi + 2];
            minx = std::min(minx, x);
            maxx = std::max(maxx, x);
            miny = std::min(miny, y);
            maxy = std::max(maxy, y);
        }
        triz[static_cast<size_t>(t)] = zsum / S(3);
        tris_shade[static_cast<size_t>(t)] = raster_detail::shade_of<S>(
            verts + 3 * tris(t, 0), verts + 3 * tris(t, 1), verts + 3 * tris(t, 2));
        bbox[static_cast<size_t>(t) * 4 + 0] =
            std::max(0, static_cast<int>(std::floor(minx - margin)));
        bbox[static_cast<size_t>(t) * 4 + 1] =
            std::min(W - 1, static_cast<int>(std::ceil(maxx + margin)));
        bbox[static_cast<size_t>(t) * 4 + 2] =
            std::max(0, static_cast<int>(std::floor(miny - margin)));
        bbox[static_cast<size_t>(t) * 4 + 3] =
            std::min(H - 1, static_cast<int>(std::ceil(maxy + margin)));
    }

    // pass 1: per-pixel softmax shift (max contributing depth)
    for (int t = 0; t < nt; ++t)
    {
        const S* tv = tri2d.data() + static_cast<size_t>(t) * 6;
        const S area2 = (tv[2] - tv[0]) * (tv[5] - tv[1]) - (tv[3] - tv[1]) * (tv[4] - tv[0]);
        if (area2 == S(0))
            continue;
        const S z = triz[static_cast<size_t>(t)];
        for (int y = bbox[static_cast<size_t>(t) * 4 + 2]; y <= bbox[static_cast<size_t>(t) * 4 + 3]; ++y)
            for (int x = bbox[static_cast<size_t>(t) * 4 + 0]; x <= bbox[static_cast<size_t>(t) * 4 + 1]; ++x)
            {
                S& zr = out.zref[static_cast<size_t>(y) * W + x];
                if (z > zr)
                    zr = z;
            }
    }

    // pass 2: silhouette product and softmax-weighted shading
    std::vector<S> num(static_cast<size_t>(H) * W, S(0));
    for (int t = 0; t < nt; ++t)
    {
        const S* tv = tri2d.data() + static_cast<size_t>(t) * 6;
        const S area2 = (tv[2] - tv[0]) * (tv[5] - tv[1]) - (tv[3] - tv[1]) * (tv[4] - tv[0]);
        if (area2 == S(0))
            continue;
        const S z = triz[static_cast<size_t>(t)];
        const S sh = tris_shade[static_cast<size_t>(t)];
        for (int y = bbox[static_cast<size_t>(t) * 4 + 2]; y <= bbox[static_cast<size_t>(t) * 4 + 3]; ++y)
            for (int x = bbox[static_cast<size_t>(t) * 4 + 0]; x <= bbox[static_cast<size_t>(t) * 4 + 1]; ++x)
            {
                const S d = raster_detail::signed_distance<S>(static_cast<S>(x) + S(0.5),
                                                              static_cast<S>(y) + S(0.5), tv,
                                                              nullptr);
                const S arg = d / sigma_px;
                if (arg < -static_cast<S>(cfg.cutoff))
                    continue;
                const S c = std::min(S(1) / (S(1) + std::exp(-arg)), c_max);
                const size_t pi = static_cast<size_t>(y) * W + x;
                const S e = std::exp((z - out.zref[pi]) * inv_zt);
                const S a = c * e;
                out.wsum[pi] += a;
                num[pi] += a * sh;
                out.keep[pi] *= S(1) - c;
            }
    }
    for (size_t pi = 0; pi < num.size(); ++pi)
    {
        out.coverage[pi] = S(1) - out.keep[pi];
        if (out.wsum[pi] > S(0))
            out.avg[pi] = num[pi] / out.wsum[pi];
        out.image[pi] = out.coverage[pi] * out.avg[pi];
    }
    return out;
}

/**
 * Pullback of dL/dS through render_soft. Accumulates into dverts (n*3) and
 * dcam (3). Only the geometry image S is differentiated; coverage and masks
 * are treated as diagnostics.
 */
template <typename S>
void render_soft_backward(const S* verts, int n_verts,
                          const Eigen::Matrix<int, Eigen::Dynamic, 3>& tris, const S cam[3],
                          const RasterConfig& cfg, const SoftRenderBuffers<S>& saved,
                          const S* dS, S* dverts, S* dcam)
{
    (void)n_verts;
    const int H = cfg.height, W = cfg.width;
    const S px_per_ndc = static_cast<S>(std::min(H, W)) / S(2);
    const S sigma_px = static_cast<S>(cfg.sigma) * px_per_ndc;
    const S margin = static_cast<S>(cfg.cutoff) * sigma_px + S(1);
    const S inv_zt = S(1) / static_cast<S>(cfg.z_temp);
    const S inv_sigma_px = S(1) / sigma_px;

    const int nt = static_cast<int>(tris.rows());
    for (int t = 0; t < nt; ++t)
    {
        S tv[6];
        S minx = std::numeric_limits<S>::max(), maxx = std::numeric_limits<S>::lowest();
        S miny = minx, maxy = maxx;
        S zsum = S(0);
        for (int k = 0; k < 3; ++k)
        {
            const int vi = tris(t, k);
            tv[2 * k] = cam[0] * verts[3 * vi] + cam[1];
            tv[2 * k + 1] = cam[0] * verts[3 * vi + 1] + cam[2];
            zsum += verts[3 * vi + 2];
            minx = std::min(minx, tv[2 * k]);
            maxx = std::max(maxx, tv[2 * k]);
            miny = std::min(miny, tv[2 * k + 1]);
            maxy = std::max(maxy, tv[2 * k + 1]);
        }
        const S area2 = (tv[2] - tv[0]) * (tv[5] - tv[1]) - (tv[3] - tv[1]) * (tv[4] - tv[0]);
        if (area2 == S(0))
            continue;
        const S z = zsum / S(3);
        const S sh = raster_detail::shade_of<S>(verts + 3 * tris(t, 0), verts + 3 * tris(t, 1),
                                                verts + 3 * tris(t, 2));
        const int x0 = std::max(0, static_cast<int>(std::floor(minx - margin)));
        const int x1 = std::min(W - 1, static_cast<int>(std::ceil(maxx + margin)));
        const int y0 = std::max(0, static_cast<int>(std::floor(miny - margin)));
        const int y1 = std::min(H - 1, static_cast<int>(std::ceil(maxy + margin)));

        S dsh_acc = S(0); // dL/d shade_t
        S dz_acc = S(0);  // dL/d z_t
        S dpix[6] = {S(0), S(0), S(0), S(0), S(0), S(0)}; // dL/d projected 2D verts
        const S c_max = S(1) - static_cast<S>(1e-7);

        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x)
            {
                const size_t pi = static_cast<size_t>(y) * W + x;
                const S gS = dS[pi];
                if (gS == S(0))
                    continue;
                S dgrad[6];
                const S d = raster_detail::signed_distance<S>(static_cast<S>(x) + S(0.5),
                                                              static_cast<S>(y) + S(0.5), tv,
                                                              dgrad);
                const S arg = d * inv_sigma_px;
                if (arg < -static_cast<S>(cfg.cutoff))
                    continue;
                const S c = std::min(S(1) / (S(1) + std::exp(-arg)), c_max);
                const S W_ = saved.wsum[pi];
                if (W_ <= S(0))
                    continue;
                const S e = std::exp((z - saved.zref[pi]) * inv_zt);
                const S a = c * e;
                const S C = saved.coverage[pi];
                const S avg = saved.avg[pi];
                // S = C * avg; C = 1 - prod(1 - c_j); avg = sum a_j s_j / sum a_j
                const S dC_dc = saved.keep[pi] / (S(1) - c); // exclusive product
                const S davg_da = (sh - avg) / W_;
                const S dL_dc = gS * (dC_dc * avg + C * e * davg_da);
                dsh_acc += gS * C * a / W_;
                dz_acc += gS * C * a * davg_da * inv_zt;
                const S dL_dd = dL_dc * c * (S(1) - c) * inv_sigma_px;
                for (int k = 0; k < 6; ++k)
                    dpix[k] += dL_dd * dgrad[k];
            }

        if (dsh_acc != S(0))
        {
            S sg[9];
            raster_detail::shade_grad<S>(verts + 3 * tris(t, 0), verts + 3 * tris(t, 1),
                                         verts + 3 * tris(t, 2), sg);
            for (int k = 0; k < 3; ++k)
                for (int c3 = 0; c3 < 3; ++c3)
                    dverts[3 * tris(t, k) + c3] += dsh_acc * sg[3 * k + c3];
        }
        for (int k = 0; k < 3; ++k)
        {
            const int vi = tris(t, k);
            dverts[3 * vi + 2] += dz_acc / S(3);
            // projected = cam0 * (x,y) + (tx,ty)
            dverts[3 * vi] += dpix[2 * k] * cam[0];
            dverts[3 * vi + 1] += dpix[2 * k + 1] * cam[0];
            dcam[0] += dpix[2 * k] * verts[3 * vi] + dpix[2 * k + 1] * verts[3 * vi + 1];
            dcam[1] += dpix[2 * k];
            dcam[2] += dpix[2 * k + 1];
        }
    }
}

/// Convenience render of a posed model (expressive part only) to images.
inline RenderOutput render_geometry(const Eigen::MatrixX3d& verts,
                                    const Eigen::Matrix<int, Eigen::Dynamic, 3>& tris,
                                    double cam_scale, double cam_tx, double cam_ty,
                                    const RasterConfig& cfg)
{
    if (!(cfg.sigma > 0.0))
        throw ContractViolation("render_geometry: sigma must be positive");
    std::vector<double> vbuf(static_cast<size_t>(verts.rows()) * 3);
    for (int i = 0; i < verts.rows(); ++i)
        for (int c = 0; c < 3; ++c)
            vbuf[static_cast<size_t>(i) * 3 + c] = verts(i, c);
    const double cam[3] = {cam_scale, cam_tx, cam_ty};
    const auto buf = render_soft<double>(vbuf.data(), static_cast<int>(verts.rows()), tris, cam, cfg);
    RenderOutput out;
    out.height = cfg.height;
    out.width = cfg.width;
    out.geometry = Image(1, cfg.height, cfg.width);
    out.soft_coverage = Image(1, cfg.height, cfg.width);
    for (size_t i = 0; i < buf.image.size(); ++i)
    {
        out.geometry.v[i] = static_cast<float>(buf.image[i]);
        out.soft_coverage.v[i] = static_cast<float>(buf.coverage[i]);
    }
    out.face_mask = hard_face_mask(out, 0.5);
    return out;
}

inline RenderOutput render_geometry(const MorphableModel& m, const FaceParams& p,
                                    const RasterConfig& cfg)
{
    const Eigen::MatrixX3d verts = decode(m, p);
    return render_geometry(verts, m.face_triangles, p.cam_scale, p.cam_tx, p.cam_ty, cfg);
}

// ---------------------------------------------------------------------------
// hard rasterization (data generation, visibility)
// ---------------------------------------------------------------------------

struct DepthBuffer
{
    int height = 0, width = 0;
    std::vector<double> z;   // -inf where empty
    std::vector<int> tri;    // -1 where empty
    std::vector<double> bary; // 3 per pixel
};

/// Classic z-buffer rasterization at pixel centers (larger z wins).
inline DepthBuffer rasterize_depth(const Eigen::MatrixX3d& verts,
                                   const Eigen::Matrix<int, Eigen::Dynamic, 3>& tris,
                                   double cam_scale, double cam_tx, double cam_ty, int H, int W)
{
    DepthBuffer db;
    db.height = H;
    db.width = W;
    db.z.assign(static_cast<size_t>(H) * W, -std::numeric_limits<double>::infinity());
    db.tri.assign(static_cast<size_t>(H) * W, -1);
    db.bary.assign(static_cast<size_t>(H) * W * 3, 0.0);
    for (int t = 0; t < tris.rows(); ++t)
    {
        double px[3], py[3], pz[3];
        for (int k = 0; k < 3; ++k)
        {
            const int vi = tris(t, k);
            px[k] = cam_scale * verts(vi, 0) + cam_tx;
            py[k] = cam_scale * verts(vi, 1) + cam_ty;
            pz[k] = verts(vi, 2);
        }
        const double denom = (py[1] - py[2]) * (px[0] - px[2]) + (px[2] - px[1]) * (py[0] - py[2]);
        if (denom == 0.0)
            continue;
        const int x0 = std::max(0, static_cast<int>(std::floor(std::min({px[0], px[1], px[2]}))));
        const int x1 = std::min(W - 1, static_cast<int>(std::ceil(std::max({px[0], px[1], px[2]}))));
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min({py[0], py[1], py[2]}))));
        const int y1 = std::min(H - 1, static_cast<int>(std::ceil(std::max({py[0], py[1], py[2]}))));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x)
            {
                const double cx = x + 0.5, cy = y + 0.5;
                const double l0 = ((py[1] - py[2]) * (cx - px[2]) + (px[2] - px[1]) * (cy - py[2])) / denom;
                const double l1 = ((py[2] - py[0]) * (cx - px[2]) + (px[0] - px[2]) * (cy - py[2])) / denom;
                const double l2 = 1.0 - l0 - l1;
                if (l0 < 0.0 || l1 < 0.0 || l2 < 0.0)
                    continue;
                const double z = l0 * pz[0] + l1 * pz[1] + l2 * pz[2];
                const size_t pi = static_cast<size_t>(y) * W + x;
                if (z > db.z[pi])
                {
                    db.z[pi] = z;
                    db.tri[pi] = t;
                    db.bary[pi * 3] = l0;
                    db.bary[pi * 3 + 1] = l1;
                    db.bary[pi * 3 + 2] = l2;
                }
            }
    }
    return db;
}

/**
 * Per-vertex visibility against a depth buffer: a vertex is visible when its
 * projection lands in the image and its depth is within eps of the surface.
 */
inline std::vector<char> visible_vertices(const Eigen::MatrixX3d& verts, const DepthBuffer& db,
                                          double cam_scale, double cam_tx, double cam_ty,
                                          double eps = 1e-4)
{
    std::vector<char> vis(static_cast<size_t>(verts.rows()), 0);
    for (int i = 0; i < verts.rows(); ++i)
    {
        const int x = static_cast<int>(std::floor(cam_scale * verts(i, 0) + cam_tx));
        const int y = static_cast<int>(std::floor(cam_scale * verts(i, 1) + cam_ty));
        if (x < 0 || x >= db.width || y < 0 || y >= db.height)
            continue;
        const size_t pi = static_cast<size_t>(y) * db.width + x;
        if (db.tri[pi] >= 0 && verts(i, 2) >= db.z[pi] - eps)
            vis[static_cast<size_t>(i)] = 1;
    }
    return vis;
}

// ---------------------------------------------------------------------------
// graph op
// ---------------------------------------------------------------------------

namespace ops {

/**
 * Differentiable geometry render as a tape node: (verts, posecam) -> S with
 * shape [1,H,W]. If `aside` is non-null it receives the full RenderOutput
 * (coverage and mask are diagnostics, not differentiated).
 */
template <typename S>
int render_geometry_image(Graph<S>& g, const MorphableModel& m, int verts_h, int posecam_h,
                          const RasterConfig& cfg, RenderOutput* aside = nullptr)
{
    const auto& vv = g.value(verts_h);
    const auto& vpc = g.value(posecam_h);
    const S cam[3] = {vpc.v[3], vpc.v[4], vpc.v[5]};
    auto saved = std::make_shared<SoftRenderBuffers<S>>(
        render_soft<S>(vv.data(), m.n_vertices(), m.face_triangles, cam, cfg));
    Tensor<S> y = Tensor<S>::zeros({1, cfg.height, cfg.width});
    for (size_t i = 0; i < saved->image.size(); ++i)
        y.v[i] = saved->image[i];
    if (aside != nullptr)
    {
        aside->height = cfg.height;
        aside->width = cfg.width;
        aside->geometry = Image(1, cfg.height, cfg.width);
        aside->soft_coverage = Image(1, cfg.height, cfg.width);
        for (size_t i = 0; i < saved->image.size(); ++i)
        {
            aside->geometry.v[i] = static_cast<float>(saved->image[i]);
            aside->soft_coverage.v[i] = static_cast<float>(saved->coverage[i]);
        }
        aside->face_mask = hard_face_mask(*aside, 0.5);
    }
    const MorphableModel* mp = &m;
    return g.add_op(std::move(y), {verts_h, posecam_h},
                    [verts_h, posecam_h, mp, cfg, saved](Graph<S>& g, int h) {
                        const auto& gy = g.nodes[h].grad;
                        const auto& vv = g.value(verts_h);
                        const auto& vpc = g.value(posecam_h);
                        const S cam[3] = {vpc.v[3], vpc.v[4], vpc.v[5]};
                        const bool nv = g.needs_grad(verts_h), nc = g.needs_grad(posecam_h);
                        if (!nv && !nc)
                            return;
                        std::vector<S> dverts(static_cast<size_t>(mp->n_vertices()) * 3, S(0));
                        S dcam[3] = {S(0), S(0), S(0)};
                        render_soft_backward<S>(vv.data(), mp->n_vertices(), mp->face_triangles,
                                                cam, cfg, *saved, gy.data(), dverts.data(), dcam);
                        if (nv)
                        {
                            auto& gv = g.grad(verts_h);
                            for (size_t i = 0; i < dverts.size(); ++i)
                                gv.v[i] += dverts[i];
                        }
                        if (nc)
                        {
                            auto& gc = g.grad(posecam_h);
                            gc.v[3] += dcam[0];
                            gc.v[4] += dcam[1];
                            gc.v[5] += dcam[2];
                        }
                    });
}

} // namespace ops
} // namespace facelab
