/*
 * facelab - analysis-by-neural-synthesis 3D face reconstruction.
 *
 * File: src/masking.cpp
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
#include "facelab/masking.hpp"

#include "facelab/raster.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace facelab {

namespace {

// Andrew monotone chain; returns hull in counterclockwise order.
std::vector<Eigen::Vector2d> convex_hull(std::vector<Eigen::Vector2d> pts)
{
    std::sort(pts.begin(), pts.end(), [](const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
        return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
    });
    pts.erase(std::unique(pts.begin(), pts.end(),
                          [](const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
                              return a.x() == b.x() && a.y() == b.y();
                          }),
              pts.end());
    const int n = static_cast<int>(pts.size());
    if (n < 3)
        return {};
    auto cross = [](const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
        return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
    };
    std::vector<Eigen::Vector2d> hull(2 * n);
    int k = 0;
    for (int i = 0; i < n; ++i)
    {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0)
            --k;
        hull[k++] = pts[i];
    }
    for (int i = n - 2, t = k + 1; i >= 0; --i)
    {
        while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0)
            --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    return hull;
}

} // namespace

std::vector<std::uint8_t> face_mask_from_landmarks(const Eigen::MatrixX2d& landmarks,
                                                   int dilation_radius, int height, int width)
{
    if (landmarks.rows() < 3)
        throw ContractViolation("face_mask_from_landmarks: need at least 3 landmarks");
    if (dilation_radius < 0)
        throw ContractViolation("face_mask_from_landmarks: negative dilation radius");
    std::vector<Eigen::Vector2d> pts;
    pts.reserve(static_cast<size_t>(landmarks.rows()));
    for (int i = 0; i < landmarks.rows(); ++i)
        pts.emplace_back(landmarks(i, 0), landmarks(i, 1));
    const auto hull = convex_hull(std::move(pts));
    if (hull.size() < 3)
        throw ContractViolation("face_mask_from_landmarks: degenerate (collinear) landmarks");

    std::vector<std::uint8_t> filled(static_cast<size_t>(height) * width, 0);
    double minx = 1e30, maxx = -1e30, miny = 1e30, maxy = -1e30;
    for (const auto& p : hull)
    {
        minx = std::min(minx, p.x());
        maxx = std::max(maxx, p.x());
        miny = std::min(miny, p.y());
        maxy = std::max(maxy, p.y());
    }
    const int x0 = std::max(0, static_cast<int>(std::floor(minx)) - 1);
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil(maxx)) + 1);
    const int y0 = std::max(0, static_cast<int>(std::floor(miny)) - 1);
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(maxy)) + 1);
    const int hn = static_cast<int>(hull.size());
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
        {
            const double cx = x + 0.5, cy = y + 0.5;
            bool inside = true;
            for (int e = 0; e < hn && inside; ++e)
            {
                const Eigen::Vector2d& a = hull[static_cast<size_t>(e)];
                const Eigen::Vector2d& b = hull[static_cast<size_t>((e + 1) % hn)];
                const double c = (b.x() - a.x()) * (cy - a.y()) - (b.y() - a.y()) * (cx - a.x());
                if (c < -1e-9)
                    inside = false;
            }
            if (inside)
                filled[static_cast<size_t>(y) * width + x] = 1;
        }

    if (dilation_radius == 0)
        return filled;

    // the hull contains every landmark point, but center-sampling can miss a
    // sharp corner's pixel; seed those pixels so dilation covers them too
    for (int i = 0; i < landmarks.rows(); ++i)
    {
        const int x = static_cast<int>(std::floor(landmarks(i, 0)));
        const int y = static_cast<int>(std::floor(landmarks(i, 1)));
        if (x >= 0 && x < width && y >= 0 && y < height)
            filled[static_cast<size_t>(y) * width + x] = 1;
    }

    // disk dilation via stamping
    std::vector<std::pair<int, int>> offsets;
    for (int dy = -dilation_radius; dy <= dilation_radius; ++dy)
        for (int dx = -dilation_radius; dx <= dilation_radius; ++dx)
            if (dx * dx + dy * dy <= dilation_radius * dilation_radius)
                offsets.emplace_back(dx, dy);
    std::vector<std::uint8_t> out(filled.size(), 0);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
        {
            if (!filled[static_cast<size_t>(y) * width + x])
                continue;
            for (const auto& [dx, dy] : offsets)
            {
                const int nx = x + dx, ny = y + dy;
                if (nx >= 0 && nx < width && ny >= 0 && ny < height)
                    out[static_cast<size_t>(ny) * width + nx] = 1;
            }
        }
    return out;
}

MaskedImage apply_mask(const Image& image, const std::vector<std::uint8_t>& mask, double ratio,
                       Rng& rng, const std::vector<std::uint8_t>* exclude)
{
    if (ratio < 0.0 || ratio > 1.0)
        throw ConfigError("apply_mask: ratio must be in [0,1]");
    if (image.channels != 3)
        throw ContractViolation("apply_mask: expected a 3-channel image");
    if (mask.size() != static_cast<size_t>(image.height) * image.width)
        throw ContractViolation("apply_mask: mask size mismatch");

    MaskedImage out;
    out.height = image.height;
    out.width = image.width;
    out.mask = mask;
    out.image = image;

    std::vector<int> pool; // row-major order keeps sampling deterministic
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
        {
            const size_t i = static_cast<size_t>(y) * image.width + x;
            if (!mask[i])
                continue;
            for (int c = 0; c < 3; ++c)
                out.image.at(c, y, x) = 0.0f;
            if (exclude != nullptr && (*exclude)[i])
                continue;
            pool.push_back(static_cast<int>(i));
        }

    const long target_area =
        exclude == nullptr
            ? static_cast<long>(std::count(mask.begin(), mask.end(), std::uint8_t(1)))
            : static_cast<long>(pool.size());
    const int count = static_cast<int>(std::lround(ratio * static_cast<double>(target_area)));
    const int take = std::min<int>(count, static_cast<int>(pool.size()));
    const auto picks = rng.sample_without_replacement(static_cast<int>(pool.size()), take);
    out.retained.reserve(picks.size());
    for (int p : picks)
    {
        const int i = pool[static_cast<size_t>(p)];
        RetainedPixel r;
        r.x = i % image.width;
        r.y = i / image.width;
        for (int c = 0; c < 3; ++c)
        {
            r.rgb[c] = image.at(c, r.y, r.x);
            out.image.at(c, r.y, r.x) = r.rgb[c];
        }
        out.retained.push_back(r);
    }
    return out;
}

void associate_vertices(MaskedImage& masked, const MorphableModel& model, const FaceParams& params,
                        double max_px)
{
    const Eigen::MatrixX3d verts = decode(model, params);
    const DepthBuffer db = rasterize_depth(verts, model.face_triangles, params.cam_scale,
                                           params.cam_tx, params.cam_ty, masked.height,
                                           masked.width);
    const std::vector<char> vis =
        visible_vertices(verts, db, params.cam_scale, params.cam_tx, params.cam_ty);
    const Projected proj = project(verts, params.cam_scale, params.cam_tx, params.cam_ty);
    const double max2 = max_px * max_px;
    for (auto& r : masked.retained)
    {
        const double cx = r.x + 0.5, cy = r.y + 0.5;
        double best = max2;
        r.vertex = -1;
        for (int i : model.face_region_indices)
        {
            if (!vis[static_cast<size_t>(i)])
                continue;
            const double dx = proj.xy(i, 0) - cx, dy = proj.xy(i, 1) - cy;
            const double d2 = dx * dx + dy * dy;
            if (d2 <= best)
            {
                best = d2;
                r.vertex = i;
                r.vertex_z = proj.z[i];
            }
        }
    }
}

MaskedImage transfer_pixels(const MaskedImage& masked, const MorphableModel& model,
                            const FaceParams& params_old, const FaceParams& params_new,
                            int dilation_radius, TransferStats* stats)
{
    MaskedImage src = masked;
    associate_vertices(src, model, params_old);

    const Eigen::MatrixX3d verts_old = decode(model, params_old);
    const Eigen::MatrixX3d verts_new = decode(model, params_new);
    const Projected proj_old =
        project(verts_old, params_old.cam_scale, params_old.cam_tx, params_old.cam_ty);
    const Projected proj_new =
        project(verts_new, params_new.cam_scale, params_new.cam_tx, params_new.cam_ty);

    // the mask must cover the face under the new expression as well
    const Eigen::MatrixX2d lmk_new = landmarks2d(model, params_new);
    std::vector<std::uint8_t> mask_new =
        face_mask_from_landmarks(lmk_new, dilation_radius, masked.height, masked.width);
    for (size_t i = 0; i < mask_new.size(); ++i)
        mask_new[i] = mask_new[i] || masked.mask[i];

    MaskedImage out;
    out.height = masked.height;
    out.width = masked.width;
    out.mask = mask_new;
    out.image = masked.image;
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            if (mask_new[static_cast<size_t>(y) * out.width + x])
                for (int c = 0; c < 3; ++c)
                    out.image.at(c, y, x) = 0.0f;

    TransferStats st;
    std::map<std::pair<int, int>, size_t> occupied; // target -> index into out.retained
    for (const auto& r : src.retained)
    {
        double dx = 0.0, dy = 0.0;
        double z = r.vertex_z;
        if (r.vertex >= 0)
        {
            dx = proj_new.xy(r.vertex, 0) - proj_old.xy(r.vertex, 0);
            dy = proj_new.xy(r.vertex, 1) - proj_old.xy(r.vertex, 1);
            z = proj_new.z[r.vertex];
        }
        else
            ++st.without_vertex;
        const int nx = static_cast<int>(std::round(r.x + dx));
        const int ny = static_cast<int>(std::round(r.y + dy));
        if (nx < 0 || nx >= out.width || ny < 0 || ny >= out.height)
        {
            ++st.dropped_out_of_bounds;
            continue;
        }
        if (!mask_new[static_cast<size_t>(ny) * out.width + nx])
        {
            ++st.dropped_masked_out;
            continue;
        }
        RetainedPixel moved = r;
        moved.x = nx;
        moved.y = ny;
        moved.vertex_z = z;
        const auto key = std::make_pair(nx, ny);
        const auto it = occupied.find(key);
        if (it != occupied.end())
        {
            ++st.collisions;
            if (z > out.retained[it->second].vertex_z)
                out.retained[it->second] = moved;
            continue;
        }
        occupied[key] = out.retained.size();
        out.retained.push_back(moved);
        ++st.moved;
    }
    for (const auto& r : out.retained)
        for (int c = 0; c < 3; ++c)
            out.image.at(c, r.y, r.x) = r.rgb[c];
    if (stats != nullptr)
        *stats = st;
    return out;
}

Image masked_overlay(const MaskedImage& masked)
{
    Image out(3, masked.height, masked.width);
    for (int y = 0; y < masked.height; ++y)
        for (int x = 0; x < masked.width; ++x)
        {
            const bool m = masked.mask[static_cast<size_t>(y) * masked.width + x] != 0;
            out.at(0, y, x) = m ? 0.35f : masked.image.at(0, y, x);
            out.at(1, y, x) = masked.image.at(1, y, x);
            out.at(2, y, x) = masked.image.at(2, y, x);
        }
    for (const auto& r : masked.retained)
    {
        out.at(0, r.y, r.x) = 1.0f;
        out.at(1, r.y, r.x) = 1.0f;
        out.at(2, r.y, r.x) = 0.0f;
    }
    return out;
}

} // namespace facelab
