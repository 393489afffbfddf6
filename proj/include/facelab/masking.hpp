/*
 * facelab - analysis-by-neural-synthesis 3D face reconstruction.
 *
 * File: include/facelab/masking.hpp
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
#include "facelab/core/rng.hpp"
#include "facelab/model.hpp"

#include <cstdint>
#include <vector>

namespace facelab {

struct RetainedPixel
{
    int x = 0;
    int y = 0;
    float rgb[3] = {0.f, 0.f, 0.f};
    int vertex = -1;        // associated face vertex (-1: none within reach)
    double vertex_z = -1e30; // camera depth of that vertex (collision priority)
};

/**
 * An input image with the face region removed except for a sparse set of
 * retained guidance pixels. mask==1 marks removed (face) pixels; everything
 * the mask covers is exactly zero unless listed in `retained`.
 */
struct MaskedImage
{
    Image image; // 3 x H x W
    std::vector<std::uint8_t> mask;
    std::vector<RetainedPixel> retained;
    int height = 0;
    int width = 0;
};

struct TransferStats
{
    int moved = 0;
    int dropped_out_of_bounds = 0;
    int dropped_masked_out = 0;
    int collisions = 0;
    int without_vertex = 0;
};

struct MaskingConfig
{
    double ratio = 0.01;        // fraction of masked pixels retained as guidance
    int dilation_radius = 4;    // disk dilation of the landmark convex hull
    bool exclude_render_interior = false; // drop sampling candidates covered by the render
};

/**
 * Filled convex hull of the landmarks, dilated by a disk of the given radius,
 * rasterized at pixel centers. Throws ContractViolation for degenerate
 * (collinear) landmark sets.
 */
std::vector<std::uint8_t> face_mask_from_landmarks(const Eigen::MatrixX2d& landmarks,
                                                   int dilation_radius, int height, int width);

/**
 * Zeroes the masked region of `image` and retains a uniform random sample
 * (without replacement) of its pixels: |retained| = round(ratio * area).
 * When `exclude` is given, excluded pixels are removed from the sampling pool
 * (and the count is then based on the pool size).
 */
MaskedImage apply_mask(const Image& image, const std::vector<std::uint8_t>& mask, double ratio,
                       Rng& rng, const std::vector<std::uint8_t>* exclude = nullptr);

/**
 * Associates each retained pixel with its nearest visible face-region vertex
 * (within `max_px` pixels) under `params`; pixels with no vertex in reach
 * keep vertex = -1 and will carry zero displacement through transfer.
 */
void associate_vertices(MaskedImage& masked, const MorphableModel& model, const FaceParams& params,
                        double max_px = 2.0);

/**
 * Moves the retained pixels so they track their associated surface points
 * from params_old to params_new: each pixel lands at round(x + d) where d is
 * the displacement of its vertex's projection, keeping its original RGB.
 * Pixels landing outside the image or outside the updated mask are dropped;
 * collisions keep the pixel whose vertex is nearer the camera. The returned
 * mask is the union of the old mask and the new expression's dilated hull.
 */
MaskedImage transfer_pixels(const MaskedImage& masked, const MorphableModel& model,
                            const FaceParams& params_old, const FaceParams& params_new,
                            int dilation_radius, TransferStats* stats = nullptr);

/// Mask/retained-pixel overlay for CLI inspection dumps.
Image masked_overlay(const MaskedImage& masked);

} // namespace facelab
