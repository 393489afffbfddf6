/*
 * facelab - analysis-by-neural-synthesis 3D face reconstruction.
 *
 * File: include/facelab/core/image.hpp
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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace facelab {

/**
 * Planar float image, values in [0,1], layout [C][H][W] (channel-major, so a
 * whole image can be handed to the network stack without reshuffling).
 */
struct Image
{
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> v; // size channels*height*width

    Image() = default;
    Image(int c, int h, int w) : channels(c), height(h), width(w)
    {
        v.assign(static_cast<size_t>(c) * h * w, 0.0f);
    }

    float& at(int c, int y, int x) { return v[(static_cast<size_t>(c) * height + y) * width + x]; }
    float at(int c, int y, int x) const
    {
        return v[(static_cast<size_t>(c) * height + y) * width + x];
    }

    size_t size() const { return v.size(); }

    /// Quantizes to 8 bits and back; the PNG round trip is then lossless.
    void quantize_u8()
    {
        for (auto& e : v)
        {
            const float c = std::clamp(e, 0.0f, 1.0f);
            e = std::round(c * 255.0f) / 255.0f;
        }
    }
};

/// 8-bit RGB PNG I/O (grayscale images are expanded/collapsed as needed).
void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

} // namespace facelab
