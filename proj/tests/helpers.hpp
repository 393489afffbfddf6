/*
 * facelab - analysis-by-neural-synthesis 3D face reconstruction.
 *
 * File: tests/helpers.hpp
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

#include "facelab/data.hpp"
#include "facelab/model.hpp"

#include <filesystem>
#include <string>

namespace facelab::test {

inline ModelSpec tiny_spec()
{
    ModelSpec s;
    s.n_vertices = 441; // 21x21 grid
    s.d_beta = 4;
    s.d_psi = 6;
    s.n_landmarks = 12;
    s.smooth_cells = 3;
    return s;
}

inline ModelSpec small_spec()
{
    ModelSpec s;
    s.n_vertices = 841; // 29x29 grid
    s.d_beta = 8;
    s.d_psi = 10;
    s.n_landmarks = 16;
    s.smooth_cells = 4;
    return s;
}

/// Fresh scratch directory under the test working directory.
inline std::filesystem::path scratch_dir(const std::string& name)
{
    const auto dir = std::filesystem::path("test_tmp") / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

/// Generates (once per process) a small dataset shared by training tests.
inline const std::filesystem::path& shared_tiny_dataset()
{
    static const std::filesystem::path dir = [] {
        const auto d = scratch_dir("shared_tiny_ds");
        MorphableModel model = build_synthetic_model(tiny_spec(), 7);
        GenerateOptions opt;
        opt.count = 24;
        opt.image_size = 32;
        generate_dataset(model, opt, 21, d);
        return d;
    }();
    return dir;
}

inline bool files_equal(const std::filesystem::path& a, const std::filesystem::path& b)
{
    const std::string sa = read_text(a);
    const std::string sb = read_text(b);
    return sa == sb;
}

} // namespace facelab::test
