/*
 * facelab - analysis-by-neural-synthesis 3D face reconstruction.
 *
 * File: include/facelab/core/serialize.hpp
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

#include "facelab/core/errors.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace facelab {

using Json = nlohmann::json;

// All binary blobs are raw little-endian arrays; this code assumes a
// little-endian host (checked at startup by the CLI).

inline void write_blob_f32(const std::filesystem::path& path, const float* data, size_t n)
{
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw IoError("cannot open for writing: " + path.string());
    f.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
    if (!f)
        throw IoError("short write: " + path.string());
}

inline std::vector<float> read_blob_f32(const std::filesystem::path& path, size_t expected)
{
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw IoError("cannot open: " + path.string());
    std::vector<float> out(expected);
    f.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(expected * sizeof(float)));
    if (static_cast<size_t>(f.gcount()) != expected * sizeof(float))
        throw IoError("short read: " + path.string());
    return out;
}

inline void write_blob_i32(const std::filesystem::path& path, const std::int32_t* data, size_t n)
{
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw IoError("cannot open for writing: " + path.string());
    f.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(n * sizeof(std::int32_t)));
    if (!f)
        throw IoError("short write: " + path.string());
}

inline std::vector<std::int32_t> read_blob_i32(const std::filesystem::path& path, size_t expected)
{
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw IoError("cannot open: " + path.string());
    std::vector<std::int32_t> out(expected);
    f.read(reinterpret_cast<char*>(out.data()),
           static_cast<std::streamsize>(expected * sizeof(std::int32_t)));
    if (static_cast<size_t>(f.gcount()) != expected * sizeof(std::int32_t))
        throw IoError("short read: " + path.string());
    return out;
}

inline void write_json(const std::filesystem::path& path, const Json& j)
{
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw IoError("cannot open for writing: " + path.string());
    f << j.dump(2) << "\n";
}

inline Json read_json(const std::filesystem::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw IoError("cannot open: " + path.string());
    Json j;
    try
    {
        f >> j;
    }
    catch (const std::exception& e)
    {
        throw IoError("malformed JSON in " + path.string() + ": " + e.what());
    }
    return j;
}

inline std::string read_text(const std::filesystem::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw IoError("cannot open: " + path.string());
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

/// FNV-1a 64-bit, used for cheap content fingerprints.
inline std::uint64_t fnv1a64(const void* data, size_t n, std::uint64_t h = 0xcbf29ce484222325ULL)
{
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i)
    {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string fnv1a64_hex(const void* data, size_t n, std::uint64_t seed = 0xcbf29ce484222325ULL)
{
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(data, n, seed)));
    return std::string(buf);
}

} // namespace facelab
