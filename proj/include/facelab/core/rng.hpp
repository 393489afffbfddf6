/*
 * facelab - analysis-by-neural-synthesis 3D face reconstruction.
 *
 * File: include/facelab/core/rng.hpp
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
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace facelab {

/**
 * Deterministic random source. All distributions are hand-rolled on top of
 * mt19937_64 so that streams are reproducible across standard libraries and
 * fully serializable (the engine state round-trips through text).
 */
class Rng
{
public:
    Rng() : engine_(0) {}
    explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

    /// Derives an independent child stream from this stream's seed and a salt.
    Rng fork(std::uint64_t salt) const
    {
        std::uint64_t x = seed_ ^ (salt + 0x9e3779b97f4a7c15ULL + (seed_ << 6) + (seed_ >> 2));
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        x ^= x >> 31;
        return Rng(x);
    }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform double in [0, 1).
    double uniform()
    {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t uniform_int(std::uint64_t n)
    {
        // modulo bias is irrelevant for the ranges used here, but reject anyway
        const std::uint64_t limit = ~std::uint64_t(0) - (~std::uint64_t(0) % n);
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    /// Standard normal via Box-Muller (stateless: no cached spare draw).
    double normal()
    {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0)
            u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Random permutation of 0..n-1 (Fisher-Yates).
    std::vector<int> permutation(int n)
    {
        std::vector<int> p(n);
        for (int i = 0; i < n; ++i)
            p[i] = i;
        for (int i = n - 1; i > 0; --i)
        {
            const int j = static_cast<int>(uniform_int(static_cast<std::uint64_t>(i) + 1));
            std::swap(p[i], p[j]);
        }
        return p;
    }

    /**
     * Random derangement of 0..n-1 via Sattolo's algorithm (single cycle, so
     * no element maps to itself for n >= 2).
     */
    std::vector<int> derangement(int n)
    {
        std::vector<int> p(n);
        for (int i = 0; i < n; ++i)
            p[i] = i;
        for (int i = n - 1; i > 0; --i)
        {
            const int j = static_cast<int>(uniform_int(static_cast<std::uint64_t>(i)));
            std::swap(p[i], p[j]);
        }
        return p;
    }

    /// k distinct indices drawn uniformly from 0..n-1 (partial Fisher-Yates), ascending.
    std::vector<int> sample_without_replacement(int n, int k);

    std::string serialize() const
    {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void deserialize(const std::string& s)
    {
        std::istringstream is(s);
        is >> engine_;
    }

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_ = 0;
};

inline std::vector<int> Rng::sample_without_replacement(int n, int k)
{
    std::vector<int> pool(n);
    for (int i = 0; i < n; ++i)
        pool[i] = i;
    std::vector<int> out;
    out.reserve(k);
    for (int i = 0; i < k; ++i)
    {
        const int j = i + static_cast<int>(uniform_int(static_cast<std::uint64_t>(n - i)));
        std::swap(pool[i], pool[j]);
        out.push_back(pool[i]);
    }
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace facelab
