/*
 * facelab - analysis-by-neural-synthesis 3D face reconstruction.
 *
 * File: include/facelab/core/tensor.hpp
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
#include <array>
#include <cassert>
#include <cstdint>
#include <new>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace facelab {

/**
 * 64-byte aligned allocator. Keeping every numeric buffer at one alignment
 * pins down Eigen's vectorized code paths, so repeated runs produce
 * bit-identical floating-point results regardless of heap layout.
 */
template <typename T, std::size_t Align = 64>
struct AlignedAllocator
{
    using value_type = T;
    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U, Align>&)
    {
    }
    T* allocate(std::size_t n)
    {
        return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(Align)));
    }
    void deallocate(T* p, std::size_t)
    {
        ::operator delete(p, std::align_val_t(Align));
    }
    template <typename U>
    struct rebind
    {
        using other = AlignedAllocator<U, Align>;
    };
    bool operator==(const AlignedAllocator&) const { return true; }
    bool operator!=(const AlignedAllocator&) const { return false; }
};

template <typename S>
using AlignedVector = std::vector<S, AlignedAllocator<S>>;

/**
 * Dense row-major tensor of rank <= 4. This is deliberately minimal: the
 * training stack only needs contiguous buffers plus shape bookkeeping, and
 * anything heavier would get in the way of handing slices to Eigen maps.
 */
template <typename S>
struct Tensor
{
    std::array<int, 4> dims{1, 1, 1, 1};
    int rank = 0;
    AlignedVector<S> v;

    Tensor() = default;

    static Tensor scalar(S value)
    {
        Tensor t;
        t.rank = 0;
        t.v.assign(1, value);
        return t;
    }

    static Tensor zeros(std::initializer_list<int> shape)
    {
        Tensor t;
        t.rank = static_cast<int>(shape.size());
        assert(t.rank <= 4);
        int i = 0;
        for (int d : shape)
            t.dims[i++] = d;
        t.v.assign(static_cast<size_t>(t.size_from_dims()), S(0));
        return t;
    }

    static Tensor from_vector(const std::vector<S>& data, std::initializer_list<int> shape)
    {
        Tensor t = zeros(shape);
        if (data.size() != t.v.size())
            throw std::invalid_argument("Tensor::from_vector: size mismatch");
        std::copy(data.begin(), data.end(), t.v.begin());
        return t;
    }

    long long size_from_dims() const
    {
        long long n = 1;
        for (int i = 0; i < rank; ++i)
            n *= dims[i];
        return rank == 0 ? 1 : n;
    }

    int size() const { return static_cast<int>(v.size()); }
    bool empty() const { return v.empty(); }

    S* data() { return v.data(); }
    const S* data() const { return v.data(); }

    S& operator[](int i) { return v[static_cast<size_t>(i)]; }
    const S& operator[](int i) const { return v[static_cast<size_t>(i)]; }

    bool same_shape(const Tensor& o) const
    {
        if (rank != o.rank)
            return false;
        for (int i = 0; i < rank; ++i)
            if (dims[i] != o.dims[i])
                return false;
        return true;
    }

    void fill(S x)
    {
        for (auto& e : v)
            e = x;
    }

    template <typename T>
    Tensor<T> cast() const
    {
        Tensor<T> t;
        t.rank = rank;
        t.dims = dims;
        t.v.resize(v.size());
        for (size_t i = 0; i < v.size(); ++i)
            t.v[i] = static_cast<T>(v[i]);
        return t;
    }
};

} // namespace facelab
