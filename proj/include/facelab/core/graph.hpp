/*
 * facelab - analysis-by-neural-synthesis 3D face reconstruction.
 *
 * File: include/facelab/core/graph.hpp
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

#include "facelab/core/tensor.hpp"

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace facelab {

/// Trainable components. Gradient routing and freezing are expressed in terms
/// of these tags: a backward pass only deposits weight gradients for the
/// components it was given, while activation gradients always flow through.
enum class Component : int
{
    kExprEncoder = 0,
    kShapeEncoder = 1,
    kPoseEncoder = 2,
    kTranslator = 3,
    kExtractor = 4, // fixed-weight feature pyramids, never trainable
};

inline unsigned component_bit(Component c) { return 1u << static_cast<int>(c); }

inline unsigned components(std::initializer_list<Component> cs)
{
    unsigned m = 0;
    for (Component c : cs)
        m |= component_bit(c);
    return m;
}

/// A named weight tensor with its gradient accumulator and Adam moments.
template <typename S>
struct Param
{
    std::string name;
    Component component = Component::kExtractor;
    Tensor<S> value;
    Tensor<S> grad;
    Tensor<S> m;
    Tensor<S> v;

    void init_state()
    {
        grad = value;
        grad.fill(S(0));
        m = grad;
        v = grad;
    }
};

/**
 * Reverse-mode tape. Nodes are appended in evaluation order, so the reverse
 * index order is a valid topological order for backpropagation.
 */
template <typename S>
class Graph
{
public:
    using BackFn = std::function<void(Graph&, int)>;

    struct Node
    {
        Tensor<S> value;
        Tensor<S> grad; // empty until touched by a backward pass
        BackFn backward;
        Param<S>* param = nullptr;
        bool requires_grad = false;
    };

    std::vector<Node> nodes;

    void clear() { nodes.clear(); }

    int add_input(Tensor<S> value)
    {
        Node n;
        n.value = std::move(value);
        nodes.push_back(std::move(n));
        return static_cast<int>(nodes.size()) - 1;
    }

    int add_param(Param<S>& p)
    {
        Node n;
        n.value = p.value; // copy; cheap relative to the GEMMs that consume it
        n.param = &p;
        n.requires_grad = true;
        nodes.push_back(std::move(n));
        return static_cast<int>(nodes.size()) - 1;
    }

    int add_op(Tensor<S> value, std::initializer_list<int> parents, BackFn fn)
    {
        Node n;
        n.value = std::move(value);
        n.backward = std::move(fn);
        for (int p : parents)
            n.requires_grad = n.requires_grad || nodes[p].requires_grad;
        nodes.push_back(std::move(n));
        return static_cast<int>(nodes.size()) - 1;
    }

    int add_op(Tensor<S> value, const std::vector<int>& parents, BackFn fn)
    {
        Node n;
        n.value = std::move(value);
        n.backward = std::move(fn);
        for (int p : parents)
            n.requires_grad = n.requires_grad || nodes[p].requires_grad;
        nodes.push_back(std::move(n));
        return static_cast<int>(nodes.size()) - 1;
    }

    const Tensor<S>& value(int h) const { return nodes[h].value; }
    Tensor<S>& value(int h) { return nodes[h].value; }

    /// Gradient buffer of a node, allocated (zeroed) on first access.
    Tensor<S>& grad(int h)
    {
        Node& n = nodes[h];
        if (n.grad.v.empty() && !n.value.v.empty())
        {
            n.grad = n.value;
            n.grad.fill(S(0));
        }
        return n.grad;
    }

    bool needs_grad(int h) const { return nodes[h].requires_grad; }

    /**
     * Backpropagates from a scalar root. Weight gradients are accumulated into
     * Param::grad only for components present in `allowed`; everything else
     * still transmits activation gradients, which is exactly the "frozen but
     * transparent" contract.
     */
    void backward(int root, unsigned allowed)
    {
        if (value(root).size() != 1)
            throw std::logic_error("Graph::backward: root must be scalar");
        for (auto& n : nodes)
            n.grad.v.clear();
        grad(root).v[0] = S(1);
        for (int h = root; h >= 0; --h)
        {
            Node& n = nodes[h];
            if (!n.requires_grad || n.grad.v.empty())
                continue;
            if (n.backward)
                n.backward(*this, h);
            if (n.param != nullptr && (allowed & component_bit(n.param->component)))
            {
                for (size_t i = 0; i < n.grad.v.size(); ++i)
                    n.param->grad.v[i] += n.grad.v[i];
            }
        }
    }
};

namespace ops {

// ---------------------------------------------------------------------------
// elementwise / reshaping
// ---------------------------------------------------------------------------

template <typename S>
int relu(Graph<S>& g, int x)
{
    Tensor<S> y = g.value(x);
    for (auto& e : y.v)
        e = e > S(0) ? e : S(0);
    return g.add_op(std::move(y), {x}, [x](Graph<S>& g, int h) {
        if (!g.needs_grad(x))
            return;
        auto& gx = g.grad(x);
        const auto& gy = g.nodes[h].grad;
        const auto& y = g.value(h);
        for (int i = 0; i < y.size(); ++i)
            gx.v[i] += y.v[i] > S(0) ? gy.v[i] : S(0);
    });
}

template <typename S>
int sigmoid(Graph<S>& g, int x)
{
    Tensor<S> y = g.value(x);
    for (auto& e : y.v)
        e = S(1) / (S(1) + std::exp(-e));
    return g.add_op(std::move(y), {x}, [x](Graph<S>& g, int h) {
        if (!g.needs_grad(x))
            return;
        auto& gx = g.grad(x);
        const auto& gy = g.nodes[h].grad;
        const auto& y = g.value(h);
        for (int i = 0; i < y.size(); ++i)
            gx.v[i] += gy.v[i] * y.v[i] * (S(1) - y.v[i]);
    });
}

template <typename S>
int add(Graph<S>& g, int a, int b)
{
    Tensor<S> y = g.value(a);
    const auto& vb = g.value(b);
    for (int i = 0; i < y.size(); ++i)
        y.v[i] += vb.v[i];
    return g.add_op(std::move(y), {a, b}, [a, b](Graph<S>& g, int h) {
        const auto& gy = g.nodes[h].grad;
        if (g.needs_grad(a))
        {
            auto& ga = g.grad(a);
            for (size_t i = 0; i < gy.v.size(); ++i)
                ga.v[i] += gy.v[i];
        }
        if (g.needs_grad(b))
        {
            auto& gb = g.grad(b);
            for (size_t i = 0; i < gy.v.size(); ++i)
                gb.v[i] += gy.v[i];
        }
    });
}

template <typename S>
int sub(Graph<S>& g, int a, int b)
{
    Tensor<S> y = g.value(a);
    const auto& vb = g.value(b);
    for (int i = 0; i < y.size(); ++i)
        y.v[i] -= vb.v[i];
    return g.add_op(std::move(y), {a, b}, [a, b](Graph<S>& g, int h) {
        const auto& gy = g.nodes[h].grad;
        if (g.needs_grad(a))
        {
            auto& ga = g.grad(a);
            for (size_t i = 0; i < gy.v.size(); ++i)
                ga.v[i] += gy.v[i];
        }
        if (g.needs_grad(b))
        {
            auto& gb = g.grad(b);
            for (size_t i = 0; i < gy.v.size(); ++i)
                gb.v[i] -= gy.v[i];
        }
    });
}

template <typename S>
int scale(Graph<S>& g, int x, S k)
{
    Tensor<S> y = g.value(x);
    for (auto& e : y.v)
        e *= k;
    return g.add_op(std::move(y), {x}, [x, k](Graph<S>& g, int h) {
        if (!g.needs_grad(x))
            return;
        auto& gx = g.grad(x);
        const auto& gy = g.nodes[h].grad;
        for (size_t i = 0; i < gy.v.size(); ++i)
            gx.v[i] += k * gy.v[i];
    });
}

/// Stops gradient flow; value is copied.
template <typename S>
int detach(Graph<S>& g, int x)
{
    return g.add_input(g.value(x));
}

/// Concatenates along the channel axis. Accepts [C,H,W] or [N,C,H,W].
template <typename S>
int concat_ch(Graph<S>& g, int a, int b)
{
    const auto& va = g.value(a);
    const auto& vb = g.value(b);
    if (va.rank != vb.rank || (va.rank != 3 && va.rank != 4))
        throw std::invalid_argument("concat_ch: rank mismatch");
    const int n = va.rank == 4 ? va.dims[0] : 1;
    const int ca = va.rank == 4 ? va.dims[1] : va.dims[0];
    const int cb = vb.rank == 4 ? vb.dims[1] : vb.dims[0];
    const int hw = va.dims[va.rank - 2] * va.dims[va.rank - 1];
    Tensor<S> y;
    y.rank = va.rank;
    y.dims = va.dims;
    y.dims[va.rank - 3] = ca + cb;
    y.v.resize(static_cast<size_t>(n) * (ca + cb) * hw);
    for (int i = 0; i < n; ++i)
    {
        std::copy(va.v.begin() + static_cast<size_t>(i) * ca * hw,
                  va.v.begin() + static_cast<size_t>(i + 1) * ca * hw,
                  y.v.begin() + static_cast<size_t>(i) * (ca + cb) * hw);
        std::copy(vb.v.begin() + static_cast<size_t>(i) * cb * hw,
                  vb.v.begin() + static_cast<size_t>(i + 1) * cb * hw,
                  y.v.begin() + static_cast<size_t>(i) * (ca + cb) * hw + static_cast<size_t>(ca) * hw);
    }
    return g.add_op(std::move(y), {a, b}, [a, b, n, ca, cb, hw](Graph<S>& g, int h) {
        const auto& gy = g.nodes[h].grad;
        for (int i = 0; i < n; ++i)
        {
            if (g.needs_grad(a))
            {
                auto& ga = g.grad(a);
                for (int j = 0; j < ca * hw; ++j)
                    ga.v[static_cast<size_t>(i) * ca * hw + j] +=
                        gy.v[static_cast<size_t>(i) * (ca + cb) * hw + j];
            }
            if (g.needs_grad(b))
            {
                auto& gb = g.grad(b);
                for (int j = 0; j < cb * hw; ++j)
                    gb.v[static_cast<size_t>(i) * cb * hw + j] +=
                        gy.v[static_cast<size_t>(i) * (ca + cb) * hw + static_cast<size_t>(ca) * hw + j];
            }
        }
    });
}

/// Stacks rank-3 tensors [C,H,W] into a batch [N,C,H,W].
template <typename S>
int stack(Graph<S>& g, const std::vector<int>& items)
{
    if (items.empty())
        throw std::invalid_argument("stack: empty");
    const auto& v0 = g.value(items[0]);
    const int per = v0.size();
    Tensor<S> y = Tensor<S>::zeros({static_cast<int>(items.size()), v0.dims[0], v0.dims[1], v0.dims[2]});
    for (size_t i = 0; i < items.size(); ++i)
    {
        const auto& vi = g.value(items[i]);
        if (vi.size() != per)
            throw std::invalid_argument("stack: shape mismatch");
        std::copy(vi.v.begin(), vi.v.end(), y.v.begin() + static_cast<long>(i) * per);
    }
    return g.add_op(std::move(y), items, [items, per](Graph<S>& g, int h) {
        const auto& gy = g.nodes[h].grad;
        for (size_t i = 0; i < items.size(); ++i)
        {
            if (!g.needs_grad(items[i]))
                continue;
            auto& gi = g.grad(items[i]);
            for (int j = 0; j < per; ++j)
                gi.v[j] += gy.v[static_cast<long>(i) * per + j];
        }
    });
}

/// Row i of a [N,D] matrix as a [D] vector.
template <typename S>
int slice_row(Graph<S>& g, int x, int row)
{
    const auto& vx = g.value(x);
    if (vx.rank != 2)
        throw std::invalid_argument("slice_row: rank != 2");
    const int d = vx.dims[1];
    Tensor<S> y = Tensor<S>::zeros({d});
    std::copy(vx.v.begin() + static_cast<long>(row) * d, vx.v.begin() + static_cast<long>(row + 1) * d,
              y.v.begin());
    return g.add_op(std::move(y), {x}, [x, row, d](Graph<S>& g, int h) {
        if (!g.needs_grad(x))
            return;
        auto& gx = g.grad(x);
        const auto& gy = g.nodes[h].grad;
        for (int j = 0; j < d; ++j)
            gx.v[static_cast<long>(row) * d + j] += gy.v[j];
    });
}

/// Element i of a [N,C,H,W] batch as [C,H,W].
template <typename S>
int slice_batch(Graph<S>& g, int x, int i)
{
    const auto& vx = g.value(x);
    if (vx.rank != 4)
        throw std::invalid_argument("slice_batch: rank != 4");
    const int per = vx.dims[1] * vx.dims[2] * vx.dims[3];
    Tensor<S> y = Tensor<S>::zeros({vx.dims[1], vx.dims[2], vx.dims[3]});
    std::copy(vx.v.begin() + static_cast<long>(i) * per, vx.v.begin() + static_cast<long>(i + 1) * per,
              y.v.begin());
    return g.add_op(std::move(y), {x}, [x, i, per](Graph<S>& g, int h) {
        if (!g.needs_grad(x))
            return;
        auto& gx = g.grad(x);
        const auto& gy = g.nodes[h].grad;
        for (int j = 0; j < per; ++j)
            gx.v[static_cast<long>(i) * per + j] += gy.v[j];
    });
}

/// Contiguous slice of a rank-1 vector.
template <typename S>
int slice_vec(Graph<S>& g, int x, int offset, int len)
{
    Tensor<S> y = Tensor<S>::zeros({len});
    const auto& vx = g.value(x);
    std::copy(vx.v.begin() + offset, vx.v.begin() + offset + len, y.v.begin());
    return g.add_op(std::move(y), {x}, [x, offset, len](Graph<S>& g, int h) {
        if (!g.needs_grad(x))
            return;
        auto& gx = g.grad(x);
        const auto& gy = g.nodes[h].grad;
        for (int j = 0; j < len; ++j)
            gx.v[offset + j] += gy.v[j];
    });
}

// ---------------------------------------------------------------------------
// dense / convolution
// ---------------------------------------------------------------------------

/// y = W x + b for x of shape [D] or [N,D]; W is [O,D], b is [O].
template <typename S>
int linear(Graph<S>& g, int x, int w, int b)
{
    using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const auto& vx = g.value(x);
    const auto& vw = g.value(w);
    const auto& vb = g.value(b);
    const int out = vw.dims[0];
    const int in = vw.dims[1];
    const int n = vx.rank == 2 ? vx.dims[0] : 1;
    if (vx.size() != n * in)
        throw std::invalid_argument("linear: dimension mismatch");
    Tensor<S> y = vx.rank == 2 ? Tensor<S>::zeros({n, out}) : Tensor<S>::zeros({out});
    Eigen::Map<const Mat> X(vx.data(), n, in);
    Eigen::Map<const Mat> W(vw.data(), out, in);
    Eigen::Map<Mat> Y(y.data(), n, out);
    Y.noalias() = X * W.transpose();
    for (int i = 0; i < n; ++i)
        for (int o = 0; o < out; ++o)
            y.v[static_cast<long>(i) * out + o] += vb.v[o];
    return g.add_op(std::move(y), {x, w, b}, [x, w, b, n, in, out](Graph<S>& g, int h) {
        const auto& gy = g.nodes[h].grad;
        Eigen::Map<const Mat> GY(gy.data(), n, out);
        Eigen::Map<const Mat> X(g.value(x).data(), n, in);
        Eigen::Map<const Mat> W(g.value(w).data(), out, in);
        if (g.needs_grad(w))
        {
            Eigen::Map<Mat> GW(g.grad(w).data(), out, in);
            GW.noalias() += GY.transpose() * X;
        }
        if (g.needs_grad(b))
        {
            auto& gb = g.grad(b);
            for (int i = 0; i < n; ++i)
                for (int o = 0; o < out; ++o)
                    gb.v[o] += gy.v[static_cast<long>(i) * out + o];
        }
        if (g.needs_grad(x))
        {
            Eigen::Map<Mat> GX(g.grad(x).data(), n, in);
            GX.noalias() += GY * W;
        }
    });
}

namespace detail {

template <typename S>
void im2col(const S* x, int c, int h, int w, int kh, int kw, int stride, int pad, int ho, int wo,
            S* col)
{
    // col is column-major [c*kh*kw, ho*wo]: one column per output pixel
    const int k = c * kh * kw;
    for (int oy = 0; oy < ho; ++oy)
    {
        for (int ox = 0; ox < wo; ++ox)
        {
            S* dst = col + static_cast<long>(oy * wo + ox) * k;
            for (int ci = 0; ci < c; ++ci)
            {
                for (int iy = 0; iy < kh; ++iy)
                {
                    const int sy = oy * stride - pad + iy;
                    for (int ix = 0; ix < kw; ++ix)
                    {
                        const int sx = ox * stride - pad + ix;
                        *dst++ = (sy >= 0 && sy < h && sx >= 0 && sx < w)
                                     ? x[(static_cast<long>(ci) * h + sy) * w + sx]
                                     : S(0);
                    }
                }
            }
        }
    }
}

template <typename S>
void col2im_add(const S* col, int c, int h, int w, int kh, int kw, int stride, int pad, int ho,
                int wo, S* gx)
{
    const int k = c * kh * kw;
    for (int oy = 0; oy < ho; ++oy)
    {
        for (int ox = 0; ox < wo; ++ox)
        {
            const S* src = col + static_cast<long>(oy * wo + ox) * k;
            for (int ci = 0; ci < c; ++ci)
            {
                for (int iy = 0; iy < kh; ++iy)
                {
                    const int sy = oy * stride - pad + iy;
                    for (int ix = 0; ix < kw; ++ix)
                    {
                        const int sx = ox * stride - pad + ix;
                        const S e = *src++;
                        if (sy >= 0 && sy < h && sx >= 0 && sx < w)
                            gx[(static_cast<long>(ci) * h + sy) * w + sx] += e;
                    }
                }
            }
        }
    }
}

template <typename S>
AlignedVector<S>& col_scratch()
{
    static thread_local AlignedVector<S> buf;
    return buf;
}

} // namespace detail

/**
 * 2D convolution over [N,C,H,W] (or [C,H,W]) input, weight [Co,Ci,kh,kw],
 * bias [Co], zero padding. Implemented as im2col + GEMM.
 */
template <typename S>
int conv2d(Graph<S>& g, int x, int w, int b, int stride, int pad)
{
    using MatR = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MatC = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
    const auto& vx = g.value(x);
    const auto& vw = g.value(w);
    const bool batched = vx.rank == 4;
    const int n = batched ? vx.dims[0] : 1;
    const int ci = vw.dims[1], co = vw.dims[0], kh = vw.dims[2], kw = vw.dims[3];
    const int h = vx.dims[vx.rank - 2], wd = vx.dims[vx.rank - 1];
    if ((batched ? vx.dims[1] : vx.dims[0]) != ci)
        throw std::invalid_argument("conv2d: channel mismatch");
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (wd + 2 * pad - kw) / stride + 1;
    const int k = ci * kh * kw;
    Tensor<S> y = batched ? Tensor<S>::zeros({n, co, ho, wo}) : Tensor<S>::zeros({co, ho, wo});
    auto& col = detail::col_scratch<S>();
    col.resize(static_cast<size_t>(k) * ho * wo);
    Eigen::Map<const MatR> W(vw.data(), co, k);
    const auto& vb = g.value(b);
    for (int i = 0; i < n; ++i)
    {
        detail::im2col(vx.data() + static_cast<long>(i) * ci * h * wd, ci, h, wd, kh, kw, stride,
                       pad, ho, wo, col.data());
        Eigen::Map<const MatC> C(col.data(), k, ho * wo);
        Eigen::Map<MatR> Y(y.data() + static_cast<long>(i) * co * ho * wo, co, ho * wo);
        Y.noalias() = W * C;
        for (int c = 0; c < co; ++c)
            Y.row(c).array() += vb.v[c];
    }
    auto fn = [x, w, b, n, ci, co, kh, kw, h, wd, ho, wo, k, stride, pad](Graph<S>& g, int h_) {
        const auto& gy = g.nodes[h_].grad;
        auto& col = detail::col_scratch<S>();
        col.resize(static_cast<size_t>(k) * ho * wo);
        Eigen::Map<const MatR> W(g.value(w).data(), co, k);
        const bool need_x = g.needs_grad(x);
        const bool need_w = g.needs_grad(w);
        const bool need_b = g.needs_grad(b);
        static thread_local AlignedVector<S> dcol_buf;
        for (int i = 0; i < n; ++i)
        {
            Eigen::Map<const MatR> GY(gy.data() + static_cast<long>(i) * co * ho * wo, co, ho * wo);
            if (need_w || need_x)
            {
                if (need_w)
                {
                    detail::im2col(g.value(x).data() + static_cast<long>(i) * ci * h * wd, ci, h, wd,
                                   kh, kw, stride, pad, ho, wo, col.data());
                    Eigen::Map<const MatC> C(col.data(), k, ho * wo);
                    Eigen::Map<MatR> GW(g.grad(w).data(), co, k);
                    GW.noalias() += GY * C.transpose();
                }
                if (need_x)
                {
                    dcol_buf.resize(static_cast<size_t>(k) * ho * wo);
                    Eigen::Map<MatC> DC(dcol_buf.data(), k, ho * wo);
                    DC.noalias() = W.transpose() * GY;
                    detail::col2im_add(dcol_buf.data(), ci, h, wd, kh, kw, stride, pad, ho, wo,
                                       g.grad(x).data() + static_cast<long>(i) * ci * h * wd);
                }
            }
            if (need_b)
            {
                auto& gb = g.grad(b);
                for (int c = 0; c < co; ++c)
                    gb.v[c] += GY.row(c).sum();
            }
        }
    };
    return g.add_op(std::move(y), {x, w, b}, std::move(fn));
}

/**
 * Transposed convolution with a 2x2 kernel and stride 2 (exact x2 upsampling,
 * non-overlapping taps). Weight layout [Ci,Co,2,2], bias [Co].
 */
template <typename S>
int tconv2x2(Graph<S>& g, int x, int w, int b)
{
    using MatR = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const auto& vx = g.value(x);
    const auto& vw = g.value(w);
    const bool batched = vx.rank == 4;
    const int n = batched ? vx.dims[0] : 1;
    const int ci = vw.dims[0], co = vw.dims[1];
    const int h = vx.dims[vx.rank - 2], wd = vx.dims[vx.rank - 1];
    const int ho = h * 2, wo = wd * 2;
    Tensor<S> y = batched ? Tensor<S>::zeros({n, co, ho, wo}) : Tensor<S>::zeros({co, ho, wo});
    // reshape weight as [co*4, ci]: out tap index (c,dy,dx)
    static thread_local AlignedVector<S> wr;
    wr.resize(static_cast<size_t>(co) * 4 * ci);
    for (int c_in = 0; c_in < ci; ++c_in)
        for (int c_out = 0; c_out < co; ++c_out)
            for (int t = 0; t < 4; ++t)
                wr[(static_cast<long>(c_out) * 4 + t) * ci + c_in] =
                    vw.v[(static_cast<long>(c_in) * co + c_out) * 4 + t];
    const auto& vb = g.value(b);
    static thread_local AlignedVector<S> blk;
    blk.resize(static_cast<size_t>(co) * 4 * h * wd);
    for (int i = 0; i < n; ++i)
    {
        Eigen::Map<const MatR> X(vx.data() + static_cast<long>(i) * ci * h * wd, ci, h * wd);
        Eigen::Map<const MatR> WR(wr.data(), co * 4, ci);
        Eigen::Map<MatR> B(blk.data(), co * 4, h * wd);
        B.noalias() = WR * X;
        S* yp = y.data() + static_cast<long>(i) * co * ho * wo;
        for (int c = 0; c < co; ++c)
            for (int t = 0; t < 4; ++t)
            {
                const int dy = t / 2, dx = t % 2;
                const S* src = blk.data() + (static_cast<long>(c) * 4 + t) * h * wd;
                for (int yy = 0; yy < h; ++yy)
                    for (int xx = 0; xx < wd; ++xx)
                        yp[(static_cast<long>(c) * ho + 2 * yy + dy) * wo + 2 * xx + dx] =
                            src[static_cast<long>(yy) * wd + xx] + vb.v[c];
            }
    }
    auto fn = [x, w, b, n, ci, co, h, wd, ho, wo](Graph<S>& g, int h_) {
        const auto& gy = g.nodes[h_].grad;
        static thread_local AlignedVector<S> gblk;
        gblk.resize(static_cast<size_t>(co) * 4 * h * wd);
        for (int i = 0; i < n; ++i)
        {
            const S* gp = gy.data() + static_cast<long>(i) * co * ho * wo;
            for (int c = 0; c < co; ++c)
                for (int t = 0; t < 4; ++t)
                {
                    const int dy = t / 2, dx = t % 2;
                    S* dst = gblk.data() + (static_cast<long>(c) * 4 + t) * h * wd;
                    for (int yy = 0; yy < h; ++yy)
                        for (int xx = 0; xx < wd; ++xx)
                            dst[static_cast<long>(yy) * wd + xx] =
                                gp[(static_cast<long>(c) * ho + 2 * yy + dy) * wo + 2 * xx + dx];
                }
            Eigen::Map<const MatR> GB(gblk.data(), co * 4, h * wd);
            if (g.needs_grad(w))
            {
                Eigen::Map<const MatR> X(g.value(x).data() + static_cast<long>(i) * ci * h * wd, ci,
                                         h * wd);
                MatR GWR = GB * X.transpose(); // [co*4, ci]
                auto& gw = g.grad(w);
                for (int c_in = 0; c_in < ci; ++c_in)
                    for (int c_out = 0; c_out < co; ++c_out)
                        for (int t = 0; t < 4; ++t)
                            gw.v[(static_cast<long>(c_in) * co + c_out) * 4 + t] +=
                                GWR(c_out * 4 + t, c_in);
            }
            if (g.needs_grad(b))
            {
                auto& gb = g.grad(b);
                for (int c = 0; c < co; ++c)
                    for (int t = 0; t < 4; ++t)
                        for (int j = 0; j < h * wd; ++j)
                            gb.v[c] += gblk[(static_cast<long>(c) * 4 + t) * h * wd + j];
            }
            if (g.needs_grad(x))
            {
                static thread_local AlignedVector<S> wr2;
                const auto& vw = g.value(w);
                wr2.resize(static_cast<size_t>(co) * 4 * ci);
                for (int c_in = 0; c_in < ci; ++c_in)
                    for (int c_out = 0; c_out < co; ++c_out)
                        for (int t = 0; t < 4; ++t)
                            wr2[(static_cast<long>(c_out) * 4 + t) * ci + c_in] =
                                vw.v[(static_cast<long>(c_in) * co + c_out) * 4 + t];
                Eigen::Map<const MatR> WR(wr2.data(), co * 4, ci);
                Eigen::Map<MatR> GX(g.grad(x).data() + static_cast<long>(i) * ci * h * wd, ci,
                                    h * wd);
                GX.noalias() += WR.transpose() * GB;
            }
        }
    };
    return g.add_op(std::move(y), {x, w, b}, std::move(fn));
}

/// Global average pooling: [N,C,H,W] -> [N,C] (or [C,H,W] -> [C]).
template <typename S>
int global_avg_pool(Graph<S>& g, int x)
{
    const auto& vx = g.value(x);
    const bool batched = vx.rank == 4;
    const int n = batched ? vx.dims[0] : 1;
    const int c = batched ? vx.dims[1] : vx.dims[0];
    const int hw = vx.dims[vx.rank - 2] * vx.dims[vx.rank - 1];
    Tensor<S> y = batched ? Tensor<S>::zeros({n, c}) : Tensor<S>::zeros({c});
    for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch)
        {
            S s = 0;
            const S* p = vx.data() + (static_cast<long>(i) * c + ch) * hw;
            for (int j = 0; j < hw; ++j)
                s += p[j];
            y.v[static_cast<long>(i) * c + ch] = s / static_cast<S>(hw);
        }
    return g.add_op(std::move(y), {x}, [x, n, c, hw](Graph<S>& g, int h) {
        if (!g.needs_grad(x))
            return;
        const auto& gy = g.nodes[h].grad;
        auto& gx = g.grad(x);
        for (int i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch)
            {
                const S e = gy.v[static_cast<long>(i) * c + ch] / static_cast<S>(hw);
                S* p = gx.data() + (static_cast<long>(i) * c + ch) * hw;
                for (int j = 0; j < hw; ++j)
                    p[j] += e;
            }
    });
}

// ---------------------------------------------------------------------------
// scalar reductions (losses)
// ---------------------------------------------------------------------------

/// Mean absolute difference over all elements.
template <typename S>
int mean_abs_diff(Graph<S>& g, int a, int b)
{
    const auto& va = g.value(a);
    const auto& vb = g.value(b);
    if (va.size() != vb.size())
        throw std::invalid_argument("mean_abs_diff: size mismatch");
    S s = 0;
    for (int i = 0; i < va.size(); ++i)
        s += std::abs(va.v[i] - vb.v[i]);
    const int n = va.size();
    return g.add_op(Tensor<S>::scalar(s / static_cast<S>(n)), {a, b}, [a, b, n](Graph<S>& g, int h) {
        const S gy = g.nodes[h].grad.v[0] / static_cast<S>(n);
        const auto& va = g.value(a);
        const auto& vb = g.value(b);
        const bool na = g.needs_grad(a), nb = g.needs_grad(b);
        S* ga = na ? g.grad(a).data() : nullptr;
        S* gb = nb ? g.grad(b).data() : nullptr;
        for (int i = 0; i < n; ++i)
        {
            const S d = va.v[i] - vb.v[i];
            const S sg = d > S(0) ? gy : (d < S(0) ? -gy : S(0));
            if (ga)
                ga[i] += sg;
            if (gb)
                gb[i] -= sg;
        }
    });
}

/// Mean squared difference over all elements.
template <typename S>
int mse(Graph<S>& g, int a, int b)
{
    const auto& va = g.value(a);
    const auto& vb = g.value(b);
    if (va.size() != vb.size())
        throw std::invalid_argument("mse: size mismatch");
    S s = 0;
    for (int i = 0; i < va.size(); ++i)
    {
        const S d = va.v[i] - vb.v[i];
        s += d * d;
    }
    const int n = va.size();
    return g.add_op(Tensor<S>::scalar(s / static_cast<S>(n)), {a, b}, [a, b, n](Graph<S>& g, int h) {
        const S gy = g.nodes[h].grad.v[0] * S(2) / static_cast<S>(n);
        const auto& va = g.value(a);
        const auto& vb = g.value(b);
        const bool na = g.needs_grad(a), nb = g.needs_grad(b);
        S* ga = na ? g.grad(a).data() : nullptr;
        S* gb = nb ? g.grad(b).data() : nullptr;
        for (int i = 0; i < n; ++i)
        {
            const S d = (va.v[i] - vb.v[i]) * gy;
            if (ga)
                ga[i] += d;
            if (gb)
                gb[i] -= d;
        }
    });
}

/// Sum of squares of all elements.
template <typename S>
int sum_squares(Graph<S>& g, int x)
{
    const auto& vx = g.value(x);
    S s = 0;
    for (const auto& e : vx.v)
        s += e * e;
    return g.add_op(Tensor<S>::scalar(s), {x}, [x](Graph<S>& g, int h) {
        if (!g.needs_grad(x))
            return;
        const S gy = g.nodes[h].grad.v[0];
        const auto& vx = g.value(x);
        auto& gx = g.grad(x);
        for (int i = 0; i < vx.size(); ++i)
            gx.v[i] += S(2) * vx.v[i] * gy;
    });
}

/// Weighted sum of scalar nodes.
template <typename S>
int weighted_sum(Graph<S>& g, const std::vector<int>& xs, const std::vector<S>& ws)
{
    if (xs.size() != ws.size())
        throw std::invalid_argument("weighted_sum: size mismatch");
    S s = 0;
    for (size_t i = 0; i < xs.size(); ++i)
        s += ws[i] * g.value(xs[i]).v[0];
    std::vector<S> wcopy = ws;
    return g.add_op(Tensor<S>::scalar(s), xs, [xs, wcopy](Graph<S>& g, int h) {
        const S gy = g.nodes[h].grad.v[0];
        for (size_t i = 0; i < xs.size(); ++i)
            if (g.needs_grad(xs[i]))
                g.grad(xs[i]).v[0] += wcopy[i] * gy;
    });
}

} // namespace ops
} // namespace facelab
