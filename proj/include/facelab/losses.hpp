/*
 * facelab - analysis-by-neural-synthesis 3D face reconstruction.
 *
 * File: include/facelab/losses.hpp
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

#include "facelab/core/graph.hpp"
#include "facelab/core/serialize.hpp"
#include "facelab/networks.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace facelab {

/// Loss weights; the defaults are the reference training configuration.
struct LossWeights
{
    double photo = 1.0;
    double vgg = 10.0;
    double lmk = 100.0;
    double reg = 1e-3;
    double emo = 1.0;
    double cycle = 10.0;
};

/// Per-step loss values; inactive terms stay zero for the other pass.
struct LossReport
{
    std::string pass; // "reconstruction" | "cycle" | "pretrain"
    long step = -1;
    double lr = 0.0;
    double photo = 0.0;
    double vgg = 0.0;
    double lmk = 0.0;
    double reg = 0.0;
    double emo = 0.0;
    double cycle_exp = 0.0;
    double cycle_shape = 0.0;
    double weighted_total = 0.0;

    bool finite() const
    {
        for (double v : {photo, vgg, lmk, reg, emo, cycle_exp, cycle_shape, weighted_total})
            if (!std::isfinite(v))
                return false;
        return true;
    }

    Json to_json() const
    {
        return Json{{"pass", pass},       {"step", step},
                    {"lr", lr},           {"photo", photo},
                    {"vgg", vgg},         {"lmk", lmk},
                    {"reg", reg},         {"emo", emo},
                    {"cycle_exp", cycle_exp}, {"cycle_shape", cycle_shape},
                    {"weighted_total", weighted_total}};
    }
};

namespace ops {

/// L1 photometric error between two images (any matching shapes).
template <typename S>
int photometric(Graph<S>& g, int a, int b)
{
    return mean_abs_diff(g, a, b);
}

/// Multi-scale perceptual distance: mean L1 of extractor features, summed over scales.
template <typename S>
int perceptual(Graph<S>& g, const FeatureExtractor<S>& gamma, int a, int b)
{
    const auto ta = gamma.taps(g, a);
    const auto tb = gamma.taps(g, b);
    std::vector<int> terms;
    for (size_t i = 0; i < ta.size(); ++i)
        terms.push_back(mean_abs_diff(g, ta[i], tb[i]));
    return weighted_sum(g, terms, std::vector<S>(terms.size(), S(1)));
}

/**
 * Landmark reprojection loss: sum over K landmarks of the squared distance
 * between predicted and target pixels, with coordinates normalized to [0,1]
 * by the image size.
 */
template <typename S>
int landmark_loss(Graph<S>& g, int pred_px, const Eigen::MatrixX2d& target_px, int width,
                  int height)
{
    const auto& vp = g.value(pred_px);
    const int K = vp.dims[0];
    if (K != static_cast<int>(target_px.rows()))
        throw ContractViolation("landmark_loss: landmark count mismatch");
    const S ix = S(1) / static_cast<S>(width);
    const S iy = S(1) / static_cast<S>(height);
    S total = 0;
    std::vector<S> tgt(static_cast<size_t>(K) * 2);
    for (int k = 0; k < K; ++k)
    {
        tgt[static_cast<size_t>(k) * 2] = static_cast<S>(target_px(k, 0));
        tgt[static_cast<size_t>(k) * 2 + 1] = static_cast<S>(target_px(k, 1));
        const S dx = (vp.v[static_cast<size_t>(k) * 2] - tgt[static_cast<size_t>(k) * 2]) * ix;
        const S dy =
            (vp.v[static_cast<size_t>(k) * 2 + 1] - tgt[static_cast<size_t>(k) * 2 + 1]) * iy;
        total += dx * dx + dy * dy;
    }
    return g.add_op(Tensor<S>::scalar(total), {pred_px},
                    [pred_px, tgt, K, ix, iy](Graph<S>& g, int h) {
                        if (!g.needs_grad(pred_px))
                            return;
                        const S gy = g.nodes[h].grad.v[0];
                        const auto& vp = g.value(pred_px);
                        auto& gp = g.grad(pred_px);
                        for (int k = 0; k < K; ++k)
                        {
                            const S dx =
                                (vp.v[static_cast<size_t>(k) * 2] - tgt[static_cast<size_t>(k) * 2]) * ix;
                            const S dy = (vp.v[static_cast<size_t>(k) * 2 + 1] -
                                          tgt[static_cast<size_t>(k) * 2 + 1]) * iy;
                            gp.v[static_cast<size_t>(k) * 2] += gy * S(2) * dx * ix;
                            gp.v[static_cast<size_t>(k) * 2 + 1] += gy * S(2) * dy * iy;
                        }
                    });
}

/**
 * L2 penalty on the expression coefficients of a packed Psi vector
 * [psi_expr, eyelids, jaw]; jaw/eyelids are included only when requested.
 */
template <typename S>
int expression_reg(Graph<S>& g, int psi_full, int d_psi, bool include_jaw_eyelids = false)
{
    const int len = include_jaw_eyelids ? d_psi + 5 : d_psi;
    return sum_squares(g, slice_vec(g, psi_full, 0, len));
}

/// Squared distance of emotion-proxy descriptors, averaged over the batch.
template <typename S>
int emotion_loss(Graph<S>& g, const FeatureExtractor<S>& pe, int a, int b)
{
    const int da = pe.descriptor(g, a);
    const int db = pe.descriptor(g, b);
    const auto& va = g.value(da);
    const int n = va.rank == 2 ? va.dims[0] : 1;
    return scale(g, sum_squares(g, sub(g, da, db)), S(1) / static_cast<S>(n));
}

/// Mean-squared error over full Psi vectors (expression + eyelids + jaw).
template <typename S>
int cycle_expression(Graph<S>& g, int psi_pred, int psi_target_const)
{
    return mse(g, psi_pred, psi_target_const);
}

/// Mean-squared error over shape coefficients.
template <typename S>
int cycle_shape(Graph<S>& g, int beta_pred, int beta_target_const)
{
    return mse(g, beta_pred, beta_target_const);
}

} // namespace ops
} // namespace facelab
