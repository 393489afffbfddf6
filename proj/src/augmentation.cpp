/*
 * facelab - analysis-by-neural-synthesis 3D face reconstruction.
 *
 * File: src/augmentation.cpp
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
#include "facelab/augmentation.hpp"

#include <algorithm>
#include <cmath>

namespace facelab {

namespace {

struct Objective
{
    const MorphableModel& model;
    const FitTarget& target;
    const Eigen::VectorXd& beta;
    double reg_lambda;

    FaceParams params_of(const Eigen::VectorXd& psi_full, const Eigen::Vector3d& pose) const
    {
        FaceParams p = FaceParams::zero(static_cast<int>(beta.size()), model.spec.d_psi);
        p.beta = beta;
        p.set_psi_full(psi_full);
        p.pose = pose;
        return p;
    }

    double residual(const Eigen::VectorXd& psi_full, const Eigen::Vector3d& pose) const
    {
        const FaceParams p = params_of(psi_full, pose);
        const Eigen::MatrixX3d verts = decode(model, p);
        if (!target.is_point_cloud)
            return (verts - target.points).squaredNorm() / static_cast<double>(verts.rows());
        double s = 0.0;
        for (int i = 0; i < target.points.rows(); ++i)
        {
            const double d = point_to_mesh_distance(target.points.row(i).transpose(), verts,
                                                    model.face_triangles);
            s += d * d;
        }
        return s / static_cast<double>(target.points.rows());
    }

    double loss(const Eigen::VectorXd& psi_full, const Eigen::Vector3d& pose) const
    {
        // the penalty is normalized like the residual so its pull on the
        // optimum is independent of the mesh resolution
        return residual(psi_full, pose) +
               reg_lambda * psi_full.squaredNorm() / static_cast<double>(model.n_vertices());
    }

    void gradient(const Eigen::VectorXd& psi_full, const Eigen::Vector3d& pose,
                  Eigen::VectorXd& g_psi, Eigen::Vector3d& g_pose) const
    {
        const FaceParams p = params_of(psi_full, pose);
        const Eigen::MatrixX3d verts = decode(model, p);
        Eigen::MatrixX3d dverts = Eigen::MatrixX3d::Zero(verts.rows(), 3);
        if (!target.is_point_cloud)
        {
            dverts = 2.0 * (verts - target.points) / static_cast<double>(verts.rows());
        }
        else
        {
            // closest-point pullback: residual treated piecewise with the foot
            // point's triangle and barycentrics fixed for this evaluation
            const double inv_n = 1.0 / static_cast<double>(target.points.rows());
            for (int i = 0; i < target.points.rows(); ++i)
            {
                const Eigen::Vector3d q = target.points.row(i).transpose();
                double best = std::numeric_limits<double>::infinity();
                int best_t = -1;
                Eigen::Vector3d best_pt = Eigen::Vector3d::Zero();
                for (int t = 0; t < model.face_triangles.rows(); ++t)
                {
                    const Eigen::Vector3d cp = closest_point_on_triangle(
                        q, verts.row(model.face_triangles(t, 0)).transpose(),
                        verts.row(model.face_triangles(t, 1)).transpose(),
                        verts.row(model.face_triangles(t, 2)).transpose());
                    const double d = (q - cp).squaredNorm();
                    if (d < best)
                    {
                        best = d;
                        best_t = t;
                        best_pt = cp;
                    }
                }
                if (best_t < 0)
                    continue;
                // barycentric weights of the foot point
                const Eigen::Vector3d a = verts.row(model.face_triangles(best_t, 0)).transpose();
                const Eigen::Vector3d b = verts.row(model.face_triangles(best_t, 1)).transpose();
                const Eigen::Vector3d c = verts.row(model.face_triangles(best_t, 2)).transpose();
                const Eigen::Vector3d v0 = b - a, v1 = c - a, v2 = best_pt - a;
                const double d00 = v0.dot(v0), d01 = v0.dot(v1), d11 = v1.dot(v1);
                const double d20 = v2.dot(v0), d21 = v2.dot(v1);
                const double denom = d00 * d11 - d01 * d01;
                double l1 = 0.0, l2 = 0.0;
                if (std::abs(denom) > 1e-18)
                {
                    l1 = (d11 * d20 - d01 * d21) / denom;
                    l2 = (d00 * d21 - d01 * d20) / denom;
                }
                const double l0 = 1.0 - l1 - l2;
                const Eigen::Vector3d r = 2.0 * (best_pt - q) * inv_n;
                dverts.row(model.face_triangles(best_t, 0)) += (l0 * r).transpose();
                dverts.row(model.face_triangles(best_t, 1)) += (l1 * r).transpose();
                dverts.row(model.face_triangles(best_t, 2)) += (l2 * r).transpose();
            }
        }
        const ParamGrads pg = decode_backward(model, p, dverts);
        g_psi.resize(psi_full.size());
        g_psi.head(pg.psi_expr.size()) = pg.psi_expr;
        g_psi.segment(pg.psi_expr.size(), 2) = pg.eyelids;
        g_psi.tail(3) = pg.jaw;
        g_psi += 2.0 * reg_lambda * psi_full / static_cast<double>(model.n_vertices());
        g_pose = pg.pose;
    }
};

} // namespace

FitResult fit_template(const std::vector<FitTarget>& targets, const MorphableModel& model,
                       const Eigen::VectorXd& neutral_beta, const FitOptions& opt)
{
    if (neutral_beta.size() != model.spec.d_beta)
        throw ContractViolation("fit_template: neutral identity dimensionality mismatch");

    // diagonal curvature estimate at the neutral configuration, used to scale
    // the descent direction (the expression block is ~n_v times flatter than
    // the rotation blocks, so raw gradients would crawl)
    const int n = model.n_vertices();
    const int d = model.spec.d_psi;
    Eigen::VectorXd h_psi = Eigen::VectorXd::Constant(d + 5, (2.0 + 2.0 * opt.reg_lambda) / n);
    Eigen::Vector3d h_pose = Eigen::Vector3d::Zero();
    for (int i = 0; i < n; ++i)
    {
        const Eigen::Vector3d v = model.template_verts.row(i).transpose();
        const Eigen::Vector3d rel = v - model.jaw_pivot;
        const double w = model.jaw_weights[i];
        for (int k = 0; k < 3; ++k)
        {
            const Eigen::Vector3d ek = Eigen::Vector3d::Unit(k);
            h_pose[k] += 2.0 / n * ek.cross(v).squaredNorm();
            h_psi[d + 2 + k] += 2.0 / n * w * w * ek.cross(rel).squaredNorm();
        }
    }
    for (int k = 0; k < 3; ++k)
    {
        h_pose[k] = std::max(h_pose[k], 1e-8);
        h_psi[d + 2 + k] = std::max(h_psi[d + 2 + k], 1e-8);
    }

    FitResult out;
    for (const auto& target : targets)
    {
        if (!target.is_point_cloud && target.points.rows() != model.n_vertices())
            throw ContractViolation("fit_template: corresponded target has wrong vertex count");
        if (target.points.rows() == 0)
            throw ContractViolation("fit_template: empty target");
        Objective obj{model, target, neutral_beta, opt.reg_lambda};

        Eigen::VectorXd psi = Eigen::VectorXd::Zero(model.spec.d_psi + 5);
        Eigen::Vector3d pose = Eigen::Vector3d::Zero();
        double step = opt.init_step;
        double cur = obj.loss(psi, pose);
        std::vector<double> history{cur};
        int evals_since_improve = 0;
        int it = 0;
        for (; it < opt.max_iterations; ++it)
        {
            Eigen::VectorXd g_psi;
            Eigen::Vector3d g_pose;
            obj.gradient(psi, pose, g_psi, g_pose);
            const Eigen::VectorXd d_psi_dir = g_psi.cwiseQuotient(h_psi);
            const Eigen::Vector3d d_pose_dir = g_pose.cwiseQuotient(h_pose);
            bool accepted = false;
            while (step > 1e-12)
            {
                const Eigen::VectorXd cand_psi = psi - step * d_psi_dir;
                const Eigen::Vector3d cand_pose = pose - step * d_pose_dir;
                const double cand = obj.loss(cand_psi, cand_pose);
                if (cand < cur)
                {
                    psi = cand_psi;
                    pose = cand_pose;
                    cur = cand;
                    step = std::min(step * 1.2, 4.0);
                    accepted = true;
                    evals_since_improve = 0;
                    break;
                }
                step *= 0.5;
                ++evals_since_improve;
                if (evals_since_improve >= opt.diverge_window)
                    throw DivergenceError("fit_template: no residual improvement for " +
                                          std::to_string(opt.diverge_window) + " evaluations");
            }
            history.push_back(cur);
            if (!accepted)
                break;
            const int w = opt.converge_window;
            if (static_cast<int>(history.size()) > w)
            {
                const double then = history[history.size() - 1 - w];
                if (then - cur < opt.converge_rel * std::max(1e-30, then))
                    break;
            }
        }
        out.psi_full.push_back(psi);
        out.pose.push_back(pose);
        out.residual.push_back(obj.residual(psi, pose));
        out.iterations.push_back(it);
    }
    return out;
}

const std::vector<std::string>& extreme_class_names()
{
    static const std::vector<std::string> names = {
        "lips_back",   "rolling_lips", "mouth_side", "kissing",  "high_smile", "mouth_up",
        "mouth_middle", "mouth_down",  "blow_cheeks", "cheeks_in", "jaw",       "lips_up"};
    return names;
}

TemplateLibrary build_extreme_library(const MorphableModel& model, const LibrarySpec& spec,
                                      Rng& rng)
{
    const int d = model.spec.d_psi;
    if (spec.per_class < 1)
        throw ConfigError("build_extreme_library: per_class must be >= 1");
    Eigen::VectorXd sigma = spec.psi_sigma;
    if (sigma.size() == 0)
    {
        sigma.resize(d);
        for (int j = 0; j < d; ++j)
            sigma[j] = 1.0 / (1.0 + j);
    }
    if (sigma.size() != d)
        throw ConfigError("build_extreme_library: psi_sigma dimensionality mismatch");
    const double mean_norm = spec.mean_data_norm > 0 ? spec.mean_data_norm : sigma.norm();
    const double min_norm = spec.min_norm_factor * mean_norm;

    TemplateLibrary lib;
    const auto& names = extreme_class_names();
    for (const auto& name : names)
        for (int rep = 0; rep < spec.per_class; ++rep)
        {
            Eigen::VectorXd psi = Eigen::VectorXd::Zero(d + 5);
            const int picks = 3 + static_cast<int>(rng.uniform_int(3)); // 3..5 coefficients
            const int pool = std::max(2, d / 2);
            const auto idx = rng.sample_without_replacement(pool, std::min(picks, pool));
            for (int j : idx)
            {
                const double amp = rng.uniform(2.0, 3.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
                psi[j] = amp * sigma[j];
            }
            const double nrm = psi.head(d).norm();
            if (nrm < min_norm && nrm > 0)
                psi.head(d) *= min_norm / nrm;
            // eyelids and asymmetric mouth/jaw offsets
            psi[d] = rng.uniform(0.0, 1.0);
            psi[d + 1] = rng.uniform(0.0, 1.0);
            psi[d + 2] = rng.uniform(0.15, 0.5);
            psi[d + 3] = rng.uniform(-0.12, 0.12);
            psi[d + 4] = 0.0;
            TemplateEntry e;
            e.name = spec.per_class == 1 ? name : name + "_" + std::to_string(rep);
            e.provenance = "authored";
            e.psi_full = psi;
            lib.entries.push_back(std::move(e));
        }
    return lib;
}

} // namespace facelab
