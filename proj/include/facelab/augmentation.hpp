/*
 * facelab - analysis-by-neural-synthesis 3D face reconstruction.
 *
 * File: include/facelab/augmentation.hpp
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

#include "facelab/core/rng.hpp"
#include "facelab/core/serialize.hpp"
#include "facelab/model.hpp"

#include <string>
#include <vector>

namespace facelab {

// ---------------------------------------------------------------------------
// expression augmentation (cycle path)
// ---------------------------------------------------------------------------

enum class AugmentMode
{
    kPermute,
    kPerturb,
    kInject,
    kZero,
};

inline const char* augment_mode_name(AugmentMode m)
{
    switch (m)
    {
    case AugmentMode::kPermute: return "permute";
    case AugmentMode::kPerturb: return "perturb";
    case AugmentMode::kInject: return "inject";
    case AugmentMode::kZero: return "zero";
    }
    return "?";
}

struct AugmentPlan
{
    AugmentMode mode = AugmentMode::kPerturb;
    double noise_scale = 0.5;
    double jaw_min = 0.0, jaw_max = 0.35;       // radians of jaw opening
    double eyelid_min = 0.0, eyelid_max = 1.0;
    double zero_jaw_min = 0.0, zero_jaw_max = 0.6; // wider range for the neutral mode

    void validate() const
    {
        if (noise_scale < 0.0 || jaw_max < jaw_min || eyelid_max < eyelid_min ||
            zero_jaw_max < zero_jaw_min)
            throw ConfigError("AugmentPlan: invalid ranges");
        if (zero_jaw_min > jaw_min || zero_jaw_max < jaw_max)
            throw ConfigError("AugmentPlan: zero-mode jaw range must contain the jaw range");
    }
};

struct TemplateEntry
{
    std::string name;
    std::string provenance; // "fitted" | "authored"
    Eigen::VectorXd psi_full; // [psi_expr, eyelids, jaw]
};

struct TemplateLibrary
{
    std::vector<TemplateEntry> entries;

    bool empty() const { return entries.empty(); }
    size_t size() const { return entries.size(); }

    Json to_json() const
    {
        Json arr = Json::array();
        for (const auto& e : entries)
        {
            std::vector<double> v(e.psi_full.data(), e.psi_full.data() + e.psi_full.size());
            arr.push_back(Json{{"name", e.name}, {"provenance", e.provenance}, {"psi_full", v}});
        }
        return Json{{"format", "facelab-templates"}, {"entries", arr}};
    }

    static TemplateLibrary from_json(const Json& j)
    {
        TemplateLibrary lib;
        for (const auto& e : j.at("entries"))
        {
            TemplateEntry t;
            t.name = e.at("name").get<std::string>();
            t.provenance = e.value("provenance", "authored");
            const auto& v = e.at("psi_full");
            t.psi_full.resize(static_cast<int>(v.size()));
            for (size_t i = 0; i < v.size(); ++i)
                t.psi_full[static_cast<int>(i)] = v[i].get<double>();
            lib.entries.push_back(std::move(t));
        }
        return lib;
    }

    void save(const std::filesystem::path& path) const { write_json(path, to_json()); }
    static TemplateLibrary load(const std::filesystem::path& path)
    {
        return from_json(read_json(path));
    }
};

/**
 * Applies one augmentation mode to a batch of packed Psi vectors
 * [psi_expr, eyelids, jaw]. Every mode re-draws jaw opening and eyelids from
 * the plan's ranges (the zero mode from its wider jaw range). Shape, pose and
 * camera are never touched here.
 */
inline std::vector<Eigen::VectorXd> augment_expressions(const std::vector<Eigen::VectorXd>& psi,
                                                        const AugmentPlan& plan,
                                                        const TemplateLibrary* library, Rng& rng)
{
    plan.validate();
    const int n = static_cast<int>(psi.size());
    if (n == 0)
        return {};
    const int dim = static_cast<int>(psi[0].size());
    const int d_expr = dim - 5;
    if (d_expr < 0)
        throw ContractViolation("augment_expressions: Psi vectors too short");
    if (plan.mode == AugmentMode::kPermute && n < 2)
        throw ContractViolation("augment_expressions: permute mode needs a batch of at least 2");
    if (plan.mode == AugmentMode::kInject && (library == nullptr || library->empty()))
        throw ConfigError("augment_expressions: inject mode requires a non-empty template library");

    std::vector<Eigen::VectorXd> out(psi.begin(), psi.end());
    std::vector<int> perm;
    if (plan.mode == AugmentMode::kPermute)
        perm = rng.derangement(n);
    for (int i = 0; i < n; ++i)
    {
        Eigen::VectorXd& v = out[static_cast<size_t>(i)];
        switch (plan.mode)
        {
        case AugmentMode::kPermute:
            v.head(d_expr) = psi[static_cast<size_t>(perm[i])].head(d_expr);
            break;
        case AugmentMode::kPerturb:
            for (int k = 0; k < d_expr; ++k)
                v[k] += rng.normal(0.0, plan.noise_scale);
            break;
        case AugmentMode::kInject:
        {
            const auto& tpl =
                library->entries[rng.uniform_int(static_cast<std::uint64_t>(library->size()))];
            if (tpl.psi_full.size() != dim)
                throw ConfigError("augment_expressions: template dimensionality mismatch");
            v.head(d_expr) = tpl.psi_full.head(d_expr);
            break;
        }
        case AugmentMode::kZero:
            v.head(d_expr).setZero();
            break;
        }
        const bool zero = plan.mode == AugmentMode::kZero;
        const double jlo = zero ? plan.zero_jaw_min : plan.jaw_min;
        const double jhi = zero ? plan.zero_jaw_max : plan.jaw_max;
        v[d_expr] = rng.uniform(plan.eyelid_min, plan.eyelid_max);
        v[d_expr + 1] = rng.uniform(plan.eyelid_min, plan.eyelid_max);
        v[d_expr + 2] = rng.uniform(jlo, jhi); // jaw opening
        v[d_expr + 3] = 0.0;
        v[d_expr + 4] = 0.0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// iterative template fitting
// ---------------------------------------------------------------------------

struct FitTarget
{
    Eigen::MatrixX3d points; // per-frame mesh vertices (correspondence) or a point cloud
    bool is_point_cloud = false;
};

struct FitResult
{
    std::vector<Eigen::VectorXd> psi_full; // per frame
    std::vector<Eigen::Vector3d> pose;     // per frame
    std::vector<double> residual;          // final mean squared distance per frame
    std::vector<int> iterations;
};

struct FitOptions
{
    double reg_lambda = 1e-4;
    double init_step = 1.0;
    int max_iterations = 2000;
    double converge_rel = 1e-6; // relative improvement over the window
    int converge_window = 20;
    int diverge_window = 200; // consecutive non-improving evaluations
};

/**
 * Direct iterative parameter fitting: per-frame gradient descent with step
 * halving over (Psi, pose), identity fixed at neutral_beta. Targets are
 * either corresponded meshes (mean squared vertex distance) or point clouds
 * (mean squared point-to-mesh distance, closest points refreshed every
 * iteration). The residual is monotone non-increasing over accepted steps.
 */
FitResult fit_template(const std::vector<FitTarget>& targets, const MorphableModel& model,
                       const Eigen::VectorXd& neutral_beta, const FitOptions& opt = {});

// ---------------------------------------------------------------------------
// extreme-expression template library
// ---------------------------------------------------------------------------

struct LibrarySpec
{
    int per_class = 1;
    Eigen::VectorXd psi_sigma;  // per-coordinate std of the training prior
    double mean_data_norm = -1; // mean ||psi_expr|| of the training data; <0: derive from sigma
    double min_norm_factor = 2.2;
};

/// The expression-class labels the synthetic library mirrors.
const std::vector<std::string>& extreme_class_names();

/**
 * Draws named extreme expression vectors: a few leading coefficients pushed
 * to 2-3 sigma plus asymmetric mouth/jaw offsets, rescaled so every entry's
 * ||psi_expr|| stays >= min_norm_factor * mean_data_norm.
 */
TemplateLibrary build_extreme_library(const MorphableModel& model, const LibrarySpec& spec,
                                      Rng& rng);

} // namespace facelab
