/*
 * facelab - analysis-by-neural-synthesis 3D face reconstruction.
 *
 * File: include/facelab/model.hpp
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
#include "facelab/core/graph.hpp"
#include "facelab/core/rng.hpp"
#include "facelab/core/serialize.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace facelab {

// ---------------------------------------------------------------------------
// types
// ---------------------------------------------------------------------------

struct ModelSpec
{
    int n_vertices = 1089; // must be a perfect square (height-field grid)
    int d_beta = 16;
    int d_psi = 20;
    int n_landmarks = 24;
    int smooth_cells = 5; // Gaussian smoothing radius of the basis fields, in grid cells

    int grid_n() const
    {
        const int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n_vertices))));
        if (g * g != n_vertices)
            throw ConfigError("ModelSpec: n_vertices must be a perfect square, got " +
                              std::to_string(n_vertices));
        return g;
    }

    Json to_json() const
    {
        return Json{{"n_vertices", n_vertices}, {"d_beta", d_beta},       {"d_psi", d_psi},
                    {"n_landmarks", n_landmarks}, {"smooth_cells", smooth_cells}};
    }
    static ModelSpec from_json(const Json& j)
    {
        ModelSpec s;
        s.n_vertices = j.at("n_vertices").get<int>();
        s.d_beta = j.at("d_beta").get<int>();
        s.d_psi = j.at("d_psi").get<int>();
        s.n_landmarks = j.at("n_landmarks").get<int>();
        s.smooth_cells = j.at("smooth_cells").get<int>();
        return s;
    }
};

/**
 * One face's full parameter set. The expression group Psi packs
 * [psi_expr, eyelids, jaw] in that order; the global transform group packs
 * [pose, camera].
 */
struct FaceParams
{
    Eigen::VectorXd beta;     // identity
    Eigen::VectorXd psi_expr; // expression coefficients
    Eigen::Vector2d eyelids = Eigen::Vector2d::Zero();
    Eigen::Vector3d jaw = Eigen::Vector3d::Zero();  // axis-angle, radians
    Eigen::Vector3d pose = Eigen::Vector3d::Zero(); // axis-angle, radians
    double cam_scale = 1.0;                         // pixels per model unit
    double cam_tx = 0.0;
    double cam_ty = 0.0;

    static FaceParams zero(int d_beta, int d_psi)
    {
        FaceParams p;
        p.beta = Eigen::VectorXd::Zero(d_beta);
        p.psi_expr = Eigen::VectorXd::Zero(d_psi);
        return p;
    }

    int psi_dim() const { return static_cast<int>(psi_expr.size()) + 5; }

    /// Packs the expression group [psi_expr, eyelids, jaw].
    Eigen::VectorXd psi_full() const
    {
        Eigen::VectorXd v(psi_dim());
        v.head(psi_expr.size()) = psi_expr;
        v.segment(psi_expr.size(), 2) = eyelids;
        v.tail(3) = jaw;
        return v;
    }

    void set_psi_full(const Eigen::VectorXd& v)
    {
        const int d = static_cast<int>(v.size()) - 5;
        if (d < 0 || d != psi_expr.size())
            throw ContractViolation("FaceParams::set_psi_full: dimension mismatch");
        psi_expr = v.head(d);
        eyelids = v.segment(d, 2);
        jaw = v.tail(3);
    }

    bool finite() const
    {
        return beta.allFinite() && psi_expr.allFinite() && eyelids.allFinite() &&
               jaw.allFinite() && pose.allFinite() && std::isfinite(cam_scale) &&
               std::isfinite(cam_tx) && std::isfinite(cam_ty) && cam_scale > 0.0;
    }

    /// Rounds every value to the nearest float32; file formats are float32.
    void round_to_f32()
    {
        auto r = [](double x) { return static_cast<double>(static_cast<float>(x)); };
        for (int i = 0; i < beta.size(); ++i)
            beta[i] = r(beta[i]);
        for (int i = 0; i < psi_expr.size(); ++i)
            psi_expr[i] = r(psi_expr[i]);
        for (int i = 0; i < 2; ++i)
            eyelids[i] = r(eyelids[i]);
        for (int i = 0; i < 3; ++i)
        {
            jaw[i] = r(jaw[i]);
            pose[i] = r(pose[i]);
        }
        cam_scale = r(cam_scale);
        cam_tx = r(cam_tx);
        cam_ty = r(cam_ty);
    }

    Json to_json() const
    {
        auto vec = [](const Eigen::VectorXd& v) {
            std::vector<double> o(v.data(), v.data() + v.size());
            return o;
        };
        return Json{{"beta", vec(beta)},
                    {"psi_expr", vec(psi_expr)},
                    {"eyelids", std::vector<double>{eyelids[0], eyelids[1]}},
                    {"jaw", std::vector<double>{jaw[0], jaw[1], jaw[2]}},
                    {"pose", std::vector<double>{pose[0], pose[1], pose[2]}},
                    {"camera", Json{{"scale", cam_scale}, {"tx", cam_tx}, {"ty", cam_ty}}}};
    }

    static FaceParams from_json(const Json& j)
    {
        FaceParams p;
        auto vec = [](const Json& a) {
            Eigen::VectorXd v(a.size());
            for (size_t i = 0; i < a.size(); ++i)
                v[static_cast<int>(i)] = a[i].get<double>();
            return v;
        };
        p.beta = vec(j.at("beta"));
        p.psi_expr = vec(j.at("psi_expr"));
        const auto& e = j.at("eyelids");
        p.eyelids = Eigen::Vector2d(e[0].get<double>(), e[1].get<double>());
        const auto& jw = j.at("jaw");
        p.jaw = Eigen::Vector3d(jw[0].get<double>(), jw[1].get<double>(), jw[2].get<double>());
        const auto& ps = j.at("pose");
        p.pose = Eigen::Vector3d(ps[0].get<double>(), ps[1].get<double>(), ps[2].get<double>());
        p.cam_scale = j.at("camera").at("scale").get<double>();
        p.cam_tx = j.at("camera").at("tx").get<double>();
        p.cam_ty = j.at("camera").at("ty").get<double>();
        return p;
    }
};

/**
 * Linear blendshape head model over a height-field grid: template plus
 * orthonormal identity/expression/eyelid displacement bases, one jaw joint
 * (linear blend about a fixed pivot), rigid pose, orthographic camera.
 *
 * Basis layout: column j of a basis is a flattened displacement field with
 * row index vertex*3+coordinate. All arrays are float32-representable so the
 * on-disk format round-trips losslessly.
 */
struct MorphableModel
{
    ModelSpec spec;
    std::uint64_t seed = 0;

    Eigen::MatrixX3d template_verts;  // n_v x 3
    Eigen::MatrixXd identity_basis;   // 3 n_v x d_beta
    Eigen::MatrixXd expression_basis; // 3 n_v x d_psi
    Eigen::MatrixXd eyelid_basis;     // 3 n_v x 2
    Eigen::Matrix<int, Eigen::Dynamic, 3> triangles;
    Eigen::VectorXd jaw_weights; // n_v, in [0,1]
    Eigen::Vector3d jaw_pivot = Eigen::Vector3d::Zero();
    std::vector<int> landmark_indices;
    std::vector<int> face_region_indices;

    // derived
    std::vector<char> in_face_region;                  // n_v flags
    Eigen::Matrix<int, Eigen::Dynamic, 3> face_triangles; // triangles fully inside the face region

    int n_vertices() const { return static_cast<int>(template_verts.rows()); }
    int n_landmarks() const { return static_cast<int>(landmark_indices.size()); }

    void rebuild_derived()
    {
        in_face_region.assign(n_vertices(), 0);
        for (int i : face_region_indices)
            in_face_region[static_cast<size_t>(i)] = 1;
        std::vector<int> keep;
        for (int t = 0; t < triangles.rows(); ++t)
            if (in_face_region[triangles(t, 0)] && in_face_region[triangles(t, 1)] &&
                in_face_region[triangles(t, 2)])
                keep.push_back(t);
        face_triangles.resize(static_cast<int>(keep.size()), 3);
        for (size_t i = 0; i < keep.size(); ++i)
            face_triangles.row(static_cast<int>(i)) = triangles.row(keep[i]);
    }

    std::string fingerprint() const
    {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        auto mix = [&h](const double* p, size_t n) {
            for (size_t i = 0; i < n; ++i)
            {
                const float f = static_cast<float>(p[i]);
                h = fnv1a64(&f, sizeof(f), h);
            }
        };
        mix(template_verts.data(), static_cast<size_t>(template_verts.size()));
        mix(identity_basis.data(), static_cast<size_t>(identity_basis.size()));
        mix(expression_basis.data(), static_cast<size_t>(expression_basis.size()));
        mix(eyelid_basis.data(), static_cast<size_t>(eyelid_basis.size()));
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
        return std::string(buf);
    }
};

// ---------------------------------------------------------------------------
// rotations
// ---------------------------------------------------------------------------

inline Eigen::Matrix3d skew(const Eigen::Vector3d& w)
{
    Eigen::Matrix3d m;
    m << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
    return m;
}

/// Axis-angle to rotation matrix (Rodrigues), with a small-angle series.
inline Eigen::Matrix3d rodrigues(const Eigen::Vector3d& theta)
{
    const double a2 = theta.squaredNorm();
    const Eigen::Matrix3d K = skew(theta);
    if (a2 < 1e-16)
        return Eigen::Matrix3d::Identity() + K + 0.5 * K * K;
    const double a = std::sqrt(a2);
    return Eigen::Matrix3d::Identity() + (std::sin(a) / a) * K +
           ((1.0 - std::cos(a)) / a2) * K * K;
}

/**
 * Jacobian of x -> R(theta) x with respect to theta: returns the 3x3 matrix
 * whose column k is d(R x)/d theta_k (Gallego & Yezzi closed form).
 */
inline Eigen::Matrix3d rotate_jacobian(const Eigen::Vector3d& theta, const Eigen::Vector3d& x)
{
    const double a2 = theta.squaredNorm();
    if (a2 < 1e-14)
    {
        // d(Rx)/dtheta_k -> e_k x x as theta -> 0
        return -skew(x);
    }
    const Eigen::Matrix3d R = rodrigues(theta);
    const Eigen::Vector3d r = R * x;
    Eigen::Matrix3d J;
    const Eigen::Matrix3d ImR = Eigen::Matrix3d::Identity() - R;
    for (int k = 0; k < 3; ++k)
    {
        const Eigen::Vector3d vk = theta.cross(ImR.col(k));
        J.col(k) = (theta[k] * theta.cross(r) + vk.cross(r)) / a2;
    }
    return J;
}

// ---------------------------------------------------------------------------
// decode / project
// ---------------------------------------------------------------------------

/// Template as a flat (3 n_v) vector with [vertex*3+coord] layout.
inline Eigen::VectorXd template_flat(const MorphableModel& m)
{
    const int n = m.n_vertices();
    Eigen::VectorXd flat(3 * n);
    for (int i = 0; i < n; ++i)
        flat.segment<3>(3 * i) = m.template_verts.row(i).transpose();
    return flat;
}

/// Blendshape sum before articulation: template + B_id b + B_exp p + B_eye e.
inline Eigen::MatrixX3d blend_vertices(const MorphableModel& m, const FaceParams& p)
{
    if (p.beta.size() != m.identity_basis.cols() || p.psi_expr.size() != m.expression_basis.cols())
        throw ContractViolation("decode: parameter dimensions do not match the model");
    const int n = m.n_vertices();
    Eigen::VectorXd flat = template_flat(m);
    if (p.beta.size() > 0)
        flat.noalias() += m.identity_basis * p.beta;
    if (p.psi_expr.size() > 0)
        flat.noalias() += m.expression_basis * p.psi_expr;
    flat.noalias() += m.eyelid_basis * p.eyelids;
    Eigen::MatrixX3d out(n, 3);
    for (int i = 0; i < n; ++i)
        out.row(i) = flat.segment<3>(3 * i).transpose();
    return out;
}

/**
 * Posed mesh: global_rotate(pose, jaw_rotate(jaw, blend)). The jaw joint is a
 * per-vertex linear blend between the unrotated vertex and its rotation about
 * jaw_pivot, weighted by jaw_weights.
 */
inline Eigen::MatrixX3d decode(const MorphableModel& m, const FaceParams& p)
{
    Eigen::MatrixX3d v = blend_vertices(m, p);
    const Eigen::Matrix3d Rj = rodrigues(p.jaw);
    const Eigen::Matrix3d Rp = rodrigues(p.pose);
    const int n = m.n_vertices();
    for (int i = 0; i < n; ++i)
    {
        const double w = m.jaw_weights[i];
        const Eigen::Vector3d x = v.row(i).transpose();
        const Eigen::Vector3d rotated = m.jaw_pivot + Rj * (x - m.jaw_pivot);
        const Eigen::Vector3d jawed = (1.0 - w) * x + w * rotated;
        v.row(i) = (Rp * jawed).transpose();
    }
    return v;
}

struct ParamGrads
{
    Eigen::VectorXd beta;
    Eigen::VectorXd psi_expr;
    Eigen::Vector2d eyelids = Eigen::Vector2d::Zero();
    Eigen::Vector3d jaw = Eigen::Vector3d::Zero();
    Eigen::Vector3d pose = Eigen::Vector3d::Zero();
};

/// Pullback of a vertex-space gradient through decode.
inline ParamGrads decode_backward(const MorphableModel& m, const FaceParams& p,
                                  const Eigen::MatrixX3d& dverts)
{
    const int n = m.n_vertices();
    const Eigen::Matrix3d Rj = rodrigues(p.jaw);
    const Eigen::Matrix3d Rp = rodrigues(p.pose);
    Eigen::MatrixX3d blend = blend_vertices(m, p);

    ParamGrads g;
    g.beta = Eigen::VectorXd::Zero(p.beta.size());
    g.psi_expr = Eigen::VectorXd::Zero(p.psi_expr.size());
    Eigen::VectorXd dblend_flat(3 * n);

    for (int i = 0; i < n; ++i)
    {
        const double w = m.jaw_weights[i];
        const Eigen::Vector3d x = blend.row(i).transpose();
        const Eigen::Vector3d rel = x - m.jaw_pivot;
        const Eigen::Vector3d jawed = (1.0 - w) * x + w * (m.jaw_pivot + Rj * rel);
        const Eigen::Vector3d dout = dverts.row(i).transpose();

        // through the global rotation
        const Eigen::Vector3d djawed = Rp.transpose() * dout;
        g.pose += rotate_jacobian(p.pose, jawed).transpose() * dout;

        // through the jaw blend
        if (w != 0.0)
            g.jaw += w * (rotate_jacobian(p.jaw, rel).transpose() * djawed);
        const Eigen::Vector3d dblend = (1.0 - w) * djawed + w * (Rj.transpose() * djawed);
        dblend_flat.segment<3>(3 * i) = dblend;
    }
    if (p.beta.size() > 0)
        g.beta.noalias() = m.identity_basis.transpose() * dblend_flat;
    if (p.psi_expr.size() > 0)
        g.psi_expr.noalias() = m.expression_basis.transpose() * dblend_flat;
    g.eyelids.noalias() = m.eyelid_basis.transpose() * dblend_flat;
    return g;
}

struct Projected
{
    Eigen::MatrixX2d xy; // pixel units
    Eigen::VectorXd z;   // camera-space depth (larger = nearer)
};

/// Orthographic projection p = scale*(x,y) + (tx,ty); depth kept separately.
inline Projected project(const Eigen::MatrixX3d& verts, double scale, double tx, double ty)
{
    if (!(scale > 0.0))
        throw ContractViolation("project: camera scale must be positive");
    Projected out;
    const int n = static_cast<int>(verts.rows());
    out.xy.resize(n, 2);
    out.z.resize(n);
    for (int i = 0; i < n; ++i)
    {
        out.xy(i, 0) = scale * verts(i, 0) + tx;
        out.xy(i, 1) = scale * verts(i, 1) + ty;
        out.z[i] = verts(i, 2);
    }
    return out;
}

/// 2D landmarks of the posed mesh, gathered at the model's landmark vertices.
inline Eigen::MatrixX2d landmarks2d(const MorphableModel& m, const FaceParams& p)
{
    const Eigen::MatrixX3d verts = decode(m, p);
    const Projected proj = project(verts, p.cam_scale, p.cam_tx, p.cam_ty);
    Eigen::MatrixX2d out(m.n_landmarks(), 2);
    for (int k = 0; k < m.n_landmarks(); ++k)
        out.row(k) = proj.xy.row(m.landmark_indices[static_cast<size_t>(k)]);
    return out;
}

// ---------------------------------------------------------------------------
// scan-to-mesh distance
// ---------------------------------------------------------------------------

/// Closest point on triangle (a,b,c) to p (Ericson, Real-Time Collision Detection).
inline Eigen::Vector3d closest_point_on_triangle(const Eigen::Vector3d& p,
                                                 const Eigen::Vector3d& a,
                                                 const Eigen::Vector3d& b,
                                                 const Eigen::Vector3d& c)
{
    const Eigen::Vector3d ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0)
        return a;
    const Eigen::Vector3d bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3)
        return b;
    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0)
        return a + (d1 / (d1 - d3)) * ab;
    const Eigen::Vector3d cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6)
        return c;
    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0)
        return a + (d2 / (d2 - d6)) * ac;
    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0)
        return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
    const double denom = 1.0 / (va + vb + vc);
    return a + ab * (vb * denom) + ac * (vc * denom);
}

/// Exact point-to-surface distance for one query point (brute force over triangles).
inline double point_to_mesh_distance(const Eigen::Vector3d& p, const Eigen::MatrixX3d& verts,
                                     const Eigen::Matrix<int, Eigen::Dynamic, 3>& tris)
{
    double best = std::numeric_limits<double>::infinity();
    for (int t = 0; t < tris.rows(); ++t)
    {
        const Eigen::Vector3d q = closest_point_on_triangle(
            p, verts.row(tris(t, 0)).transpose(), verts.row(tris(t, 1)).transpose(),
            verts.row(tris(t, 2)).transpose());
        best = std::min(best, (p - q).norm());
    }
    return best;
}

struct DistanceStats
{
    double mean = 0.0;
    double median = 0.0;
    double max = 0.0;
};

inline DistanceStats scan_to_mesh(const Eigen::MatrixX3d& points, const Eigen::MatrixX3d& verts,
                                  const Eigen::Matrix<int, Eigen::Dynamic, 3>& tris)
{
    if (points.rows() == 0)
        throw ContractViolation("scan_to_mesh: empty scan");
    std::vector<double> d(static_cast<size_t>(points.rows()));
    for (int i = 0; i < points.rows(); ++i)
        d[static_cast<size_t>(i)] = point_to_mesh_distance(points.row(i).transpose(), verts, tris);
    DistanceStats s;
    for (double e : d)
    {
        s.mean += e;
        s.max = std::max(s.max, e);
    }
    s.mean /= static_cast<double>(d.size());
    std::vector<double> sorted = d;
    std::sort(sorted.begin(), sorted.end());
    const size_t n = sorted.size();
    s.median = (n % 2 == 1) ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    return s;
}

// ---------------------------------------------------------------------------
// synthetic model construction
// ---------------------------------------------------------------------------

namespace detail {

/// Face-like height field over (u,v) in [-1,1]^2; v increases downward.
inline double face_height(double u, double v)
{
    auto bump = [](double x, double y, double sx, double sy) {
        return std::exp(-(x * x / sx + y * y / sy));
    };
    double z = 0.0;
    z += 0.55 * bump(u, v * 0.9, 0.50, 0.50);                    // skull dome
    z += 0.28 * bump(u, v - 0.10, 0.015, 0.10);                  // nose ridge
    z += 0.10 * bump(u, v - 0.30, 0.012, 0.010);                 // nose tip
    z += 0.08 * (bump(u - 0.33, v + 0.28, 0.030, 0.008) +        // brows
                 bump(u + 0.33, v + 0.28, 0.030, 0.008));
    z -= 0.06 * (bump(u - 0.33, v + 0.16, 0.020, 0.010) +        // eye sockets
                 bump(u + 0.33, v + 0.16, 0.020, 0.010));
    z += 0.07 * bump(u, v - 0.48, 0.060, 0.006);                 // lips
    z += 0.06 * bump(u, v - 0.78, 0.040, 0.020);                 // chin
    z += 0.05 * (bump(u - 0.45, v - 0.25, 0.050, 0.050) +        // cheeks
                 bump(u + 0.45, v - 0.25, 0.050, 0.050));
    return z;
}

inline double face_radius(double u, double v)
{
    const double a = u / 0.88, b = v / 0.95;
    return std::sqrt(a * a + b * b);
}

/// 1 well inside the face ellipse, smoothly 0 at its rim.
inline double face_falloff(double u, double v)
{
    const double r = face_radius(u, v);
    if (r <= 0.80)
        return 1.0;
    if (r >= 1.02)
        return 0.0;
    const double t = (1.02 - r) / (1.02 - 0.80);
    return t * t * (3.0 - 2.0 * t);
}

/// Separable Gaussian smoothing of a grid-shaped field, truncated at `radius`.
inline void smooth_grid_field(Eigen::VectorXd& field, int grid, int radius, double sigma)
{
    std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
    double ksum = 0.0;
    for (int k = -radius; k <= radius; ++k)
    {
        kernel[static_cast<size_t>(k + radius)] = std::exp(-0.5 * (k * k) / (sigma * sigma));
        ksum += kernel[static_cast<size_t>(k + radius)];
    }
    for (auto& e : kernel)
        e /= ksum;
    Eigen::VectorXd tmp(field.size());
    // horizontal
    for (int r = 0; r < grid; ++r)
        for (int c = 0; c < grid; ++c)
        {
            double s = 0.0;
            for (int k = -radius; k <= radius; ++k)
            {
                const int cc = std::clamp(c + k, 0, grid - 1);
                s += kernel[static_cast<size_t>(k + radius)] * field[r * grid + cc];
            }
            tmp[r * grid + c] = s;
        }
    // vertical
    for (int r = 0; r < grid; ++r)
        for (int c = 0; c < grid; ++c)
        {
            double s = 0.0;
            for (int k = -radius; k <= radius; ++k)
            {
                const int rr = std::clamp(r + k, 0, grid - 1);
                s += kernel[static_cast<size_t>(k + radius)] * tmp[rr * grid + c];
            }
            field[r * grid + c] = s;
        }
}

} // namespace detail

/**
 * Builds the procedural stand-in model: a smooth face-like height field with
 * orthonormalized low-frequency random displacement bases, one jaw joint and
 * an embedded landmark set. Deterministic for a given (spec, seed).
 */
inline MorphableModel build_synthetic_model(const ModelSpec& spec, std::uint64_t seed)
{
    const int grid = spec.grid_n();
    if (grid < 9)
        throw ConfigError("build_synthetic_model: grid too small (need n_vertices >= 81)");
    if (spec.d_beta < 0 || spec.d_psi < 0)
        throw ConfigError("build_synthetic_model: negative basis size");
    if (spec.smooth_cells < 1 || spec.smooth_cells >= grid / 2)
        throw ConfigError("build_synthetic_model: smooth_cells out of range");
    const int n = grid * grid;
    if (3 * n < spec.d_beta + spec.d_psi + 2)
        throw ConfigError("build_synthetic_model: basis sizes exceed available rank");

    MorphableModel m;
    m.spec = spec;
    m.seed = seed;
    Rng rng(seed);

    auto coord = [grid](int idx) {
        const int r = idx / grid, c = idx % grid;
        const double v = -1.0 + 2.0 * r / (grid - 1);
        const double u = -1.0 + 2.0 * c / (grid - 1);
        return std::pair<double, double>(u, v);
    };

    // template
    m.template_verts.resize(n, 3);
    for (int i = 0; i < n; ++i)
    {
        const auto [u, v] = coord(i);
        m.template_verts.row(i) = Eigen::RowVector3d(u, v, detail::face_height(u, v));
    }

    // triangulation (consistent winding so the height field faces the camera)
    m.triangles.resize(2 * (grid - 1) * (grid - 1), 3);
    int t = 0;
    for (int r = 0; r + 1 < grid; ++r)
        for (int c = 0; c + 1 < grid; ++c)
        {
            const int a = r * grid + c, b = r * grid + c + 1;
            const int d = (r + 1) * grid + c + 1, e = (r + 1) * grid + c;
            m.triangles.row(t++) = Eigen::RowVector3i(a, b, d);
            m.triangles.row(t++) = Eigen::RowVector3i(a, d, e);
        }

    // face region (expressive part)
    for (int i = 0; i < n; ++i)
    {
        const auto [u, v] = coord(i);
        if (detail::face_radius(u, v) <= 1.0)
            m.face_region_indices.push_back(i);
    }

    // jaw rig
    m.jaw_weights.resize(n);
    for (int i = 0; i < n; ++i)
    {
        const auto [u, v] = coord(i);
        double w = 0.0;
        if (v >= 0.55)
            w = 1.0;
        else if (v > 0.18)
        {
            const double s = (v - 0.18) / (0.55 - 0.18);
            w = s * s * (3.0 - 2.0 * s);
        }
        m.jaw_weights[i] = w;
    }
    m.jaw_pivot = Eigen::Vector3d(0.0, 0.15, -0.20);

    // bases: smoothed Gaussian random fields, Gram-Schmidt within each basis
    const double sigma = spec.smooth_cells / 2.0;
    const int radius = spec.smooth_cells;
    auto make_column = [&](bool face_local) {
        Eigen::VectorXd col(3 * n);
        for (int c = 0; c < 3; ++c)
        {
            Eigen::VectorXd field(n);
            for (int i = 0; i < n; ++i)
                field[i] = rng.normal();
            detail::smooth_grid_field(field, grid, radius, sigma);
            for (int i = 0; i < n; ++i)
                col[3 * i + c] = field[i];
        }
        if (face_local)
            for (int i = 0; i < n; ++i)
            {
                const auto [u, v] = coord(i);
                const double f = detail::face_falloff(u, v);
                col.segment<3>(3 * i) *= f;
            }
        return col;
    };
    auto orthonormalize = [](Eigen::MatrixXd& basis, int upto) {
        // two-pass modified Gram-Schmidt on column `upto`
        for (int pass = 0; pass < 2; ++pass)
            for (int j = 0; j < upto; ++j)
                basis.col(upto) -= basis.col(j).dot(basis.col(upto)) * basis.col(j);
        const double nrm = basis.col(upto).norm();
        if (nrm < 1e-8)
            throw ConfigError("build_synthetic_model: basis rank exhausted; reduce d_beta/d_psi");
        basis.col(upto) /= nrm;
    };

    m.identity_basis.resize(3 * n, spec.d_beta);
    for (int j = 0; j < spec.d_beta; ++j)
    {
        m.identity_basis.col(j) = make_column(false);
        orthonormalize(m.identity_basis, j);
    }
    m.expression_basis.resize(3 * n, spec.d_psi);
    for (int j = 0; j < spec.d_psi; ++j)
    {
        m.expression_basis.col(j) = make_column(true);
        orthonormalize(m.expression_basis, j);
    }

    // eyelid blendshapes: localized analytic bumps, one per eye
    m.eyelid_basis.resize(3 * n, 2);
    const double eye_u[2] = {-0.33, 0.33};
    for (int side = 0; side < 2; ++side)
    {
        Eigen::VectorXd col = Eigen::VectorXd::Zero(3 * n);
        for (int i = 0; i < n; ++i)
        {
            const auto [u, v] = coord(i);
            const double du = u - eye_u[side], dv = v + 0.16;
            const double g = std::exp(-(du * du + dv * dv) / (2.0 * 0.12 * 0.12));
            col[3 * i + 1] = 0.10 * g;  // lid slides down the face
            col[3 * i + 2] = -0.03 * g; // and slightly inward
        }
        m.eyelid_basis.col(side) = col;
        orthonormalize(m.eyelid_basis, side);
    }

    // landmarks: canonical (u,v) anchors snapped to distinct face-region vertices,
    // interleaved so that any prefix still spans the face
    const double anchors[][2] = {
        {-0.45, -0.16}, {0.45, -0.16}, {-0.30, 0.48},  {0.30, 0.48},  {0.00, 0.30},
        {0.00, 0.80},   {-0.45, -0.30}, {0.45, -0.30}, {0.00, 0.41},  {0.00, 0.58},
        {-0.20, -0.16}, {0.20, -0.16}, {-0.12, 0.42},  {0.12, 0.42},  {0.00, -0.05},
        {0.00, -0.55},  {-0.20, -0.33}, {0.20, -0.33}, {-0.12, 0.56}, {0.12, 0.56},
        {-0.55, 0.40},  {0.55, 0.40},  {-0.12, 0.28},  {0.12, 0.28},
    };
    const int n_anchor = static_cast<int>(sizeof(anchors) / sizeof(anchors[0]));
    if (spec.n_landmarks < 3 || spec.n_landmarks > n_anchor)
        throw ConfigError("build_synthetic_model: n_landmarks must be in [3, " +
                          std::to_string(n_anchor) + "]");
    std::vector<char> used(static_cast<size_t>(n), 0);
    for (int k = 0; k < spec.n_landmarks; ++k)
    {
        int best = -1;
        double best_d = std::numeric_limits<double>::infinity();
        for (int i : m.face_region_indices)
        {
            if (used[static_cast<size_t>(i)])
                continue;
            const auto [u, v] = coord(i);
            const double du = u - anchors[k][0], dv = v - anchors[k][1];
            const double d = du * du + dv * dv;
            if (d < best_d)
            {
                best_d = d;
                best = i;
            }
        }
        used[static_cast<size_t>(best)] = 1;
        m.landmark_indices.push_back(best);
    }

    // quantize to float32 so serialization round-trips exactly
    auto q = [](double x) { return static_cast<double>(static_cast<float>(x)); };
    for (int i = 0; i < m.template_verts.size(); ++i)
        m.template_verts.data()[i] = q(m.template_verts.data()[i]);
    for (int i = 0; i < m.identity_basis.size(); ++i)
        m.identity_basis.data()[i] = q(m.identity_basis.data()[i]);
    for (int i = 0; i < m.expression_basis.size(); ++i)
        m.expression_basis.data()[i] = q(m.expression_basis.data()[i]);
    for (int i = 0; i < m.eyelid_basis.size(); ++i)
        m.eyelid_basis.data()[i] = q(m.eyelid_basis.data()[i]);
    for (int i = 0; i < m.jaw_weights.size(); ++i)
        m.jaw_weights[i] = q(m.jaw_weights[i]);
    for (int i = 0; i < 3; ++i)
        m.jaw_pivot[i] = q(m.jaw_pivot[i]);

    m.rebuild_derived();
    return m;
}

// ---------------------------------------------------------------------------
// model serialization (manifest + float32 blobs) and OBJ export
// ---------------------------------------------------------------------------

namespace detail {

inline void write_f32_matrix(const std::filesystem::path& p, const Eigen::MatrixXd& m)
{
    std::vector<float> buf(static_cast<size_t>(m.size()));
    // row-major on disk
    size_t k = 0;
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c)
            buf[k++] = static_cast<float>(m(r, c));
    write_blob_f32(p, buf.data(), buf.size());
}

inline Eigen::MatrixXd read_f32_matrix(const std::filesystem::path& p, int rows, int cols)
{
    const auto buf = read_blob_f32(p, static_cast<size_t>(rows) * cols);
    Eigen::MatrixXd m(rows, cols);
    size_t k = 0;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            m(r, c) = static_cast<double>(buf[k++]);
    return m;
}

} // namespace detail

inline void save_model(const MorphableModel& m, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    Json manifest{{"format", "facelab-model"},
                  {"version", 1},
                  {"spec", m.spec.to_json()},
                  {"seed", m.seed},
                  {"n_triangles", m.triangles.rows()},
                  {"n_face_region", m.face_region_indices.size()},
                  {"fingerprint", m.fingerprint()}};
    write_json(dir / "manifest.json", manifest);
    detail::write_f32_matrix(dir / "template.f32", m.template_verts);
    detail::write_f32_matrix(dir / "identity_basis.f32", m.identity_basis);
    detail::write_f32_matrix(dir / "expression_basis.f32", m.expression_basis);
    detail::write_f32_matrix(dir / "eyelid_basis.f32", m.eyelid_basis);
    detail::write_f32_matrix(dir / "jaw_weights.f32", m.jaw_weights);
    detail::write_f32_matrix(dir / "jaw_pivot.f32", m.jaw_pivot);
    std::vector<std::int32_t> tri(static_cast<size_t>(m.triangles.size()));
    for (int r = 0; r < m.triangles.rows(); ++r)
        for (int c = 0; c < 3; ++c)
            tri[static_cast<size_t>(r) * 3 + c] = m.triangles(r, c);
    write_blob_i32(dir / "triangles.i32", tri.data(), tri.size());
    std::vector<std::int32_t> lmk(m.landmark_indices.begin(), m.landmark_indices.end());
    write_blob_i32(dir / "landmark_indices.i32", lmk.data(), lmk.size());
    std::vector<std::int32_t> fr(m.face_region_indices.begin(), m.face_region_indices.end());
    write_blob_i32(dir / "face_region.i32", fr.data(), fr.size());
}

inline MorphableModel load_model(const std::filesystem::path& dir)
{
    const Json manifest = read_json(dir / "manifest.json");
    if (manifest.value("format", "") != "facelab-model")
        throw IoError("load_model: not a model directory: " + dir.string());
    MorphableModel m;
    m.spec = ModelSpec::from_json(manifest.at("spec"));
    m.seed = manifest.at("seed").get<std::uint64_t>();
    const int n = m.spec.n_vertices;
    const int nt = manifest.at("n_triangles").get<int>();
    const int nf = manifest.at("n_face_region").get<int>();
    m.template_verts = detail::read_f32_matrix(dir / "template.f32", n, 3);
    m.identity_basis = detail::read_f32_matrix(dir / "identity_basis.f32", 3 * n, m.spec.d_beta);
    m.expression_basis =
        detail::read_f32_matrix(dir / "expression_basis.f32", 3 * n, m.spec.d_psi);
    m.eyelid_basis = detail::read_f32_matrix(dir / "eyelid_basis.f32", 3 * n, 2);
    m.jaw_weights = detail::read_f32_matrix(dir / "jaw_weights.f32", n, 1);
    m.jaw_pivot = detail::read_f32_matrix(dir / "jaw_pivot.f32", 3, 1);
    const auto tri = read_blob_i32(dir / "triangles.i32", static_cast<size_t>(nt) * 3);
    m.triangles.resize(nt, 3);
    for (int r = 0; r < nt; ++r)
        for (int c = 0; c < 3; ++c)
            m.triangles(r, c) = tri[static_cast<size_t>(r) * 3 + c];
    const auto lmk =
        read_blob_i32(dir / "landmark_indices.i32", static_cast<size_t>(m.spec.n_landmarks));
    m.landmark_indices.assign(lmk.begin(), lmk.end());
    const auto fr = read_blob_i32(dir / "face_region.i32", static_cast<size_t>(nf));
    m.face_region_indices.assign(fr.begin(), fr.end());
    m.rebuild_derived();
    return m;
}

inline void write_obj(const std::filesystem::path& path, const Eigen::MatrixX3d& verts,
                      const Eigen::Matrix<int, Eigen::Dynamic, 3>& tris)
{
    std::ofstream f(path);
    if (!f)
        throw IoError("write_obj: cannot open " + path.string());
    char line[128];
    for (int i = 0; i < verts.rows(); ++i)
    {
        std::snprintf(line, sizeof(line), "v %.6f %.6f %.6f\n", verts(i, 0), verts(i, 1),
                      verts(i, 2));
        f << line;
    }
    for (int t = 0; t < tris.rows(); ++t)
    {
        std::snprintf(line, sizeof(line), "f %d %d %d\n", tris(t, 0) + 1, tris(t, 1) + 1,
                      tris(t, 2) + 1);
        f << line;
    }
}

/// Reads vertices (and triangles, if present) from an ASCII OBJ file.
inline std::pair<Eigen::MatrixX3d, Eigen::Matrix<int, Eigen::Dynamic, 3>>
read_obj(const std::filesystem::path& path)
{
    std::ifstream f(path);
    if (!f)
        throw IoError("read_obj: cannot open " + path.string());
    std::vector<Eigen::Vector3d> vs;
    std::vector<Eigen::Vector3i> ts;
    std::string tok;
    std::string line;
    while (std::getline(f, line))
    {
        std::istringstream is(line);
        if (!(is >> tok))
            continue;
        if (tok == "v")
        {
            double x, y, z;
            is >> x >> y >> z;
            vs.emplace_back(x, y, z);
        }
        else if (tok == "f")
        {
            int a, b, c;
            is >> a >> b >> c;
            ts.emplace_back(a - 1, b - 1, c - 1);
        }
    }
    Eigen::MatrixX3d verts(static_cast<int>(vs.size()), 3);
    for (size_t i = 0; i < vs.size(); ++i)
        verts.row(static_cast<int>(i)) = vs[i].transpose();
    Eigen::Matrix<int, Eigen::Dynamic, 3> tris(static_cast<int>(ts.size()), 3);
    for (size_t i = 0; i < ts.size(); ++i)
        tris.row(static_cast<int>(i)) = ts[i].transpose();
    return {verts, tris};
}

// ---------------------------------------------------------------------------
// graph ops over the model
// ---------------------------------------------------------------------------

/// Camera/pose head mapping priors: raw encoder output -> valid parameters.
struct CamPriors
{
    double scale0 = 1.0;
    double tx0 = 0.0;
    double ty0 = 0.0;
    double trans_gain = 16.0; // pixels per unit of raw head output
};

namespace ops {

/**
 * Maps a raw 6-vector [pose(3), s, tx, ty] to valid pose/camera parameters:
 * pose passes through, scale = scale0 * exp(s) (always positive), translation
 * is an affine offset from the prior. Zero input yields the priors exactly.
 */
template <typename S>
int cam_map(Graph<S>& g, int raw, const CamPriors& pr)
{
    const auto& vx = g.value(raw);
    if (vx.size() != 6)
        throw ContractViolation("cam_map: expected 6 raw values");
    Tensor<S> y = Tensor<S>::zeros({6});
    y.v[0] = vx.v[0];
    y.v[1] = vx.v[1];
    y.v[2] = vx.v[2];
    y.v[3] = static_cast<S>(pr.scale0) * std::exp(vx.v[3]);
    y.v[4] = static_cast<S>(pr.tx0) + static_cast<S>(pr.trans_gain) * vx.v[4];
    y.v[5] = static_cast<S>(pr.ty0) + static_cast<S>(pr.trans_gain) * vx.v[5];
    const S gain = static_cast<S>(pr.trans_gain);
    return g.add_op(std::move(y), {raw}, [raw, gain](Graph<S>& g, int h) {
        if (!g.needs_grad(raw))
            return;
        const auto& gy = g.nodes[h].grad;
        const auto& vy = g.value(h);
        auto& gx = g.grad(raw);
        gx.v[0] += gy.v[0];
        gx.v[1] += gy.v[1];
        gx.v[2] += gy.v[2];
        gx.v[3] += gy.v[3] * vy.v[3]; // d(scale0 e^s)/ds = scale
        gx.v[4] += gy.v[4] * gain;
        gx.v[5] += gy.v[5] * gain;
    });
}

/// Differentiable decode: (psi_full, beta, posecam) -> posed vertices [n_v,3].
template <typename S>
int decode_verts(Graph<S>& g, const MorphableModel& m, int psi, int beta, int posecam)
{
    const auto& vpsi = g.value(psi);
    const auto& vbeta = g.value(beta);
    const auto& vpc = g.value(posecam);
    if (vpsi.size() != m.spec.d_psi + 5 || vbeta.size() != m.spec.d_beta || vpc.size() != 6)
        throw ContractViolation("decode_verts: parameter dimensions do not match the model");
    FaceParams p = FaceParams::zero(m.spec.d_beta, m.spec.d_psi);
    for (int i = 0; i < m.spec.d_psi; ++i)
        p.psi_expr[i] = static_cast<double>(vpsi.v[i]);
    p.eyelids = Eigen::Vector2d(vpsi.v[m.spec.d_psi], vpsi.v[m.spec.d_psi + 1]);
    p.jaw = Eigen::Vector3d(vpsi.v[m.spec.d_psi + 2], vpsi.v[m.spec.d_psi + 3],
                            vpsi.v[m.spec.d_psi + 4]);
    for (int i = 0; i < m.spec.d_beta; ++i)
        p.beta[i] = static_cast<double>(vbeta.v[i]);
    p.pose = Eigen::Vector3d(vpc.v[0], vpc.v[1], vpc.v[2]);
    p.cam_scale = 1.0; // camera not used by decode

    const Eigen::MatrixX3d verts = decode(m, p);
    const int n = m.n_vertices();
    Tensor<S> y = Tensor<S>::zeros({n, 3});
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c)
            y.v[static_cast<size_t>(i) * 3 + c] = static_cast<S>(verts(i, c));
    const MorphableModel* mp = &m;
    return g.add_op(std::move(y), {psi, beta, posecam}, [psi, beta, posecam, mp, p](Graph<S>& g, int h) {
        const auto& gy = g.nodes[h].grad;
        const int n = mp->n_vertices();
        Eigen::MatrixX3d dverts(n, 3);
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < 3; ++c)
                dverts(i, c) = static_cast<double>(gy.v[static_cast<size_t>(i) * 3 + c]);
        const ParamGrads pg = decode_backward(*mp, p, dverts);
        if (g.needs_grad(psi))
        {
            auto& gp = g.grad(psi);
            for (int i = 0; i < pg.psi_expr.size(); ++i)
                gp.v[i] += static_cast<S>(pg.psi_expr[i]);
            const int d = static_cast<int>(pg.psi_expr.size());
            gp.v[d] += static_cast<S>(pg.eyelids[0]);
            gp.v[d + 1] += static_cast<S>(pg.eyelids[1]);
            for (int i = 0; i < 3; ++i)
                gp.v[d + 2 + i] += static_cast<S>(pg.jaw[i]);
        }
        if (g.needs_grad(beta))
        {
            auto& gb = g.grad(beta);
            for (int i = 0; i < pg.beta.size(); ++i)
                gb.v[i] += static_cast<S>(pg.beta[i]);
        }
        if (g.needs_grad(posecam))
        {
            auto& gc = g.grad(posecam);
            for (int i = 0; i < 3; ++i)
                gc.v[i] += static_cast<S>(pg.pose[i]);
        }
    });
}

/// Projects the model's landmark vertices to pixel coordinates: [K,2].
template <typename S>
int landmarks_px(Graph<S>& g, const MorphableModel& m, int verts, int posecam)
{
    const auto& vv = g.value(verts);
    const auto& vpc = g.value(posecam);
    const S scale = vpc.v[3], tx = vpc.v[4], ty = vpc.v[5];
    const int K = m.n_landmarks();
    Tensor<S> y = Tensor<S>::zeros({K, 2});
    for (int k = 0; k < K; ++k)
    {
        const int i = m.landmark_indices[static_cast<size_t>(k)];
        y.v[static_cast<size_t>(k) * 2 + 0] = scale * vv.v[static_cast<size_t>(i) * 3 + 0] + tx;
        y.v[static_cast<size_t>(k) * 2 + 1] = scale * vv.v[static_cast<size_t>(i) * 3 + 1] + ty;
    }
    const MorphableModel* mp = &m;
    return g.add_op(std::move(y), {verts, posecam}, [verts, posecam, mp](Graph<S>& g, int h) {
        const auto& gy = g.nodes[h].grad;
        const auto& vv = g.value(verts);
        const auto& vpc = g.value(posecam);
        const S scale = vpc.v[3];
        const int K = mp->n_landmarks();
        const bool nv = g.needs_grad(verts), nc = g.needs_grad(posecam);
        for (int k = 0; k < K; ++k)
        {
            const int i = mp->landmark_indices[static_cast<size_t>(k)];
            const S gx = gy.v[static_cast<size_t>(k) * 2 + 0];
            const S gyv = gy.v[static_cast<size_t>(k) * 2 + 1];
            if (nv)
            {
                auto& gv = g.grad(verts);
                gv.v[static_cast<size_t>(i) * 3 + 0] += scale * gx;
                gv.v[static_cast<size_t>(i) * 3 + 1] += scale * gyv;
            }
            if (nc)
            {
                auto& gc = g.grad(posecam);
                gc.v[3] += gx * vv.v[static_cast<size_t>(i) * 3 + 0] +
                           gyv * vv.v[static_cast<size_t>(i) * 3 + 1];
                gc.v[4] += gx;
                gc.v[5] += gyv;
            }
        }
    });
}

} // namespace ops
} // namespace facelab
