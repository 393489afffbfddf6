/*
 * facelab - analysis-by-neural-synthesis 3D face reconstruction.
 *
 * File: src/data.cpp
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
#include "facelab/data.hpp"

#include "facelab/raster.hpp"

#include <cmath>
#include <cstdio>

namespace facelab {

namespace {

std::string sample_name(int index)
{
    char buf[32];
    std::snprintf(buf, sizeof(buf), "sample_%05d", index);
    return std::string(buf);
}

} // namespace

CamPriors default_cam_priors(int image_size)
{
    CamPriors p;
    p.scale0 = 0.40 * image_size;
    p.tx0 = 0.5 * image_size;
    p.ty0 = 0.5 * image_size;
    p.trans_gain = image_size / 8.0;
    return p;
}

FaceParams sample_params(const MorphableModel& model, const SampleDistribution& dist,
                         int image_size, Rng& rng)
{
    FaceParams p = FaceParams::zero(model.spec.d_beta, model.spec.d_psi);
    for (int i = 0; i < p.beta.size(); ++i)
        p.beta[i] = rng.normal(0.0, dist.beta_sigma);
    const Eigen::VectorXd sigma = dist.psi_sigma(model.spec.d_psi);
    for (int i = 0; i < p.psi_expr.size(); ++i)
        p.psi_expr[i] = rng.normal(0.0, sigma[i]);
    if (rng.uniform() < dist.heavy_tail_prob)
        p.psi_expr *= dist.heavy_tail_factor;
    p.eyelids[0] = rng.uniform(0.0, dist.eyelid_max);
    p.eyelids[1] = rng.uniform(0.0, dist.eyelid_max);
    p.jaw = Eigen::Vector3d(rng.uniform(0.0, dist.jaw_max), 0.0, 0.0);
    for (int i = 0; i < 3; ++i)
        p.pose[i] = rng.normal(0.0, dist.pose_sigma);
    const CamPriors pri = default_cam_priors(image_size);
    p.cam_scale = pri.scale0 * std::exp(rng.normal(0.0, dist.scale_jitter));
    p.cam_tx = pri.tx0 + rng.normal(0.0, dist.trans_jitter_px);
    p.cam_ty = pri.ty0 + rng.normal(0.0, dist.trans_jitter_px);
    p.round_to_f32();
    return p;
}

Eigen::MatrixX3d sample_albedo(const MorphableModel& model, const AppearanceConfig& app, Rng& rng)
{
    const int grid = model.spec.grid_n();
    const int n = model.n_vertices();
    Eigen::MatrixX3d albedo(n, 3);
    for (int c = 0; c < 3; ++c)
    {
        Eigen::VectorXd field(n);
        for (int i = 0; i < n; ++i)
            field[i] = rng.normal();
        detail::smooth_grid_field(field, grid, app.albedo_smooth_cells,
                                  app.albedo_smooth_cells / 2.0);
        const double lo = field.minCoeff(), hi = field.maxCoeff();
        const double span = hi - lo > 1e-12 ? hi - lo : 1.0;
        for (int i = 0; i < n; ++i)
            albedo(i, c) =
                app.albedo_min + (app.albedo_max - app.albedo_min) * (field[i] - lo) / span;
    }
    return albedo;
}

Image render_textured(const MorphableModel& model, const FaceParams& params,
                      const Eigen::MatrixX3d& albedo, const AppearanceConfig& app, int image_size,
                      Rng& bg_rng)
{
    const int H = image_size, W = image_size;
    Image img(3, H, W);

    // procedural background: two-color vertical gradient plus soft blobs
    double top[3], bottom[3];
    for (int c = 0; c < 3; ++c)
    {
        top[c] = bg_rng.uniform(0.1, 0.9);
        bottom[c] = bg_rng.uniform(0.1, 0.9);
    }
    struct Blob
    {
        double cx, cy, r, col[3];
    };
    std::vector<Blob> blobs;
    for (int b = 0; b < app.background_blobs; ++b)
    {
        Blob bl;
        bl.cx = bg_rng.uniform(0.0, W);
        bl.cy = bg_rng.uniform(0.0, H);
        bl.r = bg_rng.uniform(0.15, 0.4) * W;
        for (int c = 0; c < 3; ++c)
            bl.col[c] = bg_rng.uniform(0.0, 1.0);
        blobs.push_back(bl);
    }
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
        {
            const double t = static_cast<double>(y) / (H - 1);
            double col[3];
            for (int c = 0; c < 3; ++c)
                col[c] = top[c] * (1.0 - t) + bottom[c] * t;
            for (const auto& bl : blobs)
            {
                const double d2 = (x + 0.5 - bl.cx) * (x + 0.5 - bl.cx) +
                                  (y + 0.5 - bl.cy) * (y + 0.5 - bl.cy);
                const double w = std::exp(-d2 / (2.0 * bl.r * bl.r)) * 0.6;
                for (int c = 0; c < 3; ++c)
                    col[c] = col[c] * (1.0 - w) + bl.col[c] * w;
            }
            for (int c = 0; c < 3; ++c)
                img.at(c, y, x) = static_cast<float>(col[c]);
        }

    // textured face: hard z-buffer with interpolated albedo, flat shading
    const Eigen::MatrixX3d verts = decode(model, params);
    const DepthBuffer db = rasterize_depth(verts, model.triangles, params.cam_scale, params.cam_tx,
                                           params.cam_ty, H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
        {
            const size_t pi = static_cast<size_t>(y) * W + x;
            const int t = db.tri[pi];
            if (t < 0)
                continue;
            const int i0 = model.triangles(t, 0), i1 = model.triangles(t, 1),
                      i2 = model.triangles(t, 2);
            double sv[9];
            for (int k = 0; k < 3; ++k)
            {
                sv[3 * 0 + k] = verts(i0, k);
                sv[3 * 1 + k] = verts(i1, k);
                sv[3 * 2 + k] = verts(i2, k);
            }
            const double shade = raster_detail::shade_of<double>(sv, sv + 3, sv + 6);
            const double light = app.ambient + (1.0 - app.ambient) * shade;
            const double l0 = db.bary[pi * 3], l1 = db.bary[pi * 3 + 1], l2 = db.bary[pi * 3 + 2];
            for (int c = 0; c < 3; ++c)
            {
                const double a = l0 * albedo(i0, c) + l1 * albedo(i1, c) + l2 * albedo(i2, c);
                img.at(c, y, x) = static_cast<float>(std::clamp(a * light, 0.0, 1.0));
            }
        }
    img.quantize_u8();
    return img;
}

Image regenerate_sample_image(const MorphableModel& model, const DatasetManifest& manifest,
                              int index, FaceParams* params_out)
{
    Rng rng = Rng(manifest.seed).fork(1000 + static_cast<std::uint64_t>(index));
    FaceParams p = sample_params(model, manifest.distribution, manifest.image_size, rng);
    Eigen::MatrixX3d albedo = sample_albedo(model, manifest.appearance, rng);
    Image img = render_textured(model, p, albedo, manifest.appearance, manifest.image_size, rng);
    if (params_out != nullptr)
        *params_out = p;
    return img;
}

DatasetManifest generate_dataset(const MorphableModel& model, const GenerateOptions& opt,
                                 std::uint64_t seed, const std::filesystem::path& out_dir)
{
    if (opt.count < 1)
        throw ConfigError("generate_dataset: count must be >= 1");
    if (opt.image_size < 16 || opt.image_size % 8 != 0)
        throw ConfigError("generate_dataset: image_size must be a multiple of 8, >= 16");
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "images", ec);
    std::filesystem::create_directories(out_dir / "params", ec);
    if (!std::filesystem::is_directory(out_dir / "images") ||
        !std::filesystem::is_directory(out_dir / "params"))
        throw IoError("generate_dataset: cannot create output directory " + out_dir.string());

    DatasetManifest manifest;
    manifest.count = opt.count;
    manifest.image_size = opt.image_size;
    manifest.train_frac = opt.train_frac;
    manifest.val_frac = opt.val_frac;
    manifest.model_fingerprint = model.fingerprint();
    manifest.seed = seed;
    manifest.appearance = opt.appearance;
    manifest.distribution = opt.distribution;

    save_model(model, out_dir / "model");

    for (int i = 0; i < opt.count; ++i)
    {
        FaceParams p;
        const Image img = regenerate_sample_image(model, manifest, i, &p);
        write_png(out_dir / "images" / (sample_name(i) + ".png"), img);

        const Eigen::MatrixX2d lmk_d = landmarks2d(model, p);
        Json lmk = Json::array();
        for (int k = 0; k < lmk_d.rows(); ++k)
            lmk.push_back(Json::array({static_cast<float>(lmk_d(k, 0)),
                                       static_cast<float>(lmk_d(k, 1))}));
        const Eigen::MatrixX3d verts = decode(model, p);
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (int v = 0; v < verts.size(); ++v)
        {
            const float f = static_cast<float>(verts.data()[v]);
            h = fnv1a64(&f, sizeof(f), h);
        }
        char hash[17];
        std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(h));
        write_json(out_dir / "params" / (sample_name(i) + ".json"),
                   Json{{"index", i},
                        {"params", p.to_json()},
                        {"landmarks", lmk},
                        {"mesh_hash", std::string(hash)}});
    }
    write_json(out_dir / "manifest.json", manifest.to_json());
    return manifest;
}

Split split_from_name(const std::string& name)
{
    if (name == "train")
        return Split::kTrain;
    if (name == "val")
        return Split::kVal;
    if (name == "test")
        return Split::kTest;
    throw ConfigError("unknown split '" + name + "' (expected train|val|test)");
}

Dataset Dataset::load(const std::filesystem::path& dir)
{
    Dataset ds;
    ds.dir_ = dir;
    ds.manifest_ = DatasetManifest::from_json(read_json(dir / "manifest.json"));
    ds.model_ = load_model(dir / "model");
    if (ds.model_.fingerprint() != ds.manifest_.model_fingerprint)
        throw IoError("Dataset::load: model fingerprint mismatch in " + dir.string());
    const int n = ds.manifest_.count;
    ds.n_train_ = static_cast<int>(std::floor(ds.manifest_.train_frac * n));
    ds.n_val_ = static_cast<int>(std::floor(ds.manifest_.val_frac * n));
    ds.n_test_ = n - ds.n_train_ - ds.n_val_;
    ds.images_.reserve(static_cast<size_t>(n));
    ds.params_.reserve(static_cast<size_t>(n));
    ds.landmarks_.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
    {
        const auto img_path = dir / "images" / (sample_name(i) + ".png");
        const auto par_path = dir / "params" / (sample_name(i) + ".json");
        if (!std::filesystem::exists(img_path) || !std::filesystem::exists(par_path))
            throw IoError("Dataset::load: missing files for sample " + sample_name(i));
        ds.images_.push_back(read_png(img_path));
        const Json j = read_json(par_path);
        ds.params_.push_back(FaceParams::from_json(j.at("params")));
        const auto& lj = j.at("landmarks");
        Eigen::MatrixX2d lmk(static_cast<int>(lj.size()), 2);
        for (size_t k = 0; k < lj.size(); ++k)
        {
            lmk(static_cast<int>(k), 0) = lj[k][0].get<double>();
            lmk(static_cast<int>(k), 1) = lj[k][1].get<double>();
        }
        ds.landmarks_.push_back(std::move(lmk));
    }
    return ds;
}

int Dataset::split_size(Split s) const
{
    switch (s)
    {
    case Split::kTrain: return n_train_;
    case Split::kVal: return n_val_;
    case Split::kTest: return n_test_;
    }
    return 0;
}

int Dataset::split_index(Split s, int i) const
{
    if (i < 0 || i >= split_size(s))
        throw ContractViolation("Dataset: index " + std::to_string(i) + " out of range for split");
    switch (s)
    {
    case Split::kTrain: return i;
    case Split::kVal: return n_train_ + i;
    case Split::kTest: return n_train_ + n_val_ + i;
    }
    return 0;
}

double Dataset::mean_psi_norm() const
{
    double s = 0.0;
    const int n = std::max(1, n_train_);
    for (int i = 0; i < n_train_; ++i)
        s += params_[static_cast<size_t>(i)].psi_expr.norm();
    return s / n;
}

Eigen::VectorXd Dataset::psi_std() const
{
    const int d = model_.spec.d_psi;
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d), var = Eigen::VectorXd::Zero(d);
    const int n = std::max(1, n_train_);
    for (int i = 0; i < n_train_; ++i)
        mean += params_[static_cast<size_t>(i)].psi_expr;
    mean /= n;
    for (int i = 0; i < n_train_; ++i)
    {
        const Eigen::VectorXd d2 = params_[static_cast<size_t>(i)].psi_expr - mean;
        var += d2.cwiseProduct(d2);
    }
    var /= n;
    return var.cwiseSqrt();
}

Batch load_batch(const Dataset& ds, Split split, const std::vector<int>& indices)
{
    Batch b;
    for (int i : indices)
    {
        const int g = ds.split_index(split, i);
        b.indices.push_back(g);
        b.images.push_back(&ds.image(g));
        b.params.push_back(&ds.params(g));
        b.landmarks.push_back(&ds.landmarks(g));
    }
    return b;
}

} // namespace facelab
