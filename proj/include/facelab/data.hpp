/*
 * facelab - analysis-by-neural-synthesis 3D face reconstruction.
 *
 * File: include/facelab/data.hpp
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

#include "facelab/core/image.hpp"
#include "facelab/core/rng.hpp"
#include "facelab/model.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace facelab {

/**
 * Appearance model of the synthetic data generator: a seeded low-frequency
 * per-vertex albedo field plus a procedural background. It exists only on
 * this side of the pipeline; the reconstruction path never sees albedo.
 */
struct AppearanceConfig
{
    double albedo_min = 0.25;
    double albedo_max = 0.95;
    int albedo_smooth_cells = 6;
    double ambient = 0.25; // shading floor so unlit texture stays visible
    int background_blobs = 2;

    Json to_json() const
    {
        return Json{{"albedo_min", albedo_min},
                    {"albedo_max", albedo_max},
                    {"albedo_smooth_cells", albedo_smooth_cells},
                    {"ambient", ambient},
                    {"background_blobs", background_blobs}};
    }
    static AppearanceConfig from_json(const Json& j)
    {
        AppearanceConfig c;
        c.albedo_min = j.at("albedo_min").get<double>();
        c.albedo_max = j.at("albedo_max").get<double>();
        c.albedo_smooth_cells = j.at("albedo_smooth_cells").get<int>();
        c.ambient = j.at("ambient").get<double>();
        c.background_blobs = j.at("background_blobs").get<int>();
        return c;
    }
};

/// Parameter sampling ranges for generated faces.
struct SampleDistribution
{
    double beta_sigma = 1.0;
    double psi_sigma_decay = 1.0; // sigma_j = 1 / (1 + j)^decay... decay=1: harmonic spectrum
    double heavy_tail_prob = 0.10;
    double heavy_tail_factor = 2.8;
    double jaw_max = 0.35;
    double eyelid_max = 1.0;
    double pose_sigma = 0.08; // radians
    double scale_jitter = 0.06;
    double trans_jitter_px = 3.0;

    Eigen::VectorXd psi_sigma(int d) const
    {
        Eigen::VectorXd s(d);
        for (int j = 0; j < d; ++j)
            s[j] = 1.0 / std::pow(1.0 + j, psi_sigma_decay);
        return s;
    }

    Json to_json() const
    {
        return Json{{"beta_sigma", beta_sigma},
                    {"psi_sigma_decay", psi_sigma_decay},
                    {"heavy_tail_prob", heavy_tail_prob},
                    {"heavy_tail_factor", heavy_tail_factor},
                    {"jaw_max", jaw_max},
                    {"eyelid_max", eyelid_max},
                    {"pose_sigma", pose_sigma},
                    {"scale_jitter", scale_jitter},
                    {"trans_jitter_px", trans_jitter_px}};
    }
    static SampleDistribution from_json(const Json& j)
    {
        SampleDistribution c;
        c.beta_sigma = j.at("beta_sigma").get<double>();
        c.psi_sigma_decay = j.at("psi_sigma_decay").get<double>();
        c.heavy_tail_prob = j.at("heavy_tail_prob").get<double>();
        c.heavy_tail_factor = j.at("heavy_tail_factor").get<double>();
        c.jaw_max = j.at("jaw_max").get<double>();
        c.eyelid_max = j.at("eyelid_max").get<double>();
        c.pose_sigma = j.at("pose_sigma").get<double>();
        c.scale_jitter = j.at("scale_jitter").get<double>();
        c.trans_jitter_px = j.at("trans_jitter_px").get<double>();
        return c;
    }
};

struct DatasetManifest
{
    int count = 0;
    int image_size = 128;
    double train_frac = 0.8;
    double val_frac = 0.1; // test gets the remainder
    std::string model_fingerprint;
    std::uint64_t seed = 0;
    AppearanceConfig appearance;
    SampleDistribution distribution;

    Json to_json() const
    {
        return Json{{"format", "facelab-dataset"},
                    {"version", 1},
                    {"count", count},
                    {"image_size", image_size},
                    {"train_frac", train_frac},
                    {"val_frac", val_frac},
                    {"model_fingerprint", model_fingerprint},
                    {"seed", seed},
                    {"appearance", appearance.to_json()},
                    {"distribution", distribution.to_json()}};
    }
    static DatasetManifest from_json(const Json& j)
    {
        DatasetManifest m;
        m.count = j.at("count").get<int>();
        m.image_size = j.at("image_size").get<int>();
        m.train_frac = j.at("train_frac").get<double>();
        m.val_frac = j.at("val_frac").get<double>();
        m.model_fingerprint = j.at("model_fingerprint").get<std::string>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.appearance = AppearanceConfig::from_json(j.at("appearance"));
        m.distribution = SampleDistribution::from_json(j.at("distribution"));
        return m;
    }
};

/// Camera prior that frames the template face in a size x size image.
CamPriors default_cam_priors(int image_size);

/// Draws ground-truth parameters for one sample (all values float32-exact).
FaceParams sample_params(const MorphableModel& model, const SampleDistribution& dist,
                         int image_size, Rng& rng);

/// Per-vertex RGB albedo field for one identity.
Eigen::MatrixX3d sample_albedo(const MorphableModel& model, const AppearanceConfig& app, Rng& rng);

/// Textured Lambertian render over a procedural background (generator only).
Image render_textured(const MorphableModel& model, const FaceParams& params,
                      const Eigen::MatrixX3d& albedo, const AppearanceConfig& app, int image_size,
                      Rng& bg_rng);

/// Deterministically regenerates sample i's image (bit-exact for a manifest).
Image regenerate_sample_image(const MorphableModel& model, const DatasetManifest& manifest, int index,
                              FaceParams* params_out = nullptr);

struct GenerateOptions
{
    int count = 64;
    int image_size = 128;
    double train_frac = 0.8;
    double val_frac = 0.1;
    AppearanceConfig appearance;
    SampleDistribution distribution;
};

DatasetManifest generate_dataset(const MorphableModel& model, const GenerateOptions& opt,
                                 std::uint64_t seed, const std::filesystem::path& out_dir);

enum class Split
{
    kTrain,
    kVal,
    kTest,
};

Split split_from_name(const std::string& name);

/// In-memory dataset: images decoded once, parameters and landmarks parsed.
class Dataset
{
public:
    static Dataset load(const std::filesystem::path& dir);

    const DatasetManifest& manifest() const { return manifest_; }
    const MorphableModel& model() const { return model_; }
    const std::filesystem::path& dir() const { return dir_; }

    int split_size(Split s) const;
    /// Global sample index of element `i` of a split; throws if out of range.
    int split_index(Split s, int i) const;

    const Image& image(int global_index) const { return images_[static_cast<size_t>(global_index)]; }
    const FaceParams& params(int global_index) const
    {
        return params_[static_cast<size_t>(global_index)];
    }
    const Eigen::MatrixX2d& landmarks(int global_index) const
    {
        return landmarks_[static_cast<size_t>(global_index)];
    }

    /// Mean L2 norm of psi_expr over the train split (augmentation scaling).
    double mean_psi_norm() const;
    /// Per-coordinate std of psi_expr over the train split.
    Eigen::VectorXd psi_std() const;

private:
    DatasetManifest manifest_;
    MorphableModel model_;
    std::filesystem::path dir_;
    std::vector<Image> images_;
    std::vector<FaceParams> params_;
    std::vector<Eigen::MatrixX2d> landmarks_;
    int n_train_ = 0, n_val_ = 0, n_test_ = 0;
};

struct Batch
{
    std::vector<int> indices; // global sample indices
    std::vector<const Image*> images;
    std::vector<const FaceParams*> params;
    std::vector<const Eigen::MatrixX2d*> landmarks;
};

/// Gathers split-local indices into a batch; round-trips exactly what was written.
Batch load_batch(const Dataset& ds, Split split, const std::vector<int>& indices);

} // namespace facelab
