/*
 * facelab - analysis-by-neural-synthesis 3D face reconstruction.
 *
 * File: include/facelab/config.hpp
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

#include "facelab/core/serialize.hpp"
#include "facelab/model.hpp"
#include "facelab/networks.hpp"
#include "facelab/raster.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace facelab {

/**
 * Flat training configuration. The reference values (batch 32, 250k/60k
 * iterations, lr 1e-3 / 5e-4, weights photo 1 / vgg 10 / lmk 100 / reg 1e-3 /
 * emo 1 / cycle 10, mask ratio 1%) are the full-scale defaults; the desk
 * profile only shrinks iteration counts, image size and network width, never
 * the loss weights.
 */
struct TrainConfig
{
    // losses
    double w_photo = 1.0;
    double w_vgg = 10.0;
    double w_lmk = 100.0;
    double w_reg = 1e-3;
    double w_emo = 1.0;
    double w_cycle = 10.0;
    bool reg_include_jaw_eyelids = false;

    // optimization
    int batch_size = 32;
    long total_iterations = 250000;
    double lr = 1e-3;
    double lr_min_frac = 0.05;
    long pretrain_iterations = 60000;
    double pretrain_lr = 5e-4;
    bool pretrain_expression = true;
    long lmk_drop_after_epoch = -1; // >=0: landmark weight set to 0 after that epoch
    bool cycle_enabled = true;
    bool shared_batch = false;

    // masking
    double mask_ratio = 0.01;
    int mask_dilation = 4;
    bool exclude_render_interior = false;

    // augmentation (cycle path)
    double aug_noise_scale = -1.0; // <0: 0.5 * std of the training-set psi
    double aug_jaw_min = 0.0;
    double aug_jaw_max = 0.35;
    double aug_eyelid_min = 0.0;
    double aug_eyelid_max = 1.0;
    double aug_zero_jaw_min = 0.0;
    double aug_zero_jaw_max = 0.6;
    double mix_permute = 0.25;
    double mix_perturb = 0.25;
    double mix_inject = 0.25;
    double mix_zero = 0.25;
    std::string template_library; // path; empty: synthesize from the model

    // architecture
    int image_size = 128;
    int encoder_base_channels = 8;
    int translator_base_channels = 64;
    int translator_res_blocks = 4;
    bool translator_skips = true;
    double raster_sigma = 1e-4;
    double raster_z_temp = 0.05;

    // run control
    std::uint64_t seed = 0;
    long checkpoint_every = 1000;

    EncoderConfig encoder_config() const
    {
        EncoderConfig c;
        c.base_channels = encoder_base_channels;
        return c;
    }
    TranslatorConfig translator_config() const
    {
        TranslatorConfig c;
        c.base_channels = translator_base_channels;
        c.res_blocks = translator_res_blocks;
        c.skips = translator_skips;
        return c;
    }
    RasterConfig raster_config() const
    {
        RasterConfig c;
        c.height = image_size;
        c.width = image_size;
        c.sigma = raster_sigma;
        c.z_temp = raster_z_temp;
        return c;
    }
    std::vector<double> augment_mix() const
    {
        return {mix_permute, mix_perturb, mix_inject, mix_zero};
    }

    /// Full-scale reference profile (the struct defaults).
    static TrainConfig paper_profile() { return TrainConfig{}; }

    /// Desk-scale profile: small enough to train on one CPU core. The edge
    /// softness is widened to about half a pixel so the geometry gradient is
    /// dense at this resolution.
    static TrainConfig desk_profile()
    {
        TrainConfig c;
        c.batch_size = 8;
        c.total_iterations = 2000;
        c.pretrain_iterations = 400;
        c.image_size = 128;
        c.encoder_base_channels = 8;
        c.translator_base_channels = 8;
        c.raster_sigma = 0.01;
        c.checkpoint_every = 1000;
        return c;
    }

    /// Tiny profile for unit tests.
    static TrainConfig tiny_profile()
    {
        TrainConfig c = desk_profile();
        c.batch_size = 2;
        c.total_iterations = 8;
        c.pretrain_iterations = 4;
        c.image_size = 32;
        c.encoder_base_channels = 4;
        c.translator_base_channels = 4;
        c.translator_res_blocks = 2;
        c.raster_sigma = 0.02;
        return c;
    }

    Json to_json() const;
    /// Parses a flat JSON document; unknown keys are a configuration error.
    static TrainConfig from_json(const Json& j);
    static TrainConfig load(const std::filesystem::path& path);
    void validate() const;
};

/// Machine-readable schema of the flat config document; fields that quote the
/// reference training setup carry "paper_default": true.
Json config_schema();

} // namespace facelab
