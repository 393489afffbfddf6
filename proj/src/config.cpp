/*
 * facelab - analysis-by-neural-synthesis 3D face reconstruction.
 *
 * File: src/config.cpp
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
#include "facelab/config.hpp"

#include <functional>

namespace facelab {

namespace {

enum class FieldType
{
    kDouble,
    kLong,
    kInt,
    kBool,
    kString,
    kUint64,
};

struct FieldDesc
{
    const char* name;
    FieldType type;
    bool paper_default;
    std::function<Json(const TrainConfig&)> get;
    std::function<void(TrainConfig&, const Json&)> set;
};

#define F_DOUBLE(field, paper)                                                                     \
    FieldDesc{#field, FieldType::kDouble, paper,                                                   \
              [](const TrainConfig& c) { return Json(c.field); },                                  \
              [](TrainConfig& c, const Json& v) { c.field = v.get<double>(); }}
#define F_LONG(field, paper)                                                                       \
    FieldDesc{#field, FieldType::kLong, paper, [](const TrainConfig& c) { return Json(c.field); }, \
              [](TrainConfig& c, const Json& v) { c.field = v.get<long>(); }}
#define F_INT(field, paper)                                                                        \
    FieldDesc{#field, FieldType::kInt, paper, [](const TrainConfig& c) { return Json(c.field); },  \
              [](TrainConfig& c, const Json& v) { c.field = v.get<int>(); }}
#define F_BOOL(field, paper)                                                                       \
    FieldDesc{#field, FieldType::kBool, paper, [](const TrainConfig& c) { return Json(c.field); }, \
              [](TrainConfig& c, const Json& v) { c.field = v.get<bool>(); }}
#define F_STRING(field, paper)                                                                     \
    FieldDesc{#field, FieldType::kString, paper,                                                   \
              [](const TrainConfig& c) { return Json(c.field); },                                  \
              [](TrainConfig& c, const Json& v) { c.field = v.get<std::string>(); }}
#define F_UINT64(field, paper)                                                                     \
    FieldDesc{#field, FieldType::kUint64, paper,                                                   \
              [](const TrainConfig& c) { return Json(c.field); },                                  \
              [](TrainConfig& c, const Json& v) { c.field = v.get<std::uint64_t>(); }}

const std::vector<FieldDesc>& fields()
{
    static const std::vector<FieldDesc> f = {
        F_DOUBLE(w_photo, true),
        F_DOUBLE(w_vgg, true),
        F_DOUBLE(w_lmk, true),
        F_DOUBLE(w_reg, true),
        F_DOUBLE(w_emo, true),
        F_DOUBLE(w_cycle, true),
        F_BOOL(reg_include_jaw_eyelids, false),
        F_INT(batch_size, true),
        F_LONG(total_iterations, true),
        F_DOUBLE(lr, true),
        F_DOUBLE(lr_min_frac, false),
        F_LONG(pretrain_iterations, true),
        F_DOUBLE(pretrain_lr, true),
        F_BOOL(pretrain_expression, false),
        F_LONG(lmk_drop_after_epoch, false),
        F_BOOL(cycle_enabled, false),
        F_BOOL(shared_batch, false),
        F_DOUBLE(mask_ratio, true),
        F_INT(mask_dilation, false),
        F_BOOL(exclude_render_interior, false),
        F_DOUBLE(aug_noise_scale, false),
        F_DOUBLE(aug_jaw_min, false),
        F_DOUBLE(aug_jaw_max, false),
        F_DOUBLE(aug_eyelid_min, false),
        F_DOUBLE(aug_eyelid_max, false),
        F_DOUBLE(aug_zero_jaw_min, false),
        F_DOUBLE(aug_zero_jaw_max, false),
        F_DOUBLE(mix_permute, true),
        F_DOUBLE(mix_perturb, true),
        F_DOUBLE(mix_inject, true),
        F_DOUBLE(mix_zero, true),
        F_STRING(template_library, false),
        F_INT(image_size, false),
        F_INT(encoder_base_channels, false),
        F_INT(translator_base_channels, false),
        F_INT(translator_res_blocks, false),
        F_BOOL(translator_skips, false),
        F_DOUBLE(raster_sigma, false),
        F_DOUBLE(raster_z_temp, false),
        F_UINT64(seed, false),
        F_LONG(checkpoint_every, false),
    };
    return f;
}

const char* type_name(FieldType t)
{
    switch (t)
    {
    case FieldType::kDouble: return "number";
    case FieldType::kLong:
    case FieldType::kInt:
    case FieldType::kUint64: return "integer";
    case FieldType::kBool: return "boolean";
    case FieldType::kString: return "string";
    }
    return "?";
}

} // namespace

Json TrainConfig::to_json() const
{
    Json j = Json::object();
    for (const auto& f : fields())
        j[f.name] = f.get(*this);
    return j;
}

TrainConfig TrainConfig::from_json(const Json& j)
{
    TrainConfig c;
    if (!j.is_object())
        throw ConfigError("config: expected a JSON object");
    for (const auto& [key, value] : j.items())
    {
        bool known = false;
        for (const auto& f : fields())
            if (key == f.name)
            {
                try
                {
                    f.set(c, value);
                }
                catch (const std::exception& e)
                {
                    throw ConfigError("config: bad value for '" + key + "': " + e.what());
                }
                known = true;
                break;
            }
        if (!known)
            throw ConfigError("config: unknown key '" + key + "'");
    }
    c.validate();
    return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path)
{
    return from_json(read_json(path));
}

void TrainConfig::validate() const
{
    if (mask_ratio < 0.0 || mask_ratio > 1.0)
        throw ConfigError("config: mask_ratio must be in [0,1]");
    if (batch_size < 1 || total_iterations < 0 || pretrain_iterations < 0)
        throw ConfigError("config: nonpositive sizes");
    if (lr <= 0.0 || pretrain_lr <= 0.0)
        throw ConfigError("config: learning rates must be positive");
    if (image_size < 16 || image_size % 8 != 0)
        throw ConfigError("config: image_size must be a multiple of 8 and at least 16");
    if (translator_base_channels < 1 || encoder_base_channels < 1 || translator_res_blocks < 0)
        throw ConfigError("config: invalid architecture sizes");
    if (raster_sigma <= 0.0 || raster_z_temp <= 0.0)
        throw ConfigError("config: raster temperatures must be positive");
    const double mix = mix_permute + mix_perturb + mix_inject + mix_zero;
    if (mix_permute < 0 || mix_perturb < 0 || mix_inject < 0 || mix_zero < 0 || mix <= 0)
        throw ConfigError("config: augmentation mixture must be nonnegative and nonzero");
    if (aug_zero_jaw_min > aug_jaw_min || aug_zero_jaw_max < aug_jaw_max)
        throw ConfigError("config: zero-mode jaw range must contain the jaw range");
    if (w_photo < 0 || w_vgg < 0 || w_lmk < 0 || w_reg < 0 || w_emo < 0 || w_cycle < 0)
        throw ConfigError("config: loss weights must be nonnegative");
}

Json config_schema()
{
    const TrainConfig defaults;
    Json arr = Json::array();
    for (const auto& f : fields())
    {
        Json entry{{"name", f.name}, {"type", type_name(f.type)}, {"default", f.get(defaults)}};
        if (f.paper_default)
            entry["paper_default"] = true;
        arr.push_back(entry);
    }
    return Json{{"format", "facelab-config-schema"}, {"version", 1}, {"fields", arr}};
}

} // namespace facelab
