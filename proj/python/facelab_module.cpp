/*
 * facelab - analysis-by-neural-synthesis 3D face reconstruction.
 *
 * File: python/facelab_module.cpp
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
#include "facelab/evaluation.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace facelab;

namespace {

py::array_t<float> image_to_numpy(const Image& img)
{
    py::array_t<float> out({img.channels, img.height, img.width});
    std::copy(img.v.begin(), img.v.end(), out.mutable_data());
    return out;
}

Image numpy_to_image(const py::array_t<float, py::array::c_style | py::array::forcecast>& arr)
{
    if (arr.ndim() != 3)
        throw ContractViolation("image arrays must have shape (channels, height, width)");
    Image img(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)),
              static_cast<int>(arr.shape(2)));
    std::copy(arr.data(), arr.data() + arr.size(), img.v.begin());
    return img;
}

py::array_t<std::uint8_t> mask_to_numpy(const std::vector<std::uint8_t>& mask, int h, int w)
{
    py::array_t<std::uint8_t> out({h, w});
    std::copy(mask.begin(), mask.end(), out.mutable_data());
    return out;
}

std::vector<std::uint8_t> numpy_to_mask(
    const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& arr)
{
    return std::vector<std::uint8_t>(arr.data(), arr.data() + arr.size());
}

} // namespace

PYBIND11_MODULE(_facelab, m)
{
    m.doc() = "Self-supervised 3D face reconstruction with a neural rendering module";

    py::register_exception<ConfigError>(m, "FacelabConfigError");
    py::register_exception<ContractViolation>(m, "FacelabContractViolation");

    py::class_<ModelSpec>(m, "ModelSpec")
        .def(py::init<>())
        .def_readwrite("n_vertices", &ModelSpec::n_vertices)
        .def_readwrite("d_beta", &ModelSpec::d_beta)
        .def_readwrite("d_psi", &ModelSpec::d_psi)
        .def_readwrite("n_landmarks", &ModelSpec::n_landmarks)
        .def_readwrite("smooth_cells", &ModelSpec::smooth_cells);

    py::class_<FaceParams>(m, "FaceParams")
        .def(py::init(&FaceParams::zero), py::arg("d_beta"), py::arg("d_psi"))
        .def_readwrite("beta", &FaceParams::beta)
        .def_readwrite("psi_expr", &FaceParams::psi_expr)
        .def_readwrite("eyelids", &FaceParams::eyelids)
        .def_readwrite("jaw", &FaceParams::jaw)
        .def_readwrite("pose", &FaceParams::pose)
        .def_readwrite("cam_scale", &FaceParams::cam_scale)
        .def_readwrite("cam_tx", &FaceParams::cam_tx)
        .def_readwrite("cam_ty", &FaceParams::cam_ty)
        .def("psi_full", &FaceParams::psi_full)
        .def("set_psi_full", &FaceParams::set_psi_full)
        .def("to_json", [](const FaceParams& p) { return p.to_json().dump(); })
        .def_static("from_json",
                    [](const std::string& s) { return FaceParams::from_json(Json::parse(s)); });

    py::class_<MorphableModel>(m, "MorphableModel")
        .def_property_readonly("n_vertices", &MorphableModel::n_vertices)
        .def_property_readonly("n_landmarks", &MorphableModel::n_landmarks)
        .def_readonly("template_verts", &MorphableModel::template_verts)
        .def_readonly("triangles", &MorphableModel::triangles)
        .def_readonly("face_triangles", &MorphableModel::face_triangles)
        .def_readonly("landmark_indices", &MorphableModel::landmark_indices)
        .def_readonly("face_region_indices", &MorphableModel::face_region_indices)
        .def_readonly("jaw_weights", &MorphableModel::jaw_weights)
        .def("fingerprint", &MorphableModel::fingerprint)
        .def("d_beta", [](const MorphableModel& mm) { return mm.spec.d_beta; })
        .def("d_psi", [](const MorphableModel& mm) { return mm.spec.d_psi; });

    m.def("build_synthetic_model", &build_synthetic_model, py::arg("spec"), py::arg("seed"));
    m.def("save_model", &save_model, py::arg("model"), py::arg("directory"));
    m.def("load_model", &load_model, py::arg("directory"));
    m.def("decode", &decode, py::arg("model"), py::arg("params"));
    m.def(
        "project",
        [](const Eigen::MatrixX3d& verts, double scale, double tx, double ty) {
            const Projected p = project(verts, scale, tx, ty);
            return py::make_tuple(p.xy, p.z);
        },
        py::arg("verts"), py::arg("scale"), py::arg("tx"), py::arg("ty"));
    m.def("landmarks2d", &landmarks2d, py::arg("model"), py::arg("params"));
    m.def(
        "scan_to_mesh",
        [](const Eigen::MatrixX3d& points, const Eigen::MatrixX3d& verts,
           const Eigen::Matrix<int, Eigen::Dynamic, 3>& tris) {
            const DistanceStats s = scan_to_mesh(points, verts, tris);
            return py::make_tuple(s.mean, s.median, s.max);
        },
        py::arg("points"), py::arg("verts"), py::arg("triangles"));

    py::class_<RasterConfig>(m, "RasterConfig")
        .def(py::init<>())
        .def_readwrite("height", &RasterConfig::height)
        .def_readwrite("width", &RasterConfig::width)
        .def_readwrite("sigma", &RasterConfig::sigma)
        .def_readwrite("z_temp", &RasterConfig::z_temp);

    m.def(
        "render_geometry",
        [](const MorphableModel& model, const FaceParams& params, const RasterConfig& cfg) {
            const RenderOutput r = render_geometry(model, params, cfg);
            py::dict d;
            d["geometry"] = image_to_numpy(r.geometry);
            d["soft_coverage"] = image_to_numpy(r.soft_coverage);
            d["face_mask"] = mask_to_numpy(r.face_mask, r.height, r.width);
            return d;
        },
        py::arg("model"), py::arg("params"), py::arg("config"));

    m.def(
        "face_mask_from_landmarks",
        [](const Eigen::MatrixX2d& lmk, int dilation, int height, int width) {
            return mask_to_numpy(face_mask_from_landmarks(lmk, dilation, height, width), height,
                                 width);
        },
        py::arg("landmarks"), py::arg("dilation_radius"), py::arg("height"), py::arg("width"));

    py::class_<MaskedImage>(m, "MaskedImage")
        .def_property_readonly("image", [](const MaskedImage& mi) { return image_to_numpy(mi.image); })
        .def_property_readonly(
            "mask", [](const MaskedImage& mi) { return mask_to_numpy(mi.mask, mi.height, mi.width); })
        .def_property_readonly("retained", [](const MaskedImage& mi) {
            py::list out;
            for (const auto& r : mi.retained)
                out.append(py::make_tuple(r.x, r.y,
                                          py::make_tuple(r.rgb[0], r.rgb[1], r.rgb[2])));
            return out;
        });

    m.def(
        "apply_mask",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& image,
           const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& mask,
           double ratio, std::uint64_t seed) {
            Rng rng(seed);
            return apply_mask(numpy_to_image(image), numpy_to_mask(mask), ratio, rng, nullptr);
        },
        py::arg("image"), py::arg("mask"), py::arg("ratio"), py::arg("seed"));

    m.def(
        "transfer_pixels",
        [](const MaskedImage& masked, const MorphableModel& model, const FaceParams& old_params,
           const FaceParams& new_params, int dilation) {
            TransferStats st;
            MaskedImage out = transfer_pixels(masked, model, old_params, new_params, dilation, &st);
            py::dict stats;
            stats["moved"] = st.moved;
            stats["dropped_out_of_bounds"] = st.dropped_out_of_bounds;
            stats["dropped_masked_out"] = st.dropped_masked_out;
            stats["collisions"] = st.collisions;
            stats["without_vertex"] = st.without_vertex;
            return py::make_tuple(out, stats);
        },
        py::arg("masked"), py::arg("model"), py::arg("params_old"), py::arg("params_new"),
        py::arg("dilation_radius"));

    py::class_<TemplateLibrary>(m, "TemplateLibrary")
        .def("__len__", [](const TemplateLibrary& l) { return l.size(); })
        .def("names", [](const TemplateLibrary& l) {
            std::vector<std::string> out;
            for (const auto& e : l.entries)
                out.push_back(e.name);
            return out;
        })
        .def("psi_full", [](const TemplateLibrary& l, int i) {
            return l.entries.at(static_cast<size_t>(i)).psi_full;
        })
        .def("save", &TemplateLibrary::save)
        .def_static("load", &TemplateLibrary::load);

    m.def(
        "build_extreme_library",
        [](const MorphableModel& model, int per_class, double mean_data_norm, std::uint64_t seed) {
            LibrarySpec spec;
            spec.per_class = per_class;
            spec.mean_data_norm = mean_data_norm;
            Rng rng(seed);
            return build_extreme_library(model, spec, rng);
        },
        py::arg("model"), py::arg("per_class") = 1, py::arg("mean_data_norm") = -1.0,
        py::arg("seed") = 0);

    m.def(
        "augment_expressions",
        [](const std::vector<Eigen::VectorXd>& psi, const std::string& mode, double noise_scale,
           const TemplateLibrary* library, std::uint64_t seed) {
            AugmentPlan plan;
            if (mode == "permute")
                plan.mode = AugmentMode::kPermute;
            else if (mode == "perturb")
                plan.mode = AugmentMode::kPerturb;
            else if (mode == "inject")
                plan.mode = AugmentMode::kInject;
            else if (mode == "zero")
                plan.mode = AugmentMode::kZero;
            else
                throw ConfigError("unknown augmentation mode: " + mode);
            plan.noise_scale = noise_scale;
            Rng rng(seed);
            return augment_expressions(psi, plan, library, rng);
        },
        py::arg("psi"), py::arg("mode"), py::arg("noise_scale") = 0.5,
        py::arg("library") = nullptr, py::arg("seed") = 0);

    m.def(
        "fit_template",
        [](const Eigen::MatrixX3d& target, const MorphableModel& model,
           const Eigen::VectorXd& neutral_beta, bool point_cloud) {
            FitTarget t;
            t.points = target;
            t.is_point_cloud = point_cloud;
            const FitResult r = fit_template({t}, model, neutral_beta);
            return py::make_tuple(r.psi_full[0], r.pose[0], r.residual[0], r.iterations[0]);
        },
        py::arg("target"), py::arg("model"), py::arg("neutral_beta"),
        py::arg("point_cloud") = false);

    m.def(
        "generate_dataset",
        [](const MorphableModel& model, int count, int image_size, std::uint64_t seed,
           const std::filesystem::path& out_dir) {
            GenerateOptions opt;
            opt.count = count;
            opt.image_size = image_size;
            return generate_dataset(model, opt, seed, out_dir).to_json().dump();
        },
        py::arg("model"), py::arg("count"), py::arg("image_size"), py::arg("seed"),
        py::arg("out_dir"));

    py::class_<Dataset>(m, "Dataset")
        .def_static("load", &Dataset::load)
        .def("model", &Dataset::model, py::return_value_policy::reference_internal)
        .def("split_size", [](const Dataset& ds, const std::string& split) {
            return ds.split_size(split_from_name(split));
        })
        .def("image",
             [](const Dataset& ds, const std::string& split, int i) {
                 return image_to_numpy(ds.image(ds.split_index(split_from_name(split), i)));
             })
        .def("params",
             [](const Dataset& ds, const std::string& split, int i) {
                 return ds.params(ds.split_index(split_from_name(split), i));
             })
        .def("landmarks", [](const Dataset& ds, const std::string& split, int i) {
            return ds.landmarks(ds.split_index(split_from_name(split), i));
        });

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_static("paper_profile", &TrainConfig::paper_profile)
        .def_static("desk_profile", &TrainConfig::desk_profile)
        .def_static("tiny_profile", &TrainConfig::tiny_profile)
        .def_static("from_json", [](const std::string& s) {
            return TrainConfig::from_json(Json::parse(s));
        })
        .def("to_json", [](const TrainConfig& c) { return c.to_json().dump(); })
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("total_iterations", &TrainConfig::total_iterations)
        .def_readwrite("pretrain_iterations", &TrainConfig::pretrain_iterations)
        .def_readwrite("pretrain_expression", &TrainConfig::pretrain_expression)
        .def_readwrite("image_size", &TrainConfig::image_size)
        .def_readwrite("cycle_enabled", &TrainConfig::cycle_enabled)
        .def_readwrite("mask_ratio", &TrainConfig::mask_ratio)
        .def_readwrite("w_lmk", &TrainConfig::w_lmk)
        .def_readwrite("w_emo", &TrainConfig::w_emo);

    m.def("config_schema", []() { return config_schema().dump(); });

    py::class_<TrainSession<float>>(m, "TrainSession")
        .def(py::init<MorphableModel, const TrainConfig&>(), py::arg("model"), py::arg("config"))
        .def_static("load_checkpoint", &TrainSession<float>::load_checkpoint)
        .def("pretrain",
             [](TrainSession<float>& s, const Dataset& ds) { s.pretrain(ds, nullptr); })
        .def("train", &TrainSession<float>::train, py::arg("dataset"), py::arg("out_dir"))
        .def("save_checkpoint", &TrainSession<float>::save_checkpoint)
        .def("step", &TrainSession<float>::step)
        .def("encode_params",
             [](TrainSession<float>& s,
                const py::array_t<float, py::array::c_style | py::array::forcecast>& img) {
                 return s.encode_params(numpy_to_image(img));
             })
        .def("reconstruct",
             [](TrainSession<float>& s,
                const py::array_t<float, py::array::c_style | py::array::forcecast>& img,
                std::uint64_t seed) {
                 const Image input = numpy_to_image(img);
                 const FaceParams params = s.encode_params(input);
                 const RenderOutput render =
                     render_geometry(s.model(), params, s.config().raster_config());
                 const Eigen::MatrixX2d lmk = landmarks2d(s.model(), params);
                 const auto mask =
                     face_mask_from_landmarks(lmk, s.config().mask_dilation,
                                              s.config().image_size, s.config().image_size);
                 Rng rng(seed);
                 const MaskedImage masked =
                     apply_mask(input, mask, s.config().mask_ratio, rng, nullptr);
                 const Image iprime = s.translate(render.geometry, masked);
                 py::dict out;
                 out["params"] = params;
                 out["geometry"] = image_to_numpy(render.geometry);
                 out["reconstruction"] = image_to_numpy(iprime);
                 return out;
             },
             py::arg("image"), py::arg("seed") = 0);

    m.def(
        "frozen_encoder_protocol",
        [](TrainSession<float>& s, const Dataset& ds, int epochs, std::uint64_t seed) {
            const auto r = frozen_encoder_protocol(s, ds, epochs, seed);
            return py::make_tuple(r.l1, r.vgg);
        },
        py::arg("session"), py::arg("dataset"), py::arg("epochs") = 5, py::arg("seed") = 1);

    m.def(
        "cycle_eval",
        [](TrainSession<float>& s, const Dataset& ds, int n_variants) {
            CycleEvalOptions opt;
            opt.n_variants = n_variants;
            const auto r = cycle_eval(s, ds, opt);
            return py::make_tuple(r.vert_l1, r.vert_abs_std);
        },
        py::arg("session"), py::arg("dataset"), py::arg("n_variants") = 8);

    m.def("read_png", [](const std::filesystem::path& p) { return image_to_numpy(read_png(p)); });
    m.def("write_png",
          [](const std::filesystem::path& p,
             const py::array_t<float, py::array::c_style | py::array::forcecast>& img) {
              write_png(p, numpy_to_image(img));
          });
}
