/*
 * facelab - analysis-by-neural-synthesis 3D face reconstruction.
 *
 * File: tools/facelab_cli.cpp
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

#include <CLI11.hpp>

#include <bit>
#include <cstdlib>
#include <iostream>

namespace {

using namespace facelab;

std::filesystem::path resolve(const std::string& p)
{
    if (p.empty())
        return p;
    std::filesystem::path path(p);
    const char* cache = std::getenv("FACELAB_CACHE");
    if (cache != nullptr && path.is_relative())
        return std::filesystem::path(cache) / path;
    return path;
}

TrainConfig load_config(const std::string& config_path, std::uint64_t seed, bool desk_default)
{
    TrainConfig cfg = desk_default ? TrainConfig::desk_profile() : TrainConfig::paper_profile();
    if (!config_path.empty())
        cfg = TrainConfig::load(resolve(config_path));
    if (seed != ~std::uint64_t(0))
        cfg.seed = seed;
    return cfg;
}

ModelSpec model_spec_options(CLI::App* cmd, std::shared_ptr<ModelSpec> spec)
{
    cmd->add_option("--model-vertices", spec->n_vertices, "vertex count (perfect square)");
    cmd->add_option("--model-dbeta", spec->d_beta, "identity basis size");
    cmd->add_option("--model-dpsi", spec->d_psi, "expression basis size");
    cmd->add_option("--model-landmarks", spec->n_landmarks, "embedded landmark count");
    return *spec;
}

int cmd_generate_data(const std::string& out, std::uint64_t seed, int count, int image_size,
                      const ModelSpec& spec)
{
    MorphableModel model = build_synthetic_model(spec, seed);
    GenerateOptions opt;
    opt.count = count;
    opt.image_size = image_size;
    const auto manifest = generate_dataset(model, opt, seed, resolve(out));
    std::cout << "generated " << manifest.count << " samples (" << manifest.image_size << "x"
              << manifest.image_size << ") in " << resolve(out) << "\n";
    return 0;
}

int cmd_pretrain(const std::string& data, const std::string& out, const std::string& config,
                 std::uint64_t seed)
{
    Dataset ds = Dataset::load(resolve(data));
    TrainConfig cfg = load_config(config, seed, true);
    TrainSession<float> session(ds.model(), cfg);
    std::filesystem::create_directories(resolve(out));
    std::ofstream log(resolve(out) / "pretrain_log.ndjson", std::ios::app);
    session.pretrain(ds, &log);
    session.save_checkpoint(resolve(out) / "checkpoint");
    std::cout << "pretrained encoders; checkpoint at " << resolve(out) / "checkpoint" << "\n";
    return 0;
}

int cmd_train(const std::string& data, const std::string& out, const std::string& config,
              std::uint64_t seed, const std::string& init, bool exclude_render_interior)
{
    Dataset ds = Dataset::load(resolve(data));
    std::filesystem::path out_dir = resolve(out);
    if (!init.empty())
    {
        TrainSession<float> session = TrainSession<float>::load_checkpoint(resolve(init));
        const auto ck = session.train(ds, out_dir);
        std::cout << "trained to step " << session.step() << "; checkpoint at " << ck << "\n";
        return 0;
    }
    TrainConfig cfg = load_config(config, seed, true);
    if (exclude_render_interior)
        cfg.exclude_render_interior = true;
    TrainSession<float> session(ds.model(), cfg);
    const auto ck = session.train(ds, out_dir);
    std::cout << "trained to step " << session.step() << "; checkpoint at " << ck << "\n";
    return 0;
}

int cmd_eval_recon(const std::string& data, const std::string& checkpoint, const std::string& out,
                   int epochs, std::uint64_t seed)
{
    Dataset ds = Dataset::load(resolve(data));
    TrainSession<float> session = TrainSession<float>::load_checkpoint(resolve(checkpoint));
    const auto res = frozen_encoder_protocol(session, ds, epochs,
                                             seed == ~std::uint64_t(0) ? 1 : seed);
    EvalReport rep;
    rep.l1 = res.l1;
    rep.vgg = res.vgg;
    rep.fingerprint = eval_detail::session_fingerprint(
        session, Json{{"protocol", "frozen-encoder"}, {"epochs", epochs}});
    std::cout << rep.to_json().dump(2) << "\n";
    if (!out.empty())
        write_json(resolve(out), rep.to_json());
    return 0;
}

int cmd_eval_cycle(const std::string& data, const std::string& checkpoint, const std::string& out,
                   int variants)
{
    Dataset ds = Dataset::load(resolve(data));
    TrainSession<float> session = TrainSession<float>::load_checkpoint(resolve(checkpoint));
    CycleEvalOptions opt;
    opt.n_variants = variants;
    const auto res = cycle_eval(session, ds, opt);
    EvalReport rep;
    rep.vert_l1 = res.vert_l1;
    rep.vert_abs_std = res.vert_abs_std;
    rep.fingerprint = eval_detail::session_fingerprint(
        session, Json{{"protocol", "cycle-eval"}, {"variants", variants}});
    std::cout << rep.to_json().dump(2) << "\n";
    if (!out.empty())
        write_json(resolve(out), rep.to_json());
    return 0;
}

int cmd_eval_vertex(const std::string& data, const std::string& checkpoint, const std::string& out)
{
    Dataset ds = Dataset::load(resolve(data));
    TrainSession<float> session = TrainSession<float>::load_checkpoint(resolve(checkpoint));
    std::vector<VertexErrorItem> items;
    const int n_test = ds.split_size(Split::kTest);
    for (int i = 0; i < n_test; ++i)
    {
        const int g = ds.split_index(Split::kTest, i);
        const FaceParams pred = session.encode_params(ds.image(g));
        VertexErrorItem item;
        item.predicted_verts = decode(ds.model(), pred);
        item.triangles = ds.model().face_triangles;
        const Eigen::MatrixX3d gt = decode(ds.model(), ds.params(g));
        Eigen::MatrixX3d scan(ds.model().face_region_indices.size(), 3);
        for (size_t k = 0; k < ds.model().face_region_indices.size(); ++k)
            scan.row(static_cast<int>(k)) = gt.row(ds.model().face_region_indices[k]);
        item.scan_points = scan;
        items.push_back(std::move(item));
    }
    const DistanceStats stats = vertex_error(items);
    const Json j{{"vertex_mean", stats.mean}, {"vertex_median", stats.median},
                 {"vertex_max", stats.max},   {"items", n_test}};
    std::cout << j.dump(2) << "\n";
    if (!out.empty())
        write_json(resolve(out), j);
    return 0;
}

int cmd_ablate(const std::string& name, const std::string& data, const std::string& config,
               const std::string& out, std::uint64_t seed, int protocol_epochs)
{
    Dataset ds = Dataset::load(resolve(data));
    TrainConfig cfg = load_config(config, seed, true);
    const Json report = run_ablation<float>(name, cfg, ds, resolve(out), protocol_epochs);
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_fit_templates(const std::string& in_dir, const std::string& neutral,
                      const std::string& model_dir, const std::string& out, bool point_cloud)
{
    MorphableModel model = load_model(resolve(model_dir));
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(model.spec.d_beta);
    if (!neutral.empty())
        beta = FaceParams::from_json(read_json(resolve(neutral))).beta;
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(resolve(in_dir)))
        if (e.path().extension() == ".obj")
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty())
        throw ConfigError("fit-templates: no .obj files in " + in_dir);
    std::vector<FitTarget> targets;
    for (const auto& f : files)
    {
        FitTarget t;
        t.points = read_obj(f).first;
        t.is_point_cloud = point_cloud;
        targets.push_back(std::move(t));
    }
    const FitResult fit = fit_template(targets, model, beta);
    TemplateLibrary lib;
    for (size_t i = 0; i < fit.psi_full.size(); ++i)
    {
        TemplateEntry e;
        e.name = files[i].stem().string();
        e.provenance = "fitted";
        e.psi_full = fit.psi_full[i];
        lib.entries.push_back(std::move(e));
    }
    lib.save(resolve(out));
    std::cout << "fitted " << lib.size() << " templates; residuals:";
    for (double r : fit.residual)
        std::cout << " " << r;
    std::cout << "\n";
    return 0;
}

int cmd_reconstruct(const std::string& image_path, const std::string& checkpoint,
                    const std::string& out, bool dump_mask, const std::string& truth)
{
    TrainSession<float> session = TrainSession<float>::load_checkpoint(resolve(checkpoint));
    const TrainConfig& cfg = session.config();
    Image input = read_png(resolve(image_path));
    if (input.channels == 1)
    {
        Image rgb(3, input.height, input.width);
        for (int c = 0; c < 3; ++c)
            std::copy(input.v.begin(), input.v.end(), rgb.v.begin() + static_cast<long>(c) * input.height * input.width);
        input = rgb;
    }
    if (input.height != cfg.image_size || input.width != cfg.image_size)
        throw ConfigError("reconstruct: image must be " + std::to_string(cfg.image_size) + "x" +
                          std::to_string(cfg.image_size));
    const FaceParams params = session.encode_params(input);
    const RenderOutput render = render_geometry(session.model(), params, cfg.raster_config());
    // at inference the hull comes from the predicted landmarks
    const Eigen::MatrixX2d lmk = landmarks2d(session.model(), params);
    const auto mask = face_mask_from_landmarks(lmk, cfg.mask_dilation, cfg.image_size,
                                               cfg.image_size);
    Rng rng(session.config().seed ^ 0x7e57ULL);
    const MaskedImage masked = apply_mask(input, mask, cfg.mask_ratio, rng, nullptr);
    const Image iprime = session.translate(render.geometry, masked);

    const auto out_dir = resolve(out);
    std::filesystem::create_directories(out_dir);
    write_json(out_dir / "params.json", params.to_json());
    write_png(out_dir / "S.png", render.geometry);
    write_png(out_dir / "Iprime.png", iprime);
    const Eigen::MatrixX3d verts = decode(session.model(), params);
    write_obj(out_dir / "mesh.obj", verts, session.model().face_triangles);
    if (dump_mask)
        write_png(out_dir / "mask_overlay.png", masked_overlay(masked));
    Json summary{{"params", "params.json"}, {"geometry", "S.png"}, {"reconstruction", "Iprime.png"},
                 {"mesh", "mesh.obj"}};
    if (!truth.empty())
    {
        Json tj = read_json(resolve(truth));
        if (tj.contains("params")) // dataset sample files wrap the parameter object
            tj = tj.at("params");
        const FaceParams gt = FaceParams::from_json(tj);
        const Eigen::MatrixX3d gt_verts = decode(session.model(), gt);
        Eigen::MatrixX3d scan(session.model().face_region_indices.size(), 3);
        for (size_t k = 0; k < session.model().face_region_indices.size(); ++k)
            scan.row(static_cast<int>(k)) = gt_verts.row(session.model().face_region_indices[k]);
        const DistanceStats stats = scan_to_mesh(scan, verts, session.model().face_triangles);
        summary["scan_to_mesh"] = Json{{"mean", stats.mean}, {"median", stats.median},
                                       {"max", stats.max}};
        std::cout << "scan_to_mesh mean=" << stats.mean << " median=" << stats.median
                  << " max=" << stats.max << "\n";
    }
    write_json(out_dir / "summary.json", summary);
    std::cout << "reconstruction written to " << out_dir << "\n";
    return 0;
}

int cmd_model_info(const std::string& checkpoint, const std::string& model_dir, bool schema)
{
    if (schema)
    {
        std::cout << config_schema().dump(2) << "\n";
        return 0;
    }
    if (!checkpoint.empty())
    {
        TrainSession<float> session = TrainSession<float>::load_checkpoint(resolve(checkpoint));
        const long enc = session.encoders().expr().param_count() +
                         session.encoders().shape().param_count() +
                         session.encoders().pose().param_count();
        Json j{{"step", session.step()},
               {"encoder_params", enc},
               {"encoder_expr_params", session.encoders().expr().param_count()},
               {"encoder_shape_params", session.encoders().shape().param_count()},
               {"encoder_pose_params", session.encoders().pose().param_count()},
               {"translator_params", session.translator().param_count()},
               {"model_vertices", session.model().n_vertices()},
               {"model_fingerprint", session.model().fingerprint()},
               {"config", session.config().to_json()}};
        std::cout << j.dump(2) << "\n";
        return 0;
    }
    if (!model_dir.empty())
    {
        const MorphableModel m = load_model(resolve(model_dir));
        Json j{{"n_vertices", m.n_vertices()},
               {"n_triangles", m.triangles.rows()},
               {"n_face_triangles", m.face_triangles.rows()},
               {"d_beta", m.spec.d_beta},
               {"d_psi", m.spec.d_psi},
               {"n_landmarks", m.n_landmarks()},
               {"fingerprint", m.fingerprint()}};
        std::cout << j.dump(2) << "\n";
        return 0;
    }
    throw ConfigError("model-info: pass --checkpoint, --model or --schema");
}

} // namespace

int main(int argc, char** argv)
{
    static_assert(std::endian::native == std::endian::little,
                  "facelab file formats are little-endian");
    CLI::App app{"facelab: self-supervised 3D face reconstruction via neural synthesis"};
    app.require_subcommand(1);

    std::string config, out, data, checkpoint, init, image, truth, name, in_dir, neutral,
        model_dir;
    std::uint64_t seed = ~std::uint64_t(0);
    int count = 256, image_size = 128, epochs = 5, variants = 8, protocol_epochs = 3;
    bool dump_mask = false, point_cloud = false, schema = false;

    auto* gen = app.add_subcommand("generate-data", "generate a synthetic dataset with ground truth");
    gen->add_option("--out", out, "output directory")->required();
    gen->add_option("--seed", seed, "random seed");
    gen->add_option("--count", count, "number of samples");
    gen->add_option("--image-size", image_size, "image side length (multiple of 8)");
    auto gen_spec = std::make_shared<ModelSpec>();
    model_spec_options(gen, gen_spec);

    auto* pre = app.add_subcommand("pretrain", "pretrain the encoder branches");
    pre->add_option("--data", data, "dataset directory")->required();
    pre->add_option("--out", out, "output directory")->required();
    pre->add_option("--config", config, "flat JSON config file");
    pre->add_option("--seed", seed, "random seed override");

    auto* trn = app.add_subcommand("train", "run the alternating reconstruction/cycle training");
    trn->add_option("--data", data, "dataset directory")->required();
    trn->add_option("--out", out, "output directory")->required();
    trn->add_option("--config", config, "flat JSON config file");
    trn->add_option("--seed", seed, "random seed override");
    trn->add_option("--init", init, "checkpoint to resume from");
    bool exclude_render_interior = false;
    trn->add_flag("--exclude-render-interior", exclude_render_interior,
                  "keep retained pixels out of the rendered face interior");

    auto* evr = app.add_subcommand("eval-recon", "frozen-encoder image reconstruction protocol");
    evr->add_option("--data", data)->required();
    evr->add_option("--checkpoint", checkpoint)->required();
    evr->add_option("--epochs", epochs, "translator training epochs");
    evr->add_option("--seed", seed);
    evr->add_option("--out", out, "report JSON path");

    auto* evc = app.add_subcommand("eval-cycle", "expression-recovery cycle metrics");
    evc->add_option("--data", data)->required();
    evc->add_option("--checkpoint", checkpoint)->required();
    evc->add_option("--variants", variants, "expression variants per image");
    evc->add_option("--out", out, "report JSON path");

    auto* evv = app.add_subcommand("eval-vertex", "scan-to-mesh vertex error on the test split");
    evv->add_option("--data", data)->required();
    evv->add_option("--checkpoint", checkpoint)->required();
    evv->add_option("--out", out, "report JSON path");

    auto* abl = app.add_subcommand("ablate", "train and compare one ablation family");
    abl->add_option("--name", name, "family name")->required();
    abl->add_option("--data", data)->required();
    abl->add_option("--config", config, "base config file");
    abl->add_option("--seed", seed);
    abl->add_option("--out", out, "output directory")->required();
    abl->add_option("--protocol-epochs", protocol_epochs);

    auto* fit = app.add_subcommand("fit-templates", "fit expression templates to a mesh sequence");
    fit->add_option("--in", in_dir, "directory of OBJ frames")->required();
    fit->add_option("--neutral", neutral, "params JSON holding the neutral identity");
    fit->add_option("--model", model_dir, "model directory")->required();
    fit->add_option("--out", out, "library JSON path")->required();
    fit->add_flag("--point-cloud", point_cloud, "treat targets as point clouds");

    auto* rec = app.add_subcommand("reconstruct", "reconstruct one image with a trained checkpoint");
    rec->add_option("--image", image, "input PNG")->required();
    rec->add_option("--checkpoint", checkpoint)->required();
    rec->add_option("--out", out, "output directory")->required();
    rec->add_flag("--dump-mask", dump_mask, "write the mask/retained-pixel overlay");
    rec->add_option("--truth", truth, "ground-truth params JSON for a scan-to-mesh check");

    auto* nfo = app.add_subcommand("model-info", "inspect a checkpoint, model, or the config schema");
    nfo->add_option("--checkpoint", checkpoint);
    nfo->add_option("--model", model_dir);
    nfo->add_flag("--schema", schema, "print the config schema");

    try
    {
        app.parse(argc, argv);
        if (gen->parsed())
            return cmd_generate_data(out, seed == ~std::uint64_t(0) ? 0 : seed, count, image_size,
                                     *gen_spec);
        if (pre->parsed())
            return cmd_pretrain(data, out, config, seed);
        if (trn->parsed())
            return cmd_train(data, out, config, seed, init, exclude_render_interior);
        if (evr->parsed())
            return cmd_eval_recon(data, checkpoint, out, epochs, seed);
        if (evc->parsed())
            return cmd_eval_cycle(data, checkpoint, out, variants);
        if (evv->parsed())
            return cmd_eval_vertex(data, checkpoint, out);
        if (abl->parsed())
            return cmd_ablate(name, data, config, out, seed, protocol_epochs);
        if (fit->parsed())
            return cmd_fit_templates(in_dir, neutral, model_dir, out, point_cloud);
        if (rec->parsed())
            return cmd_reconstruct(image, checkpoint, out, dump_mask, truth);
        if (nfo->parsed())
            return cmd_model_info(checkpoint, model_dir, schema);
        return 2;
    }
    catch (const CLI::CallForHelp& e)
    {
        return app.exit(e);
    }
    catch (const CLI::ParseError& e)
    {
        app.exit(e);
        return 2;
    }
    catch (const facelab::ConfigError& e)
    {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    }
    catch (const std::exception& e)
    {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
