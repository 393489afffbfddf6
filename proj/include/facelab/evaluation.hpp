/*
 * facelab - analysis-by-neural-synthesis 3D face reconstruction.
 *
 * File: include/facelab/evaluation.hpp
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

#include "facelab/training.hpp"

#include <functional>
#include <numeric>

namespace facelab {

struct EvalReport
{
    double l1 = 0.0;
    double vgg = 0.0;
    double vert_l1 = 0.0;
    double vert_abs_std = 0.0;
    DistanceStats vertex_stats;
    std::string fingerprint;

    Json to_json() const
    {
        return Json{{"l1", l1},
                    {"vgg", vgg},
                    {"vert_l1", vert_l1},
                    {"vert_abs_std", vert_abs_std},
                    {"vertex_mean", vertex_stats.mean},
                    {"vertex_median", vertex_stats.median},
                    {"vertex_max", vertex_stats.max},
                    {"fingerprint", fingerprint}};
    }
};

namespace eval_detail {

template <typename S>
std::string session_fingerprint(TrainSession<S>& session, const Json& protocol)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const std::string cfg = session.config().to_json().dump();
    h = fnv1a64(cfg.data(), cfg.size(), h);
    const std::uint64_t sums[4] = {session.encoders().expr().checksum(),
                                   session.encoders().shape().checksum(),
                                   session.encoders().pose().checksum(),
                                   session.translator().checksum()};
    h = fnv1a64(sums, sizeof(sums), h);
    const std::string pj = protocol.dump();
    h = fnv1a64(pj.data(), pj.size(), h);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

/// Cached per-sample encoder outputs for translator-only training.
template <typename S>
struct FrozenSample
{
    Image s_geo;
    const Image* input;
    const Eigen::MatrixX2d* landmarks;
};

} // namespace eval_detail

struct FrozenProtocolResult
{
    double l1 = 0.0;
    double vgg = 0.0;
};

/**
 * Image-reconstruction probe of an encoder: a fresh translator is trained for
 * `epochs` passes over the train split (photometric + perceptual, translator
 * weights only, the encoder strictly frozen), then test-split L1 and
 * perceptual errors are reported. Better geometry makes the inpainting task
 * easier, so lower is better. `params_fn` substitutes another parameter
 * source for the session's encoder (e.g. ground truth, for calibration runs).
 */
template <typename S>
FrozenProtocolResult frozen_encoder_protocol(
    TrainSession<S>& session, const Dataset& ds, int epochs, std::uint64_t seed,
    const std::function<FaceParams(int)>& params_fn = nullptr)
{
    const TrainConfig& cfg = session.config();
    const RasterConfig rcfg = cfg.raster_config();
    Translator<S> fresh(cfg.translator_config(), seed);
    Adam<S> adam;
    Rng rng(seed);

    // encoder outputs are frozen; compute geometry renders once
    auto render_of = [&](int gidx) {
        const FaceParams p = params_fn ? params_fn(gidx) : session.encode_params(ds.image(gidx));
        return render_geometry(session.model(), p, rcfg).geometry;
    };
    std::map<int, Image> s_cache;
    auto s_of = [&](int gidx) -> const Image& {
        auto it = s_cache.find(gidx);
        if (it == s_cache.end())
            it = s_cache.emplace(gidx, render_of(gidx)).first;
        return it->second;
    };

    const int n_train = ds.split_size(Split::kTrain);
    const int bs = std::min(cfg.batch_size, std::max(1, n_train));
    for (int e = 0; e < epochs; ++e)
    {
        const auto order = rng.permutation(n_train);
        for (int start = 0; start < n_train; start += bs)
        {
            const int n = std::min(bs, n_train - start);
            Graph<S> g;
            std::vector<int> tin_items, target_items;
            for (int k = 0; k < n; ++k)
            {
                const int gidx = ds.split_index(Split::kTrain, order[static_cast<size_t>(start + k)]);
                const MaskedImage masked =
                    apply_mask(ds.image(gidx),
                               face_mask_from_landmarks(ds.landmarks(gidx), cfg.mask_dilation,
                                                        cfg.image_size, cfg.image_size),
                               cfg.mask_ratio, rng, nullptr);
                const int s_geo = g.add_input(TrainSession<S>::image_tensor(s_of(gidx)));
                tin_items.push_back(
                    ops::concat_ch(g, s_geo, g.add_input(TrainSession<S>::image_tensor(masked.image))));
                target_items.push_back(g.add_input(TrainSession<S>::image_tensor(ds.image(gidx))));
            }
            const int tin = ops::stack(g, tin_items);
            const int target = ops::stack(g, target_items);
            const int iprime = fresh.forward(g, tin);
            const int photo = ops::photometric(g, iprime, target);
            const int vgg = ops::perceptual(g, session.gamma(), iprime, target);
            const int total = ops::weighted_sum(g, std::vector<int>{photo, vgg},
                                                std::vector<S>{static_cast<S>(cfg.w_photo),
                                                               static_cast<S>(cfg.w_vgg)});
            fresh.zero_grad();
            g.backward(total, component_bit(Component::kTranslator));
            std::vector<Network<S>*> nets{&fresh};
            adam.step(nets, cfg.lr);
        }
    }

    // test-split evaluation
    FrozenProtocolResult out;
    const int n_test = ds.split_size(Split::kTest);
    int counted = 0;
    for (int i = 0; i < n_test; ++i)
    {
        const int gidx = ds.split_index(Split::kTest, i);
        const MaskedImage masked = apply_mask(
            ds.image(gidx),
            face_mask_from_landmarks(ds.landmarks(gidx), cfg.mask_dilation, cfg.image_size,
                                     cfg.image_size),
            cfg.mask_ratio, rng, nullptr);
        Graph<S> g;
        int s_geo = g.add_input(TrainSession<S>::image_tensor(s_of(gidx)));
        int tin = ops::concat_ch(g, s_geo, g.add_input(TrainSession<S>::image_tensor(masked.image)));
        Tensor<S>& t = g.value(tin);
        t.rank = 4;
        t.dims = {1, 4, cfg.image_size, cfg.image_size};
        const int iprime = fresh.forward(g, tin);
        const int target = g.add_input(TrainSession<S>::image_tensor(ds.image(gidx)));
        Tensor<S>& tt = g.value(target);
        tt.rank = 4;
        tt.dims = {1, 3, cfg.image_size, cfg.image_size};
        out.l1 += static_cast<double>(g.value(ops::photometric(g, iprime, target)).v[0]);
        out.vgg += static_cast<double>(g.value(ops::perceptual(g, session.gamma(), iprime, target)).v[0]);
        ++counted;
    }
    if (counted > 0)
    {
        out.l1 /= counted;
        out.vgg /= counted;
    }
    return out;
}

struct CycleEvalResult
{
    double vert_l1 = 0.0;
    double vert_abs_std = 0.0;
};

struct CycleEvalOptions
{
    int n_variants = 8;
    double expr_scale = 0.25; // times the per-coordinate training std
    double jaw_sigma = 0.05;
    double eyelid_sigma = 0.1;
    std::uint64_t seed = 99;
};

/**
 * Expression-recovery probe: apply N minor expression perturbations per test
 * image, synthesize each variant with the translator, re-encode, and compare
 * intended versus recovered vertices (pose held neutral, shape as predicted).
 * vert_l1 is the mean per-vertex recovery error; vert_abs_std measures how
 * much per-vertex variation across the N variants survives the round trip.
 */
template <typename S>
CycleEvalResult cycle_eval(TrainSession<S>& session, const Dataset& ds,
                           const CycleEvalOptions& opt = {})
{
    if (opt.n_variants < 2)
        throw ContractViolation("cycle_eval: need at least 2 variants");
    const TrainConfig& cfg = session.config();
    const MorphableModel& model = session.model();
    const RasterConfig rcfg = cfg.raster_config();
    Rng rng(opt.seed);
    const Eigen::VectorXd expr_sigma = ds.psi_std() * opt.expr_scale;
    const int d = model.spec.d_psi;
    const int nv = model.n_vertices();

    CycleEvalResult out;
    const int n_test = ds.split_size(Split::kTest);
    int counted = 0;
    for (int i = 0; i < n_test; ++i)
    {
        const int gidx = ds.split_index(Split::kTest, i);
        const FaceParams base = session.encode_params(ds.image(gidx));
        const MaskedImage masked = apply_mask(
            ds.image(gidx),
            face_mask_from_landmarks(ds.landmarks(gidx), cfg.mask_dilation, cfg.image_size,
                                     cfg.image_size),
            cfg.mask_ratio, rng, nullptr);

        Eigen::MatrixXd intended(opt.n_variants, 3 * nv), recovered(opt.n_variants, 3 * nv);
        double l1_acc = 0.0;
        for (int v = 0; v < opt.n_variants; ++v)
        {
            FaceParams np = base;
            for (int k = 0; k < d; ++k)
                np.psi_expr[k] += rng.normal(0.0, expr_sigma[k]);
            np.jaw[0] = std::max(0.0, np.jaw[0] + rng.normal(0.0, opt.jaw_sigma));
            for (int k = 0; k < 2; ++k)
                np.eyelids[k] = std::clamp(np.eyelids[k] + rng.normal(0.0, opt.eyelid_sigma), 0.0,
                                           1.0);
            const MaskedImage moved =
                transfer_pixels(masked, model, base, np, cfg.mask_dilation, nullptr);
            const RenderOutput ro = render_geometry(model, np, rcfg);
            const Image synth = session.translate(ro.geometry, moved);
            const FaceParams rec = session.encode_params(synth);

            FaceParams a = np, b = rec;
            a.pose.setZero();
            b.pose.setZero();
            b.beta = base.beta; // isolate the expression group
            a.beta = base.beta;
            const Eigen::MatrixX3d va = decode(model, a);
            const Eigen::MatrixX3d vb = decode(model, b);
            l1_acc += (va - vb).cwiseAbs().mean();
            for (int j = 0; j < nv; ++j)
                for (int c = 0; c < 3; ++c)
                {
                    intended(v, 3 * j + c) = va(j, c);
                    recovered(v, 3 * j + c) = vb(j, c);
                }
        }
        out.vert_l1 += l1_acc / opt.n_variants;
        double std_acc = 0.0;
        for (int col = 0; col < 3 * nv; ++col)
        {
            const double ma = intended.col(col).mean();
            const double mb = recovered.col(col).mean();
            const double sa = std::sqrt((intended.col(col).array() - ma).square().mean());
            const double sb = std::sqrt((recovered.col(col).array() - mb).square().mean());
            std_acc += std::abs(sa - sb);
        }
        out.vert_abs_std += std_acc / (3.0 * nv);
        ++counted;
    }
    if (counted > 0)
    {
        out.vert_l1 /= counted;
        out.vert_abs_std /= counted;
    }
    return out;
}

/// Per-item scan-to-mesh distances, aggregated over a batch of meshes.
struct VertexErrorItem
{
    Eigen::MatrixX3d predicted_verts;
    Eigen::Matrix<int, Eigen::Dynamic, 3> triangles;
    Eigen::MatrixX3d scan_points;
};

inline DistanceStats vertex_error(const std::vector<VertexErrorItem>& items)
{
    if (items.empty())
        throw ContractViolation("vertex_error: empty batch");
    DistanceStats agg;
    std::vector<double> medians;
    for (const auto& item : items)
    {
        const DistanceStats s = scan_to_mesh(item.scan_points, item.predicted_verts, item.triangles);
        agg.mean += s.mean;
        medians.push_back(s.median);
        agg.max = std::max(agg.max, s.max);
    }
    agg.mean /= static_cast<double>(items.size());
    std::sort(medians.begin(), medians.end());
    const size_t n = medians.size();
    agg.median = (n % 2 == 1) ? medians[n / 2] : 0.5 * (medians[n / 2 - 1] + medians[n / 2]);
    return agg;
}

// ---------------------------------------------------------------------------
// ablation harness
// ---------------------------------------------------------------------------

struct AblationVariant
{
    std::string name;
    std::function<void(TrainConfig&)> apply;
};

struct AblationFamily
{
    std::string name;
    std::vector<AblationVariant> variants;
};

/// The fixed ablation registry (exactly these six families).
inline const std::vector<AblationFamily>& ablation_registry()
{
    static const std::vector<AblationFamily> reg = [] {
        std::vector<AblationFamily> r;
        r.push_back({"masking-ratio",
                     {{"ratio-0.01", [](TrainConfig& c) { c.mask_ratio = 0.01; }},
                      {"ratio-0.05", [](TrainConfig& c) { c.mask_ratio = 0.05; }}}});
        r.push_back({"cycle",
                     {{"all-augments", [](TrainConfig&) {}},
                      {"no-cycle", [](TrainConfig& c) { c.cycle_enabled = false; }},
                      {"no-injection", [](TrainConfig& c) { c.mix_inject = 0.0; }},
                      {"no-permutation", [](TrainConfig& c) { c.mix_permute = 0.0; }},
                      {"no-zeroing", [](TrainConfig& c) { c.mix_zero = 0.0; }},
                      {"no-random", [](TrainConfig& c) { c.mix_perturb = 0.0; }}}});
        r.push_back({"translator-skip",
                     {{"skips", [](TrainConfig& c) { c.translator_skips = true; }},
                      {"no-skips", [](TrainConfig& c) { c.translator_skips = false; }}}});
        r.push_back({"landmark-protocol",
                     {{"P1-no-landmarks", [](TrainConfig& c) { c.w_lmk = 0.0; }},
                      {"P2-drop-landmarks",
                       [](TrainConfig& c) { c.lmk_drop_after_epoch = 2; }},
                      {"P3-full-landmarks", [](TrainConfig&) {}}}});
        r.push_back({"emotion-weight",
                     {{"emo-0", [](TrainConfig& c) { c.w_emo = 0.0; }},
                      {"emo-1", [](TrainConfig& c) { c.w_emo = 1.0; }},
                      {"emo-2", [](TrainConfig& c) { c.w_emo = 2.0; }},
                      {"emo-5", [](TrainConfig& c) { c.w_emo = 5.0; }},
                      {"emo-10", [](TrainConfig& c) { c.w_emo = 10.0; }}}});
        r.push_back({"pretraining",
                     {{"with-expression-pretrain",
                       [](TrainConfig& c) { c.pretrain_expression = true; }},
                      {"without-expression-pretrain",
                       [](TrainConfig& c) { c.pretrain_expression = false; }}}});
        return r;
    }();
    return reg;
}

/**
 * Trains every variant of one ablation family under the shared seed and
 * profile of `base`, evaluates each with the frozen-encoder protocol and the
 * cycle probe, and emits a side-by-side JSON report plus a markdown table.
 */
template <typename S>
Json run_ablation(const std::string& family_name, const TrainConfig& base, const Dataset& ds,
                  const std::filesystem::path& out_dir, int protocol_epochs = 3)
{
    const AblationFamily* family = nullptr;
    for (const auto& f : ablation_registry())
        if (f.name == family_name)
            family = &f;
    if (family == nullptr)
    {
        std::string names;
        for (const auto& f : ablation_registry())
            names += (names.empty() ? "" : ", ") + f.name;
        throw ConfigError("unknown ablation family '" + family_name + "' (known: " + names + ")");
    }

    std::filesystem::create_directories(out_dir);
    Json rows = Json::array();
    std::string md = "| variant | l1 | vgg | vert_l1 | vert_abs_std |\n|---|---|---|---|---|\n";
    for (const auto& variant : family->variants)
    {
        TrainConfig cfg = base;
        variant.apply(cfg);
        TrainSession<S> session(ds.model(), cfg);
        session.train(ds, out_dir / variant.name);
        const FrozenProtocolResult fp =
            frozen_encoder_protocol(session, ds, protocol_epochs, cfg.seed + 1);
        const CycleEvalResult ce = cycle_eval(session, ds);
        EvalReport rep;
        rep.l1 = fp.l1;
        rep.vgg = fp.vgg;
        rep.vert_l1 = ce.vert_l1;
        rep.vert_abs_std = ce.vert_abs_std;
        rep.fingerprint = eval_detail::session_fingerprint(session, Json{{"family", family_name}});
        Json row = rep.to_json();
        row["variant"] = variant.name;
        rows.push_back(row);
        char line[256];
        std::snprintf(line, sizeof(line), "| %s | %.5f | %.5f | %.6f | %.6f |\n",
                      variant.name.c_str(), rep.l1, rep.vgg, rep.vert_l1, rep.vert_abs_std);
        md += line;
    }
    Json report{{"family", family_name}, {"rows", rows}};
    write_json(out_dir / "report.json", report);
    std::ofstream mdf(out_dir / "report.md");
    mdf << "# Ablation: " << family_name << "\n\n" << md;
    return report;
}

} // namespace facelab
