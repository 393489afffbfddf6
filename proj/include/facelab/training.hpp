/*
 * facelab - analysis-by-neural-synthesis 3D face reconstruction.
 *
 * File: include/facelab/training.hpp
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

#include "facelab/augmentation.hpp"
#include "facelab/config.hpp"
#include "facelab/data.hpp"
#include "facelab/losses.hpp"
#include "facelab/masking.hpp"
#include "facelab/networks.hpp"
#include "facelab/raster.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <optional>

namespace facelab {

/**
 * One training run: the three encoder branches, the translator, the fixed
 * feature pyramids, optimizer state and the deterministic RNG stream. Both
 * passes are assembled on a fresh tape per step; gradient routing and
 * freezing are expressed through component masks and per-network frozen
 * flags.
 */
template <typename S>
class TrainSession
{
public:
    TrainSession(MorphableModel model, const TrainConfig& cfg)
        : model_(std::move(model)), cfg_(cfg),
          encoders_(cfg.encoder_config(), model_.spec.d_psi, model_.spec.d_beta,
                    default_cam_priors(cfg.image_size), cfg.seed),
          translator_(cfg.translator_config(), cfg.seed),
          gamma_("gamma", FeatureExtractor<S>::Kind::kPerceptual, cfg.seed ^ 0x5f5f5f5fULL),
          emo_proxy_("emo", FeatureExtractor<S>::Kind::kDescriptor, cfg.seed ^ 0x12121212ULL),
          rng_(cfg.seed)
    {
    }

    const MorphableModel& model() const { return model_; }
    const TrainConfig& config() const { return cfg_; }
    EncoderSet<S>& encoders() { return encoders_; }
    Translator<S>& translator() { return translator_; }
    FeatureExtractor<S>& gamma() { return gamma_; }
    FeatureExtractor<S>& emo_proxy() { return emo_proxy_; }
    Rng& rng() { return rng_; }
    long step() const { return step_; }
    int cycle_subparity() const { return cycle_subparity_; }
    bool pretrain_done() const { return pretrain_done_; }
    const TemplateLibrary& library() const { return library_; }

    void set_library(TemplateLibrary lib) { library_ = std::move(lib); }

    // -- forward-only helpers ------------------------------------------------

    static Tensor<S> image_tensor(const Image& img)
    {
        Tensor<S> t = Tensor<S>::zeros({img.channels, img.height, img.width});
        for (size_t i = 0; i < img.v.size(); ++i)
            t.v[i] = static_cast<S>(img.v[i]);
        return t;
    }

    static Tensor<S> batch_tensor(const std::vector<const Image*>& images)
    {
        const Image& first = *images.front();
        Tensor<S> t = Tensor<S>::zeros(
            {static_cast<int>(images.size()), first.channels, first.height, first.width});
        const size_t per = first.v.size();
        for (size_t i = 0; i < images.size(); ++i)
            for (size_t j = 0; j < per; ++j)
                t.v[i * per + j] = static_cast<S>(images[i]->v[j]);
        return t;
    }

    static Image tensor_image(const Tensor<S>& t, int batch_index = 0)
    {
        const int c = t.rank == 4 ? t.dims[1] : t.dims[0];
        const int h = t.dims[t.rank - 2], w = t.dims[t.rank - 1];
        Image img(c, h, w);
        const size_t off = t.rank == 4 ? static_cast<size_t>(batch_index) * c * h * w : 0;
        for (size_t i = 0; i < img.v.size(); ++i)
            img.v[i] = static_cast<float>(t.v[off + i]);
        return img;
    }

    /// Deterministic single-image parameter regression (no gradients kept).
    FaceParams encode_params(const Image& image)
    {
        Graph<S> g;
        const int img = g.add_input(image_tensor(image));
        Tensor<S>& t = g.value(img);
        t.rank = 4;
        t.dims = {1, image.channels, image.height, image.width};
        const EncodedBatch enc = encoders_.encode(g, img);
        return encoders_.params_row(g, enc, 0, model_.spec.d_beta, model_.spec.d_psi);
    }

    /// Single-sample neural render: I' = T(S ++ masked).
    Image translate(const Image& s_geo, const MaskedImage& masked)
    {
        Graph<S> g;
        int s = g.add_input(image_tensor(s_geo));
        int m = g.add_input(image_tensor(masked.image));
        int tin = ops::concat_ch(g, s, m);
        Tensor<S>& t = g.value(tin);
        t.rank = 4;
        t.dims = {1, 4, s_geo.height, s_geo.width};
        const int out = translator_.forward(g, tin);
        return tensor_image(g.value(out), 0);
    }

    /// Convex-hull mask of a sample's ground-truth landmarks (cached).
    const std::vector<std::uint8_t>& hull_mask(const Dataset& ds, int global_index)
    {
        auto it = mask_cache_.find(global_index);
        if (it != mask_cache_.end())
            return it->second;
        auto mask = face_mask_from_landmarks(ds.landmarks(global_index), cfg_.mask_dilation,
                                             cfg_.image_size, cfg_.image_size);
        return mask_cache_.emplace(global_index, std::move(mask)).first->second;
    }

    // -- pretraining ---------------------------------------------------------

    /**
     * Joint supervised warm-up of the branches on landmark loss plus a shape
     * regression to the reference identity coefficients; afterwards the shape
     * and pose branches are frozen for good.
     */
    void pretrain(const Dataset& ds, std::ostream* log = nullptr)
    {
        const int n_train = ds.split_size(Split::kTrain);
        for (long it = 0; it < cfg_.pretrain_iterations; ++it)
        {
            const auto idx = rng_.sample_without_replacement(
                n_train, std::min<int>(cfg_.batch_size, n_train));
            const Batch b = load_batch(ds, Split::kTrain, idx);
            const LossReport r = pretrain_step(b, it);
            if (!r.finite())
                throw TrainingAbort("pretrain: non-finite loss at iteration " +
                                    std::to_string(it));
            if (log != nullptr)
                (*log) << r.to_json().dump() << "\n";
        }
        finish_pretrain();
    }

    void finish_pretrain()
    {
        encoders_.shape().set_frozen(true);
        encoders_.pose().set_frozen(true);
        pretrain_done_ = true;
    }

    LossReport pretrain_step(const Batch& batch, long it)
    {
        const int n = static_cast<int>(batch.images.size());
        Graph<S> g;
        const int img = g.add_input(batch_tensor(batch.images));
        const EncodedBatch enc = encoders_.encode(g, img);
        std::vector<int> lmk_terms;
        for (int i = 0; i < n; ++i)
        {
            const int pc = encoders_.posecam_row(g, enc, i);
            const int psi = ops::slice_row(g, enc.psi, i);
            const int beta = ops::slice_row(g, enc.beta, i);
            const int verts = ops::decode_verts(g, model_, psi, beta, pc);
            const int px = ops::landmarks_px(g, model_, verts, pc);
            lmk_terms.push_back(ops::landmark_loss(g, px, *batch.landmarks[i], cfg_.image_size,
                                                   cfg_.image_size));
        }
        const int lmk = ops::weighted_sum(g, lmk_terms,
                                          std::vector<S>(lmk_terms.size(), S(1) / S(n)));
        Tensor<S> beta_gt = Tensor<S>::zeros({n, model_.spec.d_beta});
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < model_.spec.d_beta; ++k)
                beta_gt.v[static_cast<size_t>(i) * model_.spec.d_beta + k] =
                    static_cast<S>(batch.params[i]->beta[k]);
        const int beta_mse = ops::mse(g, enc.beta, g.add_input(std::move(beta_gt)));
        const int total = ops::weighted_sum(g, std::vector<int>{lmk, beta_mse},
                                            std::vector<S>{S(1), S(1)});

        std::vector<Network<S>*> nets{&encoders_.shape(), &encoders_.pose()};
        unsigned allowed = components({Component::kShapeEncoder, Component::kPoseEncoder});
        if (cfg_.pretrain_expression)
        {
            nets.push_back(&encoders_.expr());
            allowed |= component_bit(Component::kExprEncoder);
        }
        for (auto* net : nets)
            net->zero_grad();
        g.backward(total, allowed);
        adam_.step(nets, cfg_.pretrain_lr);

        LossReport r;
        r.pass = "pretrain";
        r.step = it;
        r.lr = cfg_.pretrain_lr;
        r.lmk = static_cast<double>(g.value(lmk).v[0]);
        r.cycle_shape = static_cast<double>(g.value(beta_mse).v[0]); // shape regression term
        r.weighted_total = static_cast<double>(g.value(total).v[0]);
        return r;
    }

    // -- reconstruction pass ---------------------------------------------------

    LossReport reconstruction_step(const Dataset& ds, const Batch& batch, double lr,
                                   double w_lmk_eff)
    {
        const int n = static_cast<int>(batch.images.size());
        const RasterConfig rcfg = cfg_.raster_config();
        Graph<S> g;
        const int img = g.add_input(batch_tensor(batch.images));
        const EncodedBatch enc = encoders_.encode(g, img);

        std::vector<int> lmk_terms, reg_terms, tin_items;
        for (int i = 0; i < n; ++i)
        {
            const int pc = encoders_.posecam_row(g, enc, i);
            const int psi = ops::slice_row(g, enc.psi, i);
            const int beta = ops::slice_row(g, enc.beta, i);
            const int verts = ops::decode_verts(g, model_, psi, beta, pc);
            const int px = ops::landmarks_px(g, model_, verts, pc);
            lmk_terms.push_back(ops::landmark_loss(g, px, *batch.landmarks[i], cfg_.image_size,
                                                   cfg_.image_size));
            reg_terms.push_back(ops::expression_reg(g, psi, model_.spec.d_psi,
                                                    cfg_.reg_include_jaw_eyelids));
            RenderOutput aside;
            const int s_geo = ops::render_geometry_image(g, model_, verts, pc, rcfg, &aside);
            std::optional<std::vector<std::uint8_t>> excl;
            if (cfg_.exclude_render_interior)
                excl = aside.face_mask;
            const MaskedImage masked =
                apply_mask(*batch.images[i], hull_mask(ds, batch.indices[i]), cfg_.mask_ratio,
                           rng_, excl ? &*excl : nullptr);
            tin_items.push_back(ops::concat_ch(g, s_geo, g.add_input(image_tensor(masked.image))));
        }
        const int lmk = ops::weighted_sum(g, lmk_terms,
                                          std::vector<S>(lmk_terms.size(), S(1) / S(n)));
        const int reg = ops::weighted_sum(g, reg_terms,
                                          std::vector<S>(reg_terms.size(), S(1) / S(n)));
        const int tin = ops::stack(g, tin_items);
        const int iprime = translator_.forward(g, tin);
        const int photo = ops::photometric(g, iprime, img);
        const int vgg = ops::perceptual(g, gamma_, iprime, img);
        const int emo = ops::emotion_loss(g, emo_proxy_, iprime, img);
        const int main_loss = ops::weighted_sum(
            g, std::vector<int>{photo, vgg, lmk, reg},
            std::vector<S>{static_cast<S>(cfg_.w_photo), static_cast<S>(cfg_.w_vgg),
                           static_cast<S>(w_lmk_eff), static_cast<S>(cfg_.w_reg)});

        encoders_.expr().zero_grad();
        translator_.zero_grad();
        unsigned allowed = 0;
        std::vector<Network<S>*> nets;
        if (!encoders_.expr().frozen())
        {
            allowed |= component_bit(Component::kExprEncoder);
            nets.push_back(&encoders_.expr());
        }
        if (!translator_.frozen())
        {
            allowed |= component_bit(Component::kTranslator);
            nets.push_back(&translator_);
        }
        g.backward(main_loss, allowed);
        if (cfg_.w_emo > 0.0 && !encoders_.expr().frozen())
        {
            // the translator stays out of this term's update set
            const int emo_w = ops::scale(g, emo, static_cast<S>(cfg_.w_emo));
            g.backward(emo_w, component_bit(Component::kExprEncoder));
        }
        adam_.step(nets, lr);

        LossReport r;
        r.pass = "reconstruction";
        r.step = step_;
        r.lr = lr;
        r.photo = static_cast<double>(g.value(photo).v[0]);
        r.vgg = static_cast<double>(g.value(vgg).v[0]);
        r.lmk = static_cast<double>(g.value(lmk).v[0]);
        r.reg = static_cast<double>(g.value(reg).v[0]);
        r.emo = static_cast<double>(g.value(emo).v[0]);
        r.weighted_total = cfg_.w_photo * r.photo + cfg_.w_vgg * r.vgg + w_lmk_eff * r.lmk +
                           cfg_.w_reg * r.reg + cfg_.w_emo * r.emo;
        if (!r.finite())
            throw TrainingAbort("reconstruction_step: non-finite loss at step " +
                                std::to_string(step_));
        return r;
    }

    // -- augmented expression cycle pass --------------------------------------

    AugmentMode draw_mode()
    {
        const auto mix = cfg_.augment_mix();
        double total = 0.0;
        for (double m : mix)
            total += m;
        double u = rng_.uniform() * total;
        for (size_t i = 0; i < mix.size(); ++i)
        {
            if (u < mix[i])
                return static_cast<AugmentMode>(i);
            u -= mix[i];
        }
        return AugmentMode::kZero;
    }

    AugmentPlan make_plan(AugmentMode mode, const Dataset& ds)
    {
        AugmentPlan plan;
        plan.mode = mode;
        plan.noise_scale = cfg_.aug_noise_scale >= 0.0
                               ? cfg_.aug_noise_scale
                               : 0.5 * ds.psi_std().mean();
        plan.jaw_min = cfg_.aug_jaw_min;
        plan.jaw_max = cfg_.aug_jaw_max;
        plan.eyelid_min = cfg_.aug_eyelid_min;
        plan.eyelid_max = cfg_.aug_eyelid_max;
        plan.zero_jaw_min = cfg_.aug_zero_jaw_min;
        plan.zero_jaw_max = cfg_.aug_zero_jaw_max;
        return plan;
    }

    /// Ensures a template library exists before the inject mode can run.
    void ensure_library(const Dataset& ds)
    {
        if (!library_.empty())
            return;
        if (!cfg_.template_library.empty())
        {
            library_ = TemplateLibrary::load(cfg_.template_library);
            return;
        }
        LibrarySpec spec;
        spec.psi_sigma = ds.manifest().distribution.psi_sigma(model_.spec.d_psi);
        spec.mean_data_norm = ds.mean_psi_norm();
        Rng lib_rng = Rng(cfg_.seed).fork(0x11bULL);
        library_ = build_extreme_library(model_, spec, lib_rng);
    }

    LossReport cycle_step(const Dataset& ds, const Batch& batch, double lr)
    {
        const int n = static_cast<int>(batch.images.size());
        const RasterConfig rcfg = cfg_.raster_config();
        ensure_library(ds);
        Graph<S> g;
        const int img = g.add_input(batch_tensor(batch.images));
        // frozen oracle: predicted parameters are read out as constants
        const EncodedBatch enc = encoders_.encode(g, img);
        std::vector<FaceParams> pred;
        std::vector<Eigen::VectorXd> psi_batch;
        for (int i = 0; i < n; ++i)
        {
            pred.push_back(encoders_.params_row(g, enc, i, model_.spec.d_beta, model_.spec.d_psi));
            psi_batch.push_back(pred.back().psi_full());
        }
        const AugmentMode mode = draw_mode();
        AugmentPlan plan = make_plan(mode, ds);
        if (mode == AugmentMode::kPermute && n < 2)
            plan.mode = AugmentMode::kPerturb; // degenerate batch; permute needs >= 2
        const auto psi_aug = augment_expressions(psi_batch, plan, &library_, rng_);

        std::vector<int> tin_items;
        for (int i = 0; i < n; ++i)
        {
            FaceParams np = pred[static_cast<size_t>(i)];
            np.set_psi_full(psi_aug[static_cast<size_t>(i)]);
            std::optional<std::vector<std::uint8_t>> excl;
            if (cfg_.exclude_render_interior)
            {
                const Eigen::MatrixX3d vold = decode(model_, pred[static_cast<size_t>(i)]);
                const DepthBuffer db = rasterize_depth(
                    vold, model_.face_triangles, pred[static_cast<size_t>(i)].cam_scale,
                    pred[static_cast<size_t>(i)].cam_tx, pred[static_cast<size_t>(i)].cam_ty,
                    cfg_.image_size, cfg_.image_size);
                excl.emplace(db.tri.size(), 0);
                for (size_t k = 0; k < db.tri.size(); ++k)
                    (*excl)[k] = db.tri[k] >= 0 ? 1 : 0;
            }
            const MaskedImage masked =
                apply_mask(*batch.images[i], hull_mask(ds, batch.indices[i]), cfg_.mask_ratio,
                           rng_, excl ? &*excl : nullptr);
            const MaskedImage moved = transfer_pixels(masked, model_, pred[static_cast<size_t>(i)],
                                                      np, cfg_.mask_dilation, nullptr);
            const RenderOutput ro = render_geometry(model_, np, rcfg);
            const int s_geo = g.add_input(image_tensor(ro.geometry));
            tin_items.push_back(ops::concat_ch(g, s_geo, g.add_input(image_tensor(moved.image))));
        }
        const int tin = ops::stack(g, tin_items);
        const int iprime = translator_.forward(g, tin);
        const EncodedBatch enc2 = encoders_.encode(g, iprime);

        const int dpsi_full = model_.spec.d_psi + 5;
        Tensor<S> psi_target = Tensor<S>::zeros({n, dpsi_full});
        Tensor<S> beta_target = Tensor<S>::zeros({n, model_.spec.d_beta});
        for (int i = 0; i < n; ++i)
        {
            for (int k = 0; k < dpsi_full; ++k)
                psi_target.v[static_cast<size_t>(i) * dpsi_full + k] =
                    static_cast<S>(psi_aug[static_cast<size_t>(i)][k]);
            for (int k = 0; k < model_.spec.d_beta; ++k)
                beta_target.v[static_cast<size_t>(i) * model_.spec.d_beta + k] =
                    static_cast<S>(pred[static_cast<size_t>(i)].beta[k]);
        }
        const int cyc_exp = ops::cycle_expression(g, enc2.psi, g.add_input(std::move(psi_target)));
        const int cyc_shape = ops::cycle_shape(g, enc2.beta, g.add_input(std::move(beta_target)));
        const int total = ops::weighted_sum(
            g, std::vector<int>{cyc_exp, cyc_shape},
            std::vector<S>{static_cast<S>(cfg_.w_cycle), static_cast<S>(cfg_.w_cycle)});

        // sub-parity: exactly one of {expression encoder, translator} updates
        const bool update_translator = cycle_subparity_ == 0;
        encoders_.expr().zero_grad();
        translator_.zero_grad();
        unsigned allowed = 0;
        std::vector<Network<S>*> nets;
        if (update_translator && !translator_.frozen())
        {
            allowed = component_bit(Component::kTranslator);
            nets.push_back(&translator_);
        }
        else if (!update_translator && !encoders_.expr().frozen())
        {
            allowed = component_bit(Component::kExprEncoder);
            nets.push_back(&encoders_.expr());
        }
        g.backward(total, allowed);
        adam_.step(nets, lr);
        cycle_subparity_ ^= 1;

        LossReport r;
        r.pass = "cycle";
        r.step = step_;
        r.lr = lr;
        r.cycle_exp = static_cast<double>(g.value(cyc_exp).v[0]);
        r.cycle_shape = static_cast<double>(g.value(cyc_shape).v[0]);
        r.weighted_total = cfg_.w_cycle * (r.cycle_exp + r.cycle_shape);
        if (!r.finite())
            throw TrainingAbort("cycle_step: non-finite loss at step " + std::to_string(step_));
        return r;
    }

    // -- the alternating driver ------------------------------------------------

    double lr_at(long step, int steps_per_epoch) const
    {
        const double lr_min = cfg_.lr * cfg_.lr_min_frac;
        const long pos = step % steps_per_epoch;
        return lr_min + (cfg_.lr - lr_min) * 0.5 *
                            (1.0 + std::cos(M_PI * static_cast<double>(pos) /
                                            static_cast<double>(steps_per_epoch)));
    }

    /**
     * Alternates reconstruction and cycle iterations (R,C,R,C,...) with a
     * cosine-annealed learning rate restarted at each epoch boundary,
     * appending one JSON line per step to the log and checkpointing
     * periodically.
     */
    std::filesystem::path train(const Dataset& ds, const std::filesystem::path& out_dir)
    {
        std::filesystem::create_directories(out_dir);
        std::ofstream log(out_dir / "train_log.ndjson", std::ios::app);
        if (!pretrain_done_)
        {
            pretrain(ds, &log);
        }
        const int n_train = ds.split_size(Split::kTrain);
        const int spe = std::max(1, (n_train + cfg_.batch_size - 1) / cfg_.batch_size);
        std::vector<int> shared_idx;
        while (step_ < cfg_.total_iterations)
        {
            const double lr = lr_at(step_, spe);
            const long epoch = step_ / spe;
            const bool is_cycle = cfg_.cycle_enabled && (step_ % 2 == 1);
            std::vector<int> idx;
            if (cfg_.shared_batch && is_cycle && !shared_idx.empty())
                idx = shared_idx;
            else
            {
                idx = rng_.sample_without_replacement(n_train,
                                                      std::min<int>(cfg_.batch_size, n_train));
                shared_idx = idx;
            }
            const Batch b = load_batch(ds, Split::kTrain, idx);
            double w_lmk_eff = cfg_.w_lmk;
            if (cfg_.lmk_drop_after_epoch >= 0 && epoch >= cfg_.lmk_drop_after_epoch)
                w_lmk_eff = 0.0;
            const LossReport r =
                is_cycle ? cycle_step(ds, b, lr) : reconstruction_step(ds, b, lr, w_lmk_eff);
            log << r.to_json().dump() << "\n";
            ++step_;
            if (cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0 &&
                step_ < cfg_.total_iterations)
                save_checkpoint(out_dir / "checkpoint");
        }
        log.flush();
        const auto final_dir = out_dir / "checkpoint";
        save_checkpoint(final_dir);
        return final_dir;
    }

    // -- checkpointing -----------------------------------------------------------

    void save_checkpoint(const std::filesystem::path& dir) const
    {
        std::filesystem::create_directories(dir);
        Json blobs = Json::object();
        save_network_blobs(dir, encoders_.expr(), blobs);
        save_network_blobs(dir, encoders_.shape(), blobs);
        save_network_blobs(dir, encoders_.pose(), blobs);
        save_network_blobs(dir, translator_, blobs);
        save_network_blobs(dir, gamma_, blobs);
        save_network_blobs(dir, emo_proxy_, blobs);
        Json manifest{{"format", "facelab-checkpoint"},
                      {"version", 1},
                      {"config", cfg_.to_json()},
                      {"step", step_},
                      {"cycle_subparity", cycle_subparity_},
                      {"pretrain_done", pretrain_done_},
                      {"rng", rng_.serialize()},
                      {"blobs", blobs}};
        write_json(dir / "manifest.json", manifest);
        save_model(model_, dir / "model");
        if (!library_.empty())
            library_.save(dir / "templates.json");
    }

    static TrainSession load_checkpoint(const std::filesystem::path& dir)
    {
        const Json manifest = read_json(dir / "manifest.json");
        if (manifest.value("format", "") != "facelab-checkpoint")
            throw IoError("load_checkpoint: not a checkpoint directory: " + dir.string());
        const TrainConfig cfg = TrainConfig::from_json(manifest.at("config"));
        MorphableModel model = load_model(dir / "model");
        TrainSession s(std::move(model), cfg);
        const Json& blobs = manifest.at("blobs");
        load_network_blobs(dir, s.encoders_.expr(), blobs);
        load_network_blobs(dir, s.encoders_.shape(), blobs);
        load_network_blobs(dir, s.encoders_.pose(), blobs);
        load_network_blobs(dir, s.translator_, blobs);
        load_network_blobs(dir, s.gamma_, blobs);
        load_network_blobs(dir, s.emo_proxy_, blobs);
        s.step_ = manifest.at("step").get<long>();
        s.cycle_subparity_ = manifest.at("cycle_subparity").get<int>();
        s.pretrain_done_ = manifest.at("pretrain_done").get<bool>();
        s.rng_.deserialize(manifest.at("rng").get<std::string>());
        if (s.pretrain_done_)
            s.finish_pretrain();
        if (std::filesystem::exists(dir / "templates.json"))
            s.library_ = TemplateLibrary::load(dir / "templates.json");
        return s;
    }

private:
    MorphableModel model_;
    TrainConfig cfg_;
    EncoderSet<S> encoders_;
    Translator<S> translator_;
    FeatureExtractor<S> gamma_;
    FeatureExtractor<S> emo_proxy_;
    Adam<S> adam_;
    Rng rng_;
    long step_ = 0;
    int cycle_subparity_ = 0;
    bool pretrain_done_ = false;
    TemplateLibrary library_;
    std::map<int, std::vector<std::uint8_t>> mask_cache_;
};

using TrainSessionF = TrainSession<float>;

} // namespace facelab
