/*
 * facelab - analysis-by-neural-synthesis 3D face reconstruction.
 *
 * File: include/facelab/networks.hpp
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

#include "facelab/core/graph.hpp"
#include "facelab/core/rng.hpp"
#include "facelab/core/serialize.hpp"
#include "facelab/model.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace facelab {

// ---------------------------------------------------------------------------
// parameter store
// ---------------------------------------------------------------------------

/// Extends a weight tensor with its per-parameter Adam step counter.
template <typename S>
struct NetParam : Param<S>
{
    long adam_t = 0;
};

template <typename S>
class Network
{
public:
    Network(std::string name, Component component) : name_(std::move(name)), component_(component)
    {
    }
    virtual ~Network() = default;
    Network(Network&&) noexcept = default;
    Network& operator=(Network&&) noexcept = default;
    Network(const Network&) = delete;
    Network& operator=(const Network&) = delete;

    const std::string& name() const { return name_; }
    Component component() const { return component_; }

    bool frozen() const { return frozen_; }
    void set_frozen(bool f) { frozen_ = f; }

    std::vector<std::unique_ptr<NetParam<S>>>& params() { return params_; }
    const std::vector<std::unique_ptr<NetParam<S>>>& params() const { return params_; }

    long param_count() const
    {
        long n = 0;
        for (const auto& p : params_)
            n += p->value.size();
        return n;
    }

    std::uint64_t checksum() const
    {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& p : params_)
            h = fnv1a64(p->value.data(), p->value.v.size() * sizeof(S), h);
        return h;
    }

    void zero_grad()
    {
        for (auto& p : params_)
            p->grad.fill(S(0));
    }

protected:
    NetParam<S>& add_param(const std::string& pname, Tensor<S> value)
    {
        auto p = std::make_unique<NetParam<S>>();
        p->name = name_ + "." + pname;
        p->component = component_;
        p->value = std::move(value);
        p->init_state();
        params_.push_back(std::move(p));
        return *params_.back();
    }

    /// He-normal initialized weight tensor.
    Tensor<S> he_init(std::initializer_list<int> shape, int fan_in, Rng& rng)
    {
        Tensor<S> t = Tensor<S>::zeros(shape);
        const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (auto& e : t.v)
            e = static_cast<S>(rng.normal(0.0, std));
        return t;
    }

    std::string name_;
    Component component_;
    bool frozen_ = false;
    std::vector<std::unique_ptr<NetParam<S>>> params_;
};

// ---------------------------------------------------------------------------
// encoder branches
// ---------------------------------------------------------------------------

struct EncoderConfig
{
    int base_channels = 8; // channels double at each of the 4 strided stages
    Json to_json() const { return Json{{"base_channels", base_channels}}; }
    static EncoderConfig from_json(const Json& j)
    {
        EncoderConfig c;
        c.base_channels = j.at("base_channels").get<int>();
        return c;
    }
};

/**
 * One regression branch: a 4-stage strided convolutional backbone with global
 * average pooling and a linear head. The head is zero-initialized so that the
 * initial prediction is exactly the configured prior (the head bias).
 */
template <typename S>
class EncoderBranch : public Network<S>
{
public:
    EncoderBranch(const std::string& name, Component comp, const EncoderConfig& cfg, int out_dim,
                  Rng rng)
        : Network<S>(name, comp), out_dim_(out_dim)
    {
        const int b = cfg.base_channels;
        const int chans[5] = {3, b, 2 * b, 4 * b, 8 * b};
        for (int s = 0; s < 4; ++s)
        {
            const int ci = chans[s], co = chans[s + 1];
            conv_w_[s] = &this->add_param("conv" + std::to_string(s) + ".w",
                                          this->he_init({co, ci, 3, 3}, ci * 9, rng));
            conv_b_[s] =
                &this->add_param("conv" + std::to_string(s) + ".b", Tensor<S>::zeros({co}));
        }
        head_w_ = &this->add_param("head.w", Tensor<S>::zeros({out_dim, 8 * b}));
        head_b_ = &this->add_param("head.b", Tensor<S>::zeros({out_dim}));
    }

    int out_dim() const { return out_dim_; }

    /// [N,3,H,W] -> [N,out_dim]
    int forward(Graph<S>& g, int image) const
    {
        int x = image;
        for (int s = 0; s < 4; ++s)
        {
            x = ops::conv2d(g, x, g.add_param(*conv_w_[s]), g.add_param(*conv_b_[s]), 2, 1);
            x = ops::relu(g, x);
        }
        x = ops::global_avg_pool(g, x);
        return ops::linear(g, x, g.add_param(*head_w_), g.add_param(*head_b_));
    }

private:
    int out_dim_;
    NetParam<S>* conv_w_[4];
    NetParam<S>* conv_b_[4];
    NetParam<S>* head_w_;
    NetParam<S>* head_b_;
};

/// Handles to one batch of encoded parameters on the tape.
struct EncodedBatch
{
    int psi = -1;     // [N, d_psi+5]
    int beta = -1;    // [N, d_beta]
    int posecam = -1; // [N, 6] raw head output (cam_map applied per sample downstream)
};

/**
 * The three regression branches: expression (psi_expr + eyelids + jaw), shape
 * (beta) and global transform (pose + camera).
 */
template <typename S>
class EncoderSet
{
public:
    EncoderSet(const EncoderConfig& cfg, int d_psi, int d_beta, const CamPriors& priors,
               std::uint64_t seed)
        : cfg_(cfg), priors_(priors),
          expr_("enc_expr", Component::kExprEncoder, cfg, d_psi + 5, Rng(seed).fork(1)),
          shape_("enc_shape", Component::kShapeEncoder, cfg, d_beta, Rng(seed).fork(2)),
          pose_("enc_pose", Component::kPoseEncoder, cfg, 6, Rng(seed).fork(3))
    {
    }

    EncoderBranch<S>& expr() { return expr_; }
    EncoderBranch<S>& shape() { return shape_; }
    EncoderBranch<S>& pose() { return pose_; }
    const EncoderBranch<S>& expr() const { return expr_; }
    const EncoderBranch<S>& shape() const { return shape_; }
    const EncoderBranch<S>& pose() const { return pose_; }
    const CamPriors& priors() const { return priors_; }
    const EncoderConfig& config() const { return cfg_; }

    /// [N,3,H,W] -> per-group parameter matrices (raw pose/camera head).
    EncodedBatch encode(Graph<S>& g, int image) const
    {
        EncodedBatch out;
        out.psi = expr_.forward(g, image);
        out.beta = shape_.forward(g, image);
        out.posecam = pose_.forward(g, image);
        return out;
    }

    /// Mapped pose/camera vector for one batch row: [pose(3), scale, tx, ty].
    int posecam_row(Graph<S>& g, const EncodedBatch& batch, int row) const
    {
        return ops::cam_map(g, ops::slice_row(g, batch.posecam, row), priors_);
    }

    /// Decoded FaceParams (values only) for one batch row.
    FaceParams params_row(Graph<S>& g, const EncodedBatch& batch, int row, int d_beta,
                          int d_psi) const
    {
        FaceParams p = FaceParams::zero(d_beta, d_psi);
        const auto& psi = g.value(batch.psi);
        const auto& beta = g.value(batch.beta);
        const auto& pc = g.value(batch.posecam);
        const int dpsi_full = d_psi + 5;
        for (int i = 0; i < d_psi; ++i)
            p.psi_expr[i] = static_cast<double>(psi.v[static_cast<size_t>(row) * dpsi_full + i]);
        p.eyelids[0] = psi.v[static_cast<size_t>(row) * dpsi_full + d_psi];
        p.eyelids[1] = psi.v[static_cast<size_t>(row) * dpsi_full + d_psi + 1];
        for (int i = 0; i < 3; ++i)
            p.jaw[i] = psi.v[static_cast<size_t>(row) * dpsi_full + d_psi + 2 + i];
        for (int i = 0; i < d_beta; ++i)
            p.beta[i] = static_cast<double>(beta.v[static_cast<size_t>(row) * d_beta + i]);
        for (int i = 0; i < 3; ++i)
            p.pose[i] = pc.v[static_cast<size_t>(row) * 6 + i];
        p.cam_scale = priors_.scale0 * std::exp(static_cast<double>(pc.v[static_cast<size_t>(row) * 6 + 3]));
        p.cam_tx = priors_.tx0 + priors_.trans_gain * pc.v[static_cast<size_t>(row) * 6 + 4];
        p.cam_ty = priors_.ty0 + priors_.trans_gain * pc.v[static_cast<size_t>(row) * 6 + 5];
        return p;
    }

    std::vector<Network<S>*> networks()
    {
        return {&expr_, &shape_, &pose_};
    }

private:
    EncoderConfig cfg_;
    CamPriors priors_;
    EncoderBranch<S> expr_;
    EncoderBranch<S> shape_;
    EncoderBranch<S> pose_;
};

// ---------------------------------------------------------------------------
// translator
// ---------------------------------------------------------------------------

struct TranslatorConfig
{
    int base_channels = 64; // bottleneck width is 8x this (512 at the default)
    int res_blocks = 4;
    bool skips = true; // UNet + residual shortcuts; off is the ablation variant

    Json to_json() const
    {
        return Json{{"base_channels", base_channels}, {"res_blocks", res_blocks}, {"skips", skips}};
    }
    static TranslatorConfig from_json(const Json& j)
    {
        TranslatorConfig c;
        c.base_channels = j.at("base_channels").get<int>();
        c.res_blocks = j.at("res_blocks").get<int>();
        c.skips = j.at("skips").get<bool>();
        return c;
    }
};

/**
 * U-shaped image-to-image translator: 3 encoder blocks each halving the
 * resolution, a residual stack at the H/8 x W/8 bottleneck, and 3 decoder
 * blocks (2x2 transposed convolution + skip concatenation + conv). Input is
 * the geometry render concatenated with the masked image (1+3 channels);
 * output is a 3-channel image squashed to [0,1].
 *
 * With skips disabled the architecture (and parameter count) is unchanged:
 * the skip inputs are replaced by zero tensors and residual adds are dropped,
 * severing the shortcut gradient paths.
 */
template <typename S>
class Translator : public Network<S>
{
public:
    explicit Translator(const TranslatorConfig& cfg, std::uint64_t seed)
        : Network<S>("translator", Component::kTranslator), cfg_(cfg)
    {
        Rng rng = Rng(seed).fork(17);
        const int b = cfg.base_channels;
        const int c1 = 2 * b, c2 = 4 * b, c3 = 8 * b;
        stem_w_ = &this->add_param("stem.w", this->he_init({b, 4, 3, 3}, 4 * 9, rng));
        stem_b_ = &this->add_param("stem.b", Tensor<S>::zeros({b}));
        const int enc_ci[3] = {b, c1, c2}, enc_co[3] = {c1, c2, c3};
        for (int s = 0; s < 3; ++s)
        {
            down_w_[s] = &this->add_param("down" + std::to_string(s) + ".w",
                                          this->he_init({enc_co[s], enc_ci[s], 3, 3},
                                                        enc_ci[s] * 9, rng));
            down_b_[s] =
                &this->add_param("down" + std::to_string(s) + ".b", Tensor<S>::zeros({enc_co[s]}));
            enc_w_[s] = &this->add_param("enc" + std::to_string(s) + ".w",
                                         this->he_init({enc_co[s], enc_co[s], 3, 3},
                                                       enc_co[s] * 9, rng));
            enc_b_[s] =
                &this->add_param("enc" + std::to_string(s) + ".b", Tensor<S>::zeros({enc_co[s]}));
        }
        for (int r = 0; r < cfg.res_blocks; ++r)
        {
            res_w_.push_back(&this->add_param("res" + std::to_string(r) + ".w1",
                                              this->he_init({c3, c3, 3, 3}, c3 * 9, rng)));
            res_b_.push_back(&this->add_param("res" + std::to_string(r) + ".b1",
                                              Tensor<S>::zeros({c3})));
            res_w_.push_back(&this->add_param("res" + std::to_string(r) + ".w2",
                                              this->he_init({c3, c3, 3, 3}, c3 * 9, rng)));
            res_b_.push_back(&this->add_param("res" + std::to_string(r) + ".b2",
                                              Tensor<S>::zeros({c3})));
        }
        const int dec_ci[3] = {c3, c2, c1}, dec_co[3] = {c2, c1, b};
        for (int s = 0; s < 3; ++s)
        {
            up_w_[s] = &this->add_param("up" + std::to_string(s) + ".w",
                                        this->he_init({dec_ci[s], dec_co[s], 2, 2},
                                                      dec_ci[s] * 4, rng));
            up_b_[s] =
                &this->add_param("up" + std::to_string(s) + ".b", Tensor<S>::zeros({dec_co[s]}));
            dec_w_[s] = &this->add_param("dec" + std::to_string(s) + ".w",
                                         this->he_init({dec_co[s], 2 * dec_co[s], 3, 3},
                                                       2 * dec_co[s] * 9, rng));
            dec_b_[s] =
                &this->add_param("dec" + std::to_string(s) + ".b", Tensor<S>::zeros({dec_co[s]}));
        }
        head_w_ = &this->add_param("head.w", this->he_init({3, b, 3, 3}, b * 9, rng));
        head_b_ = &this->add_param("head.b", Tensor<S>::zeros({3}));
    }

    const TranslatorConfig& config() const { return cfg_; }

    /// [N,4,H,W] -> [N,3,H,W]; H and W must be divisible by 8.
    int forward(Graph<S>& g, int x) const
    {
        const auto& vx = g.value(x);
        const int H = vx.dims[vx.rank - 2], W = vx.dims[vx.rank - 1];
        if (H % 8 != 0 || W % 8 != 0)
            throw ConfigError("Translator: image size must be divisible by 8");

        int h0 = ops::relu(g, ops::conv2d(g, x, g.add_param(*stem_w_), g.add_param(*stem_b_), 1, 1));
        int skips[3];
        int cur = h0;
        skips[0] = h0;
        for (int s = 0; s < 3; ++s)
        {
            cur = ops::relu(
                g, ops::conv2d(g, cur, g.add_param(*down_w_[s]), g.add_param(*down_b_[s]), 2, 1));
            cur = ops::relu(
                g, ops::conv2d(g, cur, g.add_param(*enc_w_[s]), g.add_param(*enc_b_[s]), 1, 1));
            if (s < 2)
                skips[s + 1] = cur;
        }
        for (int r = 0; r < cfg_.res_blocks; ++r)
        {
            int y = ops::relu(g, ops::conv2d(g, cur, g.add_param(*res_w_[2 * r]),
                                             g.add_param(*res_b_[2 * r]), 1, 1));
            y = ops::conv2d(g, y, g.add_param(*res_w_[2 * r + 1]), g.add_param(*res_b_[2 * r + 1]),
                            1, 1);
            cur = cfg_.skips ? ops::relu(g, ops::add(g, cur, y)) : ops::relu(g, y);
        }
        for (int s = 0; s < 3; ++s)
        {
            cur = ops::relu(g, ops::tconv2x2(g, cur, g.add_param(*up_w_[s]), g.add_param(*up_b_[s])));
            const int partner = skips[2 - s];
            int lateral = partner;
            if (!cfg_.skips)
            {
                Tensor<S> z = g.value(partner);
                z.fill(S(0));
                lateral = g.add_input(std::move(z));
            }
            cur = ops::concat_ch(g, cur, lateral);
            cur = ops::relu(
                g, ops::conv2d(g, cur, g.add_param(*dec_w_[s]), g.add_param(*dec_b_[s]), 1, 1));
        }
        return ops::sigmoid(g,
                            ops::conv2d(g, cur, g.add_param(*head_w_), g.add_param(*head_b_), 1, 1));
    }

private:
    TranslatorConfig cfg_;
    NetParam<S>*stem_w_, *stem_b_;
    NetParam<S>*down_w_[3], *down_b_[3], *enc_w_[3], *enc_b_[3];
    std::vector<NetParam<S>*> res_w_, res_b_;
    NetParam<S>*up_w_[3], *up_b_[3], *dec_w_[3], *dec_b_[3];
    NetParam<S>*head_w_, *head_b_;
};

// ---------------------------------------------------------------------------
// fixed-weight feature extractors
// ---------------------------------------------------------------------------

/**
 * Frozen multi-scale convolutional pyramid with seeded, never-trained
 * weights. The `taps` variant exposes feature maps at three scales (the
 * perceptual metric); the pooled variant produces a global descriptor (the
 * emotion proxy). An adapter seam: anything producing the same tap/descriptor
 * shapes can stand in for these.
 */
template <typename S>
class FeatureExtractor : public Network<S>
{
public:
    enum class Kind
    {
        kPerceptual, // 3-scale feature taps
        kDescriptor  // global pooled descriptor
    };

    FeatureExtractor(const std::string& name, Kind kind, std::uint64_t seed)
        : Network<S>(name, Component::kExtractor), kind_(kind)
    {
        Rng rng = Rng(seed).fork(23);
        const int c[4] = {3, 8, 16, 32};
        for (int s = 0; s < 3; ++s)
        {
            w_[s] = &this->add_param("conv" + std::to_string(s) + ".w",
                                     this->he_init({c[s + 1], c[s], 3, 3}, c[s] * 9, rng));
            b_[s] = &this->add_param("conv" + std::to_string(s) + ".b",
                                     Tensor<S>::zeros({c[s + 1]}));
        }
        this->set_frozen(true);
    }

    /// Feature taps at three scales (perceptual variant).
    std::vector<int> taps(Graph<S>& g, int image) const
    {
        std::vector<int> out;
        int x = image;
        const int strides[3] = {1, 2, 2};
        for (int s = 0; s < 3; ++s)
        {
            x = ops::relu(
                g, ops::conv2d(g, x, g.add_param(*w_[s]), g.add_param(*b_[s]), strides[s], 1));
            out.push_back(x);
        }
        return out;
    }

    /// Global pooled descriptor [N,32] (emotion-proxy variant).
    int descriptor(Graph<S>& g, int image) const
    {
        int x = image;
        for (int s = 0; s < 3; ++s)
            x = ops::relu(g, ops::conv2d(g, x, g.add_param(*w_[s]), g.add_param(*b_[s]), 2, 1));
        return ops::global_avg_pool(g, x);
    }

private:
    Kind kind_;
    NetParam<S>*w_[3], *b_[3];
};

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

/// Adam with per-parameter step counts (frozen windows do not advance state).
template <typename S>
struct Adam
{
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void step(const std::vector<Network<S>*>& nets, double lr)
    {
        for (Network<S>* net : nets)
        {
            if (net->frozen())
                continue;
            for (auto& p : net->params())
            {
                p->adam_t += 1;
                const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(p->adam_t));
                const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(p->adam_t));
                for (int i = 0; i < p->value.size(); ++i)
                {
                    const double gi = static_cast<double>(p->grad.v[i]);
                    const double m = beta1 * static_cast<double>(p->m.v[i]) + (1.0 - beta1) * gi;
                    const double v = beta2 * static_cast<double>(p->v.v[i]) + (1.0 - beta2) * gi * gi;
                    p->m.v[i] = static_cast<S>(m);
                    p->v.v[i] = static_cast<S>(v);
                    const double mh = m / bc1;
                    const double vh = v / bc2;
                    p->value.v[i] =
                        static_cast<S>(static_cast<double>(p->value.v[i]) - lr * mh / (std::sqrt(vh) + eps));
                }
            }
        }
    }
};

// ---------------------------------------------------------------------------
// checkpoints: manifest JSON + named float32 blobs
// ---------------------------------------------------------------------------

template <typename S>
void save_network_blobs(const std::filesystem::path& dir, const Network<S>& net, Json& blob_index)
{
    for (const auto& p : net.params())
    {
        std::vector<float> buf(p->value.v.size());
        for (size_t i = 0; i < buf.size(); ++i)
            buf[i] = static_cast<float>(p->value.v[i]);
        const std::string fname = p->name + ".f32";
        write_blob_f32(dir / fname, buf.data(), buf.size());
        std::vector<float> mbuf(p->m.v.size()), vbuf(p->v.v.size());
        for (size_t i = 0; i < mbuf.size(); ++i)
        {
            mbuf[i] = static_cast<float>(p->m.v[i]);
            vbuf[i] = static_cast<float>(p->v.v[i]);
        }
        write_blob_f32(dir / (p->name + ".m.f32"), mbuf.data(), mbuf.size());
        write_blob_f32(dir / (p->name + ".v.f32"), vbuf.data(), vbuf.size());
        blob_index[p->name] = Json{{"size", p->value.size()}, {"adam_t", p->adam_t}};
    }
}

template <typename S>
void load_network_blobs(const std::filesystem::path& dir, Network<S>& net, const Json& blob_index)
{
    for (auto& p : net.params())
    {
        if (!blob_index.contains(p->name))
            throw IoError("checkpoint missing blob: " + p->name);
        const auto& meta = blob_index.at(p->name);
        if (meta.at("size").template get<int>() != p->value.size())
            throw IoError("checkpoint blob size mismatch for " + p->name +
                          " (incompatible architecture config)");
        const auto buf = read_blob_f32(dir / (p->name + ".f32"), p->value.v.size());
        for (size_t i = 0; i < buf.size(); ++i)
            p->value.v[i] = static_cast<S>(buf[i]);
        const auto mbuf = read_blob_f32(dir / (p->name + ".m.f32"), p->m.v.size());
        const auto vbuf = read_blob_f32(dir / (p->name + ".v.f32"), p->v.v.size());
        for (size_t i = 0; i < mbuf.size(); ++i)
        {
            p->m.v[i] = static_cast<S>(mbuf[i]);
            p->v.v[i] = static_cast<S>(vbuf[i]);
        }
        p->adam_t = meta.at("adam_t").template get<long>();
    }
}

} // namespace facelab
