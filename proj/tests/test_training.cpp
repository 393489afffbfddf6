/*
 * facelab - analysis-by-neural-synthesis 3D face reconstruction.
 *
 * File: tests/test_training.cpp
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
#include "facelab/training.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <fstream>

using namespace facelab;
using facelab::test::scratch_dir;
using facelab::test::shared_tiny_dataset;

namespace {

std::vector<Json> read_ndjson(const std::filesystem::path& p)
{
    std::ifstream f(p);
    std::vector<Json> out;
    std::string line;
    while (std::getline(f, line))
        if (!line.empty())
            out.push_back(Json::parse(line));
    return out;
}

} // namespace

TEST_CASE("paper profile carries the reference defaults; desk profile only scales sizes")
{
    const TrainConfig paper = TrainConfig::paper_profile();
    CHECK(paper.batch_size == 32);
    CHECK(paper.total_iterations == 250000);
    CHECK(paper.lr == 1e-3);
    CHECK(paper.pretrain_iterations == 60000);
    CHECK(paper.pretrain_lr == 5e-4);
    CHECK(paper.w_cycle == 10.0);
    CHECK(paper.w_lmk == 100.0);
    CHECK(paper.w_vgg == 10.0);
    CHECK(paper.w_photo == 1.0);
    CHECK(paper.w_emo == 1.0);
    CHECK(paper.w_reg == 1e-3);
    CHECK(paper.mask_ratio == 0.01);

    const TrainConfig desk = TrainConfig::desk_profile();
    CHECK(desk.w_cycle == paper.w_cycle);
    CHECK(desk.w_lmk == paper.w_lmk);
    CHECK(desk.w_vgg == paper.w_vgg);
    CHECK(desk.w_photo == paper.w_photo);
    CHECK(desk.w_emo == paper.w_emo);
    CHECK(desk.w_reg == paper.w_reg);
    CHECK(desk.mask_ratio == paper.mask_ratio);
    CHECK(desk.total_iterations < paper.total_iterations);
}

TEST_CASE("config document round-trips and rejects unknown keys")
{
    const TrainConfig cfg = TrainConfig::desk_profile();
    const Json j = cfg.to_json();
    const TrainConfig back = TrainConfig::from_json(j);
    CHECK(back.to_json() == j);

    Json bad = j;
    bad["no_such_field"] = 1;
    CHECK_THROWS_AS(TrainConfig::from_json(bad), ConfigError);
    Json wrong = j;
    wrong["mask_ratio"] = 1.5;
    CHECK_THROWS_AS(TrainConfig::from_json(wrong), ConfigError);

    // the schema annotates every reference-quoted default
    const Json schema = config_schema();
    int paper_defaults = 0;
    for (const auto& f : schema.at("fields"))
        if (f.value("paper_default", false))
            ++paper_defaults;
    CHECK(paper_defaults >= 12);
    CHECK(schema.at("fields").size() == j.size());
}

TEST_CASE("cosine schedule restarts at the configured peak each epoch")
{
    TrainConfig cfg = TrainConfig::tiny_profile();
    cfg.lr = 2e-3;
    const Dataset ds = Dataset::load(shared_tiny_dataset());
    TrainSession<float> s(ds.model(), cfg);
    const int spe = 7;
    CHECK(s.lr_at(0, spe) == doctest::Approx(cfg.lr));
    CHECK(s.lr_at(spe, spe) == doctest::Approx(cfg.lr));
    CHECK(s.lr_at(3 * spe, spe) == doctest::Approx(cfg.lr));
    for (int i = 1; i < spe; ++i)
        CHECK(s.lr_at(i, spe) < cfg.lr);
    CHECK(s.lr_at(spe - 1, spe) >= cfg.lr * cfg.lr_min_frac);
}

TEST_CASE("zero-iteration pretrain leaves the encoders unchanged")
{
    const Dataset ds = Dataset::load(shared_tiny_dataset());
    TrainConfig cfg = TrainConfig::tiny_profile();
    cfg.pretrain_iterations = 0;
    TrainSession<float> s(ds.model(), cfg);
    const auto before_expr = s.encoders().expr().checksum();
    const auto before_shape = s.encoders().shape().checksum();
    s.pretrain(ds);
    CHECK(s.encoders().expr().checksum() == before_expr);
    CHECK(s.encoders().shape().checksum() == before_shape);
    CHECK(s.pretrain_done());
    CHECK(s.encoders().shape().frozen());
    CHECK(s.encoders().pose().frozen());
}

TEST_CASE("reconstruction step: zero weights leave parameters unchanged")
{
    const Dataset ds = Dataset::load(shared_tiny_dataset());
    TrainConfig cfg = TrainConfig::tiny_profile();
    cfg.w_photo = cfg.w_vgg = cfg.w_lmk = cfg.w_reg = cfg.w_emo = 0.0;
    TrainSession<float> s(ds.model(), cfg);
    s.finish_pretrain();
    const auto expr0 = s.encoders().expr().checksum();
    const auto trans0 = s.translator().checksum();
    const Batch b = load_batch(ds, Split::kTrain, {0, 1});
    s.reconstruction_step(ds, b, 1e-3, 0.0);
    CHECK(s.encoders().expr().checksum() == expr0);
    CHECK(s.translator().checksum() == trans0);
}

TEST_CASE("reconstruction step: landmark-only training never touches the translator")
{
    const Dataset ds = Dataset::load(shared_tiny_dataset());
    TrainConfig cfg = TrainConfig::tiny_profile();
    cfg.w_photo = cfg.w_vgg = cfg.w_reg = cfg.w_emo = 0.0;
    cfg.w_lmk = 100.0;
    TrainSession<float> s(ds.model(), cfg);
    s.finish_pretrain();
    const auto trans0 = s.translator().checksum();
    const auto expr0 = s.encoders().expr().checksum();
    const Batch b = load_batch(ds, Split::kTrain, {0, 1});
    for (int i = 0; i < 3; ++i)
        s.reconstruction_step(ds, b, 1e-3, cfg.w_lmk);
    CHECK(s.translator().checksum() == trans0);
    CHECK(s.encoders().expr().checksum() != expr0);
}

TEST_CASE("freezing contracts over the alternating passes")
{
    const Dataset ds = Dataset::load(shared_tiny_dataset());
    TrainConfig cfg = TrainConfig::tiny_profile();
    cfg.pretrain_iterations = 2;
    TrainSession<float> s(ds.model(), cfg);
    s.pretrain(ds);
    const auto shape0 = s.encoders().shape().checksum();
    const auto pose0 = s.encoders().pose().checksum();
    const Batch b = load_batch(ds, Split::kTrain, {0, 1});

    for (int i = 0; i < 4; ++i)
    {
        // reconstruction never updates the frozen branches
        s.reconstruction_step(ds, b, 1e-3, cfg.w_lmk);
        CHECK(s.encoders().shape().checksum() == shape0);
        CHECK(s.encoders().pose().checksum() == pose0);

        // cycle sub-parity freezes exactly one of {expression encoder, translator}
        const auto expr_before = s.encoders().expr().checksum();
        const auto trans_before = s.translator().checksum();
        const int parity = s.cycle_subparity();
        s.cycle_step(ds, b, 1e-3);
        if (parity == 0)
        {
            CHECK(s.encoders().expr().checksum() == expr_before);
            CHECK(s.translator().checksum() != trans_before);
        }
        else
        {
            CHECK(s.encoders().expr().checksum() != expr_before);
            CHECK(s.translator().checksum() == trans_before);
        }
        CHECK(s.encoders().shape().checksum() == shape0);
    }
}

TEST_CASE("emotion-only updates leave the translator untouched")
{
    const Dataset ds = Dataset::load(shared_tiny_dataset());
    TrainConfig cfg = TrainConfig::tiny_profile();
    cfg.w_photo = cfg.w_vgg = cfg.w_lmk = cfg.w_reg = 0.0;
    cfg.w_emo = 1.0;
    TrainSession<float> s(ds.model(), cfg);
    s.finish_pretrain();
    const auto trans0 = s.translator().checksum();
    const auto expr0 = s.encoders().expr().checksum();
    const Batch b = load_batch(ds, Split::kTrain, {0, 1});
    for (int i = 0; i < 10; ++i)
        s.reconstruction_step(ds, b, 1e-3, 0.0);
    CHECK(s.translator().checksum() == trans0);
    CHECK(s.encoders().expr().checksum() != expr0);
}

TEST_CASE("train alternates R,C,R,C and logs one line per step")
{
    const Dataset ds = Dataset::load(shared_tiny_dataset());
    TrainConfig cfg = TrainConfig::tiny_profile();
    cfg.total_iterations = 6;
    cfg.pretrain_iterations = 1;
    const auto out = scratch_dir("train_seq");
    TrainSession<float> s(ds.model(), cfg);
    s.train(ds, out);
    const auto log = read_ndjson(out / "train_log.ndjson");
    std::vector<std::string> passes;
    for (const auto& line : log)
        if (line.at("pass") != "pretrain")
            passes.push_back(line.at("pass").get<std::string>());
    REQUIRE(passes.size() == 6);
    for (size_t i = 0; i < passes.size(); ++i)
        CHECK(passes[i] == (i % 2 == 0 ? "reconstruction" : "cycle"));

    SUBCASE("cycle can be disabled")
    {
        TrainConfig c2 = cfg;
        c2.cycle_enabled = false;
        const auto out2 = scratch_dir("train_seq_nocycle");
        TrainSession<float> s2(ds.model(), c2);
        s2.train(ds, out2);
        for (const auto& line : read_ndjson(out2 / "train_log.ndjson"))
            CHECK(line.at("pass") != "cycle");
    }
}

TEST_CASE("training is deterministic: same seed, same log bytes")
{
    const Dataset ds = Dataset::load(shared_tiny_dataset());
    TrainConfig cfg = TrainConfig::tiny_profile();
    cfg.total_iterations = 6;
    cfg.pretrain_iterations = 2;
    const auto a = scratch_dir("det_a");
    const auto b = scratch_dir("det_b");
    TrainSession<float>(ds.model(), cfg).train(ds, a);
    TrainSession<float>(ds.model(), cfg).train(ds, b);
    CHECK(facelab::test::files_equal(a / "train_log.ndjson", b / "train_log.ndjson"));
}

TEST_CASE("resume from checkpoint reproduces the next step bit-exactly")
{
    const Dataset ds = Dataset::load(shared_tiny_dataset());
    TrainConfig cfg = TrainConfig::tiny_profile();
    cfg.total_iterations = 8;
    cfg.pretrain_iterations = 2;
    cfg.checkpoint_every = 4;

    const auto full_dir = scratch_dir("resume_full");
    TrainSession<float> full(ds.model(), cfg);
    full.train(ds, full_dir);
    const auto full_log = read_ndjson(full_dir / "train_log.ndjson");

    // second run stops at the mid checkpoint, then resumes
    TrainConfig half = cfg;
    half.total_iterations = 4;
    const auto half_dir = scratch_dir("resume_half");
    TrainSession<float> first(ds.model(), half);
    first.train(ds, half_dir);
    {
        TrainSession<float> resumed = TrainSession<float>::load_checkpoint(half_dir / "checkpoint");
        CHECK(resumed.step() == 4);
    }
    // extend the horizon in the stored config, then resume to the end
    {
        Json manifest = read_json(half_dir / "checkpoint" / "manifest.json");
        manifest["config"]["total_iterations"] = 8;
        write_json(half_dir / "checkpoint" / "manifest.json", manifest);
    }
    TrainSession<float> cont = TrainSession<float>::load_checkpoint(half_dir / "checkpoint");
    const auto cont_dir = scratch_dir("resume_cont");
    cont.train(ds, cont_dir);
    const auto cont_log = read_ndjson(cont_dir / "train_log.ndjson");

    // the resumed run's first logged steps must match the uninterrupted run
    REQUIRE(cont_log.size() == 4);
    int offset = 0;
    for (const auto& line : full_log)
    {
        if (line.at("pass") == "pretrain" || line.at("step").get<long>() < 4)
        {
            ++offset;
            continue;
        }
        break;
    }
    for (size_t i = 0; i < cont_log.size(); ++i)
        CHECK(cont_log[i] == full_log[static_cast<size_t>(offset) + i]);
}

TEST_CASE("non-finite losses abort training")
{
    const Dataset ds = Dataset::load(shared_tiny_dataset());
    TrainConfig cfg = TrainConfig::tiny_profile();
    TrainSession<float> s(ds.model(), cfg);
    s.finish_pretrain();
    // poison one translator weight
    s.translator().params().back()->value.v[0] = std::numeric_limits<float>::quiet_NaN();
    const Batch b = load_batch(ds, Split::kTrain, {0, 1});
    CHECK_THROWS_AS(s.reconstruction_step(ds, b, 1e-3, cfg.w_lmk), TrainingAbort);
}

TEST_CASE("pretraining drives the landmark loss down and the shape error falls across epochs")
{
    const Dataset ds = Dataset::load(shared_tiny_dataset());
    TrainConfig cfg = TrainConfig::tiny_profile();
    cfg.batch_size = 6;
    cfg.pretrain_iterations = 120;
    cfg.pretrain_lr = 2e-3;
    TrainSession<float> s(ds.model(), cfg);
    std::ostringstream log;
    s.pretrain(ds, &log);
    std::vector<double> lmk, beta;
    std::istringstream is(log.str());
    std::string line;
    while (std::getline(is, line))
    {
        const Json j = Json::parse(line);
        lmk.push_back(j.at("lmk").get<double>());
        beta.push_back(j.at("cycle_shape").get<double>());
    }
    REQUIRE(lmk.size() == 120);
    auto window_mean = [](const std::vector<double>& v, size_t from, size_t n) {
        double s = 0;
        for (size_t i = from; i < from + n; ++i)
            s += v[i];
        return s / n;
    };
    // held-out check on the val split: landmark loss well below the prior's value
    const double lmk_first = window_mean(lmk, 0, 10);
    const double lmk_last = window_mean(lmk, lmk.size() - 10, 10);
    CHECK(lmk_last < 0.25 * lmk_first);
    // epoch-averaged shape regression decreases monotonically
    const size_t epoch = 40;
    double prev = 1e300;
    for (size_t e = 0; e + epoch <= beta.size(); e += epoch)
    {
        const double m = window_mean(beta, e, epoch);
        CHECK(m < prev);
        prev = m;
    }
}

TEST_CASE("a short reconstruction-only run reduces the training loss (windows of 50)")
{
    const Dataset ds = Dataset::load(shared_tiny_dataset());
    TrainConfig cfg = TrainConfig::tiny_profile();
    cfg.batch_size = 4;
    cfg.total_iterations = 200;
    cfg.pretrain_iterations = 60;
    cfg.cycle_enabled = false;
    cfg.checkpoint_every = 0;
    const auto out = scratch_dir("recon200");
    TrainSession<float> s(ds.model(), cfg);
    s.train(ds, out);
    const auto log = read_ndjson(out / "train_log.ndjson");
    std::vector<double> photo;
    for (const auto& line : log)
        if (line.at("pass") == "reconstruction")
            photo.push_back(line.at("photo").get<double>());
    REQUIRE(photo.size() == 200);
    auto mean = [&](size_t from, size_t n) {
        double s2 = 0;
        for (size_t i = from; i < from + n; ++i)
            s2 += photo[i];
        return s2 / n;
    };
    CHECK(mean(150, 50) < mean(0, 50));
}
