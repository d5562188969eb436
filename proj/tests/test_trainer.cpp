// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <sstream>

#include "ecgcap/trainer.hpp"

using ecgcap::Mat;
using ecgcap::Rng;
namespace tr = ecgcap::trainer;
namespace ec = ecgcap::corpus;
namespace ds = ecgcap::datasplit;
namespace pl = ecgcap::pipeline;
namespace md = ecgcap::model;

namespace {

// micro synthetic setup shared by the training tests
struct Micro {
    ec::SyntheticCorpus synth;
    ds::SplitAssignment split;
    pl::PreparedData data;
    std::vector<Mat> signals;

    explicit Micro(int episodes_per_class = 10, uint64_t seed = 3) {
        auto spec = ec::default_synthetic_spec();
        spec.episodes_per_class = episodes_per_class;
        spec.sampling_rate_hz = 64;
        spec.duration_s = 4.0;
        synth = ec::generate_synthetic(spec, seed);
        split = ds::split_grouped(synth.corpus, {0.7, 0.15, 0.15}, seed);
        pl::PrepOptions opts;
        data = pl::prepare(synth.corpus, split, opts);
        signals = synth.signals;
    }
};

md::ModelConfig micro_lstm_config(int vocab_unused = 0) {
    md::ModelConfig cfg;
    cfg.family = md::Family::Lstm;
    cfg.encoder.depth = 18;
    cfg.encoder.input_leads = 1;
    cfg.encoder.output_channels = 16;
    cfg.encoder.k_out = 4;
    cfg.lstm.embed_dim = 24;
    cfg.lstm.hidden_dim = 32;
    cfg.lstm.attn_dim = 16;
    cfg.lstm.dropout = 0.0;
    cfg.lstm.lambda_attention = 1.0;
    return cfg;
}

tr::TrainConfig micro_train_config() {
    tr::TrainConfig cfg;
    cfg.encoder_lr = 2e-3;
    cfg.decoder_lr = 2e-3;
    cfg.batch_size = 16;
    cfg.max_epochs = 10;
    cfg.seed = 5;
    cfg.threads = 2;
    cfg.generation_max_len = 40;
    return cfg;
}

} // namespace

TEST_CASE("sequence_loss analytic cases") {
    // uniform logits over V tokens -> ln V per position
    Mat logits = Mat::Zero(3, 5);
    std::vector<int> target = {0, 1, 2, 3};
    CHECK(tr::sequence_loss(logits, target, /*pad=*/4, nullptr, 0.0) ==
          Catch::Approx(std::log(5.0)).margin(1e-12));

    // one-hot-correct logits with a large margin -> loss ~ 0
    Mat sharp = Mat::Zero(3, 5);
    for (int t = 0; t < 3; ++t) sharp(t, target[static_cast<std::size_t>(t) + 1]) = 50.0;
    CHECK(tr::sequence_loss(sharp, target, 4, nullptr, 0.0) ==
          Catch::Approx(0.0).margin(1e-12));

    // pad positions are masked out of the mean
    std::vector<int> padded = {0, 1, 4, 4};
    Mat l2 = Mat::Zero(3, 5);
    l2(0, 1) = 50.0;
    CHECK(tr::sequence_loss(l2, padded, 4, nullptr, 0.0) ==
          Catch::Approx(0.0).margin(1e-12));

    std::vector<int> all_pad = {0, 4, 4, 4};
    CHECK_THROWS_AS(tr::sequence_loss(l2, all_pad, 4, nullptr, 0.0), ecgcap::Error);
}

TEST_CASE("sequence_loss matches an independent scalar recomputation") {
    Rng rng(9);
    Mat logits(3, 5);
    for (int t = 0; t < 3; ++t)
        for (int v = 0; v < 5; ++v) logits(t, v) = rng.normal();
    std::vector<int> target = {0, 2, 4, 1};

    // hand recomputation
    double expected = 0.0;
    for (int t = 0; t < 3; ++t) {
        double z = 0.0;
        for (int v = 0; v < 5; ++v) z += std::exp(logits(t, v));
        expected += -std::log(std::exp(logits(t, target[static_cast<std::size_t>(t) + 1])) / z);
    }
    expected /= 3.0;
    CHECK(tr::sequence_loss(logits, target, 6, nullptr, 0.0) ==
          Catch::Approx(expected).margin(1e-10));

    // attention penalty added when alphas present
    Mat alphas(3, 2);
    alphas << 1, 0, 1, 0, 1, 0;
    double pen = ecgcap::decoders::doubly_stochastic_penalty(alphas, 2.0);
    CHECK(tr::sequence_loss(logits, target, 6, &alphas, 2.0) ==
          Catch::Approx(expected + pen).margin(1e-10));
}

TEST_CASE("schedule: decay by 0.8 after 8 stagnant epochs, stop after 30") {
    tr::LrSchedule s(0.8, 8, 30);
    double lr = 4e-4;

    auto d = s.observe(0.5); // epoch 1: improvement
    CHECK(d.improved);

    int decays = 0, epoch_of_stop = -1;
    for (int e = 2; e <= 60; ++e) {
        d = s.observe(0.5); // plateau forever
        if (d.decay) {
            lr *= s.decay_factor();
            ++decays;
            if (decays == 1) {
                // first decay exactly 8 epochs after the best epoch
                CHECK(e == 1 + 8);
                CHECK(lr == Catch::Approx(3.2e-4));
            }
        }
        if (d.stop) {
            epoch_of_stop = e;
            break;
        }
    }
    CHECK(epoch_of_stop == 1 + 30);
    CHECK(decays == 3); // stagnant epochs 8, 16, 24 before the stop at 30
}

TEST_CASE("schedule: improvement resets the stagnation counter") {
    tr::LrSchedule s(0.8, 2, 5);
    CHECK(s.observe(0.1).improved);
    CHECK_FALSE(s.observe(0.1).improved); // stagnant 1
    CHECK(s.observe(0.2).improved);       // reset at epoch 3
    auto d = s.observe(0.2);              // stagnant 1
    CHECK_FALSE(d.decay);
    d = s.observe(0.2); // stagnant 2 -> decay
    CHECK(d.decay);
    CHECK_FALSE(d.stop);
    s.observe(0.2);     // 3
    s.observe(0.2);     // 4
    d = s.observe(0.2); // stagnant 5 -> stop
    CHECK(d.stop);
    CHECK(s.best_epoch() == 3);
}

TEST_CASE("one Adam step at tiny lr decreases the same batch's loss") {
    Micro micro(6);
    auto mcfg = micro_lstm_config();
    md::Model model(mcfg, micro.data.vocab, /*init_seed=*/7);

    auto cfg = micro_train_config();
    cfg.teacher_forcing_p = 1.0;

    auto batch_loss = [&](bool compute_grads, std::vector<Mat>* grads) {
        double ce = 0.0, pen = 0.0;
        std::size_t tokens = 0;
        for (const auto& pe : micro.data.train) tokens += pe.target.size() - 1;
        for (std::size_t i = 0; i < micro.data.train.size(); ++i) {
            const auto& pe = micro.data.train[i];
            std::vector<Mat> local(model.bag().size());
            auto el = tr::detail::episode_pass(
                model, micro.signals[pe.corpus_index], pe, cfg,
                /*rng_stream=*/ecgcap::Rng::mix(1, i),
                1.0 / static_cast<double>(tokens),
                1.0 / static_cast<double>(micro.data.train.size()),
                compute_grads ? *grads : local);
            ce += el.ce_sum;
            pen += el.penalty;
        }
        return ce / static_cast<double>(tokens) +
               pen / static_cast<double>(micro.data.train.size());
    };

    std::vector<Mat> grads(model.bag().size());
    double before = batch_loss(true, &grads);

    tr::Adam adam;
    adam.step(model.bag(), grads, model.encoder_param_end(), 1e-5, 1e-5, 0.0);
    double after = batch_loss(false, nullptr);
    CHECK(after < before);
}

TEST_CASE("training: fixed seed gives identical epoch 1..3 losses") {
    Micro micro(8);
    auto cfg = micro_train_config();
    cfg.max_epochs = 3;

    std::vector<double> losses1, losses2;
    {
        md::Model model(micro_lstm_config(), micro.data.vocab, 7);
        auto r = tr::train(model, micro.signals, micro.data, cfg);
        for (const auto& rec : r.history) losses1.push_back(rec.train_loss);
    }
    {
        md::Model model(micro_lstm_config(), micro.data.vocab, 7);
        auto r = tr::train(model, micro.signals, micro.data, cfg);
        for (const auto& rec : r.history) losses2.push_back(rec.train_loss);
    }
    REQUIRE(losses1.size() == 3);
    REQUIRE(losses2.size() == 3);
    for (int e = 0; e < 3; ++e)
        CHECK(losses1[static_cast<std::size_t>(e)] ==
              losses2[static_cast<std::size_t>(e)]);
}

TEST_CASE("training: validation METEOR improves over epoch 1 within 10 epochs") {
    Micro micro(10);
    md::Model model(micro_lstm_config(), micro.data.vocab, 11);
    auto cfg = micro_train_config();

    auto r = tr::train(model, micro.signals, micro.data, cfg);
    REQUIRE(!r.history.empty());
    double epoch1 = r.history.front().val_meteor;
    double best = 0.0;
    for (const auto& rec : r.history) best = std::max(best, rec.val_meteor);
    INFO("epoch1 " << epoch1 << " best " << best);
    CHECK(best > epoch1);

    // returned checkpoint's METEOR equals the history maximum
    CHECK(r.best_meteor == Catch::Approx(best));

    // learning rates non-increasing, only by factor steps
    for (std::size_t i = 1; i < r.history.size(); ++i) {
        double prev = r.history[i - 1].encoder_lr, cur = r.history[i].encoder_lr;
        CHECK(cur <= prev + 1e-15);
        bool same = std::fabs(cur - prev) < 1e-15;
        bool stepped = std::fabs(cur - prev * cfg.lr_decay_factor) < 1e-15;
        CHECK((same || stepped));
    }
}

TEST_CASE("training: transformer path runs and learns at micro scale") {
    Micro micro(8);
    md::ModelConfig mcfg;
    mcfg.family = md::Family::Transformer;
    mcfg.encoder.depth = 18;
    mcfg.encoder.input_leads = 1;
    mcfg.encoder.output_channels = 16;
    mcfg.encoder.k_out = 1;
    mcfg.transformer.model_dim = 16;
    mcfg.transformer.layers = 1;
    mcfg.transformer.heads = 2;
    mcfg.transformer.ff_dim = 32;
    mcfg.transformer.dropout = 0.0;
    mcfg.transformer.max_token_positions = 40;
    md::Model model(mcfg, micro.data.vocab, 13);

    auto cfg = micro_train_config();
    cfg.max_epochs = 6;
    auto r = tr::train(model, micro.signals, micro.data, cfg);
    REQUIRE(r.history.size() >= 2);
    double first = r.history.front().train_loss;
    double last = r.history.back().train_loss;
    CHECK(last < first);
}

TEST_CASE("training: pretraining epochs run when a head is configured") {
    Micro micro(6);
    auto mcfg = micro_lstm_config();
    mcfg.encoder.pretrain_classes =
        static_cast<int>(micro.data.class_names.size());
    md::Model model(mcfg, micro.data.vocab, 17);

    auto cfg = micro_train_config();
    cfg.max_epochs = 1;
    cfg.pretrain_epochs = 2;
    std::ostringstream log;
    auto r = tr::train(model, micro.signals, micro.data, cfg, &log);
    CHECK(r.history.size() == 1);
    CHECK(log.str().find("pretrain epoch 1") != std::string::npos);
    CHECK(log.str().find("pretrain epoch 2") != std::string::npos);

    // head missing -> error
    md::Model bare(micro_lstm_config(), micro.data.vocab, 17);
    CHECK_THROWS_AS(tr::train(bare, micro.signals, micro.data, cfg), ecgcap::Error);
}

TEST_CASE("history serialization") {
    tr::TrainHistory h;
    tr::EpochRecord r;
    r.epoch = 1;
    r.train_loss = 2.5;
    r.val_meteor = 0.4;
    r.encoder_lr = 4e-4;
    h.push_back(r);
    std::string path = "history_test.jsonl";
    tr::write_history(h, path);
    std::ifstream in(path);
    std::string line;
    REQUIRE(std::getline(in, line));
    auto j = nlohmann::json::parse(line);
    CHECK(j["epoch"] == 1);
    CHECK(j["val_meteor"] == Catch::Approx(0.4));
    std::remove(path.c_str());
}
