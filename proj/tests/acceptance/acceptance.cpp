// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite. Runs every gate criterion at its stated tolerance and
// prints one PASS/FAIL line per criterion; informational checks print INFO
// and never fail the run. Exit status is 0 only when every gated criterion
// holds.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ecgcap/corpus.hpp"
#include "ecgcap/datasplit.hpp"
#include "ecgcap/decoders.hpp"
#include "ecgcap/encoder.hpp"
#include "ecgcap/evalgen.hpp"
#include "ecgcap/metrics.hpp"
#include "ecgcap/model.hpp"
#include "ecgcap/pipeline.hpp"
#include "ecgcap/textprep.hpp"
#include "ecgcap/trainer.hpp"
#include "support/gradcheck.hpp"
#include "support/metric_oracle.hpp"

using namespace ecgcap;
namespace ec = corpus;
namespace ds = datasplit;
namespace pl = pipeline;
namespace md = model;
namespace tr = trainer;
namespace ev = evalgen;
namespace tp = textprep;
namespace em = metrics;
namespace en = ecgcap::encoder;
namespace dc = decoders;

namespace {

int g_failures = 0;

void report(const std::string& name, bool pass, const std::string& detail,
            double seconds) {
    std::printf("[%s] %-28s %s (%.1fs)\n", pass ? "PASS" : "FAIL", name.c_str(),
                detail.c_str(), seconds);
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

void info(const std::string& name, const std::string& detail) {
    std::printf("[INFO] %-28s %s\n", name.c_str(), detail.c_str());
    std::fflush(stdout);
}

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    }
};

Mat random_mat(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
    return m;
}

std::vector<std::string> toks(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string w;
    while (is >> w) out.push_back(w);
    return out;
}

// ---------------------------------------------------------------------------
// Criterion 1: metric oracle equivalence (tolerance 1e-9, runtime < 1 s)
// ---------------------------------------------------------------------------
void criterion_metric_oracle() {
    Timer timer;
    bool ok = true;
    std::string detail;

    std::vector<std::pair<const char*, const char*>> fixture = {
        {"sinus rhythm", "sinus rhythm"},
        {"sinus rhythm , normal ecg", "sinus rhythm , normal ecg"},
        {"atrial fibrillation detected", "atrial fibrillation detected"},
        {"atrial fibrillation with rapid ventricular rate",
         "atrial fibrillation with slow ventricular response"},
        {"the the the", "the cat"},
        {"normal sinus rhythm", "sinus rhythm normal"},
        {"heart rate 140 beats per minute", "heart rate 150 beats per minute"},
        {"premature ventricular contraction noted",
         "frequent premature ventricular contraction"},
        {"no significant pause", "pause of 3 seconds recorded"},
        {"tachycardia", "tachycardia"},
        {"sinus bradycardia rate 44", "sinus bradycardia at rate 44"},
        {"noise artifact only", "undersensing with noise artifact"},
        {"patient asymptomatic during episode", "patient symptomatic"},
        {"atrial flutter with variable block",
         "atrial flutter with 2 : 1 conduction"},
        {"rhythm rhythm rhythm rhythm", "rhythm rhythm"},
        {"ventricular tachycardia nonsustained",
         "nonsustained ventricular tachycardia"},
        {"normal ecg", "completely different report"},
        {"a b c d e f", "a b c d e f"},
        {"irregular rhythm consistent with atrial fibrillation",
         "irregular rhythm , atrial fibrillation likely"},
        {"end of episode", "episode end marker"},
    };
    std::vector<em::Tokens> cands, refs;
    for (auto& [c, r] : fixture) {
        cands.push_back(toks(c));
        refs.push_back(toks(r));
    }

    double worst = 0.0;
    for (std::size_t n = 1; n <= 4 && ok; ++n) {
        double got = em::bleu(cands, refs, n);
        double want = oracle::bleu(cands, refs, n);
        worst = std::max(worst, std::fabs(got - want));
        if (std::fabs(got - want) > 1e-9) {
            ok = false;
            detail = "BLEU-" + std::to_string(n) + " deviates";
        }
    }
    for (std::size_t i = 0; i < cands.size() && ok; ++i) {
        double gm = em::meteor(cands[i], refs[i]);
        double wm = oracle::meteor(cands[i], refs[i]);
        worst = std::max(worst, std::fabs(gm - wm));
        auto gr = em::rouge1(cands[i], refs[i]);
        auto wr = oracle::rouge1(cands[i], refs[i]);
        worst = std::max({worst, std::fabs(gr.precision - wr.p),
                          std::fabs(gr.recall - wr.r), std::fabs(gr.f1 - wr.f)});
        if (worst > 1e-9) {
            ok = false;
            detail = "pair " + std::to_string(i) + " deviates";
        }
    }

    // frozen hand-computed cases
    if (ok) {
        double b = em::bleu({toks("the the the")}, {toks("the cat")}, 1);
        if (std::fabs(b - 1.0 / 3.0) > 1e-9) { ok = false; detail = "BLEU clipping"; }
        double m1 = em::meteor(toks("atrial fibrillation detected"),
                               toks("atrial fibrillation detected"));
        if (std::fabs(m1 - (1.0 - 0.5 / 27.0)) > 1e-9) { ok = false; detail = "METEOR 0.98148"; }
        if (std::fabs(m1 - 0.98148) > 5e-6) { ok = false; detail = "METEOR 0.98148"; }
        double m2 = em::meteor(toks("tachycardia"), toks("tachycardia"));
        if (std::fabs(m2 - 0.5) > 1e-9) { ok = false; detail = "METEOR 0.5"; }
        auto r = em::rouge1(toks("sinus rhythm"), toks("sinus rhythm observed"));
        if (std::fabs(r.precision - 1.0) > 1e-9 ||
            std::fabs(r.recall - 2.0 / 3.0) > 1e-9 || std::fabs(r.f1 - 0.8) > 1e-9) {
            ok = false;
            detail = "ROUGE hand case";
        }
    }
    double secs = timer.seconds();
    if (ok && secs >= 1.0) { ok = false; detail = "runtime over 1 s"; }
    if (ok) {
        std::ostringstream os;
        os << "20-pair fixture, max |impl - oracle| " << worst;
        detail = os.str();
    }
    report("metric-oracle-equivalence", ok, detail, secs);
}

// ---------------------------------------------------------------------------
// Criterion 2: gradient checks (< 30 s, rel err < 1e-4 on every parameter)
// ---------------------------------------------------------------------------
void criterion_gradient_checks() {
    Timer timer;
    bool ok = true;
    std::string detail;
    double worst = 0.0;
    auto run = [&](const char* name, ad::ParamBag& bag,
                   const gradcheck::LossBuilder& build) {
        auto r = gradcheck::check(bag, build);
        worst = std::max(worst, r.max_rel_error);
        if (r.max_rel_error >= 1e-4) {
            ok = false;
            detail = std::string(name) + " rel err " + std::to_string(r.max_rel_error) +
                     " at " + r.worst_param;
        }
    };

    { // attention layer (Eq. 3-4 form)
        dc::LstmDecoderConfig cfg;
        cfg.vocab_size = 7;
        cfg.feature_dim = 6;
        cfg.embed_dim = 5;
        cfg.hidden_dim = 4;
        cfg.attn_dim = 3;
        cfg.dropout = 0.0;
        ad::ParamBag bag;
        Rng rng(21);
        dc::LstmDecoder model(cfg, bag, rng);
        Rng frng(22);
        Mat features = random_mat(cfg.feature_dim, 4, frng);
        Mat h = random_mat(cfg.hidden_dim, 1, frng);
        Mat wgt = random_mat(cfg.feature_dim, 1, frng);
        Mat awgt = random_mat(1, 4, frng);
        run("attention", bag, [&](ad::Binder& bind) {
            auto& g = bind.graph();
            auto att = model.attend(bind, g.input(h), g.input(features));
            return g.add(g.sum_all(g.mul(att.context, g.input(wgt))),
                         g.sum_all(g.mul(att.alpha, g.input(awgt))));
        });
    }
    { // one LSTM cell step
        dc::LstmDecoderConfig cfg;
        cfg.vocab_size = 7;
        cfg.feature_dim = 6;
        cfg.embed_dim = 5;
        cfg.hidden_dim = 4;
        cfg.attn_dim = 3;
        cfg.dropout = 0.0;
        ad::ParamBag bag;
        Rng rng(23);
        dc::LstmDecoder model(cfg, bag, rng);
        Rng brng(24);
        for (std::size_t p = 0; p < bag.size(); ++p) {
            Mat& v = bag[static_cast<int>(p)].value;
            if (v.cols() == 1)
                for (Eigen::Index i = 0; i < v.rows(); ++i)
                    v(i, 0) = 0.2 * brng.normal();
        }
        Rng frng(25);
        Mat features = random_mat(cfg.feature_dim, 3, frng);
        Mat wgt = random_mat(cfg.vocab_size, 1, frng);
        Mat hwgt = random_mat(cfg.hidden_dim, 1, frng);
        run("lstm-cell", bag, [&](ad::Binder& bind) {
            auto& g = bind.graph();
            int f = g.input(features);
            auto state = model.init_state(bind, f);
            auto so = model.step(bind, state, f, 1, nullptr);
            return g.add(g.sum_all(g.mul(so.logits, g.input(wgt))),
                         g.sum_all(g.mul(state.h, g.input(hwgt))));
        });
    }
    { // doubly stochastic penalty
        ad::ParamBag bag;
        Rng rng(26);
        int scores = bag.add("scores", random_mat(3, 4, rng));
        run("penalty", bag, [&](ad::Binder& bind) {
            auto& g = bind.graph();
            std::vector<int> rows;
            for (int t = 0; t < 3; ++t)
                rows.push_back(g.softmax_rows(g.slice_rows(bind(scores), t, 1)));
            return dc::doubly_stochastic_penalty(g, rows, 1.3);
        });
    }
    { // one Transformer layer (model_dim 8, K=2, T=3)
        dc::TransformerConfig cfg;
        cfg.vocab_size = 6;
        cfg.feature_dim = 8;
        cfg.model_dim = 8;
        cfg.layers = 1;
        cfg.heads = 2;
        cfg.ff_dim = 10;
        cfg.k_positions = 2;
        cfg.max_token_positions = 8;
        cfg.dropout = 0.0;
        ad::ParamBag bag;
        Rng rng(27);
        dc::TransformerDecoder model(cfg, bag, rng);
        Rng frng(28);
        Mat features = random_mat(cfg.feature_dim, 2, frng, 0.5);
        std::vector<int> target = {0, 1, 2, 3};
        std::vector<int> ce_targets = {1, 2, 3};
        std::vector<bool> active = {true, true, true};
        run("transformer-layer", bag, [&](ad::Binder& bind) {
            auto& g = bind.graph();
            auto out = model.teacher_forced(bind, g.input(features), target, nullptr);
            return g.cross_entropy_cols(out.logits, ce_targets, active);
        });
    }
    { // residual encoder stack at tiny dims (covers one block and more)
        en::EncoderConfig cfg;
        cfg.depth = 18;
        cfg.input_leads = 1;
        cfg.output_channels = 8;
        cfg.k_out = 4;
        cfg.stem_kernel = 5;
        cfg.stage_kernels = {5, 3, 3, 3};
        ad::ParamBag bag;
        Rng rng(7);
        en::Encoder enc(cfg, bag, rng);
        Rng brng(17);
        for (std::size_t p = 0; p < bag.size(); ++p) {
            Mat& v = bag[static_cast<int>(p)].value;
            if (v.cols() == 1)
                for (Eigen::Index i = 0; i < v.rows(); ++i)
                    v(i, 0) = 0.2 * brng.normal();
        }
        Rng srng(8);
        Mat signal = random_mat(1, 64, srng);
        Rng wrng(9);
        Mat wgt = random_mat(8, 4, wrng);
        run("residual-block", bag, [&](ad::Binder& bind) {
            auto& g = bind.graph();
            int emb = enc.forward(bind, signal);
            return g.sum_all(g.mul(emb, g.input(wgt)));
        });
    }

    double secs = timer.seconds();
    if (ok && secs >= 30.0) { ok = false; detail = "runtime over 30 s"; }
    if (ok) {
        std::ostringstream os;
        os << "5 checks, worst rel err " << worst;
        detail = os.str();
    }
    report("gradient-checks", ok, detail, secs);
}

// ---------------------------------------------------------------------------
// Criterion 3: attention normalization over 100 random forward passes
// ---------------------------------------------------------------------------
void criterion_attention_normalization() {
    Timer timer;
    bool ok = true;
    std::string detail;

    { // LSTM decoder
        dc::LstmDecoderConfig cfg;
        cfg.vocab_size = 9;
        cfg.feature_dim = 8;
        cfg.embed_dim = 6;
        cfg.hidden_dim = 6;
        cfg.attn_dim = 5;
        cfg.dropout = 0.0;
        ad::ParamBag bag;
        Rng rng(31);
        dc::LstmDecoder model(cfg, bag, rng);
        Rng drng(32);
        for (int pass = 0; pass < 100 && ok; ++pass) {
            Mat features = random_mat(cfg.feature_dim, 5, drng);
            std::vector<int> target = {0, 1, 2, 3, 4};
            ad::Binder bind(bag, false);
            auto out = model.teacher_forced(bind, bind.graph().input(features),
                                            target, 1.0, nullptr, nullptr);
            for (Eigen::Index t = 0; t < out.alphas.rows(); ++t) {
                if (out.alphas.row(t).minCoeff() < 0.0 ||
                    std::fabs(out.alphas.row(t).sum() - 1.0) > 1e-6) {
                    ok = false;
                    detail = "LSTM row not normalized on pass " + std::to_string(pass);
                }
            }
        }
    }
    if (ok) { // Transformer decoder
        dc::TransformerConfig cfg;
        cfg.vocab_size = 9;
        cfg.feature_dim = 8;
        cfg.model_dim = 8;
        cfg.layers = 2;
        cfg.heads = 2;
        cfg.ff_dim = 12;
        cfg.k_positions = 3;
        cfg.max_token_positions = 8;
        cfg.dropout = 0.0;
        ad::ParamBag bag;
        Rng rng(33);
        dc::TransformerDecoder model(cfg, bag, rng);
        Rng drng(34);
        for (int pass = 0; pass < 100 && ok; ++pass) {
            Mat features = random_mat(cfg.feature_dim, 3, drng);
            std::vector<int> target = {0, 1, 2, 3};
            ad::Binder bind(bag, false);
            auto out = model.teacher_forced(bind, bind.graph().input(features),
                                            target, nullptr);
            for (Eigen::Index r = 0; r < out.last_attention.rows(); ++r) {
                if (out.last_attention.row(r).minCoeff() < 0.0 ||
                    std::fabs(out.last_attention.row(r).sum() - 1.0) > 1e-6) {
                    ok = false;
                    detail = "Transformer row not normalized on pass " +
                             std::to_string(pass);
                }
            }
        }
    }
    if (ok) detail = "100 passes per decoder, rows sum to 1 within 1e-6";
    report("attention-normalization", ok, detail, timer.seconds());
}

// ---------------------------------------------------------------------------
// Criterion 4: causality (future tokens cannot influence earlier logits)
// ---------------------------------------------------------------------------
void criterion_causality() {
    Timer timer;
    bool ok = true;
    std::string detail;

    { // Transformer: perturb a future input token
        dc::TransformerConfig cfg;
        cfg.vocab_size = 9;
        cfg.feature_dim = 8;
        cfg.model_dim = 8;
        cfg.layers = 2;
        cfg.heads = 2;
        cfg.ff_dim = 12;
        cfg.k_positions = 2;
        cfg.max_token_positions = 8;
        cfg.dropout = 0.0;
        ad::ParamBag bag;
        Rng rng(41);
        dc::TransformerDecoder model(cfg, bag, rng);
        Rng frng(42);
        Mat features = random_mat(cfg.feature_dim, 2, frng);
        std::vector<int> t1 = {0, 1, 2, 3, 4};
        for (std::size_t flip = 1; flip + 1 < t1.size() && ok; ++flip) {
            auto t2 = t1;
            t2[flip] = 7;
            ad::Binder b1(bag, false), b2(bag, false);
            auto r1 = model.teacher_forced(b1, b1.graph().input(features), t1, nullptr);
            auto r2 = model.teacher_forced(b2, b2.graph().input(features), t2, nullptr);
            const Mat& l1 = b1.graph().val(r1.logits);
            const Mat& l2 = b2.graph().val(r2.logits);
            for (std::size_t t = 0; t < flip; ++t)
                if ((l1.col(static_cast<Eigen::Index>(t)) -
                     l2.col(static_cast<Eigen::Index>(t)))
                        .cwiseAbs()
                        .maxCoeff() > 1e-12) {
                    ok = false;
                    detail = "transformer logits at step " + std::to_string(t) +
                             " saw future token " + std::to_string(flip);
                }
            if (ok && (l1.col(static_cast<Eigen::Index>(flip)) -
                       l2.col(static_cast<Eigen::Index>(flip)))
                              .cwiseAbs()
                              .maxCoeff() == 0.0) {
                ok = false;
                detail = "transformer perturbation had no effect at all";
            }
        }
    }
    if (ok) { // LSTM at p=1: ground-truth-only conditioning
        dc::LstmDecoderConfig cfg;
        cfg.vocab_size = 9;
        cfg.feature_dim = 6;
        cfg.embed_dim = 5;
        cfg.hidden_dim = 4;
        cfg.attn_dim = 3;
        cfg.dropout = 0.0;
        ad::ParamBag bag;
        Rng rng(43);
        dc::LstmDecoder model(cfg, bag, rng);
        Rng frng(44);
        Mat features = random_mat(cfg.feature_dim, 3, frng);
        std::vector<int> t1 = {0, 1, 2, 3, 4, 5};
        for (std::size_t flip = 1; flip + 1 < t1.size() && ok; ++flip) {
            auto t2 = t1;
            t2[flip] = 8;
            ad::Binder b1(bag, false), b2(bag, false);
            auto r1 = model.teacher_forced(b1, b1.graph().input(features), t1, 1.0,
                                           nullptr, nullptr);
            auto r2 = model.teacher_forced(b2, b2.graph().input(features), t2, 1.0,
                                           nullptr, nullptr);
            const Mat& l1 = b1.graph().val(r1.logits);
            const Mat& l2 = b2.graph().val(r2.logits);
            for (std::size_t t = 0; t < flip; ++t)
                if ((l1.col(static_cast<Eigen::Index>(t)) -
                     l2.col(static_cast<Eigen::Index>(t)))
                        .cwiseAbs()
                        .maxCoeff() > 1e-12) {
                    ok = false;
                    detail = "lstm logits at step " + std::to_string(t) +
                             " depended on a later target token";
                }
        }
    }
    if (ok) detail = "future-token perturbations leave earlier logits unchanged";
    report("causality", ok, detail, timer.seconds());
}

// ---------------------------------------------------------------------------
// Criteria 5 and 6: desk-scale end-to-end training and the sanity-check drop
// ---------------------------------------------------------------------------
void criterion_desk_e2e_and_sanity() {
    Timer timer;

    auto spec = ec::default_synthetic_spec(); // 5 classes x 400, 1 lead, 128 Hz, 10 s
    auto synth = ec::generate_synthetic(spec, 41);
    auto split = ds::split_grouped(synth.corpus, {0.8, 0.1, 0.1}, 41);
    pl::PrepOptions opts;
    auto data = pl::prepare(synth.corpus, split, opts);

    auto evaluate_test = [&](const md::Model& m) {
        std::vector<em::Tokens> cands, refs;
        for (const auto& pe : data.test) {
            auto gen = ev::generate(m, synth.signals[pe.corpus_index], 40, 1);
            cands.push_back(gen.tokens);
            refs.push_back(pe.ref_tokens);
        }
        return em::corpus_evaluate(cands, refs);
    };

    // LSTM desk model: stage widths /8, K = 16
    md::ModelConfig lstm_cfg;
    lstm_cfg.family = md::Family::Lstm;
    lstm_cfg.encoder.depth = 34;
    lstm_cfg.encoder.input_leads = 1;
    lstm_cfg.encoder.output_channels = 64;
    lstm_cfg.encoder.k_out = 16;
    lstm_cfg.lstm.embed_dim = 64;
    lstm_cfg.lstm.hidden_dim = 64;
    lstm_cfg.lstm.attn_dim = 64;
    lstm_cfg.lstm.dropout = 0.1;

    tr::TrainConfig tcfg;
    tcfg.encoder_lr = 4e-4;
    tcfg.decoder_lr = 4e-4;
    tcfg.batch_size = 32;
    tcfg.max_epochs = 14;
    tcfg.lambda_attention = 0.1;
    tcfg.seed = 41;
    tcfg.generation_max_len = 40;

    md::Model lstm_model(lstm_cfg, data.vocab, 41);
    auto lstm_result = tr::train(lstm_model, synth.signals, data, tcfg);
    auto lstm_test = evaluate_test(lstm_model);

    // Transformer desk model: K = 1
    md::ModelConfig tf_cfg;
    tf_cfg.family = md::Family::Transformer;
    tf_cfg.encoder.depth = 34;
    tf_cfg.encoder.input_leads = 1;
    tf_cfg.encoder.output_channels = 64;
    tf_cfg.encoder.k_out = 1;
    tf_cfg.transformer.model_dim = 64;
    tf_cfg.transformer.layers = 2;
    tf_cfg.transformer.heads = 4;
    tf_cfg.transformer.ff_dim = 256;
    tf_cfg.transformer.dropout = 0.0;
    tf_cfg.transformer.max_token_positions = 40;

    md::Model tf_model(tf_cfg, data.vocab, 41);
    auto tf_result = tr::train(tf_model, synth.signals, data, tcfg);
    auto tf_test = evaluate_test(tf_model);

    double secs = timer.seconds();
    bool ok = lstm_test.meteor >= 0.80 && tf_test.meteor >= 0.80 && secs <= 1200.0;
    std::ostringstream os;
    os << "held-out METEOR lstm " << lstm_test.meteor << " (best val "
       << lstm_result.best_meteor << "), transformer " << tf_test.meteor
       << " (best val " << tf_result.best_meteor << "), threshold 0.80";
    report("desk-scale-end-to-end", ok, os.str(), secs);

    // sanity drop on the desk-scale LSTM model
    Timer t2;
    auto sc = ev::sanity_check(lstm_model, synth.signals, data.test, 40);
    bool sane = sc.relative_meteor_drop >= 0.30 && sc.distinct_ones_reports == 1;
    std::ostringstream os2;
    os2 << "METEOR " << sc.real.meteor << " -> " << sc.ones.meteor << " ("
        << 100.0 * sc.relative_meteor_drop << "% drop), "
        << sc.distinct_ones_reports << " distinct ones-report";
    report("sanity-check-drop", sane, os2.str(), t2.seconds());
}

// ---------------------------------------------------------------------------
// Criterion 7: preprocessing golden tests
// ---------------------------------------------------------------------------
void criterion_preprocessing() {
    Timer timer;
    bool ok = true;
    std::string detail;

    // every abbreviation row unifies, case-insensitively, idempotently
    auto table = tp::builtin_abbreviation_table();
    for (const auto& [term, unified] : table.rules()) {
        if (!ok) break;
        if (tp::unify_abbreviations(term, table) != unified ||
            tp::unify_abbreviations("x " + term + " y", table) !=
                "x " + unified + " y") {
            ok = false;
            detail = "row '" + term + "' failed";
        }
        std::string upper = term;
        std::transform(upper.begin(), upper.end(), upper.begin(),
                       [](unsigned char c) { return std::toupper(c); });
        if (ok && tp::unify_abbreviations(upper, table) != unified) {
            ok = false;
            detail = "uppercase '" + term + "' failed";
        }
        auto once = tp::unify_abbreviations("a " + term + " b", table);
        if (ok && tp::unify_abbreviations(once, table) != once) {
            ok = false;
            detail = "idempotence broken for '" + term + "'";
        }
    }
    if (ok && tp::unify_abbreviations("pt has af w/ rvr", table) !=
                  "patient has atrial fibrillation with rapid ventricular rate") {
        ok = false;
        detail = "composite unification example failed";
    }

    // tokenizer fixtures
    struct Case {
        const char* text;
        std::vector<std::string> want;
    };
    const Case cases[] = {
        {"sinus rhythm, normal ecg", {"sinus", "rhythm", ",", "normal", "ecg"}},
        {"af/aflutter", {"af", "/", "aflutter"}},
        {"hr 140 bpm", {"hr", "140", "bpm"}},
        {"12.5 mm", {"12", ".", "5", "mm"}},
        {"2:1 block", {"2", ":", "1", "block"}},
        {"", {}},
    };
    for (const auto& c : cases) {
        if (ok && tp::tokenize(c.text) != c.want) {
            ok = false;
            detail = std::string("tokenizer fixture '") + c.text + "' failed";
        }
    }

    // vocabulary counts against an independent counter
    if (ok) {
        Rng rng(51);
        std::vector<std::string> stream;
        for (int i = 0; i < 2000; ++i)
            stream.push_back("tok" + std::to_string(rng.uniform_int(0, 39)));
        auto vocab = tp::build_vocabulary({stream}, 1, 10);
        std::map<std::string, int> counts;
        for (const auto& t : stream) ++counts[t];
        std::vector<std::pair<std::string, int>> ranked(counts.begin(), counts.end());
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        for (int i = 0; i < 10 && ok; ++i)
            if (vocab.token_of(i) != ranked[static_cast<std::size_t>(i)].first) {
                ok = false;
                detail = "vocabulary rank " + std::to_string(i) + " mismatch";
            }
    }

    // dedup rule and split exclusivity over 20 seeds
    if (ok) {
        ec::Corpus corpus;
        int id = 0;
        for (int g = 0; g < 40; ++g) {
            int size = 1 + (g * 5) % 9;
            for (int e = 0; e < size; ++e) {
                ec::EcgEpisode ep;
                ep.episode_id = "E" + std::to_string(id++);
                ep.group_id = "g" + std::to_string(g);
                ep.sampling_rate_hz = 1;
                ep.leads = 1;
                ep.samples = 1;
                ep.report = "r" + std::to_string(g);
                ep.rhythm_class = "c";
                ep.recorded_at = "2024-01-01";
                corpus.episodes.push_back(ep);
            }
        }
        // duplicates collapse to one survivor per group key
        auto dup = corpus;
        dup.episodes.push_back(dup.episodes[0]);
        dup.episodes.back().episode_id = "Edup";
        auto deduped = ds::deduplicate(dup, 3);
        std::size_t expected = corpus.episodes.size() -
                               (1 + (0 * 5) % 9 - 1); // group g0 collapses entirely
        // each group's episodes share report/class/date -> one survivor per group
        std::set<std::string> groups;
        for (const auto& ep : corpus.episodes) groups.insert(ep.group_id);
        if (deduped.size() != groups.size()) {
            ok = false;
            detail = "dedup kept " + std::to_string(deduped.size()) + ", expected " +
                     std::to_string(groups.size());
        }
        (void)expected;
        if (ok && ds::deduplicate(deduped, 3).size() != deduped.size()) {
            ok = false;
            detail = "dedup not idempotent";
        }

        for (uint64_t seed = 0; seed < 20 && ok; ++seed) {
            auto assignment = ds::split_grouped(corpus, {0.8, 0.1, 0.1}, seed);
            std::map<std::string, std::set<ds::Split>> seen;
            for (const auto& ep : corpus.episodes)
                seen[ep.group_id].insert(assignment.of(ep.episode_id));
            for (const auto& [gid, splits] : seen)
                if (splits.size() != 1) {
                    ok = false;
                    detail = "group split across sets at seed " + std::to_string(seed);
                }
            if (assignment.by_episode.size() != corpus.episodes.size()) {
                ok = false;
                detail = "partition incomplete at seed " + std::to_string(seed);
            }
        }
    }

    if (ok) detail = "abbreviation rows, tokenizer, vocabulary, dedup, splits";
    report("preprocessing-goldens", ok, detail, timer.seconds());
}

// ---------------------------------------------------------------------------
// Criterion 8: schedule conformance
// ---------------------------------------------------------------------------
void criterion_schedule() {
    Timer timer;
    bool ok = true;
    std::string detail;

    tr::LrSchedule schedule(0.8, 8, 30);
    double lr = 4e-4;
    schedule.observe(0.5); // best at epoch 1
    int first_decay_epoch = -1, stop_epoch = -1, decays = 0;
    for (int e = 2; e <= 80; ++e) {
        auto d = schedule.observe(0.5);
        if (d.decay) {
            lr *= schedule.decay_factor();
            ++decays;
            if (first_decay_epoch < 0) first_decay_epoch = e;
        }
        if (d.stop) {
            stop_epoch = e;
            break;
        }
    }
    if (first_decay_epoch != 9) {
        ok = false;
        detail = "first decay at epoch " + std::to_string(first_decay_epoch) +
                 ", expected 9 (8 stagnant epochs after the best)";
    } else if (std::fabs(4e-4 * 0.8 - 3.2e-4) > 1e-12 ||
               std::fabs(lr - 4e-4 * std::pow(0.8, decays)) > 1e-15) {
        ok = false;
        detail = "decay factor drift";
    } else if (stop_epoch != 31) {
        ok = false;
        detail = "stop at epoch " + std::to_string(stop_epoch) + ", expected 31";
    }
    if (ok)
        detail = "decay 4e-4 -> 3.2e-4 after 8 stagnant epochs; stop 30 after best";
    report("schedule-conformance", ok, detail, timer.seconds());
}

// ---------------------------------------------------------------------------
// Criterion 9: determinism
// ---------------------------------------------------------------------------
void criterion_determinism() {
    Timer timer;
    bool ok = true;
    std::string detail;

    auto spec = ec::default_synthetic_spec();
    spec.episodes_per_class = 8;
    spec.sampling_rate_hz = 64;
    spec.duration_s = 4.0;
    auto synth = ec::generate_synthetic(spec, 5);
    auto split = ds::split_grouped(synth.corpus, {0.7, 0.15, 0.15}, 5);
    pl::PrepOptions opts;
    auto data = pl::prepare(synth.corpus, split, opts);

    md::ModelConfig mcfg;
    mcfg.family = md::Family::Lstm;
    mcfg.encoder.depth = 18;
    mcfg.encoder.input_leads = 1;
    mcfg.encoder.output_channels = 16;
    mcfg.encoder.k_out = 4;
    mcfg.lstm.embed_dim = 24;
    mcfg.lstm.hidden_dim = 32;
    mcfg.lstm.attn_dim = 16;
    mcfg.lstm.dropout = 0.1; // exercises the dropout rng streams too

    tr::TrainConfig tcfg;
    tcfg.encoder_lr = 2e-3;
    tcfg.decoder_lr = 2e-3;
    tcfg.batch_size = 16;
    tcfg.max_epochs = 3;
    tcfg.seed = 5;
    tcfg.threads = 2;
    tcfg.generation_max_len = 40;
    tcfg.lambda_attention = 0.1;

    std::vector<double> losses1, losses2;
    std::vector<std::string> gen1, gen2;
    for (int run = 0; run < 2; ++run) {
        md::Model m(mcfg, data.vocab, 7);
        auto r = tr::train(m, synth.signals, data, tcfg);
        auto& losses = run == 0 ? losses1 : losses2;
        for (const auto& rec : r.history) losses.push_back(rec.train_loss);
        auto& gens = run == 0 ? gen1 : gen2;
        for (const auto& pe : data.test) {
            auto g = ev::generate(m, synth.signals[pe.corpus_index], 40, 1);
            std::string flat;
            for (const auto& t : g.tokens) flat += t + ' ';
            gens.push_back(flat);
        }
    }
    if (losses1.size() != 3 || losses1 != losses2) {
        ok = false;
        detail = "epoch losses differ between identical runs";
    } else if (gen1 != gen2) {
        ok = false;
        detail = "generated reports differ between identical runs";
    }
    if (ok)
        detail = "identical epoch 1..3 losses and identical top-1 generations";
    report("determinism", ok, detail, timer.seconds());
}

// ---------------------------------------------------------------------------
// Informational: parameter counts of the full-size configurations
// ---------------------------------------------------------------------------
void informational_parameter_counts() {
    en::EncoderConfig enc34;
    enc34.depth = 34;
    enc34.input_leads = 12;
    enc34.output_channels = 512;
    enc34.k_out = 240;
    enc34.pretrain_classes = 6;
    auto n34 = en::Encoder::parameter_count(enc34);

    en::EncoderConfig enc18 = enc34;
    enc18.depth = 18;
    enc18.pretrain_classes = 0;
    auto n18 = en::Encoder::parameter_count(enc18);

    // decoder sizes measured from actual parameter storage at vocab 1028
    std::vector<std::string> content;
    for (int i = 0; i < 1024; ++i) content.push_back("t" + std::to_string(i));
    tp::Vocabulary vocab(content);

    ad::ParamBag lstm_bag;
    Rng r1(1);
    dc::LstmDecoderConfig lc;
    lc.vocab_size = vocab.size();
    dc::LstmDecoder lstm(lc, lstm_bag, r1);

    ad::ParamBag tf_bag;
    Rng r2(2);
    dc::TransformerConfig tc;
    tc.vocab_size = vocab.size();
    tc.k_positions = 1;
    dc::TransformerDecoder tf(tc, tf_bag, r2);

    auto fmt = [](std::size_t n) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2fM", static_cast<double>(n) / 1e6);
        return std::string(buf);
    };
    info("parameter-counts",
         "encoder-34 " + fmt(n34) + " (published 13.76M), encoder-18 " + fmt(n18) +
             " (published 6.93M), lstm decoder " + fmt(lstm_bag.scalar_count()) +
             " (published 5.52M), transformer decoder " +
             fmt(tf_bag.scalar_count()) + " (published 38.36M)");
    info("parameter-counts",
         "deviations reflect head/bias accounting differences and are documented "
         "in the README, not gated");
}

} // namespace

int main(int argc, char** argv) {
    bool skip_e2e = false;
    for (int i = 1; i < argc; ++i)
        if (std::strcmp(argv[i], "--skip-e2e") == 0) skip_e2e = true;

    Timer total;
    criterion_metric_oracle();
    criterion_gradient_checks();
    criterion_attention_normalization();
    criterion_causality();
    criterion_preprocessing();
    criterion_schedule();
    criterion_determinism();
    informational_parameter_counts();
    if (!skip_e2e) {
        criterion_desk_e2e_and_sanity();
    } else {
        std::printf("[SKIP] desk-scale-end-to-end and sanity-check-drop (--skip-e2e)\n");
    }

    std::printf("----\n%s: %d failure(s), %.1fs total\n",
                g_failures == 0 ? "ACCEPTANCE PASSED" : "ACCEPTANCE FAILED",
                g_failures, total.seconds());
    return g_failures == 0 ? 0 : 1;
}
