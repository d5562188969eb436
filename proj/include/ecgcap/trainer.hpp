// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cmath>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "ecgcap/decoders.hpp"
#include "ecgcap/evalgen.hpp"
#include "ecgcap/metrics.hpp"
#include "ecgcap/model.hpp"
#include "ecgcap/pipeline.hpp"

namespace ecgcap::trainer {

struct TrainConfig {
    double encoder_lr = 4e-4;
    double decoder_lr = 4e-4; // transformer runs use 1e-4 by default in configs
    int batch_size = 32;
    double lr_decay_factor = 0.8;
    int lr_decay_patience = 8;
    int early_stop_patience = 30;
    double teacher_forcing_p = 1.0;
    double lambda_attention = 1.0;
    int max_epochs = 200;
    double grad_clip_norm = 5.0; // <= 0 disables clipping
    uint64_t seed = 0;
    int threads = 0; // 0 = hardware concurrency
    int pretrain_epochs = 0;
    std::size_t generation_max_len = 300;

    void validate() const {
        if (encoder_lr <= 0.0 || decoder_lr <= 0.0)
            throw Error("train config: learning rates must be positive");
        if (batch_size < 1) throw Error("train config: batch_size must be >= 1");
        if (lr_decay_factor <= 0.0 || lr_decay_factor >= 1.0)
            throw Error("train config: decay factor must lie in (0, 1)");
        if (lr_decay_patience < 1 || early_stop_patience < 1)
            throw Error("train config: patience values must be >= 1");
        if (teacher_forcing_p < 0.0 || teacher_forcing_p > 1.0)
            throw Error("train config: teacher forcing p must be in [0, 1]");
        if (lambda_attention < 0.0)
            throw Error("train config: lambda must be >= 0");
        if (max_epochs < 1) throw Error("train config: max_epochs must be >= 1");
    }
};

/// Mean token-level cross-entropy over non-pad positions (logits row t
/// predicts target[t+1]), plus the doubly stochastic penalty when attention
/// weights are supplied.
inline double sequence_loss(const Mat& logits, const std::vector<int>& target,
                            int pad_id, const Mat* alphas, double lambda) {
    if (static_cast<std::size_t>(logits.rows()) + 1 != target.size())
        throw Error("sequence_loss: logits rows must equal target length - 1");
    double total = 0.0;
    std::size_t count = 0;
    for (Eigen::Index t = 0; t < logits.rows(); ++t) {
        int want = target[static_cast<std::size_t>(t) + 1];
        if (want == pad_id) continue;
        double mx = logits.row(t).maxCoeff();
        double z = (logits.row(t).array() - mx).exp().sum();
        total += -(logits(t, want) - mx - std::log(z));
        ++count;
    }
    if (count == 0) throw Error("sequence_loss: all positions padded");
    double loss = total / static_cast<double>(count);
    if (alphas) loss += decoders::doubly_stochastic_penalty(*alphas, lambda);
    return loss;
}

/// Plateau-driven decay and early stopping: the learning rate decays by the
/// factor after every `decay_patience` epochs without improvement, and
/// training stops exactly `stop_patience` epochs after the best one.
class LrSchedule {
public:
    LrSchedule(double decay_factor, int decay_patience, int stop_patience)
        : decay_factor_(decay_factor),
          decay_patience_(decay_patience),
          stop_patience_(stop_patience) {}

    struct Decision {
        bool improved = false;
        bool decay = false;
        bool stop = false;
    };

    Decision observe(double metric) {
        ++epoch_;
        Decision d;
        if (metric > best_metric_) {
            best_metric_ = metric;
            best_epoch_ = epoch_;
            d.improved = true;
            return d;
        }
        int stagnant = epoch_ - best_epoch_;
        if (stagnant % decay_patience_ == 0) d.decay = true;
        if (stagnant >= stop_patience_) d.stop = true;
        return d;
    }

    double decay_factor() const { return decay_factor_; }
    int best_epoch() const { return best_epoch_; }
    double best_metric() const { return best_metric_; }
    int epoch() const { return epoch_; }

private:
    double decay_factor_;
    int decay_patience_;
    int stop_patience_;
    int epoch_ = 0;
    int best_epoch_ = 0;
    double best_metric_ = -std::numeric_limits<double>::infinity();
};

/// Adaptive moment estimation with default moment constants and optional
/// global-norm gradient clipping. Encoder and decoder parameter groups take
/// separate learning rates (the boundary is the bag index).
class Adam {
public:
    explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ad::ParamBag& bag, std::vector<Mat>& grads, int encoder_end,
              double encoder_lr, double decoder_lr, double clip_norm) {
        ++t_;
        if (clip_norm > 0.0) {
            double sq = 0.0;
            for (const auto& g : grads)
                if (g.size()) sq += g.squaredNorm();
            double norm = std::sqrt(sq);
            if (norm > clip_norm) {
                double scale = clip_norm / norm;
                for (auto& g : grads)
                    if (g.size()) g *= scale;
            }
        }
        double bc1 = 1.0 - std::pow(beta1_, t_);
        double bc2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t i = 0; i < bag.size(); ++i) {
            if (!grads[i].size()) continue;
            auto& p = bag[static_cast<int>(i)];
            double lr = static_cast<int>(i) < encoder_end ? encoder_lr : decoder_lr;
            p.adam_m = beta1_ * p.adam_m + (1.0 - beta1_) * grads[i];
            p.adam_v = (beta2_ * p.adam_v.array() +
                        (1.0 - beta2_) * grads[i].array().square())
                           .matrix();
            p.value.array() -= lr * (p.adam_m.array() / bc1) /
                               ((p.adam_v.array() / bc2).sqrt() + eps_);
        }
    }

    int steps_taken() const { return t_; }

private:
    double beta1_, beta2_, eps_;
    int t_ = 0;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_meteor = 0.0;
    double val_bleu1 = 0.0;
    double val_bleu4 = 0.0;
    double val_rouge1_f = 0.0;
    double encoder_lr = 0.0;
    double decoder_lr = 0.0;
    double seconds = 0.0;
};

using TrainHistory = std::vector<EpochRecord>;

struct TrainResult {
    TrainHistory history;
    int best_epoch = 0;
    double best_meteor = 0.0;
    bool early_stopped = false;
};

namespace detail {

struct EpisodeTask {
    const pipeline::PreparedEpisode* episode;
    uint64_t rng_stream;
};

/// Forward+backward for one episode; returns the summed CE and the token
/// count so the caller can form the batch-level token mean.
struct EpisodeLoss {
    double ce_sum = 0.0;
    double penalty = 0.0;
    std::size_t tokens = 0;
};

inline EpisodeLoss episode_pass(const model::Model& m, const Mat& signal,
                                const pipeline::PreparedEpisode& pe,
                                const TrainConfig& cfg, uint64_t rng_stream,
                                double ce_weight, double penalty_weight,
                                std::vector<Mat>& grad_buffer) {
    Rng dropout_rng(Rng::mix(rng_stream, 0xd70b));
    Rng tf_rng(Rng::mix(rng_stream, 0x7f0c));

    ad::Binder bind(m.bag());
    auto& g = bind.graph();
    int features = m.enc().forward(bind, m.normalized(signal));

    std::vector<int> ce_targets(pe.target.begin() + 1, pe.target.end());
    std::vector<bool> active(ce_targets.size(), true);

    EpisodeLoss out;
    out.tokens = ce_targets.size();

    int loss;
    if (m.config().family == model::Family::Lstm) {
        auto tf = m.lstm().teacher_forced(bind, features, pe.target,
                                          cfg.teacher_forcing_p, &tf_rng,
                                          &dropout_rng);
        int ce = g.cross_entropy_cols(tf.logits, ce_targets, active);
        int pen = decoders::doubly_stochastic_penalty(g, tf.alpha_rows,
                                                      cfg.lambda_attention);
        out.ce_sum = g.val(ce)(0, 0);
        out.penalty = g.val(pen)(0, 0);
        loss = g.add(g.scale(ce, ce_weight), g.scale(pen, penalty_weight));
    } else {
        auto fwd = m.transformer().teacher_forced(bind, features, pe.target,
                                                  &dropout_rng);
        int ce = g.cross_entropy_cols(fwd.logits, ce_targets, active);
        out.ce_sum = g.val(ce)(0, 0);
        loss = g.scale(ce, ce_weight);
    }
    g.backward(loss);
    bind.flush_grads(grad_buffer);
    return out;
}

inline double pretrain_pass(const model::Model& m, const Mat& signal, int class_id,
                            double weight, std::vector<Mat>& grad_buffer) {
    ad::Binder bind(m.bag());
    auto& g = bind.graph();
    int features = m.enc().forward(bind, m.normalized(signal));
    int logits = m.enc().pretrain_logits(bind, features);
    int ce = g.cross_entropy_cols(logits, {class_id}, {true});
    double value = g.val(ce)(0, 0);
    g.backward(g.scale(ce, weight));
    bind.flush_grads(grad_buffer);
    return value;
}

inline metrics::MetricReport
validation_report(const model::Model& m, const std::vector<Mat>& signals,
                  const std::vector<pipeline::PreparedEpisode>& split,
                  std::size_t max_len, int threads) {
    std::vector<metrics::Tokens> cands(split.size()), refs(split.size());
    std::vector<std::thread> pool;
    std::size_t chunk = (split.size() + static_cast<std::size_t>(threads) - 1) /
                        static_cast<std::size_t>(threads);
    for (int w = 0; w < threads; ++w) {
        std::size_t lo = static_cast<std::size_t>(w) * chunk;
        std::size_t hi = std::min(split.size(), lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&, lo, hi] {
            for (std::size_t i = lo; i < hi; ++i) {
                auto gen = evalgen::generate(m, signals[split[i].corpus_index],
                                             max_len, 1);
                cands[i] = gen.tokens;
                refs[i] = split[i].ref_tokens;
            }
        });
    }
    for (auto& t : pool) t.join();
    return metrics::corpus_evaluate(cands, refs);
}

} // namespace detail

/// End-to-end optimization: per epoch, shuffle the training split by seed,
/// take Adam steps over batches with separate encoder/decoder learning
/// rates, generate on the validation split, and drive decay/stopping from
/// the validation METEOR. Returns with the model holding the best epoch's
/// parameters.
inline TrainResult train(model::Model& m, const std::vector<Mat>& signals,
                         const pipeline::PreparedData& data,
                         const TrainConfig& cfg, std::ostream* log = nullptr) {
    cfg.validate();
    if (data.train.empty()) throw Error("train: empty training split");
    if (data.validation.empty()) throw Error("train: empty validation split");

    int threads = cfg.threads > 0
                      ? cfg.threads
                      : static_cast<int>(std::thread::hardware_concurrency());
    if (threads < 1) threads = 1;

    Adam adam;
    LrSchedule schedule(cfg.lr_decay_factor, cfg.lr_decay_patience,
                        cfg.early_stop_patience);
    double enc_lr = cfg.encoder_lr, dec_lr = cfg.decoder_lr;

    // optional rhythm-class pretraining of the encoder
    if (cfg.pretrain_epochs > 0) {
        if (m.config().encoder.pretrain_classes <= 0)
            throw Error("train: pretrain_epochs set but no pretraining head configured");
        Adam pre_adam;
        for (int e = 1; e <= cfg.pretrain_epochs; ++e) {
            std::vector<std::size_t> order;
            for (std::size_t i = 0; i < data.train.size(); ++i)
                if (data.train[i].class_id >= 0) order.push_back(i);
            Rng shuffle_rng(Rng::mix(cfg.seed, 0xbead0 + static_cast<uint64_t>(e)));
            for (std::size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1],
                          order[static_cast<std::size_t>(shuffle_rng.uniform_int(
                              0, static_cast<int64_t>(i) - 1))]);
            double loss_sum = 0.0;
            std::size_t batches = 0;
            for (std::size_t at = 0; at < order.size();
                 at += static_cast<std::size_t>(cfg.batch_size)) {
                std::size_t hi = std::min(order.size(),
                                          at + static_cast<std::size_t>(cfg.batch_size));
                std::vector<std::vector<Mat>> buffers(
                    static_cast<std::size_t>(threads),
                    std::vector<Mat>(m.bag().size()));
                std::vector<double> losses(static_cast<std::size_t>(threads), 0.0);
                std::vector<std::thread> pool;
                std::size_t n = hi - at;
                std::size_t chunk = (n + static_cast<std::size_t>(threads) - 1) /
                                    static_cast<std::size_t>(threads);
                for (int w = 0; w < threads; ++w) {
                    std::size_t lo = at + static_cast<std::size_t>(w) * chunk;
                    std::size_t wh = std::min(hi, lo + chunk);
                    if (lo >= wh) break;
                    pool.emplace_back([&, w, lo, wh] {
                        for (std::size_t i = lo; i < wh; ++i) {
                            const auto& pe = data.train[order[i]];
                            losses[static_cast<std::size_t>(w)] += detail::pretrain_pass(
                                m, signals[pe.corpus_index], pe.class_id,
                                1.0 / static_cast<double>(n),
                                buffers[static_cast<std::size_t>(w)]);
                        }
                    });
                }
                for (auto& t : pool) t.join();
                std::vector<Mat> grads(m.bag().size());
                for (auto& buf : buffers)
                    for (std::size_t i = 0; i < buf.size(); ++i) {
                        if (!buf[i].size()) continue;
                        if (!grads[i].size()) grads[i] = std::move(buf[i]);
                        else grads[i] += buf[i];
                    }
                pre_adam.step(m.bag(), grads, m.encoder_param_end(), enc_lr, enc_lr,
                              cfg.grad_clip_norm);
                loss_sum += losses[0];
                for (int w = 1; w < threads; ++w)
                    loss_sum += losses[static_cast<std::size_t>(w)];
                ++batches;
            }
            if (log)
                *log << "pretrain epoch " << e << " loss "
                     << loss_sum / std::max<std::size_t>(1, batches) << "\n";
        }
    }

    TrainResult result;
    std::vector<Mat> best_values;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();

        std::vector<std::size_t> order(data.train.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(Rng::mix(cfg.seed, 0xe90c0 + static_cast<uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1],
                      order[static_cast<std::size_t>(
                          shuffle_rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);

        double epoch_loss = 0.0;
        std::size_t batch_count = 0;
        for (std::size_t at = 0; at < order.size();
             at += static_cast<std::size_t>(cfg.batch_size)) {
            std::size_t hi =
                std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
            std::size_t batch_n = hi - at;

            std::size_t total_tokens = 0;
            for (std::size_t i = at; i < hi; ++i)
                total_tokens += data.train[order[i]].target.size() - 1;
            double ce_weight = 1.0 / static_cast<double>(total_tokens);
            double penalty_weight = 1.0 / static_cast<double>(batch_n);

            std::vector<std::vector<Mat>> buffers(
                static_cast<std::size_t>(threads), std::vector<Mat>(m.bag().size()));
            std::vector<double> ce_sums(static_cast<std::size_t>(threads), 0.0);
            std::vector<double> pen_sums(static_cast<std::size_t>(threads), 0.0);
            std::vector<std::thread> pool;
            std::size_t chunk = (batch_n + static_cast<std::size_t>(threads) - 1) /
                                static_cast<std::size_t>(threads);
            for (int w = 0; w < threads; ++w) {
                std::size_t lo = at + static_cast<std::size_t>(w) * chunk;
                std::size_t wh = std::min(hi, lo + chunk);
                if (lo >= wh) break;
                pool.emplace_back([&, w, lo, wh] {
                    for (std::size_t i = lo; i < wh; ++i) {
                        const auto& pe = data.train[order[i]];
                        uint64_t stream = Rng::mix(
                            Rng::mix(cfg.seed, 0xba7c0 + static_cast<uint64_t>(epoch)),
                            static_cast<uint64_t>(i));
                        auto el = detail::episode_pass(
                            m, signals[pe.corpus_index], pe, cfg, stream, ce_weight,
                            penalty_weight, buffers[static_cast<std::size_t>(w)]);
                        ce_sums[static_cast<std::size_t>(w)] += el.ce_sum;
                        pen_sums[static_cast<std::size_t>(w)] += el.penalty;
                    }
                });
            }
            for (auto& t : pool) t.join();

            std::vector<Mat> grads(m.bag().size());
            for (auto& buf : buffers)
                for (std::size_t i = 0; i < buf.size(); ++i) {
                    if (!buf[i].size()) continue;
                    if (!grads[i].size()) grads[i] = std::move(buf[i]);
                    else grads[i] += buf[i];
                }

            double batch_ce = 0.0, batch_pen = 0.0;
            for (int w = 0; w < threads; ++w) {
                batch_ce += ce_sums[static_cast<std::size_t>(w)];
                batch_pen += pen_sums[static_cast<std::size_t>(w)];
            }
            double batch_loss = batch_ce / static_cast<double>(total_tokens) +
                                batch_pen / static_cast<double>(batch_n);
            if (!std::isfinite(batch_loss))
                throw Error("train: non-finite loss in epoch " +
                            std::to_string(epoch) + " batch " +
                            std::to_string(batch_count));
            epoch_loss += batch_loss;
            ++batch_count;

            adam.step(m.bag(), grads, m.encoder_param_end(), enc_lr, dec_lr,
                      cfg.grad_clip_norm);
        }

        auto report = detail::validation_report(m, signals, data.validation,
                                                cfg.generation_max_len, threads);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = epoch_loss / static_cast<double>(batch_count);
        rec.val_meteor = report.meteor;
        rec.val_bleu1 = report.bleu[0];
        rec.val_bleu4 = report.bleu[3];
        rec.val_rouge1_f = report.rouge1_f;
        rec.encoder_lr = enc_lr;
        rec.decoder_lr = dec_lr;
        rec.seconds = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
        result.history.push_back(rec);
        if (log)
            *log << "epoch " << epoch << " loss " << rec.train_loss << " val METEOR "
                 << rec.val_meteor << " lr " << enc_lr << "/" << dec_lr << " ("
                 << rec.seconds << "s)\n";

        auto decision = schedule.observe(report.meteor);
        if (decision.improved) {
            best_values = m.snapshot_values();
            result.best_epoch = epoch;
            result.best_meteor = report.meteor;
        }
        if (decision.decay) {
            enc_lr *= cfg.lr_decay_factor;
            dec_lr *= cfg.lr_decay_factor;
        }
        if (decision.stop) {
            result.early_stopped = true;
            break;
        }
    }

    if (!best_values.empty()) m.restore_values(best_values);
    return result;
}

inline void write_history(const TrainHistory& history, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write training history: " + path);
    for (const auto& r : history) {
        nlohmann::json j = {{"epoch", r.epoch},
                            {"train_loss", r.train_loss},
                            {"val_meteor", r.val_meteor},
                            {"val_bleu1", r.val_bleu1},
                            {"val_bleu4", r.val_bleu4},
                            {"val_rouge1_f", r.val_rouge1_f},
                            {"encoder_lr", r.encoder_lr},
                            {"decoder_lr", r.decoder_lr},
                            {"seconds", r.seconds}};
        out << j.dump() << '\n';
    }
}

} // namespace ecgcap::trainer
