// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include "ecgcap/autodiff.hpp"
#include "ecgcap/common.hpp"

namespace ecgcap::encoder {

/// Input signal normalization mode (the network itself carries no
/// normalization layers).
enum class SignalNorm { None, Episode, Dataset };

inline const char* signal_norm_name(SignalNorm m) {
    switch (m) {
        case SignalNorm::None: return "none";
        case SignalNorm::Episode: return "episode";
        case SignalNorm::Dataset: return "dataset";
    }
    return "?";
}

inline SignalNorm signal_norm_from_name(const std::string& s) {
    if (s == "none") return SignalNorm::None;
    if (s == "episode") return SignalNorm::Episode;
    if (s == "dataset") return SignalNorm::Dataset;
    throw Error("unknown normalization mode: '" + s + "'");
}

/// Per-lead statistics for SignalNorm::Dataset, computed on the training
/// split and carried in the checkpoint.
struct DatasetStats {
    Vec mean;
    Vec stddev;
};

struct EncoderConfig {
    int depth = 34; // 18 or 34
    int input_leads = 12;
    int stem_kernel = 9;
    std::array<int, 4> stage_kernels{9, 7, 7, 5};
    int output_channels = 512; // stage widths are oc/8, oc/4, oc/2, oc
    int k_out = 240;           // K temporal positions after adaptive pooling
    int pretrain_classes = 0;  // 0 = no classification head
    SignalNorm normalization = SignalNorm::None;

    void validate() const {
        if (depth != 18 && depth != 34)
            throw Error("encoder config: depth must be 18 or 34");
        if (input_leads < 1) throw Error("encoder config: input_leads must be >= 1");
        if (stem_kernel < 1 || stem_kernel % 2 == 0)
            throw Error("encoder config: stem_kernel must be odd");
        for (int k : stage_kernels)
            if (k < 1 || k % 2 == 0)
                throw Error("encoder config: stage kernels must be odd");
        if (output_channels < 8 || output_channels % 8 != 0)
            throw Error("encoder config: output_channels must be a multiple of 8");
        if (k_out < 1) throw Error("encoder config: K must be >= 1");
        if (pretrain_classes < 0)
            throw Error("encoder config: pretrain_classes must be >= 0");
    }

    std::array<int, 4> stage_widths() const {
        return {output_channels / 8, output_channels / 4, output_channels / 2,
                output_channels};
    }

    std::array<int, 4> stage_blocks() const {
        if (depth == 18) return {2, 2, 2, 2};
        return {3, 4, 6, 3};
    }
};

inline Mat normalize_signal(const Mat& signal, SignalNorm mode,
                            const DatasetStats* stats = nullptr) {
    switch (mode) {
        case SignalNorm::None: return signal;
        case SignalNorm::Episode: {
            Mat out = signal;
            for (Eigen::Index lead = 0; lead < out.rows(); ++lead) {
                double mu = out.row(lead).mean();
                double sd = std::sqrt((out.row(lead).array() - mu).square().mean());
                out.row(lead) = (out.row(lead).array() - mu) / std::max(sd, 1e-8);
            }
            return out;
        }
        case SignalNorm::Dataset: {
            if (!stats || stats->mean.size() != signal.rows())
                throw Error("dataset normalization requires per-lead stats");
            Mat out = signal;
            for (Eigen::Index lead = 0; lead < out.rows(); ++lead)
                out.row(lead) = (out.row(lead).array() - stats->mean(lead)) /
                                std::max(stats->stddev(lead), 1e-8);
            return out;
        }
    }
    return signal;
}

/// 1D residual network over the temporal axis. Canonical 18/34-layer recipe:
/// strided stem + max pool, four stages with stride-2 entry into stages 2-4,
/// identity shortcuts with 1x1 projection on width or stride change, and a
/// final adaptive average pooling to exactly K positions. No normalization
/// layers.
class Encoder {
public:
    Encoder(EncoderConfig cfg, ad::ParamBag& bag, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        auto widths = cfg_.stage_widths();
        auto blocks = cfg_.stage_blocks();

        stem_ = add_conv(bag, rng, "enc.stem", widths[0], cfg_.input_leads,
                         cfg_.stem_kernel);
        int in_w = widths[0];
        for (int s = 0; s < 4; ++s) {
            std::vector<Block> stage;
            int k = cfg_.stage_kernels[static_cast<std::size_t>(s)];
            for (int b = 0; b < blocks[static_cast<std::size_t>(s)]; ++b) {
                Block blk;
                blk.stride = (s > 0 && b == 0) ? 2 : 1;
                blk.kernel = k;
                std::string base = "enc.s" + std::to_string(s + 1) + ".b" +
                                   std::to_string(b);
                int out_w = widths[static_cast<std::size_t>(s)];
                blk.c1 = add_conv(bag, rng, base + ".c1", out_w, in_w, k);
                blk.c2 = add_conv(bag, rng, base + ".c2", out_w, out_w, k);
                blk.has_proj = (blk.stride != 1 || in_w != out_w);
                if (blk.has_proj)
                    blk.proj = add_conv(bag, rng, base + ".proj", out_w, in_w, 1);
                stage.push_back(blk);
                in_w = out_w;
            }
            stages_.push_back(std::move(stage));
        }

        if (cfg_.pretrain_classes > 0) {
            // head starts from zeros
            head_w_ = bag.add("enc.head.w",
                              Mat::Zero(cfg_.pretrain_classes, cfg_.output_channels));
            head_b_ = bag.add("enc.head.b", Mat::Zero(cfg_.pretrain_classes, 1));
        }

        first_param_ = stem_.w;
        last_param_ = static_cast<int>(bag.size()) - 1;
    }

    const EncoderConfig& config() const { return cfg_; }

    /// Raw signal (leads x samples) -> embedding var (output_channels x K).
    int forward(ad::Binder& bind, const Mat& signal) const {
        if (signal.rows() != cfg_.input_leads)
            throw Error("encoder: signal has " + std::to_string(signal.rows()) +
                        " leads, config expects " + std::to_string(cfg_.input_leads));
        check_length(signal.cols());

        auto& g = bind.graph();
        int x = g.input(signal);
        x = g.relu(g.conv1d(x, bind(stem_.w), bind(stem_.b), cfg_.stem_kernel, 2));
        x = g.maxpool1d(x, 3, 2, 1);
        for (const auto& stage : stages_) {
            for (const auto& blk : stage) {
                int branch = g.relu(
                    g.conv1d(x, bind(blk.c1.w), bind(blk.c1.b), blk.kernel, blk.stride));
                branch = g.conv1d(branch, bind(blk.c2.w), bind(blk.c2.b), blk.kernel, 1);
                int shortcut = x;
                if (blk.has_proj)
                    shortcut = g.conv1d(x, bind(blk.proj.w), bind(blk.proj.b), 1,
                                        blk.stride);
                x = g.relu(g.add(branch, shortcut));
            }
        }
        return g.adaptive_avg_pool(x, cfg_.k_out);
    }

    /// Mean over the K positions then affine map to class scores.
    int pretrain_logits(ad::Binder& bind, int embedding) const {
        if (cfg_.pretrain_classes <= 0)
            throw Error("encoder: pretraining head not configured");
        auto& g = bind.graph();
        int pooled = g.mean_cols(embedding); // (C x 1)
        return g.add_col(g.matmul(bind(head_w_), pooled), bind(head_b_));
    }

    /// Temporal length after the stem, pool, and strided stages.
    long output_length(long input_samples) const {
        long len = input_samples;
        auto down = [&](int stride) { len = (len - 1) / stride + 1; };
        down(2); // stem
        down(2); // max pool
        down(2); // stage 2 entry
        down(2); // stage 3 entry
        down(2); // stage 4 entry
        return len;
    }

    /// Exact count of trainable scalars for a config (verified against the
    /// actual parameter storage in tests).
    static std::size_t parameter_count(const EncoderConfig& cfg) {
        cfg.validate();
        auto widths = cfg.stage_widths();
        auto blocks = cfg.stage_blocks();
        auto conv = [](int out, int in, int k) {
            return static_cast<std::size_t>(out) * in * k + static_cast<std::size_t>(out);
        };
        std::size_t n = conv(widths[0], cfg.input_leads, cfg.stem_kernel);
        int in_w = widths[0];
        for (int s = 0; s < 4; ++s) {
            int k = cfg.stage_kernels[static_cast<std::size_t>(s)];
            int out_w = widths[static_cast<std::size_t>(s)];
            for (int b = 0; b < blocks[static_cast<std::size_t>(s)]; ++b) {
                int stride = (s > 0 && b == 0) ? 2 : 1;
                n += conv(out_w, in_w, k) + conv(out_w, out_w, k);
                if (stride != 1 || in_w != out_w) n += conv(out_w, in_w, 1);
                in_w = out_w;
            }
        }
        if (cfg.pretrain_classes > 0)
            n += conv(cfg.pretrain_classes, cfg.output_channels, 1);
        return n;
    }

    std::pair<int, int> param_range() const { return {first_param_, last_param_}; }

private:
    struct ConvP {
        int w = -1, b = -1;
    };
    struct Block {
        ConvP c1, c2, proj;
        bool has_proj = false;
        int stride = 1;
        int kernel = 3;
    };

    static ConvP add_conv(ad::ParamBag& bag, Rng& rng, const std::string& name,
                          int out, int in, int k) {
        double std = std::sqrt(2.0 / (static_cast<double>(in) * k));
        Mat w(out, in * k);
        for (Eigen::Index i = 0; i < w.rows(); ++i)
            for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = std * rng.normal();
        ConvP p;
        p.w = bag.add(name + ".w", std::move(w));
        p.b = bag.add(name + ".b", Mat::Zero(out, 1));
        return p;
    }

    void check_length(long samples) const {
        // five stride-2 reductions: anything shorter is pure padding
        if (samples < 32)
            throw Error("encoder: signal of " + std::to_string(samples) +
                        " samples is shorter than the network can downsample");
    }

    EncoderConfig cfg_;
    ConvP stem_;
    std::vector<std::vector<Block>> stages_;
    int head_w_ = -1, head_b_ = -1;
    int first_param_ = -1, last_param_ = -1;
};

} // namespace ecgcap::encoder
