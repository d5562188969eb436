// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "ecgcap/autodiff.hpp"
#include "ecgcap/common.hpp"

namespace ecgcap::decoders {

// ---------------------------------------------------------------------------
// Doubly stochastic attention penalty
// ---------------------------------------------------------------------------

/// lambda * sum_k (1 - sum_t alpha_{t,k})^2 over a (steps x K) attention
/// matrix. Value-level form used for reporting and tests.
inline double doubly_stochastic_penalty(const Mat& alphas, double lambda) {
    if (lambda < 0.0) throw Error("doubly_stochastic_penalty: lambda must be >= 0");
    if (lambda == 0.0) return 0.0;
    double total = 0.0;
    for (Eigen::Index k = 0; k < alphas.cols(); ++k) {
        double deficit = 1.0 - alphas.col(k).sum();
        total += deficit * deficit;
    }
    return lambda * total;
}

/// Graph form over per-step (1 x K) attention row vars.
inline int doubly_stochastic_penalty(ad::Graph& g,
                                     const std::vector<int>& alpha_rows,
                                     double lambda) {
    if (alpha_rows.empty()) throw Error("doubly_stochastic_penalty: no steps");
    int colsum = alpha_rows[0];
    for (std::size_t t = 1; t < alpha_rows.size(); ++t)
        colsum = g.add(colsum, alpha_rows[t]);
    int deficit = g.rsub_scalar(colsum, 1.0);
    return g.scale(g.sum_all(g.square(deficit)), lambda);
}

// ---------------------------------------------------------------------------
// LSTM decoder with soft temporal attention
// ---------------------------------------------------------------------------

struct LstmDecoderConfig {
    int vocab_size = 0;   // includes the four specials
    int feature_dim = 512;
    int embed_dim = 512;
    int hidden_dim = 512;
    int attn_dim = 512;
    double dropout = 0.5;
    double lambda_attention = 1.0;
    double teacher_forcing_p = 1.0;

    void validate() const {
        if (vocab_size < 5) throw Error("lstm decoder: vocab_size too small");
        if (feature_dim < 1 || embed_dim < 1 || hidden_dim < 1 || attn_dim < 1)
            throw Error("lstm decoder: dimensions must be positive");
        if (dropout < 0.0 || dropout >= 1.0)
            throw Error("lstm decoder: dropout must be in [0, 1)");
        if (lambda_attention < 0.0) throw Error("lstm decoder: lambda must be >= 0");
        if (teacher_forcing_p < 0.0 || teacher_forcing_p > 1.0)
            throw Error("lstm decoder: teacher forcing p must be in [0, 1]");
    }
};

namespace detail {

inline Mat xavier(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    double std = std::sqrt(1.0 / static_cast<double>(cols));
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = std * rng.normal();
    return m;
}

inline Mat he(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    double std = std::sqrt(2.0 / static_cast<double>(cols));
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = std * rng.normal();
    return m;
}

/// Inverted dropout mask as a constant graph node; nullptr rng means
/// evaluation mode (identity).
inline int dropout(ad::Graph& g, int x, double rate, Rng* rng) {
    if (!rng || rate <= 0.0) return x;
    const Mat& v = g.val(x);
    Mat mask(v.rows(), v.cols());
    double keep = 1.0 - rate;
    for (Eigen::Index i = 0; i < v.rows(); ++i)
        for (Eigen::Index j = 0; j < v.cols(); ++j)
            mask(i, j) = (rng->uniform() < keep) ? 1.0 / keep : 0.0;
    return g.mul(x, g.input(std::move(mask)));
}

} // namespace detail

/// Generates one token at a time conditioned on a context vector, the
/// previous hidden state, and the previous token. The attention scores are
/// w^T relu(W1 h_prev + W2 f_k), normalized over the K temporal positions.
class LstmDecoder {
public:
    LstmDecoder(LstmDecoderConfig cfg, ad::ParamBag& bag, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        const int V = cfg_.vocab_size, E = cfg_.embed_dim, H = cfg_.hidden_dim;
        const int C = cfg_.feature_dim, A = cfg_.attn_dim;

        embed_ = bag.add("dec.embed", 0.1 * detail::xavier(E, V, rng));
        attn_w1_ = bag.add("dec.attn.w1", detail::xavier(A, H, rng));
        attn_w2_ = bag.add("dec.attn.w2", detail::xavier(A, C, rng));
        attn_v_ = bag.add("dec.attn.w", detail::xavier(A, 1, rng));
        init_h_w_ = bag.add("dec.init_h.w", detail::xavier(H, C, rng));
        init_h_b_ = bag.add("dec.init_h.b", Mat::Zero(H, 1));
        init_c_w_ = bag.add("dec.init_c.w", detail::xavier(H, C, rng));
        init_c_b_ = bag.add("dec.init_c.b", Mat::Zero(H, 1));
        lstm_wx_ = bag.add("dec.lstm.wx", detail::xavier(4 * H, E + C, rng));
        lstm_wh_ = bag.add("dec.lstm.wh", detail::xavier(4 * H, H, rng));
        lstm_b_ = bag.add("dec.lstm.b", Mat::Zero(4 * H, 1));
        out_w_ = bag.add("dec.out.w", detail::xavier(V, H + C, rng));
        out_b_ = bag.add("dec.out.b", Mat::Zero(V, 1));
    }

    const LstmDecoderConfig& config() const { return cfg_; }

    struct Attend {
        int alpha;   // (1 x K), softmax-normalized
        int context; // (feature_dim x 1)
    };

    /// Eq.-style additive attention over the feature columns.
    Attend attend(ad::Binder& bind, int h_prev, int features) const {
        auto& g = bind.graph();
        int proj_h = g.matmul(bind(attn_w1_), h_prev);   // (A x 1)
        int proj_f = g.matmul(bind(attn_w2_), features); // (A x K)
        int act = g.relu(g.add_col(proj_f, proj_h));
        int scores = g.matmul_tn(bind(attn_v_), act);    // (1 x K)
        int alpha = g.softmax_rows(scores);
        int context = g.matmul_nt(features, alpha);      // (C x 1)
        return {alpha, context};
    }

    struct State {
        int h;
        int c;
    };

    /// Hidden and cell state from the mean feature column via learned affine
    /// maps.
    State init_state(ad::Binder& bind, int features) const {
        auto& g = bind.graph();
        int mean = g.mean_cols(features);
        State s;
        s.h = g.add_col(g.matmul(bind(init_h_w_), mean), bind(init_h_b_));
        s.c = g.add_col(g.matmul(bind(init_c_w_), mean), bind(init_c_b_));
        return s;
    }

    struct StepOut {
        int logits; // (V x 1)
        int alpha;  // (1 x K)
    };

    /// One decode step: consumes the input token, returns next-token logits.
    StepOut step(ad::Binder& bind, State& state, int features, int token_id,
                 Rng* dropout_rng) const {
        auto& g = bind.graph();
        int e = g.gather_cols(bind(embed_), {token_id});
        e = detail::dropout(g, e, cfg_.dropout, dropout_rng);

        Attend att = attend(bind, state.h, features);
        int x = g.concat_rows(e, att.context); // (E + C x 1)

        const int H = cfg_.hidden_dim;
        int gates = g.add_col(
            g.add(g.matmul(bind(lstm_wx_), x), g.matmul(bind(lstm_wh_), state.h)),
            bind(lstm_b_)); // (4H x 1)
        int gi = g.sigmoid(g.slice_rows(gates, 0, H));
        int gf = g.sigmoid(g.slice_rows(gates, H, H));
        int gg = g.tanh(g.slice_rows(gates, 2 * H, H));
        int go = g.sigmoid(g.slice_rows(gates, 3 * H, H));
        state.c = g.add(g.mul(gf, state.c), g.mul(gi, gg));
        state.h = g.mul(go, g.tanh(state.c));

        int pre_out = g.concat_rows(state.h, att.context);
        pre_out = detail::dropout(g, pre_out, cfg_.dropout, dropout_rng);
        int logits = g.add_col(g.matmul(bind(out_w_), pre_out), bind(out_b_));
        return {logits, att.alpha};
    }

    struct TeacherForced {
        int logits = -1;            // (V x T) graph var
        std::vector<int> alpha_rows; // per-step (1 x K) graph vars
        Mat alphas;                 // (T x K) values snapshot
        int steps = 0;
    };

    /// Teacher-forced pass over a target sequence [start, w1..wn, end].
    /// Position t consumes target[t] (or the previous argmax with probability
    /// 1 - p) and predicts target[t+1]; T = len - 1 steps.
    TeacherForced teacher_forced(ad::Binder& bind, int features,
                                 const std::vector<int>& target,
                                 double teacher_forcing_p, Rng* tf_rng,
                                 Rng* dropout_rng) const {
        if (target.size() < 2)
            throw Error("lstm decoder: target must hold at least start and end");
        auto& g = bind.graph();
        State state = init_state(bind, features);
        int steps = static_cast<int>(target.size()) - 1;

        TeacherForced out;
        out.steps = steps;
        out.alphas.resize(steps, g.val(features).cols());
        std::vector<int> logit_cols;
        int prev_argmax = target[0];
        for (int t = 0; t < steps; ++t) {
            int input_token = target[static_cast<std::size_t>(t)];
            if (teacher_forcing_p < 1.0 && t > 0) {
                double roll = tf_rng ? tf_rng->uniform() : 0.0;
                if (roll >= teacher_forcing_p) input_token = prev_argmax;
            }
            StepOut so = step(bind, state, features, input_token, dropout_rng);
            logit_cols.push_back(so.logits);
            out.alpha_rows.push_back(so.alpha);
            out.alphas.row(t) = g.val(so.alpha).row(0);

            Eigen::Index best = 0;
            g.val(so.logits).col(0).maxCoeff(&best);
            prev_argmax = static_cast<int>(best);
        }
        out.logits = g.concat_cols(logit_cols);
        return out;
    }

private:
    LstmDecoderConfig cfg_;
    int embed_, attn_w1_, attn_w2_, attn_v_;
    int init_h_w_, init_h_b_, init_c_w_, init_c_b_;
    int lstm_wx_, lstm_wh_, lstm_b_;
    int out_w_, out_b_;
};

// ---------------------------------------------------------------------------
// Transformer decoder over [f_1..f_K, e_1..e_T]
// ---------------------------------------------------------------------------

struct TransformerConfig {
    int vocab_size = 0;
    int feature_dim = 512;
    int model_dim = 512;
    int layers = 12;
    int heads = 8;
    int ff_dim = 2048;
    int k_positions = 1;        // K feature positions
    int max_token_positions = 300;
    double dropout = 0.5;

    void validate() const {
        if (vocab_size < 5) throw Error("transformer: vocab_size too small");
        if (model_dim < 1 || layers < 1 || heads < 1 || ff_dim < 1)
            throw Error("transformer: dimensions must be positive");
        if (model_dim % heads != 0)
            throw Error("transformer: model_dim must divide evenly into heads");
        if (k_positions < 1) throw Error("transformer: K must be >= 1");
        if (max_token_positions < 2)
            throw Error("transformer: max_token_positions too small");
        if (dropout < 0.0 || dropout >= 1.0)
            throw Error("transformer: dropout must be in [0, 1)");
    }
};

/// Prefix-causal mask over K feature positions and T token positions:
/// features attend among themselves; token t attends to all features and to
/// tokens <= t. Additive form (0 allowed, -1e30 blocked).
inline Mat prefix_causal_mask(int k, int t) {
    int s = k + t;
    Mat m = Mat::Constant(s, s, -1e30);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) m(i, j) = 0.0;
    for (int i = 0; i < t; ++i) {
        for (int j = 0; j < k; ++j) m(k + i, j) = 0.0;
        for (int j = 0; j <= i; ++j) m(k + i, k + j) = 0.0;
    }
    return m;
}

/// Standard multi-head self-attention stack (post-norm) over the concatenated
/// signal-plus-token sequence. Loss is taken at token positions only.
class TransformerDecoder {
public:
    TransformerDecoder(TransformerConfig cfg, ad::ParamBag& bag, Rng& rng)
        : cfg_(cfg) {
        cfg_.validate();
        const int V = cfg_.vocab_size, D = cfg_.model_dim;

        embed_ = bag.add("dec.embed", 0.1 * detail::xavier(D, V, rng));
        pos_tok_ = bag.add("dec.pos_tok",
                           0.1 * detail::xavier(D, cfg_.max_token_positions, rng));
        if (cfg_.k_positions > 1)
            pos_feat_ = bag.add("dec.pos_feat",
                                0.1 * detail::xavier(D, cfg_.k_positions, rng));
        if (cfg_.feature_dim != cfg_.model_dim) {
            proj_w_ = bag.add("dec.proj.w", detail::xavier(D, cfg_.feature_dim, rng));
            proj_b_ = bag.add("dec.proj.b", Mat::Zero(D, 1));
        }

        for (int l = 0; l < cfg_.layers; ++l) {
            Layer layer;
            std::string base = "dec.l" + std::to_string(l);
            layer.wq = bag.add(base + ".wq", detail::xavier(D, D, rng));
            layer.bq = bag.add(base + ".bq", Mat::Zero(D, 1));
            layer.wk = bag.add(base + ".wk", detail::xavier(D, D, rng));
            layer.bk = bag.add(base + ".bk", Mat::Zero(D, 1));
            layer.wv = bag.add(base + ".wv", detail::xavier(D, D, rng));
            layer.bv = bag.add(base + ".bv", Mat::Zero(D, 1));
            layer.wo = bag.add(base + ".wo", detail::xavier(D, D, rng));
            layer.bo = bag.add(base + ".bo", Mat::Zero(D, 1));
            layer.ln1_g = bag.add(base + ".ln1.g", Mat::Ones(D, 1));
            layer.ln1_b = bag.add(base + ".ln1.b", Mat::Zero(D, 1));
            layer.ff1_w = bag.add(base + ".ff1.w", detail::he(cfg_.ff_dim, D, rng));
            layer.ff1_b = bag.add(base + ".ff1.b", Mat::Zero(cfg_.ff_dim, 1));
            layer.ff2_w = bag.add(base + ".ff2.w", detail::xavier(D, cfg_.ff_dim, rng));
            layer.ff2_b = bag.add(base + ".ff2.b", Mat::Zero(D, 1));
            layer.ln2_g = bag.add(base + ".ln2.g", Mat::Ones(D, 1));
            layer.ln2_b = bag.add(base + ".ln2.b", Mat::Zero(D, 1));
            layers_.push_back(layer);
        }
        vocab_w_ = bag.add("dec.vocab.w", detail::xavier(V, D, rng));
        vocab_b_ = bag.add("dec.vocab.b", Mat::Zero(V, 1));
    }

    const TransformerConfig& config() const { return cfg_; }

    /// X = [f_1..f_K, e_1..e_T] with learned positional embeddings on token
    /// positions (and on feature positions when K > 1).
    int build_input(ad::Binder& bind, int features,
                    const std::vector<int>& token_ids, Rng* dropout_rng) const {
        auto& g = bind.graph();
        if (g.val(features).cols() != cfg_.k_positions)
            throw Error("transformer: feature positions do not match config K");
        if (static_cast<int>(token_ids.size()) > cfg_.max_token_positions)
            throw Error("transformer: token sequence exceeds positional table");

        int f = features;
        if (proj_w_ >= 0)
            f = g.add_col(g.matmul(bind(proj_w_), f), bind(proj_b_));
        if (pos_feat_ >= 0) f = g.add(f, bind(pos_feat_));

        int e = g.gather_cols(bind(embed_), token_ids);
        std::vector<int> positions(token_ids.size());
        for (std::size_t i = 0; i < token_ids.size(); ++i)
            positions[i] = static_cast<int>(i);
        e = g.add(e, g.gather_cols(bind(pos_tok_), positions));

        int x = g.concat_cols({f, e});
        return detail::dropout(g, x, cfg_.dropout, dropout_rng);
    }

    struct Forward {
        int logits = -1;      // (V x T) at token positions
        Mat last_attention;   // (T x K+T): final layer, mean over heads
    };

    /// Full pass over K+T positions under the prefix-causal mask.
    Forward forward(ad::Binder& bind, int x, int token_count,
                    Rng* dropout_rng) const {
        auto& g = bind.graph();
        int s = static_cast<int>(g.val(x).cols());
        int k = s - token_count;
        if (k != cfg_.k_positions)
            throw Error("transformer: sequence/mask shape mismatch");
        int mask = g.input(prefix_causal_mask(k, token_count));

        Forward out;
        const int dh = cfg_.model_dim / cfg_.heads;
        for (std::size_t li = 0; li < layers_.size(); ++li) {
            const Layer& L = layers_[li];
            int q = g.add_col(g.matmul(bind(L.wq), x), bind(L.bq));
            int kk = g.add_col(g.matmul(bind(L.wk), x), bind(L.bk));
            int v = g.add_col(g.matmul(bind(L.wv), x), bind(L.bv));

            std::vector<int> head_outs;
            Mat attn_sum = Mat::Zero(s, s);
            for (int h = 0; h < cfg_.heads; ++h) {
                int qh = g.slice_rows(q, h * dh, dh);
                int kh = g.slice_rows(kk, h * dh, dh);
                int vh = g.slice_rows(v, h * dh, dh);
                int scores = g.scale(g.matmul_tn(qh, kh), 1.0 / std::sqrt(dh));
                int masked = g.add(scores, mask);
                int attn = g.softmax_rows(masked); // rows = queries
                head_outs.push_back(g.matmul_nt(vh, attn));
                if (li + 1 == layers_.size()) attn_sum += g.val(attn);
            }
            int mh = head_outs[0];
            for (std::size_t h = 1; h < head_outs.size(); ++h)
                mh = g.concat_rows(mh, head_outs[h]);
            int proj = g.add_col(g.matmul(bind(L.wo), mh), bind(L.bo));
            proj = detail::dropout(g, proj, cfg_.dropout, dropout_rng);
            x = g.layernorm_cols(g.add(x, proj), bind(L.ln1_g), bind(L.ln1_b));

            int ff = g.relu(g.add_col(g.matmul(bind(L.ff1_w), x), bind(L.ff1_b)));
            ff = g.add_col(g.matmul(bind(L.ff2_w), ff), bind(L.ff2_b));
            ff = detail::dropout(g, ff, cfg_.dropout, dropout_rng);
            x = g.layernorm_cols(g.add(x, ff), bind(L.ln2_g), bind(L.ln2_b));

            if (li + 1 == layers_.size())
                out.last_attention =
                    (attn_sum / static_cast<double>(cfg_.heads)).bottomRows(token_count);
        }

        int tokens = g.slice_cols(x, k, token_count);
        out.logits = g.add_col(g.matmul(bind(vocab_w_), tokens), bind(vocab_b_));
        return out;
    }

    /// Convenience: build input + forward for a teacher-forced pass.
    Forward teacher_forced(ad::Binder& bind, int features,
                           const std::vector<int>& target,
                           Rng* dropout_rng) const {
        if (target.size() < 2)
            throw Error("transformer: target must hold at least start and end");
        // inputs are target[0..T-1]; predictions align with target[1..T]
        std::vector<int> inputs(target.begin(), target.end() - 1);
        int x = build_input(bind, features, inputs, dropout_rng);
        return forward(bind, x, static_cast<int>(inputs.size()), dropout_rng);
    }

private:
    struct Layer {
        int wq, bq, wk, bk, wv, bv, wo, bo;
        int ln1_g, ln1_b;
        int ff1_w, ff1_b, ff2_w, ff2_b;
        int ln2_g, ln2_b;
    };

    TransformerConfig cfg_;
    int embed_ = -1, pos_tok_ = -1, pos_feat_ = -1;
    int proj_w_ = -1, proj_b_ = -1;
    std::vector<Layer> layers_;
    int vocab_w_ = -1, vocab_b_ = -1;
};

} // namespace ecgcap::decoders
