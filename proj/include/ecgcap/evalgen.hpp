// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ecgcap/metrics.hpp"
#include "ecgcap/model.hpp"
#include "ecgcap/pipeline.hpp"

namespace ecgcap::evalgen {

struct GenerationResult {
    std::vector<std::string> tokens; // specials stripped
    std::vector<int> token_ids;
    Mat alphas; // one row per generated token; K cols (LSTM) or K+T (Transformer)
    std::string episode_id;
};

/// Autoregressive decode from the start token. top_k = 1 is a deterministic
/// argmax; larger k samples uniformly among the k highest-logit tokens using
/// the seed.
inline GenerationResult generate(const model::Model& m, const Mat& signal,
                                 std::size_t max_len = 300, int top_k = 1,
                                 uint64_t seed = 0) {
    if (signal.rows() != m.config().encoder.input_leads)
        throw Error("generate: signal has " + std::to_string(signal.rows()) +
                    " leads, checkpoint expects " +
                    std::to_string(m.config().encoder.input_leads));
    if (top_k < 1) throw Error("generate: top_k must be >= 1");
    const auto& vocab = m.vocab();
    Rng rng(Rng::mix(seed, 0x9e4e));

    auto pick = [&](const Vec& logits) {
        if (top_k == 1) {
            Eigen::Index best = 0;
            logits.maxCoeff(&best);
            return static_cast<int>(best);
        }
        std::vector<int> order(static_cast<std::size_t>(logits.size()));
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        std::partial_sort(order.begin(), order.begin() + top_k, order.end(),
                          [&](int a, int b) {
                              if (logits(a) != logits(b)) return logits(a) > logits(b);
                              return a < b;
                          });
        return order[static_cast<std::size_t>(
            rng.uniform_int(0, top_k - 1))];
    };

    GenerationResult out;
    std::size_t budget = max_len - 2; // room for start and end
    Mat input = m.normalized(signal);

    if (m.config().family == model::Family::Lstm) {
        ad::Binder bind(m.bag(), /*requires_grad=*/false);
        auto& g = bind.graph();
        int features = m.enc().forward(bind, input);
        auto state = m.lstm().init_state(bind, features);
        std::vector<Mat> alpha_rows;
        int token = vocab.start_id();
        while (out.token_ids.size() < budget) {
            auto so = m.lstm().step(bind, state, features, token, nullptr);
            token = pick(g.val(so.logits).col(0));
            if (token == vocab.end_id()) break;
            out.token_ids.push_back(token);
            alpha_rows.push_back(g.val(so.alpha));
        }
        out.alphas.resize(static_cast<Eigen::Index>(alpha_rows.size()),
                          m.config().encoder.k_out);
        for (std::size_t i = 0; i < alpha_rows.size(); ++i)
            out.alphas.row(static_cast<Eigen::Index>(i)) = alpha_rows[i].row(0);
    } else {
        std::vector<int> ids = {vocab.start_id()};
        std::vector<Mat> alpha_rows;
        int k = m.config().encoder.k_out;
        Mat feature_values;
        {
            // the embedding is independent of the generated prefix
            ad::Binder once(m.bag(), false);
            feature_values = once.graph().val(m.enc().forward(once, input));
        }
        while (out.token_ids.size() < budget) {
            ad::Binder bind(m.bag(), false);
            auto& g = bind.graph();
            int features = g.input(feature_values);
            int x = m.transformer().build_input(bind, features, ids, nullptr);
            auto fwd = m.transformer().forward(bind, x, static_cast<int>(ids.size()),
                                               nullptr);
            Vec logits = g.val(fwd.logits).col(g.val(fwd.logits).cols() - 1);
            int token = pick(logits);
            if (token == vocab.end_id()) break;
            out.token_ids.push_back(token);
            alpha_rows.push_back(fwd.last_attention.row(fwd.last_attention.rows() - 1));
            ids.push_back(token);
        }
        Eigen::Index width = k + static_cast<Eigen::Index>(alpha_rows.size());
        out.alphas = Mat::Zero(static_cast<Eigen::Index>(alpha_rows.size()), width);
        for (std::size_t i = 0; i < alpha_rows.size(); ++i)
            out.alphas.row(static_cast<Eigen::Index>(i)).head(alpha_rows[i].cols()) =
                alpha_rows[i].row(0);
    }

    for (int id : out.token_ids) out.tokens.push_back(vocab.token_of(id));
    return out;
}

struct SanityCheck {
    metrics::MetricReport real;
    metrics::MetricReport ones;
    double relative_meteor_drop = 0.0;
    std::size_t distinct_ones_reports = 0;
};

/// Evaluates twice: on true signals and on all-ones tensors of identical
/// shape. A healthy model collapses to one constant report and loses a large
/// share of its METEOR score.
inline SanityCheck sanity_check(const model::Model& m,
                                const std::vector<Mat>& signals,
                                const std::vector<pipeline::PreparedEpisode>& split,
                                std::size_t max_len = 300) {
    if (split.empty()) throw Error("sanity_check: empty split");
    std::vector<metrics::Tokens> cands_real, cands_ones, refs;
    std::set<std::string> ones_reports;
    for (const auto& pe : split) {
        const Mat& signal = signals[pe.corpus_index];
        auto real = generate(m, signal, max_len, 1);
        auto ones = generate(m, Mat::Ones(signal.rows(), signal.cols()), max_len, 1);
        cands_real.push_back(real.tokens);
        cands_ones.push_back(ones.tokens);
        refs.push_back(pe.ref_tokens);
        std::string flat;
        for (const auto& t : ones.tokens) flat += t + ' ';
        ones_reports.insert(flat);
    }
    SanityCheck out;
    out.real = metrics::corpus_evaluate(cands_real, refs);
    out.ones = metrics::corpus_evaluate(cands_ones, refs);
    out.distinct_ones_reports = ones_reports.size();
    if (out.real.meteor > 0.0)
        out.relative_meteor_drop = (out.real.meteor - out.ones.meteor) / out.real.meteor;
    return out;
}

// ---------------------------------------------------------------------------
// Attention overlay export (LSTM path, K > 1)
// ---------------------------------------------------------------------------

/// Numeric overlay: one row per generated token, `token<TAB>a0,a1,...,aK-1`.
inline void write_attention_file(const GenerationResult& result,
                                 const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write attention file: " + path);
    out.precision(10);
    for (Eigen::Index t = 0; t < result.alphas.rows(); ++t) {
        out << result.tokens[static_cast<std::size_t>(t)] << '\t';
        for (Eigen::Index k = 0; k < result.alphas.cols(); ++k) {
            if (k) out << ',';
            out << result.alphas(t, k);
        }
        out << '\n';
    }
}

inline Mat read_attention_file(const std::string& path,
                               std::vector<std::string>* tokens = nullptr) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open attention file: " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw Error("attention file " + path + ": malformed row");
        if (tokens) tokens->push_back(line.substr(0, tab));
        std::vector<double> row;
        std::stringstream ss(line.substr(tab + 1));
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) return Mat(0, 0);
    Mat m(static_cast<Eigen::Index>(rows.size()),
          static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    return m;
}

/// Expands per-bin attention to signal length, piecewise-constant over the K
/// contiguous pooling bins.
inline Vec upsample_attention(const Eigen::RowVectorXd& alpha, long samples) {
    Vec out(samples);
    double k = static_cast<double>(alpha.size());
    for (long s = 0; s < samples; ++s) {
        auto bin = static_cast<Eigen::Index>(
            std::min(k - 1.0, std::floor(static_cast<double>(s) * k /
                                         static_cast<double>(samples))));
        out(s) = alpha(bin);
    }
    return out;
}

namespace detail {

inline void render_svg(const Mat& signal, const GenerationResult& result,
                       const std::string& path) {
    const int width = 960, sig_h = 200, row_h = 18, pad = 10;
    auto steps = result.alphas.rows();
    int height = sig_h + pad + static_cast<int>(steps) * row_h + pad;
    long samples = signal.cols();

    std::ofstream out(path);
    if (!out) throw Error("cannot write overlay image: " + path);
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width
        << "' height='" << height << "'>\n";
    out << "<rect width='100%' height='100%' fill='white'/>\n";

    // mean attention over steps as background intensity behind the trace
    if (steps > 0) {
        Eigen::RowVectorXd mean_alpha = result.alphas.colwise().mean();
        double amax = std::max(1e-12, mean_alpha.maxCoeff());
        Vec up = upsample_attention(mean_alpha, samples);
        int strips = 96;
        for (int s = 0; s < strips; ++s) {
            long lo = s * samples / strips, hi = (s + 1) * samples / strips;
            double a = 0.0;
            for (long i = lo; i < hi; ++i) a += up(i);
            a /= std::max<long>(1, hi - lo) * amax;
            out << "<rect x='" << s * width / strips << "' y='0' width='"
                << width / strips + 1 << "' height='" << sig_h << "' fill='#3b76c4' opacity='"
                << 0.5 * a << "'/>\n";
        }
    }

    double lo = signal.row(0).minCoeff(), hi = signal.row(0).maxCoeff();
    double span = std::max(1e-9, hi - lo);
    out << "<polyline fill='none' stroke='black' stroke-width='1' points='";
    for (long s = 0; s < samples; ++s) {
        double x = static_cast<double>(s) / std::max<long>(1, samples - 1) * width;
        double y = sig_h - (signal(0, s) - lo) / span * (sig_h - 20) - 10;
        out << x << ',' << y << ' ';
    }
    out << "'/>\n";

    // per-token heat rows
    double amax = steps > 0 ? std::max(1e-12, result.alphas.maxCoeff()) : 1.0;
    for (Eigen::Index t = 0; t < steps; ++t) {
        int y = sig_h + pad + static_cast<int>(t) * row_h;
        auto k_bins = result.alphas.cols();
        for (Eigen::Index k = 0; k < k_bins; ++k) {
            double a = result.alphas(t, k) / amax;
            out << "<rect x='" << 120 + k * (width - 130) / k_bins << "' y='" << y
                << "' width='" << (width - 130) / k_bins + 1 << "' height='"
                << row_h - 2 << "' fill='#3b76c4' opacity='" << a << "'/>\n";
        }
        out << "<text x='4' y='" << y + row_h - 6
            << "' font-size='11' font-family='monospace'>"
            << result.tokens[static_cast<std::size_t>(t)] << "</text>\n";
    }
    out << "</svg>\n";
}

inline void render_ppm(const Mat& signal, const GenerationResult& result,
                       const std::string& path) {
    const int width = 512, height = 128;
    long samples = signal.cols();
    std::vector<unsigned char> img(static_cast<std::size_t>(width) * height * 3, 255);

    Eigen::RowVectorXd mean_alpha =
        result.alphas.rows() > 0
            ? Eigen::RowVectorXd(result.alphas.colwise().mean())
            : Eigen::RowVectorXd::Zero(1);
    double amax = std::max(1e-12, mean_alpha.maxCoeff());
    Vec up = upsample_attention(mean_alpha, samples);

    double lo = signal.row(0).minCoeff(), hi = signal.row(0).maxCoeff();
    double span = std::max(1e-9, hi - lo);
    for (int x = 0; x < width; ++x) {
        long s = static_cast<long>(static_cast<double>(x) * samples / width);
        double heat = up(std::min(s, samples - 1)) / amax;
        for (int y = 0; y < height; ++y) {
            auto at = (static_cast<std::size_t>(y) * width + x) * 3;
            img[at] = static_cast<unsigned char>(255 - 80 * heat);
            img[at + 1] = static_cast<unsigned char>(255 - 40 * heat);
            img[at + 2] = 255;
        }
        int y = height - 1 -
                static_cast<int>((signal(0, s) - lo) / span * (height - 10)) - 5;
        y = std::clamp(y, 0, height - 1);
        auto at = (static_cast<std::size_t>(y) * width + x) * 3;
        img[at] = img[at + 1] = img[at + 2] = 0;
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write overlay image: " + path);
    out << "P6\n" << width << ' ' << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.data()),
              static_cast<std::streamsize>(img.size()));
}

} // namespace detail

/// Writes the numeric overlay plus a rendered image (format from the image
/// path extension: .svg or .ppm). LSTM path only: requires K > 1 so the
/// attention has a temporal axis.
inline void export_attention(const model::Model& m, const Mat& signal,
                             const GenerationResult& result,
                             const std::string& numeric_path,
                             const std::string& image_path) {
    if (m.config().family != model::Family::Lstm)
        throw Error("export_attention: temporal overlays exist only for the LSTM path");
    if (m.config().encoder.k_out <= 1)
        throw Error("export_attention: K = 1 has no temporal axis to visualize");
    write_attention_file(result, numeric_path);
    auto ext = std::filesystem::path(image_path).extension().string();
    if (ext == ".svg")
        detail::render_svg(signal, result, image_path);
    else if (ext == ".ppm")
        detail::render_ppm(signal, result, image_path);
    else
        throw Error("export_attention: unsupported image extension '" + ext + "'");
}

} // namespace ecgcap::evalgen
