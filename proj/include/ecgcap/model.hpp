// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "ecgcap/autodiff.hpp"
#include "ecgcap/common.hpp"
#include "ecgcap/decoders.hpp"
#include "ecgcap/encoder.hpp"
#include "ecgcap/textprep.hpp"

namespace ecgcap::model {

enum class Family { Lstm, Transformer };

inline const char* family_name(Family f) {
    return f == Family::Lstm ? "lstm" : "transformer";
}

inline Family family_from_name(const std::string& s) {
    if (s == "lstm") return Family::Lstm;
    if (s == "transformer") return Family::Transformer;
    throw Error("unknown model family: '" + s + "'");
}

struct ModelConfig {
    Family family = Family::Lstm;
    encoder::EncoderConfig encoder;
    decoders::LstmDecoderConfig lstm;
    decoders::TransformerConfig transformer;
};

// -- config <-> json ---------------------------------------------------------

inline nlohmann::json to_json(const encoder::EncoderConfig& c) {
    return {{"depth", c.depth},
            {"input_leads", c.input_leads},
            {"stem_kernel", c.stem_kernel},
            {"stage_kernels", c.stage_kernels},
            {"output_channels", c.output_channels},
            {"k", c.k_out},
            {"pretrain_classes", c.pretrain_classes},
            {"normalization", encoder::signal_norm_name(c.normalization)}};
}

inline encoder::EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
    encoder::EncoderConfig c;
    c.depth = j.value("depth", c.depth);
    c.input_leads = j.value("input_leads", c.input_leads);
    c.stem_kernel = j.value("stem_kernel", c.stem_kernel);
    if (j.contains("stage_kernels")) {
        auto v = j.at("stage_kernels").get<std::vector<int>>();
        if (v.size() != 4) throw Error("encoder config: stage_kernels needs 4 entries");
        for (int i = 0; i < 4; ++i) c.stage_kernels[static_cast<std::size_t>(i)] = v[static_cast<std::size_t>(i)];
    }
    c.output_channels = j.value("output_channels", c.output_channels);
    c.k_out = j.value("k", c.k_out);
    c.pretrain_classes = j.value("pretrain_classes", c.pretrain_classes);
    c.normalization =
        encoder::signal_norm_from_name(j.value("normalization", std::string("none")));
    return c;
}

inline nlohmann::json to_json(const decoders::LstmDecoderConfig& c) {
    return {{"vocab_size", c.vocab_size},
            {"feature_dim", c.feature_dim},
            {"embed_dim", c.embed_dim},
            {"hidden_dim", c.hidden_dim},
            {"attn_dim", c.attn_dim},
            {"dropout", c.dropout},
            {"lambda_attention", c.lambda_attention},
            {"teacher_forcing_p", c.teacher_forcing_p}};
}

inline decoders::LstmDecoderConfig lstm_config_from_json(const nlohmann::json& j) {
    decoders::LstmDecoderConfig c;
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.attn_dim = j.value("attn_dim", c.attn_dim);
    c.dropout = j.value("dropout", c.dropout);
    c.lambda_attention = j.value("lambda_attention", c.lambda_attention);
    c.teacher_forcing_p = j.value("teacher_forcing_p", c.teacher_forcing_p);
    return c;
}

inline nlohmann::json to_json(const decoders::TransformerConfig& c) {
    return {{"vocab_size", c.vocab_size},
            {"feature_dim", c.feature_dim},
            {"model_dim", c.model_dim},
            {"layers", c.layers},
            {"heads", c.heads},
            {"ff_dim", c.ff_dim},
            {"k", c.k_positions},
            {"max_token_positions", c.max_token_positions},
            {"dropout", c.dropout}};
}

inline decoders::TransformerConfig transformer_config_from_json(const nlohmann::json& j) {
    decoders::TransformerConfig c;
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    c.model_dim = j.value("model_dim", c.model_dim);
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.ff_dim = j.value("ff_dim", c.ff_dim);
    c.k_positions = j.value("k", c.k_positions);
    c.max_token_positions = j.value("max_token_positions", c.max_token_positions);
    c.dropout = j.value("dropout", c.dropout);
    return c;
}

/// Complete trainable unit: encoder + one decoder + the vocabulary that maps
/// token ids, all over one flat parameter bag (encoder parameters first).
class Model {
public:
    Model(ModelConfig cfg, textprep::Vocabulary vocab, uint64_t init_seed)
        : cfg_(cfg), vocab_(std::move(vocab)) {
        Rng rng(Rng::mix(init_seed, 0x10de1));
        enc_ = std::make_unique<encoder::Encoder>(cfg_.encoder, bag_, rng);
        encoder_param_end_ = static_cast<int>(bag_.size());
        if (cfg_.family == Family::Lstm) {
            cfg_.lstm.vocab_size = vocab_.size();
            cfg_.lstm.feature_dim = cfg_.encoder.output_channels;
            lstm_ = std::make_unique<decoders::LstmDecoder>(cfg_.lstm, bag_, rng);
        } else {
            cfg_.transformer.vocab_size = vocab_.size();
            cfg_.transformer.feature_dim = cfg_.encoder.output_channels;
            cfg_.transformer.k_positions = cfg_.encoder.k_out;
            transformer_ =
                std::make_unique<decoders::TransformerDecoder>(cfg_.transformer, bag_, rng);
        }
    }

    const ModelConfig& config() const { return cfg_; }
    const textprep::Vocabulary& vocab() const { return vocab_; }
    ad::ParamBag& bag() { return bag_; }
    const ad::ParamBag& bag() const { return bag_; }
    const encoder::Encoder& enc() const { return *enc_; }
    const decoders::LstmDecoder& lstm() const {
        if (!lstm_) throw Error("model: no LSTM decoder configured");
        return *lstm_;
    }
    const decoders::TransformerDecoder& transformer() const {
        if (!transformer_) throw Error("model: no Transformer decoder configured");
        return *transformer_;
    }

    int encoder_param_end() const { return encoder_param_end_; }

    bool has_dataset_stats() const { return dataset_stats_.mean.size() > 0; }
    const encoder::DatasetStats& dataset_stats() const { return dataset_stats_; }
    void set_dataset_stats(encoder::DatasetStats stats) {
        dataset_stats_ = std::move(stats);
    }

    Mat normalized(const Mat& signal) const {
        return encoder::normalize_signal(signal, cfg_.encoder.normalization,
                                         has_dataset_stats() ? &dataset_stats_ : nullptr);
    }

    std::vector<Mat> snapshot_values() const {
        std::vector<Mat> vals;
        vals.reserve(bag_.size());
        for (std::size_t i = 0; i < bag_.size(); ++i)
            vals.push_back(bag_[static_cast<int>(i)].value);
        return vals;
    }

    void restore_values(const std::vector<Mat>& vals) {
        if (vals.size() != bag_.size())
            throw Error("model: snapshot size mismatch");
        for (std::size_t i = 0; i < bag_.size(); ++i)
            bag_[static_cast<int>(i)].value = vals[i];
    }

private:
    ModelConfig cfg_;
    textprep::Vocabulary vocab_;
    ad::ParamBag bag_;
    std::unique_ptr<encoder::Encoder> enc_;
    std::unique_ptr<decoders::LstmDecoder> lstm_;
    std::unique_ptr<decoders::TransformerDecoder> transformer_;
    encoder::DatasetStats dataset_stats_;
    int encoder_param_end_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoint file: magic, u64 header length, JSON header (version tag, full
// model config, vocabulary, parameter manifest), then raw column-major
// float64 parameter payloads.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[] = "ECGCAPCK1\n";

inline void save_checkpoint(const Model& model, const std::string& path,
                            const nlohmann::json& metadata = {}) {
    nlohmann::json header;
    header["version"] = 1;
    header["family"] = family_name(model.config().family);
    header["encoder"] = to_json(model.config().encoder);
    if (model.config().family == Family::Lstm)
        header["decoder"] = to_json(model.config().lstm);
    else
        header["decoder"] = to_json(model.config().transformer);

    std::vector<std::string> content(
        model.vocab().tokens().begin(),
        model.vocab().tokens().end() - 4); // specials reconstructed on load
    header["vocab"] = content;
    if (model.has_dataset_stats()) {
        const auto& st = model.dataset_stats();
        header["dataset_stats"] = {
            {"mean", std::vector<double>(st.mean.data(), st.mean.data() + st.mean.size())},
            {"stddev",
             std::vector<double>(st.stddev.data(), st.stddev.data() + st.stddev.size())}};
    }
    if (!metadata.is_null() && !metadata.empty()) header["metadata"] = metadata;

    nlohmann::json manifest = nlohmann::json::array();
    const auto& bag = model.bag();
    for (std::size_t i = 0; i < bag.size(); ++i) {
        const auto& p = bag[static_cast<int>(i)];
        manifest.push_back({{"name", p.name},
                            {"rows", p.value.rows()},
                            {"cols", p.value.cols()}});
    }
    header["params"] = manifest;

    std::string hs = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint: " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic) - 1);
    uint64_t len = hs.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (std::size_t i = 0; i < bag.size(); ++i) {
        const Mat& v = bag[static_cast<int>(i)].value;
        out.write(reinterpret_cast<const char*>(v.data()),
                  static_cast<std::streamsize>(sizeof(double)) * v.size());
    }
    if (!out) throw Error("short write on checkpoint: " + path);
}

inline Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint: " + path);

    char magic[sizeof(kCheckpointMagic) - 1];
    in.read(magic, sizeof(magic));
    if (!in || std::string(magic, sizeof(magic)) !=
                   std::string(kCheckpointMagic, sizeof(magic)))
        throw Error("not a checkpoint file: " + path);

    uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 8);
    std::string hs(len, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(len));
    if (!in) throw Error("truncated checkpoint header: " + path);
    nlohmann::json header = nlohmann::json::parse(hs);
    if (header.value("version", 0) != 1)
        throw Error("unsupported checkpoint version in " + path);

    ModelConfig cfg;
    cfg.family = family_from_name(header.at("family").get<std::string>());
    cfg.encoder = encoder_config_from_json(header.at("encoder"));
    if (cfg.family == Family::Lstm)
        cfg.lstm = lstm_config_from_json(header.at("decoder"));
    else
        cfg.transformer = transformer_config_from_json(header.at("decoder"));

    auto content = header.at("vocab").get<std::vector<std::string>>();
    textprep::Vocabulary vocab(std::move(content));

    Model model(cfg, std::move(vocab), /*init_seed=*/0);
    if (header.contains("dataset_stats")) {
        auto mean = header["dataset_stats"]["mean"].get<std::vector<double>>();
        auto sd = header["dataset_stats"]["stddev"].get<std::vector<double>>();
        encoder::DatasetStats st;
        st.mean = Eigen::Map<Vec>(mean.data(), static_cast<Eigen::Index>(mean.size()));
        st.stddev = Eigen::Map<Vec>(sd.data(), static_cast<Eigen::Index>(sd.size()));
        model.set_dataset_stats(std::move(st));
    }

    auto manifest = header.at("params");
    if (manifest.size() != model.bag().size())
        throw Error("checkpoint parameter manifest does not match the model");
    for (std::size_t i = 0; i < model.bag().size(); ++i) {
        auto& p = model.bag()[static_cast<int>(i)];
        const auto& m = manifest[i];
        if (m.at("name").get<std::string>() != p.name ||
            m.at("rows").get<Eigen::Index>() != p.value.rows() ||
            m.at("cols").get<Eigen::Index>() != p.value.cols())
            throw Error("checkpoint parameter mismatch at '" + p.name + "'");
        in.read(reinterpret_cast<char*>(p.value.data()),
                static_cast<std::streamsize>(sizeof(double)) * p.value.size());
    }
    if (!in) throw Error("truncated checkpoint payload: " + path);
    return model;
}

} // namespace ecgcap::model
