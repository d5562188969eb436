// SPDX-License-Identifier: Apache-2.0
//
// Declarative run configuration: one JSON file names the dataset, the
// preprocessing, the split, the model family and sizes, and the training
// settings. Validation reports every violation at once.
#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ecgcap/corpus.hpp"
#include "ecgcap/datasplit.hpp"
#include "ecgcap/model.hpp"
#include "ecgcap/pipeline.hpp"
#include "ecgcap/trainer.hpp"

namespace ecgcap::runconfig {

struct RunConfig {
    uint64_t seed = 0;
    std::string output_dir;

    // dataset: exactly one of the two
    std::string manifest;                 // empty when synthetic
    bool synthetic = false;
    corpus::SyntheticSpec synthetic_spec; // valid when synthetic

    bool deduplicate = false;
    pipeline::PrepOptions prep;
    std::string abbreviation_table_path; // empty = builtin table

    datasplit::SplitMode split_mode = datasplit::SplitMode::Grouped;
    std::array<double, 3> split_ratios{0.8, 0.1, 0.1};
    std::string assignment_file; // official mode

    model::ModelConfig model;
    trainer::TrainConfig train;

    nlohmann::json raw; // verbatim snapshot for the output directory
};

namespace detail {

inline corpus::SyntheticSpec synthetic_from_json(const nlohmann::json& j,
                                                 std::vector<std::string>& errors) {
    corpus::SyntheticSpec spec = corpus::default_synthetic_spec();
    if (j.contains("classes")) {
        spec.classes.clear();
        for (const auto& cj : j.at("classes")) {
            corpus::SyntheticClassSpec cls;
            cls.name = cj.value("name", std::string());
            cls.rate_min = cj.value("rate_min", 60);
            cls.rate_max = cj.value("rate_max", 90);
            cls.irregularity = cj.value("irregularity", 0.0);
            cls.extra_beat_prob = cj.value("extra_beat_prob", 0.0);
            cls.noise_level = cj.value("noise_level", 0.05);
            cls.report_template = cj.value("template", std::string());
            if (cls.name.empty())
                errors.push_back("synthetic class without a name");
            if (cls.report_template.empty())
                errors.push_back("synthetic class '" + cls.name + "' without a template");
            spec.classes.push_back(std::move(cls));
        }
    }
    spec.episodes_per_class = j.value("episodes_per_class", spec.episodes_per_class);
    spec.leads = j.value("leads", spec.leads);
    spec.sampling_rate_hz = j.value("sampling_rate_hz", spec.sampling_rate_hz);
    spec.duration_s = j.value("duration_s", spec.duration_s);
    return spec;
}

} // namespace detail

/// Parses and validates a run configuration; throws one Error listing every
/// violation found.
inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw Error("config " + path + " is not valid JSON: " + e.what());
    }

    RunConfig cfg;
    cfg.raw = j;
    std::vector<std::string> errors;

    cfg.seed = j.value("seed", 0ULL);
    cfg.output_dir = j.value("output_dir", std::string());
    if (cfg.output_dir.empty()) errors.push_back("output_dir is required");

    // dataset
    if (!j.contains("dataset")) {
        errors.push_back("dataset section is required");
    } else {
        const auto& dj = j.at("dataset");
        bool has_manifest = dj.contains("manifest");
        bool has_synth = dj.contains("synthetic");
        if (has_manifest == has_synth)
            errors.push_back("dataset must name exactly one of manifest or synthetic");
        if (has_manifest) {
            cfg.manifest = dj.at("manifest").get<std::string>();
            if (!std::filesystem::exists(cfg.manifest))
                errors.push_back("dataset manifest does not exist: " + cfg.manifest);
        }
        if (has_synth) {
            cfg.synthetic = true;
            cfg.synthetic_spec = detail::synthetic_from_json(dj.at("synthetic"), errors);
        }
    }

    // preprocessing
    if (j.contains("preprocessing")) {
        const auto& pj = j.at("preprocessing");
        cfg.prep.unify_abbreviations = pj.value("unify_abbreviations", true);
        cfg.deduplicate = pj.value("deduplicate", false);
        cfg.prep.max_report_len = pj.value("max_report_len", 300u);
        cfg.prep.min_frequency = pj.value("min_frequency", 2u);
        cfg.prep.max_vocab = pj.value("max_vocab", 1024u);
        std::string over = pj.value("overlength", std::string("reject"));
        if (over == "reject") cfg.prep.overlength = textprep::OverLength::Reject;
        else if (over == "truncate") cfg.prep.overlength = textprep::OverLength::Truncate;
        else errors.push_back("preprocessing.overlength must be reject or truncate");
        if (pj.contains("abbreviation_table")) {
            cfg.abbreviation_table_path = pj.at("abbreviation_table").get<std::string>();
            if (!std::filesystem::exists(cfg.abbreviation_table_path))
                errors.push_back("abbreviation table does not exist: " +
                                 cfg.abbreviation_table_path);
            else
                cfg.prep.table = textprep::load_abbreviation_table(
                    cfg.abbreviation_table_path);
        }
        if (cfg.prep.max_report_len < 3)
            errors.push_back("preprocessing.max_report_len must be >= 3");
    }

    // split
    if (j.contains("split")) {
        const auto& sj = j.at("split");
        std::string mode = sj.value("mode", std::string("grouped"));
        if (mode == "grouped") cfg.split_mode = datasplit::SplitMode::Grouped;
        else if (mode == "random") cfg.split_mode = datasplit::SplitMode::Random;
        else if (mode == "official") cfg.split_mode = datasplit::SplitMode::Official;
        else errors.push_back("split.mode must be grouped, random, or official");
        if (sj.contains("ratios")) {
            auto r = sj.at("ratios").get<std::vector<double>>();
            if (r.size() != 3) {
                errors.push_back("split.ratios must hold 3 values");
            } else {
                cfg.split_ratios = {r[0], r[1], r[2]};
            }
        } else if (cfg.split_mode == datasplit::SplitMode::Random) {
            cfg.split_ratios = {0.64, 0.16, 0.20};
        }
        if (cfg.split_mode == datasplit::SplitMode::Official) {
            cfg.assignment_file = sj.value("assignment_file", std::string());
            if (cfg.assignment_file.empty())
                errors.push_back("split.assignment_file required for official mode");
            else if (!std::filesystem::exists(cfg.assignment_file))
                errors.push_back("split assignment file does not exist: " +
                                 cfg.assignment_file);
        }
    }

    // model
    if (!j.contains("model")) {
        errors.push_back("model section is required");
    } else {
        const auto& mj = j.at("model");
        std::string family = mj.value("family", std::string());
        if (family != "lstm" && family != "transformer") {
            errors.push_back("model.family must be lstm or transformer");
        } else {
            cfg.model.family = model::family_from_name(family);
        }
        if (mj.contains("encoder")) {
            try {
                cfg.model.encoder = model::encoder_config_from_json(mj.at("encoder"));
            } catch (const std::exception& e) {
                errors.push_back(std::string("model.encoder: ") + e.what());
            }
        }
        if (mj.contains("lstm")) {
            try {
                cfg.model.lstm = model::lstm_config_from_json(mj.at("lstm"));
            } catch (const std::exception& e) {
                errors.push_back(std::string("model.lstm: ") + e.what());
            }
        }
        if (mj.contains("transformer")) {
            try {
                cfg.model.transformer =
                    model::transformer_config_from_json(mj.at("transformer"));
            } catch (const std::exception& e) {
                errors.push_back(std::string("model.transformer: ") + e.what());
            }
        }
        try {
            cfg.model.encoder.validate();
        } catch (const std::exception& e) {
            errors.push_back(std::string("model.encoder: ") + e.what());
        }
    }

    // train
    if (j.contains("train")) {
        const auto& tj = j.at("train");
        cfg.train.encoder_lr = tj.value("encoder_lr", 4e-4);
        double default_dec_lr =
            cfg.model.family == model::Family::Transformer ? 1e-4 : 4e-4;
        cfg.train.decoder_lr = tj.value("decoder_lr", default_dec_lr);
        cfg.train.batch_size = tj.value("batch_size", 32);
        cfg.train.lr_decay_factor = tj.value("lr_decay_factor", 0.8);
        cfg.train.lr_decay_patience = tj.value("lr_decay_patience", 8);
        cfg.train.early_stop_patience = tj.value("early_stop_patience", 30);
        cfg.train.teacher_forcing_p = tj.value("teacher_forcing_p", 1.0);
        cfg.train.lambda_attention = tj.value("lambda_attention", 1.0);
        cfg.train.max_epochs = tj.value("max_epochs", 200);
        cfg.train.grad_clip_norm = tj.value("grad_clip_norm", 5.0);
        cfg.train.threads = tj.value("threads", 0);
        cfg.train.pretrain_epochs = tj.value("pretrain_epochs", 0);
        cfg.train.generation_max_len =
            tj.value("generation_max_len", cfg.prep.max_report_len);
        try {
            cfg.train.validate();
        } catch (const std::exception& e) {
            errors.push_back(std::string("train: ") + e.what());
        }
    } else {
        cfg.train.decoder_lr =
            cfg.model.family == model::Family::Transformer ? 1e-4 : 4e-4;
        cfg.train.generation_max_len = cfg.prep.max_report_len;
    }
    cfg.train.seed = cfg.seed;

    // keep decoder configs aligned with training-time settings so checkpoints
    // are self-describing
    cfg.model.lstm.lambda_attention = cfg.train.lambda_attention;
    cfg.model.lstm.teacher_forcing_p = cfg.train.teacher_forcing_p;

    if (!errors.empty()) {
        std::string msg = "invalid config " + path + ":";
        for (const auto& e : errors) msg += "\n  - " + e;
        throw Error(msg);
    }
    return cfg;
}

/// Output directory resolution: the environment variable overrides only the
/// output root; everything else stays in the config file.
inline std::filesystem::path resolve_output_dir(const RunConfig& cfg) {
    const char* root = std::getenv("ECGCAP_OUTPUT_ROOT");
    std::filesystem::path out(cfg.output_dir);
    if (root && *root && out.is_relative())
        return std::filesystem::path(root) / out;
    return out;
}

} // namespace ecgcap::runconfig
