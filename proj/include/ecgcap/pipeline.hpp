// SPDX-License-Identifier: Apache-2.0
//
// Glue between the corpus and the models: report preprocessing, target
// encoding, vocabulary construction (training split only), and per-lead
// statistics for dataset-level input normalization.
#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "ecgcap/corpus.hpp"
#include "ecgcap/datasplit.hpp"
#include "ecgcap/encoder.hpp"
#include "ecgcap/textprep.hpp"

namespace ecgcap::pipeline {

struct PrepOptions {
    bool unify_abbreviations = true;
    textprep::AbbreviationTable table = textprep::builtin_abbreviation_table();
    std::size_t max_report_len = 300;
    std::size_t min_frequency = 2;
    std::size_t max_vocab = 1024;
    textprep::OverLength overlength = textprep::OverLength::Reject;
};

struct PreparedEpisode {
    std::size_t corpus_index = 0;
    std::vector<int> target;             // [start, tokens..., end], unpadded
    std::vector<std::string> ref_tokens; // evaluation reference stream
    int class_id = -1;                   // rhythm class index or -1
};

struct PreparedData {
    textprep::Vocabulary vocab;
    std::vector<PreparedEpisode> train;
    std::vector<PreparedEpisode> validation;
    std::vector<PreparedEpisode> test;
    std::vector<std::string> class_names;
    std::size_t dropped_empty_reports = 0;
};

inline std::vector<std::string> preprocess_report(const std::string& report,
                                                  const PrepOptions& opts) {
    std::string text = opts.unify_abbreviations
                           ? textprep::unify_abbreviations(report, opts.table)
                           : report;
    return textprep::tokenize(text);
}

/// Builds the vocabulary on the training split only, encodes every episode's
/// report, and indexes rhythm classes. Episodes with empty reports are
/// dropped (they carry nothing to learn or score against).
inline PreparedData prepare(const corpus::Corpus& corpus,
                            const datasplit::SplitAssignment& assignment,
                            const PrepOptions& opts) {
    struct Row {
        std::size_t index;
        datasplit::Split split;
        std::vector<std::string> tokens;
        int class_id;
    };
    std::vector<Row> rows;
    std::map<std::string, int> class_index;
    std::vector<std::string> class_names;

    std::size_t dropped = 0;
    for (std::size_t i = 0; i < corpus.episodes.size(); ++i) {
        const auto& ep = corpus.episodes[i];
        auto tokens = preprocess_report(ep.report, opts);
        if (tokens.empty()) {
            ++dropped;
            continue;
        }
        int cls = -1;
        if (!ep.rhythm_class.empty()) {
            auto [it, inserted] =
                class_index.try_emplace(ep.rhythm_class,
                                        static_cast<int>(class_names.size()));
            if (inserted) class_names.push_back(ep.rhythm_class);
            cls = it->second;
        }
        rows.push_back({i, assignment.of(ep.episode_id), std::move(tokens), cls});
    }
    if (rows.empty()) throw Error("prepare: no episodes with nonempty reports");

    std::vector<std::vector<std::string>> train_docs;
    for (const auto& r : rows)
        if (r.split == datasplit::Split::Train) train_docs.push_back(r.tokens);
    if (train_docs.empty()) throw Error("prepare: training split is empty");

    PreparedData out{textprep::build_vocabulary(train_docs, opts.min_frequency,
                                                opts.max_vocab),
                     {}, {}, {}, std::move(class_names), dropped};

    for (auto& r : rows) {
        PreparedEpisode pe;
        pe.corpus_index = r.index;
        pe.class_id = r.class_id;
        auto padded = textprep::encode(r.tokens, out.vocab, opts.max_report_len,
                                       opts.overlength);
        while (!padded.empty() && padded.back() == out.vocab.pad_id())
            padded.pop_back();
        pe.target = std::move(padded);
        pe.ref_tokens = std::move(r.tokens);
        switch (r.split) {
            case datasplit::Split::Train: out.train.push_back(std::move(pe)); break;
            case datasplit::Split::Validation:
                out.validation.push_back(std::move(pe));
                break;
            case datasplit::Split::Test: out.test.push_back(std::move(pe)); break;
        }
    }
    return out;
}

/// Per-lead mean/stddev over the training episodes, for dataset-level
/// normalization.
inline encoder::DatasetStats
compute_dataset_stats(const std::vector<Mat>& signals,
                      const std::vector<PreparedEpisode>& train) {
    if (train.empty()) throw Error("compute_dataset_stats: empty training split");
    Eigen::Index leads = signals[train[0].corpus_index].rows();
    Vec sum = Vec::Zero(leads), sq = Vec::Zero(leads);
    double count = 0.0;
    for (const auto& pe : train) {
        const Mat& s = signals[pe.corpus_index];
        if (s.rows() != leads)
            throw Error("compute_dataset_stats: inconsistent lead counts");
        sum += s.rowwise().sum();
        sq += s.array().square().matrix().rowwise().sum();
        count += static_cast<double>(s.cols());
    }
    encoder::DatasetStats st;
    st.mean = sum / count;
    st.stddev = ((sq.array() / count) - st.mean.array().square())
                    .max(0.0)
                    .sqrt()
                    .matrix();
    return st;
}

} // namespace ecgcap::pipeline
