// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry point wiring the library into complete workflows:
//   synth     generate and materialize a synthetic corpus
//   prep      preprocess, split, and audit a corpus
//   train     train a model end to end and checkpoint the best epoch
//   evaluate  score a checkpoint on the test split
//   sanity    compare real-signal scores against all-ones inputs
//   score     score two aligned report files
//   attn      export attention overlays for test episodes
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ecgcap/evalgen.hpp"
#include "ecgcap/runconfig.hpp"
#include "ecgcap/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ecgcap;

namespace {

struct LoadedRun {
    runconfig::RunConfig cfg;
    fs::path outdir;
    corpus::Corpus corpus;
    std::vector<Mat> signals;
    datasplit::SplitAssignment assignment;
    pipeline::PreparedData data;
};

void snapshot_config(const runconfig::RunConfig& cfg, const fs::path& outdir) {
    fs::create_directories(outdir);
    std::ofstream out(outdir / "config.json");
    out << cfg.raw.dump(2) << "\n";
}

corpus::Corpus resolve_corpus(const runconfig::RunConfig& cfg, const fs::path& outdir,
                              std::vector<Mat>* signals) {
    if (!cfg.manifest.empty()) {
        auto corpus = corpus::load_manifest(cfg.manifest);
        if (signals) *signals = corpus::load_all_signals(corpus);
        return corpus;
    }
    // synthetic: reuse a previously materialized corpus under the output
    // directory, otherwise generate in memory
    fs::path materialized = outdir / "corpus" / "manifest.csv";
    if (fs::exists(materialized)) {
        auto corpus = corpus::load_manifest(materialized.string());
        if (signals) *signals = corpus::load_all_signals(corpus);
        return corpus;
    }
    auto synth = corpus::generate_synthetic(cfg.synthetic_spec, cfg.seed);
    if (signals) *signals = std::move(synth.signals);
    return std::move(synth.corpus);
}

datasplit::SplitAssignment make_assignment(const runconfig::RunConfig& cfg,
                                           const corpus::Corpus& corpus) {
    switch (cfg.split_mode) {
        case datasplit::SplitMode::Grouped:
            return datasplit::split_grouped(corpus, cfg.split_ratios, cfg.seed);
        case datasplit::SplitMode::Random:
            return datasplit::split_random(corpus, cfg.split_ratios, cfg.seed);
        case datasplit::SplitMode::Official:
            return datasplit::load_assignment(corpus, cfg.assignment_file);
    }
    throw Error("unreachable split mode");
}

LoadedRun load_run(const std::string& config_path) {
    LoadedRun run;
    run.cfg = runconfig::load_run_config(config_path);
    run.outdir = runconfig::resolve_output_dir(run.cfg);
    run.corpus = resolve_corpus(run.cfg, run.outdir, &run.signals);
    if (run.cfg.deduplicate) {
        auto before = run.corpus.size();
        // keep signals aligned: deduplicate indexes episodes by id
        auto deduped = datasplit::deduplicate(run.corpus, run.cfg.seed);
        std::vector<Mat> kept;
        kept.reserve(deduped.size());
        std::size_t cursor = 0;
        for (const auto& ep : deduped.episodes) {
            while (run.corpus.episodes[cursor].episode_id != ep.episode_id) ++cursor;
            kept.push_back(std::move(run.signals[cursor]));
            ++cursor;
        }
        run.signals = std::move(kept);
        run.corpus = std::move(deduped);
        std::cout << "deduplicated " << before << " -> " << run.corpus.size()
                  << " episodes\n";
    }
    run.assignment = make_assignment(run.cfg, run.corpus);
    run.data = pipeline::prepare(run.corpus, run.assignment, run.cfg.prep);
    return run;
}

model::Model build_model(const LoadedRun& run) {
    model::Model m(run.cfg.model, run.data.vocab, run.cfg.seed);
    if (run.cfg.model.encoder.normalization == encoder::SignalNorm::Dataset)
        m.set_dataset_stats(
            pipeline::compute_dataset_stats(run.signals, run.data.train));
    return m;
}

json metrics_json(const metrics::MetricReport& r) {
    return {{"meteor", r.meteor},
            {"bleu1", r.bleu[0]},
            {"bleu2", r.bleu[1]},
            {"bleu3", r.bleu[2]},
            {"bleu4", r.bleu[3]},
            {"rouge1_p", r.rouge1_p},
            {"rouge1_r", r.rouge1_r},
            {"rouge1_f", r.rouge1_f},
            {"pairs", r.pair_count}};
}

void print_metrics_table(const metrics::MetricReport& r, const std::string& title) {
    auto pct = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%6.2f", 100.0 * v);
        return std::string(buf);
    };
    std::cout << title << " (" << r.pair_count << " pairs)\n";
    std::cout << "  METEOR (%)  : " << pct(r.meteor) << "\n";
    std::cout << "  BLEU-1 (%)  : " << pct(r.bleu[0]) << "\n";
    std::cout << "  BLEU-2 (%)  : " << pct(r.bleu[1]) << "\n";
    std::cout << "  BLEU-3 (%)  : " << pct(r.bleu[2]) << "\n";
    std::cout << "  BLEU-4 (%)  : " << pct(r.bleu[3]) << "\n";
    std::cout << "  ROUGE-1 P/R/F (%): " << pct(r.rouge1_p) << " " << pct(r.rouge1_r)
              << " " << pct(r.rouge1_f) << "\n";
}

metrics::MetricReport evaluate_split(const model::Model& m,
                                     const std::vector<Mat>& signals,
                                     const std::vector<pipeline::PreparedEpisode>& split,
                                     std::size_t max_len) {
    if (split.empty()) throw Error("evaluation split is empty");
    std::vector<metrics::Tokens> cands, refs;
    for (const auto& pe : split) {
        auto gen = evalgen::generate(m, signals[pe.corpus_index], max_len, 1);
        cands.push_back(gen.tokens);
        refs.push_back(pe.ref_tokens);
    }
    return metrics::corpus_evaluate(cands, refs);
}

int cmd_synth(const std::string& config_path) {
    auto cfg = runconfig::load_run_config(config_path);
    if (!cfg.synthetic) throw Error("synth requires a dataset.synthetic section");
    auto outdir = runconfig::resolve_output_dir(cfg);
    snapshot_config(cfg, outdir);
    auto synth = corpus::generate_synthetic(cfg.synthetic_spec, cfg.seed);
    auto manifest = corpus::write_synthetic(synth, (outdir / "corpus").string());
    std::cout << "wrote " << synth.corpus.size() << " episodes to " << manifest
              << "\n";
    return 0;
}

int cmd_prep(const std::string& config_path) {
    auto run = load_run(config_path);
    snapshot_config(run.cfg, run.outdir);

    textprep::save_vocabulary(run.data.vocab, (run.outdir / "vocab.tsv").string());
    datasplit::save_assignment(run.assignment, run.corpus,
                               (run.outdir / "splits.tsv").string());
    auto stats = corpus::corpus_stats(run.corpus);
    json report = {{"episodes", stats.episode_count},
                   {"unique_groups", stats.unique_group_count},
                   {"unique_reports", stats.unique_report_count},
                   {"unique_group_proportion", stats.unique_group_proportion},
                   {"unique_report_proportion", stats.unique_report_proportion},
                   {"vocab_size", run.data.vocab.size()},
                   {"train", run.data.train.size()},
                   {"validation", run.data.validation.size()},
                   {"test", run.data.test.size()},
                   {"dropped_empty_reports", run.data.dropped_empty_reports}};
    std::ofstream(run.outdir / "corpus_stats.json") << report.dump(2) << "\n";
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_train(const std::string& config_path) {
    auto run = load_run(config_path);
    snapshot_config(run.cfg, run.outdir);
    textprep::save_vocabulary(run.data.vocab, (run.outdir / "vocab.tsv").string());
    datasplit::save_assignment(run.assignment, run.corpus,
                               (run.outdir / "splits.tsv").string());

    auto m = build_model(run);
    std::cout << "model: " << model::family_name(run.cfg.model.family) << ", "
              << m.bag().scalar_count() << " parameters ("
              << encoder::Encoder::parameter_count(run.cfg.model.encoder)
              << " encoder)\n";
    std::cout << "episodes: " << run.data.train.size() << " train, "
              << run.data.validation.size() << " validation, "
              << run.data.test.size() << " test; vocab " << run.data.vocab.size()
              << "\n";

    auto result = trainer::train(m, run.signals, run.data, run.cfg.train, &std::cout);
    trainer::write_history(result.history, (run.outdir / "history.jsonl").string());

    json meta = {{"best_epoch", result.best_epoch},
                 {"best_val_meteor", result.best_meteor},
                 {"early_stopped", result.early_stopped},
                 {"seed", run.cfg.seed}};
    model::save_checkpoint(m, (run.outdir / "checkpoint.bin").string(), meta);
    std::ofstream(run.outdir / "train_summary.json") << meta.dump(2) << "\n";
    std::cout << "best validation METEOR " << result.best_meteor << " at epoch "
              << result.best_epoch << "\n";
    std::cout << "checkpoint: " << (run.outdir / "checkpoint.bin").string() << "\n";
    return 0;
}

int cmd_evaluate(const std::string& config_path, const std::string& checkpoint) {
    if (checkpoint.empty() || !fs::exists(checkpoint))
        throw Error("evaluate requires an existing --checkpoint");
    auto run = load_run(config_path);
    snapshot_config(run.cfg, run.outdir);
    auto m = model::load_checkpoint(checkpoint);

    auto report = evaluate_split(m, run.signals, run.data.test,
                                 run.cfg.train.generation_max_len);
    print_metrics_table(report, "test split");
    std::ofstream(run.outdir / "metrics.json") << metrics_json(report).dump(2) << "\n";
    return 0;
}

int cmd_sanity(const std::string& config_path, const std::string& checkpoint) {
    if (checkpoint.empty() || !fs::exists(checkpoint))
        throw Error("sanity requires an existing --checkpoint");
    auto run = load_run(config_path);
    snapshot_config(run.cfg, run.outdir);
    auto m = model::load_checkpoint(checkpoint);

    auto sc = evalgen::sanity_check(m, run.signals, run.data.test,
                                    run.cfg.train.generation_max_len);
    print_metrics_table(sc.real, "real signals");
    print_metrics_table(sc.ones, "all-ones signals");
    std::cout << "relative METEOR drop: " << 100.0 * sc.relative_meteor_drop
              << "%\n";
    std::cout << "distinct reports under ones input: " << sc.distinct_ones_reports
              << "\n";
    json out = {{"real", metrics_json(sc.real)},
                {"ones", metrics_json(sc.ones)},
                {"relative_meteor_drop", sc.relative_meteor_drop},
                {"distinct_ones_reports", sc.distinct_ones_reports}};
    std::ofstream(run.outdir / "sanity.json") << out.dump(2) << "\n";
    return 0;
}

int cmd_score(const std::string& cand_path, const std::string& ref_path, bool unify) {
    std::ifstream cf(cand_path), rf(ref_path);
    if (!cf) throw Error("cannot open candidates file: " + cand_path);
    if (!rf) throw Error("cannot open references file: " + ref_path);
    auto table = textprep::builtin_abbreviation_table();
    std::vector<metrics::Tokens> cands, refs;
    std::string line;
    while (std::getline(cf, line)) {
        if (unify) line = textprep::unify_abbreviations(line, table);
        cands.push_back(textprep::tokenize(line));
    }
    while (std::getline(rf, line)) {
        if (unify) line = textprep::unify_abbreviations(line, table);
        refs.push_back(textprep::tokenize(line));
    }
    if (cands.size() != refs.size())
        throw Error("candidates and references differ in line count (" +
                    std::to_string(cands.size()) + " vs " +
                    std::to_string(refs.size()) + ")");
    auto report = metrics::corpus_evaluate(cands, refs);
    print_metrics_table(report, "score");
    return 0;
}

int cmd_attn(const std::string& config_path, const std::string& checkpoint,
             int episodes, const std::string& image_format) {
    if (checkpoint.empty() || !fs::exists(checkpoint))
        throw Error("attn requires an existing --checkpoint");
    auto run = load_run(config_path);
    snapshot_config(run.cfg, run.outdir);
    auto m = model::load_checkpoint(checkpoint);

    fs::path dir = run.outdir / "attention";
    fs::create_directories(dir);
    int written = 0;
    for (const auto& pe : run.data.test) {
        if (written >= episodes) break;
        const auto& ep = run.corpus.episodes[pe.corpus_index];
        auto gen = evalgen::generate(m, run.signals[pe.corpus_index],
                                     run.cfg.train.generation_max_len, 1);
        gen.episode_id = ep.episode_id;
        if (gen.tokens.empty()) continue;
        auto base = dir / ep.episode_id;
        evalgen::export_attention(m, run.signals[pe.corpus_index], gen,
                                  base.string() + ".tsv",
                                  base.string() + "." + image_format);
        ++written;
    }
    std::cout << "wrote " << written << " attention overlays to " << dir.string()
              << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"ECG report generation toolkit"};
    app.require_subcommand(1);

    std::string config_path, checkpoint, cand_path, ref_path;
    std::string image_format = "svg";
    bool unify = false;
    int episodes = 8;

    auto add_config = [&](CLI::App* cmd) {
        cmd->add_option("-c,--config", config_path, "run configuration file")
            ->required();
    };

    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
    add_config(synth);
    auto* prep = app.add_subcommand("prep", "preprocess, split, and audit");
    add_config(prep);
    auto* train = app.add_subcommand("train", "train a model");
    add_config(train);
    auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint on the test split");
    add_config(evaluate);
    evaluate->add_option("--checkpoint", checkpoint, "model checkpoint");
    auto* sanity = app.add_subcommand("sanity", "all-ones input sanity check");
    add_config(sanity);
    sanity->add_option("--checkpoint", checkpoint, "model checkpoint");
    auto* score = app.add_subcommand("score", "score two aligned report files");
    score->add_option("--candidates", cand_path, "candidate reports, one per line")
        ->required();
    score->add_option("--references", ref_path, "reference reports, one per line")
        ->required();
    score->add_flag("--unify", unify, "apply abbreviation unification before scoring");
    auto* attn = app.add_subcommand("attn", "export attention overlays");
    add_config(attn);
    attn->add_option("--checkpoint", checkpoint, "model checkpoint");
    attn->add_option("--episodes", episodes, "number of test episodes to export");
    attn->add_option("--image-format", image_format, "svg or ppm");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(config_path);
        if (prep->parsed()) return cmd_prep(config_path);
        if (train->parsed()) return cmd_train(config_path);
        if (evaluate->parsed()) return cmd_evaluate(config_path, checkpoint);
        if (sanity->parsed()) return cmd_sanity(config_path, checkpoint);
        if (score->parsed()) return cmd_score(cand_path, ref_path, unify);
        if (attn->parsed()) return cmd_attn(config_path, checkpoint, episodes, image_format);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
