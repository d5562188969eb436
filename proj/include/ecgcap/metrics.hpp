// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "ecgcap/common.hpp"

namespace ecgcap::metrics {

using Tokens = std::vector<std::string>;

/// Corpus-level scores over aligned candidate/reference pairs.
/// BLEU is aggregated corpus-level; METEOR and ROUGE-1 are macro-averaged
/// (ROUGE F recomputed from the averaged precision and recall).
struct MetricReport {
    double meteor = 0.0;
    std::array<double, 4> bleu{0.0, 0.0, 0.0, 0.0}; // BLEU-1 .. BLEU-4
    double rouge1_p = 0.0;
    double rouge1_r = 0.0;
    double rouge1_f = 0.0;
    std::size_t pair_count = 0;
};

namespace detail {

inline std::string lowercase(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return s;
}

inline std::map<std::vector<std::string>, std::size_t>
ngram_counts(const Tokens& t, std::size_t n) {
    std::map<std::vector<std::string>, std::size_t> counts;
    if (t.size() < n) return counts;
    for (std::size_t i = 0; i + n <= t.size(); ++i)
        ++counts[std::vector<std::string>(t.begin() + i, t.begin() + i + n)];
    return counts;
}

// Minimal chunk count over all maximum-cardinality unigram alignments.
// A chunk is a maximal run of candidate positions matched to consecutive
// reference positions. Exact search with pruning; the continue-the-chunk
// branch is explored first so the budget is generous for real reports.
class ChunkSearch {
public:
    ChunkSearch(const Tokens& cand, const Tokens& ref, std::size_t target_m)
        : cand_(cand), ref_(ref), target_m_(target_m) {
        for (std::size_t j = 0; j < ref_.size(); ++j)
            ref_by_token_[ref_[j]].push_back(j);
        used_.assign(ref_.size(), false);
        skip_allowance_ = build_skip_allowance();
    }

    std::size_t run() {
        dfs(0, 0, 0, -2, false);
        return best_;
    }

private:
    std::map<std::string, std::size_t> build_skip_allowance() {
        std::map<std::string, std::size_t> allowance;
        std::map<std::string, std::size_t> cc, rc;
        for (const auto& t : cand_) ++cc[t];
        for (const auto& t : ref_) ++rc[t];
        for (const auto& [tok, c] : cc) {
            std::size_t r = rc.count(tok) ? rc.at(tok) : 0;
            allowance[tok] = c - std::min(c, r);
        }
        return allowance;
    }

    void dfs(std::size_t i, std::size_t matched, std::size_t chunks,
             int last_ref, bool prev_matched) {
        if (budget_ == 0) return;
        --budget_;
        if (chunks >= best_) return;
        if (i == cand_.size()) {
            if (matched == target_m_) best_ = std::min(best_, chunks);
            return;
        }
        if (matched + (cand_.size() - i) < target_m_) return;

        auto it = ref_by_token_.find(cand_[i]);
        if (it != ref_by_token_.end()) {
            // Continuation of the current chunk first.
            int cont = last_ref + 1;
            if (prev_matched && cont >= 0 &&
                cont < static_cast<int>(ref_.size()) && !used_[cont] &&
                ref_[cont] == cand_[i]) {
                used_[cont] = true;
                dfs(i + 1, matched + 1, chunks, cont, true);
                used_[cont] = false;
            }
            for (std::size_t j : it->second) {
                if (used_[j]) continue;
                if (prev_matched && static_cast<int>(j) == cont) continue;
                used_[j] = true;
                dfs(i + 1, matched + 1, chunks + 1, static_cast<int>(j), true);
                used_[j] = false;
            }
        }
        std::size_t& allowance = skip_allowance_[cand_[i]];
        if (allowance > 0) {
            --allowance;
            dfs(i + 1, matched, chunks, last_ref, false);
            ++allowance;
        }
    }

    const Tokens& cand_;
    const Tokens& ref_;
    std::size_t target_m_;
    std::map<std::string, std::vector<std::size_t>> ref_by_token_;
    std::map<std::string, std::size_t> skip_allowance_;
    std::vector<bool> used_;
    std::size_t best_ = SIZE_MAX;
    long long budget_ = 2'000'000;
};

} // namespace detail

/// Corpus-level BLEU with clipped modified n-gram precision, uniform 1/max_n
/// weights, and brevity penalty min(1, exp(1 - r/c)). Any zero precision
/// yields 0 (no smoothing).
inline double bleu(const std::vector<Tokens>& candidates,
                   const std::vector<Tokens>& references, std::size_t max_n) {
    if (candidates.empty()) throw Error("bleu: empty candidate list");
    if (candidates.size() != references.size())
        throw Error("bleu: candidate/reference count mismatch");
    if (max_n < 1 || max_n > 4) throw Error("bleu: max_n must be in 1..4");

    double log_sum = 0.0;
    for (std::size_t n = 1; n <= max_n; ++n) {
        std::size_t matched = 0, total = 0;
        for (std::size_t p = 0; p < candidates.size(); ++p) {
            auto cg = detail::ngram_counts(candidates[p], n);
            auto rg = detail::ngram_counts(references[p], n);
            for (const auto& [gram, count] : cg) {
                total += count;
                auto it = rg.find(gram);
                if (it != rg.end()) matched += std::min(count, it->second);
            }
        }
        if (total == 0 || matched == 0) return 0.0;
        log_sum += std::log(static_cast<double>(matched) / static_cast<double>(total));
    }

    std::size_t cand_len = 0, ref_len = 0;
    for (std::size_t p = 0; p < candidates.size(); ++p) {
        cand_len += candidates[p].size();
        ref_len += references[p].size();
    }
    if (cand_len == 0) return 0.0;
    double bp = cand_len > ref_len
                    ? 1.0
                    : std::exp(1.0 - static_cast<double>(ref_len) /
                                         static_cast<double>(cand_len));
    return bp * std::exp(log_sum / static_cast<double>(max_n));
}

struct MeteorOptions {
    bool use_stemmer = false; // optional second matching stage
};

namespace detail {

// Light suffix stripper for the optional stem-match stage.
inline std::string stem(const std::string& w) {
    auto ends_with = [&](const char* suf) {
        std::size_t n = std::strlen(suf);
        return w.size() > n + 2 && w.compare(w.size() - n, n, suf) == 0;
    };
    if (ends_with("ing")) return w.substr(0, w.size() - 3);
    if (ends_with("ies")) return w.substr(0, w.size() - 3) + "y";
    if (ends_with("ed")) return w.substr(0, w.size() - 2);
    if (ends_with("s") && w[w.size() - 2] != 's')
        return w.substr(0, w.size() - 1);
    return w;
}

} // namespace detail

/// Single-pair METEOR: staged unigram alignment (exact, then optional stem),
/// harmonic mean weighted toward recall, fragmentation penalty from the
/// minimal-chunk alignment.
inline double meteor(const Tokens& candidate_in, const Tokens& reference_in,
                     const MeteorOptions& opts = {}) {
    Tokens cand, ref;
    cand.reserve(candidate_in.size());
    ref.reserve(reference_in.size());
    for (const auto& t : candidate_in) cand.push_back(detail::lowercase(t));
    for (const auto& t : reference_in) ref.push_back(detail::lowercase(t));
    if (cand.empty() || ref.empty()) return 0.0;

    std::map<std::string, std::size_t> cc, rc;
    for (const auto& t : cand) ++cc[t];
    for (const auto& t : ref) ++rc[t];

    std::size_t m = 0;
    for (const auto& [tok, c] : cc)
        if (auto it = rc.find(tok); it != rc.end()) m += std::min(c, it->second);

    Tokens cand_keys = cand, ref_keys = ref;
    if (opts.use_stemmer) {
        // Stage 2: stem leftovers, add stem matches, and compare by stem in
        // the chunk search so stage-2 pairs can join chunks.
        std::map<std::string, std::size_t> cl, rl;
        for (const auto& [tok, c] : cc) {
            std::size_t r = rc.count(tok) ? rc.at(tok) : 0;
            if (c > r) cl[detail::stem(tok)] += c - r;
        }
        for (const auto& [tok, r] : rc) {
            std::size_t c = cc.count(tok) ? cc.at(tok) : 0;
            if (r > c) rl[detail::stem(tok)] += r - c;
        }
        for (const auto& [s, c] : cl)
            if (auto it = rl.find(s); it != rl.end()) m += std::min(c, it->second);
        for (auto& t : cand_keys) t = detail::stem(t);
        for (auto& t : ref_keys) t = detail::stem(t);
    }
    if (m == 0) return 0.0;

    detail::ChunkSearch search(cand_keys, ref_keys, m);
    double chunks = static_cast<double>(search.run());

    double p = static_cast<double>(m) / static_cast<double>(cand.size());
    double r = static_cast<double>(m) / static_cast<double>(ref.size());
    double f_mean = 10.0 * p * r / (r + 9.0 * p);
    double penalty = 0.5 * std::pow(chunks / static_cast<double>(m), 3.0);
    return f_mean * (1.0 - penalty);
}

struct Rouge1Score {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Unigram overlap precision/recall/F1. Zero-length sides yield 0 ratios.
inline Rouge1Score rouge1(const Tokens& candidate, const Tokens& reference) {
    std::map<std::string, std::size_t> cc, rc;
    for (const auto& t : candidate) ++cc[t];
    for (const auto& t : reference) ++rc[t];
    std::size_t overlap = 0;
    for (const auto& [tok, c] : cc)
        if (auto it = rc.find(tok); it != rc.end())
            overlap += std::min(c, it->second);

    Rouge1Score out;
    if (!candidate.empty())
        out.precision = static_cast<double>(overlap) / candidate.size();
    if (!reference.empty())
        out.recall = static_cast<double>(overlap) / reference.size();
    if (out.precision + out.recall > 0.0)
        out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
    return out;
}

inline MetricReport corpus_evaluate(const std::vector<Tokens>& candidates,
                                    const std::vector<Tokens>& references,
                                    const MeteorOptions& opts = {}) {
    if (candidates.empty()) throw Error("corpus_evaluate: empty pair set");
    if (candidates.size() != references.size())
        throw Error("corpus_evaluate: candidate/reference count mismatch");

    MetricReport report;
    report.pair_count = candidates.size();
    for (std::size_t n = 1; n <= 4; ++n)
        report.bleu[n - 1] = bleu(candidates, references, n);

    double meteor_sum = 0.0, p_sum = 0.0, r_sum = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        meteor_sum += meteor(candidates[i], references[i], opts);
        auto rg = rouge1(candidates[i], references[i]);
        p_sum += rg.precision;
        r_sum += rg.recall;
    }
    double n = static_cast<double>(candidates.size());
    report.meteor = meteor_sum / n;
    report.rouge1_p = p_sum / n;
    report.rouge1_r = r_sum / n;
    if (report.rouge1_p + report.rouge1_r > 0.0)
        report.rouge1_f = 2.0 * report.rouge1_p * report.rouge1_r /
                          (report.rouge1_p + report.rouge1_r);
    return report;
}

} // namespace ecgcap::metrics
