// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "ecgcap/common.hpp"

namespace ecgcap::textprep {

using Tokens = std::vector<std::string>;
using TokenIds = std::vector<int>;

// ---------------------------------------------------------------------------
// Abbreviation unification
// ---------------------------------------------------------------------------

/// Ordered (matched term -> unified form) pairs, matched case-insensitively
/// on whole tokens. Longer terms win at a given position.
class AbbreviationTable {
public:
    AbbreviationTable() = default;

    void add(std::string term, std::string unified) {
        std::transform(term.begin(), term.end(), term.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        for (const auto& [t, u] : rules_) {
            if (t == term) {
                if (u != unified)
                    throw Error("abbreviation table: term '" + term +
                                "' maps to two different unified forms");
                return;
            }
        }
        rules_.emplace_back(std::move(term), std::move(unified));
        sorted_ = false;
    }

    const std::vector<std::pair<std::string, std::string>>& rules() const {
        return rules_;
    }

    std::size_t size() const { return rules_.size(); }

    /// Rules sorted by descending term length (match priority order).
    const std::vector<std::pair<std::string, std::string>>& by_priority() const {
        if (!sorted_) {
            by_priority_ = rules_;
            std::stable_sort(by_priority_.begin(), by_priority_.end(),
                             [](const auto& a, const auto& b) {
                                 return a.first.size() > b.first.size();
                             });
            sorted_ = true;
        }
        return by_priority_;
    }

private:
    std::vector<std::pair<std::string, std::string>> rules_;
    mutable std::vector<std::pair<std::string, std::string>> by_priority_;
    mutable bool sorted_ = false;
};

/// Table contents shipped with the repo (data/abbreviations.tsv mirrors this).
inline AbbreviationTable builtin_abbreviation_table() {
    AbbreviationTable t;
    auto add_all = [&](std::initializer_list<const char*> terms,
                       const char* unified) {
        for (const char* term : terms) t.add(term, unified);
    };
    add_all({"@"}, "at");
    add_all({"+", "&"}, "and");
    add_all({"pac", "pacs", "sve", "sves", "apc", "apcs"},
            "premature atrial contraction");
    add_all({"pvc", "pvcs", "vpc", "vpcs", "ves"},
            "premature ventricular contraction");
    add_all({"ectopic", "ectopics", "ectopy"}, "premature contraction");
    add_all({"brady"}, "bradycardia");
    add_all({"sb"}, "sinus bradycardia");
    add_all({"tachy", "tachycardia"}, "tachycardia");
    add_all({"st"}, "sinus tachycardia");
    add_all({"svt"}, "supraventricular tachycardia");
    add_all({"nsvt"}, "nonsustained ventricular tachycardia");
    add_all({"sr"}, "sinus rhythm");
    add_all({"nsr"}, "normal sinus rhythm");
    add_all({"af", "afib", "a-fib"}, "atrial fibrillation");
    add_all({"afl", "a-flutter", "aflutter"}, "atrial flutter");
    add_all({"cw"}, "continuous wave");
    add_all({"rvr"}, "rapid ventricular rate");
    add_all({"ppm"}, "permanent pacemaker");
    add_all({"bpm"}, "beats per minute");
    add_all({"pat", "pt"}, "patient");
    add_all({"bts"}, "beats");
    add_all({"wo", "w/o"}, "without");
    add_all({"w", "w/"}, "with");
    add_all({"hr"}, "heart rate");
    add_all({"avb"}, "atrioventricular block");
    return t;
}

/// Loads a two-column (term<TAB>unified form) UTF-8 file. Blank lines and
/// lines starting with '#' are skipped.
inline AbbreviationTable load_abbreviation_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open abbreviation table: " + path);
    AbbreviationTable t;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw Error("abbreviation table " + path + " line " +
                        std::to_string(line_no) + ": expected two tab-separated columns");
        t.add(line.substr(0, tab), line.substr(tab + 1));
    }
    return t;
}

namespace detail {

inline bool is_word_char(unsigned char c) {
    return std::isalnum(c) != 0 || c >= 0x80;
}

} // namespace detail

/// Replaces every whole-token occurrence of a matched term with its unified
/// form and lowercases the result. A term edge that is itself a symbol (like
/// the '/' in "w/") needs no boundary on that side; spaces are inserted only
/// where a replacement would otherwise fuse with adjacent word characters.
inline std::string unify_abbreviations(const std::string& text,
                                       const AbbreviationTable& table) {
    std::string lower = text;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return std::tolower(c); });

    const auto& rules = table.by_priority();
    std::string out;
    out.reserve(lower.size());
    std::size_t i = 0;
    while (i < lower.size()) {
        const std::pair<std::string, std::string>* hit = nullptr;
        for (const auto& rule : rules) {
            const std::string& term = rule.first;
            if (term.empty() || i + term.size() > lower.size()) continue;
            if (lower.compare(i, term.size(), term) != 0) continue;
            bool left_ok = !detail::is_word_char(term.front()) || i == 0 ||
                           !detail::is_word_char(lower[i - 1]);
            std::size_t after = i + term.size();
            bool right_ok = !detail::is_word_char(term.back()) ||
                            after == lower.size() ||
                            !detail::is_word_char(lower[after]);
            if (left_ok && right_ok) {
                hit = &rule;
                break;
            }
        }
        if (hit) {
            const std::string& rep = hit->second;
            if (!out.empty() && detail::is_word_char(out.back()) &&
                detail::is_word_char(rep.front()))
                out.push_back(' ');
            out += rep;
            i += hit->first.size();
            if (i < lower.size() && detail::is_word_char(lower[i]) &&
                detail::is_word_char(rep.back()))
                out.push_back(' ');
        } else {
            out.push_back(lower[i]);
            ++i;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

/// Splits at every non-letter character. Maximal runs of letters or of digits
/// are tokens; every other non-space character is a one-character token;
/// whitespace is dropped. Bytes >= 0x80 count as letters so UTF-8 words stay
/// whole.
inline Tokens tokenize(const std::string& text) {
    enum class Kind { None, Letter, Digit };
    Tokens out;
    std::string run;
    Kind kind = Kind::None;
    auto flush = [&] {
        if (!run.empty()) out.push_back(run);
        run.clear();
        kind = Kind::None;
    };
    for (unsigned char c : text) {
        Kind k = Kind::None;
        if (std::isalpha(c) || c >= 0x80) k = Kind::Letter;
        else if (std::isdigit(c)) k = Kind::Digit;

        if (k == Kind::None) {
            flush();
            if (!std::isspace(c)) out.push_back(std::string(1, static_cast<char>(c)));
        } else {
            if (k != kind) flush();
            kind = k;
            run.push_back(static_cast<char>(c));
        }
    }
    flush();
    return out;
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

class Vocabulary {
public:
    static constexpr const char* kStart = "<start>";
    static constexpr const char* kEnd = "<end>";
    static constexpr const char* kPad = "<pad>";
    static constexpr const char* kUnk = "<unk>";

    Vocabulary() = default;

    /// Content tokens in rank order followed by the four specials.
    explicit Vocabulary(std::vector<std::string> content_tokens,
                        std::size_t max_size = 1024, std::size_t min_frequency = 2)
        : tokens_(std::move(content_tokens)),
          max_size_(max_size),
          min_frequency_(min_frequency) {
        for (const char* s : {kStart, kEnd, kPad, kUnk}) tokens_.emplace_back(s);
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            if (!index_.emplace(tokens_[i], static_cast<int>(i)).second)
                throw Error("vocabulary: duplicate token '" + tokens_[i] + "'");
        }
    }

    int size() const { return static_cast<int>(tokens_.size()); }
    int start_id() const { return size() - 4; }
    int end_id() const { return size() - 3; }
    int pad_id() const { return size() - 2; }
    int unk_id() const { return size() - 1; }
    std::size_t max_size() const { return max_size_; }
    std::size_t min_frequency() const { return min_frequency_; }

    bool contains(const std::string& token) const { return index_.count(token) > 0; }

    int id_of(const std::string& token) const {
        auto it = index_.find(token);
        return it == index_.end() ? unk_id() : it->second;
    }

    const std::string& token_of(int id) const {
        if (id < 0 || id >= size())
            throw Error("vocabulary: id " + std::to_string(id) + " out of range");
        return tokens_[static_cast<std::size_t>(id)];
    }

    const std::vector<std::string>& tokens() const { return tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
    std::size_t max_size_ = 1024;
    std::size_t min_frequency_ = 2;
};

/// Ranks tokens by descending frequency (ties lexicographic), drops tokens
/// below min_frequency, truncates to max_size, then appends the specials.
/// Counts must come from the training split only.
inline Vocabulary build_vocabulary(const std::vector<Tokens>& documents,
                                   std::size_t min_frequency = 2,
                                   std::size_t max_size = 1024) {
    std::map<std::string, std::size_t> counts;
    for (const auto& doc : documents)
        for (const auto& tok : doc) ++counts[tok];
    if (counts.empty()) throw Error("build_vocabulary: empty token stream");

    std::vector<std::pair<std::string, std::size_t>> ranked;
    ranked.reserve(counts.size());
    for (const auto& [tok, c] : counts)
        if (c >= min_frequency) ranked.emplace_back(tok, c);
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (ranked.size() > max_size) ranked.resize(max_size);

    std::vector<std::string> content;
    content.reserve(ranked.size());
    for (auto& [tok, c] : ranked) content.push_back(std::move(tok));
    return Vocabulary(std::move(content), max_size, min_frequency);
}

enum class OverLength { Reject, Truncate };

/// start + mapped ids (unknown for out-of-vocabulary) + end, padded to
/// max_report_len.
inline TokenIds encode(const Tokens& tokens, const Vocabulary& vocab,
                       std::size_t max_report_len = 300,
                       OverLength policy = OverLength::Reject) {
    std::size_t budget = max_report_len - 2;
    std::size_t n = tokens.size();
    if (n > budget) {
        if (policy == OverLength::Reject)
            throw Error("encode: report of " + std::to_string(n) +
                        " tokens exceeds max length " + std::to_string(max_report_len));
        n = budget;
    }
    TokenIds ids;
    ids.reserve(max_report_len);
    ids.push_back(vocab.start_id());
    for (std::size_t i = 0; i < n; ++i) ids.push_back(vocab.id_of(tokens[i]));
    ids.push_back(vocab.end_id());
    ids.resize(max_report_len, vocab.pad_id());
    return ids;
}

/// Strips start/end/pad and joins the remaining tokens with single spaces.
inline std::string decode(const TokenIds& ids, const Vocabulary& vocab) {
    std::string out;
    for (int id : ids) {
        if (id == vocab.start_id() || id == vocab.pad_id()) continue;
        if (id == vocab.end_id()) break;
        const std::string& tok = vocab.token_of(id);
        if (!out.empty()) out.push_back(' ');
        out += tok;
    }
    return out;
}

inline void save_vocabulary(const Vocabulary& vocab, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write vocabulary: " + path);
    for (int i = 0; i < vocab.size(); ++i)
        out << vocab.token_of(i) << '\t' << i << '\n';
}

inline Vocabulary load_vocabulary(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open vocabulary: " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw Error("vocabulary file " + path + ": malformed line");
        tokens.push_back(line.substr(0, tab));
    }
    if (tokens.size() < 4 || tokens[tokens.size() - 4] != Vocabulary::kStart)
        throw Error("vocabulary file " + path + ": missing special tokens");
    tokens.resize(tokens.size() - 4);
    return Vocabulary(std::move(tokens));
}

} // namespace ecgcap::textprep
