// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "ecgcap/common.hpp"

namespace ecgcap::corpus {

/// One recorded episode. group_id is the patient id for multi-lead clinical
/// data and the device id for implanted-monitor data.
struct EcgEpisode {
    std::string episode_id;
    std::string group_id;
    int sampling_rate_hz = 0;
    int leads = 0;
    long samples = 0;
    std::string signal_path;  // relative to the manifest directory
    std::string rhythm_class; // empty = absent
    std::string recorded_at;  // ISO-8601 date or empty
    std::string report;
};

struct Corpus {
    std::vector<EcgEpisode> episodes;
    std::string base_dir; // directory signal paths resolve against

    std::size_t size() const { return episodes.size(); }
};

struct CorpusStats {
    std::size_t episode_count = 0;
    std::size_t unique_group_count = 0;
    std::size_t unique_report_count = 0;
    double unique_group_proportion = 0.0;
    double unique_report_proportion = 0.0;
};

namespace detail {

inline bool valid_iso_date(const std::string& s) {
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
    for (std::size_t i : {0u, 1u, 2u, 3u, 5u, 6u, 8u, 9u})
        if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
    return true;
}

inline void require_plain_field(const std::string& v, const char* name) {
    if (v.find_first_of(",\"\n\r") != std::string::npos)
        throw Error(std::string("manifest field ") + name +
                    " must not contain commas, quotes, or newlines: '" + v + "'");
}

inline long parse_count(const std::string& s, const char* name, std::size_t line) {
    try {
        std::size_t used = 0;
        long v = std::stol(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw Error("manifest line " + std::to_string(line) + ": field " + name +
                    " is not an integer: '" + s + "'");
    }
}

} // namespace detail

/// Report normalization used for uniqueness statistics and deduplication:
/// lowercase, strip punctuation (all non-alphanumeric, non-space characters),
/// collapse whitespace runs, trim.
inline std::string normalize_report(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (unsigned char c : text) {
        if (std::isalnum(c) || c >= 0x80) {
            if (pending_space && !out.empty()) out.push_back(' ');
            pending_space = false;
            out.push_back(static_cast<char>(std::tolower(c)));
        } else if (std::isspace(c)) {
            pending_space = true;
        }
        // punctuation dropped entirely
    }
    return out;
}

// ---------------------------------------------------------------------------
// Manifest format: one record per line,
//   episode_id,group_id,sampling_rate_hz,leads,samples,signal_path,
//   rhythm_class,recorded_at,"report"
// The report comes last and is double-quoted (inner quotes doubled) so commas
// survive. Signals live in separate raw files: little-endian IEEE-754 32-bit,
// lead-major.
// ---------------------------------------------------------------------------

inline Corpus load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open manifest: " + path);

    Corpus corpus;
    corpus.base_dir = std::filesystem::path(path).parent_path().string();
    std::unordered_set<std::string> seen_ids;

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;

        std::vector<std::string> fields;
        std::size_t pos = 0;
        for (int f = 0; f < 8; ++f) {
            auto comma = line.find(',', pos);
            if (comma == std::string::npos)
                throw Error("manifest line " + std::to_string(line_no) +
                            ": expected 9 fields");
            fields.push_back(line.substr(pos, comma - pos));
            pos = comma + 1;
        }
        if (pos >= line.size() || line[pos] != '"')
            throw Error("manifest line " + std::to_string(line_no) +
                        ": report field must be quoted");
        std::string report;
        ++pos;
        bool closed = false;
        while (pos < line.size()) {
            if (line[pos] == '"') {
                if (pos + 1 < line.size() && line[pos + 1] == '"') {
                    report.push_back('"');
                    pos += 2;
                } else {
                    closed = true;
                    ++pos;
                    break;
                }
            } else {
                report.push_back(line[pos]);
                ++pos;
            }
        }
        if (!closed || pos != line.size())
            throw Error("manifest line " + std::to_string(line_no) +
                        ": unterminated or trailing content after report");

        EcgEpisode ep;
        ep.episode_id = fields[0];
        ep.group_id = fields[1];
        ep.sampling_rate_hz =
            static_cast<int>(detail::parse_count(fields[2], "sampling_rate_hz", line_no));
        ep.leads = static_cast<int>(detail::parse_count(fields[3], "leads", line_no));
        ep.samples = detail::parse_count(fields[4], "samples", line_no);
        ep.signal_path = fields[5];
        ep.rhythm_class = fields[6];
        ep.recorded_at = fields[7];
        ep.report = report;

        if (ep.episode_id.empty())
            throw Error("manifest line " + std::to_string(line_no) + ": empty episode_id");
        if (ep.sampling_rate_hz <= 0)
            throw Error("manifest line " + std::to_string(line_no) +
                        ": sampling_rate_hz must be positive");
        if (ep.leads < 1)
            throw Error("manifest line " + std::to_string(line_no) + ": leads must be >= 1");
        if (ep.samples < 1)
            throw Error("manifest line " + std::to_string(line_no) + ": samples must be >= 1");
        if (!ep.recorded_at.empty() && !detail::valid_iso_date(ep.recorded_at))
            throw Error("manifest line " + std::to_string(line_no) +
                        ": recorded_at must be an ISO-8601 date or empty, got '" +
                        ep.recorded_at + "'");
        if (!seen_ids.insert(ep.episode_id).second)
            throw Error("manifest: duplicate episode_id '" + ep.episode_id + "'");
        corpus.episodes.push_back(std::move(ep));
    }
    return corpus;
}

inline void write_manifest(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write manifest: " + path);
    for (const auto& ep : corpus.episodes) {
        detail::require_plain_field(ep.episode_id, "episode_id");
        detail::require_plain_field(ep.group_id, "group_id");
        detail::require_plain_field(ep.signal_path, "signal_path");
        detail::require_plain_field(ep.rhythm_class, "rhythm_class");
        detail::require_plain_field(ep.recorded_at, "recorded_at");
        std::string quoted_report;
        quoted_report.reserve(ep.report.size() + 2);
        for (char c : ep.report) {
            if (c == '"') quoted_report += "\"\"";
            else quoted_report.push_back(c);
        }
        out << ep.episode_id << ',' << ep.group_id << ',' << ep.sampling_rate_hz
            << ',' << ep.leads << ',' << ep.samples << ',' << ep.signal_path << ','
            << ep.rhythm_class << ',' << ep.recorded_at << ",\"" << quoted_report
            << "\"\n";
    }
}

/// Reads the raw waveform: little-endian float32, lead-major. Returns a
/// (leads x samples) matrix of finite values.
inline Mat read_signal(const EcgEpisode& ep, const std::string& base_dir) {
    std::filesystem::path p(ep.signal_path);
    if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
    std::ifstream in(p, std::ios::binary);
    if (!in)
        throw Error("signal file missing for episode '" + ep.episode_id + "': " +
                    p.string());

    in.seekg(0, std::ios::end);
    auto bytes = static_cast<long long>(in.tellg());
    long long expected = static_cast<long long>(ep.leads) * ep.samples * 4;
    if (bytes != expected)
        throw Error("signal payload for episode '" + ep.episode_id + "' is " +
                    std::to_string(bytes) + " bytes, expected " +
                    std::to_string(expected));
    in.seekg(0, std::ios::beg);

    std::vector<float> raw(static_cast<std::size_t>(ep.leads) *
                           static_cast<std::size_t>(ep.samples));
    in.read(reinterpret_cast<char*>(raw.data()),
            static_cast<std::streamsize>(raw.size() * 4));
    if (!in)
        throw Error("short read on signal for episode '" + ep.episode_id + "'");

    Mat signal(ep.leads, ep.samples);
    std::size_t idx = 0;
    for (int lead = 0; lead < ep.leads; ++lead)
        for (long s = 0; s < ep.samples; ++s) {
            float v = raw[idx++];
            if (!std::isfinite(v))
                throw Error("non-finite sample in signal for episode '" +
                            ep.episode_id + "'");
            signal(lead, s) = static_cast<double>(v);
        }
    return signal;
}

inline void write_signal(const Mat& signal, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write signal: " + path);
    for (Eigen::Index lead = 0; lead < signal.rows(); ++lead)
        for (Eigen::Index s = 0; s < signal.cols(); ++s) {
            float v = static_cast<float>(signal(lead, s));
            out.write(reinterpret_cast<const char*>(&v), 4);
        }
}

inline CorpusStats corpus_stats(const Corpus& corpus) {
    if (corpus.episodes.empty()) throw Error("corpus_stats: empty corpus");
    std::set<std::string> groups;
    std::set<std::string> reports;
    for (const auto& ep : corpus.episodes) {
        groups.insert(ep.group_id);
        reports.insert(normalize_report(ep.report));
    }
    CorpusStats stats;
    stats.episode_count = corpus.episodes.size();
    stats.unique_group_count = groups.size();
    stats.unique_report_count = reports.size();
    stats.unique_group_proportion =
        static_cast<double>(groups.size()) / static_cast<double>(stats.episode_count);
    stats.unique_report_proportion =
        static_cast<double>(reports.size()) / static_cast<double>(stats.episode_count);
    return stats;
}

// ---------------------------------------------------------------------------
// Synthetic corpora: periodic Gaussian-bump beats plus white noise,
// amplitude-normalized per lead. Reports are pure functions of the class and
// the sampled (quantized) rate.
// ---------------------------------------------------------------------------

struct SyntheticClassSpec {
    std::string name;
    int rate_min = 60;
    int rate_max = 90;
    double irregularity = 0.0;    // RR-interval jitter fraction
    double extra_beat_prob = 0.0; // chance of an interposed wide beat
    double noise_level = 0.05;
    std::string report_template;  // may reference {class} and {rate}
};

struct SyntheticSpec {
    std::vector<SyntheticClassSpec> classes;
    int episodes_per_class = 400;
    int leads = 1;
    int sampling_rate_hz = 128;
    double duration_s = 10.0;
};

/// The corpus bundled for desk-scale runs: five rhythm classes whose rate
/// bands and morphologies are separable from the waveform alone.
inline SyntheticSpec default_synthetic_spec() {
    SyntheticSpec spec;
    spec.classes = {
        {"normal sinus rhythm", 60, 90, 0.0, 0.0, 0.05,
         "{class} at {rate} beats per minute"},
        {"sinus bradycardia", 40, 55, 0.0, 0.0, 0.05,
         "{class} with slow rate of {rate}"},
        {"sinus tachycardia", 110, 160, 0.0, 0.0, 0.05,
         "{class} fast rate {rate} noted"},
        {"atrial fibrillation", 70, 130, 0.35, 0.0, 0.08,
         "{class} with irregular intervals around {rate}"},
        {"premature ventricular contraction", 60, 90, 0.0, 0.35, 0.05,
         "frequent {class} over baseline {rate}"},
    };
    return spec;
}

namespace detail {

inline std::string instantiate_template(const std::string& tmpl,
                                        const std::string& cls, int rate) {
    std::string out = tmpl;
    auto replace_all = [&](const std::string& key, const std::string& value) {
        std::size_t pos = 0;
        while ((pos = out.find(key, pos)) != std::string::npos) {
            out.replace(pos, key.size(), value);
            pos += value.size();
        }
    };
    replace_all("{class}", cls);
    replace_all("{rate}", std::to_string(rate));
    return out;
}

inline void add_bump(std::vector<double>& x, double center, double sigma,
                     double amp) {
    int lo = std::max(0, static_cast<int>(std::floor(center - 4 * sigma)));
    int hi = std::min(static_cast<int>(x.size()) - 1,
                      static_cast<int>(std::ceil(center + 4 * sigma)));
    for (int i = lo; i <= hi; ++i) {
        double d = (static_cast<double>(i) - center) / sigma;
        x[static_cast<std::size_t>(i)] += amp * std::exp(-0.5 * d * d);
    }
}

inline std::vector<double> synth_waveform(const SyntheticClassSpec& cls, int rate,
                                          int fs, int n, Rng& rng) {
    std::vector<double> x(static_cast<std::size_t>(n), 0.0);
    double period = static_cast<double>(fs) * 60.0 / static_cast<double>(rate);
    double sigma_r = 0.02 * fs;
    double sigma_t = 0.06 * fs;
    double t_offset = 0.28 * fs;

    double t = rng.uniform() * period; // random phase
    while (t < n) {
        add_bump(x, t, sigma_r, 1.0);
        if (t + t_offset < n) add_bump(x, t + t_offset, sigma_t, 0.3);
        double interval = period;
        if (cls.irregularity > 0.0)
            interval *= 1.0 + cls.irregularity * (2.0 * rng.uniform() - 1.0);
        if (cls.extra_beat_prob > 0.0 && rng.uniform() < cls.extra_beat_prob)
            add_bump(x, t + 0.5 * interval, sigma_r * 2.2, 1.3);
        t += interval;
    }
    return x;
}

} // namespace detail

struct SyntheticCorpus {
    Corpus corpus;            // signal_path filled, base_dir empty until written
    std::vector<Mat> signals; // parallel to corpus.episodes
};

/// Deterministic for a fixed seed. Each synthetic "patient" owns 1-5 episodes
/// of a single class; every report is template(class, quantized rate).
inline SyntheticCorpus generate_synthetic(const SyntheticSpec& spec, uint64_t seed) {
    if (spec.classes.size() < 2)
        throw Error("generate_synthetic: at least 2 classes required");
    if (spec.episodes_per_class <= 0 || spec.leads <= 0 ||
        spec.sampling_rate_hz <= 0 || spec.duration_s <= 0)
        throw Error("generate_synthetic: counts and durations must be positive");
    for (const auto& cls : spec.classes) {
        if (cls.rate_min <= 0 || cls.rate_max < cls.rate_min)
            throw Error("generate_synthetic: invalid rate band for class " + cls.name);
        if ((cls.rate_min + 9) / 10 * 10 > cls.rate_max / 10 * 10)
            throw Error("generate_synthetic: rate band for class " + cls.name +
                        " contains no multiple of 10");
    }

    SyntheticCorpus out;
    int n_samples = static_cast<int>(std::lround(spec.duration_s * spec.sampling_rate_hz));

    Rng group_rng(Rng::mix(seed, 0x67726f75)); // group-size stream
    int episode_index = 0;
    int group_index = 0;
    for (std::size_t ci = 0; ci < spec.classes.size(); ++ci) {
        const auto& cls = spec.classes[ci];
        int remaining = spec.episodes_per_class;
        while (remaining > 0) {
            int group_size =
                static_cast<int>(group_rng.uniform_int(1, 5));
            group_size = std::min(group_size, remaining);
            std::string group_id = "p" + std::to_string(10000 + group_index);
            ++group_index;

            for (int e = 0; e < group_size; ++e) {
                Rng ep_rng(Rng::mix(seed, 0xe9150000ULL + static_cast<uint64_t>(episode_index)));
                int raw_rate = static_cast<int>(ep_rng.uniform_int(cls.rate_min, cls.rate_max));
                int rate = ((raw_rate + 5) / 10) * 10;
                rate = std::clamp(rate, (cls.rate_min + 9) / 10 * 10,
                                  cls.rate_max / 10 * 10);

                EcgEpisode ep;
                ep.episode_id = "syn-" + std::to_string(100000 + episode_index);
                ep.group_id = group_id;
                ep.sampling_rate_hz = spec.sampling_rate_hz;
                ep.leads = spec.leads;
                ep.samples = n_samples;
                ep.signal_path = "signals/" + ep.episode_id + ".f32";
                ep.rhythm_class = cls.name;
                int day = episode_index % 28 + 1;
                ep.recorded_at = "2024-01-" + std::string(day < 10 ? "0" : "") +
                                 std::to_string(day);
                ep.report = detail::instantiate_template(cls.report_template,
                                                         cls.name, rate);

                Mat signal(spec.leads, n_samples);
                for (int lead = 0; lead < spec.leads; ++lead) {
                    auto base = detail::synth_waveform(cls, rate, spec.sampling_rate_hz,
                                                       n_samples, ep_rng);
                    double gain = 1.0 - 0.3 * lead / std::max(1, spec.leads - 1);
                    if (spec.leads == 1) gain = 1.0;
                    double peak = 0.0;
                    for (int s = 0; s < n_samples; ++s) {
                        double v = gain * base[static_cast<std::size_t>(s)] +
                                   cls.noise_level * ep_rng.normal();
                        signal(lead, s) = v;
                        peak = std::max(peak, std::fabs(v));
                    }
                    if (peak > 0.0) signal.row(lead) /= peak;
                }
                out.signals.push_back(std::move(signal));
                out.corpus.episodes.push_back(std::move(ep));
                ++episode_index;
            }
            remaining -= group_size;
        }
    }
    return out;
}

/// Materializes a synthetic corpus: <dir>/manifest.csv plus raw signal files.
inline std::string write_synthetic(const SyntheticCorpus& synth,
                                   const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "signals");
    for (std::size_t i = 0; i < synth.corpus.episodes.size(); ++i) {
        const auto& ep = synth.corpus.episodes[i];
        write_signal(synth.signals[i], (fs::path(dir) / ep.signal_path).string());
    }
    std::string manifest_path = (fs::path(dir) / "manifest.csv").string();
    write_manifest(synth.corpus, manifest_path);
    return manifest_path;
}

/// Preloads every signal of a corpus (desk-scale corpora fit in memory).
inline std::vector<Mat> load_all_signals(const Corpus& corpus) {
    std::vector<Mat> signals;
    signals.reserve(corpus.episodes.size());
    for (const auto& ep : corpus.episodes)
        signals.push_back(read_signal(ep, corpus.base_dir));
    return signals;
}

} // namespace ecgcap::corpus
