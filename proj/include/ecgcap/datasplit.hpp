// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "ecgcap/common.hpp"
#include "ecgcap/corpus.hpp"

namespace ecgcap::datasplit {

enum class Split { Train = 0, Validation = 1, Test = 2 };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Validation: return "validation";
        case Split::Test: return "test";
    }
    return "?";
}

inline Split split_from_name(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "validation" || name == "val") return Split::Validation;
    if (name == "test") return Split::Test;
    throw Error("unknown split name: '" + name + "'");
}

enum class SplitMode { Grouped, Random, Official };

struct SplitAssignment {
    std::unordered_map<std::string, Split> by_episode;
    std::array<double, 3> ratios{0.0, 0.0, 0.0};
    SplitMode mode = SplitMode::Grouped;
    uint64_t seed = 0;

    Split of(const std::string& episode_id) const {
        auto it = by_episode.find(episode_id);
        if (it == by_episode.end())
            throw Error("episode '" + episode_id + "' has no split assignment");
        return it->second;
    }
};

/// Removes duplicates: episodes sharing (group_id, normalized report,
/// rhythm_class, recorded_at) keep one representative chosen uniformly at
/// random under the seed; survivor order matches the input order.
inline corpus::Corpus deduplicate(const corpus::Corpus& input, uint64_t seed) {
    struct Group {
        std::vector<std::size_t> members;
    };
    std::map<std::string, Group> groups;
    for (std::size_t i = 0; i < input.episodes.size(); ++i) {
        const auto& ep = input.episodes[i];
        std::string key = ep.group_id + '\x1f' + corpus::normalize_report(ep.report) +
                          '\x1f' + ep.rhythm_class + '\x1f' + ep.recorded_at;
        groups[key].members.push_back(i);
    }

    std::vector<bool> keep(input.episodes.size(), false);
    Rng rng(Rng::mix(seed, 0xd3d10));
    for (auto& [key, group] : groups) {
        std::size_t pick = group.members[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<int64_t>(group.members.size()) - 1))];
        keep[pick] = true;
    }

    corpus::Corpus out;
    out.base_dir = input.base_dir;
    for (std::size_t i = 0; i < input.episodes.size(); ++i)
        if (keep[i]) out.episodes.push_back(input.episodes[i]);
    return out;
}

namespace detail {

inline void validate_ratios(const std::array<double, 3>& ratios) {
    double sum = 0.0;
    for (double r : ratios) {
        if (r <= 0.0 || r >= 1.0)
            throw Error("split ratios must each lie strictly between 0 and 1");
        sum += r;
    }
    if (std::fabs(sum - 1.0) > 1e-9)
        throw Error("split ratios must sum to 1");
}

} // namespace detail

/// Group-exclusive split: groups are shuffled by seed, then each group goes to
/// the currently most-underfilled split (episode fill fraction relative to its
/// ratio). All episodes of one group land in a single split.
inline SplitAssignment split_grouped(const corpus::Corpus& input,
                                     std::array<double, 3> ratios, uint64_t seed) {
    detail::validate_ratios(ratios);

    std::vector<std::string> group_order;
    std::map<std::string, std::vector<std::string>> members; // group -> episode ids
    for (const auto& ep : input.episodes) {
        auto [it, inserted] = members.try_emplace(ep.group_id);
        if (inserted) group_order.push_back(ep.group_id);
        it->second.push_back(ep.episode_id);
    }
    if (group_order.size() < 3)
        throw Error("split_grouped: need at least 3 groups, have " +
                    std::to_string(group_order.size()));

    Rng rng(Rng::mix(seed, 0x5b117));
    for (std::size_t i = group_order.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<int64_t>(i) - 1));
        std::swap(group_order[i - 1], group_order[j]);
    }

    SplitAssignment out;
    out.ratios = ratios;
    out.mode = SplitMode::Grouped;
    out.seed = seed;

    double total = static_cast<double>(input.episodes.size());
    std::array<double, 3> assigned{0.0, 0.0, 0.0};
    for (const auto& gid : group_order) {
        // Most-underfilled split, measured after placing this group, so large
        // groups cannot blow past a small split's quota.
        double size = static_cast<double>(members[gid].size());
        int best = 0;
        double best_fill = (assigned[0] + size) / (ratios[0] * total);
        for (int s = 1; s < 3; ++s) {
            double fill = (assigned[static_cast<std::size_t>(s)] + size) /
                          (ratios[static_cast<std::size_t>(s)] * total);
            if (fill < best_fill) {
                best = s;
                best_fill = fill;
            }
        }
        for (const auto& eid : members[gid])
            out.by_episode[eid] = static_cast<Split>(best);
        assigned[static_cast<std::size_t>(best)] +=
            static_cast<double>(members[gid].size());
    }
    return out;
}

/// Episode-level uniform shuffle, then contiguous cuts at the ratio
/// boundaries.
inline SplitAssignment split_random(const corpus::Corpus& input,
                                    std::array<double, 3> ratios, uint64_t seed) {
    detail::validate_ratios(ratios);
    std::size_t n = input.episodes.size();
    if (n < 3) throw Error("split_random: need at least 3 episodes");

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(Rng::mix(seed, 0x5b118));
    for (std::size_t i = n; i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<int64_t>(i) - 1));
        std::swap(order[i - 1], order[j]);
    }

    auto cut1 = static_cast<std::size_t>(
        std::llround(ratios[0] * static_cast<double>(n)));
    auto cut2 = static_cast<std::size_t>(
        std::llround((ratios[0] + ratios[1]) * static_cast<double>(n)));

    SplitAssignment out;
    out.ratios = ratios;
    out.mode = SplitMode::Random;
    out.seed = seed;
    for (std::size_t k = 0; k < n; ++k) {
        Split s = k < cut1 ? Split::Train
                           : (k < cut2 ? Split::Validation : Split::Test);
        out.by_episode[input.episodes[order[k]].episode_id] = s;
    }
    return out;
}

/// Official mode: assignment read from a sidecar file of
/// `episode_id<TAB>split` lines covering every episode.
inline SplitAssignment load_assignment(const corpus::Corpus& input,
                                       const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open split assignment: " + path);
    SplitAssignment out;
    out.mode = SplitMode::Official;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw Error("split assignment " + path + " line " +
                        std::to_string(line_no) + ": expected episode_id<TAB>split");
        out.by_episode[line.substr(0, tab)] = split_from_name(line.substr(tab + 1));
    }
    for (const auto& ep : input.episodes)
        if (!out.by_episode.count(ep.episode_id))
            throw Error("split assignment missing episode '" + ep.episode_id + "'");
    return out;
}

inline void save_assignment(const SplitAssignment& assignment,
                            const corpus::Corpus& input, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write split assignment: " + path);
    for (const auto& ep : input.episodes)
        out << ep.episode_id << '\t' << split_name(assignment.of(ep.episode_id))
            << '\n';
}

/// Episode indices of one split, in corpus order.
inline std::vector<std::size_t> indices_of(const corpus::Corpus& input,
                                           const SplitAssignment& assignment,
                                           Split split) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < input.episodes.size(); ++i)
        if (assignment.of(input.episodes[i].episode_id) == split) out.push_back(i);
    return out;
}

} // namespace ecgcap::datasplit
