#include "speakerprof/balance.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "speakerprof/errors.hpp"
#include "speakerprof/rng.hpp"

namespace spkr::dataset {

std::string accent_gender_key(const SpeakerRecord &r) { return to_string(r.accent) + "_" + to_string(r.gender); }

std::map<std::string, std::size_t> accent_gender_counts(const std::vector<SpeakerRecord> &records) {
    std::map<std::string, std::size_t> counts;
    for (const auto &r : records) ++counts[accent_gender_key(r)];
    return counts;
}

std::vector<SpeakerRecord> oversample_balanced(const std::vector<SpeakerRecord> &records, std::uint64_t seed) {
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < records.size(); ++i) groups[accent_gender_key(records[i])].push_back(i);

    std::size_t max_count = 0;
    for (const auto &[key, members] : groups) max_count = std::max(max_count, members.size());

    std::vector<SpeakerRecord> out = records;
    out.reserve(max_count * groups.size());
    Rng rng(derive_seed(seed, "oversample_balanced"));
    for (const auto &[key, members] : groups) {
        for (std::size_t k = members.size(); k < max_count; ++k) out.push_back(records[members[rng.index(members.size())]]);
    }
    return out;
}

SplitCounts speaker_split_counts(std::size_t n, const SplitRatios &ratios) {
    SplitCounts c;
    c.train = std::min<std::size_t>(static_cast<std::size_t>(std::lround(ratios.train * static_cast<double>(n))), n - 2);
    c.val = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(ratios.val * static_cast<double>(n))));
    c.val = std::min(c.val, n - c.train - 1);
    c.test = n - c.train - c.val;
    return c;
}

namespace {

// Speaker ids in first-appearance order, with each speaker's record indices.
std::vector<std::pair<std::string, std::vector<std::size_t>>> group_by_speaker(const std::vector<SpeakerRecord> &rs) {
    std::vector<std::pair<std::string, std::vector<std::size_t>>> groups;
    std::map<std::string, std::size_t> slot;
    for (std::size_t i = 0; i < rs.size(); ++i) {
        auto [it, fresh] = slot.emplace(rs[i].speaker_id, groups.size());
        if (fresh) groups.push_back({rs[i].speaker_id, {}});
        groups[it->second].second.push_back(i);
    }
    return groups;
}

}  // namespace

Manifest split_for_speaker_id(const Manifest &manifest, const SplitRatios &ratios, std::uint64_t seed) {
    std::vector<SpeakerRecord> records = manifest.records();
    for (auto &[speaker, members] : group_by_speaker(records)) {
        if (members.size() < 3)
            throw ValidationError(fmt::format("speaker {} has {} utterances; speaker-ID splits need at least 3",
                                              speaker, members.size()));
        // Shuffle a path-sorted copy so the result does not depend on manifest order.
        std::sort(members.begin(), members.end(),
                  [&](std::size_t a, std::size_t b) { return records[a].path < records[b].path; });
        Rng rng(derive_seed(seed, "speaker_split/" + speaker));
        rng.shuffle(members.begin(), members.end());
        const SplitCounts c = speaker_split_counts(members.size(), ratios);
        for (std::size_t k = 0; k < members.size(); ++k) {
            records[members[k]].split = k < c.train ? Split::train : k < c.train + c.val ? Split::val : Split::test;
        }
    }
    return Manifest(std::move(records));
}

Manifest split_profiling(const Manifest &manifest, double val_fraction, std::uint64_t seed) {
    std::vector<SpeakerRecord> records = manifest.records();
    const auto groups = group_by_speaker(records);
    auto any = [&](Split s) {
        return std::any_of(records.begin(), records.end(), [s](const SpeakerRecord &r) { return r.split == s; });
    };

    std::vector<std::string> speakers;
    auto assign = [&](const std::set<std::string> &ids, Split s) {
        for (auto &r : records)
            if (ids.contains(r.speaker_id)) r.split = s;
    };

    if (!any(Split::train) && !any(Split::val) && !any(Split::test)) {
        for (const auto &g : groups) speakers.push_back(g.first);
        std::sort(speakers.begin(), speakers.end());
        Rng rng(derive_seed(seed, "profiling_split"));
        rng.shuffle(speakers.begin(), speakers.end());
        if (speakers.size() < 3) throw ValidationError("profiling split needs at least 3 speakers");
        const SplitCounts c = speaker_split_counts(speakers.size(), SplitRatios{});
        assign({speakers.begin(), speakers.begin() + c.train}, Split::train);
        assign({speakers.begin() + c.train, speakers.begin() + c.train + c.val}, Split::val);
        assign({speakers.begin() + c.train + c.val, speakers.end()}, Split::test);
        return Manifest(std::move(records));
    }

    if (!any(Split::val)) {
        std::set<std::string> train_ids;
        for (const auto &r : records)
            if (r.split == Split::train) train_ids.insert(r.speaker_id);
        speakers.assign(train_ids.begin(), train_ids.end());
        if (speakers.size() < 2) throw ValidationError("cannot carve a validation split from fewer than 2 training speakers");
        Rng rng(derive_seed(seed, "profiling_val"));
        rng.shuffle(speakers.begin(), speakers.end());
        auto n_val = static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(speakers.size())));
        n_val = std::clamp<std::size_t>(n_val, 1, speakers.size() - 1);
        assign({speakers.begin(), speakers.begin() + n_val}, Split::val);
    }
    return Manifest(std::move(records));
}

}  // namespace spkr::dataset
