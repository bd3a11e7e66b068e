#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "speakerprof/manifest.hpp"

namespace spkr::dataset {

// Key of the combined accent_gender label, e.g. "DR3_F".
std::string accent_gender_key(const SpeakerRecord &r);
std::map<std::string, std::size_t> accent_gender_counts(const std::vector<SpeakerRecord> &records);

// Resamples every (accent, gender) combination, uniformly with replacement,
// up to the largest combination's count. Originals come first in input
// order, followed by the drawn duplicates grouped by combination key.
std::vector<SpeakerRecord> oversample_balanced(const std::vector<SpeakerRecord> &records, std::uint64_t seed);

struct SplitRatios {
    double train = 0.7;
    double val = 0.1;
    double test = 0.2;
};

// Per-speaker counts for n utterances: train = round(r.train * n) capped at
// n - 2, val = max(1, round(r.val * n)), test = the rest. Requires n >= 3.
struct SplitCounts {
    std::size_t train = 0, val = 0, test = 0;
};
SplitCounts speaker_split_counts(std::size_t n, const SplitRatios &ratios);

// Stratified per speaker so every speaker appears in train, val and test.
// Each speaker's utterances are shuffled by a stream derived from
// (seed, speaker_id), so one speaker's assignment never depends on another's.
Manifest split_for_speaker_id(const Manifest &manifest, const SplitRatios &ratios, std::uint64_t seed);

// Speaker-disjoint splits for the profiling tasks (gender/accent/age), where
// a speaker seen in training must not appear at test time. Existing
// train/test assignments are kept; when no validation split exists, a seeded
// `val_fraction` of the training speakers is moved to val. A manifest with
// no assignments at all is split 70/10/20 by speaker.
Manifest split_profiling(const Manifest &manifest, double val_fraction, std::uint64_t seed);

}  // namespace spkr::dataset
