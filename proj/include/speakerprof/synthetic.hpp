#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "speakerprof/audio.hpp"
#include "speakerprof/manifest.hpp"

namespace spkr::dataset {

// Stand-in for TIMIT: a seeded corpus in the same directory layout
// (TRAIN|TEST/DRn/<speaker_id>/<utt>.WAV plus a speaker_id,age sidecar).
//
// Every utterance is a sum of sinusoids and noise carrying planted cues:
//   gender  - harmonic stack on a low (M, ~115 Hz) or high (F, ~210 Hz) f0
//   accent  - a region-specific tone between 600 and 1860 Hz
//   speaker - two tones on a per-speaker frequency grid above 2 kHz
//   age     - the level of a 6.5 kHz tone grows linearly with age
struct SyntheticConfig {
    std::size_t speakers = 20;
    std::size_t utterances_per_speaker = 10;
    std::uint64_t seed = 7;
    int sample_rate = 16000;
    double min_seconds = 0.5;
    double max_seconds = 0.8;
    AudioContainer container = AudioContainer::riff_wave;
    // Every fifth speaker goes to TEST, the rest to TRAIN.
    bool timit_split_dirs = true;
};

struct SyntheticSpeaker {
    std::string id;
    Gender gender;
    Accent accent;
    double age;
    bool test;
};

std::vector<SyntheticSpeaker> synthetic_speakers(const SyntheticConfig &cfg);

AudioClip synthesize_utterance(const SyntheticSpeaker &speaker, std::size_t speaker_index, std::size_t utterance,
                               const SyntheticConfig &cfg);

struct SyntheticCorpus {
    std::filesystem::path root;
    std::filesystem::path speaker_meta;
    std::size_t files = 0;
};

// Writes the corpus under root (created if needed). Output is a pure
// function of cfg.
SyntheticCorpus generate_synthetic_corpus(const std::filesystem::path &root, const SyntheticConfig &cfg);

}  // namespace spkr::dataset
