#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "speakerprof/features.hpp"
#include "speakerprof/manifest.hpp"

namespace spkr::dsp {

// Binary feature cache, one record per utterance. All integers and floats
// are little-endian.
//
//   magic        8 bytes  "SPKRFEAT"
//   version      u32      1
//   header_len   u32
//   header       header_len bytes of `key=value\n` text: kinds, averaged,
//                n_fft, hop_length, win_length, sample_rate, n_mels, n_mfcc,
//                fmin, fmax, dim, source_hash
//   n_records    u64
//   per record:  u32 path_len, path bytes (UTF-8),
//                u32 rows, u32 frames, rows*frames f32 in row-major order
struct CacheHeader {
    FeatureSet set;
    FeatureConfig config;
    bool averaged = true;
    std::size_t dim = 0;
    // Hash of the manifest paths the cache was computed from.
    std::uint64_t source_hash = 0;

    std::string to_text() const;
    friend bool operator==(const CacheHeader &, const CacheHeader &) = default;
};

struct CacheEntry {
    std::string path;
    std::uint32_t rows = 0;
    std::uint32_t frames = 0;
    std::vector<float> values;  // rows x frames, row-major
};

struct FeatureCache {
    CacheHeader header;
    std::vector<CacheEntry> entries;

    // Throws ValidationError when the path is not cached.
    const CacheEntry &find(const std::string &path) const;
};

std::uint64_t source_hash(const std::vector<dataset::SpeakerRecord> &records);

void write_feature_cache(const std::filesystem::path &path, const FeatureCache &cache);
FeatureCache read_feature_cache(const std::filesystem::path &path);
// Header only; used to decide cache hits without loading the payload.
CacheHeader read_cache_header(const std::filesystem::path &path);

// Reads and featurizes every distinct path in `records` in parallel. Entries
// follow the records' first-appearance order.
FeatureCache extract_records(const std::vector<dataset::SpeakerRecord> &records, const FeatureSet &set,
                             const FeatureConfig &cfg, bool averaged, std::size_t jobs);

}  // namespace spkr::dsp
