#pragma once

#include <filesystem>
#include <span>
#include <vector>

namespace spkr::dataset {

// Decoded mono PCM. Samples are normalized to [-1, 1].
struct AudioClip {
    std::vector<double> samples;
    int sample_rate = 16000;
};

enum class AudioContainer { riff_wave, nist_sphere };

// Reads a RIFF/WAVE or NIST SPHERE file holding 16-bit PCM mono audio. The
// container is detected from the magic bytes, not the file extension (TIMIT
// ships SPHERE files named *.WAV). Samples are scaled by 1/32768.
//
// Throws DecodeError for unsupported codecs or layouts, IoError for missing
// or truncated files.
AudioClip read_audio(const std::filesystem::path &path);

// Writes 16-bit PCM mono. Samples are clipped to [-1, 1) and quantized with
// round-to-nearest on x * 32768.
void write_audio(const std::filesystem::path &path, const AudioClip &clip,
                 AudioContainer container = AudioContainer::riff_wave);

std::vector<std::int16_t> quantize_pcm16(std::span<const double> samples);

}  // namespace spkr::dataset
