#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "speakerprof/audio.hpp"

namespace spkr::dsp {

// Floor added before every logarithm.
inline constexpr double kLogFloor = 1e-10;
// Frequency of C1; chroma class 0 is C.
inline constexpr double kC1Hz = 32.7032;
inline constexpr double kContrastQuantile = 0.02;
inline constexpr double kContrastBaseHz = 200.0;

struct FeatureConfig {
    int n_fft = 512;
    int hop_length = 160;
    int win_length = 400;
    int sample_rate = 16000;
    int n_mels = 64;
    int n_mfcc = 40;
    double fmin = 0.0;
    double fmax = 0.0;  // 0 means sample_rate / 2
    int n_chroma = 12;
    int n_contrast_bands = 6;

    double upper_hz() const { return fmax > 0.0 ? fmax : sample_rate / 2.0; }
    int n_bins() const { return n_fft / 2 + 1; }

    // Throws ConfigError when an invariant fails.
    void validate() const;

    friend bool operator==(const FeatureConfig &, const FeatureConfig &) = default;
};

// Dense row-major matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double &operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

enum class FeatureKind { mfcc, mel, chroma, tonnetz, contrast, concat };

std::string to_string(FeatureKind kind);
FeatureKind parse_feature_kind(std::string_view token);

// Sequential features: coefficients x frames.
struct FeatureMatrix {
    Matrix values;
    FeatureKind kind = FeatureKind::mfcc;
    FeatureConfig config;
};

struct FeatureVector {
    std::vector<double> values;
    FeatureKind kind = FeatureKind::mfcc;
    FeatureConfig config;
};

// 1 + floor((n - win_length) / hop_length); frames start at multiples of
// hop_length with no centering. Requires n >= win_length.
std::size_t frame_count(std::size_t n_samples, const FeatureConfig &cfg);

// Periodic Hann window of win_length samples.
std::vector<double> hann_window(int win_length);

// |DFT_n_fft(window * frame)|^2 for bins 0..n_fft/2, one column per frame.
// Each frame is the win_length samples starting at t * hop_length,
// zero-padded at the end to n_fft.
Matrix stft_power(const dataset::AudioClip &clip, const FeatureConfig &cfg);

// HTK mel scale.
double hz_to_mel(double hz);
double mel_to_hz(double mel);

// n_mels + 2 band edges in Hz, equally spaced in mel between fmin and fmax.
// Filter i rises from edge i to a peak at edge i+1 and falls to edge i+2.
std::vector<double> mel_band_edges(const FeatureConfig &cfg);
Matrix mel_filterbank(const FeatureConfig &cfg);

// Orthonormal DCT-II basis, n_out x n_in.
Matrix dct_matrix(std::size_t n_out, std::size_t n_in);

FeatureMatrix mel_features(const dataset::AudioClip &clip, const FeatureConfig &cfg);
FeatureMatrix mfcc(const dataset::AudioClip &clip, const FeatureConfig &cfg);
FeatureMatrix chroma(const dataset::AudioClip &clip, const FeatureConfig &cfg);
FeatureMatrix tonnetz(const dataset::AudioClip &clip, const FeatureConfig &cfg);
FeatureMatrix spectral_contrast(const dataset::AudioClip &clip, const FeatureConfig &cfg);

// Spectrogram-level entry points; the clip versions above are wrappers.
Matrix log_mel_from_power(const Matrix &power, const FeatureConfig &cfg);
Matrix mfcc_from_power(const Matrix &power, const FeatureConfig &cfg);
Matrix chroma_from_power(const Matrix &power, const FeatureConfig &cfg);
Matrix tonnetz_from_chroma(const Matrix &chroma);
Matrix contrast_from_power(const Matrix &power, const FeatureConfig &cfg);

// Pitch class of a frequency, 0 = C ... 9 = A ... 11 = B.
int pitch_class(double hz);

// [lo, hi) frequency ranges of the contrast bands; the last band is closed.
std::vector<std::pair<double, double>> contrast_bands(const FeatureConfig &cfg);

std::size_t rows_for(FeatureKind kind, const FeatureConfig &cfg);

FeatureVector time_average(const FeatureMatrix &m);

// One feature family in an extraction request. `size` overrides n_mfcc for
// mfcc and n_mels for mel; 0 keeps the config value.
struct FeatureRequest {
    FeatureKind kind = FeatureKind::mfcc;
    int size = 0;

    friend bool operator==(const FeatureRequest &, const FeatureRequest &) = default;
};
using FeatureSet = std::vector<FeatureRequest>;

// "mfcc:40,mel:64,chroma,tonnetz,contrast"; "five" expands to all five kinds.
FeatureSet parse_feature_set(std::string_view text);
std::string format_feature_set(const FeatureSet &set);
std::size_t feature_dim(const FeatureSet &set, const FeatureConfig &cfg);

// Row-wise concatenation of the requested families in order. With `averaged`
// the result has a single column holding the per-family time averages.
// Throws ConfigError on duplicate kinds.
FeatureMatrix extract_set(const dataset::AudioClip &clip, const FeatureSet &set, const FeatureConfig &cfg,
                          bool averaged);

}  // namespace spkr::dsp
