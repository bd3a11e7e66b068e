#pragma once

// Brute-force spectral oracles. Everything here is written from the
// textbook definitions and shares no code with the library.

#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

using Grid = std::vector<std::vector<double>>;  // [row][column]

inline double pi() { return std::acos(-1.0); }

inline std::vector<double> periodic_hann(int n) {
    std::vector<double> w(n);
    for (int i = 0; i < n; ++i) w[i] = std::sin(pi() * i / n) * std::sin(pi() * i / n);
    return w;
}

// |X_k|^2 for k = 0..n_fft/2 of the length-n_fft zero-padded frame. The
// twiddle exp(-2 pi i m / n_fft) is tabulated once per m in [0, n_fft).
inline std::vector<double> dft_power(const std::vector<double> &frame, int n_fft) {
    std::vector<long double> c(n_fft), s(n_fft);
    for (int m = 0; m < n_fft; ++m) {
        const long double angle = 2.0L * static_cast<long double>(pi()) * m / n_fft;
        c[m] = std::cos(angle);
        s[m] = std::sin(angle);
    }
    std::vector<double> out(n_fft / 2 + 1);
    for (int k = 0; k <= n_fft / 2; ++k) {
        long double re = 0.0L, im = 0.0L;
        for (std::size_t n = 0; n < frame.size(); ++n) {
            const auto phase = static_cast<std::size_t>((static_cast<long>(k) * static_cast<long>(n)) % n_fft);
            re += frame[n] * c[phase];
            im -= frame[n] * s[phase];
        }
        out[k] = static_cast<double>(re * re + im * im);
    }
    return out;
}

// [bin][frame] power spectrogram with no centering: frame t covers samples
// [t*hop, t*hop + win).
inline Grid stft_power(const std::vector<double> &x, int n_fft, int hop, int win) {
    const std::size_t frames = x.size() < static_cast<std::size_t>(win) ? 0 : 1 + (x.size() - win) / hop;
    const auto w = periodic_hann(win);
    Grid out(n_fft / 2 + 1, std::vector<double>(frames));
    for (std::size_t t = 0; t < frames; ++t) {
        std::vector<double> frame(win);
        for (int i = 0; i < win; ++i) frame[i] = x[t * hop + i] * w[i];
        const auto p = dft_power(frame, n_fft);
        for (std::size_t k = 0; k < p.size(); ++k) out[k][t] = p[k];
    }
    return out;
}

inline double mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double inverse_mel(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// Triangles on the HTK mel scale between fmin and fmax, unnormalized peak 1.
inline Grid mel_bank(int n_mels, int n_fft, int sr, double fmin, double fmax) {
    std::vector<double> hz(n_mels + 2);
    for (int i = 0; i < n_mels + 2; ++i)
        hz[i] = inverse_mel(mel(fmin) + (mel(fmax) - mel(fmin)) * i / (n_mels + 1));
    Grid bank(n_mels, std::vector<double>(n_fft / 2 + 1, 0.0));
    for (int m = 0; m < n_mels; ++m) {
        for (int k = 0; k <= n_fft / 2; ++k) {
            const double f = static_cast<double>(k) * sr / n_fft;
            double w = 0.0;
            if (f > hz[m] && f <= hz[m + 1]) w = (f - hz[m]) / (hz[m + 1] - hz[m]);
            else if (f > hz[m + 1] && f < hz[m + 2]) w = (hz[m + 2] - f) / (hz[m + 2] - hz[m + 1]);
            bank[m][k] = w;
        }
    }
    return bank;
}

// Straight-line MFCC: frame, window, brute-force DFT, mel bank, log, DCT-II.
inline Grid mfcc(const std::vector<double> &x, int sr, int n_fft, int hop, int win, int n_mels, int n_mfcc) {
    const Grid power = stft_power(x, n_fft, hop, win);
    const Grid bank = mel_bank(n_mels, n_fft, sr, 0.0, sr / 2.0);
    const std::size_t frames = power.empty() ? 0 : power[0].size();
    Grid out(n_mfcc, std::vector<double>(frames));
    for (std::size_t t = 0; t < frames; ++t) {
        std::vector<double> logmel(n_mels);
        for (int m = 0; m < n_mels; ++m) {
            double e = 0.0;
            for (std::size_t k = 0; k < power.size(); ++k) e += bank[m][k] * power[k][t];
            logmel[m] = std::log(e + 1e-10);
        }
        for (int c = 0; c < n_mfcc; ++c) {
            double acc = 0.0;
            for (int m = 0; m < n_mels; ++m) acc += logmel[m] * std::cos(pi() * c * (m + 0.5) / n_mels);
            out[c][t] = acc * (c == 0 ? std::sqrt(1.0 / n_mels) : std::sqrt(2.0 / n_mels));
        }
    }
    return out;
}

// ||a - b||_F / ||b||_F
inline double relative_frobenius(const Grid &a, const Grid &b) {
    long double num = 0.0L, den = 0.0L;
    for (std::size_t i = 0; i < b.size(); ++i)
        for (std::size_t j = 0; j < b[i].size(); ++j) {
            const long double d = static_cast<long double>(a[i][j]) - b[i][j];
            num += d * d;
            den += static_cast<long double>(b[i][j]) * b[i][j];
        }
    return den == 0.0L ? static_cast<double>(std::sqrt(num)) : static_cast<double>(std::sqrt(num / den));
}

}  // namespace oracle
