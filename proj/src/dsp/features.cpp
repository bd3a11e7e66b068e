#include "speakerprof/features.hpp"

#include <fftw3.h>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <set>

#include "speakerprof/errors.hpp"

namespace spkr::dsp {
namespace {

bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

// FFTW planning is not thread-safe; execution on distinct buffers is.
struct R2CPlan {
    fftw_plan plan = nullptr;
    ~R2CPlan() {
        if (plan) fftw_destroy_plan(plan);
    }
};

fftw_plan r2c_plan(int n_fft) {
    static std::mutex mu;
    static std::map<int, std::unique_ptr<R2CPlan>> plans;
    std::lock_guard lock(mu);
    auto &slot = plans[n_fft];
    if (!slot) {
        slot = std::make_unique<R2CPlan>();
        double *in = fftw_alloc_real(n_fft);
        fftw_complex *out = fftw_alloc_complex(n_fft / 2 + 1);
        slot->plan = fftw_plan_dft_r2c_1d(n_fft, in, out, FFTW_ESTIMATE);
        fftw_free(in);
        fftw_free(out);
    }
    return slot->plan;
}

struct FftBuffers {
    double *in;
    fftw_complex *out;
    explicit FftBuffers(int n_fft) : in(fftw_alloc_real(n_fft)), out(fftw_alloc_complex(n_fft / 2 + 1)) {}
    ~FftBuffers() {
        fftw_free(in);
        fftw_free(out);
    }
    FftBuffers(const FftBuffers &) = delete;
    FftBuffers &operator=(const FftBuffers &) = delete;
};

void check_clip(const dataset::AudioClip &clip, const FeatureConfig &cfg) {
    cfg.validate();
    if (clip.sample_rate != cfg.sample_rate)
        throw ConfigError(fmt::format("clip sample rate {} does not match feature config {}", clip.sample_rate,
                                      cfg.sample_rate));
    if (clip.samples.size() < static_cast<std::size_t>(cfg.win_length))
        throw ConfigError(fmt::format("clip of {} samples is shorter than one {}-sample window; zero-pad at ingestion",
                                      clip.samples.size(), cfg.win_length));
}

double bin_hz(int bin, const FeatureConfig &cfg) {
    return static_cast<double>(bin) * cfg.sample_rate / cfg.n_fft;
}

FeatureMatrix wrap(Matrix m, FeatureKind kind, const FeatureConfig &cfg) { return {std::move(m), kind, cfg}; }

}  // namespace

void FeatureConfig::validate() const {
    if (!is_power_of_two(n_fft)) throw ConfigError(fmt::format("n_fft {} is not a power of two", n_fft));
    if (hop_length < 1 || hop_length > win_length || win_length > n_fft)
        throw ConfigError(fmt::format("need 1 <= hop_length ({}) <= win_length ({}) <= n_fft ({})", hop_length,
                                      win_length, n_fft));
    if (sample_rate <= 0) throw ConfigError("sample_rate must be positive");
    if (n_mels < 1) throw ConfigError("n_mels must be positive");
    if (n_mfcc < 1 || n_mfcc > n_mels)
        throw ConfigError(fmt::format("n_mfcc {} must lie in [1, n_mels = {}]", n_mfcc, n_mels));
    if (!(fmin >= 0.0 && fmin < upper_hz() && upper_hz() <= sample_rate / 2.0))
        throw ConfigError(fmt::format("need 0 <= fmin ({}) < fmax ({}) <= sample_rate/2", fmin, upper_hz()));
    if (n_chroma != 12) throw ConfigError("only 12 chroma bins are supported");
    if (n_contrast_bands < 1) throw ConfigError("n_contrast_bands must be positive");
}

std::string to_string(FeatureKind kind) {
    switch (kind) {
        case FeatureKind::mfcc:
            return "mfcc";
        case FeatureKind::mel:
            return "mel";
        case FeatureKind::chroma:
            return "chroma";
        case FeatureKind::tonnetz:
            return "tonnetz";
        case FeatureKind::contrast:
            return "contrast";
        case FeatureKind::concat:
            return "concat";
    }
    return "concat";
}

FeatureKind parse_feature_kind(std::string_view token) {
    for (auto kind : {FeatureKind::mfcc, FeatureKind::mel, FeatureKind::chroma, FeatureKind::tonnetz,
                      FeatureKind::contrast})
        if (token == to_string(kind)) return kind;
    throw ConfigError(fmt::format("unknown feature kind '{}'", token));
}

std::size_t frame_count(std::size_t n_samples, const FeatureConfig &cfg) {
    const auto win = static_cast<std::size_t>(cfg.win_length);
    if (n_samples < win) return 0;
    return 1 + (n_samples - win) / static_cast<std::size_t>(cfg.hop_length);
}

std::vector<double> hann_window(int win_length) {
    std::vector<double> w(static_cast<std::size_t>(win_length));
    for (int n = 0; n < win_length; ++n) w[n] = 0.5 - 0.5 * std::cos(2.0 * M_PI * n / win_length);
    return w;
}

Matrix stft_power(const dataset::AudioClip &clip, const FeatureConfig &cfg) {
    check_clip(clip, cfg);
    const std::size_t frames = frame_count(clip.samples.size(), cfg);
    const int bins = cfg.n_bins();
    const auto window = hann_window(cfg.win_length);
    const fftw_plan plan = r2c_plan(cfg.n_fft);

    Matrix power(static_cast<std::size_t>(bins), frames);
    FftBuffers buf(cfg.n_fft);
    for (std::size_t t = 0; t < frames; ++t) {
        const double *frame = clip.samples.data() + t * static_cast<std::size_t>(cfg.hop_length);
        for (int n = 0; n < cfg.win_length; ++n) buf.in[n] = frame[n] * window[n];
        std::fill(buf.in + cfg.win_length, buf.in + cfg.n_fft, 0.0);
        fftw_execute_dft_r2c(plan, buf.in, buf.out);
        for (int k = 0; k < bins; ++k) power(k, t) = buf.out[k][0] * buf.out[k][0] + buf.out[k][1] * buf.out[k][1];
    }
    return power;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_band_edges(const FeatureConfig &cfg) {
    const double lo = hz_to_mel(cfg.fmin);
    const double hi = hz_to_mel(cfg.upper_hz());
    std::vector<double> edges(static_cast<std::size_t>(cfg.n_mels) + 2);
    for (std::size_t i = 0; i < edges.size(); ++i)
        edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));
    return edges;
}

Matrix mel_filterbank(const FeatureConfig &cfg) {
    cfg.validate();
    const auto edges = mel_band_edges(cfg);
    const int bins = cfg.n_bins();
    Matrix fb(static_cast<std::size_t>(cfg.n_mels), static_cast<std::size_t>(bins));
    for (int m = 0; m < cfg.n_mels; ++m) {
        const double lo = edges[m], centre = edges[m + 1], hi = edges[m + 2];
        bool any = false;
        for (int k = 0; k < bins; ++k) {
            const double f = bin_hz(k, cfg);
            const double w = std::max(0.0, std::min((f - lo) / (centre - lo), (hi - f) / (hi - centre)));
            fb(m, k) = w;
            any = any || w > 0.0;
        }
        if (!any)
            throw ConfigError(fmt::format("mel filter {} of {} covers no FFT bin; lower n_mels or raise n_fft", m,
                                          cfg.n_mels));
    }
    return fb;
}

Matrix dct_matrix(std::size_t n_out, std::size_t n_in) {
    Matrix d(n_out, n_in);
    const double n = static_cast<double>(n_in);
    for (std::size_t k = 0; k < n_out; ++k) {
        const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
        for (std::size_t i = 0; i < n_in; ++i)
            d(k, i) = scale * std::cos(M_PI * static_cast<double>(k) * (2.0 * static_cast<double>(i) + 1.0) / (2.0 * n));
    }
    return d;
}

Matrix log_mel_from_power(const Matrix &power, const FeatureConfig &cfg) {
    const Matrix fb = mel_filterbank(cfg);
    if (fb.cols != power.rows) throw ShapeError("spectrogram bins do not match the filterbank");
    Matrix out(fb.rows, power.cols);
    for (std::size_t m = 0; m < fb.rows; ++m) {
        for (std::size_t t = 0; t < power.cols; ++t) {
            double acc = 0.0;
            for (std::size_t k = 0; k < fb.cols; ++k) acc += fb(m, k) * power(k, t);
            out(m, t) = std::log(acc + kLogFloor);
        }
    }
    return out;
}

Matrix mfcc_from_power(const Matrix &power, const FeatureConfig &cfg) {
    const Matrix logmel = log_mel_from_power(power, cfg);
    const Matrix dct = dct_matrix(static_cast<std::size_t>(cfg.n_mfcc), logmel.rows);
    Matrix out(dct.rows, logmel.cols);
    for (std::size_t c = 0; c < dct.rows; ++c) {
        for (std::size_t t = 0; t < logmel.cols; ++t) {
            double acc = 0.0;
            for (std::size_t m = 0; m < logmel.rows; ++m) acc += dct(c, m) * logmel(m, t);
            out(c, t) = acc;
        }
    }
    return out;
}

int pitch_class(double hz) {
    const long semitone = std::lround(12.0 * std::log2(hz / kC1Hz));
    return static_cast<int>(((semitone % 12) + 12) % 12);
}

Matrix chroma_from_power(const Matrix &power, const FeatureConfig &cfg) {
    Matrix out(12, power.cols);
    std::vector<int> classes(power.rows, -1);
    for (std::size_t k = 1; k < power.rows; ++k) classes[k] = pitch_class(bin_hz(static_cast<int>(k), cfg));
    for (std::size_t t = 0; t < power.cols; ++t) {
        for (std::size_t k = 1; k < power.rows; ++k) out(static_cast<std::size_t>(classes[k]), t) += power(k, t);
        double peak = 0.0;
        for (std::size_t p = 0; p < 12; ++p) peak = std::max(peak, out(p, t));
        if (peak > 0.0)
            for (std::size_t p = 0; p < 12; ++p) out(p, t) /= peak;
    }
    return out;
}

Matrix tonnetz_from_chroma(const Matrix &chroma) {
    if (chroma.rows != 12) throw ShapeError(fmt::format("tonnetz expects 12 chroma rows, got {}", chroma.rows));
    constexpr int intervals[3] = {7, 3, 4};  // fifths, minor thirds, major thirds
    constexpr double radii[3] = {1.0, 1.0, 0.5};
    Matrix out(6, chroma.cols);
    for (std::size_t t = 0; t < chroma.cols; ++t) {
        double norm = 0.0;
        for (std::size_t p = 0; p < 12; ++p) norm += std::abs(chroma(p, t));
        if (norm == 0.0) continue;
        for (int d = 0; d < 3; ++d) {
            double s = 0.0, c = 0.0;
            for (std::size_t p = 0; p < 12; ++p) {
                const double theta = 2.0 * M_PI * static_cast<double>(p) * intervals[d] / 12.0;
                const double w = chroma(p, t) / norm;
                s += w * std::sin(theta);
                c += w * std::cos(theta);
            }
            out(2 * d, t) = radii[d] * s;
            out(2 * d + 1, t) = radii[d] * c;
        }
    }
    return out;
}

std::vector<std::pair<double, double>> contrast_bands(const FeatureConfig &cfg) {
    const double top = cfg.upper_hz();
    std::vector<std::pair<double, double>> bands{{0.0, std::min(kContrastBaseHz, top)}};
    for (int b = 0; b < cfg.n_contrast_bands; ++b) {
        const double lo = kContrastBaseHz * std::pow(2.0, b);
        double hi = kContrastBaseHz * std::pow(2.0, b + 1);
        if (b == cfg.n_contrast_bands - 1 || hi > top) hi = top;
        bands.emplace_back(lo, hi);
    }
    return bands;
}

Matrix contrast_from_power(const Matrix &power, const FeatureConfig &cfg) {
    const auto bands = contrast_bands(cfg);
    std::vector<std::vector<std::size_t>> members(bands.size());
    for (std::size_t b = 0; b < bands.size(); ++b) {
        const bool last = b + 1 == bands.size();
        for (std::size_t k = 0; k < power.rows; ++k) {
            const double f = bin_hz(static_cast<int>(k), cfg);
            if (f >= bands[b].first && (f < bands[b].second || (last && f <= bands[b].second))) members[b].push_back(k);
        }
        if (members[b].empty())
            throw ConfigError(fmt::format("contrast band {} [{} Hz, {} Hz) has no FFT bins at n_fft {}", b,
                                          bands[b].first, bands[b].second, cfg.n_fft));
    }

    Matrix out(bands.size(), power.cols);
    std::vector<double> energies;
    for (std::size_t b = 0; b < bands.size(); ++b) {
        const std::size_t n = members[b].size();
        const auto q = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(kContrastQuantile * n)));
        for (std::size_t t = 0; t < power.cols; ++t) {
            energies.clear();
            for (std::size_t k : members[b]) energies.push_back(power(k, t));
            std::sort(energies.begin(), energies.end());
            const double valley = std::accumulate(energies.begin(), energies.begin() + q, 0.0) / q;
            const double peak = std::accumulate(energies.end() - q, energies.end(), 0.0) / q;
            out(b, t) = std::log(peak + kLogFloor) - std::log(valley + kLogFloor);
        }
    }
    return out;
}

FeatureMatrix mel_features(const dataset::AudioClip &clip, const FeatureConfig &cfg) {
    return wrap(log_mel_from_power(stft_power(clip, cfg), cfg), FeatureKind::mel, cfg);
}

FeatureMatrix mfcc(const dataset::AudioClip &clip, const FeatureConfig &cfg) {
    return wrap(mfcc_from_power(stft_power(clip, cfg), cfg), FeatureKind::mfcc, cfg);
}

FeatureMatrix chroma(const dataset::AudioClip &clip, const FeatureConfig &cfg) {
    return wrap(chroma_from_power(stft_power(clip, cfg), cfg), FeatureKind::chroma, cfg);
}

FeatureMatrix tonnetz(const dataset::AudioClip &clip, const FeatureConfig &cfg) {
    return wrap(tonnetz_from_chroma(chroma_from_power(stft_power(clip, cfg), cfg)), FeatureKind::tonnetz, cfg);
}

FeatureMatrix spectral_contrast(const dataset::AudioClip &clip, const FeatureConfig &cfg) {
    return wrap(contrast_from_power(stft_power(clip, cfg), cfg), FeatureKind::contrast, cfg);
}

std::size_t rows_for(FeatureKind kind, const FeatureConfig &cfg) {
    switch (kind) {
        case FeatureKind::mfcc:
            return static_cast<std::size_t>(cfg.n_mfcc);
        case FeatureKind::mel:
            return static_cast<std::size_t>(cfg.n_mels);
        case FeatureKind::chroma:
            return 12;
        case FeatureKind::tonnetz:
            return 6;
        case FeatureKind::contrast:
            return static_cast<std::size_t>(cfg.n_contrast_bands) + 1;
        case FeatureKind::concat:
            break;
    }
    throw ConfigError("concat has no fixed row count");
}

FeatureVector time_average(const FeatureMatrix &m) {
    if (m.values.cols == 0) throw ShapeError("cannot average a matrix with no frames");
    FeatureVector v{std::vector<double>(m.values.rows), m.kind, m.config};
    for (std::size_t r = 0; r < m.values.rows; ++r) {
        double acc = 0.0;
        for (std::size_t t = 0; t < m.values.cols; ++t) acc += m.values(r, t);
        v.values[r] = acc / static_cast<double>(m.values.cols);
    }
    return v;
}

FeatureSet parse_feature_set(std::string_view text) {
    FeatureSet set;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto comma = text.find(',', start);
        if (comma == std::string_view::npos) comma = text.size();
        std::string_view item = text.substr(start, comma - start);
        start = comma + 1;
        if (item.empty()) continue;
        if (item == "five") {
            for (auto k : {FeatureKind::mfcc, FeatureKind::mel, FeatureKind::chroma, FeatureKind::tonnetz,
                           FeatureKind::contrast})
                set.push_back({k, 0});
            continue;
        }
        FeatureRequest req;
        const auto colon = item.find(':');
        req.kind = parse_feature_kind(item.substr(0, colon));
        if (colon != std::string_view::npos) {
            const std::string size(item.substr(colon + 1));
            try {
                req.size = std::stoi(size);
            } catch (const std::exception &) {
                throw ConfigError(fmt::format("bad feature size '{}'", size));
            }
            if (req.size < 1) throw ConfigError(fmt::format("bad feature size '{}'", size));
            if (req.kind != FeatureKind::mfcc && req.kind != FeatureKind::mel)
                throw ConfigError(fmt::format("feature '{}' takes no size", to_string(req.kind)));
        }
        set.push_back(req);
    }
    if (set.empty()) throw ConfigError("empty feature set");
    return set;
}

std::string format_feature_set(const FeatureSet &set) {
    std::string out;
    for (const auto &r : set) {
        if (!out.empty()) out += ',';
        out += to_string(r.kind);
        if (r.size > 0) out += fmt::format(":{}", r.size);
    }
    return out;
}

namespace {

FeatureConfig config_for(const FeatureRequest &req, FeatureConfig cfg) {
    if (req.kind == FeatureKind::mfcc && req.size > 0) cfg.n_mfcc = req.size;
    if (req.kind == FeatureKind::mel && req.size > 0) cfg.n_mels = req.size;
    return cfg;
}

}  // namespace

std::size_t feature_dim(const FeatureSet &set, const FeatureConfig &cfg) {
    std::size_t dim = 0;
    for (const auto &req : set) dim += rows_for(req.kind, config_for(req, cfg));
    return dim;
}

FeatureMatrix extract_set(const dataset::AudioClip &clip, const FeatureSet &set, const FeatureConfig &cfg,
                          bool averaged) {
    std::set<FeatureKind> seen;
    for (const auto &req : set)
        if (!seen.insert(req.kind).second)
            throw ConfigError(fmt::format("feature kind '{}' requested twice", to_string(req.kind)));

    const Matrix power = stft_power(clip, cfg);
    std::vector<Matrix> parts;
    for (const auto &req : set) {
        const FeatureConfig c = config_for(req, cfg);
        c.validate();
        switch (req.kind) {
            case FeatureKind::mfcc:
                parts.push_back(mfcc_from_power(power, c));
                break;
            case FeatureKind::mel:
                parts.push_back(log_mel_from_power(power, c));
                break;
            case FeatureKind::chroma:
                parts.push_back(chroma_from_power(power, c));
                break;
            case FeatureKind::tonnetz:
                parts.push_back(tonnetz_from_chroma(chroma_from_power(power, c)));
                break;
            case FeatureKind::contrast:
                parts.push_back(contrast_from_power(power, c));
                break;
            case FeatureKind::concat:
                throw ConfigError("concat is not an extractable kind");
        }
    }

    std::size_t rows = 0;
    for (const auto &p : parts) rows += p.rows;
    const std::size_t frames = power.cols;
    FeatureMatrix out;
    out.kind = set.size() == 1 ? set.front().kind : FeatureKind::concat;
    out.config = set.size() == 1 ? config_for(set.front(), cfg) : cfg;
    out.values = Matrix(rows, averaged ? 1 : frames);
    std::size_t row = 0;
    for (const auto &p : parts) {
        for (std::size_t r = 0; r < p.rows; ++r, ++row) {
            if (averaged) {
                double acc = 0.0;
                for (std::size_t t = 0; t < frames; ++t) acc += p(r, t);
                out.values(row, 0) = acc / static_cast<double>(frames);
            } else {
                for (std::size_t t = 0; t < frames; ++t) out.values(row, t) = p(r, t);
            }
        }
    }
    return out;
}

}  // namespace spkr::dsp
