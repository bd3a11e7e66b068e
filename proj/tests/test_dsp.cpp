#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "oracles/dft.hpp"
#include "speakerprof/errors.hpp"
#include "speakerprof/feature_cache.hpp"
#include "speakerprof/features.hpp"
#include "speakerprof/rng.hpp"
#include "support.hpp"

using namespace spkr;
using namespace spkr::dsp;
using dataset::AudioClip;

namespace {

AudioClip noise(std::size_t n, std::uint64_t seed, double amp = 0.3) {
    Rng rng(seed);
    AudioClip c;
    for (std::size_t i = 0; i < n; ++i) c.samples.push_back(rng.uniform(-amp, amp));
    return c;
}

AudioClip tone(double hz, std::size_t n, double amp = 0.5) {
    AudioClip c;
    for (std::size_t i = 0; i < n; ++i) c.samples.push_back(amp * std::sin(2 * M_PI * hz * i / 16000.0));
    return c;
}

oracle::Grid grid(const Matrix &m) {
    oracle::Grid g(m.rows, std::vector<double>(m.cols));
    for (std::size_t r = 0; r < m.rows; ++r)
        for (std::size_t c = 0; c < m.cols; ++c) g[r][c] = m(r, c);
    return g;
}

std::size_t argmax_row(const Matrix &m, std::size_t col) {
    std::size_t best = 0;
    for (std::size_t r = 1; r < m.rows; ++r)
        if (m(r, col) > m(best, col)) best = r;
    return best;
}

}  // namespace

TEST_CASE("frame count formula") {
    for (int win : {64, 400}) {
        for (int hop : {1, 7, 80, 160}) {
            if (hop > win) continue;
            FeatureConfig cfg;
            cfg.win_length = win;
            cfg.hop_length = hop;
            for (std::size_t n = static_cast<std::size_t>(win); n < static_cast<std::size_t>(win) + 500; n += 13) {
                std::size_t brute = 0;
                while (brute * hop + win <= n) ++brute;
                CHECK(frame_count(n, cfg) == brute);
            }
        }
    }
}

TEST_CASE("stft of silence is zero and short clips are rejected") {
    FeatureConfig cfg;
    const auto p = stft_power(AudioClip{std::vector<double>(4000, 0.0), 16000}, cfg);
    CHECK(p.rows == 257);
    CHECK(p.cols == frame_count(4000, cfg));
    for (double v : p.data) CHECK(v == 0.0);
    CHECK_THROWS_AS(stft_power(AudioClip{std::vector<double>(399, 0.1), 16000}, cfg), ConfigError);
}

TEST_CASE("bin-centred sine peaks at its bin and matches the brute-force DFT") {
    FeatureConfig cfg;
    for (int k : {8, 40, 100, 200}) {
        const auto clip = tone(k * 16000.0 / 512.0, 3000);
        const auto p = stft_power(clip, cfg);
        const auto o = oracle::stft_power(clip.samples, 512, 160, 400);
        for (std::size_t t = 0; t < p.cols; ++t) {
            CHECK(argmax_row(p, t) == static_cast<std::size_t>(k));
            double colmax = 0.0, diff = 0.0;
            for (std::size_t b = 0; b < p.rows; ++b) {
                colmax = std::max(colmax, o[b][t]);
                diff = std::max(diff, std::abs(p(b, t) - o[b][t]));
            }
            CHECK(diff < 1e-6 * colmax);
        }
    }
}

TEST_CASE("random clip matches the brute-force DFT in relative Frobenius norm") {
    const auto clip = noise(16000, 3);
    FeatureConfig cfg;
    const auto p = stft_power(clip, cfg);
    CHECK(oracle::relative_frobenius(grid(p), oracle::stft_power(clip.samples, 512, 160, 400)) < 1e-8);
}

TEST_CASE("mel scale") {
    CHECK(hz_to_mel(0.0) == 0.0);
    const double expected = 2595.0 * std::log(1.0 + 1000.0 / 700.0) / std::log(10.0);
    CHECK(hz_to_mel(1000.0) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(mel_to_hz(hz_to_mel(3210.0)) == doctest::Approx(3210.0).epsilon(1e-12));
}

TEST_CASE("mel filterbank structure") {
    FeatureConfig cfg;
    const auto fb = mel_filterbank(cfg);
    REQUIRE(fb.rows == 64);
    REQUIRE(fb.cols == 257);
    std::vector<std::size_t> lo(fb.rows), hi(fb.rows), peak(fb.rows);
    for (std::size_t m = 0; m < fb.rows; ++m) {
        bool started = false, ended = false;
        for (std::size_t k = 0; k < fb.cols; ++k) {
            CHECK(fb(m, k) >= 0.0);
            if (fb(m, k) > 0.0) {
                CHECK_FALSE(ended);
                if (!started) lo[m] = k;
                started = true;
                hi[m] = k;
                if (fb(m, k) > fb(m, peak[m])) peak[m] = k;
            } else if (started) {
                ended = true;
            }
        }
        CHECK(started);
    }
    for (std::size_t m = 0; m + 2 < fb.rows; ++m) {
        CHECK((peak[m] < lo[m + 2] || peak[m] > hi[m + 2]));
        CHECK((peak[m + 2] < lo[m] || peak[m + 2] > hi[m]));
    }
    FeatureConfig tight = cfg;
    tight.n_mels = 200;
    CHECK_THROWS_AS(mel_filterbank(tight), ConfigError);
}

TEST_CASE("mfcc of silence is the DCT of a constant") {
    FeatureConfig cfg;
    const auto m = mfcc(AudioClip{std::vector<double>(2000, 0.0), 16000}, cfg);
    REQUIRE(m.values.rows == 40);
    for (std::size_t t = 0; t < m.values.cols; ++t) {
        CHECK(m.values(0, t) == doctest::Approx(std::sqrt(64.0) * std::log(1e-10)).epsilon(1e-12));
        for (std::size_t c = 1; c < 40; ++c) CHECK(std::abs(m.values(c, t)) < 1e-9);
    }
}

TEST_CASE("mfcc truncation is consistent") {
    const auto clip = noise(8000, 5);
    FeatureConfig c13, c40;
    c13.n_mfcc = 13;
    const auto a = mfcc(clip, c13).values;
    const auto b = mfcc(clip, c40).values;
    for (std::size_t r = 0; r < 13; ++r)
        for (std::size_t t = 0; t < a.cols; ++t) CHECK(a(r, t) == b(r, t));
}

TEST_CASE("mfcc matches the straight-line oracle") {
    AudioClip clip;
    for (int n = 0; n < 6000; ++n)
        clip.samples.push_back(0.4 * std::sin(2 * M_PI * 310.0 * n / 16000) + 0.2 * std::sin(2 * M_PI * 2270.0 * n / 16000));
    FeatureConfig cfg;
    const auto ours = mfcc(clip, cfg).values;
    const auto ref = oracle::mfcc(clip.samples, 16000, 512, 160, 400, 64, 40);
    CHECK(oracle::relative_frobenius(grid(ours), ref) < 1e-6);
}

TEST_CASE("log-mel features") {
    FeatureConfig cfg;
    const auto zero = mel_features(AudioClip{std::vector<double>(1000, 0.0), 16000}, cfg).values;
    for (double v : zero.data) CHECK(v == doctest::Approx(std::log(1e-10)).epsilon(1e-12));

    const auto edges = mel_band_edges(cfg);
    for (std::size_t m : {20u, 35u, 50u}) {
        const auto mel = mel_features(tone(edges[m + 1], 3000), cfg).values;
        for (std::size_t t = 0; t < mel.cols; ++t) CHECK(argmax_row(mel, t) == m);
    }

    auto clip = noise(4000, 8);
    const auto a = mel_features(clip, cfg).values;
    for (auto &s : clip.samples) s *= 2.0;
    const auto b = mel_features(clip, cfg).values;
    for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(b.data[i] - a.data[i] == doctest::Approx(std::log(4.0)).epsilon(1e-6));
}

TEST_CASE("chroma folds onto pitch classes") {
    FeatureConfig cfg;
    CHECK(pitch_class(440.0) == 9);
    CHECK(pitch_class(261.63) == 0);
    const auto a4 = chroma(tone(440.0, 4000), cfg).values;
    const auto a5 = chroma(tone(880.0, 4000), cfg).values;
    for (std::size_t t = 0; t < a4.cols; ++t) {
        CHECK(argmax_row(a4, t) == 9);
        CHECK(argmax_row(a5, t) == 9);
        CHECK(a4(9, t) == 1.0);
    }
    const auto z = chroma(AudioClip{std::vector<double>(1000, 0.0), 16000}, cfg).values;
    for (double v : z.data) CHECK(v == 0.0);
}

TEST_CASE("tonnetz projection") {
    CHECK(tonnetz_from_chroma(Matrix(12, 3)).data == std::vector<double>(18, 0.0));
    const int intervals[3] = {7, 3, 4};
    const double radii[3] = {1.0, 1.0, 0.5};
    for (int p = 0; p < 12; ++p) {
        Matrix c(12, 1);
        c(static_cast<std::size_t>(p), 0) = 1.0;
        const auto t = tonnetz_from_chroma(c);
        for (int d = 0; d < 3; ++d) {
            const double theta = 2 * M_PI * p * intervals[d] / 12.0;
            CHECK(t(2 * d, 0) == doctest::Approx(radii[d] * std::sin(theta)).epsilon(1e-12));
            CHECK(t(2 * d + 1, 0) == doctest::Approx(radii[d] * std::cos(theta)).epsilon(1e-12));
        }
    }
    Rng rng(4);
    Matrix c(12, 2);
    for (auto &v : c.data) v = rng.uniform();
    Matrix shifted(12, 2);
    for (std::size_t p = 0; p < 12; ++p)
        for (std::size_t t = 0; t < 2; ++t) shifted((p + 12) % 12, t) = c(p, t);
    CHECK(tonnetz_from_chroma(shifted).data == tonnetz_from_chroma(c).data);
}

TEST_CASE("spectral contrast") {
    FeatureConfig cfg;
    const auto bands = contrast_bands(cfg);
    REQUIRE(bands.size() == 7);
    CHECK(bands[1].first == 200.0);
    CHECK(bands.back().second == 8000.0);

    const auto z = spectral_contrast(AudioClip{std::vector<double>(2000, 0.0), 16000}, cfg).values;
    for (double v : z.data) CHECK(v == 0.0);

    // One impulse per frame has a flat magnitude spectrum.
    AudioClip impulses{std::vector<double>(16000, 0.0), 16000};
    for (std::size_t i = 200; i < impulses.samples.size(); i += 400) impulses.samples[i] = 0.9;
    const auto flat = spectral_contrast(impulses, cfg).values;
    for (double v : flat.data) CHECK(std::abs(v) < 1e-6);

    // The window's main lobe has to fit inside the 200 Hz wide first band.
    FeatureConfig wide;
    wide.n_fft = wide.win_length = 2048;
    wide.hop_length = 512;
    for (std::size_t b = 1; b < 7; ++b) {
        const double hz = std::sqrt(bands[b].first * bands[b].second);
        const auto c = time_average(spectral_contrast(tone(hz, 8000, 0.5), wide)).values;
        for (std::size_t other = 0; other < 7; ++other)
            if (other != b) CHECK(c[b] > c[other]);
    }

    const auto n = time_average(spectral_contrast(noise(16000, 21), cfg)).values;
    const auto t = time_average(spectral_contrast(tone(1000.0, 16000), cfg)).values;
    CHECK(n[3] < t[3]);
}

TEST_CASE("time average") {
    FeatureMatrix one;
    one.values = Matrix(3, 1);
    one.values.data = {1, 2, 3};
    CHECK(time_average(one).values == std::vector<double>{1, 2, 3});
    FeatureMatrix two;
    two.values = Matrix(1, 2);
    two.values.data = {1, 3};
    CHECK(time_average(two).values == std::vector<double>{2});

    const auto m = mfcc(noise(5000, 2), FeatureConfig{});
    const auto avg = time_average(m).values;
    for (std::size_t r = 0; r < m.values.rows; ++r) {
        double s = 0.0;
        for (std::size_t t = 0; t < m.values.cols; ++t) s += m.values(r, t);
        CHECK(std::abs(avg[r] - s / m.values.cols) < 1e-12);
    }
}

TEST_CASE("feature sets") {
    FeatureConfig cfg;
    const auto clip = noise(6000, 13);
    CHECK(extract_set(clip, parse_feature_set("mfcc:40,mel:64"), cfg, true).values.rows == 104);
    CHECK(feature_dim(parse_feature_set("five"), cfg) == 129);
    const auto five = extract_set(clip, parse_feature_set("five"), cfg, true);
    CHECK(five.values.rows == 129);
    CHECK(five.values.cols == 1);
    CHECK(format_feature_set(parse_feature_set("five")) == "mfcc,mel,chroma,tonnetz,contrast");

    const auto direct = chroma(clip, cfg);
    const auto via = extract_set(clip, parse_feature_set("chroma"), cfg, false);
    CHECK(via.values.data == direct.values.data);

    CHECK_THROWS_AS(extract_set(clip, parse_feature_set("mfcc,mfcc:13"), cfg, true), ConfigError);
    CHECK_THROWS_AS(parse_feature_set("pitch"), ConfigError);
    CHECK(extract_set(clip, parse_feature_set("mfcc:13"), cfg, true).values.rows == 13);
}

TEST_CASE("halving the hop roughly doubles the frames") {
    const auto clip = noise(9000, 17);
    FeatureConfig a, b;
    b.hop_length = 80;
    const auto fa = mfcc(clip, a).values;
    const auto fb = mfcc(clip, b).values;
    CHECK(fb.rows == fa.rows);
    CHECK(fb.cols >= 2 * fa.cols - 1);
}

TEST_CASE("extractors are pure") {
    const auto clip = noise(7000, 19);
    const auto set = parse_feature_set("five");
    CHECK(extract_set(clip, set, FeatureConfig{}, false).values.data ==
          extract_set(clip, set, FeatureConfig{}, false).values.data);
}

TEST_CASE("feature cache round trip and header checks") {
    test::TempDir dir;
    std::vector<dataset::SpeakerRecord> records;
    for (int i = 0; i < 4; ++i) {
        const auto path = dir / fmt::format("u{}.wav", i);
        dataset::write_audio(path, noise(3000 + 500 * i, 30 + i));
        dataset::SpeakerRecord r;
        r.path = path;
        r.speaker_id = "FABC0";
        r.gender = dataset::Gender::female;
        r.age = 30;
        records.push_back(r);
    }
    const auto set = parse_feature_set("mfcc:13,chroma");
    const auto one = extract_records(records, set, FeatureConfig{}, false, 1);
    const auto two = extract_records(records, set, FeatureConfig{}, false, 2);
    REQUIRE(one.entries.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(one.entries[i].values == two.entries[i].values);
    CHECK(one.header.dim == 25);

    write_feature_cache(dir / "c.bin", one);
    const auto back = read_feature_cache(dir / "c.bin");
    CHECK(back.header == one.header);
    CHECK(read_cache_header(dir / "c.bin") == one.header);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(back.entries[i].path == one.entries[i].path);
        CHECK(back.entries[i].frames == one.entries[i].frames);
        CHECK(back.entries[i].values == one.entries[i].values);
    }
    CHECK_THROWS_AS(back.find("nope.wav"), ValidationError);

    std::ofstream(dir / "junk.bin") << "not a cache";
    CHECK_THROWS_AS(read_feature_cache(dir / "junk.bin"), DecodeError);
}
