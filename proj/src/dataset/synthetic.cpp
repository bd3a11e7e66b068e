#include "speakerprof/synthetic.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "speakerprof/errors.hpp"
#include "speakerprof/rng.hpp"

namespace spkr::dataset {
namespace fs = std::filesystem;

std::vector<SyntheticSpeaker> synthetic_speakers(const SyntheticConfig &cfg) {
    if (cfg.speakers > 26 * 26 * 26) throw ConfigError("synthetic corpus supports at most 17576 speakers");
    std::vector<SyntheticSpeaker> out;
    Rng rng(derive_seed(cfg.seed, "synthetic/ages"));
    for (std::size_t s = 0; s < cfg.speakers; ++s) {
        SyntheticSpeaker sp;
        sp.gender = s % 2 == 0 ? Gender::female : Gender::male;
        sp.accent = Accent{static_cast<int>(s % kNumAccents)};
        sp.age = std::round(rng.uniform(20.0, 70.0));
        sp.test = cfg.timit_split_dirs && s % 5 == 4;
        sp.id = fmt::format("{}{}{}{}{}", sp.gender == Gender::female ? 'F' : 'M', char('A' + (s / 676) % 26),
                            char('A' + (s / 26) % 26), char('A' + s % 26), s % 10);
        out.push_back(std::move(sp));
    }
    return out;
}

AudioClip synthesize_utterance(const SyntheticSpeaker &speaker, std::size_t speaker_index, std::size_t utterance,
                               const SyntheticConfig &cfg) {
    Rng voice(derive_seed(cfg.seed, "synthetic/voice/" + speaker.id));
    Rng rng(derive_seed(cfg.seed, fmt::format("synthetic/utt/{}/{}", speaker.id, utterance)));

    const double sr = cfg.sample_rate;
    const auto n = static_cast<std::size_t>(std::round(rng.uniform(cfg.min_seconds, cfg.max_seconds) * sr));

    struct Tone {
        double freq, amp, phase;
    };
    std::vector<Tone> tones;

    const double f0_base = speaker.gender == Gender::female ? 210.0 : 115.0;
    const double f0 = f0_base * (1.0 + 0.05 * voice.uniform(-1.0, 1.0)) * (1.0 + 0.02 * rng.uniform(-1.0, 1.0));
    for (int h = 1; h <= 6; ++h) tones.push_back({f0 * h, 0.35 / h, rng.uniform(0.0, 2 * M_PI)});

    const double accent_freq = 600.0 + 180.0 * speaker.accent.region;
    tones.push_back({accent_freq * (1.0 + 0.01 * rng.uniform(-1.0, 1.0)), 0.15, rng.uniform(0.0, 2 * M_PI)});

    const double spk_a = 2000.0 + 97.0 * static_cast<double>(speaker_index % 31);
    const double spk_b = 4300.0 + 131.0 * static_cast<double>((speaker_index / 31) % 17) +
                         41.0 * static_cast<double>(speaker_index % 7);
    tones.push_back({spk_a, 0.12, rng.uniform(0.0, 2 * M_PI)});
    tones.push_back({spk_b, 0.08, rng.uniform(0.0, 2 * M_PI)});

    const double age_level = 0.02 + 0.12 * std::clamp((speaker.age - 20.0) / 50.0, 0.0, 1.0);
    tones.push_back({6500.0, age_level, rng.uniform(0.0, 2 * M_PI)});

    const double gain = rng.uniform(0.6, 1.0);
    AudioClip clip;
    clip.sample_rate = cfg.sample_rate;
    clip.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sr;
        double v = 0.0;
        for (const auto &tone : tones) v += tone.amp * std::sin(2 * M_PI * tone.freq * t + tone.phase);
        v += 0.01 * rng.normal();
        clip.samples[i] = gain * v;
    }
    double peak = 0.0;
    for (double v : clip.samples) peak = std::max(peak, std::abs(v));
    if (peak > 0.9)
        for (double &v : clip.samples) v *= 0.9 / peak;
    return clip;
}

SyntheticCorpus generate_synthetic_corpus(const fs::path &root, const SyntheticConfig &cfg) {
    SyntheticCorpus corpus{root, root / "speakers.csv", 0};
    fs::create_directories(root);
    const auto speakers = synthetic_speakers(cfg);

    std::ofstream meta(corpus.speaker_meta, std::ios::binary | std::ios::trunc);
    if (!meta) throw IoError(fmt::format("cannot write '{}'", corpus.speaker_meta.string()));
    meta << "speaker_id,age\n";
    for (std::size_t s = 0; s < speakers.size(); ++s) {
        const auto &sp = speakers[s];
        meta << sp.id << ',' << sp.age << '\n';
        fs::path dir = root;
        if (cfg.timit_split_dirs) dir /= sp.test ? "TEST" : "TRAIN";
        dir = dir / to_string(sp.accent) / sp.id;
        fs::create_directories(dir);
        for (std::size_t u = 0; u < cfg.utterances_per_speaker; ++u) {
            write_audio(dir / fmt::format("U{:02}.WAV", u), synthesize_utterance(sp, s, u, cfg), cfg.container);
            ++corpus.files;
        }
    }
    return corpus;
}

}  // namespace spkr::dataset
