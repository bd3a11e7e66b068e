#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "speakerprof/audio.hpp"
#include "speakerprof/balance.hpp"
#include "speakerprof/errors.hpp"
#include "speakerprof/manifest.hpp"
#include "speakerprof/rng.hpp"
#include "speakerprof/synthetic.hpp"
#include "support.hpp"

using namespace spkr;
using namespace spkr::dataset;
namespace fs = std::filesystem;

namespace {

void write_bytes(const fs::path &path, const std::string &bytes) {
    std::ofstream out(path, std::ios::binary);
    out << bytes;
}

std::string le16(std::uint16_t v) { return {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)}; }
std::string le32(std::uint32_t v) {
    return {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff), static_cast<char>((v >> 16) & 0xff),
            static_cast<char>(v >> 24)};
}

// Hand-assembled RIFF/WAVE header around a raw payload.
std::string riff(std::uint16_t format, std::uint16_t channels, std::uint16_t bits, const std::string &payload,
                 std::uint32_t declared_size) {
    std::string fmt_chunk = "fmt " + le32(16) + le16(format) + le16(channels) + le32(16000) +
                            le32(16000 * channels * bits / 8) + le16(channels * bits / 8) + le16(bits);
    std::string data = "data" + le32(declared_size) + payload;
    return "RIFF" + le32(static_cast<std::uint32_t>(4 + fmt_chunk.size() + data.size())) + "WAVE" + fmt_chunk + data;
}

SpeakerRecord record(const std::string &path, const std::string &speaker, Gender g, int region, double age = 30) {
    SpeakerRecord r;
    r.path = path;
    r.speaker_id = speaker;
    r.gender = g;
    r.accent = Accent{region};
    r.age = age;
    return r;
}

std::vector<SpeakerRecord> speakers_with_utterances(std::size_t speakers, std::size_t utts) {
    std::vector<SpeakerRecord> out;
    for (std::size_t s = 0; s < speakers; ++s) {
        const std::string id = fmt::format("{}S{:04d}", s % 2 ? 'M' : 'F', s);
        for (std::size_t u = 0; u < utts; ++u)
            out.push_back(record(fmt::format("{}/{}.wav", id, u), id, s % 2 ? Gender::male : Gender::female,
                                 static_cast<int>(s % 8)));
    }
    return out;
}

}  // namespace

TEST_CASE("zero RIFF decodes to zeros") {
    test::TempDir dir;
    write_audio(dir / "z.wav", AudioClip{std::vector<double>(16000, 0.0), 16000});
    const auto clip = read_audio(dir / "z.wav");
    CHECK(clip.samples.size() == 16000);
    CHECK(clip.sample_rate == 16000);
    for (double s : clip.samples) CHECK(s == 0.0);
}

TEST_CASE("int16 16384 scales to exactly one half") {
    test::TempDir dir;
    std::string payload;
    for (int i = 0; i < 100; ++i) payload += le16(16384);
    write_bytes(dir / "h.wav", riff(1, 1, 16, payload, static_cast<std::uint32_t>(payload.size())));
    const auto clip = read_audio(dir / "h.wav");
    REQUIRE(clip.samples.size() == 100);
    for (double s : clip.samples) CHECK(s == 0.5);
}

TEST_CASE("SPHERE and RIFF written from one buffer decode identically") {
    test::TempDir dir;
    AudioClip sine;
    for (int n = 0; n < 16000; ++n) sine.samples.push_back(0.6 * std::sin(2 * M_PI * 440.0 * n / 16000.0));
    write_audio(dir / "a.wav", sine, AudioContainer::riff_wave);
    write_audio(dir / "b.WAV", sine, AudioContainer::nist_sphere);
    const auto a = read_audio(dir / "a.wav");
    const auto b = read_audio(dir / "b.WAV");
    REQUIRE(a.samples.size() == b.samples.size());
    double diff = 0.0;
    for (std::size_t i = 0; i < a.samples.size(); ++i) diff = std::max(diff, std::abs(a.samples[i] - b.samples[i]));
    CHECK(diff == 0.0);
    CHECK(b.sample_rate == 16000);
}

TEST_CASE("unsupported codec and truncation are reported distinctly") {
    test::TempDir dir;
    write_bytes(dir / "float.wav", riff(3, 1, 32, std::string(8, '\0'), 8));
    CHECK_THROWS_AS(read_audio(dir / "float.wav"), DecodeError);
    write_bytes(dir / "short.wav", riff(1, 1, 16, std::string(10, '\0'), 1000));
    CHECK_THROWS_AS(read_audio(dir / "short.wav"), IoError);
    CHECK_THROWS_AS(read_audio(dir / "missing.wav"), IoError);
}

TEST_CASE("TIMIT layout decodes labels from directories and metadata") {
    test::TempDir dir;
    const AudioClip clip{std::vector<double>(800, 0.1), 16000};
    fs::create_directories(dir / "DR1" / "FCJF0");
    for (int u = 0; u < 10; ++u) write_audio(dir / "DR1" / "FCJF0" / fmt::format("SA{}.WAV", u), clip);
    write_bytes(dir / "meta.csv", "speaker_id,age\nFCJF0,28\n");
    const auto scan = scan_timit_layout(dir.path(), dir / "meta.csv");
    REQUIRE(scan.manifest.size() == 10);
    for (const auto &r : scan.manifest.records()) {
        CHECK(r.gender == Gender::female);
        CHECK(r.accent == Accent{0});
        CHECK(r.age == 28.0);
        CHECK(r.speaker_id == "FCJF0");
    }
}

TEST_CASE("speakers without metadata and malformed directories are skipped and reported") {
    test::TempDir dir;
    const AudioClip clip{std::vector<double>(800, 0.1), 16000};
    for (const char *spk : {"FCJF0", "MDAB0", "XYZ"}) {
        fs::create_directories(dir / "TRAIN" / "DR2" / spk);
        for (int u = 0; u < 3; ++u) write_audio(dir / "TRAIN" / "DR2" / spk / fmt::format("U{}.wav", u), clip);
    }
    write_bytes(dir / "meta.csv", "speaker_id,age\nFCJF0,28\n");
    const auto scan = scan_timit_layout(dir.path(), dir / "meta.csv", 2);
    CHECK(scan.manifest.size() == 3);
    CHECK(scan.skips.files_seen == 9);
    CHECK(scan.skips.skipped() + scan.manifest.size() == scan.skips.files_seen);
    CHECK(scan.skips.speakers_without_meta == std::vector<std::string>{"MDAB0"});
    for (const auto &r : scan.manifest.records()) CHECK(r.split == Split::train);
    CHECK_THROWS_AS(scan_timit_layout(dir / "nope", dir / "meta.csv"), IoError);
}

TEST_CASE("manifest parsing") {
    const std::string header = "path,speaker_id,gender,age,accent,split\n";
    const auto m = parse_manifest_text(header + "a.wav,FCJF0,F,28,DR1,train\nb.wav,MDAB0,M,31,DR2,test\n"
                                                "c.wav,FCJF0,F,28,DR1,unassigned\n");
    CHECK(m.size() == 3);
    CHECK(m.speakers().size() == 2);
    CHECK(m.speakers().index("MDAB0") == 1);

    try {
        (void)parse_manifest_text(header + "a.wav,FCJF0,F,28,DR1,train\nb.wav,MDAB0,M,31,DR9,test\n");
        FAIL("expected a parse error");
    } catch (const ParseError &e) {
        CHECK(e.line() == 3);
    }
    CHECK_THROWS_AS(parse_manifest_text(header + "a.wav,FCJF0,F,old,DR1,train\n"), ParseError);
    try {
        (void)parse_manifest_text(header + "a.wav,FCJF0,F,28,DR1,train\na.wav,FCJF0,F,28,DR1,test\n");
        FAIL("expected a validation error");
    } catch (const ValidationError &e) {
        CHECK(std::string(e.what()).find("a.wav") != std::string::npos);
    }
}

TEST_CASE("manifest round-trips through a file in another directory") {
    test::TempDir dir;
    fs::create_directories(dir / "sub");
    Manifest m({record((dir / "audio" / "x.wav").string(), "FCJF0", Gender::female, 0)});
    write_manifest(dir / "sub" / "m.csv", m);
    const auto back = parse_manifest(dir / "sub" / "m.csv");
    CHECK(fs::weakly_canonical(back.records()[0].path) == fs::weakly_canonical(dir / "audio" / "x.wav"));
}

TEST_CASE("oversampling upsamples every combination to the maximum") {
    std::vector<SpeakerRecord> rs{record("1", "MA0", Gender::male, 0), record("2", "MA0", Gender::male, 0),
                                  record("3", "MA0", Gender::male, 0), record("4", "FB0", Gender::female, 0)};
    const auto out = oversample_balanced(rs, 3);
    const auto counts = accent_gender_counts(out);
    CHECK(counts.at("DR1_M") == 3);
    CHECK(counts.at("DR1_F") == 3);
    CHECK(std::equal(rs.begin(), rs.end(), out.begin()));

    std::vector<SpeakerRecord> balanced{record("1", "MA0", Gender::male, 0), record("2", "FB0", Gender::female, 0)};
    CHECK(oversample_balanced(balanced, 3) == balanced);
    CHECK(oversample_balanced(rs, 9) == oversample_balanced(rs, 9));
}

TEST_CASE("oversampling a 16-combination training set with maximum 590 yields 9440") {
    // 4610 records over 8 regions x 2 genders, largest combination 590.
    const std::size_t counts[16] = {590, 210, 380, 190, 560, 230, 420, 170, 330, 150, 410, 160, 260, 90, 330, 130};
    std::size_t total = 0;
    std::vector<SpeakerRecord> rs;
    for (int c = 0; c < 16; ++c) {
        const bool female = c % 2 == 1;
        for (std::size_t i = 0; i < counts[c]; ++i)
            rs.push_back(record(fmt::format("{}_{}", c, i), female ? "FX0" : "MX0",
                                female ? Gender::female : Gender::male, c / 2));
        total += counts[c];
    }
    CHECK(total == 4610);
    const auto out = oversample_balanced(rs, 11);
    CHECK(out.size() == 9440);
    for (const auto &[key, n] : accent_gender_counts(out)) CHECK(n == 590);
    std::set<fs::path> distinct;
    for (const auto &r : out) distinct.insert(r.path);
    CHECK(distinct.size() == rs.size());
}

TEST_CASE("speaker-ID split is stratified per speaker") {
    Manifest m(speakers_with_utterances(629, 10));
    const auto split = split_for_speaker_id(m, SplitRatios{}, 7);
    CHECK(split.filter(Split::train).size() == 4403);
    CHECK(split.filter(Split::val).size() == 629);
    CHECK(split.filter(Split::test).size() == 1258);
    for (auto s : {Split::train, Split::val, Split::test}) {
        std::set<std::string> ids;
        for (const auto &r : split.filter(s)) ids.insert(r.speaker_id);
        CHECK(ids.size() == 629);
    }
    CHECK(split.records() == split_for_speaker_id(m, SplitRatios{}, 7).records());

    Manifest one(speakers_with_utterances(1, 10));
    const auto s1 = split_for_speaker_id(one, SplitRatios{}, 1);
    CHECK(s1.filter(Split::train).size() == 7);
    CHECK(s1.filter(Split::val).size() == 1);
    CHECK(s1.filter(Split::test).size() == 2);

    Manifest tiny(speakers_with_utterances(1, 2));
    try {
        (void)split_for_speaker_id(tiny, SplitRatios{}, 1);
        FAIL("expected an error");
    } catch (const Error &e) {
        CHECK(std::string(e.what()).find("FS0000") != std::string::npos);
    }
}

TEST_CASE("split rounding for other utterance counts") {
    const auto c3 = speaker_split_counts(3, SplitRatios{});
    CHECK(c3.train == 1);
    CHECK(c3.val == 1);
    CHECK(c3.test == 1);
    const auto c8 = speaker_split_counts(8, SplitRatios{});
    CHECK(c8.train == 6);
    CHECK(c8.val == 1);
    CHECK(c8.test == 1);
}

TEST_CASE("profiling split keeps speakers disjoint") {
    Manifest m(speakers_with_utterances(30, 4));
    const auto split = split_profiling(m, 0.1, 5);
    std::map<std::string, std::set<Split>> seen;
    for (const auto &r : split.records()) seen[r.speaker_id].insert(r.split);
    for (const auto &[id, splits] : seen) CHECK(splits.size() == 1);
    CHECK(!split.filter(Split::train).empty());
    CHECK(!split.filter(Split::val).empty());
    CHECK(!split.filter(Split::test).empty());
}

TEST_CASE("synthetic corpus") {
    test::TempDir dir;
    SyntheticConfig cfg;
    const auto corpus = generate_synthetic_corpus(dir.path(), cfg);
    CHECK(corpus.files == 200);
    const auto scan = scan_timit_layout(dir.path(), corpus.speaker_meta);
    CHECK(scan.manifest.size() == 200);
    CHECK(scan.manifest.speakers().size() == 20);
    CHECK(scan.skips.skipped() == 0);

    const auto again = synthetic_speakers(cfg);
    const auto a = synthesize_utterance(again[3], 3, 2, cfg);
    const auto b = synthesize_utterance(again[3], 3, 2, cfg);
    CHECK(a.samples == b.samples);
    for (double s : a.samples) CHECK(std::abs(s) <= 1.0);
}
