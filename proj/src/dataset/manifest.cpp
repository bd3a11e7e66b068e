#include "speakerprof/manifest.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "speakerprof/audio.hpp"
#include "speakerprof/errors.hpp"
#include "speakerprof/parallel.hpp"

namespace spkr::dataset {
namespace fs = std::filesystem;

namespace {

std::string upper(std::string_view s) {
    std::string out(s);
    for (char &c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    for (;;) {
        const auto comma = line.find(',', start);
        cells.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return cells;
}

// [MF] + three letters + digit, e.g. FCJF0.
bool is_timit_speaker_id(std::string_view id) {
    if (id.size() != 5 || (id[0] != 'M' && id[0] != 'F')) return false;
    for (std::size_t i = 1; i < 4; ++i)
        if (!std::isupper(static_cast<unsigned char>(id[i]))) return false;
    return std::isdigit(static_cast<unsigned char>(id[4])) != 0;
}

std::optional<double> parse_double(std::string_view s) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

std::string read_text(const fs::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

template <typename Fn>
void for_each_line(std::string_view text, Fn &&fn) {
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        ++line_no;
        fn(line, line_no);
        start = end + 1;
    }
}

}  // namespace

std::string to_string(Gender g) { return g == Gender::male ? "M" : "F"; }

std::string to_string(Split s) {
    switch (s) {
        case Split::train:
            return "train";
        case Split::val:
            return "val";
        case Split::test:
            return "test";
        case Split::unassigned:
            return "unassigned";
    }
    return "unassigned";
}

std::string to_string(Accent a) { return fmt::format("DR{}", a.region + 1); }

std::optional<Gender> parse_gender(std::string_view token) {
    if (token == "M") return Gender::male;
    if (token == "F") return Gender::female;
    return std::nullopt;
}

std::optional<Split> parse_split(std::string_view token) {
    if (token == "train") return Split::train;
    if (token == "val") return Split::val;
    if (token == "test") return Split::test;
    if (token == "unassigned" || token.empty()) return Split::unassigned;
    return std::nullopt;
}

std::optional<Accent> parse_accent(std::string_view token) {
    if (token.size() != 3 || token[0] != 'D' || token[1] != 'R') return std::nullopt;
    if (token[2] < '1' || token[2] > '8') return std::nullopt;
    return Accent{token[2] - '1'};
}

void validate(const SpeakerRecord &r) {
    if (r.accent.region < 0 || r.accent.region >= static_cast<int>(kNumAccents))
        throw ValidationError(fmt::format("'{}': accent region {} out of DR1..DR8", r.path.string(), r.accent.region + 1));
    if (!(r.age > 0.0 && r.age < 120.0))
        throw ValidationError(fmt::format("'{}': age {} outside (0, 120)", r.path.string(), r.age));
    if (r.speaker_id.empty()) throw ValidationError(fmt::format("'{}': empty speaker id", r.path.string()));
    if (is_timit_speaker_id(r.speaker_id) && to_string(r.gender)[0] != r.speaker_id[0])
        throw ValidationError(fmt::format("'{}': gender {} disagrees with speaker id {}", r.path.string(),
                                          to_string(r.gender), r.speaker_id));
}

std::size_t LabelMap::add(const std::string &label) {
    if (auto it = lookup_.find(label); it != lookup_.end()) return it->second;
    labels_.push_back(label);
    lookup_.emplace(label, labels_.size() - 1);
    return labels_.size() - 1;
}

std::size_t LabelMap::index(const std::string &label) const {
    auto it = lookup_.find(label);
    if (it == lookup_.end()) throw ValidationError(fmt::format("unknown label '{}'", label));
    return it->second;
}

Manifest::Manifest(std::vector<SpeakerRecord> records) : records_(std::move(records)) {
    std::set<fs::path> seen;
    for (const auto &r : records_) {
        validate(r);
        if (!seen.insert(r.path).second)
            throw ValidationError(fmt::format("duplicate path '{}' in manifest", r.path.string()));
        speakers_.add(r.speaker_id);
        genders_.add(to_string(r.gender));
        accents_.add(to_string(r.accent));
    }
}

std::vector<SpeakerRecord> Manifest::filter(Split split) const {
    std::vector<SpeakerRecord> out;
    std::copy_if(records_.begin(), records_.end(), std::back_inserter(out),
                 [split](const SpeakerRecord &r) { return r.split == split; });
    return out;
}

Manifest parse_manifest_text(std::string_view text, const fs::path &base_dir) {
    std::vector<SpeakerRecord> records;
    bool header_seen = false;
    for_each_line(text, [&](std::string_view line, std::size_t line_no) {
        if (trim(line).empty()) return;
        const auto cells = split_csv(line);
        if (!header_seen) {
            if (line != "path,speaker_id,gender,age,accent,split")
                throw ParseError("expected header 'path,speaker_id,gender,age,accent,split'", line_no);
            header_seen = true;
            return;
        }
        if (cells.size() != 6) throw ParseError(fmt::format("expected 6 fields, got {}", cells.size()), line_no);
        SpeakerRecord r;
        r.path = fs::path(std::string(cells[0]));
        if (r.path.is_relative() && !base_dir.empty()) r.path = base_dir / r.path;
        r.speaker_id = std::string(cells[1]);
        const auto gender = parse_gender(cells[2]);
        if (!gender) throw ParseError(fmt::format("unknown gender '{}'", cells[2]), line_no);
        r.gender = *gender;
        const auto age = parse_double(cells[3]);
        if (!age) throw ParseError(fmt::format("non-numeric age '{}'", cells[3]), line_no);
        r.age = *age;
        const auto accent = parse_accent(cells[4]);
        if (!accent) throw ParseError(fmt::format("unknown accent '{}' (expected DR1..DR8)", cells[4]), line_no);
        r.accent = *accent;
        const auto split = parse_split(cells[5]);
        if (!split) throw ParseError(fmt::format("unknown split '{}'", cells[5]), line_no);
        r.split = *split;
        try {
            validate(r);
        } catch (const ValidationError &e) {
            throw ParseError(e.what(), line_no);
        }
        records.push_back(std::move(r));
    });
    if (!header_seen) throw ParseError("empty manifest", 1);
    return Manifest(std::move(records));
}

Manifest parse_manifest(const fs::path &path) {
    return parse_manifest_text(read_text(path), path.parent_path());
}

std::string format_manifest(const Manifest &manifest) {
    std::string out = "path,speaker_id,gender,age,accent,split\n";
    for (const auto &r : manifest.records()) {
        out += fmt::format("{},{},{},{},{},{}\n", r.path.generic_string(), r.speaker_id, to_string(r.gender), r.age,
                           to_string(r.accent), to_string(r.split));
    }
    return out;
}

void write_manifest(const fs::path &path, const Manifest &manifest) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot write manifest '{}'", path.string()));
    // Paths are stored relative to the manifest's directory.
    const fs::path base = fs::absolute(path).parent_path().lexically_normal();
    std::vector<SpeakerRecord> records = manifest.records();
    for (auto &r : records) {
        const fs::path rel = fs::absolute(r.path).lexically_normal().lexically_relative(base);
        if (!rel.empty()) r.path = rel;
    }
    out << format_manifest(Manifest(std::move(records)));
}

std::map<std::string, double> parse_speaker_meta(const fs::path &path) {
    const std::string text = read_text(path);
    std::map<std::string, double> ages;
    bool header_seen = false;
    for_each_line(text, [&](std::string_view line, std::size_t line_no) {
        if (trim(line).empty()) return;
        if (!header_seen) {
            if (trim(line) != "speaker_id,age") throw ParseError("expected header 'speaker_id,age'", line_no);
            header_seen = true;
            return;
        }
        const auto cells = split_csv(line);
        if (cells.size() != 2) throw ParseError("expected 2 fields", line_no);
        const auto age = parse_double(cells[1]);
        if (!age) throw ParseError(fmt::format("non-numeric age '{}'", cells[1]), line_no);
        ages[upper(cells[0])] = *age;
    });
    return ages;
}

ScanResult scan_timit_layout(const fs::path &root, const fs::path &speaker_meta, std::size_t jobs) {
    if (!fs::is_directory(root)) throw IoError(fmt::format("corpus root '{}' is not a directory", root.string()));
    const auto ages = parse_speaker_meta(speaker_meta);

    std::vector<fs::path> files;
    for (const auto &entry : fs::recursive_directory_iterator(root)) {
        if (!entry.is_regular_file()) continue;
        if (upper(entry.path().extension().string()) == ".WAV") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());

    struct Outcome {
        std::optional<SpeakerRecord> record;
        std::string skip;
        std::string missing_speaker;
    };
    std::vector<Outcome> outcomes(files.size());

    parallel_for(files.size(), jobs, [&](std::size_t i) {
        const fs::path &file = files[i];
        Outcome &out = outcomes[i];
        const std::string speaker = upper(file.parent_path().filename().string());
        const std::string region = upper(file.parent_path().parent_path().filename().string());
        const auto accent = parse_accent(region);
        if (!accent) {
            out.skip = fmt::format("no DR1..DR8 region directory: {}", file.string());
            return;
        }
        if (!is_timit_speaker_id(speaker)) {
            out.skip = fmt::format("malformed speaker directory '{}': {}", speaker, file.string());
            return;
        }
        auto age = ages.find(speaker);
        if (age == ages.end()) {
            out.skip = fmt::format("speaker {} missing from metadata: {}", speaker, file.string());
            out.missing_speaker = speaker;
            return;
        }
        try {
            (void)read_audio(file);
        } catch (const Error &e) {
            out.skip = fmt::format("undecodable audio: {}", e.what());
            return;
        }
        SpeakerRecord r;
        r.path = file;
        r.speaker_id = speaker;
        r.gender = speaker[0] == 'F' ? Gender::female : Gender::male;
        r.age = age->second;
        r.accent = *accent;
        for (fs::path p = file.parent_path().parent_path(); p != root && p.has_relative_path(); p = p.parent_path()) {
            const std::string name = upper(p.filename().string());
            if (name == "TRAIN") {
                r.split = Split::train;
                break;
            }
            if (name == "TEST") {
                r.split = Split::test;
                break;
            }
        }
        out.record = std::move(r);
    });

    ScanResult result;
    result.skips.files_seen = files.size();
    std::vector<SpeakerRecord> records;
    std::set<std::string> missing;
    for (auto &o : outcomes) {
        if (o.record) {
            records.push_back(std::move(*o.record));
        } else {
            result.skips.entries.push_back(o.skip);
            if (!o.missing_speaker.empty()) missing.insert(o.missing_speaker);
        }
    }
    result.skips.speakers_without_meta.assign(missing.begin(), missing.end());
    for (const auto &id : result.skips.speakers_without_meta)
        std::cerr << "warning: speaker " << id << " has no metadata entry; dropped\n";
    result.manifest = Manifest(std::move(records));
    return result;
}

}  // namespace spkr::dataset
