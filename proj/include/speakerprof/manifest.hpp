#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace spkr::dataset {

enum class Gender { male, female };
enum class Split { train, val, test, unassigned };

inline constexpr std::size_t kNumAccents = 8;
inline constexpr std::size_t kNumGenders = 2;

// Accent is the TIMIT dialect region, stored 0-based (DR1 -> 0).
struct Accent {
    int region = 0;

    friend bool operator==(Accent, Accent) = default;
    friend auto operator<=>(Accent, Accent) = default;
};

std::string to_string(Gender g);
std::string to_string(Split s);
std::string to_string(Accent a);
std::optional<Gender> parse_gender(std::string_view token);
std::optional<Split> parse_split(std::string_view token);
std::optional<Accent> parse_accent(std::string_view token);

struct SpeakerRecord {
    std::filesystem::path path;
    std::string speaker_id;
    Gender gender = Gender::male;
    double age = 0.0;
    Accent accent;
    Split split = Split::unassigned;

    friend bool operator==(const SpeakerRecord &, const SpeakerRecord &) = default;
};

// Checks the record invariants (accent range, age range, TIMIT gender prefix).
// Throws ValidationError.
void validate(const SpeakerRecord &record);

// Bijection between a label and its dense integer index, in first-appearance
// order.
class LabelMap {
   public:
    std::size_t add(const std::string &label);
    std::size_t index(const std::string &label) const;
    const std::string &label(std::size_t index) const { return labels_.at(index); }
    std::size_t size() const { return labels_.size(); }
    bool contains(const std::string &label) const { return lookup_.contains(label); }
    const std::vector<std::string> &labels() const { return labels_; }

   private:
    std::vector<std::string> labels_;
    std::map<std::string, std::size_t, std::less<>> lookup_;
};

// Immutable once built. Constructing one validates every record and rejects
// duplicate paths.
class Manifest {
   public:
    Manifest() = default;
    explicit Manifest(std::vector<SpeakerRecord> records);

    const std::vector<SpeakerRecord> &records() const { return records_; }
    std::size_t size() const { return records_.size(); }
    const LabelMap &speakers() const { return speakers_; }
    const LabelMap &genders() const { return genders_; }
    const LabelMap &accents() const { return accents_; }

    // Records with the given split, in manifest order.
    std::vector<SpeakerRecord> filter(Split split) const;

   private:
    std::vector<SpeakerRecord> records_;
    LabelMap speakers_;
    LabelMap genders_;
    LabelMap accents_;
};

// CSV with header `path,speaker_id,gender,age,accent,split`. Relative paths
// resolve against the manifest's directory; write_manifest stores them so.
Manifest parse_manifest(const std::filesystem::path &path);
Manifest parse_manifest_text(std::string_view text, const std::filesystem::path &base_dir = {});
std::string format_manifest(const Manifest &manifest);
void write_manifest(const std::filesystem::path &path, const Manifest &manifest);

// CSV with header `speaker_id,age`.
std::map<std::string, double> parse_speaker_meta(const std::filesystem::path &path);

struct SkipReport {
    std::size_t files_seen = 0;
    std::vector<std::string> entries;  // one "reason: path" line per skipped file
    std::vector<std::string> speakers_without_meta;

    std::size_t skipped() const { return entries.size(); }
};

struct ScanResult {
    Manifest manifest;
    SkipReport skips;
};

// Walks root for DRn/<speaker_id>/<utterance>.wav (case-insensitive, any
// depth). Split comes from a TRAIN/TEST ancestor directory when present.
// Ages come from speaker_meta; speakers missing there are dropped and listed.
ScanResult scan_timit_layout(const std::filesystem::path &root, const std::filesystem::path &speaker_meta,
                             std::size_t jobs = 1);

}  // namespace spkr::dataset
