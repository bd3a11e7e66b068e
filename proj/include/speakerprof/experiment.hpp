#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "speakerprof/feature_cache.hpp"
#include "speakerprof/features.hpp"
#include "speakerprof/manifest.hpp"
#include "speakerprof/models.hpp"
#include "speakerprof/report.hpp"
#include "speakerprof/training.hpp"

namespace spkr::cli {

// Environment variable naming the default data root.
inline constexpr const char *kDataRootEnv = "SPEAKERPROF_DATA";

enum class SplitProtocol {
    profiling,   // speaker-disjoint train/val/test
    speaker_id,  // every speaker in every split, 70/10/20 of its utterances
};

struct ReportedValue {
    std::string task;
    std::string metric;
    double value = 0.0;
};

// A named, fully specified experiment reproducing one table row (or one
// STL-vs-MTL table). Model specs carry the input width implied by the
// default feature config; the speaker head width is filled in from the data.
struct ExperimentPreset {
    std::string name;
    std::string table;  // e.g. "Table 1, MFCC 40"
    std::string description;
    dsp::FeatureSet features;
    bool averaged = true;
    SplitProtocol split = SplitProtocol::profiling;
    bool oversample = true;
    models::ModelSpec model;                // the single model, or the MTL arm
    std::vector<models::ModelSpec> stl;     // non-empty for STL-vs-MTL comparisons
    training::TrainConfig train;
    std::vector<ReportedValue> reported;

    bool is_comparison() const { return !stl.empty(); }
    // Table label, the reported values and the licensed-corpus note, on one line.
    std::string provenance() const;
};

const std::vector<ExperimentPreset> &presets();
// Throws ConfigError listing the known names.
const ExperimentPreset &find_preset(const std::string &name);
std::string preset_listing();

// Optional overrides applied on top of a preset.
struct ExperimentOptions {
    std::filesystem::path data_root;
    std::filesystem::path out_dir;
    std::size_t jobs = 1;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> batch_size;
    std::optional<double> learning_rate;
    std::optional<std::uint64_t> seed;
    std::optional<models::LossWeights> loss_weights;
    std::optional<std::size_t> patience;
    std::optional<int> hop_length;
    std::optional<int> n_fft;
    bool reuse_cache = true;
    bool quiet = false;
};

// Loads a data root: a manifest CSV file, a directory holding manifest.csv,
// or a TIMIT-style tree with a speakers.csv sidecar.
dataset::Manifest load_data_root(const std::filesystem::path &root, std::size_t jobs = 1);

// Reuses `path` when `reuse` is set and its header matches the request;
// otherwise extracts every record of the manifest and writes the cache.
dsp::FeatureCache load_or_extract(const std::filesystem::path &path, const dataset::Manifest &manifest,
                                  const dsp::FeatureSet &set, const dsp::FeatureConfig &cfg, bool averaged,
                                  std::size_t jobs, bool *hit = nullptr, bool reuse = true);

// Assigns splits: speaker-disjoint 70/10/20 (keeping any TRAIN/TEST
// assignment and carving validation speakers out of train) for profiling,
// per-speaker 70/10/20 of utterances for speaker ID.
dataset::Manifest split_manifest(const dataset::Manifest &manifest, SplitProtocol protocol, std::uint64_t seed);

struct PreparedData {
    training::DataSplits splits;
    training::Standardizer standardizer;
    dataset::LabelMap speakers;
    std::size_t train_records_before_oversampling = 0;
};

// Splits the manifest, oversamples the training records when requested, and
// standardizes every split with statistics of the original training records.
PreparedData prepare_data(const dataset::Manifest &manifest, const dsp::FeatureCache &cache, SplitProtocol protocol,
                          bool oversample, training::Normalization normalization, std::uint64_t seed);

// Metadata stored in checkpoints so `eval` can rebuild the inputs.
std::string checkpoint_metadata(const dsp::FeatureSet &set, const dsp::FeatureConfig &cfg, bool averaged,
                                const PreparedData &data, const training::TrainConfig &train, SplitProtocol protocol);

struct CheckpointMeta {
    dsp::FeatureSet features;
    dsp::FeatureConfig config;
    bool averaged = true;
    training::Normalization normalization = training::Normalization::global_standardize;
    training::Standardizer standardizer;
    training::TargetScaler age_scaler;
    dataset::LabelMap speakers;
    SplitProtocol split = SplitProtocol::profiling;
    std::uint64_t seed = 0;
};

std::string to_string(SplitProtocol p);
// Throws ConfigError.
SplitProtocol parse_split_protocol(std::string_view token);

// Throws DecodeError on malformed metadata.
CheckpointMeta parse_checkpoint_metadata(const std::string &text);

struct ExperimentResult {
    std::filesystem::path bundle;
    std::vector<training::SummaryRow> rows;
};

// Runs the preset and writes the report bundle to out_dir/<preset name>/:
// config.txt, history.jsonl, metrics.jsonl, summary.txt, summary.csv and
// one <run>.ckpt per trained model.
ExperimentResult run_experiment(const ExperimentPreset &preset, const ExperimentOptions &options);

// Resolved configuration of a preset after overrides.
training::TrainConfig resolved_train_config(const ExperimentPreset &preset, const ExperimentOptions &options);
dsp::FeatureConfig resolved_feature_config(const ExperimentOptions &options);

}  // namespace spkr::cli
