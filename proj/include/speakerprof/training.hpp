#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "speakerprof/feature_cache.hpp"
#include "speakerprof/manifest.hpp"
#include "speakerprof/models.hpp"

namespace spkr::training {

enum class Normalization { none, global_standardize };
enum class AgeLoss { mse, l1 };

std::string to_string(Normalization n);
std::string to_string(AgeLoss l);
Normalization parse_normalization(std::string_view token);
AgeLoss parse_age_loss(std::string_view token);

struct TrainConfig {
    std::size_t epochs = 60;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    std::uint64_t seed = 7;
    models::LossWeights loss_weights;
    // Epochs without a validation improvement before stopping; 0 disables.
    std::size_t patience = 10;
    Normalization normalization = Normalization::global_standardize;
    AgeLoss age_loss = AgeLoss::mse;
    // Feature set the run was trained on, e.g. "mfcc:40"; informational.
    std::string features;

    // Throws ConfigError.
    void validate() const;
    std::string to_text() const;
};

struct Labels {
    std::size_t accent = 0;
    std::size_t gender = 0;  // 0 = M, 1 = F
    std::size_t speaker = 0;
    double age = 0.0;
};

// One utterance's features (dim x frames, row-major) and labels.
struct Sample {
    std::string path;
    std::size_t dim = 0;
    std::size_t frames = 0;
    std::vector<float> values;
    Labels labels;
};

// Looks every record up in the cache. Speaker indices come from `speakers`.
std::vector<Sample> make_samples(const std::vector<dataset::SpeakerRecord> &records, const dataset::LabelMap &speakers,
                                 const dsp::FeatureCache &cache);

struct PaddedBatch {
    ad::Tensor input;  // [B,F,Tmax]
    std::vector<std::size_t> lengths;
};

// Zero-pads each item on the time axis to the longest in the batch.
PaddedBatch pad_batch(std::span<const Sample *const> items);
PaddedBatch pad_batch(const std::vector<dsp::FeatureMatrix> &seqs);

// Model input for a batch: [B,F] for the MLP kinds (items must have one
// frame), otherwise a padded [B,F,T] with lengths.
models::Batch make_batch(const models::ModelSpec &spec, std::span<const Sample *const> items);

// Per-coefficient statistics over every frame of the training split.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> std;  // floored at 1e-8

    void apply(std::vector<Sample> &samples) const;
};

Standardizer global_standardize(const std::vector<Sample> &train);

// z-scoring for age targets, fitted on the training split.
struct TargetScaler {
    double mean = 0.0;
    double std = 1.0;

    static TargetScaler fit(const std::vector<Sample> &train);
    double forward(double age) const { return (age - mean) / std; }
    double inverse(double z) const { return z * std + mean; }
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    std::vector<std::pair<models::Task, double>> val_task_losses;
};

struct History {
    std::string run_id;
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    bool early_stopped = false;
};

// Seeded minibatch training with Adam. The training set is reshuffled every
// epoch from a stream derived from cfg.seed; a trailing batch of one item is
// merged into the previous batch so batchnorm always sees two or more rows.
// After the last epoch the parameters with the lowest validation loss are
// restored. Multitask heads whose loss weight is 0 are frozen.
//
// Throws ConfigError on an empty split and NumericError (with epoch, batch
// and component) when a loss goes non-finite.
History train(models::Model &model, const std::vector<Sample> &train_set, const std::vector<Sample> &val_set,
              const TrainConfig &cfg, const TargetScaler &age_scaler, const std::string &run_id = "run");

struct Predictions {
    std::map<models::Task, std::vector<std::size_t>> classes;
    std::vector<double> age;  // years
};

Predictions predict(models::Model &model, const std::vector<Sample> &samples, const TargetScaler &age_scaler,
                    std::size_t batch_size = 64);

struct Metrics {
    bool regression = false;
    std::size_t count = 0;
    double accuracy = 0.0;
    double precision = 0.0;  // macro
    double recall = 0.0;     // macro
    double f1 = 0.0;         // macro
    double mae = 0.0;
    double rmse = 0.0;
    std::vector<std::vector<std::size_t>> confusion;  // [truth][predicted]
    // Classes absent from both truth and predictions; left out of the macro means.
    std::vector<std::size_t> excluded_classes;
};

Metrics classification_metrics(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                               std::size_t n_classes);
Metrics regression_metrics(std::span<const double> truth, std::span<const double> predicted);

std::size_t label_of(const Labels &labels, models::Task task);

Metrics evaluate_classification(models::Model &model, const std::vector<Sample> &split, models::Task task);
Metrics evaluate_regression(models::Model &model, const std::vector<Sample> &split, const TargetScaler &age_scaler);
// Dispatches on the task type; `predictions` must come from `split`.
Metrics task_metrics(const models::ModelSpec &spec, const Predictions &predictions, const std::vector<Sample> &split,
                     models::Task task);

struct RunResult {
    std::string run_id;
    models::ModelSpec spec;
    History history;
    std::vector<std::pair<models::Task, Metrics>> test_metrics;
    std::shared_ptr<models::Model> model;  // best-validation parameters
};

struct DataSplits {
    std::vector<Sample> train;
    std::vector<Sample> val;
    std::vector<Sample> test;
    TargetScaler age_scaler;
};

// Trains `spec` on the splits and evaluates every task on the test split.
RunResult run_single(const models::ModelSpec &spec, const DataSplits &data, const TrainConfig &cfg,
                     const std::string &run_id);

struct ComparisonRow {
    std::string arm;  // "STL" or "MTL"
    models::Task task;
    Metrics metrics;
};

struct ComparisonReport {
    std::vector<ComparisonRow> rows;
    std::vector<RunResult> runs;
};

// Trains one single-task model per task and one multitask model with the
// shared config, so all four see the same data order; independent runs
// execute on up to `jobs` threads. Rows list STL then MTL, tasks in MTL order.
ComparisonReport run_comparison(const std::vector<models::ModelSpec> &stl_specs, const models::ModelSpec &mtl_spec,
                                const DataSplits &data, const TrainConfig &cfg, std::size_t jobs = 1);

}  // namespace spkr::training
