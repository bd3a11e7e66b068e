#include "speakerprof/training.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

#include "speakerprof/errors.hpp"
#include "speakerprof/optim.hpp"
#include "speakerprof/parallel.hpp"

namespace spkr::training {

using models::Task;

std::string to_string(Normalization n) { return n == Normalization::none ? "none" : "global_standardize"; }

std::string to_string(AgeLoss l) { return l == AgeLoss::mse ? "mse" : "l1"; }

Normalization parse_normalization(std::string_view token) {
    if (token == "none") return Normalization::none;
    if (token == "global_standardize") return Normalization::global_standardize;
    throw ConfigError(fmt::format("unknown normalization '{}'", token));
}

AgeLoss parse_age_loss(std::string_view token) {
    if (token == "mse") return AgeLoss::mse;
    if (token == "l1" || token == "mae") return AgeLoss::l1;
    throw ConfigError(fmt::format("unknown age loss '{}'", token));
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw ConfigError(fmt::format("learning rate {} must be finite and >= 0", learning_rate));
    loss_weights.validate();
}

std::string TrainConfig::to_text() const {
    return fmt::format(
        "epochs={}\nbatch_size={}\nlearning_rate={}\nseed={}\nloss_weights={},{},{}\npatience={}\nnormalization={}\n"
        "age_loss={}\nfeatures={}\n",
        epochs, batch_size, learning_rate, seed, loss_weights.accent, loss_weights.gender, loss_weights.age, patience,
        to_string(normalization), to_string(age_loss), features);
}

std::vector<Sample> make_samples(const std::vector<dataset::SpeakerRecord> &records, const dataset::LabelMap &speakers,
                                 const dsp::FeatureCache &cache) {
    std::unordered_map<std::string, const dsp::CacheEntry *> by_path;
    for (const auto &e : cache.entries) by_path.emplace(e.path, &e);
    std::vector<Sample> out;
    out.reserve(records.size());
    for (const auto &r : records) {
        const auto key = r.path.generic_string();
        const auto it = by_path.find(key);
        if (it == by_path.end()) throw ValidationError(fmt::format("'{}' is not in the feature cache", key));
        const auto &e = *it->second;
        Sample s;
        s.path = key;
        s.dim = e.rows;
        s.frames = e.frames;
        s.values = e.values;
        s.labels.accent = static_cast<std::size_t>(r.accent.region);
        s.labels.gender = r.gender == dataset::Gender::male ? 0 : 1;
        s.labels.speaker = speakers.index(r.speaker_id);
        s.labels.age = r.age;
        out.push_back(std::move(s));
    }
    return out;
}

PaddedBatch pad_batch(std::span<const Sample *const> items) {
    if (items.empty()) throw ShapeError("pad_batch: empty batch");
    const std::size_t dim = items.front()->dim;
    std::size_t tmax = 0;
    for (const Sample *s : items) {
        if (s->dim != dim)
            throw ShapeError(fmt::format("pad_batch: feature dims differ ({} vs {})", s->dim, dim));
        if (s->frames == 0) throw ShapeError(fmt::format("pad_batch: '{}' has no frames", s->path));
        tmax = std::max(tmax, s->frames);
    }
    std::vector<float> data(items.size() * dim * tmax, 0.0f);
    PaddedBatch out;
    for (std::size_t b = 0; b < items.size(); ++b) {
        const Sample &s = *items[b];
        for (std::size_t f = 0; f < dim; ++f)
            std::copy_n(s.values.data() + f * s.frames, s.frames, data.data() + (b * dim + f) * tmax);
        out.lengths.push_back(s.frames);
    }
    out.input = ad::Tensor::from_data({items.size(), dim, tmax}, std::move(data));
    return out;
}

PaddedBatch pad_batch(const std::vector<dsp::FeatureMatrix> &seqs) {
    std::vector<Sample> samples(seqs.size());
    std::vector<const Sample *> ptrs;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        const auto &m = seqs[i].values;
        samples[i].dim = m.rows;
        samples[i].frames = m.cols;
        samples[i].values.assign(m.data.begin(), m.data.end());
        ptrs.push_back(&samples[i]);
    }
    return pad_batch(ptrs);
}

models::Batch make_batch(const models::ModelSpec &spec, std::span<const Sample *const> items) {
    if (models::is_sequential(spec.kind)) {
        auto padded = pad_batch(items);
        return {std::move(padded.input), std::move(padded.lengths)};
    }
    if (items.empty()) throw ShapeError("make_batch: empty batch");
    const std::size_t dim = items.front()->dim;
    std::vector<float> data;
    data.reserve(items.size() * dim);
    for (const Sample *s : items) {
        if (s->frames != 1)
            throw ShapeError(fmt::format("{} needs frame-averaged features, '{}' has {} frames",
                                         models::to_string(spec.kind), s->path, s->frames));
        if (s->dim != dim) throw ShapeError(fmt::format("feature dims differ ({} vs {})", s->dim, dim));
        data.insert(data.end(), s->values.begin(), s->values.end());
    }
    return {ad::Tensor::from_data({items.size(), dim}, std::move(data)), {}};
}

Standardizer global_standardize(const std::vector<Sample> &train) {
    if (train.empty()) throw ConfigError("cannot standardize on an empty training split");
    const std::size_t dim = train.front().dim;
    Standardizer st;
    st.mean.assign(dim, 0.0);
    st.std.assign(dim, 0.0);
    std::vector<float> lo(dim, std::numeric_limits<float>::infinity());
    std::vector<float> hi(dim, -std::numeric_limits<float>::infinity());
    std::size_t count = 0;
    for (const auto &s : train) {
        if (s.dim != dim) throw ShapeError(fmt::format("feature dims differ ({} vs {})", s.dim, dim));
        for (std::size_t f = 0; f < dim; ++f)
            for (std::size_t t = 0; t < s.frames; ++t) {
                const float v = s.values[f * s.frames + t];
                st.mean[f] += v;
                lo[f] = std::min(lo[f], v);
                hi[f] = std::max(hi[f], v);
            }
        count += s.frames;
    }
    for (std::size_t f = 0; f < dim; ++f) st.mean[f] = lo[f] == hi[f] ? lo[f] : st.mean[f] / static_cast<double>(count);
    for (const auto &s : train)
        for (std::size_t f = 0; f < dim; ++f)
            for (std::size_t t = 0; t < s.frames; ++t) {
                const double d = s.values[f * s.frames + t] - st.mean[f];
                st.std[f] += d * d;
            }
    for (auto &v : st.std) v = std::max(std::sqrt(v / static_cast<double>(count)), 1e-8);
    return st;
}

void Standardizer::apply(std::vector<Sample> &samples) const {
    for (auto &s : samples) {
        if (s.dim != mean.size())
            throw ShapeError(fmt::format("standardizer fitted on {} coefficients, sample has {}", mean.size(), s.dim));
        for (std::size_t f = 0; f < s.dim; ++f)
            for (std::size_t t = 0; t < s.frames; ++t) {
                float &v = s.values[f * s.frames + t];
                v = static_cast<float>((v - mean[f]) / std[f]);
            }
    }
}

TargetScaler TargetScaler::fit(const std::vector<Sample> &train) {
    if (train.empty()) throw ConfigError("cannot fit the age scaler on an empty training split");
    TargetScaler sc;
    for (const auto &s : train) sc.mean += s.labels.age;
    sc.mean /= static_cast<double>(train.size());
    double sq = 0.0;
    for (const auto &s : train) sq += (s.labels.age - sc.mean) * (s.labels.age - sc.mean);
    sc.std = std::max(std::sqrt(sq / static_cast<double>(train.size())), 1e-8);
    return sc;
}

std::size_t label_of(const Labels &labels, Task task) {
    switch (task) {
        case Task::accent: return labels.accent;
        case Task::gender: return labels.gender;
        case Task::speaker: return labels.speaker;
        case Task::age: break;
    }
    throw ConfigError("age is not a classification label");
}

namespace {

std::vector<std::pair<Task, ad::Tensor>> task_losses(const models::ModelSpec &spec, const std::vector<ad::Tensor> &outputs,
                                                     std::span<const Sample *const> items, const TargetScaler &scaler,
                                                     AgeLoss age_loss) {
    std::vector<std::pair<Task, ad::Tensor>> losses;
    for (std::size_t k = 0; k < spec.tasks.size(); ++k) {
        const Task task = spec.tasks[k];
        if (models::is_classification(task)) {
            std::vector<std::size_t> targets;
            for (const Sample *s : items) targets.push_back(label_of(s->labels, task));
            losses.emplace_back(task, ad::softmax_cross_entropy<float>(outputs[k], targets));
        } else {
            std::vector<float> targets;
            for (const Sample *s : items) targets.push_back(static_cast<float>(scaler.forward(s->labels.age)));
            losses.emplace_back(task, age_loss == AgeLoss::mse ? ad::mse_loss<float>(outputs[k], targets)
                                                               : ad::l1_loss<float>(outputs[k], targets));
        }
    }
    return losses;
}

std::vector<std::vector<const Sample *>> make_batches(const std::vector<Sample> &set, const std::vector<std::size_t> &order,
                                                      std::size_t batch_size) {
    std::vector<std::vector<const Sample *>> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        std::vector<const Sample *> items;
        for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i) items.push_back(&set[order[i]]);
        if (items.size() == 1 && !batches.empty())
            batches.back().push_back(items.front());
        else
            batches.push_back(std::move(items));
    }
    return batches;
}

struct Snapshot {
    std::vector<std::vector<float>> params;
    std::vector<models::NamedTensor> buffers;
};

Snapshot take_snapshot(const models::Model &model) {
    Snapshot s;
    for (const auto &p : model.parameters()) s.params.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    s.buffers = model.buffers();
    return s;
}

void restore(models::Model &model, const Snapshot &s) {
    for (std::size_t i = 0; i < s.params.size(); ++i) {
        auto t = model.parameters()[i].tensor;
        std::copy(s.params[i].begin(), s.params[i].end(), t.mutable_data().begin());
    }
    for (const auto &b : s.buffers)
        model.set_buffer(b.name, std::vector<float>(b.tensor.data().begin(), b.tensor.data().end()));
}

// Mean per-task losses over a split in eval mode, plus their weighted sum.
std::pair<double, std::vector<std::pair<Task, double>>> split_loss(models::Model &model, const std::vector<Sample> &set,
                                                                   const TrainConfig &cfg, const TargetScaler &scaler) {
    ad::NoGradGuard no_grad;
    const auto &spec = model.spec();
    std::vector<double> sums(spec.tasks.size(), 0.0);
    std::vector<std::size_t> order(set.size());
    std::iota(order.begin(), order.end(), 0);
    for (const auto &items : make_batches(set, order, cfg.batch_size)) {
        const auto outputs = model.forward(make_batch(spec, items), false);
        const auto losses = task_losses(spec, outputs, items, scaler, cfg.age_loss);
        for (std::size_t k = 0; k < losses.size(); ++k)
            sums[k] += static_cast<double>(losses[k].second.item()) * static_cast<double>(items.size());
    }
    std::vector<std::pair<Task, double>> per_task;
    double total = 0.0;
    for (std::size_t k = 0; k < spec.tasks.size(); ++k) {
        const double mean = sums[k] / static_cast<double>(set.size());
        per_task.emplace_back(spec.tasks[k], mean);
        total += models::is_multitask(spec.kind) ? cfg.loss_weights.weight(spec.tasks[k]) * mean : mean;
    }
    return {total, per_task};
}

}  // namespace

History train(models::Model &model, const std::vector<Sample> &train_set, const std::vector<Sample> &val_set,
              const TrainConfig &cfg, const TargetScaler &age_scaler, const std::string &run_id) {
    cfg.validate();
    if (train_set.empty()) throw ConfigError(fmt::format("run '{}': training split is empty", run_id));
    if (val_set.empty()) throw ConfigError(fmt::format("run '{}': validation split is empty", run_id));
    const auto &spec = model.spec();
    const bool multitask = models::is_multitask(spec.kind);
    if (multitask)
        for (auto t : spec.tasks)
            if (cfg.loss_weights.weight(t) == 0.0) model.freeze_head(t);

    ad::Adam<float> adam(model.parameter_tensors(), {.learning_rate = cfg.learning_rate});
    Rng order_rng(derive_seed(cfg.seed, "shuffle"));
    std::vector<std::size_t> order(train_set.size());

    History history;
    history.run_id = run_id;
    double best = std::numeric_limits<double>::infinity();
    Snapshot best_state = take_snapshot(model);
    std::size_t since_best = 0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        order_rng.shuffle(order.begin(), order.end());
        double sum = 0.0;
        std::size_t batch_no = 0;
        for (const auto &items : make_batches(train_set, order, cfg.batch_size)) {
            ++batch_no;
            const auto outputs = model.forward(make_batch(spec, items), true);
            const auto losses = task_losses(spec, outputs, items, age_scaler, cfg.age_loss);
            for (const auto &[task, loss] : losses)
                if (!std::isfinite(loss.item()))
                    throw NumericError(fmt::format("run '{}': non-finite {} loss ({}) at epoch {}, batch {} "
                                                   "(batch size {}, learning rate {})",
                                                   run_id, models::to_string(task), loss.item(), epoch, batch_no,
                                                   items.size(), cfg.learning_rate));
            const ad::Tensor loss = multitask ? models::combined_loss(losses, cfg.loss_weights) : losses.front().second;
            ad::backward(loss);
            adam.step();
            adam.zero_grad();
            sum += static_cast<double>(loss.item()) * static_cast<double>(items.size());
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = sum / static_cast<double>(train_set.size());
        std::tie(rec.val_loss, rec.val_task_losses) = split_loss(model, val_set, cfg, age_scaler);
        if (!std::isfinite(rec.val_loss))
            throw NumericError(fmt::format("run '{}': non-finite validation loss at epoch {}", run_id, epoch));
        history.epochs.push_back(rec);
        if (rec.val_loss < best) {
            best = rec.val_loss;
            history.best_epoch = epoch;
            best_state = take_snapshot(model);
            since_best = 0;
        } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
            history.early_stopped = true;
            break;
        }
    }
    restore(model, best_state);
    return history;
}

Predictions predict(models::Model &model, const std::vector<Sample> &samples, const TargetScaler &age_scaler,
                    std::size_t batch_size) {
    ad::NoGradGuard no_grad;
    const auto &spec = model.spec();
    Predictions out;
    for (std::size_t start = 0; start < samples.size(); start += batch_size) {
        std::vector<const Sample *> items;
        for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) items.push_back(&samples[i]);
        const auto outputs = model.forward(make_batch(spec, items), false);
        for (std::size_t k = 0; k < spec.tasks.size(); ++k) {
            const auto &o = outputs[k];
            if (spec.tasks[k] == Task::age) {
                for (float z : o.data()) out.age.push_back(age_scaler.inverse(z));
                continue;
            }
            auto &dst = out.classes[spec.tasks[k]];
            const std::size_t width = o.dim(1);
            for (std::size_t b = 0; b < o.dim(0); ++b) {
                const auto row = o.data().subspan(b * width, width);
                dst.push_back(static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()));
            }
        }
    }
    return out;
}

Metrics classification_metrics(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                               std::size_t n_classes) {
    if (truth.size() != predicted.size())
        throw ShapeError(fmt::format("{} labels against {} predictions", truth.size(), predicted.size()));
    Metrics m;
    m.count = truth.size();
    m.confusion.assign(n_classes, std::vector<std::size_t>(n_classes, 0));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] >= n_classes || predicted[i] >= n_classes)
            throw ValidationError(fmt::format("class index outside [0, {})", n_classes));
        ++m.confusion[truth[i]][predicted[i]];
        correct += truth[i] == predicted[i];
    }
    m.accuracy = m.count ? static_cast<double>(correct) / static_cast<double>(m.count) : 0.0;
    std::size_t included = 0;
    for (std::size_t c = 0; c < n_classes; ++c) {
        std::size_t support = 0, predicted_c = 0;
        for (std::size_t j = 0; j < n_classes; ++j) {
            support += m.confusion[c][j];
            predicted_c += m.confusion[j][c];
        }
        if (support == 0 && predicted_c == 0) {
            m.excluded_classes.push_back(c);
            continue;
        }
        const double tp = static_cast<double>(m.confusion[c][c]);
        const double p = predicted_c ? tp / static_cast<double>(predicted_c) : 0.0;
        const double r = support ? tp / static_cast<double>(support) : 0.0;
        m.precision += p;
        m.recall += r;
        m.f1 += p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
        ++included;
    }
    if (included) {
        m.precision /= static_cast<double>(included);
        m.recall /= static_cast<double>(included);
        m.f1 /= static_cast<double>(included);
    }
    return m;
}

Metrics regression_metrics(std::span<const double> truth, std::span<const double> predicted) {
    if (truth.size() != predicted.size())
        throw ShapeError(fmt::format("{} targets against {} predictions", truth.size(), predicted.size()));
    Metrics m;
    m.regression = true;
    m.count = truth.size();
    if (m.count == 0) return m;
    double abs_sum = 0.0, sq_sum = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double e = predicted[i] - truth[i];
        abs_sum += std::abs(e);
        sq_sum += e * e;
    }
    m.mae = abs_sum / static_cast<double>(m.count);
    m.rmse = std::sqrt(sq_sum / static_cast<double>(m.count));
    return m;
}

Metrics task_metrics(const models::ModelSpec &spec, const Predictions &predictions, const std::vector<Sample> &split,
                     Task task) {
    if (task == Task::age) {
        std::vector<double> truth;
        for (const auto &s : split) truth.push_back(s.labels.age);
        return regression_metrics(truth, predictions.age);
    }
    const auto it = predictions.classes.find(task);
    if (it == predictions.classes.end())
        throw ConfigError(fmt::format("model has no '{}' output", models::to_string(task)));
    std::vector<std::size_t> truth;
    for (const auto &s : split) truth.push_back(label_of(s.labels, task));
    return classification_metrics(truth, it->second, spec.head_width(task));
}

Metrics evaluate_classification(models::Model &model, const std::vector<Sample> &split, Task task) {
    if (!models::is_classification(task)) throw ConfigError("evaluate_classification needs a classification task");
    return task_metrics(model.spec(), predict(model, split, TargetScaler{}), split, task);
}

Metrics evaluate_regression(models::Model &model, const std::vector<Sample> &split, const TargetScaler &age_scaler) {
    return task_metrics(model.spec(), predict(model, split, age_scaler), split, Task::age);
}

RunResult run_single(const models::ModelSpec &spec, const DataSplits &data, const TrainConfig &cfg,
                     const std::string &run_id) {
    if (data.test.empty()) throw ConfigError(fmt::format("run '{}': test split is empty", run_id));
    RunResult result;
    result.run_id = run_id;
    result.spec = spec;
    result.model = std::make_shared<models::Model>(spec);
    result.history = train(*result.model, data.train, data.val, cfg, data.age_scaler, run_id);
    const auto predictions = predict(*result.model, data.test, data.age_scaler);
    for (auto t : spec.tasks) result.test_metrics.emplace_back(t, task_metrics(spec, predictions, data.test, t));
    return result;
}

ComparisonReport run_comparison(const std::vector<models::ModelSpec> &stl_specs, const models::ModelSpec &mtl_spec,
                                const DataSplits &data, const TrainConfig &cfg, std::size_t jobs) {
    if (!models::is_multitask(mtl_spec.kind)) throw ConfigError("comparison needs a multitask spec for the MTL arm");
    for (auto t : mtl_spec.tasks) {
        const auto n = std::count_if(stl_specs.begin(), stl_specs.end(),
                                     [&](const models::ModelSpec &s) { return s.tasks == std::vector<Task>{t}; });
        if (n != 1) throw ConfigError(fmt::format("comparison needs exactly one STL spec for '{}'", models::to_string(t)));
    }
    ComparisonReport report;
    report.runs.resize(stl_specs.size() + 1);
    parallel_for(report.runs.size(), jobs, [&](std::size_t i) {
        if (i < stl_specs.size())
            report.runs[i] = run_single(stl_specs[i], data, cfg, "stl_" + models::to_string(stl_specs[i].tasks.front()));
        else
            report.runs[i] = run_single(mtl_spec, data, cfg, "mtl");
    });
    for (auto t : mtl_spec.tasks)
        for (const auto &run : report.runs)
            if (!models::is_multitask(run.spec.kind) && run.spec.tasks.front() == t)
                report.rows.push_back({"STL", t, run.test_metrics.front().second});
    for (const auto &[t, m] : report.runs.back().test_metrics) report.rows.push_back({"MTL", t, m});
    return report;
}

}  // namespace spkr::training
