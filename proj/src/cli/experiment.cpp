#include "speakerprof/experiment.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <fstream>
#include <map>
#include <sstream>

#include "speakerprof/balance.hpp"
#include "speakerprof/checkpoint.hpp"
#include "speakerprof/errors.hpp"
#include "speakerprof/rng.hpp"

namespace spkr::cli {

using models::ModelSpec;
using models::Task;

namespace {

constexpr const char *kReportedNote = "reported in paper, requires licensed TIMIT to attempt";

training::TrainConfig profiling_config(const std::string &features) {
    training::TrainConfig c;
    c.epochs = 60;
    c.batch_size = 32;
    c.learning_rate = 1e-3;
    c.patience = 10;
    c.features = features;
    return c;
}

training::TrainConfig speaker_id_config(const std::string &features) {
    training::TrainConfig c = profiling_config(features);
    c.epochs = 100;
    c.patience = 0;
    return c;
}

std::size_t dim_of(const std::string &features) {
    return dsp::feature_dim(dsp::parse_feature_set(features), dsp::FeatureConfig{});
}

ModelSpec profiling_mlp(const std::string &features, Task task) {
    ModelSpec s = models::mlp_spec(dim_of(features), task);
    s.dropout = 0.2;
    return s;
}

ModelSpec speaker_mlp(const std::string &features) {
    ModelSpec s = models::mlp_spec(dim_of(features), Task::speaker);
    s.hidden = {256, 256, 128, 64};
    s.dropout = 0.2;
    s.speaker_count = 629;
    return s;
}

ModelSpec speaker_lstm(const std::string &features) {
    ModelSpec s = models::lstm_spec(dim_of(features), Task::speaker);
    s.speaker_count = 629;
    return s;
}

ExperimentPreset single(std::string name, std::string table, std::string description, const std::string &features,
                        bool averaged, ModelSpec spec, std::vector<ReportedValue> reported) {
    ExperimentPreset p;
    p.name = std::move(name);
    p.table = std::move(table);
    p.description = std::move(description);
    p.features = dsp::parse_feature_set(features);
    p.averaged = averaged;
    p.model = std::move(spec);
    p.train = profiling_config(features);
    p.reported = std::move(reported);
    return p;
}

std::vector<ReportedValue> cls(const std::string &task, double acc, double prec, double rec) {
    return {{task, "accuracy", acc}, {task, "precision", prec}, {task, "recall", rec}};
}

ExperimentPreset comparison(std::string name, std::string table, const std::string &features,
                            std::vector<ReportedValue> reported) {
    ExperimentPreset p;
    p.name = std::move(name);
    p.table = std::move(table);
    p.description = "STL vs MTL 3-layer MLP on frame-averaged " + features;
    p.features = dsp::parse_feature_set(features);
    p.averaged = true;
    p.model = models::multitask_mlp_spec(dim_of(features));
    for (auto t : p.model.tasks) {
        ModelSpec s = p.model;
        s.kind = models::ModelKind::mlp;
        s.tasks = {t};
        p.stl.push_back(s);
    }
    p.train = profiling_config(features);
    p.reported = std::move(reported);
    return p;
}

std::vector<ExperimentPreset> build_presets() {
    std::vector<ExperimentPreset> out;
    const std::map<int, std::array<double, 3>> t1{{13, {0.941, 0.941, 0.941}}, {30, {0.986, 0.986, 0.986}},
                                                  {40, {0.986, 0.986, 0.986}}};
    for (const auto &[n, v] : t1) {
        const std::string f = fmt::format("mfcc:{}", n);
        out.push_back(single(fmt::format("table1_gender_mfcc{}", n), fmt::format("Table 1, MFCC {}", n),
                             "gender, 3-layer MLP on frame-averaged MFCC", f, true, profiling_mlp(f, Task::gender),
                             cls("gender", v[0], v[1], v[2])));
    }

    {
        ModelSpec cnn = models::cnn_spec(30, Task::accent);
        out.push_back(single("table2_accent_cnn_mfcc30", "Table 2, Sequential MFCC(30)-CNN",
                             "accent, 2-layer CNN on sequential MFCC", "mfcc:30", false, cnn,
                             cls("accent", 0.10, 0.13, 0.11)));
        ModelSpec lstm = models::lstm_spec(40, Task::accent);
        out.push_back(single("table2_accent_lstm_mfcc40", "Table 2, Sequential MFCC(40)-LSTM",
                             "accent, 2-layer LSTM on sequential MFCC", "mfcc:40", false, lstm,
                             cls("accent", 0.16, 0.18, 0.16)));
        out.push_back(single("table2_accent_mlp_mfcc40", "Table 2, MFCC(40)-MLP",
                             "accent, 3-layer MLP on frame-averaged MFCC", "mfcc:40", true,
                             profiling_mlp("mfcc:40", Task::accent), cls("accent", 0.18, 0.16, 0.18)));
        out.push_back(single("table2_accent_mlp_five", "Table 2, Five Types Features-MLP",
                             "accent, 3-layer MLP on frame-averaged MFCC+Mel+Chroma+Tonnetz+Contrast", "five", true,
                             profiling_mlp("five", Task::accent), cls("accent", 0.21, 0.16, 0.21)));
    }

    out.push_back(single("table3_age_mlp", "Table 3, MFCC(40)-MLP", "age, 3-layer MLP on frame-averaged MFCC",
                         "mfcc:40", true, profiling_mlp("mfcc:40", Task::age),
                         {{"age", "mae", 6.16}, {"age", "rmse", 10.82}}));
    out.push_back(single("table3_age_lstm", "Table 3, sequential MFCC(30)-LSTM", "age, 2-layer LSTM on sequential MFCC",
                         "mfcc:30", false, models::lstm_spec(30, Task::age),
                         {{"age", "mae", 6.02}, {"age", "rmse", 10.26}}));
    out.push_back(single("table3_age_cnn", "Table 3, sequential MFCC(30)-CNN", "age, 2-layer CNN on sequential MFCC",
                         "mfcc:30", false, models::cnn_spec(30, Task::age),
                         {{"age", "mae", 5.53}, {"age", "rmse", 9.24}}));

    struct T4 {
        int n;
        double mae;
        std::array<double, 3> gender, accent;
    };
    for (const T4 &r : {T4{13, 6.03, {0.98, 0.98, 0.94}, {0.14, 0.14, 0.14}},
                        T4{25, 5.97, {0.98, 0.99, 0.96}, {0.15, 0.14, 0.14}},
                        T4{40, 6.08, {0.99, 0.99, 0.96}, {0.11, 0.11, 0.11}}}) {
        auto reported = cls("gender", r.gender[0], r.gender[1], r.gender[2]);
        for (auto &v : cls("accent", r.accent[0], r.accent[1], r.accent[2])) reported.push_back(v);
        reported.push_back({"age", "mae", r.mae});
        const std::string f = fmt::format("mfcc:{}", r.n);
        out.push_back(single(fmt::format("table4_mtl_cnnlstm_mfcc{}", r.n), fmt::format("Table 4, MFCC {}", r.n),
                             "accent+gender+age, MultiTask CNN+LSTM on sequential MFCC", f, false,
                             models::multitask_cnn_lstm_spec(static_cast<std::size_t>(r.n)), reported));
    }

    {
        std::vector<ReportedValue> t5;
        for (auto &v : cls("mtl/accent", 0.13, 0.14, 0.13)) t5.push_back(v);
        for (auto &v : cls("mtl/gender", 0.97, 0.97, 0.97)) t5.push_back(v);
        t5.push_back({"mtl/age", "mae", 7.71});
        for (auto &v : cls("stl/accent", 0.16, 0.16, 0.16)) t5.push_back(v);
        for (auto &v : cls("stl/gender", 0.98, 0.98, 0.98)) t5.push_back(v);
        t5.push_back({"stl/age", "mae", 6.66});
        out.push_back(comparison("table5_stl_vs_mtl_mfcc_mel", "Table 5, STL vs MTL with MFCC+Mel", "mfcc:40,mel:64", t5));

        std::vector<ReportedValue> t6;
        for (auto &v : cls("mtl/accent", 0.12, 0.15, 0.12)) t6.push_back(v);
        for (auto &v : cls("mtl/gender", 0.97, 0.97, 0.97)) t6.push_back(v);
        t6.push_back({"mtl/age", "mae", 6.17});
        for (auto &v : cls("stl/accent", 0.15, 0.21, 0.15)) t6.push_back(v);
        for (auto &v : cls("stl/gender", 0.99, 0.99, 0.99)) t6.push_back(v);
        t6.push_back({"stl/age", "mae", 6.18});
        out.push_back(comparison("table6_stl_vs_mtl_five", "Table 6, STL vs MTL with five types of features", "five", t6));
    }

    struct T7 {
        std::string suffix, features, label;
        std::array<double, 3> mlp, lstm;  // f1, precision, recall
    };
    for (const T7 &r : {T7{"mfcc40", "mfcc:40", "MFCC(40)", {0.75, 0.83, 0.79}, {0.76, 0.86, 0.80}},
                        T7{"mfcc_mel", "mfcc:40,mel:64", "MFCC(40)+Mel(64)", {0.80, 0.89, 0.84}, {0.83, 0.91, 0.86}},
                        T7{"five", "five", "five types features", {0.80, 0.88, 0.84}, {0.83, 0.91, 0.86}}}) {
        for (const bool lstm : {false, true}) {
            const auto &v = lstm ? r.lstm : r.mlp;
            ExperimentPreset p = single(
                fmt::format("table7_speakerid_{}_{}", lstm ? "lstm" : "mlp", r.suffix),
                fmt::format("Table 7, {} {}", r.label, lstm ? "LSTM" : "MLP"),
                lstm ? "speaker ID, 2-layer LSTM over frame-averaged features (one time step)"
                     : "speaker ID, 4-layer MLP on frame-averaged features",
                r.features, true, lstm ? speaker_lstm(r.features) : speaker_mlp(r.features),
                {{"speaker", "f1_macro", v[0]}, {"speaker", "precision", v[1]}, {"speaker", "recall", v[2]}});
            p.split = SplitProtocol::speaker_id;
            p.oversample = false;
            p.train = speaker_id_config(r.features);
            out.push_back(std::move(p));
        }
    }
    return out;
}

std::string join_doubles(const std::vector<double> &v) {
    std::vector<std::string> parts;
    for (double d : v) parts.push_back(fmt::format("{:.17g}", d));
    return fmt::format("{}", fmt::join(parts, ","));
}

std::vector<double> split_doubles(const std::string &text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(std::stod(item));
    return out;
}

void write_text(const std::filesystem::path &path, const std::string &text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(fmt::format("cannot write '{}'", path.string()));
    f << text;
    if (!f) throw IoError(fmt::format("short write to '{}'", path.string()));
}

std::string feature_config_text(const dsp::FeatureConfig &c) {
    return fmt::format("n_fft={}\nhop_length={}\nwin_length={}\nsample_rate={}\nn_mels={}\nn_mfcc={}\nfmin={}\nfmax={}\n",
                       c.n_fft, c.hop_length, c.win_length, c.sample_rate, c.n_mels, c.n_mfcc, c.fmin, c.fmax);
}

}  // namespace

std::string to_string(SplitProtocol p) { return p == SplitProtocol::speaker_id ? "speaker_id" : "profiling"; }

SplitProtocol parse_split_protocol(std::string_view token) {
    if (token == "profiling") return SplitProtocol::profiling;
    if (token == "speaker_id") return SplitProtocol::speaker_id;
    throw ConfigError(fmt::format("unknown split protocol '{}' (expected profiling or speaker_id)", token));
}

std::string ExperimentPreset::provenance() const {
    std::vector<std::string> parts;
    for (const auto &r : reported) parts.push_back(fmt::format("{} {} {}", r.task, r.metric, r.value));
    return fmt::format("{}: {} ({})", table, fmt::join(parts, ", "), kReportedNote);
}

const std::vector<ExperimentPreset> &presets() {
    static const std::vector<ExperimentPreset> all = build_presets();
    return all;
}

const ExperimentPreset &find_preset(const std::string &name) {
    for (const auto &p : presets())
        if (p.name == name) return p;
    std::vector<std::string> names;
    for (const auto &p : presets()) names.push_back(p.name);
    throw ConfigError(fmt::format("unknown preset '{}'; known presets: {}", name, fmt::join(names, ", ")));
}

std::string preset_listing() {
    std::string out;
    for (const auto &p : presets()) out += fmt::format("  {:<32} {}\n", p.name, p.provenance());
    return out;
}

dataset::Manifest load_data_root(const std::filesystem::path &root, std::size_t jobs) {
    namespace fs = std::filesystem;
    if (root.empty())
        throw ConfigError(fmt::format("no data root given (pass --data-root or set {})", kDataRootEnv));
    if (!fs::exists(root)) throw ConfigError(fmt::format("data root '{}' does not exist", root.string()));
    if (fs::is_regular_file(root)) return dataset::parse_manifest(root);
    if (fs::exists(root / "manifest.csv")) return dataset::parse_manifest(root / "manifest.csv");
    const auto meta = root / "speakers.csv";
    if (!fs::exists(meta))
        throw ConfigError(fmt::format("data root '{}' has neither manifest.csv nor speakers.csv", root.string()));
    auto scan = dataset::scan_timit_layout(root, meta, jobs);
    if (scan.manifest.size() == 0) throw ConfigError(fmt::format("no decodable audio under '{}'", root.string()));
    return std::move(scan.manifest);
}

dsp::FeatureCache load_or_extract(const std::filesystem::path &path, const dataset::Manifest &manifest,
                                  const dsp::FeatureSet &set, const dsp::FeatureConfig &cfg, bool averaged,
                                  std::size_t jobs, bool *hit, bool reuse) {
    const dsp::CacheHeader expected{set, cfg, averaged, dsp::feature_dim(set, cfg), dsp::source_hash(manifest.records())};
    if (reuse && std::filesystem::exists(path)) {
        try {
            if (dsp::read_cache_header(path) == expected) {
                if (hit) *hit = true;
                return dsp::read_feature_cache(path);
            }
        } catch (const DecodeError &) {
            // Stale or foreign file: fall through and rebuild it.
        }
    }
    if (hit) *hit = false;
    auto cache = dsp::extract_records(manifest.records(), set, cfg, averaged, jobs);
    dsp::write_feature_cache(path, cache);
    return cache;
}

dataset::Manifest split_manifest(const dataset::Manifest &manifest, SplitProtocol protocol, std::uint64_t seed) {
    return protocol == SplitProtocol::speaker_id ? dataset::split_for_speaker_id(manifest, dataset::SplitRatios{}, seed)
                                                 : dataset::split_profiling(manifest, 0.1, seed);
}

PreparedData prepare_data(const dataset::Manifest &manifest, const dsp::FeatureCache &cache, SplitProtocol protocol,
                          bool oversample, training::Normalization normalization, std::uint64_t seed) {
    const dataset::Manifest split = split_manifest(manifest, protocol, seed);
    const auto train_records = split.filter(dataset::Split::train);
    const auto val_records = split.filter(dataset::Split::val);
    const auto test_records = split.filter(dataset::Split::test);
    if (train_records.empty() || val_records.empty() || test_records.empty())
        throw ConfigError(fmt::format("split sizes train {} / val {} / test {}: every split needs records",
                                      train_records.size(), val_records.size(), test_records.size()));

    PreparedData data;
    data.speakers = split.speakers();
    data.train_records_before_oversampling = train_records.size();
    const auto base = training::make_samples(train_records, data.speakers, cache);
    data.splits.age_scaler = training::TargetScaler::fit(base);
    if (normalization == training::Normalization::global_standardize) data.standardizer = training::global_standardize(base);

    data.splits.train =
        oversample ? training::make_samples(dataset::oversample_balanced(train_records, derive_seed(seed, "oversample")),
                                            data.speakers, cache)
                   : base;
    data.splits.val = training::make_samples(val_records, data.speakers, cache);
    data.splits.test = training::make_samples(test_records, data.speakers, cache);
    if (!data.standardizer.mean.empty()) {
        data.standardizer.apply(data.splits.train);
        data.standardizer.apply(data.splits.val);
        data.standardizer.apply(data.splits.test);
    }
    return data;
}

std::string checkpoint_metadata(const dsp::FeatureSet &set, const dsp::FeatureConfig &cfg, bool averaged,
                                const PreparedData &data, const training::TrainConfig &train, SplitProtocol protocol) {
    std::string out = fmt::format("features={}\naveraged={}\n", dsp::format_feature_set(set), averaged ? 1 : 0);
    out += feature_config_text(cfg);
    out += fmt::format("normalization={}\nnorm_mean={}\nnorm_std={}\nage_mean={:.17g}\nage_std={:.17g}\nspeakers={}\n",
                       training::to_string(train.normalization), join_doubles(data.standardizer.mean),
                       join_doubles(data.standardizer.std), data.splits.age_scaler.mean, data.splits.age_scaler.std,
                       fmt::join(data.speakers.labels(), ","));
    out += fmt::format("split_protocol={}\nseed={}\n", to_string(protocol), train.seed);
    return out;
}

CheckpointMeta parse_checkpoint_metadata(const std::string &text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto get = [&](const std::string &key) {
        const auto it = kv.find(key);
        if (it == kv.end()) throw DecodeError(fmt::format("checkpoint metadata lacks '{}'", key));
        return it->second;
    };
    CheckpointMeta m;
    try {
        m.features = dsp::parse_feature_set(get("features"));
        m.averaged = get("averaged") == "1";
        m.config.n_fft = std::stoi(get("n_fft"));
        m.config.hop_length = std::stoi(get("hop_length"));
        m.config.win_length = std::stoi(get("win_length"));
        m.config.sample_rate = std::stoi(get("sample_rate"));
        m.config.n_mels = std::stoi(get("n_mels"));
        m.config.n_mfcc = std::stoi(get("n_mfcc"));
        m.config.fmin = std::stod(get("fmin"));
        m.config.fmax = std::stod(get("fmax"));
        m.normalization = training::parse_normalization(get("normalization"));
        m.standardizer.mean = split_doubles(get("norm_mean"));
        m.standardizer.std = split_doubles(get("norm_std"));
        m.age_scaler.mean = std::stod(get("age_mean"));
        m.age_scaler.std = std::stod(get("age_std"));
        std::stringstream ss(get("speakers"));
        std::string id;
        while (std::getline(ss, id, ','))
            if (!id.empty()) m.speakers.add(id);
        m.split = parse_split_protocol(get("split_protocol"));
        m.seed = std::stoull(get("seed"));
    } catch (const std::logic_error &) {
        throw DecodeError("malformed checkpoint metadata");
    } catch (const ConfigError &e) {
        throw DecodeError(fmt::format("malformed checkpoint metadata: {}", e.what()));
    }
    if (m.standardizer.mean.size() != m.standardizer.std.size())
        throw DecodeError("checkpoint standardizer mean and std differ in length");
    return m;
}

dsp::FeatureConfig resolved_feature_config(const ExperimentOptions &options) {
    dsp::FeatureConfig cfg;
    if (options.hop_length) cfg.hop_length = *options.hop_length;
    if (options.n_fft) {
        cfg.n_fft = *options.n_fft;
        cfg.win_length = std::min(cfg.win_length, cfg.n_fft);
    }
    cfg.validate();
    return cfg;
}

training::TrainConfig resolved_train_config(const ExperimentPreset &preset, const ExperimentOptions &options) {
    training::TrainConfig c = preset.train;
    if (options.epochs) c.epochs = *options.epochs;
    if (options.batch_size) c.batch_size = *options.batch_size;
    if (options.learning_rate) c.learning_rate = *options.learning_rate;
    if (options.seed) c.seed = *options.seed;
    if (options.loss_weights) c.loss_weights = *options.loss_weights;
    if (options.patience) c.patience = *options.patience;
    c.validate();
    return c;
}

ExperimentResult run_experiment(const ExperimentPreset &preset, const ExperimentOptions &options) {
    namespace fs = std::filesystem;
    if (options.out_dir.empty()) throw ConfigError("no output directory given");
    const auto fcfg = resolved_feature_config(options);
    const auto tcfg = resolved_train_config(preset, options);
    const auto manifest = load_data_root(options.data_root, options.jobs);

    fs::create_directories(options.out_dir);
    const std::string key = fmt::format("{}|{}|{}", dsp::format_feature_set(preset.features), preset.averaged,
                                        feature_config_text(fcfg));
    const auto cache_path = options.out_dir / fmt::format("features_{:016x}.bin", fnv1a(key));
    bool hit = false;
    const auto cache = load_or_extract(cache_path, manifest, preset.features, fcfg, preset.averaged, options.jobs, &hit,
                                       options.reuse_cache);
    if (!options.quiet)
        fmt::print(stderr, "{}: {} feature cache {}\n", preset.name, hit ? "reusing" : "wrote", cache_path.string());

    const auto data = prepare_data(manifest, cache, preset.split, preset.oversample, tcfg.normalization, tcfg.seed);
    auto resolve = [&](ModelSpec s) {
        s.input_dim = cache.header.dim;
        if (std::find(s.tasks.begin(), s.tasks.end(), Task::speaker) != s.tasks.end())
            s.speaker_count = data.speakers.size();
        return s;
    };

    const fs::path bundle = options.out_dir / preset.name;
    fs::create_directories(bundle);
    std::vector<training::RunResult> runs;
    ExperimentResult result;
    result.bundle = bundle;
    if (preset.is_comparison()) {
        std::vector<ModelSpec> stl;
        for (const auto &s : preset.stl) stl.push_back(resolve(s));
        auto report = training::run_comparison(stl, resolve(preset.model), data.splits, tcfg, options.jobs);
        for (const auto &row : report.rows) result.rows.push_back({row.arm, row.task, row.metrics});
        runs = std::move(report.runs);
    } else {
        runs.push_back(training::run_single(resolve(preset.model), data.splits, tcfg, "model"));
        for (const auto &[task, m] : runs.front().test_metrics) result.rows.push_back({preset.name, task, m});
    }

    std::string config = fmt::format("preset={}\ntable={}\ndescription={}\nprovenance={}\n", preset.name, preset.table,
                                     preset.description, preset.provenance());
    config += fmt::format("features={}\naveraged={}\n", dsp::format_feature_set(preset.features), preset.averaged ? 1 : 0);
    config += feature_config_text(fcfg);
    config += fmt::format("split_protocol={}\noversample={}\n",
                          to_string(preset.split), preset.oversample ? 1 : 0);
    config += fmt::format("records_train={}\nrecords_train_before_oversampling={}\nrecords_val={}\nrecords_test={}\n",
                          data.splits.train.size(), data.train_records_before_oversampling, data.splits.val.size(),
                          data.splits.test.size());
    config += tcfg.to_text();
    config += "note=age targets are z-scored with training-split statistics; age metrics are in years\n";
    config += "note=precision, recall and f1 are macro averages\n";
    std::string history, metrics;
    for (const auto &run : runs) {
        config += fmt::format("[model {}]\n{}", run.run_id, run.spec.to_text());
        history += training::history_jsonl(run.history);
        for (const auto &[task, m] : run.test_metrics) metrics += training::metrics_jsonl(run.run_id, "test", task, m);
        models::write_checkpoint(bundle / (run.run_id + ".ckpt"), *run.model,
                                 checkpoint_metadata(preset.features, fcfg, preset.averaged, data, tcfg, preset.split));
    }
    write_text(bundle / "config.txt", config);
    write_text(bundle / "history.jsonl", history);
    write_text(bundle / "metrics.jsonl", metrics);
    write_text(bundle / "summary.txt", fmt::format("{}\n{}\n", preset.provenance(), training::summary_text(result.rows)));
    write_text(bundle / "summary.csv", training::summary_csv(result.rows));
    return result;
}

}  // namespace spkr::cli
