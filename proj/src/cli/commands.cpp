#include "speakerprof/cli.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <CLI11.hpp>
#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "speakerprof/checkpoint.hpp"
#include "speakerprof/errors.hpp"
#include "speakerprof/experiment.hpp"
#include "speakerprof/synthetic.hpp"

namespace spkr::cli {

namespace fs = std::filesystem;

namespace {

template <class T>
T parse_value(const std::string &key, const std::string &text) {
    if constexpr (std::is_same_v<T, std::string>) {
        return text;
    } else if constexpr (std::is_same_v<T, fs::path>) {
        return fs::path(text);
    } else if constexpr (std::is_same_v<T, bool>) {
        if (text == "1" || text == "true" || text == "yes" || text == "on") return true;
        if (text == "0" || text == "false" || text == "no" || text == "off") return false;
        throw ConfigError(fmt::format("config key '{}': '{}' is not a boolean", key, text));
    } else {
        T value{};
        const auto *end = text.data() + text.size();
        const auto [ptr, ec] = std::from_chars(text.data(), end, value);
        if (ec != std::errc() || ptr != end)
            throw ConfigError(fmt::format("config key '{}': cannot parse '{}'", key, text));
        return value;
    }
}

// Flags registered on a subcommand, also settable from a key=value config
// file whose keys are the flag names without the leading dashes.
class Options {
   public:
    explicit Options(CLI::App *app) : app_(app) {
        app_->add_option("--config", config_, "key=value file; its entries override flags");
    }

    template <class T>
    CLI::Option *option(const std::string &flag, T &target, const std::string &help) {
        register_key(flag, [&target, key = key_of(flag)](const std::string &v) { target = parse_value<T>(key, v); });
        return app_->add_option(flag, target, help);
    }

    CLI::Option *flag(const std::string &flag, bool &target, bool value, const std::string &help) {
        register_key(flag, [&target, value, key = key_of(flag)](const std::string &v) {
            target = parse_value<bool>(key, v) ? value : !value;
        });
        return app_->add_flag_callback(flag, [&target, value] { target = value; }, help);
    }

    bool given(const std::string &flag) const {
        return app_->count(flag) > 0 || from_config_.contains(key_of(flag));
    }

    // Applies the config file, if any, on top of the parsed flags.
    void apply_config() {
        if (config_.empty()) return;
        std::ifstream in(config_);
        if (!in) throw ConfigError(fmt::format("cannot open config file '{}'", config_.string()));
        std::string line;
        std::size_t n = 0;
        while (std::getline(in, line)) {
            ++n;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(fmt::format("{}:{}: expected key=value", config_.string(), n));
            auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t\r");
                const auto e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            };
            std::string key = trim(line.substr(0, eq));
            std::replace(key.begin(), key.end(), '_', '-');
            const auto it = setters_.find(key);
            if (it == setters_.end()) {
                std::vector<std::string> keys;
                for (const auto &[k, _] : setters_) keys.push_back(k);
                throw ConfigError(fmt::format("{}:{}: unknown key '{}' for '{}'; known keys: {}", config_.string(), n,
                                              key, app_->get_name(), fmt::join(keys, ", ")));
            }
            it->second(trim(line.substr(eq + 1)));
            from_config_.insert(key);
        }
    }

   private:
    static std::string key_of(const std::string &flag) {
        const auto comma = flag.find(',');
        std::string name = comma == std::string::npos ? flag : flag.substr(comma + 1);
        return name.substr(name.find_first_not_of('-'));
    }

    void register_key(const std::string &flag, std::function<void(const std::string &)> fn) {
        setters_[key_of(flag)] = std::move(fn);
    }

    CLI::App *app_;
    fs::path config_;
    std::map<std::string, std::function<void(const std::string &)>> setters_;
    std::set<std::string> from_config_;
};

std::string read_text(const fs::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot read '{}'", path.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<models::Task> parse_tasks(const std::string &text) {
    std::vector<models::Task> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(models::parse_task(item));
    return out;
}

struct IngestArgs {
    fs::path root, meta, out;
    std::size_t synthetic = 0;
    std::uint64_t seed = 7;
    std::size_t jobs = 1;
};

int cmd_ingest(const IngestArgs &a, const Options &opts, std::ostream &out, std::ostream &err) {
    if (a.synthetic > 0) {
        dataset::SyntheticConfig cfg;
        cfg.speakers = a.synthetic;
        cfg.seed = a.seed;
        const auto corpus = dataset::generate_synthetic_corpus(a.root, cfg);
        out << fmt::format("generated {} synthetic utterances under {}\n", corpus.files, a.root.string());
    }
    const fs::path meta = opts.given("--meta") ? a.meta : a.root / "speakers.csv";
    if (!fs::exists(meta))
        throw ConfigError(fmt::format("speaker metadata '{}' not found; pass --meta with a speaker_id,age file",
                                      meta.string()));
    auto scan = dataset::scan_timit_layout(a.root, meta, a.jobs);
    for (const auto &line : scan.skips.entries) err << "skipped " << line << "\n";
    for (const auto &id : scan.skips.speakers_without_meta) err << "no metadata for speaker " << id << "\n";
    if (scan.manifest.size() == 0) throw ValidationError(fmt::format("no usable audio under '{}'", a.root.string()));
    dataset::write_manifest(a.out, scan.manifest);
    out << fmt::format("wrote {} records ({} speakers, {} of {} files skipped) to {}\n", scan.manifest.size(),
                       scan.manifest.speakers().size(), scan.skips.skipped(), scan.skips.files_seen, a.out.string());
    return 0;
}

struct FeatureArgs {
    fs::path manifest, out;
    std::string kinds = "mfcc:40";
    bool averaged = true;
    int hop = 160;
    int n_fft = 512;
    bool no_cache = false;
    std::size_t jobs = 1;
};

int cmd_features(const FeatureArgs &a, std::ostream &out) {
    const auto set = dsp::parse_feature_set(a.kinds);
    dsp::FeatureConfig cfg;
    cfg.hop_length = a.hop;
    cfg.n_fft = a.n_fft;
    cfg.win_length = std::min(cfg.win_length, cfg.n_fft);
    cfg.validate();
    const auto manifest = dataset::parse_manifest(a.manifest);
    bool hit = false;
    const auto cache = load_or_extract(a.out, manifest, set, cfg, a.averaged, a.jobs, &hit, !a.no_cache);
    out << fmt::format("{} {} ({} records, {} {}-dim features)\n", hit ? "cache hit" : "wrote", a.out.string(),
                       cache.entries.size(), a.averaged ? "averaged" : "sequential", cache.header.dim);
    return 0;
}

struct TrainArgs {
    fs::path manifest, cache, model_spec, out, history;
    std::string model = "mlp";
    std::string tasks;
    std::size_t epochs = 60;
    std::size_t batch = 32;
    double lr = 1e-3;
    std::uint64_t seed = 7;
    std::string loss_weights = "1,1,1";
    std::size_t patience = 10;
    std::string split_protocol = "profiling";
    bool oversample = false;
    std::string normalization = "global_standardize";
    std::string age_loss = "mse";
    std::size_t jobs = 1;
};

models::ModelSpec default_spec(models::ModelKind kind, std::size_t dim, models::Task task) {
    using models::ModelKind;
    switch (kind) {
        case ModelKind::mlp: return models::mlp_spec(dim, task);
        case ModelKind::lstm: return models::lstm_spec(dim, task);
        case ModelKind::cnn: return models::cnn_spec(dim, task);
        case ModelKind::multitask_mlp: return models::multitask_mlp_spec(dim);
        case ModelKind::multitask_cnn_lstm: return models::multitask_cnn_lstm_spec(dim);
    }
    throw ConfigError("unknown model kind");
}

int cmd_train(const TrainArgs &a, const Options &opts, std::ostream &out) {
    const auto manifest = dataset::parse_manifest(a.manifest);
    const auto cache = dsp::read_feature_cache(a.cache);

    models::ModelSpec spec;
    if (opts.given("--model-spec")) {
        spec = models::parse_model_spec(read_text(a.model_spec));
    } else {
        const auto kind = models::parse_model_kind(a.model);
        const auto tasks = parse_tasks(a.tasks);
        spec = default_spec(kind, cache.header.dim, tasks.empty() ? models::Task::gender : tasks.front());
        if (!tasks.empty()) spec.tasks = tasks;
    }
    if (spec.input_dim != cache.header.dim)
        throw ShapeError(fmt::format("model expects {}-dim inputs but the cache holds {}-dim features", spec.input_dim,
                                     cache.header.dim));

    training::TrainConfig tc;
    tc.epochs = a.epochs;
    tc.batch_size = a.batch;
    tc.learning_rate = a.lr;
    tc.seed = a.seed;
    tc.loss_weights = models::parse_loss_weights(a.loss_weights);
    tc.patience = a.patience;
    tc.normalization = training::parse_normalization(a.normalization);
    tc.age_loss = training::parse_age_loss(a.age_loss);
    tc.features = dsp::format_feature_set(cache.header.set);
    tc.validate();

    const auto protocol = parse_split_protocol(a.split_protocol);
    const auto data = prepare_data(manifest, cache, protocol, a.oversample, tc.normalization, tc.seed);
    if (std::find(spec.tasks.begin(), spec.tasks.end(), models::Task::speaker) != spec.tasks.end() &&
        spec.speaker_count == 0)
        spec.speaker_count = data.speakers.size();
    spec.validate();

    auto model = models::build_model(spec);
    const auto history = training::train(model, data.splits.train, data.splits.val, tc, data.splits.age_scaler, "train");
    models::write_checkpoint(a.out, model,
                             checkpoint_metadata(cache.header.set, cache.header.config, cache.header.averaged, data, tc,
                                                 protocol));
    if (opts.given("--history")) {
        std::ofstream h(a.history, std::ios::binary | std::ios::trunc);
        if (!h) throw IoError(fmt::format("cannot write '{}'", a.history.string()));
        h << training::history_jsonl(history);
    }
    const auto &best = history.epochs.at(history.best_epoch - 1);
    out << fmt::format("{}: {} epochs{}, best epoch {} (val loss {:.6f}); checkpoint {}\n", models::to_string(spec.kind),
                       history.epochs.size(), history.early_stopped ? " (early stop)" : "", history.best_epoch,
                       best.val_loss, a.out.string());
    return 0;
}

struct EvalArgs {
    fs::path manifest, cache, checkpoint, out;
    std::string split = "test";
};

int cmd_eval(const EvalArgs &a, const Options &opts, std::ostream &out) {
    const auto ckpt = models::read_checkpoint(a.checkpoint);
    const auto meta = parse_checkpoint_metadata(ckpt.metadata);
    const auto cache = dsp::read_feature_cache(a.cache);
    if (cache.header.dim != ckpt.spec.input_dim)
        throw ShapeError(fmt::format("cache holds {}-dim features but the checkpoint expects {}-dim inputs",
                                     cache.header.dim, ckpt.spec.input_dim));
    if (!(cache.header.set == meta.features) || !(cache.header.config == meta.config) ||
        cache.header.averaged != meta.averaged)
        throw ValidationError(fmt::format("cache features ({}, {}) differ from the checkpoint's ({}, {})",
                                          dsp::format_feature_set(cache.header.set),
                                          cache.header.averaged ? "averaged" : "sequential",
                                          dsp::format_feature_set(meta.features),
                                          meta.averaged ? "averaged" : "sequential"));

    const auto which = dataset::parse_split(a.split);
    if (!which || *which == dataset::Split::unassigned)
        throw ConfigError(fmt::format("unknown split '{}' (expected train, val or test)", a.split));
    const auto manifest = split_manifest(dataset::parse_manifest(a.manifest), meta.split, meta.seed);
    const auto records = manifest.filter(*which);
    if (records.empty()) throw ValidationError(fmt::format("the {} split is empty", a.split));

    dataset::LabelMap speakers = meta.speakers;
    for (const auto &r : records)
        if (!speakers.contains(r.speaker_id)) speakers.add(r.speaker_id);
    auto samples = training::make_samples(records, speakers, cache);
    if (!meta.standardizer.mean.empty()) meta.standardizer.apply(samples);

    auto model = models::build_model(ckpt.spec);
    models::load_checkpoint(model, ckpt);
    const auto preds = training::predict(model, samples, meta.age_scaler);
    const std::string run = a.checkpoint.stem().string();
    std::vector<training::SummaryRow> rows;
    std::string jsonl;
    for (const auto task : ckpt.spec.tasks) {
        const auto m = training::task_metrics(ckpt.spec, preds, samples, task);
        rows.push_back({run, task, m});
        jsonl += training::metrics_jsonl(run, a.split, task, m);
    }
    out << training::summary_text(rows);
    if (opts.given("--out")) {
        std::ofstream f(a.out, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError(fmt::format("cannot write '{}'", a.out.string()));
        f << jsonl;
    }
    return 0;
}

struct ExperimentArgs {
    std::string preset;
    fs::path data_root, out;
    std::size_t epochs = 0, batch = 0, patience = 0, jobs = 1;
    double lr = 0.0;
    std::uint64_t seed = 0;
    std::string loss_weights;
    int hop = 0, n_fft = 0;
    bool no_cache = false;
    bool quiet = false;
};

int cmd_experiment(const ExperimentArgs &a, const Options &opts, std::ostream &out) {
    const auto &preset = find_preset(a.preset);
    ExperimentOptions o;
    o.data_root = a.data_root;
    if (!opts.given("--data-root"))
        if (const char *env = std::getenv(kDataRootEnv)) o.data_root = env;
    o.out_dir = a.out;
    o.jobs = a.jobs;
    o.quiet = a.quiet;
    o.reuse_cache = !a.no_cache;
    if (opts.given("--epochs")) o.epochs = a.epochs;
    if (opts.given("--batch")) o.batch_size = a.batch;
    if (opts.given("--lr")) o.learning_rate = a.lr;
    if (opts.given("--seed")) o.seed = a.seed;
    if (opts.given("--patience")) o.patience = a.patience;
    if (opts.given("--loss-weights")) o.loss_weights = models::parse_loss_weights(a.loss_weights);
    if (opts.given("--hop")) o.hop_length = a.hop;
    if (opts.given("--n-fft")) o.n_fft = a.n_fft;
    const auto result = run_experiment(preset, o);
    out << preset.provenance() << "\n" << training::summary_text(result.rows);
    out << fmt::format("report bundle: {}\n", result.bundle.string());
    return 0;
}

std::string help_footer() {
    return fmt::format(
        "\nPresets (reported values are annotations only):\n{}\n"
        "Environment:\n  {}  default --data-root for 'experiment'\n\n"
        "Exit codes: 0 success, 1 unexpected error, 2 usage/config, 3 data/shape, 4 numeric failure\n",
        preset_listing(), kDataRootEnv);
}

}  // namespace

int exit_code_for(const std::exception &e) {
    if (dynamic_cast<const ConfigError *>(&e)) return 2;
    if (dynamic_cast<const NumericError *>(&e)) return 4;
    if (dynamic_cast<const Error *>(&e)) return 3;
    if (dynamic_cast<const fs::filesystem_error *>(&e)) return 3;
    return 1;
}

int run_cli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
    CLI::App app{"speakerprof: speaker profiling and identification from speech"};
    app.footer(help_footer());
    app.require_subcommand(1);

    IngestArgs ingest;
    auto *ingest_cmd = app.add_subcommand("ingest", "scan a TIMIT-style tree (or generate a synthetic one) into a manifest");
    Options ingest_opts(ingest_cmd);
    ingest_opts.option("--root", ingest.root, "corpus root")->required();
    ingest_opts.option("--meta", ingest.meta, "speaker_id,age CSV (default <root>/speakers.csv)");
    ingest_opts.option("--out", ingest.out, "manifest CSV to write")->required();
    ingest_opts.option("--synthetic", ingest.synthetic, "first generate a synthetic corpus with N speakers under --root");
    ingest_opts.option("--seed", ingest.seed, "synthetic corpus seed");
    ingest_opts.option("--jobs", ingest.jobs, "worker threads");

    FeatureArgs feat;
    auto *feat_cmd = app.add_subcommand("features", "extract features for every manifest record into a cache");
    Options feat_opts(feat_cmd);
    feat_opts.option("--manifest", feat.manifest, "manifest CSV")->required();
    feat_opts.option("--kinds", feat.kinds, "feature set, e.g. mfcc:40,mel:64 or five");
    auto *avg = feat_opts.flag("--avg", feat.averaged, true, "average over frames (default)");
    auto *seq = feat_opts.flag("--sequential", feat.averaged, false, "keep the frame sequence");
    avg->excludes(seq);
    feat_opts.option("--hop", feat.hop, "hop length in samples");
    feat_opts.option("--n-fft", feat.n_fft, "FFT size");
    feat_opts.option("--out", feat.out, "cache file")->required();
    feat_opts.flag("--no-cache", feat.no_cache, true, "recompute even when the cache matches");
    feat_opts.option("--jobs", feat.jobs, "worker threads");

    TrainArgs tr;
    auto *train_cmd = app.add_subcommand("train", "train one model and write a checkpoint");
    Options train_opts(train_cmd);
    train_opts.option("--manifest", tr.manifest, "manifest CSV")->required();
    train_opts.option("--cache", tr.cache, "feature cache")->required();
    train_opts.option("--model-spec", tr.model_spec, "model spec file (key=value lines)");
    train_opts.option("--model", tr.model, "mlp, lstm, cnn, multitask_mlp or multitask_cnn_lstm");
    train_opts.option("--task", tr.tasks, "task or comma-separated tasks: accent, gender, age, speaker");
    train_opts.option("--out", tr.out, "checkpoint to write")->required();
    train_opts.option("--history", tr.history, "write per-epoch history as JSON lines");
    train_opts.option("--epochs", tr.epochs, "epochs");
    train_opts.option("--batch", tr.batch, "batch size");
    train_opts.option("--lr", tr.lr, "Adam learning rate");
    train_opts.option("--seed", tr.seed, "seed for splits, shuffling and dropout");
    train_opts.option("--loss-weights", tr.loss_weights, "multitask loss weights a,g,age");
    train_opts.option("--patience", tr.patience, "early-stop patience in epochs (0 disables)");
    train_opts.option("--split-protocol", tr.split_protocol, "profiling or speaker_id");
    train_opts.flag("--oversample", tr.oversample, true, "balance (accent, gender) counts in the training split");
    train_opts.option("--normalization", tr.normalization, "global_standardize or none");
    train_opts.option("--age-loss", tr.age_loss, "mse or l1");
    train_opts.option("--jobs", tr.jobs, "worker threads");

    EvalArgs ev;
    auto *eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on one split");
    Options eval_opts(eval_cmd);
    eval_opts.option("--manifest", ev.manifest, "manifest CSV")->required();
    eval_opts.option("--cache", ev.cache, "feature cache")->required();
    eval_opts.option("--checkpoint", ev.checkpoint, "checkpoint")->required();
    eval_opts.option("--split", ev.split, "train, val or test");
    eval_opts.option("--out", ev.out, "write metrics as JSON lines");

    ExperimentArgs ex;
    auto *exp_cmd = app.add_subcommand("experiment", "run a preset and write its report bundle");
    Options exp_opts(exp_cmd);
    exp_opts.option("--preset", ex.preset, "preset name (see 'presets')")->required();
    exp_opts.option("--data-root", ex.data_root,
                    fmt::format("manifest, directory with manifest.csv, or TIMIT-style tree (default ${})", kDataRootEnv));
    exp_opts.option("--out", ex.out, "output directory")->required();
    exp_opts.option("--epochs", ex.epochs, "override epochs");
    exp_opts.option("--batch", ex.batch, "override batch size");
    exp_opts.option("--lr", ex.lr, "override learning rate");
    exp_opts.option("--seed", ex.seed, "override seed");
    exp_opts.option("--loss-weights", ex.loss_weights, "override multitask loss weights a,g,age");
    exp_opts.option("--patience", ex.patience, "override early-stop patience");
    exp_opts.option("--hop", ex.hop, "override hop length");
    exp_opts.option("--n-fft", ex.n_fft, "override FFT size");
    exp_opts.option("--jobs", ex.jobs, "worker threads");
    exp_opts.flag("--no-cache", ex.no_cache, true, "recompute features even when a matching cache exists");
    exp_opts.flag("--quiet", ex.quiet, true, "suppress progress messages");

    auto *presets_cmd = app.add_subcommand("presets", "list presets with their reported values");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*ingest_cmd) {
            ingest_opts.apply_config();
            return cmd_ingest(ingest, ingest_opts, out, err);
        }
        if (*feat_cmd) {
            feat_opts.apply_config();
            return cmd_features(feat, out);
        }
        if (*train_cmd) {
            train_opts.apply_config();
            return cmd_train(tr, train_opts, out);
        }
        if (*eval_cmd) {
            eval_opts.apply_config();
            return cmd_eval(ev, eval_opts, out);
        }
        if (*exp_cmd) {
            exp_opts.apply_config();
            return cmd_experiment(ex, exp_opts, out);
        }
        if (*presets_cmd) {
            out << preset_listing();
            return 0;
        }
    } catch (const std::exception &e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
    return 2;
}

}  // namespace spkr::cli
