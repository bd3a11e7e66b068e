#include "speakerprof/models.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "speakerprof/errors.hpp"

namespace spkr::models {
namespace {

std::string join_sizes(const std::vector<std::size_t> &v) { return fmt::format("{}", fmt::join(v, ",")); }

std::vector<std::string> split_list(std::string_view text) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto comma = text.find(',', start);
        const auto end = comma == std::string_view::npos ? text.size() : comma;
        std::string item(text.substr(start, end - start));
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (!item.empty()) out.push_back(item);
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

std::size_t parse_size(const std::string &s, std::size_t line) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(s, &pos);
    } catch (const std::exception &) {
        throw ParseError(fmt::format("expected a non-negative integer, got '{}'", s), line);
    }
    if (pos != s.size() || s.front() == '-')
        throw ParseError(fmt::format("expected a non-negative integer, got '{}'", s), line);
    return static_cast<std::size_t>(v);
}

}  // namespace

std::string to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::mlp: return "mlp";
        case ModelKind::lstm: return "lstm";
        case ModelKind::cnn: return "cnn";
        case ModelKind::multitask_mlp: return "multitask_mlp";
        case ModelKind::multitask_cnn_lstm: return "multitask_cnn_lstm";
    }
    return "?";
}

std::string to_string(Task task) {
    switch (task) {
        case Task::accent: return "accent";
        case Task::gender: return "gender";
        case Task::age: return "age";
        case Task::speaker: return "speaker";
    }
    return "?";
}

ModelKind parse_model_kind(std::string_view token) {
    for (auto k : {ModelKind::mlp, ModelKind::lstm, ModelKind::cnn, ModelKind::multitask_mlp,
                   ModelKind::multitask_cnn_lstm})
        if (token == to_string(k)) return k;
    throw ConfigError(fmt::format("unknown model kind '{}'", token));
}

Task parse_task(std::string_view token) {
    for (auto t : {Task::accent, Task::gender, Task::age, Task::speaker})
        if (token == to_string(t)) return t;
    throw ConfigError(fmt::format("unknown task '{}'", token));
}

bool is_multitask(ModelKind kind) {
    return kind == ModelKind::multitask_mlp || kind == ModelKind::multitask_cnn_lstm;
}

bool is_sequential(ModelKind kind) { return kind != ModelKind::mlp && kind != ModelKind::multitask_mlp; }

bool is_classification(Task task) { return task != Task::age; }

std::size_t ModelSpec::head_width(Task task) const {
    switch (task) {
        case Task::accent: return 8;
        case Task::gender: return 2;
        case Task::age: return 1;
        case Task::speaker: return speaker_count;
    }
    return 0;
}

void ModelSpec::validate() const {
    if (input_dim == 0) throw ConfigError("model input_dim must be positive");
    if (is_multitask(kind) && tasks.size() < 2)
        throw ConfigError(fmt::format("{} needs at least two tasks", to_string(kind)));
    if (!is_multitask(kind) && tasks.size() != 1)
        throw ConfigError(fmt::format("{} needs exactly one task, got {}", to_string(kind), tasks.size()));
    std::set<Task> seen;
    for (auto t : tasks)
        if (!seen.insert(t).second) throw ConfigError(fmt::format("task '{}' listed twice", to_string(t)));
    if (seen.contains(Task::speaker) && speaker_count < 2)
        throw ConfigError("speaker task needs speaker_count >= 2");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError(fmt::format("dropout {} outside [0, 1)", dropout));
    if (std::any_of(hidden.begin(), hidden.end(), [](std::size_t h) { return h == 0; }))
        throw ConfigError("hidden widths must be positive");
    const bool conv = kind == ModelKind::cnn || kind == ModelKind::multitask_cnn_lstm;
    const bool rnn = kind == ModelKind::lstm || kind == ModelKind::multitask_cnn_lstm;
    if (conv) {
        if (conv_channels.empty()) throw ConfigError("convolutional models need at least one conv layer");
        if (std::any_of(conv_channels.begin(), conv_channels.end(), [](std::size_t c) { return c == 0; }))
            throw ConfigError("conv channel counts must be positive");
        if (kernel_size == 0 || kernel_size % 2 == 0)
            throw ConfigError(fmt::format("kernel_size must be odd, got {}", kernel_size));
    }
    if (rnn && (lstm_hidden == 0 || lstm_layers == 0)) throw ConfigError("LSTM needs positive hidden size and layers");
}

std::string ModelSpec::to_text() const {
    std::vector<std::string> task_names;
    for (auto t : tasks) task_names.push_back(to_string(t));
    return fmt::format(
        "kind={}\ninput_dim={}\nhidden={}\nconv_channels={}\nkernel_size={}\nlstm_hidden={}\nlstm_layers={}\n"
        "dropout={}\nbatchnorm={}\ntasks={}\nspeaker_count={}\ninit_seed={}\n",
        to_string(kind), input_dim, join_sizes(hidden), join_sizes(conv_channels), kernel_size, lstm_hidden,
        lstm_layers, dropout, batchnorm ? 1 : 0, fmt::join(task_names, ","), speaker_count, init_seed);
}

std::uint64_t ModelSpec::hash() const { return fnv1a(to_text()); }

ModelSpec parse_model_spec(std::string_view text) {
    ModelSpec spec;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError(fmt::format("expected key=value, got '{}'", line), lineno);
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        try {
            if (key == "kind") {
                spec.kind = parse_model_kind(value);
            } else if (key == "input_dim") {
                spec.input_dim = parse_size(value, lineno);
            } else if (key == "hidden" || key == "conv_channels") {
                std::vector<std::size_t> sizes;
                for (const auto &item : split_list(value)) sizes.push_back(parse_size(item, lineno));
                (key == "hidden" ? spec.hidden : spec.conv_channels) = sizes;
            } else if (key == "kernel_size") {
                spec.kernel_size = parse_size(value, lineno);
            } else if (key == "lstm_hidden") {
                spec.lstm_hidden = parse_size(value, lineno);
            } else if (key == "lstm_layers") {
                spec.lstm_layers = parse_size(value, lineno);
            } else if (key == "dropout") {
                std::size_t pos = 0;
                spec.dropout = std::stod(value, &pos);
                if (pos != value.size()) throw ParseError(fmt::format("bad dropout '{}'", value), lineno);
            } else if (key == "batchnorm") {
                if (value != "0" && value != "1") throw ParseError("batchnorm must be 0 or 1", lineno);
                spec.batchnorm = value == "1";
            } else if (key == "tasks") {
                spec.tasks.clear();
                for (const auto &item : split_list(value)) spec.tasks.push_back(parse_task(item));
            } else if (key == "speaker_count") {
                spec.speaker_count = parse_size(value, lineno);
            } else if (key == "init_seed") {
                spec.init_seed = parse_size(value, lineno);
            } else {
                throw ParseError(fmt::format("unknown model spec key '{}'", key), lineno);
            }
        } catch (const ConfigError &e) {
            throw ParseError(e.what(), lineno);
        } catch (const std::invalid_argument &) {
            throw ParseError(fmt::format("bad value for '{}': '{}'", key, value), lineno);
        } catch (const std::out_of_range &) {
            throw ParseError(fmt::format("value out of range for '{}': '{}'", key, value), lineno);
        }
    }
    spec.validate();
    return spec;
}

ModelSpec mlp_spec(std::size_t input_dim, Task task) {
    ModelSpec s;
    s.kind = ModelKind::mlp;
    s.input_dim = input_dim;
    s.tasks = {task};
    return s;
}

ModelSpec lstm_spec(std::size_t input_dim, Task task) {
    ModelSpec s;
    s.kind = ModelKind::lstm;
    s.input_dim = input_dim;
    s.hidden = {};
    s.lstm_layers = 2;
    s.tasks = {task};
    return s;
}

ModelSpec cnn_spec(std::size_t input_dim, Task task) {
    ModelSpec s;
    s.kind = ModelKind::cnn;
    s.input_dim = input_dim;
    s.hidden = {};
    s.tasks = {task};
    return s;
}

ModelSpec multitask_mlp_spec(std::size_t input_dim) {
    ModelSpec s;
    s.kind = ModelKind::multitask_mlp;
    s.input_dim = input_dim;
    s.batchnorm = true;
    s.dropout = 0.2;
    s.tasks = {Task::accent, Task::gender, Task::age};
    return s;
}

ModelSpec multitask_cnn_lstm_spec(std::size_t input_dim) {
    ModelSpec s;
    s.kind = ModelKind::multitask_cnn_lstm;
    s.input_dim = input_dim;
    s.hidden = {};
    s.lstm_layers = 1;
    s.tasks = {Task::accent, Task::gender, Task::age};
    return s;
}

std::size_t parameter_count(const ModelSpec &spec) {
    spec.validate();
    std::size_t n = 0;
    std::size_t width = spec.input_dim;
    switch (spec.kind) {
        case ModelKind::mlp:
        case ModelKind::multitask_mlp:
            for (auto h : spec.hidden) {
                n += width * h + h + (spec.batchnorm ? 2 * h : 0);
                width = h;
            }
            break;
        case ModelKind::cnn:
        case ModelKind::multitask_cnn_lstm:
            for (auto c : spec.conv_channels) {
                n += c * width * spec.kernel_size + c;
                width = c;
            }
            if (spec.kind == ModelKind::cnn) break;
            [[fallthrough]];
        case ModelKind::lstm:
            for (std::size_t l = 0; l < spec.lstm_layers; ++l) {
                const std::size_t h = spec.lstm_hidden;
                n += width * 4 * h + h * 4 * h + 4 * h;
                width = h;
            }
            break;
    }
    for (auto t : spec.tasks) n += width * spec.head_width(t) + spec.head_width(t);
    return n;
}

Model::Model(ModelSpec spec) : spec_(std::move(spec)), dropout_rng_(derive_seed(spec_.init_seed, "dropout")) {
    spec_.validate();
    std::size_t width = spec_.input_dim;
    if (spec_.kind == ModelKind::mlp || spec_.kind == ModelKind::multitask_mlp) {
        for (std::size_t i = 0; i < spec_.hidden.size(); ++i) {
            const std::size_t h = spec_.hidden[i];
            const std::string prefix = fmt::format("trunk.{}", i);
            add_param(prefix + ".weight", {width, h}, width);
            add_param(prefix + ".bias", {h}, width);
            if (spec_.batchnorm) {
                add_param(prefix + ".bn.gamma", {h}, 0, true, 1.0f);
                add_param(prefix + ".bn.beta", {h}, 0, true, 0.0f);
                bn_stats_.emplace_back(prefix + ".bn", ad::BatchNormStats<float>{std::vector<float>(h, 0.0f),
                                                                                  std::vector<float>(h, 1.0f)});
            }
            width = h;
        }
    }
    if (spec_.kind == ModelKind::cnn || spec_.kind == ModelKind::multitask_cnn_lstm) {
        for (std::size_t i = 0; i < spec_.conv_channels.size(); ++i) {
            const std::size_t c = spec_.conv_channels[i];
            const std::string prefix = fmt::format("conv.{}", i);
            add_param(prefix + ".weight", {c, width, spec_.kernel_size}, width * spec_.kernel_size);
            add_param(prefix + ".bias", {c}, width * spec_.kernel_size);
            width = c;
        }
    }
    if (spec_.kind == ModelKind::lstm || spec_.kind == ModelKind::multitask_cnn_lstm) {
        const std::size_t h = spec_.lstm_hidden;
        for (std::size_t l = 0; l < spec_.lstm_layers; ++l) {
            const std::string prefix = fmt::format("lstm.{}", l);
            add_param(prefix + ".w_ih", {width, 4 * h}, h);
            add_param(prefix + ".w_hh", {h, 4 * h}, h);
            add_param(prefix + ".bias", {4 * h}, h);
            width = h;
        }
    }
    for (auto t : spec_.tasks) {
        const std::string prefix = "head." + to_string(t);
        add_param(prefix + ".weight", {width, spec_.head_width(t)}, width);
        add_param(prefix + ".bias", {spec_.head_width(t)}, width);
    }
}

ad::Tensor Model::add_param(const std::string &name, ad::Shape shape, std::size_t fan_in, bool constant,
                            float value) {
    std::vector<float> data(ad::numel(shape), value);
    if (!constant) {
        Rng rng(derive_seed(spec_.init_seed, name));
        const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
        for (float &v : data) v = static_cast<float>(rng.uniform(-bound, bound));
    }
    auto t = ad::Tensor::from_data(std::move(shape), std::move(data), true);
    index_[name] = params_.size();
    params_.push_back({name, t});
    return t;
}

ad::Tensor Model::param(const std::string &name) const { return params_.at(index_.at(name)).tensor; }

std::vector<ad::Tensor> Model::parameter_tensors() const {
    std::vector<ad::Tensor> out;
    for (const auto &p : params_) out.push_back(p.tensor);
    return out;
}

std::vector<NamedTensor> Model::buffers() const {
    std::vector<NamedTensor> out;
    for (const auto &[name, stats] : bn_stats_) {
        out.push_back({name + ".running_mean", ad::Tensor::from_data({stats.running_mean.size()}, stats.running_mean)});
        out.push_back({name + ".running_var", ad::Tensor::from_data({stats.running_var.size()}, stats.running_var)});
    }
    return out;
}

void Model::set_buffer(const std::string &name, const std::vector<float> &values) {
    for (auto &[prefix, stats] : bn_stats_) {
        std::vector<float> *target = nullptr;
        if (name == prefix + ".running_mean") target = &stats.running_mean;
        if (name == prefix + ".running_var") target = &stats.running_var;
        if (!target) continue;
        if (target->size() != values.size())
            throw ShapeError(fmt::format("buffer '{}' has {} values, got {}", name, target->size(), values.size()));
        *target = values;
        return;
    }
    throw ValidationError(fmt::format("model has no buffer '{}'", name));
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const auto &p : params_) n += p.tensor.numel();
    return n;
}

void Model::freeze_head(Task task) {
    const std::string prefix = "head." + to_string(task) + ".";
    bool found = false;
    for (auto &p : params_)
        if (p.name.starts_with(prefix)) {
            p.tensor.set_requires_grad(false);
            p.tensor.zero_grad();
            found = true;
        }
    if (!found) throw ConfigError(fmt::format("model has no '{}' head", to_string(task)));
}

void Model::zero_grad() {
    for (auto &p : params_) p.tensor.zero_grad();
}

ad::Tensor Model::mlp_trunk(const ad::Tensor &x, bool training) {
    ad::Tensor h = x;
    std::size_t bn = 0;
    for (std::size_t i = 0; i < spec_.hidden.size(); ++i) {
        const std::string prefix = fmt::format("trunk.{}", i);
        h = ad::linear(h, param(prefix + ".weight"), param(prefix + ".bias"));
        if (spec_.batchnorm)
            h = ad::batchnorm1d(h, param(prefix + ".bn.gamma"), param(prefix + ".bn.beta"), bn_stats_[bn++].second,
                                training);
        h = ad::relu(h);
        if (spec_.dropout > 0.0) h = ad::dropout(h, spec_.dropout, training, dropout_rng_);
    }
    return h;
}

ad::Tensor Model::conv_trunk(const ad::Tensor &x, std::vector<std::size_t> &lengths, bool /*training*/) {
    ad::Tensor h = x;
    for (std::size_t i = 0; i < spec_.conv_channels.size(); ++i) {
        const std::string prefix = fmt::format("conv.{}", i);
        h = ad::relu(ad::conv1d(h, param(prefix + ".weight"), param(prefix + ".bias"), 1, spec_.kernel_size / 2));
        for (auto len : lengths)
            if (len < 2)
                throw ShapeError(fmt::format("sequence too short for {} pooling stages (needs at least {} frames)",
                                             spec_.conv_channels.size(), std::size_t{1} << spec_.conv_channels.size()));
        h = ad::maxpool1d(h, 2, 2);
        bool ragged = false;
        for (auto &len : lengths) {
            len /= 2;
            ragged = ragged || len != h.dim(2);
        }
        // Zero the frames past each item's length so the next convolution
        // sees the same zero padding as a solo forward.
        if (ragged) h = ad::mask_time(h, lengths);
    }
    return h;
}

ad::Tensor Model::lstm_last(const ad::Tensor &seq, const std::vector<std::size_t> &lengths, const std::string &prefix,
                            std::size_t layers) {
    std::vector<ad::LstmLayer<float>> stack;
    for (std::size_t l = 0; l < layers; ++l) {
        const std::string p = fmt::format("{}.{}", prefix, l);
        stack.push_back({param(p + ".w_ih"), param(p + ".w_hh"), param(p + ".bias")});
    }
    return ad::lstm_forward<float>(seq, stack, lengths).h;
}

std::vector<ad::Tensor> Model::forward(const Batch &batch, bool training) {
    const ad::Tensor &x = batch.input;
    ad::Tensor features;
    if (!is_sequential(spec_.kind)) {
        if (x.rank() != 2 || x.dim(1) != spec_.input_dim)
            throw ShapeError(fmt::format("{} expects input [B,{}], got {}", to_string(spec_.kind), spec_.input_dim,
                                         ad::shape_str(x.shape())));
        features = mlp_trunk(x, training);
    } else {
        if (x.rank() != 3 || x.dim(1) != spec_.input_dim)
            throw ShapeError(fmt::format("{} expects input [B,{},T], got {}", to_string(spec_.kind), spec_.input_dim,
                                         ad::shape_str(x.shape())));
        std::vector<std::size_t> lengths = batch.lengths;
        if (lengths.empty()) lengths.assign(x.dim(0), x.dim(2));
        if (lengths.size() != x.dim(0))
            throw ShapeError(fmt::format("{} lengths for a batch of {}", lengths.size(), x.dim(0)));
        switch (spec_.kind) {
            case ModelKind::cnn: {
                const auto h = conv_trunk(x, lengths, training);
                features = ad::masked_mean_time<float>(h, lengths);
                break;
            }
            case ModelKind::lstm:
                features = lstm_last(ad::transpose12(x), lengths, "lstm", spec_.lstm_layers);
                break;
            case ModelKind::multitask_cnn_lstm: {
                const auto h = conv_trunk(x, lengths, training);
                features = lstm_last(ad::transpose12(h), lengths, "lstm", spec_.lstm_layers);
                break;
            }
            default:
                break;
        }
    }
    std::vector<ad::Tensor> outputs;
    for (auto t : spec_.tasks) {
        const std::string prefix = "head." + to_string(t);
        outputs.push_back(ad::linear(features, param(prefix + ".weight"), param(prefix + ".bias")));
    }
    return outputs;
}

namespace {

Model build_checked(const ModelSpec &spec, ModelKind expected) {
    if (spec.kind != expected)
        throw ConfigError(fmt::format("spec kind {} passed to the {} builder", to_string(spec.kind), to_string(expected)));
    return Model(spec);
}

}  // namespace

Model build_mlp(const ModelSpec &spec) { return build_checked(spec, ModelKind::mlp); }
Model build_single_lstm(const ModelSpec &spec) { return build_checked(spec, ModelKind::lstm); }
Model build_single_cnn(const ModelSpec &spec) { return build_checked(spec, ModelKind::cnn); }
Model build_multitask_mlp(const ModelSpec &spec) { return build_checked(spec, ModelKind::multitask_mlp); }
Model build_multitask_cnn_lstm(const ModelSpec &spec) { return build_checked(spec, ModelKind::multitask_cnn_lstm); }
Model build_model(const ModelSpec &spec) { return Model(spec); }

double LossWeights::weight(Task task) const {
    switch (task) {
        case Task::accent: return accent;
        case Task::gender: return gender;
        case Task::age: return age;
        case Task::speaker: return 1.0;
    }
    return 0.0;
}

void LossWeights::validate() const {
    for (double w : {accent, gender, age})
        if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError(fmt::format("loss weight {} must be finite and >= 0", w));
    if (accent == 0.0 && gender == 0.0 && age == 0.0) throw ConfigError("at least one loss weight must be positive");
}

LossWeights parse_loss_weights(std::string_view text) {
    const auto items = split_list(text);
    if (items.size() != 3) throw ConfigError(fmt::format("loss weights need three values a,g,age; got '{}'", text));
    LossWeights w;
    double *slots[3] = {&w.accent, &w.gender, &w.age};
    for (std::size_t i = 0; i < 3; ++i) {
        try {
            std::size_t pos = 0;
            *slots[i] = std::stod(items[i], &pos);
            if (pos != items[i].size()) throw std::invalid_argument(items[i]);
        } catch (const std::exception &) {
            throw ConfigError(fmt::format("bad loss weight '{}'", items[i]));
        }
    }
    w.validate();
    return w;
}

ad::Tensor combined_loss(const std::vector<std::pair<Task, ad::Tensor>> &losses, const LossWeights &weights) {
    if (losses.empty()) throw ConfigError("combined_loss needs at least one component");
    ad::Tensor total;
    for (const auto &[task, loss] : losses) {
        const float value = loss.item();
        if (!std::isfinite(value))
            throw NumericError(fmt::format("{} loss is {}", to_string(task), std::isnan(value) ? "NaN" : "infinite"));
        const auto w = static_cast<float>(weights.weight(task));
        const ad::Tensor term = w == 0.0f ? ad::Tensor::scalar(0.0f * value) : ad::scale(loss, w);
        total = total.defined() ? ad::add(total, term) : term;
    }
    return total;
}

ad::Tensor combined_loss(const ad::Tensor &accent_loss, const ad::Tensor &gender_loss, const ad::Tensor &age_loss,
                         const LossWeights &weights) {
    return combined_loss({{Task::accent, accent_loss}, {Task::gender, gender_loss}, {Task::age, age_loss}}, weights);
}

}  // namespace spkr::models
