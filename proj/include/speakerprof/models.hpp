#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "speakerprof/ops.hpp"
#include "speakerprof/rng.hpp"
#include "speakerprof/tensor.hpp"

namespace spkr::models {

enum class ModelKind { mlp, lstm, cnn, multitask_mlp, multitask_cnn_lstm };
enum class Task { accent, gender, age, speaker };

std::string to_string(ModelKind kind);
std::string to_string(Task task);
ModelKind parse_model_kind(std::string_view token);
Task parse_task(std::string_view token);

bool is_multitask(ModelKind kind);
// mlp and multitask_mlp take [B,F]; the rest take [B,F,T] plus lengths.
bool is_sequential(ModelKind kind);
bool is_classification(Task task);

// Declarative architecture description.
//
// Text form, one `key=value` per line in this order:
//   kind, input_dim, hidden (comma list), conv_channels (comma list),
//   kernel_size, lstm_hidden, lstm_layers, dropout, batchnorm (0/1),
//   tasks (comma list), speaker_count, init_seed
struct ModelSpec {
    ModelKind kind = ModelKind::mlp;
    std::size_t input_dim = 40;
    std::vector<std::size_t> hidden{256, 128, 64};
    std::vector<std::size_t> conv_channels{32, 64};
    std::size_t kernel_size = 3;
    std::size_t lstm_hidden = 128;
    std::size_t lstm_layers = 2;
    double dropout = 0.0;
    bool batchnorm = false;
    std::vector<Task> tasks{Task::gender};
    std::size_t speaker_count = 0;
    std::uint64_t init_seed = 7;

    std::size_t head_width(Task task) const;
    // Throws ConfigError.
    void validate() const;
    std::string to_text() const;
    std::uint64_t hash() const;

    friend bool operator==(const ModelSpec &, const ModelSpec &) = default;
};

ModelSpec parse_model_spec(std::string_view text);

// Defaults for each architecture.
ModelSpec mlp_spec(std::size_t input_dim, Task task);
ModelSpec lstm_spec(std::size_t input_dim, Task task);
ModelSpec cnn_spec(std::size_t input_dim, Task task);
ModelSpec multitask_mlp_spec(std::size_t input_dim);
ModelSpec multitask_cnn_lstm_spec(std::size_t input_dim);

// Analytic count from the spec alone.
std::size_t parameter_count(const ModelSpec &spec);

struct Batch {
    ad::Tensor input;                  // [B,F] or [B,F,T]
    std::vector<std::size_t> lengths;  // per-item frame counts for sequential input
};

struct NamedTensor {
    std::string name;
    ad::Tensor tensor;
};

// One of the five architectures, built from a spec. Every parameter is
// initialized uniform in +-sqrt(1/fan_in) from a stream derived from
// (init_seed, parameter name), so equally named parameters of two models
// with the same seed start out equal.
class Model {
   public:
    explicit Model(ModelSpec spec);
    // Parameters are shared handles; a copy would alias them.
    Model(const Model &) = delete;
    Model &operator=(const Model &) = delete;
    Model(Model &&) = default;
    Model &operator=(Model &&) = default;

    const ModelSpec &spec() const { return spec_; }

    // One output per spec task, in spec order: logits [B,K] or age [B,1].
    std::vector<ad::Tensor> forward(const Batch &batch, bool training);

    const std::vector<NamedTensor> &parameters() const { return params_; }
    std::vector<ad::Tensor> parameter_tensors() const;
    // Batchnorm running statistics.
    std::vector<NamedTensor> buffers() const;
    void set_buffer(const std::string &name, const std::vector<float> &values);

    // Brute-force count over registered parameters.
    std::size_t parameter_count() const;

    // Stops gradients into a task head.
    void freeze_head(Task task);

    void zero_grad();

   private:
    ad::Tensor add_param(const std::string &name, ad::Shape shape, std::size_t fan_in, bool constant = false,
                         float value = 0.0f);
    ad::Tensor param(const std::string &name) const;

    ad::Tensor mlp_trunk(const ad::Tensor &x, bool training);
    ad::Tensor conv_trunk(const ad::Tensor &x, std::vector<std::size_t> &lengths, bool training);
    ad::Tensor lstm_last(const ad::Tensor &seq, const std::vector<std::size_t> &lengths, const std::string &prefix,
                         std::size_t layers);

    ModelSpec spec_;
    std::vector<NamedTensor> params_;
    std::map<std::string, std::size_t> index_;
    std::vector<std::pair<std::string, ad::BatchNormStats<float>>> bn_stats_;
    Rng dropout_rng_;
};

Model build_mlp(const ModelSpec &spec);
Model build_single_lstm(const ModelSpec &spec);
Model build_single_cnn(const ModelSpec &spec);
Model build_multitask_mlp(const ModelSpec &spec);
Model build_multitask_cnn_lstm(const ModelSpec &spec);
Model build_model(const ModelSpec &spec);

struct LossWeights {
    double accent = 1.0;
    double gender = 1.0;
    double age = 1.0;

    double weight(Task task) const;
    // Throws ConfigError when a weight is negative or all are zero.
    void validate() const;
    friend bool operator==(const LossWeights &, const LossWeights &) = default;
};

LossWeights parse_loss_weights(std::string_view text);

// sum of w_task * loss_task over the given components. A component with
// weight 0 contributes a detached constant, so no gradient reaches its head.
// Throws NumericError naming the first non-finite component.
ad::Tensor combined_loss(const std::vector<std::pair<Task, ad::Tensor>> &losses, const LossWeights &weights);
ad::Tensor combined_loss(const ad::Tensor &accent_loss, const ad::Tensor &gender_loss, const ad::Tensor &age_loss,
                         const LossWeights &weights);

}  // namespace spkr::models
