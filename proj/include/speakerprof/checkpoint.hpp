#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "speakerprof/models.hpp"

namespace spkr::models {

// Model checkpoint. Little-endian throughout.
//
//   magic       8 bytes "SPKRCKPT"
//   version     u32     1
//   spec_hash   u64     FNV-1a of the spec text
//   spec        u32 length + ModelSpec text
//   metadata    u32 length + free-form `key=value\n` text
//   n_tensors   u32
//   per tensor: u32 name length, name, u32 rank, rank x u32 dims,
//               prod(dims) f32 values
//
// Tensors are the model parameters in registration order, then the
// batchnorm buffers, then any extra tensors supplied by the caller.
struct Checkpoint {
    ModelSpec spec;
    std::uint64_t spec_hash = 0;
    std::string metadata;
    std::vector<NamedTensor> tensors;

    // Throws ValidationError when absent.
    const ad::Tensor &tensor(const std::string &name) const;
    bool has_tensor(const std::string &name) const;
};

std::string encode_checkpoint(const Model &model, const std::string &metadata,
                              const std::vector<NamedTensor> &extras = {});
void write_checkpoint(const std::filesystem::path &path, const Model &model, const std::string &metadata,
                      const std::vector<NamedTensor> &extras = {});

// Throws DecodeError when the stored hash does not match the stored spec.
Checkpoint read_checkpoint(const std::filesystem::path &path);

// Copies parameters and buffers into `model`. Throws ValidationError when
// the checkpoint was written for a different spec.
void load_checkpoint(Model &model, const Checkpoint &ckpt);

}  // namespace spkr::models
