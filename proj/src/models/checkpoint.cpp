#include "speakerprof/checkpoint.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>

#include "speakerprof/binio.hpp"
#include "speakerprof/errors.hpp"

namespace spkr::models {
namespace {

constexpr char kMagic[8] = {'S', 'P', 'K', 'R', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_tensor(std::string &out, const NamedTensor &t) {
    binio::put_str(out, t.name);
    binio::put_u32(out, static_cast<std::uint32_t>(t.tensor.rank()));
    for (auto d : t.tensor.shape()) binio::put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.tensor.data()) binio::put_f32(out, v);
}

}  // namespace

const ad::Tensor &Checkpoint::tensor(const std::string &name) const {
    for (const auto &t : tensors)
        if (t.name == name) return t.tensor;
    throw ValidationError(fmt::format("checkpoint has no tensor '{}'", name));
}

bool Checkpoint::has_tensor(const std::string &name) const {
    return std::any_of(tensors.begin(), tensors.end(), [&](const NamedTensor &t) { return t.name == name; });
}

std::string encode_checkpoint(const Model &model, const std::string &metadata, const std::vector<NamedTensor> &extras) {
    std::string out(kMagic, 8);
    binio::put_u32(out, kVersion);
    const std::string spec = model.spec().to_text();
    binio::put_u64(out, fnv1a(spec));
    binio::put_str(out, spec);
    binio::put_str(out, metadata);
    const auto buffers = model.buffers();
    binio::put_u32(out, static_cast<std::uint32_t>(model.parameters().size() + buffers.size() + extras.size()));
    for (const auto &p : model.parameters()) put_tensor(out, p);
    for (const auto &b : buffers) put_tensor(out, b);
    for (const auto &e : extras) put_tensor(out, e);
    return out;
}

void write_checkpoint(const std::filesystem::path &path, const Model &model, const std::string &metadata,
                      const std::vector<NamedTensor> &extras) {
    const std::string bytes = encode_checkpoint(model, metadata, extras);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(fmt::format("cannot write checkpoint '{}'", path.string()));
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError(fmt::format("short write to '{}'", path.string()));
}

Checkpoint read_checkpoint(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open checkpoint '{}'", path.string()));
    binio::Reader r(in, path, "checkpoint");
    char magic[8];
    r.bytes(magic, 8);
    if (!std::equal(magic, magic + 8, kMagic)) throw DecodeError(fmt::format("'{}' is not a checkpoint", path.string()));
    if (const auto v = r.u32(); v != kVersion)
        throw DecodeError(fmt::format("'{}': unsupported checkpoint version {}", path.string(), v));
    Checkpoint ckpt;
    ckpt.spec_hash = r.u64();
    const std::string spec_text = r.str();
    if (fnv1a(spec_text) != ckpt.spec_hash)
        throw DecodeError(fmt::format("'{}': spec hash does not match the embedded spec", path.string()));
    ckpt.spec = parse_model_spec(spec_text);
    ckpt.metadata = r.str();
    const std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        NamedTensor t;
        t.name = r.str();
        ad::Shape shape(r.u32());
        for (auto &d : shape) d = r.u32();
        std::vector<float> values(ad::numel(shape));
        for (float &v : values) v = r.f32();
        t.tensor = ad::Tensor::from_data(std::move(shape), std::move(values));
        ckpt.tensors.push_back(std::move(t));
    }
    return ckpt;
}

void load_checkpoint(Model &model, const Checkpoint &ckpt) {
    if (ckpt.spec_hash != model.spec().hash())
        throw ValidationError(fmt::format("checkpoint spec hash {:016x} does not match model spec hash {:016x}",
                                          ckpt.spec_hash, model.spec().hash()));
    for (const auto &p : model.parameters()) {
        const auto &src = ckpt.tensor(p.name);
        if (src.shape() != p.tensor.shape())
            throw ShapeError(fmt::format("checkpoint tensor '{}' has shape {}, model expects {}", p.name,
                                         ad::shape_str(src.shape()), ad::shape_str(p.tensor.shape())));
        auto dst = p.tensor;
        std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
    }
    for (const auto &b : model.buffers()) {
        const auto &src = ckpt.tensor(b.name);
        model.set_buffer(b.name, std::vector<float>(src.data().begin(), src.data().end()));
    }
}

}  // namespace spkr::models
