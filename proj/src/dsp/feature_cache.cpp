#include "speakerprof/feature_cache.hpp"

#include <fmt/format.h>

#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "speakerprof/binio.hpp"
#include "speakerprof/errors.hpp"
#include "speakerprof/parallel.hpp"
#include "speakerprof/rng.hpp"

namespace spkr::dsp {
namespace {

constexpr char kMagic[8] = {'S', 'P', 'K', 'R', 'F', 'E', 'A', 'T'};
constexpr std::uint32_t kVersion = 1;

using binio::put_f32;
using binio::put_u32;
using binio::put_u64;
using binio::Reader;

CacheHeader parse_header(const std::string &text, const std::filesystem::path &path) {
    std::map<std::string, std::string> kv;
    std::istringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto get = [&](const std::string &key) {
        auto it = kv.find(key);
        if (it == kv.end()) throw DecodeError(fmt::format("'{}': cache header lacks '{}'", path.string(), key));
        return it->second;
    };
    CacheHeader h;
    try {
        h.set = parse_feature_set(get("kinds"));
        h.averaged = get("averaged") == "1";
        h.config.n_fft = std::stoi(get("n_fft"));
        h.config.hop_length = std::stoi(get("hop_length"));
        h.config.win_length = std::stoi(get("win_length"));
        h.config.sample_rate = std::stoi(get("sample_rate"));
        h.config.n_mels = std::stoi(get("n_mels"));
        h.config.n_mfcc = std::stoi(get("n_mfcc"));
        h.config.fmin = std::stod(get("fmin"));
        h.config.fmax = std::stod(get("fmax"));
        h.dim = std::stoul(get("dim"));
        h.source_hash = std::stoull(get("source_hash"));
    } catch (const std::invalid_argument &) {
        throw DecodeError(fmt::format("'{}': malformed cache header", path.string()));
    }
    return h;
}

CacheHeader read_header(Reader &r, const std::filesystem::path &path) {
    char magic[8];
    r.bytes(magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0) throw DecodeError(fmt::format("'{}' is not a feature cache", path.string()));
    if (const auto v = r.u32(); v != kVersion)
        throw DecodeError(fmt::format("'{}': unsupported feature cache version {}", path.string(), v));
    return parse_header(r.str(r.u32()), path);
}

}  // namespace

std::string CacheHeader::to_text() const {
    return fmt::format(
        "kinds={}\naveraged={}\nn_fft={}\nhop_length={}\nwin_length={}\nsample_rate={}\nn_mels={}\nn_mfcc={}\n"
        "fmin={}\nfmax={}\ndim={}\nsource_hash={}\n",
        format_feature_set(set), averaged ? 1 : 0, config.n_fft, config.hop_length, config.win_length,
        config.sample_rate, config.n_mels, config.n_mfcc, config.fmin, config.fmax, dim, source_hash);
}

const CacheEntry &FeatureCache::find(const std::string &path) const {
    for (const auto &e : entries)
        if (e.path == path) return e;
    throw ValidationError(fmt::format("'{}' is not in the feature cache", path));
}

std::uint64_t source_hash(const std::vector<dataset::SpeakerRecord> &records) {
    std::uint64_t h = fnv1a("spkr-features");
    for (const auto &r : records) h = fnv1a(r.path.generic_string() + "\n", h);
    return h;
}

void write_feature_cache(const std::filesystem::path &path, const FeatureCache &cache) {
    std::string out(kMagic, 8);
    put_u32(out, kVersion);
    const std::string header = cache.header.to_text();
    put_u32(out, static_cast<std::uint32_t>(header.size()));
    out += header;
    put_u64(out, cache.entries.size());
    for (const auto &e : cache.entries) {
        if (e.values.size() != std::size_t(e.rows) * e.frames)
            throw ShapeError(fmt::format("cache entry '{}' holds {} values for {}x{}", e.path, e.values.size(), e.rows,
                                         e.frames));
        put_u32(out, static_cast<std::uint32_t>(e.path.size()));
        out += e.path;
        put_u32(out, e.rows);
        put_u32(out, e.frames);
        for (float v : e.values) put_f32(out, v);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(fmt::format("cannot write feature cache '{}'", path.string()));
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError(fmt::format("short write to '{}'", path.string()));
}

CacheHeader read_cache_header(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open feature cache '{}'", path.string()));
    Reader r(in, path, "feature cache");
    return read_header(r, path);
}

FeatureCache read_feature_cache(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open feature cache '{}'", path.string()));
    Reader r(in, path, "feature cache");
    FeatureCache cache;
    cache.header = read_header(r, path);
    const std::uint64_t n = r.u64();
    cache.entries.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        CacheEntry e;
        e.path = r.str(r.u32());
        e.rows = r.u32();
        e.frames = r.u32();
        e.values.resize(std::size_t(e.rows) * e.frames);
        for (float &v : e.values) v = r.f32();
        cache.entries.push_back(std::move(e));
    }
    return cache;
}

FeatureCache extract_records(const std::vector<dataset::SpeakerRecord> &records, const FeatureSet &set,
                             const FeatureConfig &cfg, bool averaged, std::size_t jobs) {
    std::vector<std::string> paths;
    std::set<std::string> seen;
    for (const auto &r : records)
        if (seen.insert(r.path.generic_string()).second) paths.push_back(r.path.generic_string());

    FeatureCache cache;
    cache.header = CacheHeader{set, cfg, averaged, feature_dim(set, cfg), source_hash(records)};
    cache.entries.resize(paths.size());
    parallel_for(paths.size(), jobs, [&](std::size_t i) {
        const auto clip = dataset::read_audio(paths[i]);
        const FeatureMatrix m = extract_set(clip, set, cfg, averaged);
        CacheEntry &e = cache.entries[i];
        e.path = paths[i];
        e.rows = static_cast<std::uint32_t>(m.values.rows);
        e.frames = static_cast<std::uint32_t>(m.values.cols);
        e.values.assign(m.values.data.begin(), m.values.data.end());
    });
    return cache;
}

}  // namespace spkr::dsp
