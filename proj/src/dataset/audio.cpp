#include "speakerprof/audio.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>

#include "speakerprof/errors.hpp"

namespace spkr::dataset {
namespace {

constexpr std::size_t kSphereHeaderBytes = 1024;

std::uint32_t read_le32(const unsigned char *p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
}

std::uint16_t read_le16(const unsigned char *p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_le32(std::string &out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_le16(std::string &out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>(v >> 8));
}

std::vector<unsigned char> slurp(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open audio file '{}'", path.string()));
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<double> decode_pcm16(const unsigned char *p, std::size_t count, bool big_endian) {
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        const unsigned char lo = big_endian ? p[2 * i + 1] : p[2 * i];
        const unsigned char hi = big_endian ? p[2 * i] : p[2 * i + 1];
        const auto v = static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8)));
        out[i] = static_cast<double>(v) / 32768.0;
    }
    return out;
}

AudioClip decode_riff(const std::vector<unsigned char> &bytes, const std::filesystem::path &path) {
    if (bytes.size() < 12 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw DecodeError(fmt::format("'{}': RIFF container is not WAVE", path.string()));

    bool have_fmt = false;
    int sample_rate = 0;
    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const unsigned char *hdr = bytes.data() + pos;
        const std::uint32_t size = read_le32(hdr + 4);
        const std::size_t body = pos + 8;
        if (std::memcmp(hdr, "fmt ", 4) == 0) {
            if (size < 16 || body + size > bytes.size())
                throw IoError(fmt::format("'{}': truncated fmt chunk", path.string()));
            const unsigned char *f = bytes.data() + body;
            std::uint16_t format = read_le16(f);
            const std::uint16_t channels = read_le16(f + 2);
            sample_rate = static_cast<int>(read_le32(f + 4));
            const std::uint16_t bits = read_le16(f + 14);
            if (format == 0xFFFE && size >= 40) format = read_le16(f + 24);
            if (format != 1)
                throw DecodeError(fmt::format("'{}': unsupported WAVE codec 0x{:04x} (only PCM16)",
                                              path.string(), format));
            if (bits != 16)
                throw DecodeError(fmt::format("'{}': unsupported WAVE sample width {} bits (only PCM16)",
                                              path.string(), bits));
            if (channels != 1)
                throw DecodeError(fmt::format("'{}': WAVE has {} channels, mono required",
                                              path.string(), channels));
            if (sample_rate <= 0)
                throw DecodeError(fmt::format("'{}': invalid sample rate", path.string()));
            have_fmt = true;
        } else if (std::memcmp(hdr, "data", 4) == 0) {
            if (!have_fmt) throw DecodeError(fmt::format("'{}': data chunk before fmt chunk", path.string()));
            if (body + size > bytes.size())
                throw IoError(fmt::format("'{}': truncated WAVE payload ({} of {} bytes)", path.string(),
                                          bytes.size() - body, size));
            if (size % 2 != 0) throw IoError(fmt::format("'{}': odd PCM16 payload size", path.string()));
            AudioClip clip{decode_pcm16(bytes.data() + body, size / 2, false), sample_rate};
            if (clip.samples.empty()) throw DecodeError(fmt::format("'{}': empty audio", path.string()));
            return clip;
        }
        pos = body + size + (size & 1u);
    }
    throw IoError(fmt::format("'{}': WAVE file has no data chunk", path.string()));
}

AudioClip decode_sphere(const std::vector<unsigned char> &bytes, const std::filesystem::path &path) {
    if (bytes.size() < 16) throw IoError(fmt::format("'{}': truncated SPHERE header", path.string()));
    const std::string preamble(bytes.begin(), bytes.begin() + 16);
    std::size_t header_bytes = 0;
    try {
        header_bytes = std::stoul(preamble.substr(8, 8));
    } catch (const std::exception &) {
        throw DecodeError(fmt::format("'{}': malformed SPHERE header size", path.string()));
    }
    if (header_bytes != kSphereHeaderBytes)
        throw DecodeError(
            fmt::format("'{}': SPHERE header of {} bytes (only 1024 supported)", path.string(), header_bytes));
    if (bytes.size() < header_bytes) throw IoError(fmt::format("'{}': truncated SPHERE header", path.string()));

    std::map<std::string, std::string> fields;
    std::istringstream header(std::string(bytes.begin() + 16, bytes.begin() + header_bytes));
    std::string line;
    while (std::getline(header, line)) {
        std::istringstream ls(line);
        std::string name, type, value;
        if (!(ls >> name)) continue;
        if (name == "end_head") break;
        ls >> type;
        std::getline(ls >> std::ws, value);
        fields[name] = value;
    }

    auto field = [&](const std::string &key) -> const std::string * {
        auto it = fields.find(key);
        return it == fields.end() ? nullptr : &it->second;
    };
    auto int_field = [&](const std::string &key, long fallback) {
        const std::string *v = field(key);
        if (!v) return fallback;
        try {
            return std::stol(*v);
        } catch (const std::exception &) {
            throw DecodeError(fmt::format("'{}': malformed SPHERE field {}", path.string(), key));
        }
    };

    if (const std::string *coding = field("sample_coding"); coding && *coding != "pcm")
        throw DecodeError(fmt::format("'{}': unsupported SPHERE sample_coding '{}' (only pcm)", path.string(),
                                      *coding));
    if (int_field("sample_n_bytes", 2) != 2)
        throw DecodeError(fmt::format("'{}': unsupported SPHERE sample width (only PCM16)", path.string()));
    if (int_field("channel_count", 1) != 1)
        throw DecodeError(fmt::format("'{}': SPHERE file is not mono", path.string()));
    const long rate = int_field("sample_rate", 0);
    if (rate <= 0) throw DecodeError(fmt::format("'{}': SPHERE sample_rate missing", path.string()));

    bool big_endian = false;
    if (const std::string *order = field("sample_byte_format")) {
        if (*order == "10")
            big_endian = true;
        else if (*order != "01")
            throw DecodeError(
                fmt::format("'{}': unsupported SPHERE sample_byte_format '{}'", path.string(), *order));
    }

    const std::size_t available = (bytes.size() - header_bytes) / 2;
    const long declared = int_field("sample_count", static_cast<long>(available));
    if (declared < 0 || static_cast<std::size_t>(declared) > available)
        throw IoError(fmt::format("'{}': truncated SPHERE payload ({} of {} samples)", path.string(), available,
                                  declared));
    AudioClip clip{decode_pcm16(bytes.data() + header_bytes, static_cast<std::size_t>(declared), big_endian),
                   static_cast<int>(rate)};
    if (clip.samples.empty()) throw DecodeError(fmt::format("'{}': empty audio", path.string()));
    return clip;
}

}  // namespace

std::vector<std::int16_t> quantize_pcm16(std::span<const double> samples) {
    std::vector<std::int16_t> out(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double scaled = std::nearbyint(samples[i] * 32768.0);
        out[i] = static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
    }
    return out;
}

AudioClip read_audio(const std::filesystem::path &path) {
    const auto bytes = slurp(path);
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), "RIFF", 4) == 0) return decode_riff(bytes, path);
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), "NIST_1A\n", 8) == 0) return decode_sphere(bytes, path);
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), "RIFX", 4) == 0)
        throw DecodeError(fmt::format("'{}': big-endian RIFX audio is not supported", path.string()));
    if (bytes.size() >= 4 && (std::memcmp(bytes.data(), "fLaC", 4) == 0 || std::memcmp(bytes.data(), "OggS", 4) == 0))
        throw DecodeError(fmt::format("'{}': compressed audio ({}) is not supported", path.string(),
                                      std::string(bytes.begin(), bytes.begin() + 4)));
    throw DecodeError(fmt::format("'{}': unrecognized audio container", path.string()));
}

void write_audio(const std::filesystem::path &path, const AudioClip &clip, AudioContainer container) {
    const auto pcm = quantize_pcm16(clip.samples);
    std::string out;
    const auto payload = static_cast<std::uint32_t>(pcm.size() * 2);
    if (container == AudioContainer::riff_wave) {
        out.reserve(44 + payload);
        out += "RIFF";
        put_le32(out, 36 + payload);
        out += "WAVEfmt ";
        put_le32(out, 16);
        put_le16(out, 1);
        put_le16(out, 1);
        put_le32(out, static_cast<std::uint32_t>(clip.sample_rate));
        put_le32(out, static_cast<std::uint32_t>(clip.sample_rate) * 2);
        put_le16(out, 2);
        put_le16(out, 16);
        out += "data";
        put_le32(out, payload);
    } else {
        out = fmt::format(
            "NIST_1A\n   1024\n"
            "database_id -s5 SPKRP\n"
            "sample_count -i {}\n"
            "sample_rate -i {}\n"
            "channel_count -i 1\n"
            "sample_n_bytes -i 2\n"
            "sample_byte_format -s2 01\n"
            "sample_coding -s3 pcm\n"
            "sample_sig_bits -i 16\n"
            "end_head\n",
            pcm.size(), clip.sample_rate);
        out.resize(kSphereHeaderBytes, ' ');
    }
    for (std::int16_t s : pcm) put_le16(out, static_cast<std::uint16_t>(s));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(fmt::format("cannot write audio file '{}'", path.string()));
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError(fmt::format("short write to '{}'", path.string()));
}

}  // namespace spkr::dataset
