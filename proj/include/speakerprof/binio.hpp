#pragma once

#include <fmt/format.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <istream>
#include <string>

#include "speakerprof/errors.hpp"

// Little-endian encoding shared by the feature cache and checkpoint formats.
namespace spkr::binio {

inline void put_u32(std::string &out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string &out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string &out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

inline void put_str(std::string &out, const std::string &s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out += s;
}

class Reader {
   public:
    Reader(std::istream &in, std::filesystem::path path, std::string what)
        : in_(in), path_(std::move(path)), what_(std::move(what)) {}

    void bytes(char *dst, std::size_t n) {
        in_.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n)
            throw IoError(fmt::format("'{}': truncated {}", path_.string(), what_));
    }
    std::uint32_t u32() {
        unsigned char b[4];
        bytes(reinterpret_cast<char *>(b), 4);
        return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
               (std::uint32_t(b[3]) << 24);
    }
    std::uint64_t u64() {
        const std::uint64_t lo = u32();
        return lo | (std::uint64_t(u32()) << 32);
    }
    float f32() {
        const std::uint32_t bits = u32();
        float f;
        std::memcpy(&f, &bits, 4);
        return f;
    }
    std::string str(std::size_t n) {
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
    std::string str() { return str(u32()); }

   private:
    std::istream &in_;
    std::filesystem::path path_;
    std::string what_;
};

}  // namespace spkr::binio
