#pragma once

// Little-endian binary stream helpers shared by the codebook and index files.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "etcir/error.hpp"

namespace etcir::detail {

inline void write_u64(std::ostream& out, std::uint64_t v)
{
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(buf, 8);
}

inline void write_u32(std::ostream& out, std::uint32_t v)
{
    char buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(buf, 4);
}

inline void write_f64(std::ostream& out, double v) { write_u64(out, std::bit_cast<std::uint64_t>(v)); }

inline void write_str(std::ostream& out, std::string_view s)
{
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint64_t read_u64(std::istream& in, const char* what)
{
    unsigned char buf[8];
    if (!in.read(reinterpret_cast<char*>(buf), 8)) fail(std::string(what) + ": truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

inline std::uint32_t read_u32(std::istream& in, const char* what)
{
    unsigned char buf[4];
    if (!in.read(reinterpret_cast<char*>(buf), 4)) fail(std::string(what) + ": truncated file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
    return v;
}

inline double read_f64(std::istream& in, const char* what) { return std::bit_cast<double>(read_u64(in, what)); }

inline std::string read_str(std::istream& in, const char* what)
{
    const std::uint32_t n = read_u32(in, what);
    if (n > (1u << 20)) fail(std::string(what) + ": corrupt string length");
    std::string s(n, '\0');
    if (n > 0 && !in.read(s.data(), n)) fail(std::string(what) + ": truncated file");
    return s;
}

/// FNV-1a, 64-bit.
class Fnv1a {
public:
    void update(const void* data, std::size_t n)
    {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= p[i];
            h_ *= 0x100000001B3ULL;
        }
    }
    void update_u64(std::uint64_t v)
    {
        unsigned char buf[8];
        for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
        update(buf, 8);
    }
    std::uint64_t digest() const { return h_; }

private:
    std::uint64_t h_ = 0xCBF29CE484222325ULL;
};

} // namespace etcir::detail
