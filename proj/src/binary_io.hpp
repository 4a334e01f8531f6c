#pragma once

// Little-endian primitives shared by the FMAP and checkpoint codecs.

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>

#include "liwhiz/error.hpp"

namespace liwhiz::detail {

template <typename U>
void put_le(std::ostream& out, U value) {
    std::array<char, sizeof(U)> buf{};
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        buf[i] = static_cast<char>((value >> (8 * i)) & 0xFFu);
    }
    out.write(buf.data(), buf.size());
}

inline void put_f32s(std::ostream& out, std::span<const float> values) {
    std::string buf(values.size() * 4, '\0');
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(values[i]);
        for (std::size_t b = 0; b < 4; ++b) {
            buf[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
        }
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline void read_exact(std::istream& in, char* dst, std::size_t n, const char* what) {
    in.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) {
        fail(ErrorKind::format, std::string("truncated ") + what + ": expected " +
                                    std::to_string(n) + " bytes, got " +
                                    std::to_string(in.gcount()));
    }
}

template <typename U>
U get_le(std::istream& in, const char* what) {
    std::array<unsigned char, sizeof(U)> buf{};
    read_exact(in, reinterpret_cast<char*>(buf.data()), buf.size(), what);
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        value |= static_cast<U>(static_cast<U>(buf[i]) << (8 * i));
    }
    return value;
}

inline void get_f32s(std::istream& in, std::span<float> dst, const char* what) {
    std::string buf(dst.size() * 4, '\0');
    read_exact(in, buf.data(), buf.size(), what);
    for (std::size_t i = 0; i < dst.size(); ++i) {
        std::uint32_t bits = 0;
        for (std::size_t b = 0; b < 4; ++b) {
            bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[i * 4 + b]))
                    << (8 * b);
        }
        dst[i] = std::bit_cast<float>(bits);
    }
}

} // namespace liwhiz::detail
