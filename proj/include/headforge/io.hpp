#pragma once

// Little-endian binary stream helpers shared by the checkpoint, trace and
// feature-matrix formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace headforge::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

class FormatError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

template <class T>
    requires std::is_arithmetic_v<T>
void write_pod(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
    requires std::is_arithmetic_v<T>
void write_array(std::ostream& out, std::span<const T> values) {
    if (!values.empty()) {
        out.write(reinterpret_cast<const char*>(values.data()),
                  static_cast<std::streamsize>(values.size_bytes()));
    }
}

inline void write_magic(std::ostream& out, std::string_view magic) {
    out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

template <class T>
    requires std::is_arithmetic_v<T>
T read_pod(std::istream& in, std::string_view what) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) {
        throw FormatError("truncated file while reading " + std::string(what));
    }
    return value;
}

template <class T>
    requires std::is_arithmetic_v<T>
void read_array(std::istream& in, std::span<T> out, std::string_view what) {
    if (out.empty()) return;
    const auto bytes = static_cast<std::streamsize>(out.size_bytes());
    in.read(reinterpret_cast<char*>(out.data()), bytes);
    if (in.gcount() != bytes) {
        throw FormatError("truncated file while reading " + std::string(what));
    }
}

inline void expect_magic(std::istream& in, std::string_view magic) {
    std::string got(magic.size(), '\0');
    in.read(got.data(), static_cast<std::streamsize>(magic.size()));
    if (in.gcount() != static_cast<std::streamsize>(magic.size()) || got != magic) {
        throw FormatError("bad magic: expected '" + std::string(magic) + "'");
    }
}

inline void expect_version(std::istream& in, std::uint32_t expected) {
    const auto v = read_pod<std::uint32_t>(in, "version");
    if (v != expected) {
        throw FormatError("unsupported version " + std::to_string(v) + " (expected " +
                          std::to_string(expected) + ")");
    }
}

// Reads float32 values into any arithmetic destination.
template <class T>
std::vector<T> read_f32_as(std::istream& in, std::size_t count, std::string_view what) {
    std::vector<float> raw(count);
    read_array<float>(in, raw, what);
    if constexpr (std::is_same_v<T, float>) {
        return raw;
    } else {
        return std::vector<T>(raw.begin(), raw.end());
    }
}

template <class T>
void write_as_f32(std::ostream& out, std::span<const T> values) {
    if constexpr (std::is_same_v<T, float>) {
        write_array<float>(out, values);
    } else {
        std::vector<float> tmp(values.begin(), values.end());
        write_array<float>(out, tmp);
    }
}

// The file must be fully consumed; trailing bytes mean a corrupt or foreign file.
inline void expect_eof(std::istream& in) {
    if (in.peek() != std::char_traits<char>::eof()) {
        throw FormatError("unexpected trailing bytes");
    }
}

}  // namespace headforge::io
