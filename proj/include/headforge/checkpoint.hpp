#pragma once

// Named-tensor records for the "HFCK" parameter checkpoint:
//   u32 name length, UTF-8 name, u32 rank, u64 extents[rank], f32 data[numel]
// all little-endian. The model module prepends its own header record.

#include "headforge/io.hpp"
#include "headforge/tensor.hpp"

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace headforge {

inline constexpr char kCheckpointMagic[] = "HFCK";
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
void write_tensor_record(std::ostream& out, const std::string& name, const Tensor<T>& t) {
    io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) io::write_pod<std::uint64_t>(out, e);
    io::write_as_f32<T>(out, t.data());
}

template <class T>
std::pair<std::string, Tensor<T>> read_tensor_record(std::istream& in) {
    const auto len = io::read_pod<std::uint32_t>(in, "tensor name length");
    if (len > (1u << 16)) throw io::FormatError("tensor name length " + std::to_string(len) + " is implausible");
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (in.gcount() != static_cast<std::streamsize>(len)) throw io::FormatError("truncated tensor name");
    const auto rank = io::read_pod<std::uint32_t>(in, "tensor rank");
    if (rank > 8) throw io::FormatError("tensor '" + name + "' has implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& e : shape) e = io::read_pod<std::uint64_t>(in, "tensor extent");
    auto values = io::read_f32_as<T>(in, shape_numel(shape), name);
    return {std::move(name), Tensor<T>(std::move(shape), std::move(values))};
}

}  // namespace headforge
