// Named-tensor checkpoint format. All integers and values little-endian.
//
//   bytes   field
//   4       magic "OSRT"
//   4       u32 format version (1)
//   4       u32 tensor count
//   per tensor:
//     4     u32 name length, then the name bytes (no terminator)
//     4     u32 rank, then rank x u64 dimensions
//     8*n   f64 values, row-major
#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "osr/tensor.hpp"

namespace osr {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using NamedTensor = std::pair<std::string, Tensor>;

inline constexpr std::uint32_t checkpoint_version = 1;

namespace detail {

template <typename T>
void write_le(std::ostream& out, T value) {
    static_assert(std::is_integral_v<T>);
    std::array<char, sizeof(T)> bytes;
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF);
    out.write(bytes.data(), bytes.size());
}

template <typename T>
T read_le(std::istream& in) {
    static_assert(std::is_integral_v<T>);
    std::array<unsigned char, sizeof(T)> bytes;
    if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) throw CheckpointError("checkpoint: truncated");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return static_cast<T>(v);
}

}  // namespace detail

inline void write_tensors(std::ostream& out, const std::vector<NamedTensor>& tensors) {
    out.write("OSRT", 4);
    detail::write_le<std::uint32_t>(out, checkpoint_version);
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) detail::write_le<std::uint64_t>(out, d);
        for (double v : t.values()) detail::write_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
    if (!out) throw CheckpointError("checkpoint: write failed");
}

inline std::vector<NamedTensor> read_tensors(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "OSRT", 4) != 0) throw CheckpointError("checkpoint: bad magic");
    const auto version = detail::read_le<std::uint32_t>(in);
    if (version != checkpoint_version)
        throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
    const auto count = detail::read_le<std::uint32_t>(in);
    std::vector<NamedTensor> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = detail::read_le<std::uint32_t>(in);
        std::string name(len, '\0');
        if (!in.read(name.data(), len)) throw CheckpointError("checkpoint: truncated name");
        const auto rank = detail::read_le<std::uint32_t>(in);
        if (rank == 0 || rank > 8) throw CheckpointError("checkpoint: bad rank for " + name);
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<std::size_t>(detail::read_le<std::uint64_t>(in));
        const std::size_t n = element_count(shape);
        if (n == 0 || n > (std::size_t{1} << 32)) throw CheckpointError("checkpoint: bad shape for " + name);
        std::vector<double> values(n);
        for (auto& v : values) v = std::bit_cast<double>(detail::read_le<std::uint64_t>(in));
        out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    return out;
}

}  // namespace osr
