#pragma once

#include <filesystem>
#include <iosfwd>

#include "cbam/tensor.hpp"

namespace cbam {

// CBT1 tensor format, all integers little-endian:
//   "CBT1" | u32 rank | u32 extent x rank | f64 payload, row-major.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

namespace detail {

void write_u32(std::ostream& out, std::uint32_t v);
void write_f64(std::ostream& out, double v);
// Both throw TruncatedFile when the stream runs dry.
std::uint32_t read_u32(std::istream& in);
double read_f64(std::istream& in);
void read_magic(std::istream& in, const char (&magic)[5]);

}  // namespace detail

}  // namespace cbam
