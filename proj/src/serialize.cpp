#include "cbam/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "cbam/errors.hpp"

namespace cbam {

namespace detail {

void write_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char bytes[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                  static_cast<unsigned char>(v >> 16),
                                  static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(bytes), 4);
}

void write_f64(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char bytes[4];
  if (!in.read(reinterpret_cast<char*>(bytes), 4)) throw TruncatedFile("expected u32");
  return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
}

double read_f64(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw TruncatedFile("expected f64");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

void read_magic(std::istream& in, const char (&magic)[5]) {
  char got[4];
  if (!in.read(got, 4)) throw TruncatedFile("missing magic bytes");
  if (std::memcmp(got, magic, 4) != 0) {
    throw BadMagic("expected \"" + std::string(magic) + "\", got \"" + std::string(got, 4) + "\"");
  }
}

}  // namespace detail

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write("CBT1", 4);
  detail::write_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) detail::write_u32(out, static_cast<std::uint32_t>(e));
  for (double v : t.data()) detail::write_f64(out, v);
  if (!out) throw IoFailure("tensor write failed");
}

Tensor read_tensor(std::istream& in) {
  detail::read_magic(in, "CBT1");
  const auto rank = detail::read_u32(in);
  if (rank == 0) throw ShapeMismatch("CBT1 tensor with rank 0");
  Shape shape(rank);
  for (auto& e : shape) e = detail::read_u32(in);
  std::vector<double> data(numel(shape));
  for (auto& v : data) v = detail::read_f64(in);
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open " + path.string());
  return read_tensor(in);
}

}  // namespace cbam
