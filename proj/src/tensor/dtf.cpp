#include "lesiongen/tensor/dtf.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace lesiongen {

namespace {

constexpr char kMagic[4] = {'D', 'T', 'F', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("DTF1: truncated stream");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

}  // namespace

std::size_t dtf_encoded_size(const Tensor& t) { return 4 + 1 + 4 * t.dims().size() + 4 * t.size(); }

void write_dtf(std::ostream& os, const Tensor& t) {
  if (t.rank() > 255) throw ValidationError("DTF1: rank above 255");
  os.write(kMagic, 4);
  os.put(static_cast<char>(t.rank()));
  for (int d : t.dims()) put_u32(os, static_cast<std::uint32_t>(d));
  for (float v : t.data()) put_u32(os, std::bit_cast<std::uint32_t>(v));
  if (!os) throw IoError("DTF1: write failed");
}

Tensor read_dtf(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw IoError("DTF1: bad magic");
  const int rank = is.get();
  if (rank == std::char_traits<char>::eof()) throw IoError("DTF1: truncated stream");
  Shape dims(static_cast<std::size_t>(rank));
  for (auto& d : dims) {
    const std::uint32_t v = get_u32(is);
    if (v == 0 || v > 0x7fffffffu) throw IoError("DTF1: invalid dimension");
    d = static_cast<int>(v);
  }
  std::vector<float> data(shape_size(dims));
  for (auto& v : data) v = std::bit_cast<float>(get_u32(is));
  return Tensor(std::move(dims), std::move(data));
}

void save_dtf(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_dtf(os, t);
}

Tensor load_dtf(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return read_dtf(is);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace lesiongen
