#include "dfw/blob_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace dfw {
namespace {

constexpr char kMagic[8] = {'D', 'F', 'W', 'B', 'L', 'O', 'B', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

}  // namespace

void write_blob(const std::filesystem::path& path, const nlohmann::json& header,
                std::span<const double> payload) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const std::string h = header.dump();
  out.write(kMagic, 8);
  put_u64(out, h.size());
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (double x : payload) put_u64(out, std::bit_cast<std::uint64_t>(x));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Blob read_blob(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error(path.string() + ": not a blob file");
  }
  const std::uint64_t len = get_u64(in);
  std::string h(len, '\0');
  in.read(h.data(), static_cast<std::streamsize>(len));
  Blob blob;
  blob.header = nlohmann::json::parse(h);
  const auto start = in.tellg();
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::uint64_t>(in.tellg() - start);
  in.seekg(start);
  if (bytes % 8 != 0) throw std::runtime_error(path.string() + ": truncated payload");
  blob.payload.resize(bytes / 8);
  for (auto& x : blob.payload) x = std::bit_cast<double>(get_u64(in));
  return blob;
}

}  // namespace dfw
