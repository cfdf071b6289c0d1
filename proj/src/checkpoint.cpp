#include "utr/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace utr {

namespace {

constexpr char kMagic[8] = {'U', 'T', 'R', 'C', 'K', 'P', 'T', '1'};

void write_u16(std::ostream& os, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_f64(std::ostream& os, const double* p, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    uint64_t bits = 0;
    std::memcpy(&bits, p + i, sizeof(bits));
    unsigned char b[8];
    for (int j = 0; j < 8; ++j) b[j] = static_cast<unsigned char>((bits >> (8 * j)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
  }
}

uint16_t read_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

void read_f64(std::istream& is, double* p, size_t n) {
  std::vector<unsigned char> buf(n * 8);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  for (size_t i = 0; i < n; ++i) {
    uint64_t bits = 0;
    for (int j = 0; j < 8; ++j) bits |= static_cast<uint64_t>(buf[i * 8 + j]) << (8 * j);
    std::memcpy(p + i, &bits, sizeof(double));
  }
}

void write_entry(std::ostream& os, const std::string& name, const Shape& shape,
                 const std::vector<double>& data) {
  if (name.size() > 0xffff) throw std::invalid_argument("checkpoint: entry name too long");
  if (shape.size() > 0xff) throw std::invalid_argument("checkpoint: rank too large");
  write_u16(os, static_cast<uint16_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  const unsigned char rank = static_cast<unsigned char>(shape.size());
  os.write(reinterpret_cast<const char*>(&rank), 1);
  for (int64_t d : shape) write_u32(os, static_cast<uint32_t>(d));
  write_f64(os, data.data(), data.size());
}

}  // namespace

const Array* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, a] : entries) {
    if (n == name) return &a;
  }
  return nullptr;
}

std::map<std::string, std::string> Checkpoint::config_map() const {
  std::map<std::string, std::string> out;
  std::istringstream is(config_text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

void save_checkpoint(const std::string& path, const std::vector<NamedParam>& entries,
                     const std::string& config_text) {
  std::vector<std::pair<std::string, Array>> raw;
  raw.reserve(entries.size());
  for (const NamedParam& p : entries) {
    raw.push_back({p.name, Array{p.value.shape(),
                                 std::vector<double>(p.value.data(), p.value.data() + p.value.numel())}});
  }
  save_checkpoint_raw(path, raw, config_text);
}

void save_checkpoint_raw(const std::string& path,
                         const std::vector<std::pair<std::string, Array>>& entries,
                         const std::string& config_text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
  os.write(kMagic, 8);
  write_u32(os, static_cast<uint32_t>(config_text.size()));
  os.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
  write_u32(os, static_cast<uint32_t>(entries.size()));
  for (const auto& [name, arr] : entries) {
    if (shape_numel(arr.shape) != arr.numel()) {
      throw std::invalid_argument("checkpoint: entry '" + name + "' shape/data size mismatch");
    }
    write_entry(os, name, arr.shape, arr.data);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  Checkpoint ckpt;
  const uint32_t config_len = read_u32(is);
  ckpt.config_text.resize(config_len);
  if (config_len > 0) is.read(ckpt.config_text.data(), config_len);
  const uint32_t count = read_u32(is);
  ckpt.entries.reserve(count);
  for (uint32_t e = 0; e < count; ++e) {
    const uint16_t name_len = read_u16(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    unsigned char rank = 0;
    is.read(reinterpret_cast<char*>(&rank), 1);
    Shape shape(rank);
    for (int i = 0; i < rank; ++i) shape[static_cast<size_t>(i)] = read_u32(is);
    Array arr;
    arr.shape = shape;
    arr.data.resize(static_cast<size_t>(shape_numel(shape)));
    read_f64(is, arr.data.data(), arr.data.size());
    if (!is) throw std::runtime_error("checkpoint: truncated file: " + path);
    ckpt.entries.push_back({std::move(name), std::move(arr)});
  }
  return ckpt;
}

}  // namespace utr
