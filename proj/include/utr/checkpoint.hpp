#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "utr/optim.hpp"
#include "utr/tensor.hpp"

namespace utr {

// Plain value array, detached from any tape.
struct Array {
  Shape shape;
  std::vector<double> data;

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
};

// Checkpoint file layout (all integers little-endian):
//   magic   8 bytes  "UTRCKPT1"
//   u32     byte length of the plain-text config block (0 if none)
//   bytes   config block, UTF-8 "key=value\n" lines
//   u32     entry count
//   entries, each:
//     u16   name byte length
//     bytes UTF-8 name
//     u8    rank
//     u32   dims[rank]
//     f64   data[prod(dims)]
// Round-trips are bit-exact.
struct Checkpoint {
  std::string config_text;
  std::vector<std::pair<std::string, Array>> entries;

  const Array* find(const std::string& name) const;
  std::map<std::string, std::string> config_map() const;
};

void save_checkpoint(const std::string& path, const std::vector<NamedParam>& entries,
                     const std::string& config_text = "");
void save_checkpoint_raw(const std::string& path,
                         const std::vector<std::pair<std::string, Array>>& entries,
                         const std::string& config_text = "");
Checkpoint load_checkpoint(const std::string& path);

}  // namespace utr
