#pragma once

#include <map>
#include <string>

#include "sma/pipeline/stages.hpp"

namespace sma::harness {

// Binary container, little endian:
//   "SMACKPT1" | u32 version | u32 n_meta | (str key, str value)*
//   | u32 n_leaves | (str name, str group, i64 rows, i64 cols, f64[rows*cols])*
//   | u64 FNV-1a of every preceding byte
// Strings are u32 length + bytes; matrices are column-major. The metadata
// holds the full agent configuration ("agent.*") and the producing stage.
inline constexpr char kCheckpointMagic[9] = "SMACKPT1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  pipeline::Model model;
  std::map<std::string, std::string> meta;
  std::string stage() const;
};

// Writes through a temporary file and renames it into place.
void save_checkpoint(const std::string& path, const pipeline::Model& model,
                     const std::string& stage,
                     const std::map<std::string, std::string>& extra = {});

// Throws CheckpointError naming the file on any format or integrity problem.
Checkpoint load_checkpoint(const std::string& path);

std::string encode_checkpoint(const pipeline::Model& model,
                              const std::map<std::string, std::string>& meta);
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& origin);

}  // namespace sma::harness
