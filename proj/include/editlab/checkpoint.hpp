#pragma once

// Checkpoint file layout:
//
//   editlab-checkpoint <version> key=value key=value ...\n
//   <values> little-endian IEEE-754 binary32 numbers
//
// Header keys: vocab_size d_model n_layers n_heads d_ff max_seq seed
// edit_history_len values producer config. Parameters follow
// Weights::for_each_tensor order, each matrix row-major.
//
// Matrix files (covariance caches) use the same framing with the magic
// `editlab-matrix`, required keys rows/cols/values, and free-form metadata.

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include "editlab/model.hpp"

namespace editlab {

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const ModelState& model, const std::filesystem::path& path,
                     const std::string& config_digest = "none");

/// Throws CheckpointError on a malformed, truncated or over-long file, on a
/// version mismatch, and when `expected` is given and differs from the
/// stored architecture.
ModelState load_checkpoint(const std::filesystem::path& path,
                           const ArchSpec* expected = nullptr);

/// Reads only the header key/value pairs.
std::map<std::string, std::string> read_checkpoint_header(const std::filesystem::path& path);

void save_matrix_file(const MatrixF& m, const std::filesystem::path& path,
                      const std::map<std::string, std::string>& metadata);
MatrixF load_matrix_file(const std::filesystem::path& path,
                         std::map<std::string, std::string>* metadata = nullptr);

}  // namespace editlab
