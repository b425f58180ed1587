#pragma once

// Parameter-preserving codebook adapter wrapped around one layer's mlp_proj.
// Each entry stores a key (an mlp_proj input activation), a value (the
// replacement mlp_proj output) and a deferral radius. At inference, a
// position whose key lies strictly inside the radius of its nearest entry
// (Euclidean distance, lowest index on ties) takes that entry's value;
// every other position passes through untouched.
//
// File format: one entry per line,
//   <fact_id>,<radius>,<key_0>,...,<key_{n-1}>,<value_0>,...,<value_{m-1}>
// after a header line `codebook,<layer>,<key_dim>,<value_dim>`. Numbers are
// printed with round-trip precision.

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "editlab/model.hpp"

namespace editlab {

struct CodebookEntry {
  Vec key;
  Vec value;
  double radius = 1.0;
  std::size_t fact_id = 0;
};

struct NearestKey {
  std::size_t index = 0;
  double distance = 0.0;
};

class Codebook final : public MlpAdapter {
 public:
  Codebook() = default;
  Codebook(std::size_t layer, std::size_t key_dim, std::size_t value_dim);

  std::size_t layer() const override { return layer_; }
  std::size_t key_dim() const { return key_dim_; }
  std::size_t value_dim() const { return value_dim_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<CodebookEntry>& entries() const { return entries_; }

  /// Throws std::invalid_argument on a non-positive radius, a non-finite key
  /// or mismatched widths.
  void add(CodebookEntry entry);

  std::optional<NearestKey> nearest(std::span<const double> query) const;
  std::optional<std::span<const double>> lookup(std::span<const double> key) const override;

  void save(const std::filesystem::path& path) const;
  static Codebook load(const std::filesystem::path& path);

 private:
  std::size_t layer_ = 0;
  std::size_t key_dim_ = 0;
  std::size_t value_dim_ = 0;
  std::vector<CodebookEntry> entries_;
};

/// Value of the nearest key if the query is inside that key's radius,
/// nullopt (pass through) otherwise. Empty codebooks always pass through.
std::optional<std::span<const double>> grace_forward_hook(const Codebook& codebook,
                                                          std::span<const double> h_query);

}  // namespace editlab
