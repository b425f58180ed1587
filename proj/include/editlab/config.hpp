#pragma once

// Run configuration. File format: `[section]` headers, `key = value` lines,
// `#` comments. Every key name is unique across sections, so the same key
// doubles as a command-line flag (`--epsilon 20`). Flags override the file.
//
// The digest hashes the canonical `section.key=value` lines in sorted order,
// so it ignores field order, whitespace and number spelling in the file, and
// it leaves out the output directory.

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "editlab/corpus.hpp"
#include "editlab/editors.hpp"
#include "editlab/harness.hpp"
#include "editlab/model.hpp"
#include "editlab/train.hpp"

namespace editlab {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string out_dir;  // empty: $EDITLAB_OUT, else ./out

  ArchSpec arch;
  CorpusSpec corpus;  // seed follows `seed`
  TrainConfig train;  // seed follows `seed`

  EditMethod method = EditMethod::rank_one;
  std::optional<std::size_t> layer;       // none: method default
  std::optional<std::size_t> layer_last;  // none: method default
  std::size_t batch_size = 1;
  double epsilon = 1.0;
  std::optional<double> ridge;  // none: 1e-2 * trace(C) / d_ff
  std::size_t covariance_sentences = 64;
  SolverSettings solver;
  bool halt_on_error = false;

  HarnessSettings harness;

  SweepAxis sweep_axis = SweepAxis::layer;
  std::vector<std::string> sweep_values;  // empty: axis default

  /// Resolved plan with method-default layers filled in.
  EditPlan edit_plan() const;
  std::vector<std::string> resolved_sweep_values() const;
  std::string ridge_setting() const;

  /// Canonical `section.key=value` lines, sorted.
  std::vector<std::string> canonical_lines() const;
  std::string digest() const;
  /// Digest over the fields that determine the pretrained model and corpus.
  std::string pretrain_digest() const;

  /// Throws ConfigError naming the violated constraint.
  void validate() const;
};

struct ConfigKey {
  std::string section;
  std::string key;
  std::string doc;
};

/// Every accepted key, in documentation order.
const std::vector<ConfigKey>& config_keys();

/// Defaults, then the file (if any), then `overrides` (key -> value).
/// Throws ConfigError on unknown keys, malformed values, or constraint
/// violations.
RunConfig parse_config(const std::optional<std::filesystem::path>& file,
                       const std::map<std::string, std::string>& overrides = {});
RunConfig parse_config_text(const std::string& text,
                            const std::map<std::string, std::string>& overrides = {});

/// The canonical config as a file that parses back to the same digest.
std::string to_config_text(const RunConfig& config);

/// Root for out/<digest>/... trees.
std::filesystem::path output_root(const RunConfig& config);

std::string fnv1a_hex(const std::string& text);

}  // namespace editlab
