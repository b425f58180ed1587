#pragma once

// End-to-end recipes shared by the command-line tool and the tests.
//
// Layout under the output root:
//   <pretrain digest>/checkpoints/{model.ckpt, judge.ckpt, corpus.tsv, cov_*.mat}
//   <config digest>/reports/...      <config digest>/logs/...
// Checkpoints hang off the digest of the fields that determine them, so edit
// runs with different editor settings share one pretrained model.

#include <filesystem>
#include <ostream>
#include <stdexcept>

#include "editlab/config.hpp"
#include "editlab/corpus.hpp"
#include "editlab/harness.hpp"

namespace editlab {

class MissingArtifact : public std::runtime_error {
 public:
  MissingArtifact(const std::filesystem::path& path, const std::string& hint);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

struct Workspace {
  std::filesystem::path checkpoints;
  std::filesystem::path reports;
  std::filesystem::path logs;

  std::filesystem::path model() const { return checkpoints / "model.ckpt"; }
  std::filesystem::path judge() const { return checkpoints / "judge.ckpt"; }
  std::filesystem::path corpus() const { return checkpoints / "corpus.tsv"; }
};

Workspace workspace(const RunConfig& config);

struct Pretrained {
  Corpus corpus;
  ModelState model;
  ModelState judge;  // frozen copy; never edited
};

/// Builds the corpus and trains model_0, writing model, judge and corpus
/// files. Existing artifacts with the right digest are reused unless `fresh`.
Pretrained pretrain(const RunConfig& config, bool fresh = false, std::ostream* log = nullptr);

/// Loads the artifacts written by pretrain. Throws MissingArtifact naming the
/// first absent file.
Pretrained load_pretrained(const RunConfig& config);

/// Fresh filler sentences for covariance estimation, disjoint in sampling
/// stream from the held-out probe sentences.
std::vector<std::vector<TokenId>> covariance_prompts(const Corpus& corpus, std::uint64_t seed, std::size_t count);

/// Statistics for `layers`, read from or written to the checkpoint cache.
CovarianceSet covariances(const RunConfig& config, const Pretrained& pre, const std::vector<std::size_t>& layers,
                          std::ostream* log = nullptr);

/// Sequential run with the configured plan; writes reports/edit_* files.
RunReport run_edit(const RunConfig& config, const Pretrained& pre, std::ostream* log = nullptr);

/// One run per sweep value; writes reports/sweep_<axis>_<value>* per cell and
/// reports/sweep_<axis>_merged_long.csv.
std::vector<SweepCell> run_sweep(const RunConfig& config, const Pretrained& pre, std::ostream* log = nullptr);

}  // namespace editlab
