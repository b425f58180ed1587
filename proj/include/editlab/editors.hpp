#pragma once

// Editors that turn one model state into the next:
//  - rank-one constrained least squares on a layer's mlp_proj,
//  - the batched hard-constraint generalisation spread over a layer range,
//  - the codebook adapter (parameters untouched).
// The key of an edit is the mlp_proj input at the last prompt position; the
// target value is found by gradient descent on the new object's
// cross-entropy with the hidden state substituted at that position.

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>

#include "editlab/codebook.hpp"
#include "editlab/corpus.hpp"
#include "editlab/model.hpp"

namespace editlab {

class EditError : public std::runtime_error {
 public:
  explicit EditError(const std::string& what, std::optional<std::size_t> layer = std::nullopt);
  std::optional<std::size_t> layer() const { return layer_; }

 private:
  std::optional<std::size_t> layer_;
};

/// Uncentred second moment of mlp_proj inputs at one layer. The ridge is
/// added only when solving.
struct CovarianceStats {
  std::size_t layer = 0;
  MatrixF second_moment;  // (1/N) sum k k^T, [d_ff x d_ff]
  std::size_t sample_count = 0;
  double ridge = 0.0;

  MatrixD regularised() const;
};

/// 1e-2 * trace(C) / n.
double default_ridge(const MatrixF& second_moment);

/// Keys from every position of every prompt. A missing ridge selects
/// default_ridge. Throws EditError on an empty prompt set or non-finite
/// activations.
CovarianceStats estimate_covariance(const ModelState& model, std::size_t layer,
                                    std::span<const std::vector<TokenId>> prompts,
                                    std::optional<double> ridge = std::nullopt);

/// Covariance cache in matrix-file format, keyed by (model digest, layer,
/// ridge setting). Loading returns nullopt when the file is absent or keyed
/// differently.
void save_covariance(const CovarianceStats& stats, const std::filesystem::path& path,
                     const std::string& model_digest, const std::string& ridge_setting);
std::optional<CovarianceStats> load_covariance(const std::filesystem::path& path,
                                               const std::string& model_digest, std::size_t layer,
                                               const std::string& ridge_setting);

using CovarianceSet = std::map<std::size_t, CovarianceStats>;

struct SolverSettings {
  std::size_t max_iterations = 100;
  double step_size = 0.1;  // multiplied by the mean square of the shifted hidden state
  double margin = 0.1;  // logit gap (nats) of the target over the runner-up
};

struct TargetValue {
  Vec key;     // mlp_proj input at the key position
  Vec value;   // v*: replacement mlp_proj output
  Vec hidden;  // substituted layer output that achieved the target
  Vec delta;   // hidden - original layer output
  std::size_t iterations = 0;
  double final_loss = 0.0;
  bool success = false;
};

/// Gradient descent on the layer-output shift at the last prompt position
/// until `target` leads every other token by the solver margin.
TargetValue compute_target_value(const ModelState& model, const MlpAdapter* adapter,
                                 std::size_t layer, std::span<const TokenId> prompt,
                                 TokenId target, const SolverSettings& solver);
TargetValue compute_target_value(const ModelState& model, std::size_t layer,
                                 const FactRecord& fact, const SolverSettings& solver);

/// W + (v - W k)((C+lI)^-1 k)^T / (((C+lI)^-1 k)^T k). `regularised` is
/// C + lI. Throws EditError for a zero key, a failed factorisation or a
/// vanishing denominator.
MatrixD rank_one_edit(const MatrixD& w, const MatrixD& regularised, std::span<const double> key,
                      std::span<const double> value);
MatrixF rank_one_edit(const MatrixF& w, const CovarianceStats& stats, std::span<const double> key,
                      std::span<const double> value);

/// W + R (K^T C~^-1 K)^-1 K^T C~^-1 with R = V - W K, C~ = C + lI.
/// keys: [n x b], values: [m x b]. Throws EditError on rank-deficient or
/// near-singular key sets.
MatrixD batched_edit(const MatrixD& w, const MatrixD& regularised, const MatrixD& keys,
                     const MatrixD& values);
MatrixF batched_edit(const MatrixF& w, const CovarianceStats& stats, const MatrixD& keys,
                     const MatrixD& values);

/// Multi-layer batched edit over [first, last]: layer targets come from the
/// last layer's solved hidden states; each layer, in ascending order,
/// absorbs 1/(remaining layers) of the remaining residual.
ModelState spread_edit(const ModelState& model, std::size_t first, std::size_t last,
                       std::span<const FactRecord> facts, const CovarianceSet& covariances,
                       const SolverSettings& solver);

/// Appends (key, trained value, epsilon) for the fact; model untouched.
Codebook grace_insert(const Codebook& codebook, const ModelState& model, const FactRecord& fact,
                      double epsilon, const SolverSettings& solver);

enum class EditMethod { rank_one, batched, codebook };

std::string to_string(EditMethod method);
EditMethod parse_edit_method(std::string_view name);

struct EditPlan {
  EditMethod method = EditMethod::rank_one;
  std::size_t layer = 1;       // rank_one / codebook layer, first layer of a batched range
  std::size_t layer_last = 1;  // last layer of a batched range
  std::size_t batch_size = 1;
  double epsilon = 1.0;
  SolverSettings solver;

  /// Throws std::invalid_argument naming the violated constraint.
  void validate(const ArchSpec& arch) const;
  /// Layers whose mlp_proj the plan modifies (none for codebook).
  std::vector<std::size_t> edited_layers() const;
};

/// Model plus an optional codebook adapter.
struct EditableState {
  ModelState model;
  std::optional<Codebook> codebook;

  const MlpAdapter* adapter() const { return codebook ? &*codebook : nullptr; }
  std::size_t edit_count() const {
    return model.edit_history_len + (codebook ? codebook->size() : 0);
  }
};

/// One editing step on a batch of facts (exactly one fact unless the plan is
/// batched). The input state is not modified.
EditableState apply_edit(const EditableState& state, const EditPlan& plan,
                         std::span<const FactRecord> facts, const CovarianceSet& covariances);
EditableState apply_single_edit(const EditableState& state, const EditPlan& plan,
                                const FactRecord& fact, const CovarianceSet& covariances);

}  // namespace editlab
