#pragma once

// Explanatory analyses: parameter correlation between model versions,
// repetition-adjusted perplexity of generations under a frozen judge, and
// gradient-weighted attention flow on in-context prompts.

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "editlab/model.hpp"

namespace editlab {

class DiagnosticError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Pearson product-moment correlation of the flattened entries. Throws
/// std::invalid_argument on a shape mismatch or fewer than two entries and
/// DiagnosticError when either side has zero variance.
double pearson_similarity(std::span<const float> a, std::span<const float> b);
double pearson_similarity(const MatrixF& a, const MatrixF& b);

struct SimilarityRow {
  std::size_t layer = 0;
  std::size_t edit_count = 0;
  double r = 1.0;
};

/// Correlation of every layer's mlp_proj between two models of one arch.
std::vector<SimilarityRow> layer_similarity(const ModelState& original, const ModelState& edited,
                                            std::size_t edit_count);

/// Unique n-grams over the total number of n-grams.
double repetition_ratio(std::span<const TokenId> tokens, std::size_t n);

inline constexpr std::size_t kPerplexityWindow = 20;

struct PerplexityReport {
  double ppl = 0.0;
  double rho = 1.0;
  double adjusted = 0.0;
  std::size_t tokens_used = 0;
  bool excluded = false;
};

/// Perplexity of the first 20 answer tokens given the question under the
/// judge, times e^{1 - rho(answer)}. Answers shorter than 20 tokens come back
/// excluded with no score. Throws std::length_error when question + 20
/// tokens exceed the judge's context.
PerplexityReport adjusted_perplexity(const ModelState& judge, std::span<const TokenId> question,
                                     std::span<const TokenId> answer, std::size_t ngram = 2);

struct PerplexitySummary {
  double mean_adjusted = 0.0;  // over scored generations; 0 when none
  double mean_plain = 0.0;
  std::size_t scored = 0;
  std::size_t excluded = 0;
};

PerplexitySummary summarise(std::span<const PerplexityReport> reports);

enum class FlowClass : unsigned char { word_to_label, label_to_target, other };

struct SaliencyLayer {
  double s_wp = 0.0;
  double s_pq = 0.0;
  double s_ww = 0.0;
};

struct SaliencyReport {
  std::vector<std::size_t> label_positions;
  std::size_t target_position = 0;
  std::size_t count_wp = 0, count_pq = 0, count_ww = 0;
  std::vector<SaliencyLayer> layers;
};

/// Class of strict-lower-triangle entry (i, j), j < i.
FlowClass flow_class(std::size_t i, std::size_t j, std::span<const std::size_t> label_positions,
                     std::size_t target_position);

/// I_l = |sum_h A ⊙ dL/dA| per layer, L = cross-entropy of the gold label at
/// the target position. `prompt` ends at the target position.
std::vector<MatrixD> saliency_matrices(const ModelState& model, std::span<const TokenId> prompt,
                                       TokenId gold_label, const MlpAdapter* adapter = nullptr);

/// Means of I_l over the three position classes. Throws DiagnosticError
/// naming the empty class when one is empty.
SaliencyReport saliency_flows(const ModelState& model, std::span<const TokenId> prompt,
                              std::span<const std::size_t> label_positions,
                              std::size_t target_position, TokenId gold_label,
                              const MlpAdapter* adapter = nullptr);

}  // namespace editlab
