#pragma once

// Sequential editing protocol and its metrics. Facts from the edit stream are
// applied in order, one editor step at a time; after each step that reaches a
// schedule point the state is scored on the latest edits (individual), on
// every edit so far (sequential) and on the probes.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "editlab/corpus.hpp"
#include "editlab/diagnostics.hpp"
#include "editlab/editors.hpp"

namespace editlab {

struct EvalSchedule {
  std::vector<std::size_t> points{1, 10, 20, 50, 100};

  /// Throws std::invalid_argument unless strictly increasing and positive.
  void validate() const;
  std::size_t last() const { return points.back(); }
};

struct EditScore {
  double rel = 0.0;
  double gen = 0.0;
};

/// rel: greedy answer to the edit prompt is the new object. gen: fraction of
/// the first `paraphrases` paraphrases answered with the new object.
EditScore score_individual(const ModelState& model, const MlpAdapter* adapter, const FactRecord& fact,
                           std::size_t paraphrases = 1);
/// Per-fact scores averaged over the facts.
EditScore score_sequential(const ModelState& model, const MlpAdapter* adapter,
                           std::span<const FactRecord> facts, std::size_t paraphrases = 1);

struct ProbeSettings {
  std::size_t lm_prompts = 8;
  std::size_t prompt_length = 8;
  std::size_t generate_length = 24;
  std::size_t ngram = 2;
};

struct ProbeMetrics {
  double locality = 0.0;
  std::optional<double> lm_adjusted_ppl;  // none when every generation was excluded
  std::optional<double> lm_plain_ppl;
  std::size_t lm_scored = 0;
  std::size_t lm_excluded = 0;
  double icl_accuracy = 0.0;
};

/// Locality recall on base facts, adjusted perplexity of greedy continuations
/// of filler prefixes under the judge, first-token accuracy on the ICL probe.
ProbeMetrics probe_suite(const ModelState& model, const MlpAdapter* adapter, const Corpus& corpus,
                         const ModelState& judge, const ProbeSettings& settings = {});

struct HarnessSettings {
  EvalSchedule schedule;
  ProbeSettings probes;
  std::size_t paraphrases = 1;
  bool halt_on_error = false;
};

struct EditFailure {
  std::size_t step = 0;
  std::size_t t = 0;  // edit count the failed step would have reached
  std::string message;
};

struct ReportRow {
  std::size_t t = 0;      // facts edited so far
  std::size_t steps = 0;  // editor calls so far
  EditScore individual;
  EditScore sequential;
  ProbeMetrics probes;
  std::vector<double> layer_r;  // mlp_proj correlation against model_0, every layer
  std::size_t failures = 0;     // failed steps so far
  double wall_seconds = 0.0;    // not part of the report payload
};

struct RunReport {
  std::string config_digest;
  std::string judge_digest;
  std::string model_digest;  // model_0
  EditPlan plan;
  std::vector<std::size_t> edited_layers;
  std::vector<ReportRow> rows;
  std::vector<EditFailure> failures;

  /// Mean correlation over the edited layers (1 for codebook runs).
  double edited_layer_r(const ReportRow& row) const;
};

/// Throws std::invalid_argument when the edit stream is shorter than the
/// schedule, EditError when halt_on_error is set and a step fails.
RunReport run_sequential(const ModelState& model0, const Corpus& corpus, const EditPlan& plan,
                         const CovarianceSet& covariances, const ModelState& judge,
                         const HarnessSettings& settings);

enum class SweepAxis { layer, batch_size, epsilon, method };

std::string to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(std::string_view name);

/// Method-specific default layers for an arch of `n_layers`.
EditPlan default_plan(EditMethod method, std::size_t n_layers);

/// `value` applied to `base` along `axis`. For the batch-size axis the
/// method becomes batched; for the layer axis a batched range collapses to
/// the single layer.
EditPlan sweep_plan(const EditPlan& base, SweepAxis axis, const std::string& value,
                    std::size_t n_layers);

struct SweepCell {
  std::string value;
  std::optional<RunReport> report;
  std::string error;
};

/// Independent run per value on the same model_0, corpus and judge. Cell
/// errors are captured in the cell.
std::vector<SweepCell> sweep(SweepAxis axis, std::span<const std::string> values, const EditPlan& base,
                             const ModelState& model0, const Corpus& corpus,
                             const CovarianceSet& covariances, const ModelState& judge,
                             const HarnessSettings& settings);

}  // namespace editlab
