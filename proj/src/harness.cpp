#include "editlab/harness.hpp"

#include <algorithm>
#include <chrono>
#include <charconv>

#include "editlab/train.hpp"

namespace editlab {

void EvalSchedule::validate() const {
  if (points.empty()) throw std::invalid_argument("schedule: no evaluation points");
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i] == 0) throw std::invalid_argument("schedule: points must be positive");
    if (i && points[i] <= points[i - 1]) throw std::invalid_argument("schedule: points must be strictly increasing");
  }
}

EditScore score_individual(const ModelState& model, const MlpAdapter* adapter, const FactRecord& fact,
                           std::size_t paraphrases) {
  EditScore s;
  s.rel = first_token(model, fact.prompt, adapter) == fact.new_object ? 1.0 : 0.0;
  const std::size_t n = std::min(paraphrases, fact.paraphrases.size());
  if (n == 0) return s;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) hits += first_token(model, fact.paraphrases[i], adapter) == fact.new_object;
  s.gen = static_cast<double>(hits) / static_cast<double>(n);
  return s;
}

EditScore score_sequential(const ModelState& model, const MlpAdapter* adapter,
                           std::span<const FactRecord> facts, std::size_t paraphrases) {
  EditScore total;
  if (facts.empty()) return total;
  for (const auto& f : facts) {
    const auto s = score_individual(model, adapter, f, paraphrases);
    total.rel += s.rel;
    total.gen += s.gen;
  }
  total.rel /= static_cast<double>(facts.size());
  total.gen /= static_cast<double>(facts.size());
  return total;
}

ProbeMetrics probe_suite(const ModelState& model, const MlpAdapter* adapter, const Corpus& corpus,
                         const ModelState& judge, const ProbeSettings& settings) {
  if (corpus.base_facts.empty() || corpus.filler.empty() || corpus.icl.empty())
    throw std::invalid_argument("probe_suite: corpus probes are empty");
  ProbeMetrics m;
  m.locality = fact_recall(model, corpus.base_facts, false, adapter);

  std::vector<PerplexityReport> reports;
  const std::size_t n_lm = std::min(settings.lm_prompts, corpus.filler.size());
  for (std::size_t i = 0; i < n_lm; ++i) {
    const auto& sentence = corpus.filler[i];
    const std::size_t len = std::min(settings.prompt_length, sentence.size());
    const std::span<const TokenId> prompt(sentence.data(), len);
    const auto answer = generate(model, prompt, settings.generate_length, corpus.eos, adapter);
    reports.push_back(adjusted_perplexity(judge, prompt, answer, settings.ngram));
  }
  const auto summary = summarise(reports);
  m.lm_scored = summary.scored;
  m.lm_excluded = summary.excluded;
  if (summary.scored) {
    m.lm_adjusted_ppl = summary.mean_adjusted;
    m.lm_plain_ppl = summary.mean_plain;
  }

  std::size_t hits = 0;
  for (const auto& ex : corpus.icl) hits += first_token(model, ex.prompt, adapter) == ex.label;
  m.icl_accuracy = static_cast<double>(hits) / static_cast<double>(corpus.icl.size());
  return m;
}

double RunReport::edited_layer_r(const ReportRow& row) const {
  if (edited_layers.empty()) return 1.0;
  double s = 0.0;
  for (std::size_t l : edited_layers) s += row.layer_r.at(l);
  return s / static_cast<double>(edited_layers.size());
}

RunReport run_sequential(const ModelState& model0, const Corpus& corpus, const EditPlan& plan,
                         const CovarianceSet& covariances, const ModelState& judge,
                         const HarnessSettings& settings) {
  settings.schedule.validate();
  plan.validate(model0.arch);
  const auto& points = settings.schedule.points;
  const std::size_t total = settings.schedule.last();
  if (corpus.edit_facts.size() < total)
    throw std::invalid_argument("run_sequential: schedule needs " + std::to_string(total) +
                                " edit facts, corpus has " + std::to_string(corpus.edit_facts.size()));

  const auto clock_start = std::chrono::steady_clock::now();
  RunReport report;
  report.plan = plan;
  report.edited_layers = plan.edited_layers();
  report.judge_digest = hex_digest(judge.digest());
  report.model_digest = hex_digest(model0.digest());

  const std::span<const FactRecord> stream(corpus.edit_facts.data(), total);
  EditableState state{model0, std::nullopt};
  std::size_t t = 0, step = 0, next = 0;
  while (t < total) {
    const std::size_t b = std::min(plan.batch_size, total - t);
    const auto batch = stream.subspan(t, b);
    bool failed = false;
    try {
      state = apply_edit(state, plan, batch, covariances);
    } catch (const EditError& e) {
      if (settings.halt_on_error) throw;
      report.failures.push_back({step + 1, t + b, e.what()});
      failed = true;
    }
    t += b;
    ++step;
    if (t < points[next]) continue;

    ReportRow row;
    row.t = t;
    row.steps = step;
    if (!failed) row.individual = score_sequential(state.model, state.adapter(), batch, settings.paraphrases);
    row.sequential = score_sequential(state.model, state.adapter(), stream.first(t), settings.paraphrases);
    row.probes = probe_suite(state.model, state.adapter(), corpus, judge, settings.probes);
    for (const auto& s : layer_similarity(model0, state.model, t)) row.layer_r.push_back(s.r);
    row.failures = report.failures.size();
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count();
    report.rows.push_back(std::move(row));
    while (next < points.size() && points[next] <= t) ++next;
    if (next == points.size()) break;
  }
  return report;
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::layer: return "layer";
    case SweepAxis::batch_size: return "batch_size";
    case SweepAxis::epsilon: return "epsilon";
    case SweepAxis::method: return "method";
  }
  return "unknown";
}

SweepAxis parse_sweep_axis(std::string_view name) {
  if (name == "layer") return SweepAxis::layer;
  if (name == "batch_size") return SweepAxis::batch_size;
  if (name == "epsilon") return SweepAxis::epsilon;
  if (name == "method") return SweepAxis::method;
  throw std::invalid_argument("unknown sweep axis '" + std::string(name) + "'");
}

EditPlan default_plan(EditMethod method, std::size_t n_layers) {
  EditPlan p;
  p.method = method;
  switch (method) {
    case EditMethod::rank_one:
      p.layer = p.layer_last = n_layers / 4;
      break;
    case EditMethod::batched:
      p.layer = 0;
      p.layer_last = n_layers >= 2 ? n_layers - 2 : 0;
      break;
    case EditMethod::codebook:
      p.layer = p.layer_last = n_layers - 1;
      break;
  }
  return p;
}

namespace {

template <typename T>
T parse_number(const std::string& s, const char* what) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw std::invalid_argument(std::string("sweep: bad ") + what + " value '" + s + "'");
  return v;
}

}  // namespace

EditPlan sweep_plan(const EditPlan& base, SweepAxis axis, const std::string& value, std::size_t n_layers) {
  EditPlan p = base;
  switch (axis) {
    case SweepAxis::layer:
      p.layer = p.layer_last = parse_number<std::size_t>(value, "layer");
      break;
    case SweepAxis::batch_size:
      p.method = EditMethod::batched;
      p.batch_size = parse_number<std::size_t>(value, "batch size");
      break;
    case SweepAxis::epsilon:
      p.epsilon = parse_number<double>(value, "epsilon");
      break;
    case SweepAxis::method: {
      const auto d = default_plan(parse_edit_method(value), n_layers);
      p.method = d.method;
      p.layer = d.layer;
      p.layer_last = d.layer_last;
      if (p.method != EditMethod::batched) p.batch_size = 1;
      break;
    }
  }
  return p;
}

std::vector<SweepCell> sweep(SweepAxis axis, std::span<const std::string> values, const EditPlan& base,
                             const ModelState& model0, const Corpus& corpus,
                             const CovarianceSet& covariances, const ModelState& judge,
                             const HarnessSettings& settings) {
  std::vector<SweepCell> cells(values.size());
  const auto n = static_cast<std::ptrdiff_t>(values.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    auto& cell = cells[static_cast<std::size_t>(i)];
    cell.value = values[static_cast<std::size_t>(i)];
    try {
      const auto plan = sweep_plan(base, axis, cell.value, model0.arch.n_layers);
      cell.report = run_sequential(model0, corpus, plan, covariances, judge, settings);
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
  }
  return cells;
}

}  // namespace editlab
