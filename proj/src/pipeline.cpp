#include "editlab/pipeline.hpp"

#include <fstream>
#include <set>

#include "editlab/checkpoint.hpp"
#include "editlab/report.hpp"
#include "editlab/train.hpp"

namespace editlab {

MissingArtifact::MissingArtifact(const std::filesystem::path& path, const std::string& hint)
    : std::runtime_error("missing " + path.string() + (hint.empty() ? "" : " (" + hint + ")")), path_(path) {}

Workspace workspace(const RunConfig& config) {
  const auto root = output_root(config);
  const auto run = root / config.digest();
  return {root / config.pretrain_digest() / "checkpoints", run / "reports", run / "logs"};
}

namespace {

void note(std::ostream* log, const std::string& msg) {
  if (log) *log << msg << '\n';
}

bool reusable(const std::filesystem::path& ckpt, const std::string& digest) {
  if (!std::filesystem::exists(ckpt)) return false;
  try {
    const auto header = read_checkpoint_header(ckpt);
    const auto it = header.find("config");
    return it != header.end() && it->second == digest;
  } catch (const CheckpointError&) {
    return false;
  }
}

}  // namespace

Pretrained pretrain(const RunConfig& config, bool fresh, std::ostream* log) {
  const auto ws = workspace(config);
  const auto digest = config.pretrain_digest();
  if (!fresh && reusable(ws.model(), digest) && reusable(ws.judge(), digest) &&
      std::filesystem::exists(ws.corpus())) {
    note(log, "reusing checkpoints in " + ws.checkpoints.string());
    return load_pretrained(config);
  }
  std::filesystem::create_directories(ws.checkpoints);
  Pretrained pre;
  pre.corpus = build_corpus(config.corpus);
  note(log, "corpus: " + std::to_string(pre.corpus.vocab.size()) + " tokens, " +
                std::to_string(pre.corpus.base_facts.size()) + " base facts, " +
                std::to_string(pre.corpus.edit_facts.size()) + " edit facts");
  TrainStats stats;
  pre.model = train(ModelState::initialise(config.arch, config.seed), pre.corpus, config.train, &stats);
  pre.judge = pre.model;
  note(log, "trained " + std::to_string(stats.steps) + " steps, loss " + format_number(stats.initial_loss) + " -> " +
                format_number(stats.final_loss) + ", base recall " +
                format_number(fact_recall(pre.model, pre.corpus.base_facts, false)));
  save_corpus(pre.corpus, ws.corpus());
  save_checkpoint(pre.model, ws.model(), digest);
  save_checkpoint(pre.judge, ws.judge(), digest);
  return pre;
}

Pretrained load_pretrained(const RunConfig& config) {
  const auto ws = workspace(config);
  const std::string hint = "run `editlab pretrain` with the same configuration first";
  for (const auto& p : {ws.model(), ws.judge(), ws.corpus()})
    if (!std::filesystem::exists(p)) throw MissingArtifact(p, hint);
  Pretrained pre;
  pre.corpus = load_corpus(ws.corpus());
  pre.model = load_checkpoint(ws.model(), &config.arch);
  pre.judge = load_checkpoint(ws.judge(), &config.arch);
  return pre;
}

std::vector<std::vector<TokenId>> covariance_prompts(const Corpus& corpus, std::uint64_t seed, std::size_t count) {
  std::mt19937_64 rng(seed ^ 0x636f766172ull);
  const std::size_t len = corpus.filler.empty() ? 32 : corpus.filler.front().size();
  std::vector<std::vector<TokenId>> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(corpus.sample_filler(rng, len));
  return out;
}

CovarianceSet covariances(const RunConfig& config, const Pretrained& pre, const std::vector<std::size_t>& layers,
                          std::ostream* log) {
  const auto ws = workspace(config);
  std::filesystem::create_directories(ws.checkpoints);
  const auto model_digest = hex_digest(pre.model.digest());
  const auto setting = config.ridge_setting() + "/n" + std::to_string(config.covariance_sentences);
  CovarianceSet set;
  std::vector<std::vector<TokenId>> prompts;
  for (std::size_t l : layers) {
    const auto path = ws.checkpoints / ("cov_layer" + std::to_string(l) + ".mat");
    if (auto cached = load_covariance(path, model_digest, l, setting)) {
      set.emplace(l, std::move(*cached));
      continue;
    }
    if (prompts.empty()) prompts = covariance_prompts(pre.corpus, config.seed, config.covariance_sentences);
    auto stats = estimate_covariance(pre.model, l, prompts, config.ridge);
    note(log, "covariance layer " + std::to_string(l) + ": " + std::to_string(stats.sample_count) +
                  " keys, ridge " + format_number(stats.ridge));
    save_covariance(stats, path, model_digest, setting);
    set.emplace(l, std::move(stats));
  }
  return set;
}

namespace {

HarnessSettings harness_settings(const RunConfig& config) {
  HarnessSettings h = config.harness;
  h.halt_on_error = config.halt_on_error;
  return h;
}

ReportContext context(const RunConfig& config, const std::string& cell) {
  ReportContext ctx;
  ctx.config_digest = config.digest();
  ctx.base_digest = config.digest();
  ctx.cell = cell;
  ctx.ngram = config.harness.probes.ngram;
  ctx.paraphrases = config.harness.paraphrases;
  return ctx;
}

void write_config_copy(const RunConfig& config, const Workspace& ws) {
  std::filesystem::create_directories(ws.logs);
  std::ofstream os(ws.logs / "config.ini", std::ios::trunc);
  os << "# digest " << config.digest() << '\n' << to_config_text(config);
}

}  // namespace

RunReport run_edit(const RunConfig& config, const Pretrained& pre, std::ostream* log) {
  const auto ws = workspace(config);
  const auto plan = config.edit_plan();
  const auto covs = covariances(config, pre, plan.edited_layers(), log);
  auto report = run_sequential(pre.model, pre.corpus, plan, covs, pre.judge, harness_settings(config));
  report.config_digest = config.digest();
  write_config_copy(config, ws);
  write_run_report(report, context(config, "-"), ws.reports, "edit_" + to_string(plan.method));
  note(log, "wrote " + (ws.reports / ("edit_" + to_string(plan.method) + ".csv")).string());
  return report;
}

std::vector<SweepCell> run_sweep(const RunConfig& config, const Pretrained& pre, std::ostream* log) {
  const auto ws = workspace(config);
  const auto base = config.edit_plan();
  const auto values = config.resolved_sweep_values();
  std::set<std::size_t> layers;
  for (const auto& v : values) {
    try {
      for (std::size_t l : sweep_plan(base, config.sweep_axis, v, config.arch.n_layers).edited_layers()) layers.insert(l);
    } catch (const std::exception&) {
      // reported by the cell itself
    }
  }
  const auto covs = covariances(config, pre, {layers.begin(), layers.end()}, log);
  auto cells = sweep(config.sweep_axis, values, base, pre.model, pre.corpus, covs, pre.judge, harness_settings(config));
  write_config_copy(config, ws);

  const std::string axis = to_string(config.sweep_axis);
  std::vector<std::filesystem::path> parts;
  for (auto& cell : cells) {
    if (!cell.report) {
      note(log, "sweep " + axis + "=" + cell.value + " failed: " + cell.error);
      continue;
    }
    cell.report->config_digest = config.digest();
    const std::string stem = "sweep_" + axis + "_" + cell.value;
    write_run_report(*cell.report, context(config, cell.value), ws.reports, stem);
    parts.push_back(ws.reports / (stem + "_long.csv"));
  }
  if (!parts.empty()) merge_reports(parts, ws.reports / ("sweep_" + axis + "_merged_long.csv"), false);
  note(log, "wrote " + std::to_string(parts.size()) + " sweep cells to " + ws.reports.string());
  return cells;
}

}  // namespace editlab
