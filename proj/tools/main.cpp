// editlab: pretrain / edit / sweep / diagnose / report.
// Exit codes: 0 ok, 1 configuration error, 2 runtime or editor failure,
// 3 report check failure.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "editlab/checkpoint.hpp"
#include "editlab/config.hpp"
#include "editlab/diagnostics.hpp"
#include "editlab/pipeline.hpp"
#include "editlab/report.hpp"
#include "editlab/train.hpp"

namespace {

using namespace editlab;

enum Exit { kOk = 0, kConfig = 1, kRuntime = 2, kCheck = 3 };

struct ConfigFlags {
  std::string file;
  std::vector<std::pair<std::string, std::string>> slots;  // key, value

  void attach(CLI::App* app) {
    app->add_option("-c,--config", file, "configuration file");
    slots.reserve(config_keys().size());
    for (const auto& k : config_keys()) {
      slots.emplace_back(k.key, std::string());
      app->add_option("--" + k.key, slots.back().second, k.doc + " [" + k.section + "]");
    }
  }

  RunConfig resolve(const CLI::App* app) const {
    std::map<std::string, std::string> overrides;
    for (const auto& [key, value] : slots)
      if (app->count("--" + key)) overrides[key] = value;
    return parse_config(file.empty() ? std::nullopt : std::optional<std::filesystem::path>(file), overrides);
  }
};

std::vector<std::vector<TokenId>> read_generation_log(const std::filesystem::path& path, const Vocabulary& vocab,
                                                      std::vector<std::vector<TokenId>>& answers) {
  // one generation per line: question tokens <TAB> answer tokens
  std::ifstream in(path);
  if (!in) throw MissingArtifact(path, "generation log");
  std::vector<std::vector<TokenId>> questions;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected question<TAB>answer");
    questions.push_back(vocab.encode(line.substr(0, tab)));
    answers.push_back(vocab.encode(line.substr(tab + 1)));
  }
  return questions;
}

int cmd_pretrain(const RunConfig& cfg, bool fresh) {
  const auto pre = pretrain(cfg, fresh, &std::cerr);
  const auto ws = workspace(cfg);
  std::cout << ws.model().string() << '\n' << ws.judge().string() << '\n';
  (void)pre;
  return kOk;
}

int cmd_edit(const RunConfig& cfg) {
  const auto pre = load_pretrained(cfg);
  const auto report = run_edit(cfg, pre, &std::cerr);
  for (const auto& f : report.failures) std::cerr << "edit step " << f.step << " (t=" << f.t << "): " << f.message << '\n';
  std::cout << (workspace(cfg).reports / ("edit_" + to_string(cfg.method) + ".csv")).string() << '\n';
  return kOk;
}

int cmd_sweep(const RunConfig& cfg) {
  const auto pre = load_pretrained(cfg);
  const auto cells = run_sweep(cfg, pre, &std::cerr);
  bool errored = false;
  for (const auto& c : cells) errored = errored || !c.report;
  std::cout << (workspace(cfg).reports / ("sweep_" + to_string(cfg.sweep_axis) + "_merged_long.csv")).string() << '\n';
  return errored ? kRuntime : kOk;
}

int cmd_diagnose(const RunConfig& cfg, const std::vector<std::string>& pair, bool saliency,
                 const std::string& generations) {
  const auto ws = workspace(cfg);
  const std::string digest = cfg.digest();
  bool did = false;
  if (!pair.empty()) {
    for (const auto& p : pair)
      if (!std::filesystem::exists(p)) throw MissingArtifact(p, "checkpoint");
    const auto a = load_checkpoint(pair[0]);
    const auto b = load_checkpoint(pair[1], &a.arch);
    const auto rows = layer_similarity(a, b, b.edit_history_len);
    write_similarity(rows, digest, ws.reports / "similarity.csv");
    for (const auto& r : rows) std::cout << "layer " << r.layer << " R " << format_number(r.r) << '\n';
    did = true;
  }
  if (saliency) {
    const auto pre = load_pretrained(cfg);
    std::vector<SaliencyReport> reports;
    for (const auto& ex : pre.corpus.icl) {
      const std::size_t labels[] = {ex.label_position};
      reports.push_back(saliency_flows(pre.model, ex.prompt, labels, ex.query_position(), ex.label));
    }
    write_saliency(reports, digest, ws.reports / "saliency_long.csv");
    for (std::size_t l = 0; l < cfg.arch.n_layers; ++l) {
      double wp = 0, pq = 0, ww = 0;
      for (const auto& r : reports) wp += r.layers[l].s_wp, pq += r.layers[l].s_pq, ww += r.layers[l].s_ww;
      const double n = static_cast<double>(reports.size());
      std::cout << "layer " << l << " s_wp " << format_number(wp / n) << " s_pq " << format_number(pq / n) << " s_ww "
                << format_number(ww / n) << '\n';
    }
    did = true;
  }
  if (!generations.empty()) {
    const auto pre = load_pretrained(cfg);
    std::vector<std::vector<TokenId>> answers;
    const auto questions = read_generation_log(generations, pre.corpus.vocab, answers);
    std::vector<PerplexityReport> reports;
    for (std::size_t i = 0; i < questions.size(); ++i)
      reports.push_back(adjusted_perplexity(pre.judge, questions[i], answers[i], cfg.harness.probes.ngram));
    write_perplexity(reports, hex_digest(pre.judge.digest()), digest, ws.reports / "perplexity.csv");
    const auto s = summarise(reports);
    std::cout << "scored " << s.scored << " excluded " << s.excluded << " mean adjusted ppl "
              << format_number(s.mean_adjusted) << '\n';
    did = true;
  }
  if (!did) throw CLI::ValidationError("diagnose", "nothing to do: pass --pair, --saliency or --generations");
  return kOk;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out, bool force, bool check) {
  std::vector<std::filesystem::path> files(inputs.begin(), inputs.end());
  for (const auto& f : files)
    if (!std::filesystem::exists(f)) throw MissingArtifact(f, "report");
  std::filesystem::path target;
  if (!out.empty()) {
    merge_reports(files, out, force);
    std::cout << out << '\n';
    target = out;
  }
  if (!check) return kOk;
  std::vector<std::string> problems;
  if (!target.empty()) {
    problems = check_report(target);
  } else {
    for (const auto& f : files)
      for (auto& p : check_report(f)) problems.push_back(std::move(p));
  }
  for (const auto& p : problems) std::cerr << p << '\n';
  return problems.empty() ? kOk : kCheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"editlab: sequential memory-editing laboratory on a micro transformer"};
  app.require_subcommand(1);

  auto* pre = app.add_subcommand("pretrain", "build the corpus, train model_0 and save model + judge");
  ConfigFlags pre_flags;
  pre_flags.attach(pre);
  bool fresh = false;
  pre->add_flag("--fresh", fresh, "retrain even when checkpoints exist");

  auto* edit = app.add_subcommand("edit", "sequential editing run with the configured plan");
  ConfigFlags edit_flags;
  edit_flags.attach(edit);

  auto* sw = app.add_subcommand("sweep", "one sequential run per value of an axis");
  ConfigFlags sweep_flags;
  sweep_flags.attach(sw);

  auto* diag = app.add_subcommand("diagnose", "parameter correlation, saliency flows, adjusted perplexity");
  ConfigFlags diag_flags;
  diag_flags.attach(diag);
  std::vector<std::string> pair;
  bool saliency = false;
  std::string generations;
  diag->add_option("--pair", pair, "two checkpoints to correlate layer by layer")->expected(2);
  diag->add_flag("--saliency", saliency, "saliency flows of model_0 on the ICL probe");
  diag->add_option("--generations", generations, "generation log to score: question<TAB>answer per line");

  auto* rep = app.add_subcommand("report", "merge long-format reports and check invariants");
  std::vector<std::string> inputs;
  std::string merged;
  bool force = false, check = false;
  rep->add_option("inputs", inputs, "*_long.csv files")->required();
  rep->add_option("-o,--out", merged, "merged output table");
  rep->add_flag("--force", force, "merge reports with different base digests");
  rep->add_flag("--check", check, "exit 3 when a report violates its invariants");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*pre) return cmd_pretrain(pre_flags.resolve(pre), fresh);
    if (*edit) return cmd_edit(edit_flags.resolve(edit));
    if (*sw) return cmd_sweep(sweep_flags.resolve(sw));
    if (*diag) return cmd_diagnose(diag_flags.resolve(diag), pair, saliency, generations);
    if (*rep) return cmd_report(inputs, merged, force, check);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const CLI::ValidationError& e) {
    std::cerr << e.what() << '\n';
    return kConfig;
  } catch (const MissingArtifact& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kOk;
}
