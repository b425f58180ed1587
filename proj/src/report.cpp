#include "editlab/report.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace editlab {

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw ReportError("cannot write " + path.string());
  return os;
}

std::string opt(const std::optional<double>& v) { return v ? format_number(*v) : ""; }

std::string csv_field(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

std::string layers_text(const std::vector<std::size_t>& layers) {
  std::string s;
  for (std::size_t i = 0; i < layers.size(); ++i) s += (i ? ";" : "") + std::to_string(layers[i]);
  return s.empty() ? "none" : s;
}

}  // namespace

std::vector<std::string> long_rows(const RunReport& report, const ReportContext& ctx) {
  std::vector<std::string> out;
  for (const auto& row : report.rows) {
    const std::string prefix = ctx.config_digest + "," + ctx.cell + "," + std::to_string(row.t) + ",";
    auto put = [&](const std::string& name, double v) { out.push_back(prefix + name + "," + format_number(v)); };
    put("steps", static_cast<double>(row.steps));
    put("ind_rel", row.individual.rel);
    put("ind_gen", row.individual.gen);
    put("seq_rel", row.sequential.rel);
    put("seq_gen", row.sequential.gen);
    put("locality", row.probes.locality);
    if (row.probes.lm_adjusted_ppl) put("lm_adjusted_ppl", *row.probes.lm_adjusted_ppl);
    if (row.probes.lm_plain_ppl) put("lm_plain_ppl", *row.probes.lm_plain_ppl);
    put("lm_scored", static_cast<double>(row.probes.lm_scored));
    put("lm_excluded", static_cast<double>(row.probes.lm_excluded));
    put("icl_accuracy", row.probes.icl_accuracy);
    put("edited_r", report.edited_layer_r(row));
    for (std::size_t l = 0; l < row.layer_r.size(); ++l) put("r_layer" + std::to_string(l), row.layer_r[l]);
    put("failures", static_cast<double>(row.failures));
  }
  return out;
}

void write_run_report(const RunReport& report, const ReportContext& ctx, const std::filesystem::path& dir,
                      const std::string& stem) {
  const std::size_t n_layers = report.rows.empty() ? 0 : report.rows.front().layer_r.size();
  {
    auto os = open_out(dir / (stem + ".csv"));
    os << "digest,cell,t,steps,ind_rel,ind_gen,seq_rel,seq_gen,locality,lm_adjusted_ppl,lm_plain_ppl,"
          "lm_scored,lm_excluded,icl_accuracy,edited_r";
    for (std::size_t l = 0; l < n_layers; ++l) os << ",r_layer" << l;
    os << ",failures\n";
    for (const auto& row : report.rows) {
      os << ctx.config_digest << ',' << ctx.cell << ',' << row.t << ',' << row.steps << ','
         << format_number(row.individual.rel) << ',' << format_number(row.individual.gen) << ','
         << format_number(row.sequential.rel) << ',' << format_number(row.sequential.gen) << ','
         << format_number(row.probes.locality) << ',' << opt(row.probes.lm_adjusted_ppl) << ','
         << opt(row.probes.lm_plain_ppl) << ',' << row.probes.lm_scored << ',' << row.probes.lm_excluded << ','
         << format_number(row.probes.icl_accuracy) << ',' << format_number(report.edited_layer_r(row));
      for (double r : row.layer_r) os << ',' << format_number(r);
      os << ',' << row.failures << '\n';
    }
  }
  {
    auto os = open_out(dir / (stem + "_long.csv"));
    os << kLongHeader << '\n';
    for (const auto& line : long_rows(report, ctx)) os << line << '\n';
  }
  {
    auto os = open_out(dir / (stem + ".digest"));
    os << "config_digest=" << ctx.config_digest << '\n'
       << "base_digest=" << ctx.base_digest << '\n'
       << "cell=" << ctx.cell << '\n'
       << "judge_digest=" << report.judge_digest << '\n'
       << "model_digest=" << report.model_digest << '\n'
       << "method=" << to_string(report.plan.method) << '\n'
       << "edited_layers=" << layers_text(report.edited_layers) << '\n'
       << "batch_size=" << report.plan.batch_size << '\n'
       << "epsilon=" << format_number(report.plan.epsilon) << '\n'
       << "residual_spread=equal_fraction_ascending\n"
       << "ngram=" << ctx.ngram << '\n'
       << "paraphrases=" << ctx.paraphrases << '\n'
       << "failures=" << report.failures.size() << '\n';
    for (const auto& f : report.failures)
      os << "failure=" << f.step << ',' << f.t << ',' << csv_field(f.message) << '\n';
  }
  {
    auto os = open_out(dir / (stem + ".meta"));
    os << "config_digest=" << ctx.config_digest << '\n';
    for (const auto& row : report.rows) os << "wall_seconds_t" << row.t << '=' << format_number(row.wall_seconds) << '\n';
  }
}

void write_similarity(const std::vector<SimilarityRow>& rows, const std::string& digest,
                      const std::filesystem::path& path) {
  auto os = open_out(path);
  os << "digest,layer,t,r\n";
  for (const auto& r : rows) os << digest << ',' << r.layer << ',' << r.edit_count << ',' << format_number(r.r) << '\n';
}

void write_saliency(const std::vector<SaliencyReport>& reports, const std::string& digest,
                    const std::filesystem::path& path) {
  auto os = open_out(path);
  os << "digest,prompt,layer,metric,value\n";
  for (std::size_t p = 0; p < reports.size(); ++p)
    for (std::size_t l = 0; l < reports[p].layers.size(); ++l) {
      const auto& s = reports[p].layers[l];
      os << digest << ',' << p << ',' << l << ",s_wp," << format_number(s.s_wp) << '\n';
      os << digest << ',' << p << ',' << l << ",s_pq," << format_number(s.s_pq) << '\n';
      os << digest << ',' << p << ',' << l << ",s_ww," << format_number(s.s_ww) << '\n';
    }
}

void write_perplexity(const std::vector<PerplexityReport>& reports, const std::string& judge_digest,
                      const std::string& digest, const std::filesystem::path& path) {
  auto os = open_out(path);
  os << "digest,judge_digest,generation,ppl,rho,adjusted_ppl,tokens_used,excluded\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    os << digest << ',' << judge_digest << ',' << i << ',' << (r.excluded ? "" : format_number(r.ppl)) << ','
       << format_number(r.rho) << ',' << (r.excluded ? "" : format_number(r.adjusted)) << ',' << r.tokens_used
       << ',' << (r.excluded ? 1 : 0) << '\n';
  }
}

std::map<std::string, std::string> read_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ReportError("missing sidecar " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv.emplace(line.substr(0, eq), line.substr(eq + 1));
  }
  return kv;
}

namespace {

std::filesystem::path sidecar_for(const std::filesystem::path& long_file) {
  std::string name = long_file.filename().string();
  const std::string suffix = "_long.csv";
  if (name.size() <= suffix.size() || name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0)
    throw ReportError(long_file.string() + ": expected a *_long.csv report");
  return long_file.parent_path() / (name.substr(0, name.size() - suffix.size()) + ".digest");
}

std::vector<std::string> read_long(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ReportError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kLongHeader)
    throw ReportError(path.string() + ": not a long-format report (header mismatch)");
  std::vector<std::string> rows;
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(line);
  return rows;
}

}  // namespace

void merge_reports(const std::vector<std::filesystem::path>& long_files, const std::filesystem::path& out,
                   bool force) {
  if (long_files.empty()) throw ReportError("merge: no input reports");
  std::string base;
  std::vector<std::string> rows;
  for (const auto& f : long_files) {
    const auto side = read_sidecar(sidecar_for(f));
    const auto it = side.find("base_digest");
    if (it == side.end()) throw ReportError(f.string() + ": sidecar has no base_digest");
    if (base.empty()) base = it->second;
    if (it->second != base && !force)
      throw ReportError("merge: " + f.string() + " has base digest " + it->second + ", expected " + base +
                        " (use --force to merge anyway)");
    for (auto& r : read_long(f)) rows.push_back(std::move(r));
  }
  auto os = open_out(out);
  os << kLongHeader << '\n';
  for (const auto& r : rows) os << r << '\n';
}

std::vector<std::string> check_report(const std::filesystem::path& long_file) {
  std::vector<std::string> problems;
  const auto rows = read_long(long_file);
  static const std::set<std::string> unit = {"ind_rel", "ind_gen", "seq_rel", "seq_gen", "locality", "icl_accuracy"};
  std::map<std::pair<std::string, std::string>, long long> last_t;  // (digest, cell) -> t
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::vector<std::string> f;
    std::stringstream ss(rows[i]);
    std::string item;
    while (std::getline(ss, item, ',')) f.push_back(item);
    const std::string where = long_file.string() + ":" + std::to_string(i + 2);
    if (f.size() != 5) {
      problems.push_back(where + ": expected 5 fields");
      continue;
    }
    double value = 0.0;
    long long t = 0;
    auto [p1, e1] = std::from_chars(f[4].data(), f[4].data() + f[4].size(), value);
    auto [p2, e2] = std::from_chars(f[2].data(), f[2].data() + f[2].size(), t);
    if (e1 != std::errc() || e2 != std::errc()) {
      problems.push_back(where + ": non-numeric t or value");
      continue;
    }
    const std::string& metric = f[3];
    if (unit.count(metric) && !(value >= 0.0 && value <= 1.0))
      problems.push_back(where + ": " + metric + " = " + f[4] + " outside [0,1]");
    if (metric.ends_with("_ppl") && !(value >= 1.0)) problems.push_back(where + ": " + metric + " = " + f[4] + " below 1");
    if ((metric == "edited_r" || metric.starts_with("r_layer")) && !(std::abs(value) <= 1.0 + 1e-9))
      problems.push_back(where + ": " + metric + " = " + f[4] + " outside [-1,1]");
    const auto key = std::make_pair(f[0], f[1]);
    auto it = last_t.find(key);
    if (it != last_t.end() && t < it->second) problems.push_back(where + ": rows not sorted by t");
    last_t[key] = t;
  }
  return problems;
}

}  // namespace editlab
