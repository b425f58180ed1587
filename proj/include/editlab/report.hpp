#pragma once

// Report files. For a run stem `S` in a reports directory:
//   S.csv        one row per evaluated edit count, named header
//   S_long.csv   digest,cell,t,metric,value (plot-ready)
//   S.digest     key=value sidecar: config/judge/model digests and plan
//   S.meta       wall times; the only file that differs between identical runs
// Every CSV row carries the producing config digest.

#include <filesystem>
#include <string>
#include <vector>

#include "editlab/diagnostics.hpp"
#include "editlab/harness.hpp"

namespace editlab {

class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ReportContext {
  std::string config_digest;
  std::string base_digest;  // digest merges are checked against
  std::string cell = "-";   // sweep value, "-" for a single run
  std::size_t ngram = 2;
  std::size_t paraphrases = 1;
};

/// Number formatting shared by every writer: shortest round-trip form.
std::string format_number(double v);

void write_run_report(const RunReport& report, const ReportContext& context,
                      const std::filesystem::path& dir, const std::string& stem);

/// Long-format rows of a RunReport, without header.
std::vector<std::string> long_rows(const RunReport& report, const ReportContext& context);

/// Header of the long format.
inline constexpr const char* kLongHeader = "digest,cell,t,metric,value";

void write_similarity(const std::vector<SimilarityRow>& rows, const std::string& digest,
                      const std::filesystem::path& path);
void write_saliency(const std::vector<SaliencyReport>& reports, const std::string& digest,
                    const std::filesystem::path& path);
void write_perplexity(const std::vector<PerplexityReport>& reports, const std::string& judge_digest,
                      const std::string& digest, const std::filesystem::path& path);

/// Reads key=value lines.
std::map<std::string, std::string> read_sidecar(const std::filesystem::path& path);

/// Concatenates long-format files into one table. Each input's sidecar
/// (`<stem>.digest` beside `<stem>_long.csv`) must carry the same base digest
/// unless `force`; throws ReportError otherwise.
void merge_reports(const std::vector<std::filesystem::path>& long_files, const std::filesystem::path& out,
                   bool force);

/// Violations of the report invariants in a long-format file: scores outside
/// [0,1], perplexities below 1, t not sorted within a cell. Empty when clean.
std::vector<std::string> check_report(const std::filesystem::path& long_file);

}  // namespace editlab
