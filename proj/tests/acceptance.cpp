// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Seed models are pretrained with the default configuration
// and cached under EDITLAB_ACCEPTANCE_CACHE (digest-checked, so a stale cache
// is retrained rather than reused).

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "editlab/codebook.hpp"
#include "editlab/config.hpp"
#include "editlab/diagnostics.hpp"
#include "editlab/editors.hpp"
#include "editlab/harness.hpp"
#include "editlab/pipeline.hpp"
#include "editlab/report.hpp"
#include "support.hpp"

using namespace editlab;

namespace {

constexpr int kSeeds = 5;

struct Verdict {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [violated: " << what << "]";
    }
  }
};

int failures = 0;

void report(const char* id, const char* title, const std::function<void(Verdict&)>& body) {
  Verdict v;
  const auto start = std::chrono::steady_clock::now();
  try {
    body(v);
  } catch (const std::exception& e) {
    v.pass = false;
    v.detail << " [exception: " << e.what() << "]";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!v.pass) ++failures;
  std::printf("%s %s  %s (%.1fs) %s\n", id, v.pass ? "PASS" : "FAIL", title, secs, v.detail.str().c_str());
  std::fflush(stdout);
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", x);
  return buf;
}

// ---- random linear-algebra instances ----------------------------------------

Eigen::MatrixXd to_eigen(const MatrixD& m) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = m(i, j);
  return out;
}

MatrixD from_eigen(const Eigen::MatrixXd& e) {
  MatrixD m(e.rows(), e.cols());
  for (Eigen::Index i = 0; i < e.rows(); ++i)
    for (Eigen::Index j = 0; j < e.cols(); ++j) m(i, j) = e(i, j);
  return m;
}

Eigen::MatrixXd gaussian(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

/// Constrained least squares by its KKT system: minimise the C-weighted
/// change subject to W' k = v, one output row at a time.
Eigen::MatrixXd kkt_oracle(const Eigen::MatrixXd& w, const Eigen::MatrixXd& c, const Eigen::MatrixXd& keys,
                           const Eigen::MatrixXd& values) {
  const Eigen::Index n = c.rows(), b = keys.cols();
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + b, n + b);
  kkt.topLeftCorner(n, n) = 2.0 * c;
  kkt.topRightCorner(n, b) = keys;
  kkt.bottomLeftCorner(b, n) = keys.transpose();
  const auto lu = kkt.fullPivLu();
  const Eigen::MatrixXd residual = values - w * keys;
  Eigen::MatrixXd out = w;
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + b);
    rhs.tail(b) = residual.row(i).transpose();
    out.row(i) += lu.solve(rhs).head(n).transpose();
  }
  return out;
}

// ---- seed models -------------------------------------------------------------

struct Seed {
  RunConfig config;
  Pretrained pre;
  CovarianceSet covs;
};

std::vector<Seed>& seeds() {
  static std::vector<Seed> all = [] {
    std::vector<Seed> out;
    for (int s = 1; s <= kSeeds; ++s) {
      Seed seed;
      seed.config = parse_config(std::nullopt, {{"seed", std::to_string(s)}, {"out_dir", EDITLAB_ACCEPTANCE_CACHE}});
      const auto t0 = std::chrono::steady_clock::now();
      seed.pre = pretrain(seed.config);
      std::vector<std::size_t> layers;
      for (std::size_t l = 0; l < seed.config.arch.n_layers; ++l) layers.push_back(l);
      seed.covs = covariances(seed.config, seed.pre, layers);
      std::fprintf(stderr, "seed %d ready (%.1fs), base recall %.3f\n", s,
                   std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(),
                   fact_recall(seed.pre.model, seed.pre.corpus.base_facts, false));
      out.push_back(std::move(seed));
    }
    return out;
  }();
  return all;
}

RunReport run(const Seed& s, EditPlan plan, std::vector<std::size_t> schedule) {
  HarnessSettings hs = s.config.harness;
  hs.schedule.points = std::move(schedule);
  return run_sequential(s.pre.model, s.pre.corpus, plan, s.covs, s.pre.judge, hs);
}

const ReportRow& row_at(const RunReport& r, std::size_t t) {
  for (const auto& row : r.rows)
    if (row.t == t) return row;
  throw std::runtime_error("no report row at t=" + std::to_string(t));
}

// Runs cached across criteria, keyed by a label.
std::map<std::string, std::vector<RunReport>>& run_cache() {
  static std::map<std::string, std::vector<RunReport>> cache;
  return cache;
}

const std::vector<RunReport>& runs(const std::string& key, const EditPlan& plan, const std::vector<std::size_t>& schedule) {
  auto& cache = run_cache();
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  std::vector<RunReport> out;
  for (const auto& s : seeds()) out.push_back(run(s, plan, schedule));
  return cache.emplace(key, std::move(out)).first->second;
}

template <typename F>
double mean_over(const std::vector<RunReport>& reports, F&& f) {
  double s = 0.0;
  for (const auto& r : reports) s += f(r);
  return s / static_cast<double>(reports.size());
}

double ppl_of(const ReportRow& row) {
  if (!row.probes.lm_adjusted_ppl) throw std::runtime_error("LM probe excluded every generation");
  return *row.probes.lm_adjusted_ppl;
}

bool same_probes(const ProbeMetrics& a, const ProbeMetrics& b) {
  return a.locality == b.locality && a.lm_adjusted_ppl == b.lm_adjusted_ppl && a.lm_plain_ppl == b.lm_plain_ppl &&
         a.lm_scored == b.lm_scored && a.lm_excluded == b.lm_excluded && a.icl_accuracy == b.icl_accuracy;
}

// ---- file comparison for the determinism check ---------------------------------

// Reports and checkpoints; wall-time sidecars and the run logs (which record
// the output root) are left out.
std::map<std::string, std::string> payload_files(const std::filesystem::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().extension() == ".meta") continue;
    const auto dir = e.path().parent_path().filename();
    if (dir != "reports" && dir != "checkpoints") continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    out[std::filesystem::relative(e.path(), root).string()] = ss.str();
  }
  return out;
}

}  // namespace

int main() {
  report("A1", "rank-one update: constraint and KKT oracle", [](Verdict& v) {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> dim(4, 12);
    double worst_constraint = 0.0, worst_oracle = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
      const int n = dim(rng), m = dim(rng);
      const Eigen::MatrixXd w = gaussian(m, n, rng);
      const Eigen::MatrixXd a = gaussian(n, 2 * n, rng);
      const Eigen::MatrixXd c = a * a.transpose() / (2.0 * n) + 1e-2 * Eigen::MatrixXd::Identity(n, n);
      const Eigen::VectorXd k = gaussian(n, 1, rng), val = gaussian(m, 1, rng);
      const Vec kv(k.data(), k.data() + n), vv(val.data(), val.data() + m);
      const Eigen::MatrixXd out = to_eigen(rank_one_edit(from_eigen(w), from_eigen(c), kv, vv));
      worst_constraint = std::max(worst_constraint, (out * k - val).cwiseAbs().maxCoeff());
      worst_oracle = std::max(worst_oracle, (out - kkt_oracle(w, c, k, val)).cwiseAbs().maxCoeff());
    }
    v.detail << "200 instances, max |W'k - v| " << worst_constraint << ", max |W' - oracle| " << worst_oracle;
    v.require(worst_constraint <= 1e-5, "|W'k - v|_inf <= 1e-5");
    v.require(worst_oracle <= 1e-4, "oracle agreement <= 1e-4");
  });

  report("A2", "batched update: single key and orthonormal keys", [](Verdict& v) {
    std::mt19937_64 rng(77);
    std::uniform_int_distribution<int> dim(4, 12);
    double worst_single = 0.0, worst_ortho = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const int n = dim(rng), m = dim(rng);
      const Eigen::MatrixXd w = gaussian(m, n, rng);
      const Eigen::MatrixXd a = gaussian(n, 2 * n, rng);
      const Eigen::MatrixXd c = a * a.transpose() / (2.0 * n) + 1e-2 * Eigen::MatrixXd::Identity(n, n);
      const Eigen::MatrixXd k = gaussian(n, 1, rng), val = gaussian(m, 1, rng);
      const auto one = rank_one_edit(from_eigen(w), from_eigen(c), Vec(k.data(), k.data() + n),
                                     Vec(val.data(), val.data() + m));
      const auto batch = batched_edit(from_eigen(w), from_eigen(c), from_eigen(k), from_eigen(val));
      worst_single = std::max(worst_single, (to_eigen(one) - to_eigen(batch)).cwiseAbs().maxCoeff());

      // orthonormal keys, C = I: delta = R K^T
      const int b = 1 + trial % std::min(n, 6);
      const Eigen::MatrixXd q = gaussian(n, n, rng).householderQr().householderQ();
      const Eigen::MatrixXd keys = q.leftCols(b);
      const Eigen::MatrixXd values = gaussian(m, b, rng);
      const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
      const auto out = batched_edit(from_eigen(w), from_eigen(eye), from_eigen(keys), from_eigen(values));
      const Eigen::MatrixXd expected = w + (values - w * keys) * keys.transpose();
      worst_ortho = std::max(worst_ortho, (to_eigen(out) - expected).cwiseAbs().maxCoeff());
    }
    v.detail << "b=1 vs rank-one " << worst_single << ", orthonormal vs R K^T " << worst_ortho;
    v.require(worst_single <= 1e-6, "b=1 agreement <= 1e-6");
    v.require(worst_ortho <= 1e-6, "orthonormal-key agreement <= 1e-6");
  });

  report("A3", "codebook edits leave the model and probes untouched", [](Verdict& v) {
    std::size_t checked_inputs = 0, reliability_misses = 0, probe_mismatches = 0, logit_mismatches = 0;
    for (const auto& s : seeds()) {
      const auto& model = s.pre.model;
      const auto& corpus = s.pre.corpus;
      EditPlan plan = default_plan(EditMethod::codebook, model.arch.n_layers);
      plan.epsilon = 1.0;
      plan.solver = s.config.solver;
      const auto base = probe_suite(model, nullptr, corpus, s.pre.judge, s.config.harness.probes);
      const auto digest = model.digest();
      EditableState state{model, std::nullopt};
      const auto& points = s.config.harness.schedule.points;
      for (std::size_t t = 1; t <= points.back(); ++t) {
        const auto& fact = corpus.edit_facts[t - 1];
        state = apply_single_edit(state, plan, fact, s.covs);
        reliability_misses += score_individual(state.model, state.adapter(), fact).rel != 1.0;
        if (std::find(points.begin(), points.end(), t) != points.end())
          probe_mismatches += !same_probes(probe_suite(state.model, state.adapter(), corpus, s.pre.judge,
                                                       s.config.harness.probes),
                                           base);
      }
      v.require(state.model.digest() == digest, "parameters unchanged");
      // every probe and fact input whose keys all fall outside the radii
      std::vector<std::vector<TokenId>> inputs;
      for (const auto& f : corpus.base_facts) inputs.push_back(f.prompt);
      for (const auto& f : corpus.edit_facts)
        for (const auto& p : f.paraphrases) inputs.push_back(p);
      for (const auto& f : corpus.filler) inputs.push_back(f);
      for (const auto& ex : corpus.icl) inputs.push_back(ex.prompt);
      ForwardOptions with;
      with.trace = true;
      with.adapter = state.adapter();
      for (const auto& in : inputs) {
        const auto edited = forward(model, in, with);
        const auto& hits = edited.trace->layers[plan.layer].adapter_hit;
        if (std::find(hits.begin(), hits.end(), true) != hits.end()) continue;
        ++checked_inputs;
        logit_mismatches += !(forward(model, in).logits == edited.logits);
      }
    }
    v.detail << kSeeds << " seeds x 100 edits, eps 1: reliability misses " << reliability_misses
             << ", probe mismatches " << probe_mismatches << ", out-of-radius inputs " << checked_inputs
             << " with " << logit_mismatches << " logit mismatches";
    v.require(reliability_misses == 0, "individual reliability 1 on every edit");
    v.require(probe_mismatches == 0, "probes bit-identical");
    v.require(checked_inputs > 0 && logit_mismatches == 0, "out-of-radius logits bit-identical");
  });

  report("A4", "codebook radius trade-off", [](Verdict& v) {
    const double radii[] = {1, 5, 10, 20};
    std::vector<double> gen, rel, loc;
    for (double eps : radii) {
      EditPlan plan = default_plan(EditMethod::codebook, seeds()[0].config.arch.n_layers);
      plan.epsilon = eps;
      plan.solver = seeds()[0].config.solver;
      const auto& rs = runs("codebook_eps" + std::to_string(eps), plan, {100});
      gen.push_back(mean_over(rs, [](const RunReport& r) { return row_at(r, 100).sequential.gen; }));
      rel.push_back(mean_over(rs, [](const RunReport& r) { return row_at(r, 100).sequential.rel; }));
      loc.push_back(mean_over(rs, [](const RunReport& r) { return row_at(r, 100).probes.locality; }));
    }
    v.detail << "t=100 mean over " << kSeeds << " seeds; eps 1/5/10/20 seq gen";
    for (double g : gen) v.detail << ' ' << fmt(g);
    v.detail << ", locality";
    for (double l : loc) v.detail << ' ' << fmt(l);
    v.detail << ", eps 1 seq rel " << fmt(rel[0]);
    v.require(gen[0] < rel[0], "eps 1: generalisation < reliability");
    for (std::size_t i = 1; i < gen.size(); ++i) {
      v.require(gen[i] >= gen[i - 1], "generalisation non-decreasing in eps");
      v.require(loc[i] <= loc[i - 1], "locality non-increasing in eps");
    }
  });

  report("A5", "gradients against central differences", [](Verdict& v) {
    std::mt19937_64 rng(99);
    double worst_att = 0.0, worst_hid = 0.0;
    std::size_t pairs = 0;
    for (std::uint64_t seed = 0; seed < 24; ++seed) {
      ArchSpec arch = testing::tiny_arch(12 + seed % 5);
      arch.n_layers = 1 + seed % 3;
      arch.n_heads = 1 + seed % 2;
      const auto model = testing::random_model(arch, seed + 500);
      const std::size_t len = 3 + seed % 6;
      const auto tokens = testing::random_tokens(len, arch.vocab_size, rng);
      std::vector<std::size_t> targets;
      for (std::size_t i = 1; i < len; ++i) targets.push_back(i);

      // attention: every visible entry of every layer and head
      const auto grads = attention_saliency(model, tokens, targets);
      double scale = 0.0;
      for (const auto& layer : grads)
        for (const auto& g : layer)
          for (double x : g.flat()) scale = std::max(scale, std::abs(x));
      const double eps_att = 1e-3;
      for (std::size_t l = 0; l < arch.n_layers; ++l)
        for (std::size_t h = 0; h < arch.n_heads; ++h)
          for (std::size_t i = 0; i < len; ++i)
            for (std::size_t j = 0; j <= i; ++j) {
              AttentionNudge up{l, h, i, j, eps_att}, down{l, h, i, j, -eps_att};
              ForwardOptions ou, od;
              ou.nudge = &up;
              od.nudge = &down;
              const double fd =
                  (sequence_loss(model, tokens, targets, ou) - sequence_loss(model, tokens, targets, od)) / (2 * eps_att);
              const double err = std::abs(grads[l][h](i, j) - fd) / std::max({std::abs(fd), 1e-3 * scale, 1e-300});
              worst_att = std::max(worst_att, err);
            }

      // hidden state: a perturbed copy of the model's own state at a random site
      ForwardOptions tr;
      tr.trace = true;
      const auto fr = forward(model, tokens, tr);
      const std::size_t layer = seed % arch.n_layers, pos = seed % (len - 1);
      Vec injected(fr.trace->layers[layer].hidden_out.row(pos).begin(), fr.trace->layers[layer].hidden_out.row(pos).end());
      std::normal_distribution<double> jitter(0.0, 0.1);
      for (auto& x : injected) x += jitter(rng);
      const auto g = hidden_grad(model, tokens, layer, pos, injected, targets);
      double gscale = 0.0;
      for (double x : g) gscale = std::max(gscale, std::abs(x));
      const double eps_hid = 1e-4;
      for (std::size_t d = 0; d < injected.size(); ++d) {
        HiddenSubstitution up{layer, pos, injected}, down{layer, pos, injected};
        up.value[d] += eps_hid;
        down.value[d] -= eps_hid;
        ForwardOptions ou, od;
        ou.substitution = &up;
        od.substitution = &down;
        const double fd =
            (sequence_loss(model, tokens, targets, ou) - sequence_loss(model, tokens, targets, od)) / (2 * eps_hid);
        worst_hid = std::max(worst_hid, std::abs(g[d] - fd) / std::max({std::abs(fd), 1e-3 * gscale, 1e-300}));
      }
      ++pairs;
    }
    v.detail << pairs << " (model, prompt) pairs, worst relative error: attention " << worst_att << ", hidden "
             << worst_hid;
    v.require(pairs >= 20, ">= 20 pairs");
    v.require(worst_att <= 1e-3 && worst_hid <= 1e-3, "relative error <= 1e-3");
  });

  report("A6", "parameter correlation falls with sequential edits", [](Verdict& v) {
    const auto& s0 = seeds()[0];
    EditPlan plan = s0.config.edit_plan();  // rank-one at the default layer
    const auto& rs = runs("rank_one_default", plan, {1, 50});
    const double r1 = mean_over(rs, [](const RunReport& r) { return r.edited_layer_r(row_at(r, 1)); });
    const double r50 = mean_over(rs, [](const RunReport& r) { return r.edited_layer_r(row_at(r, 50)); });
    v.detail << "layer " << plan.layer << ", mean over " << kSeeds << " seeds: R(t=1) " << fmt(r1) << ", R(t=50) "
             << fmt(r50);
    v.require(r1 >= 0.99, "R after 1 edit >= 0.99");
    v.require(r50 < r1, "R after 50 edits < R after 1");
  });

  report("A7", "shallow edits damage more than deep edits", [](Verdict& v) {
    const auto& s0 = seeds()[0];
    const std::size_t deepest = s0.config.arch.n_layers - 1;
    struct Damage {
      double ppl1, ppl100, loc1, loc100;
    };
    auto damage = [&](std::size_t layer) {
      EditPlan plan = s0.config.edit_plan();
      plan.layer = plan.layer_last = layer;
      const auto& rs = runs("rank_one_L" + std::to_string(layer), plan, {1, 100});
      return Damage{mean_over(rs, [](const RunReport& r) { return ppl_of(row_at(r, 1)); }),
                    mean_over(rs, [](const RunReport& r) { return ppl_of(row_at(r, 100)); }),
                    mean_over(rs, [](const RunReport& r) { return row_at(r, 1).probes.locality; }),
                    mean_over(rs, [](const RunReport& r) { return row_at(r, 100).probes.locality; })};
    };
    const auto shallow = damage(0), deep = damage(deepest);
    v.detail << "mean over " << kSeeds << " seeds, t=1 -> t=100: layer 0 ppl " << fmt(shallow.ppl1) << " -> "
             << fmt(shallow.ppl100) << ", locality " << fmt(shallow.loc1) << " -> " << fmt(shallow.loc100) << "; layer "
             << deepest << " ppl " << fmt(deep.ppl1) << " -> " << fmt(deep.ppl100) << ", locality " << fmt(deep.loc1)
             << " -> " << fmt(deep.loc100);
    v.require(shallow.ppl100 > shallow.ppl1, "shallow edits raise perplexity");
    v.require(shallow.loc100 < shallow.loc1, "shallow edits lower locality");
    v.require(deep.ppl100 - deep.ppl1 < shallow.ppl100 - shallow.ppl1, "deep perplexity rise smaller");
    v.require(deep.loc1 - deep.loc100 < shallow.loc1 - shallow.loc100, "deep locality loss smaller");
  });

  report("A8", "one large batch versus many single edits", [](Verdict& v) {
    const auto& s0 = seeds()[0];
    EditPlan plan = default_plan(EditMethod::batched, s0.config.arch.n_layers);
    plan.solver = s0.config.solver;
    plan.batch_size = 1;
    const auto& single = runs("batched_b1", plan, {100});
    plan.batch_size = 100;
    const auto& whole = runs("batched_b100", plan, {100});
    auto r_of = [](const RunReport& r) { return r.edited_layer_r(row_at(r, 100)); };
    auto loc_of = [](const RunReport& r) { return row_at(r, 100).probes.locality; };
    const double r1 = mean_over(single, r_of), r100 = mean_over(whole, r_of);
    const double l1 = mean_over(single, loc_of), l100 = mean_over(whole, loc_of);
    v.detail << "layers " << plan.layer << "-" << plan.layer_last << ", 100 facts, mean over " << kSeeds
             << " seeds: edited-layer R b=1 " << fmt(r1) << " vs b=100 " << fmt(r100) << "; locality b=1 " << fmt(l1)
             << " vs b=100 " << fmt(l100);
    v.require(r100 >= r1, "R(b=100) >= R(b=1)");
    v.require(l100 >= l1, "locality(b=100) >= locality(b=1)");
  });

  report("A9", "individual and sequential scores", [](Verdict& v) {
    const auto m = testing::lookup_model(16, {{5, 9}, {6, 2}, {7, 3}, {8, 4}});
    auto fact = [](TokenId prompt_last, TokenId para_last, TokenId target) {
      FactRecord f;
      f.new_object = target;
      f.prompt = {0, 1, prompt_last};
      f.paraphrases = {{0, 1, para_last}};
      return f;
    };
    const FactRecord three[] = {fact(5, 6, 9), fact(7, 8, 4), fact(5, 6, 9)};
    const auto s = score_sequential(m, nullptr, three);
    v.require(s.rel == 2.0 / 3.0, "rel = 2/3");
    v.require(s.gen == 1.0 / 3.0, "gen = 1/3");
    const FactRecord two_of_three[] = {fact(5, 5, 9), fact(7, 6, 9), fact(5, 5, 9)};
    v.require(score_sequential(m, nullptr, two_of_three).rel == 2.0 / 3.0, "edits {1,3} of 3 recalled");
    std::size_t compared = 0, mismatched = 0;
    for (const auto& r : run_cache().at("rank_one_default")) {
      const auto& row = row_at(r, 1);
      ++compared;
      mismatched += row.sequential.rel != row.individual.rel || row.sequential.gen != row.individual.gen;
    }
    v.detail << "3-fact cases rel " << fmt(s.rel) << " gen " << fmt(s.gen) << "; t=1 sequential == individual on "
             << compared - mismatched << "/" << compared << " runs";
    v.require(compared > 0 && mismatched == 0, "t=1 sequential equals individual");
  });

  report("A10", "repetition-adjusted perplexity and saliency classes", [](Verdict& v) {
    const std::vector<TokenId> abab = {1, 2, 1, 2, 1, 2};
    const double rho = repetition_ratio(abab, 2);
    v.require(std::abs(rho - 0.4) <= 1e-15, "rho(a b a b a b, 2) = 0.4");
    v.require(std::abs(repetition_ratio(abab, 1) - 2.0 / 6.0) <= 1e-15, "rho(a b a b a b, 1) = 1/3");
    ArchSpec arch = testing::tiny_arch(32);
    arch.max_seq = 32;
    const auto judge = ModelState::zeros(arch);  // uniform: plain perplexity 32
    const std::vector<TokenId> question = {3};
    double worst = 0.0;
    for (std::size_t period : {1, 2, 3, 5, 20}) {
      std::vector<TokenId> answer(20);
      for (std::size_t i = 0; i < answer.size(); ++i) answer[i] = static_cast<TokenId>(i % period);
      const auto r = adjusted_perplexity(judge, question, answer, 2);
      const double expected_rho = static_cast<double>(std::min<std::size_t>(period, 19)) / 19.0;
      worst = std::max({worst, std::abs(r.rho - expected_rho),
                        std::abs(r.adjusted - 32.0 * std::exp(1.0 - expected_rho)) / r.adjusted});
    }
    v.require(worst <= 1e-12, "Adj_PPL = PPL * e^(1 - rho) on hand cases");

    std::size_t prompts = 0, bad = 0;
    for (std::size_t len = 3; len <= 32; ++len)
      for (std::size_t label = 1; label + 1 < len; ++label) {
        const std::size_t labels[] = {label};
        std::size_t total = 0;
        for (std::size_t i = 0; i < len; ++i)
          for (std::size_t j = 0; j < i; ++j) {
            (void)flow_class(i, j, labels, len - 1);
            ++total;
          }
        ++prompts;
        bad += total != len * (len - 1) / 2;
      }
    for (const auto& ex : seeds()[0].pre.corpus.icl) {
      const std::size_t labels[] = {ex.label_position};
      const auto rep = saliency_flows(seeds()[0].pre.model, ex.prompt, labels, ex.query_position(), ex.label);
      const std::size_t t = ex.prompt.size();
      ++prompts;
      bad += rep.count_wp + rep.count_pq + rep.count_ww != t * (t - 1) / 2 || rep.count_pq != 1 ||
             rep.count_wp != ex.label_position;
    }
    v.detail << "rho(a b a b a b) " << rho << ", worst formula error " << worst << ", partition checked on "
             << prompts << " prompts (" << bad << " bad)";
    v.require(bad == 0, "classes partition the strict lower triangle");
  });

  report("A11", "identical configurations give identical reports", [](Verdict& v) {
    const std::string text =
        "[arch]\nd_model = 32\nn_layers = 2\nd_ff = 64\nmax_seq = 48\n"
        "[corpus]\nn_base = 16\nn_filler = 4\nn_icl = 8\n[train]\nsteps = 60\n"
        "[edit]\nmethod = rank_one\n[eval]\nschedule = 1,10,20\n[sweep]\naxis = epsilon\nvalues = 1,5\n";
    testing::TempDir a("accept_a"), b("accept_b");
    auto pipeline = [&](const std::filesystem::path& root) {
      auto cfg = parse_config_text(text, {{"out_dir", root.string()}});
      const auto pre = pretrain(cfg);
      run_edit(cfg, pre);
      cfg = parse_config_text(text, {{"out_dir", root.string()}, {"method", "codebook"}});
      run_edit(cfg, pre);
      run_sweep(cfg, pre);
      return payload_files(root);
    };
    const auto fa = pipeline(a.path()), fb = pipeline(b.path());
    std::size_t differing = 0;
    for (const auto& [name, bytes] : fa) {
      auto it = fb.find(name);
      if (it == fb.end() || it->second != bytes) {
        ++differing;
        v.detail << " differs: " << name;
      }
    }
    v.detail << fa.size() << " report and checkpoint files compared, " << differing << " differ";
    v.require(fa.size() == fb.size() && fa.size() > 10, "same file set");
    v.require(differing == 0, "byte-identical payloads");
  });

  std::printf("%d of 11 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
