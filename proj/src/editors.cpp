#include "editlab/editors.hpp"

#include <charconv>
#include <cmath>

#include "editlab/checkpoint.hpp"
#include "editlab/linalg.hpp"

namespace editlab {

EditError::EditError(const std::string& what, std::optional<std::size_t> layer)
    : std::runtime_error(layer ? "layer " + std::to_string(*layer) + ": " + what : what), layer_(layer) {}

MatrixD CovarianceStats::regularised() const {
  MatrixD c = matrix_cast<double>(second_moment);
  for (std::size_t i = 0; i < c.rows(); ++i) c(i, i) += ridge;
  return c;
}

double default_ridge(const MatrixF& second_moment) {
  double trace = 0.0;
  for (std::size_t i = 0; i < second_moment.rows(); ++i) trace += second_moment(i, i);
  return 1e-2 * trace / static_cast<double>(second_moment.rows());
}

CovarianceStats estimate_covariance(const ModelState& model, std::size_t layer,
                                    std::span<const std::vector<TokenId>> prompts,
                                    std::optional<double> ridge) {
  if (prompts.empty()) throw EditError("estimate_covariance: no prompts", layer);
  if (layer >= model.arch.n_layers) throw std::invalid_argument("estimate_covariance: layer out of range");
  if (ridge && !(*ridge >= 0.0)) throw std::invalid_argument("estimate_covariance: ridge must be >= 0");
  const std::size_t n = model.arch.d_ff;
  MatrixD acc(n, n);
  std::size_t samples = 0;
  ForwardOptions opts;
  opts.trace = true;
  for (const auto& prompt : prompts) {
    const auto fr = forward(model, prompt, opts);
    const MatrixD& keys = fr.trace->layers[layer].keys;
    for (std::size_t t = 0; t < keys.rows(); ++t) {
      auto k = keys.row(t);
      for (double v : k)
        if (!std::isfinite(v)) throw EditError("estimate_covariance: non-finite activation", layer);
      for (std::size_t i = 0; i < n; ++i) {
        const double ki = k[i];
        if (ki == 0.0) continue;
        double* row = acc.row(i).data();
#pragma omp simd
        for (std::size_t j = i; j < n; ++j) row[j] += ki * k[j];
      }
      ++samples;
    }
  }
  CovarianceStats stats;
  stats.layer = layer;
  stats.sample_count = samples;
  stats.second_moment = MatrixF(n, n);
  const double inv = 1.0 / static_cast<double>(samples);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      const float v = static_cast<float>(acc(i, j) * inv);
      stats.second_moment(i, j) = v;
      stats.second_moment(j, i) = v;
    }
  stats.ridge = ridge ? *ridge : default_ridge(stats.second_moment);
  return stats;
}

namespace {

std::string exact(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace

void save_covariance(const CovarianceStats& stats, const std::filesystem::path& path,
                     const std::string& model_digest, const std::string& ridge_setting) {
  save_matrix_file(stats.second_moment, path,
                   {{"kind", "covariance"},
                    {"model", model_digest},
                    {"layer", std::to_string(stats.layer)},
                    {"ridge_setting", ridge_setting},
                    {"ridge", exact(stats.ridge)},
                    {"samples", std::to_string(stats.sample_count)}});
}

std::optional<CovarianceStats> load_covariance(const std::filesystem::path& path,
                                               const std::string& model_digest, std::size_t layer,
                                               const std::string& ridge_setting) {
  if (!std::filesystem::exists(path)) return std::nullopt;
  std::map<std::string, std::string> meta;
  MatrixF m = load_matrix_file(path, &meta);
  if (meta["kind"] != "covariance" || meta["model"] != model_digest ||
      meta["layer"] != std::to_string(layer) || meta["ridge_setting"] != ridge_setting)
    return std::nullopt;
  CovarianceStats stats;
  stats.layer = layer;
  stats.second_moment = std::move(m);
  stats.sample_count = std::stoull(meta["samples"]);
  const auto& r = meta["ridge"];
  std::from_chars(r.data(), r.data() + r.size(), stats.ridge);
  return stats;
}

TargetValue compute_target_value(const ModelState& model, const MlpAdapter* adapter,
                                 std::size_t layer, std::span<const TokenId> prompt,
                                 TokenId target, const SolverSettings& solver) {
  if (prompt.empty()) throw std::invalid_argument("compute_target_value: empty prompt");
  if (layer >= model.arch.n_layers) throw std::invalid_argument("compute_target_value: layer out of range");
  const std::size_t pos = prompt.size() - 1;
  ForwardOptions opts;
  opts.trace = true;
  opts.adapter = adapter;
  const auto base = forward(model, prompt, opts);
  const LayerTrace& lt = base.trace->layers[layer];

  TargetValue out;
  out.key.assign(lt.keys.row(pos).begin(), lt.keys.row(pos).end());
  const Vec h(lt.hidden_out.row(pos).begin(), lt.hidden_out.row(pos).end());
  const Vec mlp(lt.mlp_out.row(pos).begin(), lt.mlp_out.row(pos).end());

  std::vector<TokenId> tokens(prompt.begin(), prompt.end());
  tokens.push_back(target);
  const std::size_t targets[] = {prompt.size()};
  Vec delta(h.size(), 0.0);
  HiddenSubstitution sub{layer, pos, h};
  // The loss sees h through later RMS norms, so its gradient shrinks like
  // 1/|h|; scaling by the mean square keeps the step size scale-free.
  const double step = solver.step_size * linalg::dot(h, h) / static_cast<double>(h.size());

  for (std::size_t it = 0;; ++it) {
    for (std::size_t i = 0; i < h.size(); ++i) sub.value[i] = h[i] + delta[i];
    const auto r = hidden_loss_grad(model, tokens, sub, targets, adapter);
    out.final_loss = r.loss;
    out.iterations = it;
    auto row = r.logits.row(pos);
    double runner_up = -INFINITY;
    for (std::size_t j = 0; j < row.size(); ++j)
      if (j != target) runner_up = std::max(runner_up, row[j]);
    if (row[target] - runner_up >= solver.margin) {
      out.success = true;
      break;
    }
    if (it >= solver.max_iterations) break;
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] -= step * r.grad[i];
  }
  out.delta = delta;
  out.hidden = sub.value;
  out.value.resize(mlp.size());
  for (std::size_t i = 0; i < mlp.size(); ++i) out.value[i] = mlp[i] + delta[i];
  return out;
}

TargetValue compute_target_value(const ModelState& model, std::size_t layer,
                                 const FactRecord& fact, const SolverSettings& solver) {
  return compute_target_value(model, nullptr, layer, fact.prompt, fact.new_object, solver);
}

MatrixD rank_one_edit(const MatrixD& w, const MatrixD& regularised, std::span<const double> key,
                      std::span<const double> value) {
  if (key.size() != w.cols() || value.size() != w.rows() || regularised.rows() != w.cols())
    throw std::invalid_argument("rank_one_edit: shape mismatch");
  const double key_norm = linalg::norm(key);
  if (!(key_norm > 0.0)) throw EditError("rank_one_edit: zero key");
  const auto chol = linalg::Cholesky::factor(regularised);
  if (!chol) throw EditError("rank_one_edit: C + ridge*I is not positive definite");
  const Vec u = chol->solve(key);
  const double denom = linalg::dot(u, key);
  double trace = 0.0;
  for (std::size_t i = 0; i < regularised.rows(); ++i) trace += regularised(i, i);
  // k^T C~^-1 k >= |k|^2 / lambda_max >= |k|^2 / trace
  if (!(denom > 1e-12 * key_norm * key_norm / trace) || !std::isfinite(denom))
    throw EditError("rank_one_edit: vanishing denominator (C^-1 k)^T k = " + std::to_string(denom));
  const Vec wk = linalg::multiply(w, key);
  MatrixD out = w;
  for (std::size_t i = 0; i < w.rows(); ++i) {
    const double lambda = (value[i] - wk[i]) / denom;
    if (lambda == 0.0) continue;
    for (std::size_t j = 0; j < w.cols(); ++j) out(i, j) += lambda * u[j];
  }
  return out;
}

MatrixF rank_one_edit(const MatrixF& w, const CovarianceStats& stats, std::span<const double> key,
                      std::span<const double> value) {
  try {
    return matrix_cast<float>(rank_one_edit(matrix_cast<double>(w), stats.regularised(), key, value));
  } catch (const EditError& e) {
    throw EditError(e.what(), stats.layer);
  }
}

MatrixD batched_edit(const MatrixD& w, const MatrixD& regularised, const MatrixD& keys,
                     const MatrixD& values) {
  const std::size_t b = keys.cols();
  if (b == 0 || keys.rows() != w.cols() || values.rows() != w.rows() || values.cols() != b ||
      regularised.rows() != w.cols())
    throw std::invalid_argument("batched_edit: shape mismatch");
  const auto chol = linalg::Cholesky::factor(regularised);
  if (!chol) throw EditError("batched_edit: C + ridge*I is not positive definite");
  const MatrixD x = chol->solve(keys);  // C~^-1 K
  MatrixD gram = linalg::multiply(linalg::transpose(keys), x);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = i + 1; j < b; ++j) gram(i, j) = gram(j, i) = 0.5 * (gram(i, j) + gram(j, i));
  const auto gram_chol = linalg::Cholesky::factor(gram, 1e-10);
  if (!gram_chol)
    throw EditError("batched_edit: keys are rank deficient (K^T C^-1 K singular for " +
                    std::to_string(b) + " keys)");
  const double cond = gram_chol->condition_estimate();
  if (cond > 1e12)
    throw EditError("batched_edit: near-singular key Gram matrix (condition estimate " +
                    std::to_string(cond) + ")");
  MatrixD residual = values;
  const MatrixD wk = linalg::multiply(w, keys);
  for (std::size_t i = 0; i < residual.size(); ++i) residual.data()[i] -= wk.data()[i];
  const MatrixD y = gram_chol->solve(linalg::transpose(x));  // (K^T C~^-1 K)^-1 K^T C~^-1
  MatrixD out = linalg::multiply(residual, y);
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += w.data()[i];
  return out;
}

MatrixF batched_edit(const MatrixF& w, const CovarianceStats& stats, const MatrixD& keys,
                     const MatrixD& values) {
  try {
    return matrix_cast<float>(batched_edit(matrix_cast<double>(w), stats.regularised(), keys, values));
  } catch (const EditError& e) {
    throw EditError(e.what(), stats.layer);
  }
}

namespace {

const CovarianceStats& covariance_for(const CovarianceSet& set, std::size_t layer) {
  auto it = set.find(layer);
  if (it == set.end()) throw EditError("no covariance statistics for this layer", layer);
  return it->second;
}

TargetValue solve_or_throw(const ModelState& model, const MlpAdapter* adapter, std::size_t layer,
                           const FactRecord& fact, const SolverSettings& solver) {
  auto tv = compute_target_value(model, adapter, layer, fact.prompt, fact.new_object, solver);
  if (!tv.success)
    throw EditError("target value for fact " + std::to_string(fact.id) + " not reached in " +
                        std::to_string(tv.iterations) + " iterations (loss " +
                        std::to_string(tv.final_loss) + ")",
                    layer);
  return tv;
}

}  // namespace

ModelState spread_edit(const ModelState& model, std::size_t first, std::size_t last,
                       std::span<const FactRecord> facts, const CovarianceSet& covariances,
                       const SolverSettings& solver) {
  if (first > last || last >= model.arch.n_layers)
    throw std::invalid_argument("spread_edit: invalid layer range");
  if (facts.empty()) throw std::invalid_argument("spread_edit: empty batch");
  const std::size_t b = facts.size(), d = model.arch.d_model;

  std::vector<Vec> goals;
  for (const auto& f : facts) goals.push_back(solve_or_throw(model, nullptr, last, f, solver).hidden);

  ModelState cur = model;
  ForwardOptions opts;
  opts.trace = true;
  for (std::size_t l = first; l <= last; ++l) {
    MatrixD keys(model.arch.d_ff, b), values(d, b);
    const double share = 1.0 / static_cast<double>(last - l + 1);
    for (std::size_t i = 0; i < b; ++i) {
      const auto& prompt = facts[i].prompt;
      const std::size_t pos = prompt.size() - 1;
      const auto fr = forward(cur, prompt, opts);
      const LayerTrace& lt = fr.trace->layers[l];
      const auto top = fr.trace->layers[last].hidden_out.row(pos);
      for (std::size_t j = 0; j < keys.rows(); ++j) keys(j, i) = lt.keys(pos, j);
      for (std::size_t j = 0; j < d; ++j)
        values(j, i) = lt.mlp_out(pos, j) + (goals[i][j] - top[j]) * share;
    }
    cur.layers[l].mlp_proj = batched_edit(cur.layers[l].mlp_proj, covariance_for(covariances, l), keys, values);
  }
  cur.edit_history_len = model.edit_history_len + 1;
  return cur;
}

Codebook grace_insert(const Codebook& codebook, const ModelState& model, const FactRecord& fact,
                      double epsilon, const SolverSettings& solver) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("grace_insert: epsilon must be > 0");
  const auto tv = solve_or_throw(model, &codebook, codebook.layer(), fact, solver);
  Codebook out = codebook;
  out.add({tv.key, tv.value, epsilon, fact.id});
  return out;
}

std::string to_string(EditMethod method) {
  switch (method) {
    case EditMethod::rank_one: return "rank_one";
    case EditMethod::batched: return "batched";
    case EditMethod::codebook: return "codebook";
  }
  return "unknown";
}

EditMethod parse_edit_method(std::string_view name) {
  if (name == "rank_one" || name == "rome") return EditMethod::rank_one;
  if (name == "batched" || name == "memit") return EditMethod::batched;
  if (name == "codebook" || name == "grace") return EditMethod::codebook;
  throw std::invalid_argument("unknown edit method '" + std::string(name) + "'");
}

void EditPlan::validate(const ArchSpec& arch) const {
  if (layer >= arch.n_layers) throw std::invalid_argument("EditPlan: layer out of range");
  if (batch_size < 1) throw std::invalid_argument("EditPlan: batch size must be >= 1");
  if (method == EditMethod::batched && (layer_last < layer || layer_last >= arch.n_layers))
    throw std::invalid_argument("EditPlan: invalid batched layer range");
  if (method != EditMethod::batched && batch_size != 1)
    throw std::invalid_argument("EditPlan: only the batched method takes batches");
  if (method == EditMethod::codebook && !(epsilon > 0.0))
    throw std::invalid_argument("EditPlan: epsilon must be > 0");
}

std::vector<std::size_t> EditPlan::edited_layers() const {
  switch (method) {
    case EditMethod::rank_one: return {layer};
    case EditMethod::batched: {
      std::vector<std::size_t> out;
      for (std::size_t l = layer; l <= layer_last; ++l) out.push_back(l);
      return out;
    }
    case EditMethod::codebook: return {};
  }
  return {};
}

EditableState apply_edit(const EditableState& state, const EditPlan& plan,
                         std::span<const FactRecord> facts, const CovarianceSet& covariances) {
  plan.validate(state.model.arch);
  if (facts.empty()) throw std::invalid_argument("apply_edit: no facts");
  if (plan.method != EditMethod::batched && facts.size() != 1)
    throw std::invalid_argument("apply_edit: this method edits one fact per step");
  EditableState next;
  switch (plan.method) {
    case EditMethod::rank_one: {
      const auto tv = solve_or_throw(state.model, state.adapter(), plan.layer, facts[0], plan.solver);
      next.model = state.model;
      auto& w = next.model.layers[plan.layer].mlp_proj;
      w = rank_one_edit(w, covariance_for(covariances, plan.layer), tv.key, tv.value);
      next.model.edit_history_len += 1;
      next.codebook = state.codebook;
      break;
    }
    case EditMethod::batched:
      next.model = spread_edit(state.model, plan.layer, plan.layer_last, facts, covariances, plan.solver);
      next.codebook = state.codebook;
      break;
    case EditMethod::codebook: {
      next.model = state.model;
      Codebook cb = state.codebook ? *state.codebook
                                   : Codebook(plan.layer, state.model.arch.d_ff, state.model.arch.d_model);
      if (cb.layer() != plan.layer) throw std::invalid_argument("apply_edit: codebook attached to another layer");
      next.codebook = grace_insert(cb, state.model, facts[0], plan.epsilon, plan.solver);
      break;
    }
  }
  return next;
}

EditableState apply_single_edit(const EditableState& state, const EditPlan& plan,
                                const FactRecord& fact, const CovarianceSet& covariances) {
  return apply_edit(state, plan, std::span(&fact, 1), covariances);
}

}  // namespace editlab
