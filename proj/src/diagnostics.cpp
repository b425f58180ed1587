#include "editlab/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace editlab {

double pearson_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw std::invalid_argument("pearson_similarity: shape mismatch");
  const std::size_t n = a.size();
  if (n < 2) throw std::invalid_argument("pearson_similarity: need at least 2 entries");
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) ma += a[i], mb += b[i];
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw DiagnosticError("pearson_similarity: zero variance, correlation undefined");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double pearson_similarity(const MatrixF& a, const MatrixF& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("pearson_similarity: shape mismatch");
  if (a == b) return 1.0;
  return pearson_similarity(std::span<const float>(a.data(), a.size()),
                            std::span<const float>(b.data(), b.size()));
}

std::vector<SimilarityRow> layer_similarity(const ModelState& original, const ModelState& edited,
                                            std::size_t edit_count) {
  if (!(original.arch == edited.arch)) throw std::invalid_argument("layer_similarity: arch mismatch");
  std::vector<SimilarityRow> rows;
  for (std::size_t l = 0; l < original.arch.n_layers; ++l)
    rows.push_back({l, edit_count,
                    pearson_similarity(original.layers[l].mlp_proj, edited.layers[l].mlp_proj)});
  return rows;
}

double repetition_ratio(std::span<const TokenId> tokens, std::size_t n) {
  if (n == 0) throw std::invalid_argument("repetition_ratio: n must be >= 1");
  if (tokens.size() < n) throw std::invalid_argument("repetition_ratio: sequence shorter than n");
  std::set<std::vector<TokenId>> seen;
  const std::size_t total = tokens.size() - n + 1;
  for (std::size_t i = 0; i < total; ++i) seen.emplace(tokens.begin() + i, tokens.begin() + i + n);
  return static_cast<double>(seen.size()) / static_cast<double>(total);
}

PerplexityReport adjusted_perplexity(const ModelState& judge, std::span<const TokenId> question,
                                     std::span<const TokenId> answer, std::size_t ngram) {
  PerplexityReport r;
  if (answer.size() < kPerplexityWindow) {
    r.excluded = true;
    r.tokens_used = 0;
    r.rho = answer.size() >= ngram ? repetition_ratio(answer, ngram) : 1.0;
    return r;
  }
  if (question.empty()) throw std::invalid_argument("adjusted_perplexity: empty question");
  std::vector<TokenId> seq(question.begin(), question.end());
  seq.insert(seq.end(), answer.begin(), answer.begin() + kPerplexityWindow);
  if (seq.size() > judge.arch.max_seq)
    throw std::length_error("adjusted_perplexity: question + answer window exceeds the judge context (" +
                            std::to_string(seq.size()) + " > " + std::to_string(judge.arch.max_seq) + ")");
  std::vector<std::size_t> targets(kPerplexityWindow);
  for (std::size_t i = 0; i < kPerplexityWindow; ++i) targets[i] = question.size() + i;
  r.tokens_used = kPerplexityWindow;
  r.ppl = std::exp(sequence_loss(judge, seq, targets));
  r.rho = repetition_ratio(answer, ngram);
  r.adjusted = r.ppl * std::exp(1.0 - r.rho);
  return r;
}

PerplexitySummary summarise(std::span<const PerplexityReport> reports) {
  PerplexitySummary s;
  for (const auto& r : reports) {
    if (r.excluded) {
      ++s.excluded;
      continue;
    }
    ++s.scored;
    s.mean_adjusted += r.adjusted;
    s.mean_plain += r.ppl;
  }
  if (s.scored) {
    s.mean_adjusted /= static_cast<double>(s.scored);
    s.mean_plain /= static_cast<double>(s.scored);
  }
  return s;
}

FlowClass flow_class(std::size_t i, std::size_t j, std::span<const std::size_t> label_positions,
                     std::size_t target_position) {
  const bool i_label = std::find(label_positions.begin(), label_positions.end(), i) != label_positions.end();
  const bool j_label = std::find(label_positions.begin(), label_positions.end(), j) != label_positions.end();
  if (i == target_position && j_label) return FlowClass::label_to_target;
  if (i_label) return FlowClass::word_to_label;
  return FlowClass::other;
}

std::vector<MatrixD> saliency_matrices(const ModelState& model, std::span<const TokenId> prompt,
                                       TokenId gold_label, const MlpAdapter* adapter) {
  std::vector<TokenId> tokens(prompt.begin(), prompt.end());
  tokens.push_back(gold_label);
  const std::size_t targets[] = {prompt.size()};
  const auto grads = attention_saliency(model, tokens, targets, adapter);
  ForwardOptions opts;
  opts.trace = true;
  opts.adapter = adapter;
  const auto fr = forward(model, tokens, opts);
  const std::size_t t = prompt.size();  // the appended label row is not part of the prompt
  std::vector<MatrixD> out;
  for (std::size_t l = 0; l < model.arch.n_layers; ++l) {
    MatrixD acc(t, t);
    for (std::size_t h = 0; h < model.arch.n_heads; ++h) {
      const MatrixD& a = fr.trace->layers[l].attention[h];
      const MatrixD& g = grads[l][h];
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j <= i; ++j) acc(i, j) += a(i, j) * g(i, j);
    }
    for (std::size_t i = 0; i < acc.size(); ++i) acc.data()[i] = std::abs(acc.data()[i]);
    out.push_back(std::move(acc));
  }
  return out;
}

SaliencyReport saliency_flows(const ModelState& model, std::span<const TokenId> prompt,
                              std::span<const std::size_t> label_positions,
                              std::size_t target_position, TokenId gold_label,
                              const MlpAdapter* adapter) {
  if (prompt.empty()) throw std::invalid_argument("saliency_flows: empty prompt");
  if (target_position + 1 != prompt.size())
    throw std::invalid_argument("saliency_flows: target position must be the last prompt position");
  if (label_positions.empty()) throw std::invalid_argument("saliency_flows: no label positions");
  for (std::size_t i = 0; i < label_positions.size(); ++i) {
    if (label_positions[i] >= target_position)
      throw std::invalid_argument("saliency_flows: label position must precede the target");
    for (std::size_t j = 0; j < i; ++j)
      if (label_positions[i] == label_positions[j])
        throw std::invalid_argument("saliency_flows: duplicate label position");
  }
  if (gold_label >= model.arch.vocab_size) throw std::out_of_range("saliency_flows: gold label outside vocabulary");

  SaliencyReport rep;
  rep.label_positions.assign(label_positions.begin(), label_positions.end());
  rep.target_position = target_position;
  const std::size_t t = prompt.size();
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < i; ++j) switch (flow_class(i, j, label_positions, target_position)) {
        case FlowClass::word_to_label: ++rep.count_wp; break;
        case FlowClass::label_to_target: ++rep.count_pq; break;
        case FlowClass::other: ++rep.count_ww; break;
      }
  if (rep.count_wp == 0) throw DiagnosticError("saliency_flows: word-to-label class is empty");
  if (rep.count_pq == 0) throw DiagnosticError("saliency_flows: label-to-target class is empty");
  if (rep.count_ww == 0) throw DiagnosticError("saliency_flows: remaining class is empty");

  for (const MatrixD& m : saliency_matrices(model, prompt, gold_label, adapter)) {
    SaliencyLayer s;
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < i; ++j) switch (flow_class(i, j, label_positions, target_position)) {
          case FlowClass::word_to_label: s.s_wp += m(i, j); break;
          case FlowClass::label_to_target: s.s_pq += m(i, j); break;
          case FlowClass::other: s.s_ww += m(i, j); break;
        }
    s.s_wp /= static_cast<double>(rep.count_wp);
    s.s_pq /= static_cast<double>(rep.count_pq);
    s.s_ww /= static_cast<double>(rep.count_ww);
    rep.layers.push_back(s);
  }
  return rep;
}

}  // namespace editlab
