#include "editlab/model.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <random>
#include <sstream>
#include <stdexcept>

#include "editlab/kernels.hpp"
#include "model_internal.hpp"

namespace editlab {

void ArchSpec::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("ArchSpec: ") + what);
  };
  require(vocab_size >= 1 && d_model >= 1 && n_layers >= 1 && n_heads >= 1 && d_ff >= 1,
          "all counts must be >= 1");
  require(max_seq >= 2, "max_seq must be >= 2");
  require(d_model % n_heads == 0, "d_model must be divisible by n_heads");
}

std::string to_string(const ArchSpec& a) {
  std::ostringstream os;
  os << "vocab_size=" << a.vocab_size << " d_model=" << a.d_model << " n_layers=" << a.n_layers
     << " n_heads=" << a.n_heads << " d_ff=" << a.d_ff << " max_seq=" << a.max_seq;
  return os.str();
}

template <typename T>
Weights<T> Weights<T>::zeros(const ArchSpec& arch) {
  Weights<T> w;
  w.token_embedding = Matrix<T>(arch.vocab_size, arch.d_model);
  w.position_embedding = Matrix<T>(arch.max_seq, arch.d_model);
  w.layers.resize(arch.n_layers);
  for (auto& layer : w.layers) {
    layer.norm_attn.assign(arch.d_model, T{});
    layer.wq = Matrix<T>(arch.d_model, arch.d_model);
    layer.wk = Matrix<T>(arch.d_model, arch.d_model);
    layer.wv = Matrix<T>(arch.d_model, arch.d_model);
    layer.wo = Matrix<T>(arch.d_model, arch.d_model);
    layer.norm_mlp.assign(arch.d_model, T{});
    layer.mlp_fc = Matrix<T>(arch.d_ff, arch.d_model);
    layer.mlp_proj = Matrix<T>(arch.d_model, arch.d_ff);
  }
  w.norm_final.assign(arch.d_model, T{});
  w.unembedding = Matrix<T>(arch.vocab_size, arch.d_model);
  return w;
}

template struct Weights<float>;
template struct Weights<double>;

ModelState ModelState::zeros(const ArchSpec& arch) {
  arch.validate();
  ModelState m;
  static_cast<Weights<float>&>(m) = Weights<float>::zeros(arch);
  m.arch = arch;
  for (auto& layer : m.layers) {
    layer.norm_attn.assign(arch.d_model, 1.0f);
    layer.norm_mlp.assign(arch.d_model, 1.0f);
  }
  m.norm_final.assign(arch.d_model, 1.0f);
  return m;
}

ModelState ModelState::initialise(const ArchSpec& arch, std::uint64_t seed) {
  ModelState m = zeros(arch);
  m.seed = seed;
  std::mt19937_64 rng(seed);
  auto fill = [&](std::span<float> values, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : values) v = static_cast<float>(dist(rng));
  };
  const double d = static_cast<double>(arch.d_model);
  const double ff = static_cast<double>(arch.d_ff);
  const double depth = std::sqrt(2.0 * static_cast<double>(arch.n_layers));
  fill(m.token_embedding.flat(), 0.1);
  fill(m.position_embedding.flat(), 0.1);
  for (auto& layer : m.layers) {
    fill(layer.wq.flat(), 1.0 / std::sqrt(d));
    fill(layer.wk.flat(), 1.0 / std::sqrt(d));
    fill(layer.wv.flat(), 1.0 / std::sqrt(d));
    fill(layer.wo.flat(), 1.0 / std::sqrt(d) / depth);
    fill(layer.mlp_fc.flat(), 2.0 / std::sqrt(d));
    fill(layer.mlp_proj.flat(), 2.0 / std::sqrt(ff));
  }
  fill(m.unembedding.flat(), 1.0 / std::sqrt(d));
  return m;
}

bool ModelState::all_finite() const {
  bool ok = true;
  for_each_tensor([&](std::string_view, auto span) {
    for (float v : span) ok = ok && std::isfinite(v);
  });
  return ok;
}

std::uint64_t ModelState::digest() const {
  std::uint64_t h = 1469598103934665603ull;
  for_each_tensor([&](std::string_view, auto span) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(span.data());
    for (std::size_t i = 0; i < span.size_bytes(); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  });
  return h;
}

std::string hex_digest(std::uint64_t digest) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(digest));
  return buf;
}

namespace detail {

void rms_norm(const MatrixD& x, std::span<const float> scale, MatrixD& y, Vec& inv_rms) {
  const std::size_t T = x.rows(), d = x.cols();
  y = MatrixD(T, d);
  inv_rms.assign(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    double ss = 0.0;
    for (double v : x.row(t)) ss += v * v;
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(d) + kRmsEps);
    inv_rms[t] = inv;
    for (std::size_t i = 0; i < d; ++i) y(t, i) = x(t, i) * inv * static_cast<double>(scale[i]);
  }
}

double gelu(double u) {
  const double inner = kGeluC * (u + 0.044715 * u * u * u);
  return 0.5 * u * (1.0 + std::tanh(inner));
}

double gelu_grad(double u) {
  const double inner = kGeluC * (u + 0.044715 * u * u * u);
  const double th = std::tanh(inner);
  return 0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * 0.044715 * u * u);
}

void check_tokens(const ArchSpec& arch, std::span<const TokenId> tokens) {
  if (tokens.empty()) throw std::invalid_argument("forward: empty token sequence");
  if (tokens.size() > arch.max_seq)
    throw std::length_error("forward: sequence length " + std::to_string(tokens.size()) +
                            " exceeds max_seq " + std::to_string(arch.max_seq));
  for (TokenId t : tokens)
    if (t >= arch.vocab_size)
      throw std::out_of_range("forward: token id " + std::to_string(t) + " >= vocab_size " +
                              std::to_string(arch.vocab_size));
}

}  // namespace detail

ForwardResult forward(const ModelState& model, std::span<const TokenId> tokens,
                      const ForwardOptions& options) {
  using namespace detail;
  const ArchSpec& arch = model.arch;
  check_tokens(arch, tokens);
  const std::size_t T = tokens.size(), d = arch.d_model;
  if (options.substitution) {
    const auto& s = *options.substitution;
    if (s.layer >= arch.n_layers || s.position >= T || s.value.size() != d)
      throw std::invalid_argument("forward: substitution out of range or wrong width");
  }

  ForwardTrace trace;
  trace.tokens.assign(tokens.begin(), tokens.end());
  trace.layers.resize(arch.n_layers);

  MatrixD h(T, d);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < d; ++i)
      h(t, i) = static_cast<double>(model.token_embedding(tokens[t], i)) +
                static_cast<double>(model.position_embedding(t, i));

  for (std::size_t l = 0; l < arch.n_layers; ++l) {
    const auto& w = model.layers[l];
    LayerTrace& lt = trace.layers[l];
    lt.hidden_in = std::move(h);
    rms_norm(lt.hidden_in, w.norm_attn, lt.normed_attn, lt.inv_rms_attn);
    kernels::matmul_nt(lt.normed_attn, w.wq, lt.q);
    kernels::matmul_nt(lt.normed_attn, w.wk, lt.k);
    kernels::matmul_nt(lt.normed_attn, w.wv, lt.v);
    kernels::causal_attention(lt.q, lt.k, lt.v, arch.n_heads, lt.attention, lt.context);

    if (options.nudge && options.nudge->layer == l) {
      const auto& n = *options.nudge;
      if (n.head >= arch.n_heads || n.row >= T || n.col > n.row)
        throw std::invalid_argument("forward: attention nudge outside the causal triangle");
      lt.attention[n.head](n.row, n.col) += n.delta;
      const std::size_t hd = arch.head_dim(), off = n.head * hd;
      for (std::size_t e = 0; e < hd; ++e) {
        double c = 0.0;
        for (std::size_t j = 0; j <= n.row; ++j) c += lt.attention[n.head](n.row, j) * lt.v(j, off + e);
        lt.context(n.row, off + e) = c;
      }
    }

    MatrixD attn_out;
    kernels::matmul_nt(lt.context, w.wo, attn_out);
    lt.hidden_mid = lt.hidden_in;
    for (std::size_t i = 0; i < lt.hidden_mid.size(); ++i)
      lt.hidden_mid.data()[i] += attn_out.data()[i];

    rms_norm(lt.hidden_mid, w.norm_mlp, lt.normed_mlp, lt.inv_rms_mlp);
    kernels::matmul_nt(lt.normed_mlp, w.mlp_fc, lt.pre_activation);
    lt.keys = MatrixD(T, arch.d_ff);
    for (std::size_t i = 0; i < lt.keys.size(); ++i)
      lt.keys.data()[i] = gelu(lt.pre_activation.data()[i]);
    kernels::matmul_nt(lt.keys, w.mlp_proj, lt.mlp_out);

    lt.adapter_hit.assign(T, false);
    if (options.adapter && options.adapter->layer() == l) {
      for (std::size_t t = 0; t < T; ++t) {
        if (auto value = options.adapter->lookup(lt.keys.row(t))) {
          std::copy(value->begin(), value->end(), lt.mlp_out.row(t).begin());
          lt.adapter_hit[t] = true;
        }
      }
    }

    lt.hidden_out = lt.hidden_mid;
    for (std::size_t i = 0; i < lt.hidden_out.size(); ++i)
      lt.hidden_out.data()[i] += lt.mlp_out.data()[i];

    if (options.substitution && options.substitution->layer == l) {
      const auto& s = *options.substitution;
      std::copy(s.value.begin(), s.value.end(), lt.hidden_out.row(s.position).begin());
      trace.substituted = std::make_pair(s.layer, s.position);
    }
    h = lt.hidden_out;
  }

  rms_norm(h, model.norm_final, trace.normed_final, trace.inv_rms_final);
  ForwardResult result;
  kernels::matmul_nt(trace.normed_final, model.unembedding, result.logits);
  if (options.trace) result.trace = std::move(trace);
  return result;
}

TokenId argmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("argmax: empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return static_cast<TokenId>(best);
}

std::vector<TokenId> generate(const ModelState& model, std::span<const TokenId> prompt,
                              std::size_t max_new, std::optional<TokenId> eos,
                              const MlpAdapter* adapter) {
  if (prompt.empty()) throw std::invalid_argument("generate: empty prompt");
  if (prompt.size() + max_new > model.arch.max_seq)
    throw std::length_error("generate: prompt of " + std::to_string(prompt.size()) + " plus " +
                            std::to_string(max_new) + " new tokens overflows max_seq " +
                            std::to_string(model.arch.max_seq));
  std::vector<TokenId> context(prompt.begin(), prompt.end());
  std::vector<TokenId> out;
  ForwardOptions opts;
  opts.adapter = adapter;
  for (std::size_t step = 0; step < max_new; ++step) {
    const auto fr = forward(model, context, opts);
    const TokenId next = argmax(fr.logits.row(context.size() - 1));
    out.push_back(next);
    context.push_back(next);
    if (eos && next == *eos) break;
  }
  return out;
}

LossGrad cross_entropy_grad(const MatrixD& logits, std::span<const TokenId> tokens,
                            std::span<const std::size_t> target_positions) {
  if (target_positions.empty()) throw std::invalid_argument("loss: empty target set");
  LossGrad out;
  out.dlogits = MatrixD(logits.rows(), logits.cols());
  const double inv_n = 1.0 / static_cast<double>(target_positions.size());
  for (std::size_t p : target_positions) {
    if (p == 0) throw std::invalid_argument("loss: target position 0 has no preceding context");
    if (p >= tokens.size()) throw std::invalid_argument("loss: target position past the sequence");
    auto row = logits.row(p - 1);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    out.loss += (lse - row[tokens[p]]) * inv_n;
    auto g = out.dlogits.row(p - 1);
    for (std::size_t i = 0; i < row.size(); ++i) g[i] += std::exp(row[i] - lse) * inv_n;
    g[tokens[p]] -= inv_n;
  }
  return out;
}

double sequence_loss(const ModelState& model, std::span<const TokenId> tokens,
                     std::span<const std::size_t> target_positions,
                     const ForwardOptions& options) {
  if (target_positions.empty()) throw std::invalid_argument("sequence_loss: empty target set");
  for (std::size_t p : target_positions)
    if (p == 0) throw std::invalid_argument("sequence_loss: target position 0");
  const auto fr = forward(model, tokens, options);
  return cross_entropy_grad(fr.logits, tokens, target_positions).loss;
}

}  // namespace editlab
