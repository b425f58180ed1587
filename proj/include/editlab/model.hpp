#pragma once

// Micro decoder-only transformer: pre-norm (RMS, scale only), causal
// multi-head attention, two-matrix GELU MLP (mlp_fc then mlp_proj), learned
// token and position embeddings, separate unembedding. Parameters are 32-bit;
// every activation and reduction is 64-bit.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "editlab/tensor.hpp"

namespace editlab {

using TokenId = std::uint32_t;

struct ArchSpec {
  std::size_t vocab_size = 256;
  std::size_t d_model = 64;
  std::size_t n_layers = 4;
  std::size_t n_heads = 2;
  std::size_t d_ff = 256;
  std::size_t max_seq = 64;

  /// Throws std::invalid_argument naming the violated constraint.
  void validate() const;
  std::size_t head_dim() const { return d_model / n_heads; }
  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

std::string to_string(const ArchSpec& arch);

template <typename T>
struct LayerWeights {
  std::vector<T> norm_attn;  // [d_model]
  Matrix<T> wq, wk, wv, wo;  // [d_model x d_model]
  std::vector<T> norm_mlp;   // [d_model]
  Matrix<T> mlp_fc;          // [d_ff x d_model]
  Matrix<T> mlp_proj;        // [d_model x d_ff]
};

/// The full parameter set. The visiting order of for_each_tensor is the
/// checkpoint order: token_embedding, position_embedding, then per layer
/// norm_attn, wq, wk, wv, wo, norm_mlp, mlp_fc, mlp_proj, then norm_final and
/// unembedding.
template <typename T>
struct Weights {
  Matrix<T> token_embedding;     // [vocab x d_model]
  Matrix<T> position_embedding;  // [max_seq x d_model]
  std::vector<LayerWeights<T>> layers;
  std::vector<T> norm_final;  // [d_model]
  Matrix<T> unembedding;      // [vocab x d_model]

  static Weights zeros(const ArchSpec& arch);

  template <typename F>
  void for_each_tensor(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    visit(*this, f);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](std::string_view, auto span) { n += span.size(); });
    return n;
  }

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f) {
    f("token_embedding", self.token_embedding.flat());
    f("position_embedding", self.position_embedding.flat());
    for (auto& layer : self.layers) {
      f("norm_attn", std::span(layer.norm_attn));
      f("wq", layer.wq.flat());
      f("wk", layer.wk.flat());
      f("wv", layer.wv.flat());
      f("wo", layer.wo.flat());
      f("norm_mlp", std::span(layer.norm_mlp));
      f("mlp_fc", layer.mlp_fc.flat());
      f("mlp_proj", layer.mlp_proj.flat());
    }
    f("norm_final", std::span(self.norm_final));
    f("unembedding", self.unembedding.flat());
  }
};

using ParameterGrads = Weights<double>;

struct ModelState : Weights<float> {
  ArchSpec arch;
  std::uint64_t seed = 0;
  std::size_t edit_history_len = 0;

  /// All-zero weights except unit norm scales.
  static ModelState zeros(const ArchSpec& arch);
  /// Scaled-normal initialisation, deterministic in seed.
  static ModelState initialise(const ArchSpec& arch, std::uint64_t seed);

  bool all_finite() const;
  /// FNV-1a over the raw parameter bytes in checkpoint order.
  std::uint64_t digest() const;
};

std::string hex_digest(std::uint64_t digest);

/// Hook that may replace the mlp_proj output of one layer, position by
/// position, based on that position's key (the mlp_proj input).
class MlpAdapter {
 public:
  virtual ~MlpAdapter() = default;
  virtual std::size_t layer() const = 0;
  /// Replacement mlp output for this key, or nullopt to pass through.
  virtual std::optional<std::span<const double>> lookup(std::span<const double> key) const = 0;
};

/// Replaces the output hidden state of `layer` at `position`.
struct HiddenSubstitution {
  std::size_t layer = 0;
  std::size_t position = 0;
  Vec value;
};

/// Adds `delta` to one post-softmax attention entry. Exists so tests can
/// difference the loss with respect to attention values.
struct AttentionNudge {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t row = 0;
  std::size_t col = 0;
  double delta = 0.0;
};

struct ForwardOptions {
  bool trace = false;
  const MlpAdapter* adapter = nullptr;
  const HiddenSubstitution* substitution = nullptr;
  const AttentionNudge* nudge = nullptr;
};

struct LayerTrace {
  MatrixD hidden_in;  // h^{l-1}
  Vec inv_rms_attn;
  MatrixD normed_attn;
  MatrixD q, k, v;
  std::vector<MatrixD> attention;  // per head [T x T], post-softmax
  MatrixD context;
  MatrixD hidden_mid;
  Vec inv_rms_mlp;
  MatrixD normed_mlp;
  MatrixD pre_activation;  // mlp_fc output
  MatrixD keys;            // GELU(pre_activation): the mlp_proj input
  MatrixD mlp_out;         // mlp contribution actually added (adapter applied)
  std::vector<bool> adapter_hit;
  MatrixD hidden_out;  // h^l
};

struct ForwardTrace {
  std::vector<TokenId> tokens;
  std::vector<LayerTrace> layers;
  Vec inv_rms_final;
  MatrixD normed_final;
  std::optional<std::pair<std::size_t, std::size_t>> substituted;  // (layer, position)
};

struct ForwardResult {
  MatrixD logits;  // [T x vocab]
  std::optional<ForwardTrace> trace;
};

/// Throws std::length_error for over-long input and std::out_of_range for a
/// token id outside the vocabulary.
ForwardResult forward(const ModelState& model, std::span<const TokenId> tokens,
                      const ForwardOptions& options = {});

/// Greedy continuation (lowest id wins ties). Stops after max_new tokens or
/// once `eos` is produced; the eos token is included in the result.
std::vector<TokenId> generate(const ModelState& model, std::span<const TokenId> prompt,
                              std::size_t max_new, std::optional<TokenId> eos = std::nullopt,
                              const MlpAdapter* adapter = nullptr);

TokenId argmax(std::span<const double> logits);

/// Mean cross-entropy of tokens[p] under the logits at p - 1, for every
/// target position p (each must be >= 1).
double sequence_loss(const ModelState& model, std::span<const TokenId> tokens,
                     std::span<const std::size_t> target_positions,
                     const ForwardOptions& options = {});

/// Loss value and its gradient with respect to the logits.
struct LossGrad {
  double loss = 0.0;
  MatrixD dlogits;
};
LossGrad cross_entropy_grad(const MatrixD& logits, std::span<const TokenId> tokens,
                            std::span<const std::size_t> target_positions);

struct BackwardRequest {
  ParameterGrads* params = nullptr;  // accumulated into when set
  bool attention = false;
};

struct BackwardResult {
  std::vector<std::vector<MatrixD>> attention;  // [layer][head] dL/dA
  std::optional<Vec> substituted_hidden;        // dL/d(substituted vector)
};

/// Reverse pass through a traced forward, starting from dL/dlogits.
BackwardResult backward(const ModelState& model, const ForwardTrace& trace,
                        const MatrixD& dlogits, const BackwardRequest& request);

/// dL/dA_{h,l} with respect to the post-softmax attention values, indexed
/// [layer][head]; masked (future) entries are exactly zero.
std::vector<std::vector<MatrixD>> attention_saliency(
    const ModelState& model, std::span<const TokenId> tokens,
    std::span<const std::size_t> target_positions, const MlpAdapter* adapter = nullptr);

/// Gradient of sequence_loss with respect to `injected`, substituted as the
/// output hidden state of `layer` at `position`.
Vec hidden_grad(const ModelState& model, std::span<const TokenId> tokens, std::size_t layer,
                std::size_t position, std::span<const double> injected,
                std::span<const std::size_t> target_positions,
                const MlpAdapter* adapter = nullptr);

/// Loss and hidden gradient from one forward/backward pair.
struct HiddenLossGrad {
  double loss = 0.0;
  Vec grad;
  MatrixD logits;
};
HiddenLossGrad hidden_loss_grad(const ModelState& model, std::span<const TokenId> tokens,
                                const HiddenSubstitution& substitution,
                                std::span<const std::size_t> target_positions,
                                const MlpAdapter* adapter = nullptr);

}  // namespace editlab
