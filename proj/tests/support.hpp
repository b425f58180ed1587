#pragma once

// Small fixtures shared by the unit tests.

#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <string>

#include "editlab/corpus.hpp"
#include "editlab/model.hpp"
#include "editlab/train.hpp"

namespace testing {

using namespace editlab;

inline ArchSpec tiny_arch(std::size_t vocab = 16) {
  ArchSpec a;
  a.vocab_size = vocab;
  a.d_model = 8;
  a.n_layers = 2;
  a.n_heads = 2;
  a.d_ff = 12;
  a.max_seq = 16;
  return a;
}

/// Initialised weights with the norm scales jittered away from 1, so every
/// parameter group influences the output.
inline ModelState random_model(const ArchSpec& arch, std::uint64_t seed) {
  ModelState m = ModelState::initialise(arch, seed);
  std::mt19937_64 rng(seed + 101);
  std::uniform_real_distribution<float> u(0.6f, 1.4f);
  for (auto& l : m.layers) {
    for (auto& v : l.norm_attn) v = u(rng);
    for (auto& v : l.norm_mlp) v = u(rng);
  }
  for (auto& v : m.norm_final) v = u(rng);
  return m;
}

inline std::vector<TokenId> random_tokens(std::size_t n, std::size_t vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<TokenId> pick(0, static_cast<TokenId>(vocab - 1));
  std::vector<TokenId> t(n);
  for (auto& x : t) x = pick(rng);
  return t;
}

/// Model whose next-token prediction depends only on the current token:
/// zero attention and MLP output, one-hot embeddings, and an unembedding that
/// sends token t to answer[t].
inline ModelState lookup_model(std::size_t vocab, const std::map<TokenId, TokenId>& answer) {
  ArchSpec a;
  a.vocab_size = vocab;
  a.d_model = vocab;
  a.n_layers = 2;
  a.n_heads = 1;
  a.d_ff = 4;
  a.max_seq = 32;
  ModelState m = ModelState::zeros(a);
  for (std::size_t t = 0; t < vocab; ++t) m.token_embedding(t, t) = 1.0f;
  for (const auto& [from, to] : answer) m.unembedding(to, from) = 1.0f;
  return m;
}

/// Corpus small enough for a model to learn in a couple of seconds.
inline CorpusSpec small_corpus_spec(std::uint64_t seed = 3) {
  CorpusSpec s;
  s.seed = seed;
  s.n_base = 16;
  s.n_edit = 24;
  s.n_filler = 4;
  s.n_icl = 8;
  s.n_relations = 2;
  s.n_objects = 8;
  s.n_filler_words = 8;
  s.filler_length = 24;
  s.polarity_words = 2;
  s.vocab_capacity = 96;
  return s;
}

inline ArchSpec small_arch() {
  ArchSpec a;
  a.vocab_size = 96;
  a.d_model = 32;
  a.n_layers = 3;
  a.n_heads = 2;
  a.d_ff = 64;
  a.max_seq = 40;
  return a;
}

struct Trained {
  Corpus corpus;
  ModelState model;
};

/// Trained once per test binary.
inline const Trained& small_trained() {
  static const Trained t = [] {
    Trained out;
    out.corpus = build_corpus(small_corpus_spec());
    TrainConfig tc;
    tc.steps = 300;
    tc.seed = 3;
    out.model = train(ModelState::initialise(small_arch(), 3), out.corpus, tc);
    return out;
  }();
  return t;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("editlab_test_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

}  // namespace testing
