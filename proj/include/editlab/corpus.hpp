#pragma once

// Deterministic synthetic world used to pretrain and probe the micro-model:
//  - facts "<bos> s r o" with single-token subjects and objects, each with
//    relation-paraphrased prompts;
//  - filler text from a sparse first-order word chain (LM probe);
//  - a two-label in-context task: "<bos> x x x L <sep> y y y" -> label.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "editlab/model.hpp"

namespace editlab {

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Vocabulary {
 public:
  /// Adds a token string; throws CorpusError on tab, pipe, space or
  /// duplicate.
  TokenId add(std::string token);
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::size_t size() const { return tokens_.size(); }
  bool contains(std::string_view token) const;

  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

struct FactRecord {
  std::size_t id = 0;
  TokenId subject = 0;
  TokenId relation = 0;
  TokenId object = 0;
  TokenId new_object = 0;
  std::vector<TokenId> prompt;                    // <bos> s r
  std::vector<std::vector<TokenId>> paraphrases;  // <bos> s r'
};

struct IclExample {
  std::vector<TokenId> prompt;  // ends at the query position
  TokenId label = 0;
  std::size_t label_position = 0;  // demonstration label word
  std::size_t query_position() const { return prompt.size() - 1; }
};

struct CorpusSpec {
  std::uint64_t seed = 1;
  std::size_t n_base = 64;
  std::size_t n_edit = 100;
  std::size_t n_filler = 16;
  std::size_t n_icl = 32;
  std::size_t n_relations = 4;
  std::size_t n_objects = 16;
  std::size_t n_filler_words = 32;
  std::size_t filler_length = 40;
  std::size_t polarity_words = 6;
  std::size_t vocab_capacity = 256;
};

struct Corpus {
  std::uint64_t seed = 0;
  Vocabulary vocab;
  TokenId bos = 0, eos = 0, sep = 0;
  std::array<TokenId, 2> label_words{};
  std::array<std::vector<TokenId>, 2> polarity;
  std::vector<std::vector<TokenId>> relation_forms;  // [relation][form]
  std::map<TokenId, std::vector<TokenId>> chain;     // successors, most likely first
  std::vector<FactRecord> base_facts;
  std::vector<FactRecord> edit_facts;
  std::vector<std::vector<TokenId>> filler;  // held-out probe sentences
  std::vector<IclExample> icl;               // held-out probe prompts

  /// Fresh filler sentence from the chain (bos included).
  std::vector<TokenId> sample_filler(std::mt19937_64& rng, std::size_t length) const;
  IclExample sample_icl(std::mt19937_64& rng, int query_class) const;
};

/// Successor probabilities of the filler chain, most likely first.
inline constexpr std::array<double, 3> kChainProbabilities = {0.6, 0.3, 0.1};

/// Throws CorpusError when a count is zero or the vocabulary capacity is
/// exceeded.
Corpus build_corpus(const CorpusSpec& spec);

/// Tab-separated records; see the README for the record kinds.
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);

}  // namespace editlab
