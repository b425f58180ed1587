#pragma once

#include <cstdint>
#include <stdexcept>

#include "editlab/corpus.hpp"
#include "editlab/model.hpp"

namespace editlab {

struct TrainConfig {
  std::size_t steps = 400;
  double learn_rate = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-8;
  std::size_t batch_facts = 16;
  std::size_t batch_filler = 1;
  std::size_t batch_icl = 2;
  bool learn_edit_facts = false;  // also train the edit stream's original objects
  std::uint64_t seed = 1;
};

struct TrainStats {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::size_t steps = 0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t step, double loss);
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// Adam on the mixed fact / filler / ICL stream. Base facts (and edit facts
/// when requested) are learned with their original objects through the
/// canonical prompt and every paraphrase. Returns the trained copy with
/// edit_history_len reset to 0.
ModelState train(ModelState model, const Corpus& corpus, const TrainConfig& config,
                 TrainStats* stats = nullptr);

/// Greedy first token after `prompt`.
TokenId first_token(const ModelState& model, std::span<const TokenId> prompt,
                    const MlpAdapter* adapter = nullptr);

/// Fraction of facts whose greedy next token after the prompt (or the first
/// paraphrase) is the fact's object.
double fact_recall(const ModelState& model, std::span<const FactRecord> facts, bool use_paraphrase,
                   const MlpAdapter* adapter = nullptr);

}  // namespace editlab
