#include "editlab/train.hpp"

#include <cmath>
#include <random>

namespace editlab {

TrainingDiverged::TrainingDiverged(std::size_t step, double loss)
    : std::runtime_error("training diverged at step " + std::to_string(step) + " (loss " +
                         std::to_string(loss) + ")"),
      step_(step) {}

namespace {

struct Example {
  std::vector<TokenId> tokens;
  std::vector<std::size_t> targets;
};

Example fact_example(const Corpus& corpus, const FactRecord& f, std::mt19937_64& rng) {
  const std::size_t forms = 1 + f.paraphrases.size();
  const std::size_t form = std::uniform_int_distribution<std::size_t>(0, 2 * forms - 1)(rng);
  // Canonical prompt half the time, paraphrases share the rest.
  const auto& prompt = form < forms ? f.prompt : f.paraphrases[(form - forms) % f.paraphrases.size()];
  Example ex;
  ex.tokens = prompt;
  ex.tokens.push_back(f.object);
  ex.tokens.push_back(corpus.eos);
  ex.targets = {prompt.size(), prompt.size() + 1};
  return ex;
}

}  // namespace

ModelState train(ModelState model, const Corpus& corpus, const TrainConfig& config,
                 TrainStats* stats) {
  model.edit_history_len = 0;
  TrainStats local;
  if (config.steps == 0) {
    if (stats) *stats = local;
    return model;
  }
  if (model.arch.vocab_size < corpus.vocab.size())
    throw std::invalid_argument("train: model vocabulary smaller than corpus vocabulary");

  std::vector<const FactRecord*> facts;
  for (const auto& f : corpus.base_facts) facts.push_back(&f);
  if (config.learn_edit_facts)
    for (const auto& f : corpus.edit_facts) facts.push_back(&f);
  const std::size_t filler_len = corpus.filler.empty() ? 32 : corpus.filler.front().size();

  std::mt19937_64 rng(config.seed);
  ParameterGrads m1 = ParameterGrads::zeros(model.arch);
  ParameterGrads m2 = ParameterGrads::zeros(model.arch);
  ParameterGrads grads = ParameterGrads::zeros(model.arch);

  for (std::size_t step = 0; step < config.steps; ++step) {
    std::vector<Example> batch;
    for (std::size_t i = 0; i < config.batch_facts && !facts.empty(); ++i)
      batch.push_back(fact_example(corpus, *facts[std::uniform_int_distribution<std::size_t>(
                                                0, facts.size() - 1)(rng)],
                                   rng));
    for (std::size_t i = 0; i < config.batch_filler; ++i) {
      Example ex;
      ex.tokens = corpus.sample_filler(rng, std::min(filler_len, model.arch.max_seq));
      for (std::size_t p = 1; p < ex.tokens.size(); ++p) ex.targets.push_back(p);
      batch.push_back(std::move(ex));
    }
    for (std::size_t i = 0; i < config.batch_icl; ++i) {
      const int cls = std::uniform_int_distribution<int>(0, 1)(rng);
      IclExample icl = corpus.sample_icl(rng, cls);
      Example ex;
      ex.tokens = icl.prompt;
      ex.tokens.push_back(icl.label);
      ex.targets = {icl.label_position, ex.tokens.size() - 1};
      batch.push_back(std::move(ex));
    }

    grads.for_each_tensor([](std::string_view, auto span) { std::fill(span.begin(), span.end(), 0.0); });
    double loss = 0.0;
    const double inv_batch = 1.0 / static_cast<double>(batch.size());
    for (const auto& ex : batch) {
      ForwardOptions opts;
      opts.trace = true;
      auto fr = forward(model, ex.tokens, opts);
      auto lg = cross_entropy_grad(fr.logits, ex.tokens, ex.targets);
      for (auto& g : lg.dlogits.flat()) g *= inv_batch;
      loss += lg.loss * inv_batch;
      BackwardRequest req;
      req.params = &grads;
      backward(model, *fr.trace, lg.dlogits, req);
    }
    if (!std::isfinite(loss)) throw TrainingDiverged(step, loss);
    if (step == 0) local.initial_loss = loss;
    local.final_loss = loss;

    const double t = static_cast<double>(step + 1);
    const double c1 = 1.0 - std::pow(config.beta1, t);
    const double c2 = 1.0 - std::pow(config.beta2, t);
    std::vector<std::span<double>> g_spans, m_spans, v_spans;
    grads.for_each_tensor([&](std::string_view, auto s) { g_spans.push_back(s); });
    m1.for_each_tensor([&](std::string_view, auto s) { m_spans.push_back(s); });
    m2.for_each_tensor([&](std::string_view, auto s) { v_spans.push_back(s); });
    std::size_t k = 0;
    model.for_each_tensor([&](std::string_view, std::span<float> p) {
      auto g = g_spans[k], m = m_spans[k], v = v_spans[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
        v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
        const double update = config.learn_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.adam_eps);
        p[i] = static_cast<float>(static_cast<double>(p[i]) - update);
      }
      ++k;
    });
    local.steps = step + 1;
  }
  if (!model.all_finite()) throw TrainingDiverged(config.steps, local.final_loss);
  if (stats) *stats = local;
  return model;
}

TokenId first_token(const ModelState& model, std::span<const TokenId> prompt,
                    const MlpAdapter* adapter) {
  ForwardOptions opts;
  opts.adapter = adapter;
  const auto fr = forward(model, prompt, opts);
  return argmax(fr.logits.row(prompt.size() - 1));
}

double fact_recall(const ModelState& model, std::span<const FactRecord> facts, bool use_paraphrase,
                   const MlpAdapter* adapter) {
  if (facts.empty()) throw std::invalid_argument("fact_recall: no facts");
  std::size_t hits = 0;
  for (const auto& f : facts) {
    const auto& prompt = use_paraphrase && !f.paraphrases.empty() ? f.paraphrases.front() : f.prompt;
    if (prompt.empty()) throw std::invalid_argument("fact_recall: fact " + std::to_string(f.id) + " has an empty prompt");
    if (first_token(model, prompt, adapter) == f.object) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(facts.size());
}

}  // namespace editlab
