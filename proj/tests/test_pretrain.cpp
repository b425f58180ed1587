#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "editlab/corpus.hpp"
#include "editlab/train.hpp"
#include "support.hpp"

using namespace editlab;

namespace {

bool same_corpus(const Corpus& a, const Corpus& b) {
  if (a.vocab.size() != b.vocab.size()) return false;
  for (std::size_t i = 0; i < a.vocab.size(); ++i)
    if (a.vocab.token(static_cast<TokenId>(i)) != b.vocab.token(static_cast<TokenId>(i))) return false;
  auto facts_equal = [](const std::vector<FactRecord>& x, const std::vector<FactRecord>& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i].id != y[i].id || x[i].subject != y[i].subject || x[i].relation != y[i].relation ||
          x[i].object != y[i].object || x[i].new_object != y[i].new_object || x[i].prompt != y[i].prompt ||
          x[i].paraphrases != y[i].paraphrases)
        return false;
    return true;
  };
  if (!facts_equal(a.base_facts, b.base_facts) || !facts_equal(a.edit_facts, b.edit_facts)) return false;
  if (a.filler != b.filler || a.icl.size() != b.icl.size()) return false;
  for (std::size_t i = 0; i < a.icl.size(); ++i)
    if (a.icl[i].prompt != b.icl[i].prompt || a.icl[i].label != b.icl[i].label ||
        a.icl[i].label_position != b.icl[i].label_position)
      return false;
  return a.label_words == b.label_words && a.chain == b.chain;
}

}  // namespace

TEST_CASE("corpus is a pure function of its spec") {
  CorpusSpec spec;
  const auto a = build_corpus(spec), b = build_corpus(spec);
  CHECK(same_corpus(a, b));
  spec.seed = 2;
  CHECK_FALSE(same_corpus(a, build_corpus(spec)));
}

TEST_CASE("default corpus shape") {
  const auto c = build_corpus(CorpusSpec{});
  CHECK(c.edit_facts.size() == 100);
  CHECK(c.base_facts.size() == 64);
  CHECK(c.label_words[0] != c.label_words[1]);
  std::set<TokenId> base_subjects, edit_subjects;
  for (const auto& f : c.base_facts) base_subjects.insert(f.subject);
  for (const auto& f : c.edit_facts) {
    edit_subjects.insert(f.subject);
    CHECK(f.object != f.new_object);
    CHECK(f.paraphrases.size() >= 1);
    CHECK(f.prompt.size() == 3);
    for (const auto& p : f.paraphrases) {
      CHECK(p[1] == f.subject);
      CHECK(p.back() != f.prompt.back());
    }
  }
  for (TokenId s : edit_subjects) CHECK(base_subjects.count(s) == 0);
  for (const auto& ex : c.icl) {
    CHECK((ex.label == c.label_words[0] || ex.label == c.label_words[1]));
    CHECK(ex.label_position < ex.query_position());
    CHECK((ex.prompt[ex.label_position] == c.label_words[0] || ex.prompt[ex.label_position] == c.label_words[1]));
  }
  for (const auto& s : c.filler) CHECK(s.size() == CorpusSpec{}.filler_length);
}

TEST_CASE("corpus errors") {
  CorpusSpec spec;
  spec.n_edit = 0;
  CHECK_THROWS_AS(build_corpus(spec), CorpusError);
  spec = CorpusSpec{};
  spec.n_edit = 300;
  CHECK_THROWS_AS(build_corpus(spec), CorpusError);
}

TEST_CASE("corpus file round trip") {
  testing::TempDir dir("corpus");
  const auto c = build_corpus(testing::small_corpus_spec());
  save_corpus(c, dir.path() / "c.tsv");
  const auto back = load_corpus(dir.path() / "c.tsv");
  CHECK(same_corpus(c, back));
  CHECK(back.seed == c.seed);
  CHECK_THROWS_AS(load_corpus(dir.path() / "missing.tsv"), CorpusError);
}

TEST_CASE("vocabulary") {
  Vocabulary v;
  const auto a = v.add("alpha"), b = v.add("beta");
  CHECK(v.encode("beta alpha") == std::vector<TokenId>{b, a});
  CHECK(v.decode(std::vector<TokenId>{a, b}) == "alpha beta");
  CHECK_THROWS_AS(v.add("alpha"), CorpusError);
  CHECK_THROWS_AS(v.add("two words"), CorpusError);
  CHECK_THROWS_AS(v.encode("gamma"), CorpusError);
}

TEST_CASE("training") {
  const auto corpus = build_corpus(testing::small_corpus_spec());
  const auto init = ModelState::initialise(testing::small_arch(), 3);

  SUBCASE("zero steps returns the model unchanged") {
    TrainConfig tc;
    tc.steps = 0;
    auto m = init;
    m.edit_history_len = 4;
    const auto out = train(m, corpus, tc);
    CHECK(out.digest() == init.digest());
    CHECK(out.edit_history_len == 0);
  }
  SUBCASE("loss falls and training is deterministic") {
    TrainConfig tc;
    tc.steps = 60;
    TrainStats s1, s2;
    const auto a = train(init, corpus, tc, &s1);
    const auto b = train(init, corpus, tc, &s2);
    CHECK(s1.final_loss < s1.initial_loss);
    CHECK(s1.steps == 60);
    CHECK(a.digest() == b.digest());
    CHECK(s1.final_loss == s2.final_loss);
  }
  SUBCASE("divergence names the step") {
    TrainConfig tc;
    tc.steps = 5;
    tc.learn_rate = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(train(init, corpus, tc), TrainingDiverged);
  }
  SUBCASE("model vocabulary must cover the corpus") {
    ArchSpec small = testing::small_arch();
    small.vocab_size = 16;
    CHECK_THROWS_AS(train(ModelState::initialise(small, 1), corpus, TrainConfig{}), std::invalid_argument);
  }
}

TEST_CASE("fact recall") {
  // token 5 -> 9 everywhere, token 6 -> 2
  const auto m = testing::lookup_model(16, {{5, 9}, {6, 2}, {7, 9}});
  FactRecord known{0, 1, 5, 9, 3, {0, 1, 5}, {{0, 1, 7}}};
  FactRecord unknown{1, 1, 6, 9, 3, {0, 1, 6}, {{0, 1, 6}}};
  SUBCASE("model that always says x on facts expecting x") {
    const FactRecord facts[] = {known, known};
    CHECK(fact_recall(m, facts, false) == 1.0);
    CHECK(fact_recall(m, facts, true) == 1.0);
  }
  SUBCASE("known, unknown, known") {
    const FactRecord facts[] = {known, unknown, known};
    CHECK(fact_recall(m, facts, false) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  }
  SUBCASE("empty prompt is rejected") {
    FactRecord bad = known;
    bad.prompt.clear();
    const FactRecord facts[] = {bad};
    CHECK_THROWS_AS(fact_recall(m, facts, false), std::invalid_argument);
    CHECK_THROWS_AS(fact_recall(m, std::span<const FactRecord>{}, false), std::invalid_argument);
  }
}

TEST_CASE("default schedule learns the base facts") {
  const auto corpus = build_corpus(CorpusSpec{});
  TrainStats stats;
  const auto m = train(ModelState::initialise(ArchSpec{}, 1), corpus, TrainConfig{}, &stats);
  const double recall = fact_recall(m, corpus.base_facts, false);
  MESSAGE("base recall " << recall << ", loss " << stats.initial_loss << " -> " << stats.final_loss);
  CHECK(recall >= 0.95);
  CHECK(fact_recall(m, corpus.base_facts, true) >= 0.95);
  CHECK(stats.final_loss < stats.initial_loss);
}
