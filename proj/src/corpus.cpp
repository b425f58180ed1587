#include "editlab/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

namespace editlab {

TokenId Vocabulary::add(std::string token) {
  if (token.empty() || token.find_first_of("\t| \n") != std::string::npos)
    throw CorpusError("token '" + token + "' is empty or contains a tab, pipe or space");
  if (ids_.count(token)) throw CorpusError("duplicate token '" + token + "'");
  const auto id = static_cast<TokenId>(tokens_.size());
  ids_.emplace(token, id);
  tokens_.push_back(std::move(token));
  return id;
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) throw CorpusError("unknown token '" + std::string(token) + "'");
  return it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) throw CorpusError("token id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

bool Vocabulary::contains(std::string_view token) const { return ids_.count(std::string(token)) > 0; }

std::vector<TokenId> Vocabulary::encode(std::string_view text) const {
  std::vector<TokenId> out;
  std::istringstream is{std::string(text)};
  std::string word;
  while (is >> word) out.push_back(id(word));
  return out;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += token(ids[i]);
  }
  return out;
}

namespace {

std::size_t pick(std::mt19937_64& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

std::string numbered(const char* prefix, std::size_t i, int width) {
  std::ostringstream os;
  os << prefix;
  os.width(width);
  os.fill('0');
  os << i;
  return os.str();
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::size_t to_count(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    auto v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw CorpusError("corpus: bad " + what + " '" + s + "'");
  }
}

}  // namespace

std::vector<TokenId> Corpus::sample_filler(std::mt19937_64& rng, std::size_t length) const {
  std::vector<TokenId> out{bos};
  if (length < 2 || chain.empty()) return out;
  auto it = chain.begin();
  std::advance(it, static_cast<long>(pick(rng, chain.size())));
  TokenId word = it->first;
  out.push_back(word);
  std::discrete_distribution<std::size_t> succ(kChainProbabilities.begin(),
                                               kChainProbabilities.end());
  while (out.size() < length) {
    const auto& next = chain.at(word);
    word = next[std::min(succ(rng), next.size() - 1)];
    out.push_back(word);
  }
  return out;
}

IclExample Corpus::sample_icl(std::mt19937_64& rng, int query_class) const {
  auto clause = [&](int cls) {
    std::vector<TokenId> words{polarity[cls][pick(rng, polarity[cls].size())],
                               polarity[cls][pick(rng, polarity[cls].size())],
                               polarity[1 - cls][pick(rng, polarity[1 - cls].size())]};
    std::shuffle(words.begin(), words.end(), rng);
    return words;
  };
  const int demo_class = static_cast<int>(pick(rng, 2));
  IclExample ex;
  ex.prompt.push_back(bos);
  for (TokenId t : clause(demo_class)) ex.prompt.push_back(t);
  ex.label_position = ex.prompt.size();
  ex.prompt.push_back(label_words[demo_class]);
  ex.prompt.push_back(sep);
  for (TokenId t : clause(query_class)) ex.prompt.push_back(t);
  ex.label = label_words[query_class];
  return ex;
}

Corpus build_corpus(const CorpusSpec& spec) {
  if (spec.n_base < 1 || spec.n_edit < 1 || spec.n_filler < 1 || spec.n_icl < 1)
    throw CorpusError("build_corpus: all record counts must be >= 1");
  if (spec.n_relations < 1 || spec.n_objects < 2 || spec.n_filler_words < 4 ||
      spec.polarity_words < 2 || spec.filler_length < 2)
    throw CorpusError("build_corpus: world dimensions too small");
  const std::size_t needed = 3 + 2 + 2 * spec.polarity_words + spec.n_filler_words +
                             3 * spec.n_relations + spec.n_objects + spec.n_base + spec.n_edit;
  if (needed > spec.vocab_capacity)
    throw CorpusError("build_corpus: vocabulary exhausted (need " + std::to_string(needed) +
                      " tokens, capacity " + std::to_string(spec.vocab_capacity) + ")");

  Corpus c;
  c.seed = spec.seed;
  std::mt19937_64 rng(spec.seed);
  c.bos = c.vocab.add("<bos>");
  c.eos = c.vocab.add("<eos>");
  c.sep = c.vocab.add("<sep>");
  c.label_words = {c.vocab.add("Lpos"), c.vocab.add("Lneg")};
  for (std::size_t i = 0; i < spec.polarity_words; ++i) c.polarity[0].push_back(c.vocab.add(numbered("pos", i, 1)));
  for (std::size_t i = 0; i < spec.polarity_words; ++i) c.polarity[1].push_back(c.vocab.add(numbered("neg", i, 1)));

  std::vector<TokenId> words;
  for (std::size_t i = 0; i < spec.n_filler_words; ++i) words.push_back(c.vocab.add(numbered("w", i, 2)));
  for (TokenId w : words) {
    std::vector<TokenId> others;
    for (TokenId o : words)
      if (o != w) others.push_back(o);
    std::shuffle(others.begin(), others.end(), rng);
    others.resize(kChainProbabilities.size());
    c.chain[w] = others;
  }

  for (std::size_t r = 0; r < spec.n_relations; ++r) {
    std::vector<TokenId> forms;
    for (const char* suffix : {"a", "b", "c"})
      forms.push_back(c.vocab.add(numbered("rel", r, 1) + suffix));
    c.relation_forms.push_back(forms);
  }
  std::vector<TokenId> objects;
  for (std::size_t i = 0; i < spec.n_objects; ++i) objects.push_back(c.vocab.add(numbered("o", i, 2)));

  auto make_fact = [&](std::size_t id, TokenId subject) {
    FactRecord f;
    f.id = id;
    f.subject = subject;
    const auto& forms = c.relation_forms[pick(rng, c.relation_forms.size())];
    f.relation = forms[0];
    f.object = objects[pick(rng, objects.size())];
    do {
      f.new_object = objects[pick(rng, objects.size())];
    } while (f.new_object == f.object);
    f.prompt = {c.bos, subject, forms[0]};
    for (std::size_t k = 1; k < forms.size(); ++k) f.paraphrases.push_back({c.bos, subject, forms[k]});
    return f;
  };
  for (std::size_t i = 0; i < spec.n_base + spec.n_edit; ++i) {
    const TokenId s = c.vocab.add(numbered("s", i, 3));
    if (i < spec.n_base)
      c.base_facts.push_back(make_fact(i, s));
    else
      c.edit_facts.push_back(make_fact(i, s));
  }

  for (std::size_t i = 0; i < spec.n_filler; ++i) c.filler.push_back(c.sample_filler(rng, spec.filler_length));
  for (std::size_t i = 0; i < spec.n_icl; ++i) c.icl.push_back(c.sample_icl(rng, static_cast<int>(i % 2)));
  return c;
}

void save_corpus(const Corpus& c, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw CorpusError("cannot write " + path.string());
  const auto& v = c.vocab;
  auto text = [&](std::span<const TokenId> ids) { return v.decode(ids); };
  os << "corpus\tv1\t" << c.seed << '\n';
  for (std::size_t i = 0; i < v.size(); ++i) os << "vocab\t" << i << '\t' << v.token(static_cast<TokenId>(i)) << '\n';
  os << "special\tbos\t" << v.token(c.bos) << '\n';
  os << "special\teos\t" << v.token(c.eos) << '\n';
  os << "special\tsep\t" << v.token(c.sep) << '\n';
  for (int k = 0; k < 2; ++k) os << "label\t" << k << '\t' << v.token(c.label_words[k]) << '\n';
  for (int k = 0; k < 2; ++k) os << "polarity\t" << k << '\t' << text(c.polarity[k]) << '\n';
  for (std::size_t r = 0; r < c.relation_forms.size(); ++r)
    os << "relation\t" << r << '\t' << text(c.relation_forms[r]) << '\n';
  for (const auto& [w, next] : c.chain) {
    os << "chain\t" << v.token(w) << '\t';
    for (std::size_t i = 0; i < next.size(); ++i) os << (i ? "|" : "") << v.token(next[i]);
    os << '\n';
  }
  auto fact_line = [&](const char* kind, const FactRecord& f) {
    os << kind << '\t' << f.id << '\t' << v.token(f.subject) << '\t' << v.token(f.relation) << '\t'
       << v.token(f.object) << '\t' << v.token(f.new_object) << '\t';
    for (std::size_t i = 0; i < f.paraphrases.size(); ++i)
      os << (i ? "|" : "") << text(std::span(f.paraphrases[i]).subspan(1));
    os << '\n';
  };
  for (const auto& f : c.base_facts) fact_line("base", f);
  for (const auto& f : c.edit_facts) fact_line("edit", f);
  for (std::size_t i = 0; i < c.filler.size(); ++i) os << "filler\t" << i << '\t' << text(c.filler[i]) << '\n';
  for (std::size_t i = 0; i < c.icl.size(); ++i)
    os << "icl\t" << i << '\t' << text(c.icl[i].prompt) << '\t' << v.token(c.icl[i].label) << '\t'
       << c.icl[i].label_position << '\n';
  if (!os) throw CorpusError("write failed for " + path.string());
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open corpus " + path.string());
  Corpus c;
  std::string line;
  std::size_t lineno = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split(line, '\t');
    const std::string where = path.string() + ":" + std::to_string(lineno);
    auto need = [&](std::size_t n) {
      if (f.size() != n)
        throw CorpusError(where + ": expected " + std::to_string(n) + " fields, got " +
                          std::to_string(f.size()));
    };
    const std::string& kind = f[0];
    if (kind == "corpus") {
      need(3);
      if (f[1] != "v1") throw CorpusError(where + ": unsupported corpus version " + f[1]);
      c.seed = to_count(f[2], "seed");
      saw_header = true;
    } else if (!saw_header) {
      throw CorpusError(where + ": missing corpus header record");
    } else if (kind == "vocab") {
      need(3);
      if (to_count(f[1], "vocab id") != c.vocab.size()) throw CorpusError(where + ": vocab ids out of order");
      c.vocab.add(f[2]);
    } else if (kind == "special") {
      need(3);
      const TokenId id = c.vocab.id(f[2]);
      if (f[1] == "bos") c.bos = id;
      else if (f[1] == "eos") c.eos = id;
      else if (f[1] == "sep") c.sep = id;
      else throw CorpusError(where + ": unknown special " + f[1]);
    } else if (kind == "label") {
      need(3);
      const auto k = to_count(f[1], "label index");
      if (k > 1) throw CorpusError(where + ": label index must be 0 or 1");
      c.label_words[k] = c.vocab.id(f[2]);
    } else if (kind == "polarity") {
      need(3);
      const auto k = to_count(f[1], "polarity index");
      if (k > 1) throw CorpusError(where + ": polarity index must be 0 or 1");
      c.polarity[k] = c.vocab.encode(f[2]);
    } else if (kind == "relation") {
      need(3);
      c.relation_forms.push_back(c.vocab.encode(f[2]));
    } else if (kind == "chain") {
      need(3);
      std::vector<TokenId> next;
      for (const auto& s : split(f[2], '|')) next.push_back(c.vocab.id(s));
      c.chain[c.vocab.id(f[1])] = next;
    } else if (kind == "base" || kind == "edit") {
      need(7);
      FactRecord fr;
      fr.id = to_count(f[1], "fact id");
      fr.subject = c.vocab.id(f[2]);
      fr.relation = c.vocab.id(f[3]);
      fr.object = c.vocab.id(f[4]);
      fr.new_object = c.vocab.id(f[5]);
      fr.prompt = {c.bos, fr.subject, fr.relation};
      for (const auto& p : split(f[6], '|')) {
        auto ids = c.vocab.encode(p);
        ids.insert(ids.begin(), c.bos);
        fr.paraphrases.push_back(std::move(ids));
      }
      if (fr.paraphrases.empty()) throw CorpusError(where + ": fact without paraphrase");
      if (fr.object == fr.new_object) throw CorpusError(where + ": new object equals object");
      (kind == "base" ? c.base_facts : c.edit_facts).push_back(std::move(fr));
    } else if (kind == "filler") {
      need(3);
      c.filler.push_back(c.vocab.encode(f[2]));
    } else if (kind == "icl") {
      need(5);
      IclExample ex;
      ex.prompt = c.vocab.encode(f[2]);
      ex.label = c.vocab.id(f[3]);
      ex.label_position = to_count(f[4], "label position");
      if (ex.label_position >= ex.prompt.size()) throw CorpusError(where + ": label position past prompt");
      c.icl.push_back(std::move(ex));
    } else {
      throw CorpusError(where + ": unknown record kind '" + kind + "'");
    }
  }
  if (!saw_header) throw CorpusError(path.string() + ": empty corpus file");
  return c;
}

}  // namespace editlab
