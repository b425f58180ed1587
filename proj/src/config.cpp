#include "editlab/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace editlab {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <typename T>
T parse_num(const std::string& key, const std::string& value) {
  T v{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last)
    throw ConfigError("config key '" + key + "': expected a number, got '" + value + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + value + "'");
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    if constexpr (std::is_same_v<T, std::string>)
      s += v[i];
    else
      s += std::to_string(v[i]);
  }
  return s;
}

struct Field {
  ConfigKey key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define SIZE_FIELD(sec, name, member, doc)                                                   \
  Field{{sec, name, doc},                                                                    \
        [](const RunConfig& c) { return std::to_string(c.member); },                         \
        [](RunConfig& c, const std::string& v) { c.member = parse_num<std::size_t>(name, v); }}
#define REAL_FIELD(sec, name, member, doc)                                                   \
  Field{{sec, name, doc},                                                                    \
        [](const RunConfig& c) { return fmt(c.member); },                                    \
        [](RunConfig& c, const std::string& v) { c.member = parse_num<double>(name, v); }}

std::string optional_size(const std::optional<std::size_t>& v) { return v ? std::to_string(*v) : "auto"; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{{"run", "seed", "seeds the corpus, initialisation and training"},
            [](const RunConfig& c) { return std::to_string(c.seed); },
            [](RunConfig& c, const std::string& v) { c.seed = parse_num<std::uint64_t>("seed", v); }},
      Field{{"run", "out_dir", "output root; empty means $EDITLAB_OUT or ./out"},
            [](const RunConfig& c) { return c.out_dir; },
            [](RunConfig& c, const std::string& v) { c.out_dir = v; }},

      SIZE_FIELD("arch", "vocab_size", arch.vocab_size, "vocabulary capacity"),
      SIZE_FIELD("arch", "d_model", arch.d_model, "residual width"),
      SIZE_FIELD("arch", "n_layers", arch.n_layers, "transformer blocks"),
      SIZE_FIELD("arch", "n_heads", arch.n_heads, "attention heads"),
      SIZE_FIELD("arch", "d_ff", arch.d_ff, "MLP width (key dimension)"),
      SIZE_FIELD("arch", "max_seq", arch.max_seq, "context length"),

      SIZE_FIELD("corpus", "n_base", corpus.n_base, "pretrained facts kept unedited"),
      SIZE_FIELD("corpus", "n_edit", corpus.n_edit, "facts in the edit stream"),
      SIZE_FIELD("corpus", "n_filler", corpus.n_filler, "held-out filler sentences"),
      SIZE_FIELD("corpus", "n_icl", corpus.n_icl, "held-out ICL prompts"),
      SIZE_FIELD("corpus", "n_relations", corpus.n_relations, "relations (3 surface forms each)"),
      SIZE_FIELD("corpus", "n_objects", corpus.n_objects, "object tokens"),
      SIZE_FIELD("corpus", "n_filler_words", corpus.n_filler_words, "filler vocabulary"),
      SIZE_FIELD("corpus", "filler_length", corpus.filler_length, "tokens per filler sentence"),
      SIZE_FIELD("corpus", "polarity_words", corpus.polarity_words, "words per ICL class"),

      SIZE_FIELD("train", "steps", train.steps, "Adam steps"),
      REAL_FIELD("train", "learn_rate", train.learn_rate, "Adam step size"),
      REAL_FIELD("train", "beta1", train.beta1, "first-moment decay"),
      REAL_FIELD("train", "beta2", train.beta2, "second-moment decay"),
      REAL_FIELD("train", "adam_eps", train.adam_eps, "Adam denominator floor"),
      SIZE_FIELD("train", "batch_facts", train.batch_facts, "fact sequences per batch"),
      SIZE_FIELD("train", "batch_filler", train.batch_filler, "filler sequences per batch"),
      SIZE_FIELD("train", "batch_icl", train.batch_icl, "ICL sequences per batch"),
      Field{{"train", "learn_edit_facts", "also pretrain the edit stream's original objects"},
            [](const RunConfig& c) { return std::string(c.train.learn_edit_facts ? "true" : "false"); },
            [](RunConfig& c, const std::string& v) { c.train.learn_edit_facts = parse_bool("learn_edit_facts", v); }},

      Field{{"edit", "method", "rank_one | batched | codebook"},
            [](const RunConfig& c) { return to_string(c.method); },
            [](RunConfig& c, const std::string& v) {
              try {
                c.method = parse_edit_method(v);
              } catch (const std::invalid_argument& e) {
                throw ConfigError(std::string("config key 'method': ") + e.what());
              }
            }},
      Field{{"edit", "layer", "edited layer (first of a batched range); auto = method default"},
            [](const RunConfig& c) { return optional_size(c.layer); },
            [](RunConfig& c, const std::string& v) {
              c.layer = v == "auto" ? std::nullopt : std::optional(parse_num<std::size_t>("layer", v));
            }},
      Field{{"edit", "layer_last", "last layer of a batched range; auto = method default"},
            [](const RunConfig& c) { return optional_size(c.layer_last); },
            [](RunConfig& c, const std::string& v) {
              c.layer_last = v == "auto" ? std::nullopt : std::optional(parse_num<std::size_t>("layer_last", v));
            }},
      SIZE_FIELD("edit", "batch_size", batch_size, "facts per editor call (batched only)"),
      REAL_FIELD("edit", "epsilon", epsilon, "codebook deferral radius"),
      Field{{"edit", "ridge", "ridge added to C; auto = 1e-2 * trace(C) / d_ff"},
            [](const RunConfig& c) { return c.ridge ? fmt(*c.ridge) : std::string("auto"); },
            [](RunConfig& c, const std::string& v) {
              c.ridge = v == "auto" ? std::nullopt : std::optional(parse_num<double>("ridge", v));
            }},
      SIZE_FIELD("edit", "covariance_sentences", covariance_sentences, "fresh filler sentences behind C"),
      SIZE_FIELD("edit", "solver_iterations", solver.max_iterations, "target-value iteration cap"),
      REAL_FIELD("edit", "solver_step", solver.step_size, "target-value step (times mean square of h)"),
      REAL_FIELD("edit", "solver_margin", solver.margin, "required logit lead of the new object"),
      Field{{"edit", "on_error", "continue | halt"},
            [](const RunConfig& c) { return std::string(c.halt_on_error ? "halt" : "continue"); },
            [](RunConfig& c, const std::string& v) {
              if (v != "halt" && v != "continue")
                throw ConfigError("config key 'on_error': expected halt or continue, got '" + v + "'");
              c.halt_on_error = v == "halt";
            }},

      Field{{"eval", "schedule", "edit counts at which to evaluate"},
            [](const RunConfig& c) { return join(c.harness.schedule.points); },
            [](RunConfig& c, const std::string& v) {
              c.harness.schedule.points.clear();
              for (const auto& item : split_list(v))
                c.harness.schedule.points.push_back(parse_num<std::size_t>("schedule", item));
            }},
      SIZE_FIELD("eval", "paraphrases", harness.paraphrases, "paraphrases scored per fact"),
      SIZE_FIELD("eval", "lm_prompts", harness.probes.lm_prompts, "filler prefixes for the LM probe"),
      SIZE_FIELD("eval", "prompt_length", harness.probes.prompt_length, "tokens per LM-probe prefix"),
      SIZE_FIELD("eval", "generate_length", harness.probes.generate_length, "greedy tokens per LM-probe answer"),
      SIZE_FIELD("eval", "ngram", harness.probes.ngram, "n-gram size of the repetition ratio"),

      Field{{"sweep", "axis", "layer | batch_size | epsilon | method"},
            [](const RunConfig& c) { return to_string(c.sweep_axis); },
            [](RunConfig& c, const std::string& v) {
              try {
                c.sweep_axis = parse_sweep_axis(v);
              } catch (const std::invalid_argument& e) {
                throw ConfigError(std::string("config key 'axis': ") + e.what());
              }
            }},
      Field{{"sweep", "values", "comma-separated axis values; empty = axis default"},
            [](const RunConfig& c) { return join(c.sweep_values); },
            [](RunConfig& c, const std::string& v) { c.sweep_values = split_list(v); }},
  };
  return table;
}

#undef SIZE_FIELD
#undef REAL_FIELD

const Field& find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key.key == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_text(RunConfig& c, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      const bool known = std::any_of(fields().begin(), fields().end(),
                                     [&](const Field& f) { return f.key.section == section; });
      if (!known) throw ConfigError(where + ": unknown section '" + section + "'");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      const Field& f = find_field(key);
      if (!section.empty() && f.key.section != section)
        throw ConfigError("key '" + key + "' belongs in [" + f.key.section + "], not [" + section + "]");
      f.set(c, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
}

RunConfig finish(RunConfig c, const std::map<std::string, std::string>& overrides) {
  for (const auto& [k, v] : overrides) find_field(k).set(c, v);
  c.corpus.seed = c.seed;
  c.train.seed = c.seed;
  c.validate();
  return c;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& f : fields()) out.push_back(f.key);
    return out;
  }();
  return keys;
}

EditPlan RunConfig::edit_plan() const {
  EditPlan p = default_plan(method, arch.n_layers);
  if (layer) {
    p.layer = *layer;
    if (!layer_last) p.layer_last = method == EditMethod::batched ? std::max(p.layer_last, *layer) : *layer;
  }
  if (layer_last) p.layer_last = *layer_last;
  p.batch_size = batch_size;
  p.epsilon = epsilon;
  p.solver = solver;
  return p;
}

std::vector<std::string> RunConfig::resolved_sweep_values() const {
  if (!sweep_values.empty()) return sweep_values;
  switch (sweep_axis) {
    case SweepAxis::layer: {
      std::vector<std::string> v;
      for (std::size_t l = 0; l < arch.n_layers; ++l) v.push_back(std::to_string(l));
      return v;
    }
    case SweepAxis::batch_size: return {"1", "10", "100"};
    case SweepAxis::epsilon: return {"1", "5", "10", "20"};
    case SweepAxis::method: return {"rank_one", "batched", "codebook"};
  }
  return {};
}

std::string RunConfig::ridge_setting() const { return ridge ? fmt(*ridge) : "auto"; }

std::vector<std::string> RunConfig::canonical_lines() const {
  std::vector<std::string> lines;
  for (const auto& f : fields()) {
    if (f.key.key == "out_dir") continue;
    lines.push_back(f.key.section + "." + f.key.key + "=" + f.get(*this));
  }
  std::sort(lines.begin(), lines.end());
  return lines;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return hex_digest(h);
}

std::string RunConfig::digest() const {
  std::string text;
  for (const auto& l : canonical_lines()) text += l + '\n';
  return fnv1a_hex(text);
}

std::string RunConfig::pretrain_digest() const {
  std::string text;
  for (const auto& l : canonical_lines())
    if (l.starts_with("run.") || l.starts_with("arch.") || l.starts_with("corpus.") || l.starts_with("train."))
      text += l + '\n';
  return fnv1a_hex(text);
}

void RunConfig::validate() const {
  try {
    arch.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("arch: ") + e.what());
  }
  if (corpus.n_base == 0 || corpus.n_edit == 0 || corpus.n_filler == 0 || corpus.n_icl == 0)
    throw ConfigError("corpus counts must be >= 1");
  if (corpus.filler_length < 2 || corpus.filler_length > arch.max_seq)
    throw ConfigError("filler_length must be in [2, max_seq]");
  if (!(train.learn_rate > 0.0)) throw ConfigError("learn_rate must be > 0");
  if (!(train.beta1 >= 0.0 && train.beta1 < 1.0) || !(train.beta2 >= 0.0 && train.beta2 < 1.0))
    throw ConfigError("beta1 and beta2 must be in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
  if (ridge && !(*ridge >= 0.0)) throw ConfigError("ridge must be >= 0");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (covariance_sentences == 0) throw ConfigError("covariance_sentences must be >= 1");
  if (!(solver.step_size > 0.0)) throw ConfigError("solver_step must be > 0");
  if (harness.probes.ngram == 0) throw ConfigError("ngram must be >= 1");
  if (harness.probes.prompt_length == 0) throw ConfigError("prompt_length must be >= 1");
  if (harness.probes.prompt_length + std::max(harness.probes.generate_length, kPerplexityWindow) > arch.max_seq)
    throw ConfigError("prompt_length + generate_length exceeds max_seq");
  try {
    harness.schedule.validate();
    edit_plan().validate(arch);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (harness.schedule.last() > corpus.n_edit)
    throw ConfigError("schedule needs " + std::to_string(harness.schedule.last()) + " edit facts but n_edit is " +
                      std::to_string(corpus.n_edit));
}

RunConfig parse_config_text(const std::string& text, const std::map<std::string, std::string>& overrides) {
  RunConfig c;
  apply_text(c, text, "<config>");
  return finish(std::move(c), overrides);
}

RunConfig parse_config(const std::optional<std::filesystem::path>& file,
                       const std::map<std::string, std::string>& overrides) {
  RunConfig c;
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot read config file " + file->string());
    std::stringstream ss;
    ss << in.rdbuf();
    apply_text(c, ss.str(), file->string());
  }
  return finish(std::move(c), overrides);
}

std::string to_config_text(const RunConfig& config) {
  std::string out, section;
  for (const auto& f : fields()) {
    if (f.key.section != section) {
      section = f.key.section;
      out += (out.empty() ? "[" : "\n[") + section + "]\n";
    }
    out += f.key.key + " = " + f.get(config) + "\n";
  }
  return out;
}

std::filesystem::path output_root(const RunConfig& config) {
  if (!config.out_dir.empty()) return config.out_dir;
  if (const char* env = std::getenv("EDITLAB_OUT"); env && *env) return env;
  return "out";
}

}  // namespace editlab
