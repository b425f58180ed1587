#include "editlab/codebook.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace editlab {

Codebook::Codebook(std::size_t layer, std::size_t key_dim, std::size_t value_dim)
    : layer_(layer), key_dim_(key_dim), value_dim_(value_dim) {}

void Codebook::add(CodebookEntry entry) {
  if (!(entry.radius > 0.0)) throw std::invalid_argument("codebook: radius must be > 0");
  if (entry.key.size() != key_dim_ || entry.value.size() != value_dim_)
    throw std::invalid_argument("codebook: entry width mismatch");
  for (double v : entry.key)
    if (!std::isfinite(v)) throw std::invalid_argument("codebook: non-finite key");
  entries_.push_back(std::move(entry));
}

std::optional<NearestKey> Codebook::nearest(std::span<const double> query) const {
  if (entries_.empty()) return std::nullopt;
  if (query.size() != key_dim_) throw std::invalid_argument("codebook: query width mismatch");
  NearestKey best{0, INFINITY};
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    double ss = 0.0;
    const auto& key = entries_[i].key;
    for (std::size_t j = 0; j < key.size(); ++j) {
      const double d = query[j] - key[j];
      ss += d * d;
    }
    const double dist = std::sqrt(ss);
    if (dist < best.distance) best = {i, dist};
  }
  return best;
}

std::optional<std::span<const double>> Codebook::lookup(std::span<const double> key) const {
  const auto hit = nearest(key);
  if (!hit || !(hit->distance < entries_[hit->index].radius)) return std::nullopt;
  return std::span<const double>(entries_[hit->index].value);
}

std::optional<std::span<const double>> grace_forward_hook(const Codebook& codebook,
                                                          std::span<const double> h_query) {
  return codebook.lookup(h_query);
}

namespace {

void put(std::ostream& os, double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  os.write(buf, end - buf);
}

double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw std::runtime_error(where + ": bad number '" + s + "'");
  return v;
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string f;
  while (std::getline(is, f, ',')) out.push_back(f);
  return out;
}

}  // namespace

void Codebook::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "codebook," << layer_ << ',' << key_dim_ << ',' << value_dim_ << '\n';
  for (const auto& e : entries_) {
    os << e.fact_id << ',';
    put(os, e.radius);
    for (double v : e.key) os << ',', put(os, v);
    for (double v : e.value) os << ',', put(os, v);
    os << '\n';
  }
}

Codebook Codebook::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open codebook " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty codebook file");
  const auto head = split_commas(line);
  if (head.size() != 4 || head[0] != "codebook")
    throw std::runtime_error(path.string() + ": bad codebook header");
  Codebook cb(std::stoul(head[1]), std::stoul(head[2]), std::stoul(head[3]));
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    const auto f = split_commas(line);
    if (f.size() != 2 + cb.key_dim_ + cb.value_dim_)
      throw std::runtime_error(where + ": expected " + std::to_string(2 + cb.key_dim_ + cb.value_dim_) +
                               " fields, got " + std::to_string(f.size()));
    CodebookEntry e;
    e.fact_id = std::stoul(f[0]);
    e.radius = parse_double(f[1], where);
    for (std::size_t i = 0; i < cb.key_dim_; ++i) e.key.push_back(parse_double(f[2 + i], where));
    for (std::size_t i = 0; i < cb.value_dim_; ++i)
      e.value.push_back(parse_double(f[2 + cb.key_dim_ + i], where));
    cb.add(std::move(e));
  }
  return cb;
}

}  // namespace editlab
