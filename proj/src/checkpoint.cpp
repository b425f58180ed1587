#include "editlab/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace editlab {

namespace {

constexpr const char* kModelMagic = "editlab-checkpoint";
constexpr const char* kMatrixMagic = "editlab-matrix";
constexpr const char* kProducer = "editlab-0.1";

using Header = std::map<std::string, std::string>;

void write_floats(std::ostream& os, std::span<const float> values) {
  std::string buf(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, &values[i], 4);
    for (int b = 0; b < 4; ++b) buf[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

void read_floats(const std::string& payload, std::size_t offset, std::span<float> out) {
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[offset + i * 4 + b]))
              << (8 * b);
    std::memcpy(&out[i], &bits, 4);
  }
}

void write_header(std::ostream& os, const char* magic, const Header& header) {
  os << magic << ' ' << kCheckpointVersion;
  for (const auto& [k, v] : header) {
    if (k.find_first_of(" =\n") != std::string::npos || v.find_first_of(" \n") != std::string::npos)
      throw CheckpointError("checkpoint header entry '" + k + "' contains a separator");
    os << ' ' << k << '=' << v;
  }
  os << '\n';
}

struct RawFile {
  Header header;
  std::string payload;
};

RawFile read_raw(const std::filesystem::path& path, const char* magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw CheckpointError(path.string() + ": missing header line");
  std::istringstream hs(line);
  std::string m;
  int version = -1;
  hs >> m >> version;
  if (m != magic) throw CheckpointError(path.string() + ": expected '" + magic + "' header");
  if (version != kCheckpointVersion)
    throw CheckpointError(path.string() + ": version " + std::to_string(version) +
                          " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  RawFile raw;
  std::string kv;
  while (hs >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw CheckpointError(path.string() + ": bad header field " + kv);
    raw.header[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  std::ostringstream rest;
  rest << in.rdbuf();
  raw.payload = rest.str();
  return raw;
}

std::size_t header_size(const Header& h, const std::string& key, const std::filesystem::path& path) {
  auto it = h.find(key);
  if (it == h.end()) throw CheckpointError(path.string() + ": header lacks '" + key + "'");
  try {
    std::size_t used = 0;
    const auto v = std::stoull(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw CheckpointError(path.string() + ": header field '" + key + "' is not a count");
  }
}

void check_payload(const RawFile& raw, std::size_t values, const std::filesystem::path& path) {
  const std::size_t want = values * 4;
  if (raw.payload.size() < want)
    throw CheckpointError(path.string() + ": payload truncated (" +
                          std::to_string(raw.payload.size() / 4) + " of " +
                          std::to_string(values) + " values)");
  if (raw.payload.size() > want)
    throw CheckpointError(path.string() + ": payload longer than header declares (" +
                          std::to_string(raw.payload.size()) + " bytes, expected " +
                          std::to_string(want) + ")");
}

}  // namespace

void save_checkpoint(const ModelState& model, const std::filesystem::path& path,
                     const std::string& config_digest) {
  Header h;
  const ArchSpec& a = model.arch;
  h["vocab_size"] = std::to_string(a.vocab_size);
  h["d_model"] = std::to_string(a.d_model);
  h["n_layers"] = std::to_string(a.n_layers);
  h["n_heads"] = std::to_string(a.n_heads);
  h["d_ff"] = std::to_string(a.d_ff);
  h["max_seq"] = std::to_string(a.max_seq);
  h["seed"] = std::to_string(model.seed);
  h["edit_history_len"] = std::to_string(model.edit_history_len);
  h["values"] = std::to_string(model.parameter_count());
  h["producer"] = kProducer;
  h["config"] = config_digest.empty() ? "none" : config_digest;
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot write " + path.string());
  write_header(os, kModelMagic, h);
  model.for_each_tensor([&](std::string_view, auto span) { write_floats(os, span); });
  if (!os) throw CheckpointError("write failed for " + path.string());
}

std::map<std::string, std::string> read_checkpoint_header(const std::filesystem::path& path) {
  return read_raw(path, kModelMagic).header;
}

ModelState load_checkpoint(const std::filesystem::path& path, const ArchSpec* expected) {
  const RawFile raw = read_raw(path, kModelMagic);
  ArchSpec arch;
  arch.vocab_size = header_size(raw.header, "vocab_size", path);
  arch.d_model = header_size(raw.header, "d_model", path);
  arch.n_layers = header_size(raw.header, "n_layers", path);
  arch.n_heads = header_size(raw.header, "n_heads", path);
  arch.d_ff = header_size(raw.header, "d_ff", path);
  arch.max_seq = header_size(raw.header, "max_seq", path);
  try {
    arch.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
  if (expected && !(*expected == arch))
    throw CheckpointError(path.string() + ": architecture mismatch (file has " + to_string(arch) +
                          ", expected " + to_string(*expected) + ")");

  ModelState model = ModelState::zeros(arch);
  model.seed = header_size(raw.header, "seed", path);
  model.edit_history_len = header_size(raw.header, "edit_history_len", path);
  const std::size_t values = header_size(raw.header, "values", path);
  if (values != model.parameter_count())
    throw CheckpointError(path.string() + ": header declares " + std::to_string(values) +
                          " values but the architecture needs " +
                          std::to_string(model.parameter_count()));
  check_payload(raw, values, path);
  std::size_t offset = 0;
  model.for_each_tensor([&](std::string_view, auto span) {
    read_floats(raw.payload, offset, span);
    offset += span.size() * 4;
  });
  return model;
}

void save_matrix_file(const MatrixF& m, const std::filesystem::path& path,
                      const std::map<std::string, std::string>& metadata) {
  Header h = metadata;
  h["rows"] = std::to_string(m.rows());
  h["cols"] = std::to_string(m.cols());
  h["values"] = std::to_string(m.size());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot write " + path.string());
  write_header(os, kMatrixMagic, h);
  write_floats(os, m.flat());
  if (!os) throw CheckpointError("write failed for " + path.string());
}

MatrixF load_matrix_file(const std::filesystem::path& path,
                         std::map<std::string, std::string>* metadata) {
  const RawFile raw = read_raw(path, kMatrixMagic);
  const std::size_t rows = header_size(raw.header, "rows", path);
  const std::size_t cols = header_size(raw.header, "cols", path);
  const std::size_t values = header_size(raw.header, "values", path);
  if (values != rows * cols)
    throw CheckpointError(path.string() + ": rows*cols does not match declared values");
  check_payload(raw, values, path);
  MatrixF m(rows, cols);
  read_floats(raw.payload, 0, m.flat());
  if (metadata) *metadata = raw.header;
  return m;
}

}  // namespace editlab
