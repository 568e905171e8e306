#include "tkd/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "tkd/error.hpp"

namespace tkd {

namespace {

constexpr std::string_view kMagic = "TKD1";

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t parse_size(const std::string& key, const std::string& text) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw IoError("checkpoint: field " + key + " is not an unsigned integer: '" + text + "'");
  }
  return v;
}

double parse_double(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw IoError("checkpoint: field " + key + " is not a number: '" + text + "'");
}

void append_le(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>(bits & 0xFF));
    bits >>= 8;
  }
}

double read_le(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | static_cast<unsigned char>(p[i]);
  return std::bit_cast<double>(bits);
}

}  // namespace

std::string serialize_checkpoint(const EncoderModel& model) {
  const ModelConfig& c = model.config();
  std::ostringstream head;
  head << kMagic << " num_layers=" << c.num_layers << " num_heads=" << c.num_heads << " d_model=" << c.d_model
       << " d_ff=" << c.d_ff << " vocab_size=" << c.vocab_size << " max_seq_len=" << c.max_seq_len
       << " num_classes=" << c.num_classes << " layernorm_eps=" << format_double(c.layernorm_eps) << " params=";
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (i) head << ',';
    head << params[i].name() << ':';
    const auto& shape = params[i].shape();
    for (std::size_t k = 0; k < shape.size(); ++k) head << (k ? "x" : "") << shape[k];
  }
  head << '\n';
  std::string out = head.str();
  for (const auto& p : params)
    for (double v : p.data()) append_le(out, v);
  return out;
}

EncoderModel deserialize_checkpoint(std::string_view bytes) {
  const auto newline = bytes.find('\n');
  if (newline == std::string_view::npos) throw IoError("checkpoint: missing manifest line");
  std::istringstream manifest{std::string(bytes.substr(0, newline))};
  std::string magic;
  manifest >> magic;
  if (magic != kMagic) throw IoError("checkpoint: bad magic '" + magic + "'");

  std::map<std::string, std::string> fields;
  std::string token;
  while (manifest >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw IoError("checkpoint: malformed manifest field '" + token + "'");
    fields[token.substr(0, eq)] = token.substr(eq + 1);
  }
  auto field = [&](const std::string& key) -> const std::string& {
    auto it = fields.find(key);
    if (it == fields.end()) throw IoError("checkpoint: manifest lacks field " + key);
    return it->second;
  };

  ModelConfig c;
  c.num_layers = parse_size("num_layers", field("num_layers"));
  c.num_heads = parse_size("num_heads", field("num_heads"));
  c.d_model = parse_size("d_model", field("d_model"));
  c.d_ff = parse_size("d_ff", field("d_ff"));
  c.vocab_size = parse_size("vocab_size", field("vocab_size"));
  c.max_seq_len = parse_size("max_seq_len", field("max_seq_len"));
  c.num_classes = parse_size("num_classes", field("num_classes"));
  c.layernorm_eps = parse_double("layernorm_eps", field("layernorm_eps"));

  EncoderModel model(c, 0);
  auto params = model.parameters();

  std::vector<std::string> entries;
  {
    std::istringstream list(field("params"));
    std::string e;
    while (std::getline(list, e, ',')) entries.push_back(e);
  }
  if (entries.size() != params.size()) {
    throw IoError("checkpoint: manifest lists " + std::to_string(entries.size()) + " parameters, config implies " +
                  std::to_string(params.size()));
  }
  std::size_t offset = newline + 1;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& shape = params[i].shape();
    std::string expected = params[i].name() + ':';
    for (std::size_t k = 0; k < shape.size(); ++k) expected += (k ? "x" : "") + std::to_string(shape[k]);
    if (entries[i] != expected) {
      throw IoError("checkpoint: parameter entry '" + entries[i] + "' does not match expected '" + expected + "'");
    }
    const std::size_t n = params[i].size();
    if (bytes.size() < offset + 8 * n) throw IoError("checkpoint: truncated parameter data");
    auto dst = params[i].mutable_data();
    for (std::size_t j = 0; j < n; ++j) dst[j] = read_le(bytes.data() + offset + 8 * j);
    offset += 8 * n;
  }
  if (offset != bytes.size()) throw IoError("checkpoint: trailing bytes after parameter data");
  return model;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void save_checkpoint(const EncoderModel& model, const std::filesystem::path& path) {
  write_file(path, serialize_checkpoint(model));
}

EncoderModel load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : bytes) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string checkpoint_checksum(const EncoderModel& model) { return fnv1a_hex(serialize_checkpoint(model)); }

}  // namespace tkd
