#include "magic/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <sstream>

#include "magic/util.hpp"

namespace magic {

namespace {

constexpr const char* kMagic = "MAGICCKPT";

void append_le_floats(std::string& out, const Eigen::ArrayXf& v) {
  const std::size_t base = out.size();
  out.resize(base + static_cast<std::size_t>(v.size()) * 4);
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(v[i]);
    for (int b = 0; b < 4; ++b) out[base + static_cast<std::size_t>(i) * 4 + b] = static_cast<char>((u >> (8 * b)) & 0xFF);
  }
}

std::string payload_of(const MagicModel<float>& model) {
  std::string payload;
  for (const auto& p : model.params) append_le_floats(payload, p.tensor.values());
  return payload;
}

[[noreturn]] void malformed(const std::string& what) {
  throw CheckpointError(CheckpointError::Kind::kMalformed, "malformed checkpoint header: " + what);
}

std::string take_line(const std::string& bytes, std::size_t& pos) {
  const std::size_t nl = bytes.find('\n', pos);
  if (nl == std::string::npos) throw CheckpointError(CheckpointError::Kind::kTruncatedPayload, "truncated header");
  std::string line = bytes.substr(pos, nl - pos);
  pos = nl + 1;
  return line;
}

std::string expect_key(const std::string& line, const std::string& key) {
  if (line.rfind(key + " ", 0) != 0) malformed("expected '" + key + "', got '" + line + "'");
  return line.substr(key.size() + 1);
}

}  // namespace

std::string checkpoint_bytes(const MagicModel<float>& model) {
  const std::string cfg_text = model.config.to_text();
  const std::string payload = payload_of(model);
  std::ostringstream h;
  h << kMagic << '\n';
  h << "version " << kCheckpointVersion << '\n';
  h << "config_hash " << hex64(model.config.hash()) << '\n';
  h << "content_hash " << hex64(fnv1a64(payload)) << '\n';
  h << "active_in " << model.active_in << '\n';
  h << "active_out " << model.active_out << '\n';
  h << "config_bytes " << cfg_text.size() << '\n';
  h << cfg_text;
  h << "params " << model.params.size() << '\n';
  for (const auto& p : model.params) h << p.name << ' ' << p.tensor.numel() << '\n';
  h << "payload_bytes " << payload.size() << '\n';
  return h.str() + payload;
}

MagicModel<float> checkpoint_from_bytes(const std::string& bytes) {
  std::size_t pos = 0;
  if (take_line(bytes, pos) != kMagic) malformed("not a checkpoint file");
  const std::string version = expect_key(take_line(bytes, pos), "version");
  if (version != std::to_string(kCheckpointVersion)) {
    throw CheckpointError(CheckpointError::Kind::kVersionMismatch,
                          "checkpoint version " + version + " != supported " + std::to_string(kCheckpointVersion));
  }
  const std::string cfg_hash = expect_key(take_line(bytes, pos), "config_hash");
  const std::string content_hash = expect_key(take_line(bytes, pos), "content_hash");
  int active_in = 0, active_out = 0;
  std::size_t cfg_len = 0;
  try {
    active_in = std::stoi(expect_key(take_line(bytes, pos), "active_in"));
    active_out = std::stoi(expect_key(take_line(bytes, pos), "active_out"));
    cfg_len = std::stoull(expect_key(take_line(bytes, pos), "config_bytes"));
  } catch (const std::logic_error&) {
    malformed("bad integer field");
  }
  if (pos + cfg_len > bytes.size()) throw CheckpointError(CheckpointError::Kind::kTruncatedPayload, "truncated config text");
  const std::string cfg_text = bytes.substr(pos, cfg_len);
  pos += cfg_len;
  if (hex64(fnv1a64(cfg_text)) != cfg_hash) {
    throw CheckpointError(CheckpointError::Kind::kConfigHashMismatch, "embedded config does not match its config_hash");
  }
  NetworkConfig cfg = NetworkConfig::from_text(cfg_text);
  MagicModel<float> model = build_model(cfg, 0);
  model.active_in = active_in;
  model.active_out = active_out;
  std::size_t n_params = 0;
  try {
    n_params = std::stoull(expect_key(take_line(bytes, pos), "params"));
  } catch (const std::logic_error&) {
    malformed("bad parameter count");
  }
  if (n_params != model.params.size()) {
    malformed("parameter count " + std::to_string(n_params) + " != model " + std::to_string(model.params.size()));
  }
  for (auto& p : model.params) {
    std::istringstream ls(take_line(bytes, pos));
    std::string name;
    std::size_t count = 0;
    ls >> name >> count;
    if (name != p.name || count != p.tensor.numel()) malformed("parameter '" + name + "' does not match model layout");
  }
  std::size_t payload_len = 0;
  try {
    payload_len = std::stoull(expect_key(take_line(bytes, pos), "payload_bytes"));
  } catch (const std::logic_error&) {
    malformed("bad payload size");
  }
  const std::size_t available = bytes.size() - pos;
  if (available < payload_len) {
    throw CheckpointError(CheckpointError::Kind::kTruncatedPayload, "truncated payload: " + std::to_string(available) + " of " +
                                                                  std::to_string(payload_len) + " bytes present");
  }
  const std::string payload = bytes.substr(pos, payload_len);
  if (hex64(fnv1a64(payload)) != content_hash) {
    throw CheckpointError(CheckpointError::Kind::kContentHashMismatch, "payload does not match content_hash");
  }
  std::size_t off = 0;
  for (auto& p : model.params) {
    auto& v = p.tensor.values();
    if (off + static_cast<std::size_t>(v.size()) * 4 > payload.size()) {
      throw CheckpointError(CheckpointError::Kind::kTruncatedPayload, "payload shorter than declared parameters");
    }
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[off + b])) << (8 * b);
      v[i] = std::bit_cast<float>(u);
      off += 4;
    }
  }
  if (off != payload.size()) malformed("payload longer than declared parameters");
  return model;
}

void save_checkpoint(const MagicModel<float>& model, const std::string& path) {
  write_file_atomic(path, checkpoint_bytes(model));
}

MagicModel<float> load_checkpoint(const std::string& path) {
  if (!std::filesystem::exists(path)) throw NotFoundError("checkpoint '" + path + "' not found");
  return checkpoint_from_bytes(read_file(path));
}

MagicModel<float> load_checkpoint(const std::string& path, const NetworkConfig& expected) {
  MagicModel<float> m = load_checkpoint(path);
  if (m.config.hash() != expected.hash()) {
    throw CheckpointError(CheckpointError::Kind::kConfigHashMismatch,
                          "checkpoint config '" + m.config.name + "' (hash " + hex64(m.config.hash()) +
                              ") does not match expected config '" + expected.name + "' (hash " +
                              hex64(expected.hash()) + ")");
  }
  return m;
}

}  // namespace magic
