#include "magic/config.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "magic/errors.hpp"
#include "magic/util.hpp"

namespace magic {

using nlohmann::ordered_json;

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp" + std::to_string(std::random_device{}() & 0xFFFFFF);
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string_view block_kind_name(BlockKind kind) {
  switch (kind) {
    case BlockKind::kGroupConv: return "group_conv";
    case BlockKind::kDepthwiseSeparable: return "depthwise_separable";
    case BlockKind::kHybridFirIir: return "hybrid_fir_iir";
    case BlockKind::kPointwise: return "pointwise";
  }
  return "?";
}

BlockKind parse_block_kind(std::string_view name) {
  for (BlockKind k : {BlockKind::kGroupConv, BlockKind::kDepthwiseSeparable, BlockKind::kHybridFirIir,
                      BlockKind::kPointwise}) {
    if (block_kind_name(k) == name) return k;
  }
  throw ConfigError("unknown block kind '" + std::string(name) + "'");
}

const SkipSpec* NetworkConfig::skip_at(int scale) const {
  for (const SkipSpec& s : skips) {
    if (s.from_scale == scale) return &s;
  }
  return nullptr;
}

namespace {

void validate_block(const BlockSpec& b, const ScaleSpec& s, int scale, int coarsest, const std::string& where) {
  const std::string at = where + " block at scale " + std::to_string(scale);
  if (b.k < 1 || b.k % 2 == 0) throw ConfigError(at + ": kernel size k must be odd and positive");
  switch (b.kind) {
    case BlockKind::kGroupConv:
      if (b.groups < 1 || s.channels % b.groups != 0) {
        throw ConfigError(at + ": channels (" + std::to_string(s.channels) + ") not divisible by groups (" +
                          std::to_string(b.groups) + ")");
      }
      break;
    case BlockKind::kHybridFirIir:
      if (scale != coarsest) {
        throw ConfigError(at + ": hybrid_fir_iir blocks are only allowed at the coarsest (bottleneck) scale " +
                          std::to_string(coarsest));
      }
      break;
    default:
      break;
  }
}

}  // namespace

void NetworkConfig::validate() const {
  if (in_channels < 1 || in_channels > 6) throw ConfigError("in_channels must be in [1, 6], got " + std::to_string(in_channels));
  if (out_channels < 1 || out_channels > 6) throw ConfigError("out_channels must be in [1, 6], got " + std::to_string(out_channels));
  if (scales.empty()) throw ConfigError("network has no scales (zero-block config)");
  if (scales.size() > 3) throw ConfigError("at most 3 scales (1 -> 4 -> 16) are supported");
  int expected = 1;
  for (std::size_t i = 0; i < scales.size(); ++i, expected *= 4) {
    const ScaleSpec& s = scales[i];
    const int si = static_cast<int>(i);
    if (s.factor != expected) {
      throw ConfigError("scale " + std::to_string(i) + " factor must be " + std::to_string(expected) + " (chain 1 -> 4 -> 16), got " +
                        std::to_string(s.factor));
    }
    if (s.channels < 1) throw ConfigError("scale " + std::to_string(i) + " channels must be positive");
    if (s.encoder.empty()) throw ConfigError("scale " + std::to_string(i) + " has zero encoder blocks");
    if (si == coarsest() && !s.decoder.empty()) throw ConfigError("the coarsest scale cannot have decoder blocks");
    for (const BlockSpec& b : s.encoder) validate_block(b, s, si, coarsest(), "encoder");
    for (const BlockSpec& b : s.decoder) {
      validate_block(b, s, si, coarsest(), "decoder");
    }
  }
  std::vector<bool> seen(scales.size(), false);
  for (const SkipSpec& k : skips) {
    if (k.from_scale != k.to_scale) {
      throw ConfigError("skip must connect equal scales, got " + std::to_string(k.from_scale) + " -> " + std::to_string(k.to_scale));
    }
    if (k.from_scale < 0 || k.from_scale >= coarsest()) {
      throw ConfigError("skip scale " + std::to_string(k.from_scale) + " must be below the bottleneck scale " + std::to_string(coarsest()));
    }
    if (seen[static_cast<std::size_t>(k.from_scale)]) throw ConfigError("duplicate skip at scale " + std::to_string(k.from_scale));
    seen[static_cast<std::size_t>(k.from_scale)] = true;
    if (k.compressed_channels < 1) throw ConfigError("skip compressed_channels must be positive");
    if (k.input_bits < 1 || k.input_bits > 24) throw ConfigError("skip input_bits must be in [1, 24]");
    if (k.dpcm_enabled) k.dpcm().validate();
  }
}

namespace {

ordered_json block_to_json(const BlockSpec& b) {
  ordered_json j;
  j["kind"] = std::string(block_kind_name(b.kind));
  if (b.kind == BlockKind::kGroupConv) j["groups"] = b.groups;
  if (b.kind != BlockKind::kPointwise) j["k"] = b.k;
  return j;
}

BlockSpec block_from_json(const ordered_json& j) {
  BlockSpec b;
  b.kind = parse_block_kind(j.at("kind").get<std::string>());
  b.groups = j.value("groups", 1);
  b.k = j.value("k", b.kind == BlockKind::kPointwise ? 1 : 3);
  return b;
}

}  // namespace

std::string NetworkConfig::to_text() const {
  ordered_json j;
  j["name"] = name;
  j["in_channels"] = in_channels;
  j["out_channels"] = out_channels;
  j["scales"] = ordered_json::array();
  for (const ScaleSpec& s : scales) {
    ordered_json js;
    js["factor"] = s.factor;
    js["channels"] = s.channels;
    js["encoder_residual"] = s.encoder_residual;
    js["encoder"] = ordered_json::array();
    for (const BlockSpec& b : s.encoder) js["encoder"].push_back(block_to_json(b));
    js["decoder_residual"] = s.decoder_residual;
    js["decoder"] = ordered_json::array();
    for (const BlockSpec& b : s.decoder) js["decoder"].push_back(block_to_json(b));
    j["scales"].push_back(js);
  }
  j["skips"] = ordered_json::array();
  for (const SkipSpec& k : skips) {
    ordered_json jk;
    jk["from_scale"] = k.from_scale;
    jk["to_scale"] = k.to_scale;
    jk["compressed_channels"] = k.compressed_channels;
    jk["input_bits"] = k.input_bits;
    jk["dpcm_enabled"] = k.dpcm_enabled;
    jk["dpcm_bits"] = k.dpcm_bits;
    j["skips"].push_back(jk);
  }
  return j.dump(2) + "\n";
}

NetworkConfig NetworkConfig::from_text(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("cannot parse network config: ") + e.what());
  }
  NetworkConfig cfg;
  try {
    cfg.name = j.value("name", std::string("custom"));
    cfg.in_channels = j.at("in_channels").get<int>();
    cfg.out_channels = j.at("out_channels").get<int>();
    for (const auto& js : j.at("scales")) {
      ScaleSpec s;
      s.factor = js.at("factor").get<int>();
      s.channels = js.at("channels").get<int>();
      s.encoder_residual = js.value("encoder_residual", true);
      s.decoder_residual = js.value("decoder_residual", false);
      for (const auto& b : js.at("encoder")) s.encoder.push_back(block_from_json(b));
      if (js.contains("decoder")) {
        for (const auto& b : js.at("decoder")) s.decoder.push_back(block_from_json(b));
      }
      cfg.scales.push_back(std::move(s));
    }
    if (j.contains("skips")) {
      for (const auto& jk : j.at("skips")) {
        SkipSpec k;
        k.from_scale = jk.at("from_scale").get<int>();
        k.to_scale = jk.value("to_scale", k.from_scale);
        k.compressed_channels = jk.at("compressed_channels").get<int>();
        k.input_bits = jk.value("input_bits", 12);
        k.dpcm_enabled = jk.value("dpcm_enabled", false);
        k.dpcm_bits = jk.value("dpcm_bits", 8);
        cfg.skips.push_back(k);
      }
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("malformed network config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

std::uint64_t NetworkConfig::hash() const { return fnv1a64(to_text()); }

NetworkConfig reference_config() {
  NetworkConfig cfg;
  cfg.name = "MagIC-ref";
  cfg.in_channels = 6;
  cfg.out_channels = 6;
  const BlockSpec group3{BlockKind::kGroupConv, 3, 3};
  const BlockSpec dw3{BlockKind::kDepthwiseSeparable, 1, 3};
  const BlockSpec hybrid{BlockKind::kHybridFirIir, 1, 3};
  cfg.scales = {
      ScaleSpec{1, 24, {group3, group3}, {group3, group3}, true, false},
      ScaleSpec{4, 48, {dw3, dw3}, {dw3, dw3}, true, false},
      ScaleSpec{16, 96, {hybrid, hybrid}, {}, true, false},
  };
  cfg.skips = {
      SkipSpec{0, 0, 4, true, 8, 12},
      SkipSpec{1, 1, 8, false, 8, 12},
  };
  return cfg;
}

NetworkConfig with_fir_bottleneck(NetworkConfig cfg) {
  for (ScaleSpec& s : cfg.scales) {
    for (BlockSpec& b : s.encoder) {
      if (b.kind == BlockKind::kHybridFirIir) b = BlockSpec{BlockKind::kDepthwiseSeparable, 1, 3};
    }
    for (BlockSpec& b : s.decoder) {
      if (b.kind == BlockKind::kHybridFirIir) b = BlockSpec{BlockKind::kDepthwiseSeparable, 1, 3};
    }
  }
  if (cfg.name == "MagIC-ref") cfg.name = "MagIC-fir-ablation";
  return cfg;
}

NetworkConfig load_config(const std::string& name_or_path) {
  if (name_or_path == "magic-ref" || name_or_path == "MagIC-ref") return reference_config();
  if (name_or_path == "fir-ablation") return with_fir_bottleneck(reference_config());
  if (!std::filesystem::exists(name_or_path)) {
    throw NotFoundError("config '" + name_or_path + "' is neither a built-in name (magic-ref, fir-ablation) nor a file");
  }
  return NetworkConfig::from_text(read_file(name_or_path));
}

void save_config(const NetworkConfig& cfg, const std::string& path) { write_file_atomic(path, cfg.to_text()); }

}  // namespace magic
