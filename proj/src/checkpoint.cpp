#include "enclab/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace enclab {

namespace {

constexpr char kMagic[4] = {'N', 'B', 'K', 'T'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, uint64_t v) {
  write_u32(os, static_cast<uint32_t>(v));
  write_u32(os, static_cast<uint32_t>(v >> 32));
}

uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 |
         uint32_t(b[3]) << 24;
}

uint64_t read_u64(std::istream& is) {
  uint64_t lo = read_u32(is);
  uint64_t hi = read_u32(is);
  return lo | (hi << 32);
}

}  // namespace

void Checkpoint::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : config) {
    if (k == key) {
      v = value;
      return;
    }
  }
  config.emplace_back(key, value);
}

const std::string* Checkpoint::find(const std::string& key) const {
  for (const auto& [k, v] : config)
    if (k == key) return &v;
  return nullptr;
}

const std::string& Checkpoint::require(const std::string& key) const {
  const std::string* v = find(key);
  if (!v) throw std::runtime_error("checkpoint: missing config key " + key);
  return *v;
}

const Tensor* Checkpoint::find_tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot write " + path);
  os.write(kMagic, 4);
  write_u32(os, kVersion);

  std::ostringstream block;
  for (const auto& [k, v] : ckpt.config) block << k << "=" << v << "\n";
  const std::string text = block.str();
  write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));

  write_u32(os, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<uint32_t>(t.rank()));
    for (int64_t i = 0; i < t.rank(); ++i)
      write_u64(os, static_cast<uint64_t>(t.dim(i)));
    static_assert(sizeof(float) == 4);
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * 4));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: " + path + " is not an NBKT file");
  const uint32_t version = read_u32(is);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));

  Checkpoint ckpt;
  const uint64_t text_len = read_u64(is);
  std::string text(text_len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(text_len));
  if (!is) throw std::runtime_error("checkpoint: truncated config block");
  std::istringstream block(text);
  std::string line;
  while (std::getline(block, line)) {
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("checkpoint: malformed config line '" + line + "'");
    ckpt.config.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }

  const uint32_t n_tensors = read_u32(is);
  ckpt.tensors.reserve(n_tensors);
  for (uint32_t i = 0; i < n_tensors; ++i) {
    const uint32_t name_len = read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const uint32_t rank = read_u32(is);
    Shape shape(rank);
    int64_t numel = 1;
    for (uint32_t r = 0; r < rank; ++r) {
      shape[r] = static_cast<int64_t>(read_u64(is));
      numel *= shape[r];
    }
    std::vector<float> data(static_cast<size_t>(numel));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(numel * 4));
    if (!is) throw std::runtime_error("checkpoint: truncated tensor " + name);
    ckpt.tensors.emplace_back(name, Tensor::from_data(shape, std::move(data)));
  }
  return ckpt;
}

namespace {
std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}
}  // namespace

std::vector<std::pair<std::string, std::string>> model_config_to_kv(
    const ModelConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("model.n_layers", std::to_string(cfg.n_layers));
  kv.emplace_back("model.d_model", std::to_string(cfg.d_model));
  kv.emplace_back("model.n_heads", std::to_string(cfg.n_heads));
  kv.emplace_back("model.vocab_size", std::to_string(cfg.vocab_size));
  kv.emplace_back("model.max_positions", std::to_string(cfg.max_positions));
  kv.emplace_back("model.positional", to_string(cfg.positional));
  kv.emplace_back("model.rope_theta", fmt_double(cfg.rope_theta));
  kv.emplace_back("model.rope_scale",
                  fmt_double(cfg.rope_scaling ? cfg.rope_scaling->scale : 1.0));
  kv.emplace_back("model.rope_original_max",
                  std::to_string(cfg.rope_scaling
                                     ? cfg.rope_scaling->original_max_positions
                                     : 0));
  kv.emplace_back("model.norm", to_string(cfg.norm));
  kv.emplace_back("model.norm_placement", to_string(cfg.norm_placement));
  kv.emplace_back("model.activation", to_string(cfg.activation));
  kv.emplace_back("model.ffn_hidden", std::to_string(cfg.resolved_ffn_hidden()));
  kv.emplace_back("model.use_bias", cfg.use_bias ? "true" : "false");
  kv.emplace_back("model.tie_mlm_head", cfg.tie_mlm_head ? "true" : "false");
  kv.emplace_back("model.norm_eps", fmt_double(cfg.norm_eps));
  return kv;
}

ModelConfig model_config_from_kv(
    const std::vector<std::pair<std::string, std::string>>& kv) {
  ModelConfig cfg;
  double rope_scale = 1.0;
  int64_t rope_original = 0;
  for (const auto& [key, value] : kv) {
    if (key == "model.n_layers") cfg.n_layers = std::stoll(value);
    else if (key == "model.d_model") cfg.d_model = std::stoll(value);
    else if (key == "model.n_heads") cfg.n_heads = std::stoll(value);
    else if (key == "model.vocab_size") cfg.vocab_size = std::stoll(value);
    else if (key == "model.max_positions") cfg.max_positions = std::stoll(value);
    else if (key == "model.positional") cfg.positional = positional_from_string(value);
    else if (key == "model.rope_theta") cfg.rope_theta = std::stod(value);
    else if (key == "model.rope_scale") rope_scale = std::stod(value);
    else if (key == "model.rope_original_max") rope_original = std::stoll(value);
    else if (key == "model.norm") cfg.norm = norm_from_string(value);
    else if (key == "model.norm_placement") cfg.norm_placement = placement_from_string(value);
    else if (key == "model.activation") cfg.activation = activation_from_string(value);
    else if (key == "model.ffn_hidden") cfg.ffn_hidden = std::stoll(value);
    else if (key == "model.use_bias") cfg.use_bias = (value == "true");
    else if (key == "model.tie_mlm_head") cfg.tie_mlm_head = (value == "true");
    else if (key == "model.norm_eps") cfg.norm_eps = std::stof(value);
    // keys outside model.* belong to other sections of the block
  }
  if (rope_scale != 1.0) {
    RopeScaling scaling;
    scaling.scale = rope_scale;
    scaling.original_max_positions = rope_original;
    cfg.rope_scaling = scaling;
  }
  return cfg;
}

}  // namespace enclab
