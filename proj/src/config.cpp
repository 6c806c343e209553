#include "vqctap/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <variant>

#include "bytes.hpp"
#include "vqctap/errors.hpp"

namespace vqctap {

namespace {

using FieldRef = std::variant<int64_t*, double*>;

struct Field {
  const char* key;
  FieldRef ref;
};

std::vector<Field> fields(Config& c) {
  ModelConfig& m = c.model;
  ScheduleConfig& s = c.schedule;
  OptimConfig& o = c.optim;
  ConnectorConfig& k = c.connector;
  return {
      {"model.mel_bands", &m.mel_bands},
      {"model.vocab_size", &m.vocab_size},
      {"model.pad_id", &m.pad_id},
      {"model.silence_id", &m.silence_id},
      {"model.phoneme_embed_dim", &m.phoneme_embed_dim},
      {"model.hidden_dim", &m.hidden_dim},
      {"model.latent_dim", &m.latent_dim},
      {"model.attention_heads", &m.attention_heads},
      {"model.ffn_dim", &m.ffn_dim},
      {"model.speech_encoder_layers", &m.speech_encoder_layers},
      {"model.phoneme_encoder_layers", &m.phoneme_encoder_layers},
      {"model.speech_decoder_layers", &m.speech_decoder_layers},
      {"model.phoneme_decoder_layers", &m.phoneme_decoder_layers},
      {"model.speech_decoder_convs", &m.speech_decoder_convs},
      {"model.prompt_channels", &m.prompt_channels},
      {"model.prompt_convs", &m.prompt_convs},
      {"model.prompt_dim", &m.prompt_dim},
      {"model.codebook_size", &m.codebook_size},
      {"model.prompt_window_frames", &m.prompt_window_frames},
      {"schedule.kl_start", &s.kl_start},
      {"schedule.kl_end", &s.kl_end},
      {"schedule.kl_upper", &s.kl_upper},
      {"schedule.consistency_start", &s.consistency_start},
      {"schedule.consistency_end", &s.consistency_end},
      {"schedule.consistency_upper", &s.consistency_upper},
      {"schedule.weight_mse", &s.weight_mse},
      {"schedule.weight_vq", &s.weight_vq},
      {"schedule.weight_classify", &s.weight_classify},
      {"schedule.weight_contrastive", &s.weight_contrastive},
      {"schedule.kl_margin", &s.kl_margin},
      {"optim.learning_rate", &o.learning_rate},
      {"optim.batch_size", &o.batch_size},
      {"optim.ema_decay", &o.ema_decay},
      {"optim.ema_epsilon", &o.ema_epsilon},
      {"optim.init_tau", &o.init_tau},
      {"connector.diffusion_steps", &k.diffusion_steps},
      {"connector.beta_min", &k.beta_min},
      {"connector.beta_max", &k.beta_max},
      {"connector.residual_layers", &k.residual_layers},
      {"connector.residual_blocks", &k.residual_blocks},
      {"connector.channels", &k.channels},
      {"connector.conditioner_layers", &k.conditioner_layers},
      {"connector.learning_rate", &k.learning_rate},
      {"connector.batch_size", &k.batch_size},
      {"inference.uniform_duration", &c.inference.uniform_duration},
  };
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string format_value(const FieldRef& ref) {
  if (const auto* i = std::get_if<int64_t*>(&ref)) return std::to_string(**i);
  char buf[64];
  const double value = *std::get<double*>(ref);
  const auto result = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, result.ptr);
}

void assign(const std::string& key, const FieldRef& ref, const std::string& text) {
  const char* begin = text.data();
  const char* end = text.data() + text.size();
  std::from_chars_result result{};
  if (auto* const* i = std::get_if<int64_t*>(&ref)) {
    result = std::from_chars(begin, end, **i);
  } else {
    result = std::from_chars(begin, end, *std::get<double*>(ref));
  }
  if (result.ec != std::errc() || result.ptr != end) {
    throw ParameterError("config: bad value '" + text + "' for key " + key);
  }
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ParameterError("config: " + message);
}

}  // namespace

Config desk_config() { return Config{}; }

Config paper_scale_config() {
  Config c;
  c.scale = "paper";
  ModelConfig& m = c.model;
  m.phoneme_embed_dim = 256;
  m.hidden_dim = 256;
  m.latent_dim = 256;
  m.attention_heads = 4;
  m.ffn_dim = 1024;
  m.speech_encoder_layers = 6;
  m.phoneme_encoder_layers = 4;
  m.speech_decoder_layers = 6;
  m.phoneme_decoder_layers = 6;
  m.speech_decoder_convs = 5;
  m.prompt_channels = 256;
  m.prompt_dim = 256;
  m.codebook_size = 8192;
  c.connector.channels = 256;
  return c;
}

Config parse_config(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::string scale = "desk";
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParameterError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key == "scale") {
      scale = value;
    } else {
      entries.emplace_back(std::move(key), std::move(value));
    }
  }

  Config config;
  if (scale == "desk") {
    config = desk_config();
  } else if (scale == "paper") {
    config = paper_scale_config();
  } else {
    throw ParameterError("config: unknown scale '" + scale + "'");
  }

  auto table = fields(config);
  for (const auto& [key, value] : entries) {
    bool found = false;
    for (const Field& f : table) {
      if (key == f.key) {
        assign(key, f.ref, value);
        found = true;
        break;
      }
    }
    if (!found) throw ParameterError("config: unknown key " + key);
  }
  validate(config);
  return config;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

std::vector<std::pair<std::string, std::string>> config_entries(const Config& config) {
  Config copy = config;
  std::vector<std::pair<std::string, std::string>> out;
  out.emplace_back("scale", copy.scale);
  for (const Field& f : fields(copy)) out.emplace_back(f.key, format_value(f.ref));
  return out;
}

std::string to_text(const Config& config) {
  std::string text;
  for (const auto& [key, value] : config_entries(config)) text += key + " = " + value + "\n";
  return text;
}

std::vector<std::pair<std::string, std::string>> model_entries(const ModelConfig& model) {
  Config c;
  c.model = model;
  std::vector<std::pair<std::string, std::string>> out;
  for (auto& entry : config_entries(c)) {
    if (entry.first.rfind("model.", 0) == 0) out.push_back(std::move(entry));
  }
  return out;
}

uint64_t model_hash(const ModelConfig& model) {
  uint64_t h = detail::kFnvOffset;
  for (const auto& [key, value] : model_entries(model)) {
    h = detail::fnv1a64(key + "=" + value + "\n", h);
  }
  return h;
}

void validate(const Config& config) {
  const ModelConfig& m = config.model;
  require(m.mel_bands == 40, "model.mel_bands must be 40");
  require(m.vocab_size >= 3, "model.vocab_size must be >= 3");
  require(m.pad_id >= 0 && m.pad_id < m.vocab_size, "model.pad_id out of range");
  require(m.silence_id >= 0 && m.silence_id < m.vocab_size && m.silence_id != m.pad_id,
          "model.silence_id out of range");
  require(m.hidden_dim > 0 && m.latent_dim > 0 && m.phoneme_embed_dim > 0,
          "dimensions must be positive");
  require(m.attention_heads > 0 && m.hidden_dim % m.attention_heads == 0,
          "model.hidden_dim must be divisible by model.attention_heads");
  require(m.ffn_dim > 0, "model.ffn_dim must be positive");
  require(m.speech_encoder_layers >= 0 && m.phoneme_encoder_layers >= 0 &&
              m.speech_decoder_layers >= 0 && m.phoneme_decoder_layers >= 0,
          "layer counts must be nonnegative");
  require(m.speech_decoder_convs >= 0, "model.speech_decoder_convs must be nonnegative");
  require(m.prompt_convs >= 1 && m.prompt_channels > 0 && m.prompt_dim > 0,
          "prompt encoder dimensions must be positive");
  require(m.codebook_size >= 1, "model.codebook_size must be >= 1");
  require(m.prompt_window_frames >= 1, "model.prompt_window_frames must be >= 1");

  const ScheduleConfig& s = config.schedule;
  require(s.kl_start < s.kl_end, "schedule.kl_start must be < schedule.kl_end");
  require(s.consistency_start < s.consistency_end,
          "schedule.consistency_start must be < schedule.consistency_end");
  require(s.kl_upper >= 0 && s.consistency_upper >= 0, "ramp uppers must be >= 0");
  require(s.kl_margin >= 0, "schedule.kl_margin must be >= 0");

  const OptimConfig& o = config.optim;
  require(o.learning_rate > 0, "optim.learning_rate must be positive");
  require(o.batch_size >= 1, "optim.batch_size must be >= 1");
  require(o.ema_decay > 0 && o.ema_decay < 1, "optim.ema_decay must be in (0, 1)");
  require(o.ema_epsilon > 0, "optim.ema_epsilon must be positive");
  require(o.init_tau >= 1 && o.init_tau <= 100, "optim.init_tau must be in [1, 100]");

  const ConnectorConfig& k = config.connector;
  require(k.diffusion_steps >= 1, "connector.diffusion_steps must be >= 1");
  require(k.beta_min > 0 && k.beta_min <= k.beta_max && k.beta_max < 1,
          "connector betas must satisfy 0 < beta_min <= beta_max < 1");
  require(k.residual_blocks >= 1 && k.residual_layers >= k.residual_blocks &&
              k.residual_layers % k.residual_blocks == 0,
          "connector.residual_layers must be a positive multiple of residual_blocks");
  require(k.channels > 0 && k.conditioner_layers >= 0, "connector dimensions invalid");
  require(k.learning_rate > 0 && k.batch_size >= 1, "connector optimizer settings invalid");
  require(config.inference.uniform_duration >= 1, "inference.uniform_duration must be >= 1");
}

}  // namespace vqctap
