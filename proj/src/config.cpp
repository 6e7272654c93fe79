#include "camp/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <sstream>

#include "camp/errors.hpp"

namespace camp {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename U>
U parse_number(const std::string& key, const std::string& v) {
  U out{};
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as a number");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

struct Field {
  const char* name;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&, const std::string&)> set;
};

#define CAMP_SIZE(f)                                                                         \
  Field{#f, [](const TrainConfig& c) { return std::to_string(c.f); },                        \
        [](TrainConfig& c, const std::string& k, const std::string& v) { c.f = parse_number<std::size_t>(k, v); }}
#define CAMP_U64(f)                                                                          \
  Field{#f, [](const TrainConfig& c) { return std::to_string(c.f); },                        \
        [](TrainConfig& c, const std::string& k, const std::string& v) { c.f = parse_number<std::uint64_t>(k, v); }}
#define CAMP_DOUBLE(f)                                                                       \
  Field{#f, [](const TrainConfig& c) { return fmt_double(c.f); },                            \
        [](TrainConfig& c, const std::string& k, const std::string& v) { c.f = parse_number<double>(k, v); }}
#define CAMP_BOOL(f)                                                                         \
  Field{#f, [](const TrainConfig& c) { return std::string(c.f ? "true" : "false"); },        \
        [](TrainConfig& c, const std::string& k, const std::string& v) { c.f = parse_bool(k, v); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      CAMP_SIZE(k),
      CAMP_SIZE(embed_dim),
      CAMP_SIZE(unfrozen_layers),
      CAMP_BOOL(learnable_vocab),
      Field{"template_mode", [](const TrainConfig& c) { return to_string(c.template_mode); },
            [](TrainConfig& c, const std::string&, const std::string& v) { c.template_mode = parse_template_mode(v); }},
      Field{"combine_mode", [](const TrainConfig& c) { return to_string(c.combine_mode); },
            [](TrainConfig& c, const std::string&, const std::string& v) { c.combine_mode = parse_combine_mode(v); }},
      CAMP_BOOL(include_negation),
      CAMP_DOUBLE(alpha),
      CAMP_DOUBLE(beta),
      Field{"fixed_prompt_texts",
            [](const TrainConfig& c) {
              std::string s;
              for (std::size_t i = 0; i < c.fixed_prompt_texts.size(); ++i) s += (i ? "|" : "") + c.fixed_prompt_texts[i];
              return s;
            },
            [](TrainConfig& c, const std::string&, const std::string& v) {
              c.fixed_prompt_texts.clear();
              if (v.empty()) return;
              std::size_t start = 0;
              for (;;) {
                const auto bar = v.find('|', start);
                c.fixed_prompt_texts.push_back(trim(v.substr(start, bar - start)));
                if (bar == std::string::npos) break;
                start = bar + 1;
              }
            }},
      CAMP_BOOL(position_reset),
      CAMP_SIZE(batch_size),
      CAMP_DOUBLE(peak_lr),
      CAMP_SIZE(warmup_steps),
      CAMP_SIZE(total_steps),
      Field{"lr_schedule", [](const TrainConfig& c) { return to_string(c.lr_schedule); },
            [](TrainConfig& c, const std::string&, const std::string& v) { c.lr_schedule = parse_lr_schedule(v); }},
      CAMP_DOUBLE(weight_decay),
      CAMP_DOUBLE(adam_beta1),
      CAMP_DOUBLE(adam_beta2),
      CAMP_DOUBLE(adam_eps),
      CAMP_DOUBLE(grad_clip),
      CAMP_DOUBLE(init_tau),
      CAMP_DOUBLE(min_logit_scale),
      CAMP_DOUBLE(max_logit_scale),
      CAMP_U64(seed),
      CAMP_SIZE(n_train),
      CAMP_SIZE(n_eval),
      Field{"corpus_index", [](const TrainConfig& c) { return c.corpus_index; },
            [](TrainConfig& c, const std::string&, const std::string& v) { c.corpus_index = v; }},
      CAMP_SIZE(text_hidden),
      CAMP_SIZE(text_layers),
      CAMP_SIZE(text_heads),
      CAMP_SIZE(text_max_len),
      CAMP_SIZE(vision_width),
      CAMP_SIZE(vision_layers),
      CAMP_SIZE(vision_heads),
      CAMP_SIZE(pool_heads),
      CAMP_SIZE(patch),
      CAMP_SIZE(image_side),
      CAMP_SIZE(max_frames),
      Field{"temporal_mode", [](const TrainConfig& c) { return to_string(c.temporal_mode); },
            [](TrainConfig& c, const std::string&, const std::string& v) { c.temporal_mode = parse_temporal_mode(v); }},
      CAMP_SIZE(mlp_ratio),
  };
  return table;
}

#undef CAMP_SIZE
#undef CAMP_U64
#undef CAMP_DOUBLE
#undef CAMP_BOOL

}  // namespace

std::string to_string(LrSchedule s) { return s == LrSchedule::constant ? "constant" : "cosine"; }

LrSchedule parse_lr_schedule(std::string_view text) {
  if (text == "constant") return LrSchedule::constant;
  if (text == "cosine") return LrSchedule::cosine;
  throw ConfigError("unknown lr schedule '" + std::string(text) + "' (expected constant or cosine)");
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (key == f.name) {
      f.set(*this, key, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> TrainConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.name, f.get(*this));
  return out;
}

void TrainConfig::validate() const {
  prompt_config().validate();
  if (embed_dim % k != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " not divisible by k=" + std::to_string(k));
  }
  if (unfrozen_layers > text_layers) {
    throw ConfigError("unfrozen_layers " + std::to_string(unfrozen_layers) + " exceeds text_layers " +
                      std::to_string(text_layers));
  }
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (corpus_index.empty() && batch_size > n_train) {
    throw ConfigError("batch_size " + std::to_string(batch_size) + " exceeds n_train " + std::to_string(n_train));
  }
  if (!(peak_lr >= 0)) throw ConfigError("peak_lr must be non-negative");
  if (!(init_tau > 0)) throw ConfigError("init_tau must be positive");
  if (!(min_logit_scale > 0) || !(max_logit_scale >= min_logit_scale)) {
    throw ConfigError("logit scale clamp range is empty");
  }
  if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0)) throw ConfigError("adam_eps must be positive");
  text_config(Vocabulary(k)).validate();
  vision_config().validate();
}

PromptConfig TrainConfig::prompt_config() const {
  PromptConfig p;
  p.k = k;
  p.mode = template_mode;
  p.include_negation = include_negation;
  p.position_reset = position_reset;
  if (template_mode == TemplateMode::fixed) {
    p.fixed_prompt_texts = fixed_prompt_texts.empty() ? PromptConfig::fixed(k).fixed_prompt_texts : fixed_prompt_texts;
  }
  return p;
}

TextEncoderConfig TrainConfig::text_config(const Vocabulary& vocab) const {
  TextEncoderConfig t;
  t.vocab_size = vocab.size();
  t.apt_count = vocab.apt_count();
  t.apt_first = vocab.apt_first();
  t.hidden = text_hidden;
  t.layers = text_layers;
  t.heads = text_heads;
  t.max_len = text_max_len;
  t.mlp_ratio = mlp_ratio;
  t.k = k;
  t.embed_dim = embed_dim;
  t.combine = combine_mode;
  return t;
}

VisionEncoderConfig TrainConfig::vision_config() const {
  VisionEncoderConfig v;
  v.image_side = image_side;
  v.patch = patch;
  v.width = vision_width;
  v.layers = vision_layers;
  v.heads = vision_heads;
  v.mlp_ratio = mlp_ratio;
  v.embed_dim = embed_dim;
  v.pool_heads = pool_heads;
  v.max_frames = max_frames;
  v.temporal = temporal_mode;
  return v;
}

TrainConfig parse_config(std::istream& in) {
  TrainConfig cfg;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  return parse_config(in);
}

std::string serialize_config(const TrainConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : cfg.entries()) out += k + " = " + v + "\n";
  return out;
}

}  // namespace camp
