#pragma once

// Training configuration and its `key = value` text form.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "camp/prompt.hpp"
#include "camp/text_encoder.hpp"
#include "camp/vision_encoder.hpp"

namespace camp {

enum class LrSchedule { constant, cosine };

struct TrainConfig {
  // objective
  std::size_t k = 6;
  std::size_t embed_dim = 96;
  std::size_t unfrozen_layers = 2;
  bool learnable_vocab = false;
  TemplateMode template_mode = TemplateMode::adaptive;
  CombineMode combine_mode = CombineMode::concat;
  bool include_negation = true;
  double alpha = 0.1;
  double beta = 0.1;
  std::vector<std::string> fixed_prompt_texts;  // fixed mode only; empty = built-in prompts
  bool position_reset = true;

  // optimization
  std::size_t batch_size = 32;
  double peak_lr = 3e-4;
  std::size_t warmup_steps = 200;
  std::size_t total_steps = 2000;
  LrSchedule lr_schedule = LrSchedule::constant;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 0.0;  // global-norm clip, 0 = off
  double init_tau = 0.07;
  double min_logit_scale = 1.0;
  double max_logit_scale = 100.0;
  std::uint64_t seed = 0;

  // data
  std::size_t n_train = 96;
  std::size_t n_eval = 48;
  std::string corpus_index;  // external corpus; empty = synthetic

  // architecture
  std::size_t text_hidden = 64;
  std::size_t text_layers = 4;
  std::size_t text_heads = 4;
  std::size_t text_max_len = 128;
  std::size_t vision_width = 64;
  std::size_t vision_layers = 4;
  std::size_t vision_heads = 4;
  std::size_t pool_heads = 6;
  std::size_t patch = 8;
  std::size_t image_side = 32;
  std::size_t max_frames = 16;
  TemporalMode temporal_mode = TemporalMode::scalar;
  std::size_t mlp_ratio = 4;

  void validate() const;

  PromptConfig prompt_config() const;
  TextEncoderConfig text_config(const Vocabulary& vocab) const;
  VisionEncoderConfig vision_config() const;

  /// Applies one `key = value` assignment. Unknown keys and malformed values
  /// throw ConfigError.
  void set(const std::string& key, const std::string& value);
  /// Every key with its current value, in declaration order.
  std::vector<std::pair<std::string, std::string>> entries() const;
};

/// Lines of `key = value`; `#` starts a comment; blank lines ignored.
TrainConfig parse_config(std::istream& in);
TrainConfig load_config(const std::string& path);
std::string serialize_config(const TrainConfig& cfg);

std::string to_string(LrSchedule s);
LrSchedule parse_lr_schedule(std::string_view text);

}  // namespace camp
