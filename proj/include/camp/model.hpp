#pragma once

// Dual encoder plus learnable temperature, and the batch forward that
// produces every loss term.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "camp/config.hpp"
#include "camp/losses.hpp"

namespace camp {

template <typename T>
struct Model {
  TrainConfig cfg;
  Vocabulary vocab{1};
  TextEncoder<T> text;
  VisionEncoder<T> vision;
  Tensor<T> log_scale;  // [1]; exp(log_scale) = 1/tau

  /// Fresh model from cfg.seed. Text trainability follows the config.
  static Model init(const TrainConfig& cfg);

  /// Text, vision and temperature parameters under stable names.
  ParamList<T> parameters() const;

  Tensor<T> logit_scale() const { return camp::exp(log_scale); }
  double tau() const;
  /// Clamps exp(log_scale) into [min_logit_scale, max_logit_scale].
  void clamp_temperature() const;

  std::vector<SegmentedSequence> sequences(std::span<const std::string> captions) const;
};

template <typename T>
struct BatchForward {
  TextEmbedding<T> text;
  Tensor<T> q;
  TotalLoss<T> loss;
};

/// Loss of captions against precomputed visual embeddings q (one row each).
template <typename T>
BatchForward<T> forward_with_vision(const Model<T>& m, std::span<const std::string> captions, const Tensor<T>& q);

/// Image batch: text and vision forward plus every loss term.
template <typename T>
BatchForward<T> forward_batch(const Model<T>& m, std::span<const Sample> batch);

/// Text embeddings only (no negation), batched, without gradient tracking.
template <typename T>
TextEmbedding<T> embed_texts(const Model<T>& m, std::span<const std::string> captions);

/// Number of trainable scalars for the model's current flags.
template <typename T>
std::size_t trainable_count(const Model<T>& m);

}  // namespace camp
