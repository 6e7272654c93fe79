#pragma once

// Causal text encoder producing one pooled vector per prompt segment.
//
// forward_singlepass runs every sequence once under its prompt-wise mask;
// forward_multipass runs "prefix + segment" for each segment separately with
// a plain causal mask and is kept as the reference. With position reset on,
// the two agree to rounding.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "camp/prompt.hpp"
#include "camp/transformer.hpp"

namespace camp {

enum class CombineMode { concat, average };

std::string to_string(CombineMode mode);
CombineMode parse_combine_mode(std::string_view text);

struct TextEncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t apt_count = 6;
  TokenId apt_first = 0;
  std::size_t hidden = 128;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t max_len = 128;
  std::size_t mlp_ratio = 4;
  std::size_t k = 6;
  std::size_t embed_dim = 96;
  CombineMode combine = CombineMode::concat;

  /// D/K when concatenating, D when averaging.
  std::size_t projection_width() const;
  void validate() const;
};

/// Pooled rows are sample-major: sample b's segments occupy rows
/// b*segments .. b*segments + segments - 1, in segment order.
template <typename T>
struct SegmentEmbeddings {
  Tensor<T> pooled;     // [B*K' x H]
  Tensor<T> projected;  // [B*K' x projection_width]
  std::size_t batch = 0;
  std::size_t segments = 0;           // K' = K or 2K
  std::size_t positive_segments = 0;  // K
};

template <typename T>
struct TextEmbedding {
  Tensor<T> p;             // [B x D], unit rows
  Tensor<T> n;             // [B x D] negation embedding, undefined without negation
  Tensor<T> segment_rows;  // [B*K x w] projected positive segments, for the diversity loss
};

template <typename T>
struct TextEncoder {
  TextEncoderConfig cfg;
  Tensor<T> token_table;  // [V x H]
  Tensor<T> apt_table;    // [apt_count x H], read for APT ids instead of token_table
  Tensor<T> pos_table;    // [max_len x H]
  std::vector<TransformerBlock<T>> blocks;
  Tensor<T> lnf_g, lnf_b;
  Tensor<T> proj;  // [H x projection_width], no bias

  static TextEncoder init(const TextEncoderConfig& cfg, SplitMix64& rng);

  SegmentEmbeddings<T> forward_singlepass(std::span<const SegmentedSequence> seqs) const;
  SegmentEmbeddings<T> forward_multipass(std::span<const SegmentedSequence> seqs) const;

  /// Last `unfrozen` blocks, the final norm (when unfrozen >= 1) and the
  /// projection train; token and position tables train iff learnable_vocab;
  /// APT rows always train.
  void set_trainable(std::size_t unfrozen, bool learnable_vocab) const;

  ParamList<T> parameters() const;

 private:
  SegmentEmbeddings<T> run(const std::vector<const SegmentedSequence*>& groups,
                           const std::vector<std::size_t>& pool_rows, std::size_t batch,
                           std::size_t segments, std::size_t positive) const;
};

/// Joins each sample's positive rows (and, separately, negation rows) into
/// one L2-normalized D-vector: concatenation in segment order, or the mean.
template <typename T>
TextEmbedding<T> project_and_concat(const SegmentEmbeddings<T>& emb, CombineMode mode,
                                    std::size_t embed_dim);

/// Plain causal mask (K = 1 case of the prompt-wise mask).
AttentionMask causal_mask(std::size_t n);

}  // namespace camp
