#pragma once

// Small ViT with attention pooling. Pooling has one learned query and no
// output projection, so pooling head h writes channels [h*D/heads, (h+1)*D/heads)
// of the visual embedding. That is what ties heads to text prompt segments.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "camp/synth.hpp"
#include "camp/transformer.hpp"

namespace camp {

/// scalar: one value per frame added to every channel (table T_max x 1).
/// channel: one vector per frame (table T_max x width).
enum class TemporalMode { scalar, channel };

std::string to_string(TemporalMode mode);
TemporalMode parse_temporal_mode(std::string_view text);

struct VisionEncoderConfig {
  std::size_t image_side = 32;
  std::size_t patch = 8;
  std::size_t width = 128;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t embed_dim = 96;
  std::size_t pool_heads = 6;
  std::size_t max_frames = 16;
  TemporalMode temporal = TemporalMode::scalar;

  std::size_t patches_per_side() const { return image_side / patch; }
  std::size_t tokens_per_frame() const { return patches_per_side() * patches_per_side(); }
  void validate() const;
};

/// [N x patch*patch*3]; patches in row-major order, pixels row-major within
/// a patch and the three channels innermost.
template <typename T>
Tensor<T> patchify(const Image& image, std::size_t patch);

template <typename T>
struct VisionOutput {
  Tensor<T> q;             // [G x D], unit rows
  std::vector<T> weights;  // per group: pool_heads x tokens
  std::vector<std::size_t> tokens;  // token count per group
};

template <typename T>
struct VisionEncoder {
  VisionEncoderConfig cfg;
  Tensor<T> patch_w, patch_b;  // [p*p*3 x W], [W]
  Tensor<T> pos;               // [N x W]
  std::vector<TransformerBlock<T>> blocks;
  Tensor<T> lnf_g, lnf_b;
  Tensor<T> temporal;  // [max_frames x 1] or [max_frames x W], zero at init
  Tensor<T> pool_query;  // [1 x D]
  Tensor<T> pool_wk, pool_wv;  // [W x D]

  static VisionEncoder init(const VisionEncoderConfig& cfg, SplitMix64& rng);

  /// Final-norm token states of every frame, frames packed [F*N x W].
  Tensor<T> frame_tokens(std::span<const Image> frames) const;

  VisionOutput<T> encode_images(std::span<const Image> images) const;
  /// One output row per video; frames of a video share one pooling group of T*N tokens.
  VisionOutput<T> encode_videos(std::span<const std::vector<Image>> videos) const;

  ParamList<T> parameters() const;

 private:
  VisionOutput<T> pool(const Tensor<T>& tokens, std::vector<std::size_t> lengths) const;
};

/// K maps of P x P per image, each the mean of the pooling heads assigned to
/// one channel segment.
struct AttentionMapSet {
  std::size_t side = 0;
  std::vector<std::vector<double>> maps;

  double at(std::size_t map, std::size_t y, std::size_t x) const { return maps[map][y * side + x]; }
};

/// Pooling heads that write channel segment `segment` of K. Requires
/// pool_heads % K == 0 or K % pool_heads == 0, otherwise ConfigError.
std::vector<std::size_t> heads_for_segment(std::size_t pool_heads, std::size_t k, std::size_t segment);

/// `weights` holds pool_heads x N values for one image.
AttentionMapSet attention_maps_by_segment(std::span<const double> weights, std::size_t pool_heads,
                                          std::size_t side, std::size_t k);

template <typename T>
AttentionMapSet attention_maps_by_segment(const Image& image, const VisionEncoder<T>& enc, std::size_t k);

/// Writes <stem>_seg<i>.csv and <stem>_seg<i>.pgm for every map; returns the paths.
std::vector<std::filesystem::path> export_attention_maps(const AttentionMapSet& maps,
                                                         const std::filesystem::path& dir,
                                                         const std::string& stem);

}  // namespace camp
