#pragma once

// Pre-norm transformer block shared by the text and vision encoders, plus
// the named-parameter list every model exposes to the optimizer and the
// checkpoint writer.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "camp/ops.hpp"
#include "camp/synth.hpp"
#include "camp/tensor.hpp"

namespace camp {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<NamedTensor<T>>;

/// Zero-mean Gaussian tensor drawn with Box-Muller from `rng`.
template <typename T>
Tensor<T> gaussian_tensor(Shape shape, double stddev, SplitMix64& rng);

/// Element-by-element conversion (float checkpoints into double models and back).
template <typename To, typename From>
Tensor<To> convert_tensor(const Tensor<From>& x) {
  const auto d = x.data();
  return Tensor<To>(x.shape(), std::vector<To>(d.begin(), d.end()), x.requires_grad());
}

struct BlockConfig {
  std::size_t width = 128;
  std::size_t heads = 4;
  std::size_t mlp_hidden = 512;
};

/// x + Attn(LN(x)), then + MLP(LN(x)) with a GELU hidden layer.
template <typename T>
struct TransformerBlock {
  std::size_t heads = 1;
  Tensor<T> ln1_g, ln1_b;
  Tensor<T> wq, wk, wv, wo, bo;
  Tensor<T> ln2_g, ln2_b;
  Tensor<T> w1, b1, w2, b2;

  static TransformerBlock init(const BlockConfig& cfg, SplitMix64& rng);

  Tensor<T> forward(const Tensor<T>& x, const AttentionLayout& layout) const;
  /// Same block, but returns only the output rows listed in `rows`.
  Tensor<T> forward_rows(const Tensor<T>& x, const AttentionLayout& layout, std::span<const std::size_t> rows) const;

  void append_params(const std::string& prefix, ParamList<T>& out) const;
  void set_requires_grad(bool on) const;
};

inline constexpr double kLayerNormEps = 1e-5;

}  // namespace camp
