#include "camp/transformer.hpp"

#include <cmath>

namespace camp {

template <typename T>
Tensor<T> gaussian_tensor(Shape shape, double stddev, SplitMix64& rng) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.normal() * stddev);
  return Tensor<T>(std::move(shape), std::move(v), true);
}

namespace {

template <typename T>
Tensor<T> weight(std::size_t in, std::size_t out, SplitMix64& rng) {
  return gaussian_tensor<T>({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
}

template <typename T>
Tensor<T> ones(std::size_t n) {
  return Tensor<T>({n}, std::vector<T>(n, T(1)), true);
}

template <typename T>
Tensor<T> zeros(std::size_t n) {
  return Tensor<T>({n}, std::vector<T>(n, T(0)), true);
}

}  // namespace

template <typename T>
TransformerBlock<T> TransformerBlock<T>::init(const BlockConfig& cfg, SplitMix64& rng) {
  if (cfg.heads == 0 || cfg.width % cfg.heads != 0) {
    throw ConfigError("block width " + std::to_string(cfg.width) + " not divisible by " +
                      std::to_string(cfg.heads) + " heads");
  }
  TransformerBlock b;
  b.heads = cfg.heads;
  const std::size_t W = cfg.width, M = cfg.mlp_hidden;
  b.ln1_g = ones<T>(W);
  b.ln1_b = zeros<T>(W);
  b.wq = weight<T>(W, W, rng);
  b.wk = weight<T>(W, W, rng);
  b.wv = weight<T>(W, W, rng);
  b.wo = weight<T>(W, W, rng);
  b.bo = zeros<T>(W);
  b.ln2_g = ones<T>(W);
  b.ln2_b = zeros<T>(W);
  b.w1 = weight<T>(W, M, rng);
  b.b1 = zeros<T>(M);
  b.w2 = weight<T>(M, W, rng);
  b.b2 = zeros<T>(W);
  return b;
}

template <typename T>
Tensor<T> TransformerBlock<T>::forward(const Tensor<T>& x, const AttentionLayout& layout) const {
  const T eps = static_cast<T>(kLayerNormEps);
  const Tensor<T> none;
  auto h = layer_norm(x, ln1_g, ln1_b, eps);
  auto a = masked_attention(linear(h, wq, none), linear(h, wk, none), linear(h, wv, none), heads, layout);
  auto r = add(x, linear(a, wo, bo));
  auto m = layer_norm(r, ln2_g, ln2_b, eps);
  return add(r, linear(gelu(linear(m, w1, b1)), w2, b2));
}

template <typename T>
Tensor<T> TransformerBlock<T>::forward_rows(const Tensor<T>& x, const AttentionLayout& layout,
                                            std::span<const std::size_t> rows) const {
  const T eps = static_cast<T>(kLayerNormEps);
  const Tensor<T> none;
  auto h = layer_norm(x, ln1_g, ln1_b, eps);
  auto a = masked_attention(linear(h, wq, none), linear(h, wk, none), linear(h, wv, none), heads, layout);
  // every later op is row-wise
  auto r = add(gather_rows(x, rows), linear(gather_rows(a, rows), wo, bo));
  auto m = layer_norm(r, ln2_g, ln2_b, eps);
  return add(r, linear(gelu(linear(m, w1, b1)), w2, b2));
}

template <typename T>
void TransformerBlock<T>::append_params(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + "ln1.g", ln1_g});
  out.push_back({prefix + "ln1.b", ln1_b});
  out.push_back({prefix + "attn.wq", wq});
  out.push_back({prefix + "attn.wk", wk});
  out.push_back({prefix + "attn.wv", wv});
  out.push_back({prefix + "attn.wo", wo});
  out.push_back({prefix + "attn.bo", bo});
  out.push_back({prefix + "ln2.g", ln2_g});
  out.push_back({prefix + "ln2.b", ln2_b});
  out.push_back({prefix + "mlp.w1", w1});
  out.push_back({prefix + "mlp.b1", b1});
  out.push_back({prefix + "mlp.w2", w2});
  out.push_back({prefix + "mlp.b2", b2});
}

template <typename T>
void TransformerBlock<T>::set_requires_grad(bool on) const {
  for (const auto* t : {&ln1_g, &ln1_b, &wq, &wk, &wv, &wo, &bo, &ln2_g, &ln2_b, &w1, &b1, &w2, &b2}) {
    Tensor<T> h = *t;
    h.set_requires_grad(on);
  }
}

template Tensor<float> gaussian_tensor<float>(Shape, double, SplitMix64&);
template Tensor<double> gaussian_tensor<double>(Shape, double, SplitMix64&);
template struct TransformerBlock<float>;
template struct TransformerBlock<double>;

}  // namespace camp
