#include "camp/vision_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "camp/errors.hpp"

namespace camp {

std::string to_string(TemporalMode mode) { return mode == TemporalMode::scalar ? "scalar" : "channel"; }

TemporalMode parse_temporal_mode(std::string_view text) {
  if (text == "scalar") return TemporalMode::scalar;
  if (text == "channel") return TemporalMode::channel;
  throw ConfigError("unknown temporal mode '" + std::string(text) + "' (expected scalar or channel)");
}

void VisionEncoderConfig::validate() const {
  if (patch == 0 || image_side % patch != 0) {
    throw ConfigError("image side " + std::to_string(image_side) + " not divisible by patch " +
                      std::to_string(patch));
  }
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("vision width " + std::to_string(width) + " not divisible by " + std::to_string(heads) +
                      " heads");
  }
  if (pool_heads == 0 || embed_dim % pool_heads != 0) {
    throw ConfigError("embed dim " + std::to_string(embed_dim) + " not divisible by " +
                      std::to_string(pool_heads) + " pooling heads");
  }
  if (max_frames == 0 || layers == 0) throw ConfigError("vision encoder sizes must be positive");
}

template <typename T>
Tensor<T> patchify(const Image& image, std::size_t patch) {
  const std::size_t W = image.side;
  if (patch == 0 || W % patch != 0) {
    throw DimensionError("patch size " + std::to_string(patch) + " does not divide image side " +
                         std::to_string(W));
  }
  if (image.pixels.size() != 3 * W * W) throw DimensionError("image buffer is not 3 x side x side");
  const std::size_t P = W / patch, cols = patch * patch * 3;
  std::vector<T> out(P * P * cols);
  for (std::size_t py = 0; py < P; ++py) {
    for (std::size_t px = 0; px < P; ++px) {
      T* row = out.data() + (py * P + px) * cols;
      for (std::size_t y = 0; y < patch; ++y) {
        for (std::size_t x = 0; x < patch; ++x) {
          for (std::size_t c = 0; c < 3; ++c) {
            row[(y * patch + x) * 3 + c] = static_cast<T>(image.at(c, py * patch + y, px * patch + x));
          }
        }
      }
    }
  }
  return Tensor<T>({P * P, cols}, std::move(out));
}

template <typename T>
VisionEncoder<T> VisionEncoder<T>::init(const VisionEncoderConfig& cfg, SplitMix64& rng) {
  cfg.validate();
  VisionEncoder e;
  e.cfg = cfg;
  const std::size_t W = cfg.width, D = cfg.embed_dim, in = cfg.patch * cfg.patch * 3;
  e.patch_w = gaussian_tensor<T>({in, W}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  e.patch_b = Tensor<T>::zeros({W}, true);
  e.pos = gaussian_tensor<T>({cfg.tokens_per_frame(), W}, 0.02, rng);
  const BlockConfig bc{W, cfg.heads, W * cfg.mlp_ratio};
  for (std::size_t i = 0; i < cfg.layers; ++i) e.blocks.push_back(TransformerBlock<T>::init(bc, rng));
  e.lnf_g = Tensor<T>::full({W}, T(1), true);
  e.lnf_b = Tensor<T>::zeros({W}, true);
  e.temporal = Tensor<T>::zeros({cfg.max_frames, cfg.temporal == TemporalMode::scalar ? std::size_t{1} : W}, true);
  e.pool_query = gaussian_tensor<T>({1, D}, 0.02, rng);
  e.pool_wk = gaussian_tensor<T>({W, D}, 1.0 / std::sqrt(static_cast<double>(W)), rng);
  e.pool_wv = gaussian_tensor<T>({W, D}, 1.0 / std::sqrt(static_cast<double>(W)), rng);
  return e;
}

template <typename T>
Tensor<T> VisionEncoder<T>::frame_tokens(std::span<const Image> frames) const {
  if (frames.empty()) throw DimensionError("vision forward needs at least one frame");
  const std::size_t N = cfg.tokens_per_frame(), cols = cfg.patch * cfg.patch * 3;
  std::vector<T> packed;
  packed.reserve(frames.size() * N * cols);
  std::vector<std::size_t> pos_idx;
  AttentionLayout layout;
  for (const auto& f : frames) {
    if (f.side != cfg.image_side) {
      throw DimensionError("image side " + std::to_string(f.side) + " differs from configured " +
                           std::to_string(cfg.image_side));
    }
    const auto p = patchify<T>(f, cfg.patch);
    packed.insert(packed.end(), p.data().begin(), p.data().end());
    for (std::size_t i = 0; i < N; ++i) pos_idx.push_back(i);
    layout.add_group(N, nullptr);
  }
  Tensor<T> x({frames.size() * N, cols}, std::move(packed));
  auto h = add(linear(x, patch_w, patch_b), gather_rows(pos, std::span<const std::size_t>(pos_idx)));
  for (const auto& b : blocks) h = b.forward(h, layout);
  return layer_norm(h, lnf_g, lnf_b, static_cast<T>(kLayerNormEps));
}

template <typename T>
VisionOutput<T> VisionEncoder<T>::pool(const Tensor<T>& tokens, std::vector<std::size_t> lengths) const {
  const Tensor<T> none;
  VisionOutput<T> out;
  auto pooled = attention_pool(pool_query, linear(tokens, pool_wk, none), linear(tokens, pool_wv, none),
                               cfg.pool_heads, std::span<const std::size_t>(lengths), &out.weights);
  out.q = l2_normalize(pooled);
  out.tokens = std::move(lengths);
  return out;
}

template <typename T>
VisionOutput<T> VisionEncoder<T>::encode_images(std::span<const Image> images) const {
  return pool(frame_tokens(images), std::vector<std::size_t>(images.size(), cfg.tokens_per_frame()));
}

template <typename T>
VisionOutput<T> VisionEncoder<T>::encode_videos(std::span<const std::vector<Image>> videos) const {
  if (videos.empty()) throw DimensionError("encode_videos needs at least one video");
  const std::size_t N = cfg.tokens_per_frame();
  std::vector<Image> frames;
  std::vector<std::size_t> frame_idx, lengths;
  for (const auto& v : videos) {
    if (v.empty()) throw DimensionError("video with no frames");
    if (v.size() > cfg.max_frames) {
      throw CapacityError("video of " + std::to_string(v.size()) + " frames exceeds max frames " +
                          std::to_string(cfg.max_frames));
    }
    for (std::size_t t = 0; t < v.size(); ++t) {
      frames.push_back(v[t]);
      for (std::size_t i = 0; i < N; ++i) frame_idx.push_back(t);
    }
    lengths.push_back(v.size() * N);
  }
  auto tokens = add(frame_tokens(frames), gather_rows(temporal, std::span<const std::size_t>(frame_idx)));
  return pool(tokens, std::move(lengths));
}

template <typename T>
ParamList<T> VisionEncoder<T>::parameters() const {
  ParamList<T> out;
  out.push_back({"vision.patch_w", patch_w});
  out.push_back({"vision.patch_b", patch_b});
  out.push_back({"vision.pos", pos});
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].append_params("vision.block" + std::to_string(i) + ".", out);
  out.push_back({"vision.lnf.g", lnf_g});
  out.push_back({"vision.lnf.b", lnf_b});
  out.push_back({"vision.temporal", temporal});
  out.push_back({"vision.pool.query", pool_query});
  out.push_back({"vision.pool.wk", pool_wk});
  out.push_back({"vision.pool.wv", pool_wv});
  return out;
}

std::vector<std::size_t> heads_for_segment(std::size_t pool_heads, std::size_t k, std::size_t segment) {
  if (k == 0 || segment >= k) throw ConfigError("segment index out of range");
  std::vector<std::size_t> heads;
  if (pool_heads % k == 0) {
    const std::size_t per = pool_heads / k;
    for (std::size_t h = segment * per; h < (segment + 1) * per; ++h) heads.push_back(h);
  } else if (k % pool_heads == 0) {
    heads.push_back(segment / (k / pool_heads));
  } else {
    throw ConfigError("pooling heads (" + std::to_string(pool_heads) + ") and k (" + std::to_string(k) +
                      ") do not align: one must divide the other");
  }
  return heads;
}

AttentionMapSet attention_maps_by_segment(std::span<const double> weights, std::size_t pool_heads,
                                          std::size_t side, std::size_t k) {
  const std::size_t N = side * side;
  if (weights.size() != pool_heads * N) {
    throw DimensionError("attention weights hold " + std::to_string(weights.size()) + " values, expected " +
                         std::to_string(pool_heads * N));
  }
  AttentionMapSet set;
  set.side = side;
  for (std::size_t s = 0; s < k; ++s) {
    const auto heads = heads_for_segment(pool_heads, k, s);
    std::vector<double> map(N, 0.0);
    for (auto h : heads) {
      for (std::size_t i = 0; i < N; ++i) map[i] += weights[h * N + i];
    }
    for (auto& v : map) v /= static_cast<double>(heads.size());
    set.maps.push_back(std::move(map));
  }
  return set;
}

template <typename T>
AttentionMapSet attention_maps_by_segment(const Image& image, const VisionEncoder<T>& enc, std::size_t k) {
  heads_for_segment(enc.cfg.pool_heads, k, 0);
  const auto out = enc.encode_images(std::span<const Image>(&image, 1));
  std::vector<double> w(out.weights.begin(), out.weights.end());
  return attention_maps_by_segment(w, enc.cfg.pool_heads, enc.cfg.patches_per_side(), k);
}

std::vector<std::filesystem::path> export_attention_maps(const AttentionMapSet& maps,
                                                         const std::filesystem::path& dir,
                                                         const std::string& stem) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  const std::size_t P = maps.side;
  for (std::size_t s = 0; s < maps.maps.size(); ++s) {
    const auto& m = maps.maps[s];
    const auto base = dir / (stem + "_seg" + std::to_string(s + 1));
    auto csv_path = base;
    csv_path += ".csv";
    std::ofstream csv(csv_path);
    if (!csv) throw ConfigError("cannot write " + csv_path.string());
    csv.precision(9);
    for (std::size_t y = 0; y < P; ++y) {
      for (std::size_t x = 0; x < P; ++x) csv << (x ? "," : "") << m[y * P + x];
      csv << '\n';
    }
    auto pgm_path = base;
    pgm_path += ".pgm";
    std::ofstream pgm(pgm_path, std::ios::binary);
    if (!pgm) throw ConfigError("cannot write " + pgm_path.string());
    const auto [lo, hi] = std::minmax_element(m.begin(), m.end());
    const double range = *hi - *lo;
    pgm << "P5\n" << P << ' ' << P << "\n255\n";
    for (double v : m) {
      const double u = range > 0 ? (v - *lo) / range : 0.0;
      pgm.put(static_cast<char>(static_cast<unsigned char>(std::lround(u * 255.0))));
    }
    paths.push_back(csv_path);
    paths.push_back(pgm_path);
  }
  return paths;
}

template Tensor<float> patchify<float>(const Image&, std::size_t);
template Tensor<double> patchify<double>(const Image&, std::size_t);
template struct VisionEncoder<float>;
template struct VisionEncoder<double>;
template AttentionMapSet attention_maps_by_segment(const Image&, const VisionEncoder<float>&, std::size_t);
template AttentionMapSet attention_maps_by_segment(const Image&, const VisionEncoder<double>&, std::size_t);

}  // namespace camp
