#include "camp/text_encoder.hpp"

#include <memory>

#include "camp/errors.hpp"

namespace camp {

std::string to_string(CombineMode mode) {
  return mode == CombineMode::concat ? "concat" : "average";
}

CombineMode parse_combine_mode(std::string_view text) {
  if (text == "concat") return CombineMode::concat;
  if (text == "average") return CombineMode::average;
  throw ConfigError("unknown combine mode '" + std::string(text) + "' (expected concat or average)");
}

std::size_t TextEncoderConfig::projection_width() const {
  return combine == CombineMode::concat ? embed_dim / k : embed_dim;
}

void TextEncoderConfig::validate() const {
  if (k == 0) throw ConfigError("k must be at least 1");
  if (embed_dim % k != 0) {
    throw ConfigError("embed dim " + std::to_string(embed_dim) + " not divisible by k=" + std::to_string(k));
  }
  if (heads == 0 || hidden % heads != 0) {
    throw ConfigError("text hidden size " + std::to_string(hidden) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (vocab_size == 0 || max_len == 0 || layers == 0) throw ConfigError("text encoder sizes must be positive");
  if (apt_count == 0) throw ConfigError("text encoder needs at least one APT row");
}

AttentionMask causal_mask(std::size_t n) {
  AttentionMask m;
  m.size = n;
  m.bits.assign(n * n, 0);
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t k = 0; k <= q; ++k) m.bits[q * n + k] = 1;
  }
  return m;
}

template <typename T>
TextEncoder<T> TextEncoder<T>::init(const TextEncoderConfig& cfg, SplitMix64& rng) {
  cfg.validate();
  TextEncoder e;
  e.cfg = cfg;
  const std::size_t H = cfg.hidden;
  e.token_table = gaussian_tensor<T>({cfg.vocab_size, H}, 0.02, rng);
  e.apt_table = gaussian_tensor<T>({cfg.apt_count, H}, 0.02, rng);
  e.pos_table = gaussian_tensor<T>({cfg.max_len, H}, 0.02, rng);
  const BlockConfig bc{H, cfg.heads, H * cfg.mlp_ratio};
  for (std::size_t i = 0; i < cfg.layers; ++i) e.blocks.push_back(TransformerBlock<T>::init(bc, rng));
  e.lnf_g = Tensor<T>::full({H}, T(1), true);
  e.lnf_b = Tensor<T>::zeros({H}, true);
  e.proj = gaussian_tensor<T>({H, cfg.projection_width()}, 1.0 / std::sqrt(static_cast<double>(H)), rng);
  return e;
}

template <typename T>
SegmentEmbeddings<T> TextEncoder<T>::run(const std::vector<const SegmentedSequence*>& groups,
                                         const std::vector<std::size_t>& pool_rows, std::size_t batch,
                                         std::size_t segments, std::size_t positive) const {
  std::vector<TokenId> ids;
  std::vector<std::size_t> positions;
  AttentionLayout layout;
  for (const auto* s : groups) {
    if (s->size() > cfg.max_len) {
      throw CapacityError("sequence of " + std::to_string(s->size()) + " tokens exceeds max length " +
                          std::to_string(cfg.max_len));
    }
    ids.insert(ids.end(), s->token_ids.begin(), s->token_ids.end());
    positions.insert(positions.end(), s->position_ids.begin(), s->position_ids.end());
    auto mask = std::make_shared<std::vector<std::uint8_t>>(build_mask(*s).bits);
    layout.add_group(s->size(), std::move(mask));
  }
  auto x = add(embed_tokens(token_table, apt_table, std::span<const std::int32_t>(ids),
                            static_cast<std::size_t>(cfg.apt_first)),
               gather_rows(pos_table, std::span<const std::size_t>(positions)));
  for (std::size_t i = 0; i + 1 < blocks.size(); ++i) x = blocks[i].forward(x, layout);
  x = blocks.back().forward_rows(x, layout, std::span<const std::size_t>(pool_rows));
  auto pooled = layer_norm(x, lnf_g, lnf_b, static_cast<T>(kLayerNormEps));
  SegmentEmbeddings<T> out;
  out.projected = linear(pooled, proj, Tensor<T>());
  out.pooled = std::move(pooled);
  out.batch = batch;
  out.segments = segments;
  out.positive_segments = positive;
  return out;
}

namespace {

void check_batch(std::span<const SegmentedSequence> seqs) {
  if (seqs.empty()) throw DimensionError("text forward needs at least one sequence");
  for (const auto& s : seqs) {
    if (s.segment_count != seqs[0].segment_count || s.positive_segments != seqs[0].positive_segments) {
      throw DimensionError("all sequences in a batch must have the same segment count");
    }
  }
}

}  // namespace

template <typename T>
SegmentEmbeddings<T> TextEncoder<T>::forward_singlepass(std::span<const SegmentedSequence> seqs) const {
  check_batch(seqs);
  std::vector<const SegmentedSequence*> groups;
  std::vector<std::size_t> rows;
  std::size_t offset = 0;
  for (const auto& s : seqs) {
    groups.push_back(&s);
    for (auto p : pooling_positions(s)) rows.push_back(offset + p);
    offset += s.size();
  }
  return run(groups, rows, seqs.size(), seqs[0].segment_count, seqs[0].positive_segments);
}

template <typename T>
SegmentEmbeddings<T> TextEncoder<T>::forward_multipass(std::span<const SegmentedSequence> seqs) const {
  check_batch(seqs);
  std::vector<SegmentedSequence> singles;
  for (const auto& s : seqs) {
    pooling_positions(s);
    for (std::size_t seg = 1; seg <= s.segment_count; ++seg) singles.push_back(standalone_prompt(s, seg));
  }
  std::vector<const SegmentedSequence*> groups;
  std::vector<std::size_t> rows;
  std::size_t offset = 0;
  for (const auto& s : singles) {
    groups.push_back(&s);
    offset += s.size();
    rows.push_back(offset - 1);
  }
  return run(groups, rows, seqs.size(), seqs[0].segment_count, seqs[0].positive_segments);
}

template <typename T>
void TextEncoder<T>::set_trainable(std::size_t unfrozen, bool learnable_vocab) const {
  if (unfrozen > blocks.size()) {
    throw ConfigError("unfrozen layers " + std::to_string(unfrozen) + " exceeds " +
                      std::to_string(blocks.size()) + " blocks");
  }
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].set_requires_grad(i + unfrozen >= blocks.size());
  auto set = [](Tensor<T> t, bool on) { t.set_requires_grad(on); };
  set(token_table, learnable_vocab);
  set(pos_table, learnable_vocab);
  set(apt_table, true);
  set(lnf_g, unfrozen > 0);
  set(lnf_b, unfrozen > 0);
  set(proj, true);
}

template <typename T>
ParamList<T> TextEncoder<T>::parameters() const {
  ParamList<T> out;
  out.push_back({"text.token_table", token_table});
  out.push_back({"text.apt_table", apt_table});
  out.push_back({"text.pos_table", pos_table});
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].append_params("text.block" + std::to_string(i) + ".", out);
  out.push_back({"text.lnf.g", lnf_g});
  out.push_back({"text.lnf.b", lnf_b});
  out.push_back({"text.proj", proj});
  return out;
}

template <typename T>
TextEmbedding<T> project_and_concat(const SegmentEmbeddings<T>& emb, CombineMode mode, std::size_t embed_dim) {
  const std::size_t B = emb.batch, K = emb.positive_segments, S = emb.segments;
  const std::size_t w = emb.projected.cols();
  if (mode == CombineMode::concat && w * K != embed_dim) {
    throw DimensionError("concat: " + std::to_string(K) + " rows of width " + std::to_string(w) +
                         " cannot form a " + std::to_string(embed_dim) + "-vector");
  }
  if (mode == CombineMode::average && w != embed_dim) {
    throw DimensionError("average: projected width " + std::to_string(w) + " differs from embed dim " +
                         std::to_string(embed_dim));
  }
  auto combine = [&](std::size_t first) {
    std::vector<std::size_t> idx;
    idx.reserve(B * K);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t s = 0; s < K; ++s) idx.push_back(b * S + first + s);
    }
    auto rows = gather_rows(emb.projected, std::span<const std::size_t>(idx));
    Tensor<T> joined = mode == CombineMode::concat ? reshape(rows, {B, embed_dim})
                                                   : scale(group_sum_rows(rows, K), T(1) / static_cast<T>(K));
    return std::pair{rows, l2_normalize(joined)};
  };
  TextEmbedding<T> out;
  auto [rows, p] = combine(0);
  out.segment_rows = rows;
  out.p = p;
  if (S == 2 * K) out.n = combine(K).second;
  return out;
}

template struct TextEncoder<float>;
template struct TextEncoder<double>;
template TextEmbedding<float> project_and_concat(const SegmentEmbeddings<float>&, CombineMode, std::size_t);
template TextEmbedding<double> project_and_concat(const SegmentEmbeddings<double>&, CombineMode, std::size_t);

}  // namespace camp
