#include "camp/model.hpp"

#include <algorithm>
#include <cmath>

#include "camp/errors.hpp"

namespace camp {

template <typename T>
Model<T> Model<T>::init(const TrainConfig& cfg) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  m.vocab = Vocabulary::standard(cfg.k);
  SplitMix64 rng(cfg.seed);
  m.text = TextEncoder<T>::init(cfg.text_config(m.vocab), rng);
  m.vision = VisionEncoder<T>::init(cfg.vision_config(), rng);
  m.text.set_trainable(cfg.unfrozen_layers, cfg.learnable_vocab);
  m.log_scale = Tensor<T>::scalar(static_cast<T>(std::log(1.0 / cfg.init_tau)), true);
  m.clamp_temperature();
  return m;
}

template <typename T>
ParamList<T> Model<T>::parameters() const {
  auto out = text.parameters();
  for (auto& p : vision.parameters()) out.push_back(std::move(p));
  out.push_back({"logit_scale.log", log_scale});
  return out;
}

template <typename T>
double Model<T>::tau() const {
  return 1.0 / std::exp(static_cast<double>(log_scale.item()));
}

template <typename T>
void Model<T>::clamp_temperature() const {
  const T lo = static_cast<T>(std::log(cfg.min_logit_scale));
  const T hi = static_cast<T>(std::log(cfg.max_logit_scale));
  Tensor<T> s = log_scale;
  auto d = s.data_mut();
  d[0] = std::clamp(d[0], lo, hi);
}

template <typename T>
std::vector<SegmentedSequence> Model<T>::sequences(std::span<const std::string> captions) const {
  const auto pc = cfg.prompt_config();
  std::vector<SegmentedSequence> out;
  out.reserve(captions.size());
  for (const auto& c : captions) out.push_back(build_sequence(tokenize(c, vocab), pc, vocab));
  return out;
}

template <typename T>
BatchForward<T> forward_with_vision(const Model<T>& m, std::span<const std::string> captions, const Tensor<T>& q) {
  if (captions.size() != q.rows()) {
    throw DimensionError("forward: " + std::to_string(captions.size()) + " captions but " +
                         std::to_string(q.rows()) + " visual rows");
  }
  const auto seqs = m.sequences(captions);
  const auto emb = m.text.forward_singlepass(seqs);
  BatchForward<T> out;
  out.text = project_and_concat(emb, m.cfg.combine_mode, m.cfg.embed_dim);
  out.q = q;
  const auto s = m.logit_scale();
  const auto con = contrastive_loss(out.text.p, q, s);
  const auto div = diversity_loss(out.text.segment_rows, m.cfg.k);
  Tensor<T> neg;
  if (out.text.n.defined()) neg = negation_loss(q, out.text.p, out.text.n, s);
  out.loss = total_loss(con, div, neg, m.cfg.alpha, m.cfg.beta, s);
  return out;
}

template <typename T>
BatchForward<T> forward_batch(const Model<T>& m, std::span<const Sample> batch) {
  std::vector<std::string> captions;
  std::vector<Image> images;
  for (const auto& s : batch) {
    captions.push_back(s.caption);
    images.push_back(s.image);
  }
  const auto vis = m.vision.encode_images(images);
  return forward_with_vision(m, captions, vis.q);
}

template <typename T>
TextEmbedding<T> embed_texts(const Model<T>& m, std::span<const std::string> captions) {
  auto cfg = m.cfg.prompt_config();
  cfg.include_negation = false;
  std::vector<SegmentedSequence> seqs;
  for (const auto& c : captions) seqs.push_back(build_sequence(tokenize(c, m.vocab), cfg, m.vocab));
  return project_and_concat(m.text.forward_singlepass(seqs), m.cfg.combine_mode, m.cfg.embed_dim);
}

template <typename T>
std::size_t trainable_count(const Model<T>& m) {
  std::size_t n = 0;
  for (const auto& p : m.parameters()) {
    if (p.tensor.requires_grad()) n += p.tensor.numel();
  }
  return n;
}

#define CAMP_INSTANTIATE_MODEL(T)                                                                        \
  template struct Model<T>;                                                                              \
  template BatchForward<T> forward_with_vision(const Model<T>&, std::span<const std::string>,            \
                                               const Tensor<T>&);                                        \
  template BatchForward<T> forward_batch(const Model<T>&, std::span<const Sample>);                      \
  template TextEmbedding<T> embed_texts(const Model<T>&, std::span<const std::string>);                  \
  template std::size_t trainable_count(const Model<T>&);

CAMP_INSTANTIATE_MODEL(float)
CAMP_INSTANTIATE_MODEL(double)

}  // namespace camp
