#include "camp/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "camp/errors.hpp"

namespace camp {

namespace {

double dot(const float* a, const float* b, std::size_t n) {
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

void check_inputs(std::span<const float> queries, std::span<const float> gallery, std::size_t dim,
                  std::span<const std::size_t> truth) {
  if (dim == 0 || queries.size() % dim != 0 || gallery.size() % dim != 0) {
    throw DimensionError("retrieval: embedding buffers are not multiples of dim " + std::to_string(dim));
  }
  const std::size_t Q = queries.size() / dim, G = gallery.size() / dim;
  if (truth.size() != Q) throw DimensionError("retrieval: truth must have one entry per query");
  for (auto t : truth) {
    if (t >= G) throw IndexError("retrieval: truth index " + std::to_string(t) + " outside gallery of " + std::to_string(G));
  }
}

}  // namespace

std::vector<std::size_t> true_ranks(std::span<const float> queries, std::span<const float> gallery,
                                    std::size_t dim, std::span<const std::size_t> truth) {
  check_inputs(queries, gallery, dim, truth);
  const std::size_t Q = queries.size() / dim, G = gallery.size() / dim;
  std::vector<std::size_t> ranks(Q);
#pragma omp parallel for schedule(static)
  for (std::size_t q = 0; q < Q; ++q) {
    const float* qv = queries.data() + q * dim;
    const double target = dot(qv, gallery.data() + truth[q] * dim, dim);
    std::size_t rank = 0;
    for (std::size_t g = 0; g < G; ++g) {
      if (g == truth[q]) continue;
      const double s = dot(qv, gallery.data() + g * dim, dim);
      if (s > target || (s == target && g < truth[q])) ++rank;
    }
    ranks[q] = rank;
  }
  return ranks;
}

double recall_at_k(std::span<const float> queries, std::span<const float> gallery, std::size_t dim,
                   std::span<const std::size_t> truth, std::size_t k) {
  check_inputs(queries, gallery, dim, truth);
  const std::size_t G = gallery.size() / dim;
  if (k == 0 || k > G) {
    throw ConfigError("recall@" + std::to_string(k) + " is undefined for a gallery of " + std::to_string(G));
  }
  const auto ranks = true_ranks(queries, gallery, dim, truth);
  if (ranks.empty()) return 0.0;
  const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r < k; });
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

Embeddings embed_samples(const Model<float>& m, std::span<const Sample> samples, std::size_t chunk) {
  Embeddings e;
  e.dim = m.cfg.embed_dim;
  e.n = samples.size();
  for (std::size_t start = 0; start < samples.size(); start += chunk) {
    const auto part = samples.subspan(start, std::min(chunk, samples.size() - start));
    std::vector<std::string> captions;
    std::vector<Image> images;
    for (const auto& s : part) {
      captions.push_back(s.caption);
      images.push_back(s.image);
    }
    const auto t = embed_texts(m, captions);
    const auto v = m.vision.encode_images(images);
    e.text.insert(e.text.end(), t.p.data().begin(), t.p.data().end());
    e.vision.insert(e.vision.end(), v.q.data().begin(), v.q.data().end());
    e.segments.insert(e.segments.end(), t.segment_rows.data().begin(), t.segment_rows.data().end());
  }
  return e;
}

std::vector<RetrievalReport> evaluate_retrieval(const Embeddings& e) {
  std::vector<std::size_t> truth(e.n);
  for (std::size_t i = 0; i < e.n; ++i) truth[i] = i;
  auto report = [&](const char* dir, const std::vector<float>& q, const std::vector<float>& g) {
    RetrievalReport r;
    r.direction = dir;
    r.n_queries = e.n;
    const auto ranks = true_ranks(q, g, e.dim, truth);
    auto frac = [&](std::size_t k) {
      k = std::min(k, e.n);
      const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t x) { return x < k; });
      return e.n ? static_cast<double>(hits) / static_cast<double>(e.n) : 0.0;
    };
    r.r1 = frac(1);
    r.r5 = frac(5);
    r.r10 = frac(10);
    return r;
  };
  return {report("text-to-image", e.text, e.vision), report("image-to-text", e.vision, e.text)};
}

double mean_segment_cosine(const Embeddings& e, std::size_t k) {
  if (k < 2 || e.n == 0) return 0.0;
  const std::size_t w = e.segments.size() / (e.n * k);
  double total = 0;
  for (std::size_t s = 0; s < e.n; ++s) {
    const float* base = e.segments.data() + s * k * w;
    double acc = 0;
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        if (i == j) continue;
        const float* a = base + i * w;
        const float* b = base + j * w;
        const double na = std::sqrt(dot(a, a, w)), nb = std::sqrt(dot(b, b, w));
        acc += dot(a, b, w) / std::max(na * nb, 1e-12);
      }
    }
    total += acc / static_cast<double>(k * (k - 1));
  }
  return total / static_cast<double>(e.n);
}

std::string format_reports(const std::vector<RetrievalReport>& reports) {
  std::string out = "direction\tR@1\tR@5\tR@10\tn_queries\n";
  char buf[160];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%s\t%.4f\t%.4f\t%.4f\t%zu\n", r.direction.c_str(), r.r1, r.r5, r.r10, r.n_queries);
    out += buf;
  }
  return out;
}

}  // namespace camp
