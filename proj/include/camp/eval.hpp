#pragma once

// Retrieval metrics.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "camp/model.hpp"

namespace camp {

/// Fraction of queries whose true gallery row ranks within the top k by dot
/// product. A gallery row outranks the true row if its score is higher, or
/// equal with a lower index. k > G throws ConfigError.
double recall_at_k(std::span<const float> queries, std::span<const float> gallery, std::size_t dim,
                   std::span<const std::size_t> truth, std::size_t k);

/// 0-based rank of the true item for each query under the same tie rule.
std::vector<std::size_t> true_ranks(std::span<const float> queries, std::span<const float> gallery,
                                    std::size_t dim, std::span<const std::size_t> truth);

struct RetrievalReport {
  std::string direction;  // "text-to-image" or "image-to-text"
  double r1 = 0, r5 = 0, r10 = 0;
  std::size_t n_queries = 0;
};

struct Embeddings {
  std::vector<float> text;    // [n x D]
  std::vector<float> vision;  // [n x D]
  std::vector<float> segments;  // [n*K x w] projected positive segments
  std::size_t dim = 0;
  std::size_t n = 0;
};

/// Embeds captions and images of `samples` in chunks, without gradients.
Embeddings embed_samples(const Model<float>& m, std::span<const Sample> samples, std::size_t chunk = 48);

/// Caption i matches image i. R@k uses min(k, n) when the gallery is smaller than k.
std::vector<RetrievalReport> evaluate_retrieval(const Embeddings& e);

/// Mean over samples of the mean pairwise cosine between segment vectors.
double mean_segment_cosine(const Embeddings& e, std::size_t k);

/// Tab-separated table with a header row.
std::string format_reports(const std::vector<RetrievalReport>& reports);

}  // namespace camp
