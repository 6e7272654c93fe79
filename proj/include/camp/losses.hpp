#pragma once

// Training objectives. Temperatures enter as a logit scale tensor s_scale
// holding 1/tau, so the learnable log-scale can sit upstream of it.

#include <cstddef>

#include "camp/ops.hpp"
#include "camp/tensor.hpp"

namespace camp {

inline constexpr double kDefaultAlpha = 0.1;
inline constexpr double kDefaultBeta = 0.1;

template <typename T>
struct ContrastiveTerms {
  Tensor<T> l_t2i, l_i2t, l_con;
};

/// Bidirectional InfoNCE over B matched rows of P (text) and Q (vision).
/// logit_scale is a one-element tensor equal to 1/tau.
template <typename T>
ContrastiveTerms<T> contrastive_loss(const Tensor<T>& p, const Tensor<T>& q, const Tensor<T>& logit_scale);

/// Mean pairwise cosine among each sample's K segment vectors, averaged over
/// the batch. `segments` is [B*K x w], sample-major; rows are normalized here.
/// K = 1 gives 0.
template <typename T>
Tensor<T> diversity_loss(const Tensor<T>& segments, std::size_t k);

/// Image-to-text InfoNCE whose denominator also ranges over the negation
/// embeddings N.
template <typename T>
Tensor<T> negation_loss(const Tensor<T>& q, const Tensor<T>& p, const Tensor<T>& n, const Tensor<T>& logit_scale);

struct LossBreakdown {
  double l_t2i = 0, l_i2t = 0, l_con = 0, l_div = 0, l_neg = 0, l_total = 0;
  double tau = 0;
  bool has_neg = false;
};

template <typename T>
struct TotalLoss {
  Tensor<T> total;
  LossBreakdown breakdown;
};

/// l_total = l_con + alpha*l_div (+ beta*l_neg when `l_neg` is defined).
template <typename T>
TotalLoss<T> total_loss(const ContrastiveTerms<T>& con, const Tensor<T>& l_div, const Tensor<T>& l_neg,
                        double alpha, double beta, const Tensor<T>& logit_scale);

/// Builds a one-element logit-scale tensor from tau; tau <= 0 is a ConfigError.
template <typename T>
Tensor<T> logit_scale_from_tau(double tau);

}  // namespace camp
