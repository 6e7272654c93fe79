#include "camp/losses.hpp"

#include <array>
#include <cmath>
#include <string>

#include "camp/errors.hpp"

namespace camp {

namespace {

template <typename T>
void check_unit_rows(const Tensor<T>& x, const char* what) {
  const std::size_t R = x.rows(), C = x.cols();
  const auto d = x.data();
  for (std::size_t r = 0; r < R; ++r) {
    double ss = 0;
    for (std::size_t c = 0; c < C; ++c) ss += static_cast<double>(d[r * C + c]) * d[r * C + c];
    if (std::abs(std::sqrt(ss) - 1.0) > 1e-3) {
      const std::string msg = std::string(what) + ": row " + std::to_string(r) + " has norm " +
                              std::to_string(std::sqrt(ss)) + ", expected unit rows";
      log_warning(msg.c_str());
      return;
    }
  }
}

template <typename T>
void check_scale(const Tensor<T>& s) {
  if (s.numel() != 1) throw DimensionError("logit scale must hold one value");
  if (!(s.item() > T(0))) throw ConfigError("temperature must be positive");
}

// mean_i(logsumexp(row i) - logits[i][i])
template <typename T>
Tensor<T> infonce_rows(const Tensor<T>& logits, const Tensor<T>& positive) {
  return mean(sub(logsumexp_rows(logits), diag(positive)));
}

}  // namespace

template <typename T>
Tensor<T> logit_scale_from_tau(double tau) {
  if (!(tau > 0)) throw ConfigError("temperature must be positive, got " + std::to_string(tau));
  return Tensor<T>::scalar(static_cast<T>(1.0 / tau));
}

template <typename T>
ContrastiveTerms<T> contrastive_loss(const Tensor<T>& p, const Tensor<T>& q, const Tensor<T>& logit_scale) {
  if (p.shape() != q.shape() || p.rank() != 2) {
    throw DimensionError("contrastive_loss: P " + shape_str(p.shape()) + " and Q " + shape_str(q.shape()) +
                         " must be matching B x D matrices");
  }
  check_scale(logit_scale);
  check_unit_rows(p, "contrastive_loss P");
  check_unit_rows(q, "contrastive_loss Q");
  auto logits = mul_scalar(matmul_nt(p, q), logit_scale);  // [i][j] = s * p_i . q_j
  ContrastiveTerms<T> out;
  out.l_t2i = infonce_rows(logits, logits);
  const auto lt = transpose(logits);
  out.l_i2t = infonce_rows(lt, lt);
  out.l_con = scale(add(out.l_t2i, out.l_i2t), T(0.5));
  return out;
}

template <typename T>
Tensor<T> diversity_loss(const Tensor<T>& segments, std::size_t k) {
  if (k == 0 || segments.rows() % k != 0) {
    throw DimensionError("diversity_loss: " + std::to_string(segments.rows()) + " rows not divisible by k=" +
                         std::to_string(k));
  }
  if (k == 1) return Tensor<T>::scalar(T(0));
  const std::size_t B = segments.rows() / k;
  // sum_{i != j} cos(e_i, e_j) = |sum_i e_i|^2 - sum_i |e_i|^2 for unit e_i.
  auto e = l2_normalize(segments);
  auto g = group_sum_rows(e, k);
  auto pairs = sub(sum(mul(g, g)), sum(mul(e, e)));
  return scale(pairs, T(1) / static_cast<T>(k * (k - 1) * B));
}

template <typename T>
Tensor<T> negation_loss(const Tensor<T>& q, const Tensor<T>& p, const Tensor<T>& n, const Tensor<T>& logit_scale) {
  if (p.shape() != q.shape() || n.shape() != q.shape() || q.rank() != 2) {
    throw DimensionError("negation_loss: Q, P and N must be matching B x D matrices");
  }
  check_scale(logit_scale);
  check_unit_rows(q, "negation_loss Q");
  check_unit_rows(p, "negation_loss P");
  check_unit_rows(n, "negation_loss N");
  auto pos = mul_scalar(matmul_nt(q, p), logit_scale);
  auto neg = mul_scalar(matmul_nt(q, n), logit_scale);
  const std::array<Tensor<T>, 2> parts{pos, neg};
  return infonce_rows(concat_cols(std::span<const Tensor<T>>(parts)), pos);
}

template <typename T>
TotalLoss<T> total_loss(const ContrastiveTerms<T>& con, const Tensor<T>& l_div, const Tensor<T>& l_neg,
                        double alpha, double beta, const Tensor<T>& logit_scale) {
  TotalLoss<T> out;
  out.total = add(con.l_con, scale(l_div, static_cast<T>(alpha)));
  if (l_neg.defined()) out.total = add(out.total, scale(l_neg, static_cast<T>(beta)));
  auto& b = out.breakdown;
  b.l_t2i = con.l_t2i.item();
  b.l_i2t = con.l_i2t.item();
  b.l_con = con.l_con.item();
  b.l_div = l_div.item();
  b.has_neg = l_neg.defined();
  b.l_neg = b.has_neg ? static_cast<double>(l_neg.item()) : 0.0;
  b.l_total = out.total.item();
  b.tau = 1.0 / static_cast<double>(logit_scale.item());
  return out;
}

#define CAMP_INSTANTIATE_LOSSES(T)                                                                      \
  template Tensor<T> logit_scale_from_tau<T>(double);                                                   \
  template ContrastiveTerms<T> contrastive_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);  \
  template Tensor<T> diversity_loss(const Tensor<T>&, std::size_t);                                     \
  template Tensor<T> negation_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                \
                                   const Tensor<T>&);                                                   \
  template TotalLoss<T> total_loss(const ContrastiveTerms<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                   double, double, const Tensor<T>&);

CAMP_INSTANTIATE_LOSSES(float)
CAMP_INSTANTIATE_LOSSES(double)

}  // namespace camp
