#include "camp/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>
#include <vector>

#include <omp.h>

namespace camp::kernels {

namespace {

// Below this many multiply-adds a gemm runs on the calling thread.
constexpr std::size_t kParallelWork = 1u << 16;

template <typename T>
constexpr std::size_t col_block() {
  return 256 / sizeof(T);
}

template <typename T, std::size_t NB>
inline void gemm_micro4(std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
                        T* c, bool accumulate) {
  T acc0[NB], acc1[NB], acc2[NB], acc3[NB];
  for (std::size_t j = 0; j < NB; ++j) {
    acc0[j] = accumulate ? c[j] : T(0);
    acc1[j] = accumulate ? c[n + j] : T(0);
    acc2[j] = accumulate ? c[2 * n + j] : T(0);
    acc3[j] = accumulate ? c[3 * n + j] : T(0);
  }
  for (std::size_t p = 0; p < k; ++p) {
    const T* bp = b + p * n;
    const T a0 = a[p];
    const T a1 = a[lda + p];
    const T a2 = a[2 * lda + p];
    const T a3 = a[3 * lda + p];
#pragma omp simd
    for (std::size_t j = 0; j < NB; ++j) {
      acc0[j] += a0 * bp[j];
      acc1[j] += a1 * bp[j];
      acc2[j] += a2 * bp[j];
      acc3[j] += a3 * bp[j];
    }
  }
  for (std::size_t j = 0; j < NB; ++j) {
    c[j] = acc0[j];
    c[n + j] = acc1[j];
    c[2 * n + j] = acc2[j];
    c[3 * n + j] = acc3[j];
  }
}

template <typename T>
inline void gemm_edge(std::size_t rows, std::size_t cols, std::size_t n, std::size_t k, const T* a,
                      std::size_t lda, const T* b, T* c, bool accumulate) {
  for (std::size_t r = 0; r < rows; ++r) {
    T* cr = c + r * n;
    if (!accumulate) std::fill(cr, cr + cols, T(0));
    for (std::size_t p = 0; p < k; ++p) {
      const T ap = a[r * lda + p];
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < cols; ++j) cr[j] += ap * bp[j];
    }
  }
}

template <typename T>
void gemm_row_block(std::size_t i0, std::size_t rows, std::size_t n, std::size_t k, const T* a,
                    const T* b, T* c, bool accumulate) {
  constexpr std::size_t NB = col_block<T>();
  const T* ai = a + i0 * k;
  T* ci = c + i0 * n;
  for (std::size_t j0 = 0; j0 < n; j0 += NB) {
    const std::size_t cols = std::min(NB, n - j0);
    if (rows == 4 && cols == NB) {
      gemm_micro4<T, NB>(n, k, ai, k, b + j0, ci + j0, accumulate);
    } else {
      gemm_edge(rows, cols, n, k, ai, k, b + j0, ci + j0, accumulate);
    }
  }
}

std::vector<std::size_t> probs_offsets(std::span<const AttentionGroup> groups, std::size_t heads) {
  std::vector<std::size_t> offsets(groups.size() + 1, 0);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    offsets[g + 1] = offsets[g] + heads * groups[g].length * groups[g].length;
  }
  return offsets;
}

inline bool allowed(const AttentionGroup& g, std::size_t i, std::size_t j) {
  return g.mask == nullptr || g.mask[i * g.length + j] != 0;
}

template <typename T>
void attention_head_forward(const AttentionGroup& g, std::size_t h, std::size_t head_dim,
                            std::size_t width, const T* q, const T* k, const T* v, T* out,
                            T* probs) {
  const T scale = T(1) / std::sqrt(T(head_dim));
  const std::size_t L = g.length;
  const std::size_t col = h * head_dim;
  std::vector<std::size_t> keys;
  std::vector<T> w;
  keys.reserve(L);
  w.reserve(L);
  for (std::size_t i = 0; i < L; ++i) {
    const T* qi = q + (g.offset + i) * width + col;
    T* pi = probs + i * L;
    std::fill(pi, pi + L, T(0));
    keys.clear();
    for (std::size_t j = 0; j < L; ++j) {
      if (allowed(g, i, j)) keys.push_back(j);
    }
    w.resize(keys.size());
    T max_score = -std::numeric_limits<T>::infinity();
    for (std::size_t t = 0; t < keys.size(); ++t) {
      const T* kj = k + (g.offset + keys[t]) * width + col;
      T dot = T(0);
#pragma omp simd reduction(+ : dot)
      for (std::size_t d = 0; d < head_dim; ++d) dot += qi[d] * kj[d];
      w[t] = dot * scale;
      max_score = std::max(max_score, w[t]);
    }
    T total = T(0);
    for (std::size_t t = 0; t < w.size(); ++t) {
      w[t] = exp_fast(w[t] - max_score);
      total += w[t];
    }
    T* oi = out + (g.offset + i) * width + col;
    std::fill(oi, oi + head_dim, T(0));
    for (std::size_t t = 0; t < keys.size(); ++t) {
      const T p = w[t] / total;
      pi[keys[t]] = p;
      const T* vj = v + (g.offset + keys[t]) * width + col;
#pragma omp simd
      for (std::size_t d = 0; d < head_dim; ++d) oi[d] += p * vj[d];
    }
  }
}

template <typename T>
void attention_head_backward(const AttentionGroup& g, std::size_t h, std::size_t head_dim,
                             std::size_t width, const T* q, const T* k, const T* v,
                             const T* probs, const T* dout, T* dq, T* dk, T* dv) {
  const T scale = T(1) / std::sqrt(T(head_dim));
  const std::size_t L = g.length;
  const std::size_t col = h * head_dim;
  std::vector<std::size_t> keys;
  std::vector<T> dscore;
  keys.reserve(L);
  dscore.reserve(L);
  for (std::size_t i = 0; i < L; ++i) {
    const T* pi = probs + i * L;
    const T* doi = dout + (g.offset + i) * width + col;
    keys.clear();
    for (std::size_t j = 0; j < L; ++j) {
      if (pi[j] != T(0)) keys.push_back(j);
    }
    dscore.resize(keys.size());
    T row_dot = T(0);
    for (std::size_t t = 0; t < keys.size(); ++t) {
      const T* vj = v + (g.offset + keys[t]) * width + col;
      T dp = T(0);
#pragma omp simd reduction(+ : dp)
      for (std::size_t d = 0; d < head_dim; ++d) dp += doi[d] * vj[d];
      dscore[t] = dp;
      row_dot += pi[keys[t]] * dp;
    }
    const T* qi = q + (g.offset + i) * width + col;
    T* dqi = dq ? dq + (g.offset + i) * width + col : nullptr;
    for (std::size_t t = 0; t < keys.size(); ++t) {
      const T p = pi[keys[t]];
      const T ds = p * (dscore[t] - row_dot) * scale;
      const std::size_t rj = (g.offset + keys[t]) * width + col;
      if (dqi) {
#pragma omp simd
        for (std::size_t d = 0; d < head_dim; ++d) dqi[d] += ds * k[rj + d];
      }
      if (dk) {
#pragma omp simd
        for (std::size_t d = 0; d < head_dim; ++d) dk[rj + d] += ds * qi[d];
      }
      if (dv) {
#pragma omp simd
        for (std::size_t d = 0; d < head_dim; ++d) dv[rj + d] += p * doi[d];
      }
    }
  }
}

}  // namespace

void set_num_threads(int n) {
  omp_set_num_threads(n >= 1 ? n : omp_get_num_procs());
}

int num_threads() { return omp_get_max_threads(); }

void configure_threads_from_env() {
  if (const char* env = std::getenv("CAMP_THREADS")) {
    try {
      set_num_threads(std::stoi(env));
    } catch (const std::exception&) {
      // Unparseable values leave the OpenMP default in place.
    }
  }
}

template <typename T>
void gemm_reference(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
                    bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T s = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
}

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate) {
  if (k == 0) {
    if (!accumulate) std::fill(c, c + m * n, T(0));
    return;
  }
  const std::ptrdiff_t blocks = static_cast<std::ptrdiff_t>((m + 3) / 4);
  const bool parallel = m * n * k >= kParallelWork && blocks > 1;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::ptrdiff_t blk = 0; blk < blocks; ++blk) {
    const std::size_t i0 = static_cast<std::size_t>(blk) * 4;
    gemm_row_block(i0, std::min<std::size_t>(4, m - i0), n, k, a, b, c, accumulate);
  }
}

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* in, T* out) {
  constexpr std::size_t B = 16;
  for (std::size_t r0 = 0; r0 < rows; r0 += B) {
    for (std::size_t c0 = 0; c0 < cols; c0 += B) {
      const std::size_t r1 = std::min(rows, r0 + B);
      const std::size_t c1 = std::min(cols, c0 + B);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) out[c * rows + r] = in[r * cols + c];
      }
    }
  }
}

std::size_t attention_probs_size(std::span<const AttentionGroup> groups, std::size_t heads) {
  return probs_offsets(groups, heads).back();
}

template <typename T>
void attention_forward(std::span<const AttentionGroup> groups, std::size_t heads, std::size_t width,
                       const T* q, const T* k, const T* v, T* out, T* probs) {
  const auto offsets = probs_offsets(groups, heads);
  const std::size_t head_dim = width / heads;
  const std::ptrdiff_t tasks = static_cast<std::ptrdiff_t>(groups.size() * heads);
#pragma omp parallel for schedule(dynamic, 1) if (tasks > 1)
  for (std::ptrdiff_t t = 0; t < tasks; ++t) {
    const std::size_t gi = static_cast<std::size_t>(t) / heads;
    const std::size_t h = static_cast<std::size_t>(t) % heads;
    const auto& g = groups[gi];
    attention_head_forward(g, h, head_dim, width, q, k, v, out,
                           probs + offsets[gi] + h * g.length * g.length);
  }
}

template <typename T>
void attention_forward_reference(std::span<const AttentionGroup> groups, std::size_t heads,
                                 std::size_t width, const T* q, const T* k, const T* v, T* out,
                                 T* probs) {
  const std::size_t head_dim = width / heads;
  const T scale = T(1) / std::sqrt(T(head_dim));
  std::size_t poff = 0;
  for (const auto& g : groups) {
    const std::size_t L = g.length;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t col = h * head_dim;
      for (std::size_t i = 0; i < L; ++i) {
        T* pi = probs + poff + (h * L + i) * L;
        for (std::size_t j = 0; j < L; ++j) {
          T dot = T(0);
          for (std::size_t d = 0; d < head_dim; ++d) {
            dot += q[(g.offset + i) * width + col + d] * k[(g.offset + j) * width + col + d];
          }
          pi[j] = dot * scale + (allowed(g, i, j) ? T(0) : T(kMaskedScoreBias));
        }
        const T max_score = *std::max_element(pi, pi + L);
        T total = T(0);
        for (std::size_t j = 0; j < L; ++j) {
          pi[j] = exp_fast(pi[j] - max_score);
          total += pi[j];
        }
        for (std::size_t j = 0; j < L; ++j) pi[j] /= total;
        for (std::size_t d = 0; d < head_dim; ++d) {
          T s = T(0);
          for (std::size_t j = 0; j < L; ++j) s += pi[j] * v[(g.offset + j) * width + col + d];
          out[(g.offset + i) * width + col + d] = s;
        }
      }
    }
    poff += heads * L * L;
  }
}

template <typename T>
void attention_backward(std::span<const AttentionGroup> groups, std::size_t heads,
                        std::size_t width, const T* q, const T* k, const T* v, const T* probs,
                        const T* dout, T* dq, T* dk, T* dv) {
  const auto offsets = probs_offsets(groups, heads);
  const std::size_t head_dim = width / heads;
  const std::ptrdiff_t tasks = static_cast<std::ptrdiff_t>(groups.size() * heads);
#pragma omp parallel for schedule(dynamic, 1) if (tasks > 1)
  for (std::ptrdiff_t t = 0; t < tasks; ++t) {
    const std::size_t gi = static_cast<std::size_t>(t) / heads;
    const std::size_t h = static_cast<std::size_t>(t) % heads;
    const auto& g = groups[gi];
    attention_head_backward(g, h, head_dim, width, q, k, v,
                            probs + offsets[gi] + h * g.length * g.length, dout, dq, dk, dv);
  }
}

#define CAMP_INSTANTIATE_KERNELS(T)                                                              \
  template void gemm_reference<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, \
                                  bool);                                                         \
  template void gemm<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);    \
  template void transpose<T>(std::size_t, std::size_t, const T*, T*);                           \
  template void attention_forward<T>(std::span<const AttentionGroup>, std::size_t, std::size_t, \
                                     const T*, const T*, const T*, T*, T*);                     \
  template void attention_forward_reference<T>(std::span<const AttentionGroup>, std::size_t,    \
                                               std::size_t, const T*, const T*, const T*, T*,   \
                                               T*);                                             \
  template void attention_backward<T>(std::span<const AttentionGroup>, std::size_t, std::size_t, \
                                      const T*, const T*, const T*, const T*, const T*, T*, T*,  \
                                      T*);

CAMP_INSTANTIATE_KERNELS(float)
CAMP_INSTANTIATE_KERNELS(double)

}  // namespace camp::kernels
