#pragma once

// Hot inner loops. Each parallel kernel has a serial reference that the
// tests compare against. Parallel kernels split work over independent output
// rows or (group, head) pairs only; every output element is reduced in the
// same order regardless of thread count, so results do not depend on the
// number of threads.

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>

namespace camp::kernels {

/// exp for float without a library call, so loops using it vectorize.
/// Cody-Waite reduction x = n*ln2 + r, then the Cephes degree-6 polynomial
/// for e^r; within 2 ulp of std::exp over [-87, 88]. Inputs are clamped to
/// that range. The double overload is std::exp.
inline float exp_fast(float x) {
  x = x < -87.0f ? -87.0f : (x > 88.0f ? 88.0f : x);
  // floor via truncation of a positive value: x*log2(e) + 0.5 lies in (-126, 128)
  const std::int32_t ni = static_cast<std::int32_t>(x * 1.44269504088896341f + 128.5f) - 128;
  const float n = static_cast<float>(ni);
  const float r = (x - n * 0.693359375f) - n * -2.12194440e-4f;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  p = p * r * r + r + 1.0f;
  return p * std::bit_cast<float>(static_cast<std::uint32_t>(ni + 127) << 23);
}

inline double exp_fast(double x) { return std::exp(x); }

/// Caps worker threads. Values < 1 restore the OpenMP default.
void set_num_threads(int n);
int num_threads();
/// Reads CAMP_THREADS from the environment, if set.
void configure_threads_from_env();

/// C[m x n] (+)= A[m x k] * B[k x n], all row-major. Naive triple loop.
template <typename T>
void gemm_reference(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
                    bool accumulate);

/// Same contract as gemm_reference; register-blocked and OpenMP-parallel over rows.
template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate);

/// out[cols x rows] = in[rows x cols]^T
template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* in, T* out);

/// One contiguous run of rows attending among themselves.
/// `mask` is a length x length row-major matrix (query x key, nonzero =
/// attendable) or null for unrestricted attention.
struct AttentionGroup {
  std::size_t offset = 0;
  std::size_t length = 0;
  const std::uint8_t* mask = nullptr;
};

/// Additive bias applied to masked scores before the softmax.
inline constexpr double kMaskedScoreBias = -1e9;

/// Multi-head scaled dot-product attention over packed rows.
/// q, k, v, out are [rows x width]; width = heads * head_dim. `probs` receives
/// the softmax weights, laid out per group as heads x length x length,
/// groups concatenated in order.
template <typename T>
void attention_forward(std::span<const AttentionGroup> groups, std::size_t heads, std::size_t width,
                       const T* q, const T* k, const T* v, T* out, T* probs);

/// Serial version that materializes the full score matrix with the additive
/// mask bias; the parallel kernel skips masked keys instead.
template <typename T>
void attention_forward_reference(std::span<const AttentionGroup> groups, std::size_t heads,
                                 std::size_t width, const T* q, const T* k, const T* v, T* out,
                                 T* probs);

/// Accumulates dq, dk, dv (any may be null) from the output gradient.
template <typename T>
void attention_backward(std::span<const AttentionGroup> groups, std::size_t heads,
                        std::size_t width, const T* q, const T* k, const T* v, const T* probs,
                        const T* dout, T* dq, T* dk, T* dv);

std::size_t attention_probs_size(std::span<const AttentionGroup> groups, std::size_t heads);

}  // namespace camp::kernels
