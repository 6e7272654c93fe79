#pragma once

// Differentiable tensor operations. Every op validates shapes, checks its
// output for NaN/Inf (throwing NumericError), and records a backward step on
// the active GradTape when any input requires grad.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "camp/kernels.hpp"
#include "camp/tensor.hpp"

namespace camp {

// --- linear algebra -------------------------------------------------------

/// [m x k] * [k x n] -> [m x n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// [m x k] * [n x k]^T -> [m x n]
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

/// x[rows x in] * w[in x out] (+ bias[out]). `bias` may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

template <typename T>
Tensor<T> transpose(const Tensor<T>& x);

// --- elementwise ----------------------------------------------------------

/// a + b. `b` may match `a`, be a row vector broadcast over the rows of `a`
/// ([cols] or [1 x cols]), or a column [rows x 1] broadcast over its columns.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

/// a * c for a constant c.
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c);

/// a * s where s is a single-element tensor (differentiable in s).
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, const Tensor<T>& s);

template <typename T>
Tensor<T> exp(const Tensor<T>& a);

/// GELU, tanh approximation.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a);

// --- normalizers ----------------------------------------------------------

/// Softmax over the last axis, max-subtracted.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x);

/// log(sum(exp(row))) for each row of a 2-D tensor -> [rows].
template <typename T>
Tensor<T> logsumexp_rows(const Tensor<T>& x);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

/// Row-wise x / sqrt(|x|^2 + eps^2). All-zero rows stay finite and are
/// reported through log_warning.
template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x, T eps = T(1e-8));

// --- reductions and reshaping ---------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// Diagonal of a square 2-D tensor -> [n].
template <typename T>
Tensor<T> diag(const Tensor<T>& x);

/// Sums each run of `group` consecutive rows: [g*r x c] -> [r x c].
template <typename T>
Tensor<T> group_sum_rows(const Tensor<T>& x, std::size_t group);

/// Copy with a new shape of equal element count.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

/// Row i of the output is row indices[i] of x (2-D).
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> indices);

/// Concatenates 2-D tensors with equal row counts along the columns.
template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts);

/// Token embedding lookup where ids in [override_first, override_first +
/// overrides.rows()) read from `overrides` instead of `table`.
template <typename T>
Tensor<T> embed_tokens(const Tensor<T>& table, const Tensor<T>& overrides,
                       std::span<const std::int32_t> ids, std::size_t override_first);

// --- attention ------------------------------------------------------------

/// Packed-row layout for attention: independent groups of rows, each with an
/// optional query x key mask. The layout owns its masks.
struct AttentionLayout {
  std::vector<kernels::AttentionGroup> groups;
  std::vector<std::shared_ptr<const std::vector<std::uint8_t>>> masks;

  /// Appends a group of `length` rows; `mask` may be null (unrestricted).
  void add_group(std::size_t length, std::shared_ptr<const std::vector<std::uint8_t>> mask);
  std::size_t total_rows() const;
};

/// Multi-head scaled dot-product attention; q, k, v are [rows x width].
template <typename T>
Tensor<T> masked_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                           std::size_t heads, const AttentionLayout& layout);

/// Multi-head attention pooling with one learned query per output.
/// query: [1 x width]; keys, values: [rows x width]; rows are split into
/// consecutive groups of the given lengths, one output row per group.
/// If `weights` is non-null it receives the pooling weights, laid out per
/// group as heads x length.
template <typename T>
Tensor<T> attention_pool(const Tensor<T>& query, const Tensor<T>& keys, const Tensor<T>& values,
                         std::size_t heads, std::span<const std::size_t> group_lengths,
                         std::vector<T>* weights = nullptr);

/// Sink for numeric warnings (zero-norm rows and similar). Defaults to stderr.
void set_warning_sink(void (*sink)(const char* message));
void log_warning(const char* message);

}  // namespace camp
