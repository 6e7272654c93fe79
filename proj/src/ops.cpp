#include "camp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <initializer_list>
#include <numeric>
#include <string>
#include <utility>

namespace camp {

namespace {

void default_sink(const char* message) { std::fprintf(stderr, "camp: warning: %s\n", message); }

void (*g_warning_sink)(const char*) = &default_sink;

template <typename T>
bool tracking(std::initializer_list<const Tensor<T>*> inputs) {
  if (GradTape<T>::active() == nullptr) return false;
  for (const Tensor<T>* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
Tensor<T> make_output(Shape shape, std::vector<T> data, bool track, const char* op) {
  for (const T v : data) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
  return Tensor<T>(std::move(shape), std::move(data), track);
}

template <typename T, typename Fn>
void record(const Tensor<T>& out, Fn&& fn) {
  GradTape<T>::active()->record(out, std::forward<Fn>(fn));
}

template <typename T>
void require_rank2(const Tensor<T>& x, const char* op) {
  if (x.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a 2-D tensor, got " + shape_str(x.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename T>
std::vector<T> transposed(std::size_t rows, std::size_t cols, std::span<const T> in) {
  std::vector<T> out(in.size());
  kernels::transpose(rows, cols, in.data(), out.data());
  return out;
}

Shape with_last(const Shape& shape, std::size_t last) {
  Shape s = shape;
  s.back() = last;
  return s;
}

}  // namespace

void set_warning_sink(void (*sink)(const char*)) { g_warning_sink = sink ? sink : &default_sink; }
void log_warning(const char* message) { g_warning_sink(message); }

// --- linear algebra -------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<T> c(m * n);
  kernels::gemm(m, n, k, a.data().data(), b.data().data(), c.data(), false);
  const bool track = tracking<T>({&a, &b});
  auto out = make_output<T>({m, n}, std::move(c), track, "matmul");
  if (track) {
    record(out, [a, b, out, m, n, k]() mutable {
      const T* dc = out.grad().data();
      if (a.requires_grad()) {
        const auto bt = transposed<T>(k, n, b.data());
        kernels::gemm(m, k, n, dc, bt.data(), a.grad_mut().data(), true);
      }
      if (b.requires_grad()) {
        const auto at = transposed<T>(m, k, a.data());
        kernels::gemm(k, n, m, at.data(), dc, b.grad_mut().data(), true);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_nt: inner dimensions disagree " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + "^T");
  }
  const auto bt = transposed<T>(n, k, b.data());
  std::vector<T> c(m * n);
  kernels::gemm(m, n, k, a.data().data(), bt.data(), c.data(), false);
  const bool track = tracking<T>({&a, &b});
  auto out = make_output<T>({m, n}, std::move(c), track, "matmul_nt");
  if (track) {
    record(out, [a, b, out, m, n, k]() mutable {
      const T* dc = out.grad().data();
      if (a.requires_grad()) {
        kernels::gemm(m, k, n, dc, b.data().data(), a.grad_mut().data(), true);
      }
      if (b.requires_grad()) {
        const auto dct = transposed<T>(m, n, out.grad());
        kernels::gemm(n, k, m, dct.data(), a.data().data(), b.grad_mut().data(), true);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  require_rank2(w, "linear");
  const std::size_t rows = x.rows(), in = x.cols(), width = w.dim(1);
  if (w.dim(0) != in) {
    throw DimensionError("linear: input width " + std::to_string(in) + " does not match weight " +
                         shape_str(w.shape()));
  }
  if (bias.defined() && bias.numel() != width) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match width " +
                         std::to_string(width));
  }
  std::vector<T> y(rows * width);
  kernels::gemm(rows, width, in, x.data().data(), w.data().data(), y.data(), false);
  if (bias.defined()) {
    const auto bd = bias.data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < width; ++c) y[r * width + c] += bd[c];
    }
  }
  const bool track = tracking<T>({&x, &w, &bias});
  auto out = make_output<T>(with_last(x.shape(), width), std::move(y), track, "linear");
  if (track) {
    record(out, [x, w, bias, out, rows, in, width]() mutable {
      const T* dy = out.grad().data();
      if (x.requires_grad()) {
        const auto wt = transposed<T>(in, width, w.data());
        kernels::gemm(rows, in, width, dy, wt.data(), x.grad_mut().data(), true);
      }
      if (w.requires_grad()) {
        const auto xt = transposed<T>(rows, in, x.data());
        kernels::gemm(in, width, rows, xt.data(), dy, w.grad_mut().data(), true);
      }
      if (bias.defined() && bias.requires_grad()) {
        auto gb = bias.grad_mut();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < width; ++c) gb[c] += dy[r * width + c];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  require_rank2(x, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  const bool track = tracking<T>({&x});
  auto out = make_output<T>({c, r}, transposed<T>(r, c, x.data()), track, "transpose");
  if (track) {
    record(out, [x, out, r, c]() mutable {
      auto gx = x.grad_mut();
      const auto g = out.grad();
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
      }
    });
  }
  return out;
}

// --- elementwise ----------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  enum class Mode { same, rows, cols } mode;
  const std::size_t R = a.rows(), C = a.cols();
  if (a.shape() == b.shape()) {
    mode = Mode::same;
  } else if (b.numel() == C && (b.rank() == 1 || (b.rank() == 2 && b.dim(0) == 1))) {
    mode = Mode::rows;
  } else if (a.rank() == 2 && b.rank() == 2 && b.dim(0) == R && b.dim(1) == 1) {
    mode = Mode::cols;
  } else {
    throw DimensionError("add: cannot broadcast " + shape_str(b.shape()) + " onto " +
                         shape_str(a.shape()));
  }
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<T> y(ad.begin(), ad.end());
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t i = r * C + c;
      y[i] += mode == Mode::same ? bd[i] : (mode == Mode::rows ? bd[c] : bd[r]);
    }
  }
  const bool track = tracking<T>({&a, &b});
  auto out = make_output<T>(a.shape(), std::move(y), track, "add");
  if (track) {
    record(out, [a, b, out, mode, R, C]() mutable {
      const auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_mut();
        for (std::size_t r = 0; r < R; ++r) {
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t i = r * C + c;
            gb[mode == Mode::same ? i : (mode == Mode::rows ? c : r)] += g[i];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<T> y(ad.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = ad[i] - bd[i];
  const bool track = tracking<T>({&a, &b});
  auto out = make_output<T>(a.shape(), std::move(y), track, "sub");
  if (track) {
    record(out, [a, b, out]() mutable {
      const auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<T> y(ad.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = ad[i] * bd[i];
  const bool track = tracking<T>({&a, &b});
  auto out = make_output<T>(a.shape(), std::move(y), track, "mul");
  if (track) {
    record(out, [a, b, out]() mutable {
      const auto g = out.grad();
      // Read both inputs before writing: a and b may alias.
      const auto ad = a.data();
      const auto bd = b.data();
      if (a.requires_grad()) {
        auto ga = a.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ad[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  const auto ad = a.data();
  std::vector<T> y(ad.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = ad[i] * c;
  const bool track = tracking<T>({&a});
  auto out = make_output<T>(a.shape(), std::move(y), track, "scale");
  if (track) {
    record(out, [a, out, c]() mutable {
      const auto g = out.grad();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, const Tensor<T>& s) {
  if (s.numel() != 1) {
    throw DimensionError("mul_scalar: expected a single-element scale, got " +
                         shape_str(s.shape()));
  }
  const T c = s.item();
  const auto ad = a.data();
  std::vector<T> y(ad.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = ad[i] * c;
  const bool track = tracking<T>({&a, &s});
  auto out = make_output<T>(a.shape(), std::move(y), track, "mul_scalar");
  if (track) {
    record(out, [a, s, out]() mutable {
      const auto g = out.grad();
      const T c = s.item();
      if (a.requires_grad()) {
        auto ga = a.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
      }
      if (s.requires_grad()) {
        const auto ad = a.data();
        T acc = T(0);
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * ad[i];
        s.grad_mut()[0] += acc;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  const auto ad = a.data();
  std::vector<T> y(ad.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::exp(ad[i]);
  const bool track = tracking<T>({&a});
  auto out = make_output<T>(a.shape(), std::move(y), track, "exp");
  if (track) {
    record(out, [a, out]() mutable {
      const auto g = out.grad();
      const auto y = out.data();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    });
  }
  return out;
}

// 1 - 2/(e^{2u} + 1): exp is much cheaper than std::tanh and the form
// saturates cleanly to +-1.
template <typename T>
inline T fast_tanh(T u) {
  return T(1) - T(2) / (kernels::exp_fast(T(2) * u) + T(1));
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kA = T(0.044715);
  const auto ad = a.data();
  std::vector<T> y(ad.size());
#pragma omp simd
  for (std::size_t i = 0; i < y.size(); ++i) {
    const T x = ad[i];
    y[i] = T(0.5) * x * (T(1) + fast_tanh(kC * (x + kA * x * x * x)));
  }
  const bool track = tracking<T>({&a});
  auto out = make_output<T>(a.shape(), std::move(y), track, "gelu");
  if (track) {
    record(out, [a, out]() mutable {
      const auto g = out.grad();
      const auto ad = a.data();
      auto ga = a.grad_mut();
#pragma omp simd
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T x = ad[i];
        const T t = fast_tanh(kC * (x + kA * x * x * x));
        const T dt = (T(1) - t * t) * kC * (T(1) + T(3) * kA * x * x);
        ga[i] += g[i] * (T(0.5) * (T(1) + t) + T(0.5) * x * dt);
      }
    });
  }
  return out;
}

// --- normalizers ----------------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  const std::size_t R = x.rows(), C = x.cols();
  const auto xd = x.data();
  std::vector<T> y(xd.size());
  for (std::size_t r = 0; r < R; ++r) {
    const T* xr = xd.data() + r * C;
    T* yr = y.data() + r * C;
    const T m = *std::max_element(xr, xr + C);
    T total = T(0);
    for (std::size_t c = 0; c < C; ++c) {
      yr[c] = std::exp(xr[c] - m);
      total += yr[c];
    }
    for (std::size_t c = 0; c < C; ++c) yr[c] /= total;
  }
  const bool track = tracking<T>({&x});
  auto out = make_output<T>(x.shape(), std::move(y), track, "softmax");
  if (track) {
    record(out, [x, out, R, C]() mutable {
      const auto g = out.grad();
      const auto y = out.data();
      auto gx = x.grad_mut();
      for (std::size_t r = 0; r < R; ++r) {
        T dot = T(0);
        for (std::size_t c = 0; c < C; ++c) dot += g[r * C + c] * y[r * C + c];
        for (std::size_t c = 0; c < C; ++c) {
          gx[r * C + c] += y[r * C + c] * (g[r * C + c] - dot);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> logsumexp_rows(const Tensor<T>& x) {
  require_rank2(x, "logsumexp_rows");
  const std::size_t R = x.dim(0), C = x.dim(1);
  const auto xd = x.data();
  std::vector<T> y(R);
  for (std::size_t r = 0; r < R; ++r) {
    const T* xr = xd.data() + r * C;
    const T m = *std::max_element(xr, xr + C);
    T total = T(0);
    for (std::size_t c = 0; c < C; ++c) total += std::exp(xr[c] - m);
    y[r] = m + std::log(total);
  }
  const bool track = tracking<T>({&x});
  auto out = make_output<T>({R}, std::move(y), track, "logsumexp_rows");
  if (track) {
    record(out, [x, out, R, C]() mutable {
      const auto g = out.grad();
      const auto y = out.data();
      const auto xd = x.data();
      auto gx = x.grad_mut();
      for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t c = 0; c < C; ++c) {
          gx[r * C + c] += g[r] * std::exp(xd[r * C + c] - y[r]);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const std::size_t R = x.rows(), H = x.cols();
  if (gamma.numel() != H || beta.numel() != H) {
    throw DimensionError("layer_norm: affine parameters must have width " + std::to_string(H));
  }
  if (!(eps > T(0))) throw ConfigError("layer_norm: eps must be positive");
  const auto xd = x.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  auto xhat = std::make_shared<std::vector<T>>(xd.size());
  auto inv_std = std::make_shared<std::vector<T>>(R);
  std::vector<T> y(xd.size());
  for (std::size_t r = 0; r < R; ++r) {
    const T* xr = xd.data() + r * H;
    T mu = T(0);
    for (std::size_t c = 0; c < H; ++c) mu += xr[c];
    mu /= T(H);
    T var = T(0);
    for (std::size_t c = 0; c < H; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= T(H);
    const T inv = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t c = 0; c < H; ++c) {
      const T xh = (xr[c] - mu) * inv;
      (*xhat)[r * H + c] = xh;
      y[r * H + c] = gd[c] * xh + bd[c];
    }
  }
  const bool track = tracking<T>({&x, &gamma, &beta});
  auto out = make_output<T>(x.shape(), std::move(y), track, "layer_norm");
  if (track) {
    record(out, [x, gamma, beta, out, xhat, inv_std, R, H]() mutable {
      const auto g = out.grad();
      const auto& xh = *xhat;
      if (gamma.requires_grad()) {
        auto gg = gamma.grad_mut();
        for (std::size_t r = 0; r < R; ++r) {
          for (std::size_t c = 0; c < H; ++c) gg[c] += g[r * H + c] * xh[r * H + c];
        }
      }
      if (beta.requires_grad()) {
        auto gb = beta.grad_mut();
        for (std::size_t r = 0; r < R; ++r) {
          for (std::size_t c = 0; c < H; ++c) gb[c] += g[r * H + c];
        }
      }
      if (x.requires_grad()) {
        const auto gd = gamma.data();
        auto gx = x.grad_mut();
        for (std::size_t r = 0; r < R; ++r) {
          T mean_d = T(0), mean_dx = T(0);
          for (std::size_t c = 0; c < H; ++c) {
            const T d = g[r * H + c] * gd[c];
            mean_d += d;
            mean_dx += d * xh[r * H + c];
          }
          mean_d /= T(H);
          mean_dx /= T(H);
          const T inv = (*inv_std)[r];
          for (std::size_t c = 0; c < H; ++c) {
            const T d = g[r * H + c] * gd[c];
            gx[r * H + c] += inv * (d - mean_d - xh[r * H + c] * mean_dx);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x, T eps) {
  const std::size_t R = x.rows(), D = x.cols();
  const auto xd = x.data();
  auto norms = std::make_shared<std::vector<T>>(R);
  std::vector<T> y(xd.size());
  std::size_t degenerate = 0;
  for (std::size_t r = 0; r < R; ++r) {
    T ss = T(0);
    for (std::size_t c = 0; c < D; ++c) ss += xd[r * D + c] * xd[r * D + c];
    if (ss <= eps * eps) ++degenerate;
    const T n = std::sqrt(ss + eps * eps);
    (*norms)[r] = n;
    for (std::size_t c = 0; c < D; ++c) y[r * D + c] = xd[r * D + c] / n;
  }
  if (degenerate > 0) {
    log_warning(("l2_normalize: " + std::to_string(degenerate) + " near-zero row(s)").c_str());
  }
  const bool track = tracking<T>({&x});
  auto out = make_output<T>(x.shape(), std::move(y), track, "l2_normalize");
  if (track) {
    record(out, [x, out, norms, R, D]() mutable {
      const auto g = out.grad();
      const auto y = out.data();
      auto gx = x.grad_mut();
      for (std::size_t r = 0; r < R; ++r) {
        T dot = T(0);
        for (std::size_t c = 0; c < D; ++c) dot += y[r * D + c] * g[r * D + c];
        const T n = (*norms)[r];
        for (std::size_t c = 0; c < D; ++c) {
          gx[r * D + c] += (g[r * D + c] - y[r * D + c] * dot) / n;
        }
      }
    });
  }
  return out;
}

// --- reductions and reshaping ---------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  const auto xd = x.data();
  const T total = std::accumulate(xd.begin(), xd.end(), T(0));
  const bool track = tracking<T>({&x});
  auto out = make_output<T>({1}, {total}, track, "sum");
  if (track) {
    record(out, [x, out]() mutable {
      const T g = out.grad()[0];
      for (T& v : x.grad_mut()) v += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / T(x.numel()));
}

template <typename T>
Tensor<T> diag(const Tensor<T>& x) {
  require_rank2(x, "diag");
  const std::size_t n = x.dim(0);
  if (x.dim(1) != n) throw DimensionError("diag expects a square matrix, got " + shape_str(x.shape()));
  std::vector<T> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = x.at(i, i);
  const bool track = tracking<T>({&x});
  auto out = make_output<T>({n}, std::move(y), track, "diag");
  if (track) {
    record(out, [x, out, n]() mutable {
      const auto g = out.grad();
      auto gx = x.grad_mut();
      for (std::size_t i = 0; i < n; ++i) gx[i * n + i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> group_sum_rows(const Tensor<T>& x, std::size_t group) {
  const std::size_t R = x.rows(), C = x.cols();
  if (group == 0 || R % group != 0) {
    throw DimensionError("group_sum_rows: " + std::to_string(R) + " rows not divisible into groups of " +
                         std::to_string(group));
  }
  const std::size_t G = R / group;
  const auto xd = x.data();
  std::vector<T> y(G * C, T(0));
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t c = 0; c < C; ++c) y[(r / group) * C + c] += xd[r * C + c];
  }
  const bool track = tracking<T>({&x});
  auto out = make_output<T>({G, C}, std::move(y), track, "group_sum_rows");
  if (track) {
    record(out, [x, out, R, C, group]() mutable {
      const auto g = out.grad();
      auto gx = x.grad_mut();
      for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t c = 0; c < C; ++c) gx[r * C + c] += g[(r / group) * C + c];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " cannot become " + shape_str(shape));
  }
  const auto xd = x.data();
  const bool track = tracking<T>({&x});
  auto out = make_output<T>(std::move(shape), std::vector<T>(xd.begin(), xd.end()), track, "reshape");
  if (track) {
    record(out, [x, out]() mutable {
      const auto g = out.grad();
      auto gx = x.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> indices) {
  const std::size_t S = x.rows(), H = x.cols();
  if (indices.empty()) throw DimensionError("gather_rows: empty index list");
  for (const std::size_t i : indices) {
    if (i >= S) {
      throw IndexError("gather_rows: index " + std::to_string(i) + " out of range for " +
                       std::to_string(S) + " rows");
    }
  }
  const auto xd = x.data();
  std::vector<T> y(indices.size() * H);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(indices[r] * H), H, y.begin() + static_cast<std::ptrdiff_t>(r * H));
  }
  const bool track = tracking<T>({&x});
  auto out = make_output<T>({indices.size(), H}, std::move(y), track, "gather_rows");
  if (track) {
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    record(out, [x, out, idx = std::move(idx), H]() mutable {
      const auto g = out.grad();
      auto gx = x.grad_mut();
      for (std::size_t r = 0; r < idx.size(); ++r) {
        for (std::size_t c = 0; c < H; ++c) gx[idx[r] * H + c] += g[r * H + c];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t R = parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != R) {
      throw DimensionError("concat_cols: all inputs must be 2-D with " + std::to_string(R) + " rows");
    }
    total += p.dim(1);
  }
  std::vector<T> y(R * total);
  std::size_t off = 0;
  bool track = false;
  for (const auto& p : parts) {
    const std::size_t C = p.dim(1);
    const auto pd = p.data();
    for (std::size_t r = 0; r < R; ++r) {
      std::copy_n(pd.begin() + static_cast<std::ptrdiff_t>(r * C), C,
                  y.begin() + static_cast<std::ptrdiff_t>(r * total + off));
    }
    off += C;
    track = track || tracking<T>({&p});
  }
  auto out = make_output<T>({R, total}, std::move(y), track, "concat_cols");
  if (track) {
    std::vector<Tensor<T>> inputs(parts.begin(), parts.end());
    record(out, [inputs, out, R, total]() mutable {
      const auto g = out.grad();
      std::size_t off = 0;
      for (auto& p : inputs) {
        const std::size_t C = p.dim(1);
        if (p.requires_grad()) {
          auto gp = p.grad_mut();
          for (std::size_t r = 0; r < R; ++r) {
            for (std::size_t c = 0; c < C; ++c) gp[r * C + c] += g[r * total + off + c];
          }
        }
        off += C;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> embed_tokens(const Tensor<T>& table, const Tensor<T>& overrides,
                       std::span<const std::int32_t> ids, std::size_t override_first) {
  require_rank2(table, "embed_tokens");
  require_rank2(overrides, "embed_tokens");
  const std::size_t V = table.dim(0), H = table.dim(1), n_over = overrides.dim(0);
  if (overrides.dim(1) != H) throw DimensionError("embed_tokens: override width mismatch");
  if (ids.empty()) throw DimensionError("embed_tokens: empty token list");
  const auto td = table.data();
  const auto od = overrides.data();
  std::vector<T> y(ids.size() * H);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const auto id = ids[r];
    if (id < 0 || static_cast<std::size_t>(id) >= V) {
      throw IndexError("embed_tokens: token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(V));
    }
    const std::size_t u = static_cast<std::size_t>(id);
    const bool over = u >= override_first && u < override_first + n_over;
    const T* src = over ? od.data() + (u - override_first) * H : td.data() + u * H;
    std::copy_n(src, H, y.begin() + static_cast<std::ptrdiff_t>(r * H));
  }
  const bool track = tracking<T>({&table, &overrides});
  auto out = make_output<T>({ids.size(), H}, std::move(y), track, "embed_tokens");
  if (track) {
    std::vector<std::int32_t> idv(ids.begin(), ids.end());
    record(out, [table, overrides, out, idv = std::move(idv), override_first, n_over, H]() mutable {
      const auto g = out.grad();
      for (std::size_t r = 0; r < idv.size(); ++r) {
        const std::size_t u = static_cast<std::size_t>(idv[r]);
        const bool over = u >= override_first && u < override_first + n_over;
        const Tensor<T>& dst = over ? overrides : table;
        if (!dst.requires_grad()) continue;
        const std::size_t row = over ? u - override_first : u;
        auto gd = dst.grad_mut();
        for (std::size_t c = 0; c < H; ++c) gd[row * H + c] += g[r * H + c];
      }
    });
  }
  return out;
}

// --- attention ------------------------------------------------------------

void AttentionLayout::add_group(std::size_t length,
                                std::shared_ptr<const std::vector<std::uint8_t>> mask) {
  if (length == 0) throw DimensionError("attention group must be non-empty");
  if (mask && mask->size() != length * length) {
    throw DimensionError("attention mask size does not match group length " + std::to_string(length));
  }
  kernels::AttentionGroup g;
  g.offset = total_rows();
  g.length = length;
  g.mask = mask ? mask->data() : nullptr;
  groups.push_back(g);
  masks.push_back(std::move(mask));
}

std::size_t AttentionLayout::total_rows() const {
  return groups.empty() ? 0 : groups.back().offset + groups.back().length;
}

template <typename T>
Tensor<T> masked_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                           std::size_t heads, const AttentionLayout& layout) {
  require_rank2(q, "masked_attention");
  require_same_shape(q, k, "masked_attention");
  require_same_shape(q, v, "masked_attention");
  const std::size_t R = q.dim(0), W = q.dim(1);
  if (heads == 0 || W % heads != 0) {
    throw DimensionError("masked_attention: width " + std::to_string(W) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  if (layout.total_rows() != R) {
    throw DimensionError("masked_attention: layout covers " + std::to_string(layout.total_rows()) +
                         " rows, input has " + std::to_string(R));
  }
  auto probs = std::make_shared<std::vector<T>>(kernels::attention_probs_size(layout.groups, heads));
  std::vector<T> y(R * W);
  kernels::attention_forward<T>(layout.groups, heads, W, q.data().data(), k.data().data(),
                                v.data().data(), y.data(), probs->data());
  const bool track = tracking<T>({&q, &k, &v});
  auto out = make_output<T>({R, W}, std::move(y), track, "masked_attention");
  if (track) {
    record(out, [q, k, v, out, probs, layout, heads, W]() mutable {
      T* dq = q.requires_grad() ? q.grad_mut().data() : nullptr;
      T* dk = k.requires_grad() ? k.grad_mut().data() : nullptr;
      T* dv = v.requires_grad() ? v.grad_mut().data() : nullptr;
      kernels::attention_backward<T>(layout.groups, heads, W, q.data().data(), k.data().data(),
                                     v.data().data(), probs->data(), out.grad().data(), dq, dk, dv);
    });
  }
  return out;
}

template <typename T>
Tensor<T> attention_pool(const Tensor<T>& query, const Tensor<T>& keys, const Tensor<T>& values,
                         std::size_t heads, std::span<const std::size_t> group_lengths,
                         std::vector<T>* weights) {
  require_rank2(keys, "attention_pool");
  require_same_shape(keys, values, "attention_pool");
  const std::size_t R = keys.dim(0), W = keys.dim(1);
  if (query.numel() != W) throw DimensionError("attention_pool: query width mismatch");
  if (heads == 0 || W % heads != 0) {
    throw DimensionError("attention_pool: width " + std::to_string(W) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  const std::size_t total = std::accumulate(group_lengths.begin(), group_lengths.end(), std::size_t{0});
  if (total != R || group_lengths.empty()) {
    throw DimensionError("attention_pool: group lengths do not cover the " + std::to_string(R) + " rows");
  }
  const std::size_t G = group_lengths.size(), hd = W / heads;
  const T sc = T(1) / std::sqrt(T(hd));
  const auto qd = query.data();
  const auto kd = keys.data();
  const auto vd = values.data();
  auto probs = std::make_shared<std::vector<T>>(heads * R);
  std::vector<T> y(G * W, T(0));
  std::vector<std::size_t> offsets(G + 1, 0);
  for (std::size_t g = 0; g < G; ++g) offsets[g + 1] = offsets[g] + group_lengths[g];
  for (std::size_t g = 0; g < G; ++g) {
    const std::size_t L = group_lengths[g], off = offsets[g];
    for (std::size_t h = 0; h < heads; ++h) {
      T* p = probs->data() + heads * off + h * L;
      for (std::size_t j = 0; j < L; ++j) {
        T dot = T(0);
        for (std::size_t d = 0; d < hd; ++d) dot += qd[h * hd + d] * kd[(off + j) * W + h * hd + d];
        p[j] = dot * sc;
      }
      const T m = *std::max_element(p, p + L);
      T s = T(0);
      for (std::size_t j = 0; j < L; ++j) {
        p[j] = std::exp(p[j] - m);
        s += p[j];
      }
      for (std::size_t j = 0; j < L; ++j) p[j] /= s;
      for (std::size_t j = 0; j < L; ++j) {
        for (std::size_t d = 0; d < hd; ++d) y[g * W + h * hd + d] += p[j] * vd[(off + j) * W + h * hd + d];
      }
    }
  }
  if (weights) *weights = *probs;
  const bool track = tracking<T>({&query, &keys, &values});
  auto out = make_output<T>({G, W}, std::move(y), track, "attention_pool");
  if (track) {
    record(out, [query, keys, values, out, probs, offsets, heads, hd, W, sc]() mutable {
      const auto g = out.grad();
      const auto qd = query.data();
      const auto kd = keys.data();
      const auto vd = values.data();
      T* dq = query.requires_grad() ? query.grad_mut().data() : nullptr;
      T* dk = keys.requires_grad() ? keys.grad_mut().data() : nullptr;
      T* dv = values.requires_grad() ? values.grad_mut().data() : nullptr;
      std::vector<T> dp;
      for (std::size_t gi = 0; gi + 1 < offsets.size(); ++gi) {
        const std::size_t off = offsets[gi], L = offsets[gi + 1] - off;
        dp.assign(L, T(0));
        for (std::size_t h = 0; h < heads; ++h) {
          const T* p = probs->data() + heads * off + h * L;
          const T* go = g.data() + gi * W + h * hd;
          T row_dot = T(0);
          for (std::size_t j = 0; j < L; ++j) {
            T acc = T(0);
            for (std::size_t d = 0; d < hd; ++d) acc += go[d] * vd[(off + j) * W + h * hd + d];
            dp[j] = acc;
            row_dot += p[j] * acc;
          }
          for (std::size_t j = 0; j < L; ++j) {
            const T ds = p[j] * (dp[j] - row_dot) * sc;
            const std::size_t rj = (off + j) * W + h * hd;
            for (std::size_t d = 0; d < hd; ++d) {
              if (dq) dq[h * hd + d] += ds * kd[rj + d];
              if (dk) dk[rj + d] += ds * qd[h * hd + d];
              if (dv) dv[rj + d] += p[j] * go[d];
            }
          }
        }
      }
    });
  }
  return out;
}

#define CAMP_INSTANTIATE_OPS(T)                                                                   \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> transpose(const Tensor<T>&);                                                 \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> scale(const Tensor<T>&, T);                                                  \
  template Tensor<T> mul_scalar(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> exp(const Tensor<T>&);                                                       \
  template Tensor<T> gelu(const Tensor<T>&);                                                      \
  template Tensor<T> softmax(const Tensor<T>&);                                                   \
  template Tensor<T> logsumexp_rows(const Tensor<T>&);                                            \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);         \
  template Tensor<T> l2_normalize(const Tensor<T>&, T);                                           \
  template Tensor<T> sum(const Tensor<T>&);                                                       \
  template Tensor<T> mean(const Tensor<T>&);                                                      \
  template Tensor<T> diag(const Tensor<T>&);                                                      \
  template Tensor<T> group_sum_rows(const Tensor<T>&, std::size_t);                               \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                            \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);                 \
  template Tensor<T> concat_cols(std::span<const Tensor<T>>);                                     \
  template Tensor<T> embed_tokens(const Tensor<T>&, const Tensor<T>&,                             \
                                  std::span<const std::int32_t>, std::size_t);                    \
  template Tensor<T> masked_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                      std::size_t, const AttentionLayout&);                       \
  template Tensor<T> attention_pool(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                    std::size_t, std::span<const std::size_t>, std::vector<T>*);

CAMP_INSTANTIATE_OPS(float)
CAMP_INSTANTIATE_OPS(double)

}  // namespace camp
