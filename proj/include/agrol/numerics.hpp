#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "agrol/errors.hpp"

namespace agrol {

// Non-deducing span parameter, so mutable spans convert implicitly.
template <class T>
using ConstSpan = std::type_identity_t<std::span<const T>>;

// Dense row-major 2-D array. Storage is T (float in production, double in
// gradient checks); reductions accumulate in double.
template <typename T>
class Tensor2 {
 public:
  using value_type = T;

  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor2(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("Tensor2: data length does not match rows*cols");
    }
  }

  static Tensor2 zeros(std::size_t rows, std::size_t cols) {
    return Tensor2(rows, cols);
  }

  [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
  [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  [[nodiscard]] Tensor2<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) {
      return static_cast<U>(v);
    });
    return Tensor2<U>(rows_, cols_, std::move(out));
  }

  [[nodiscard]] bool same_shape(const Tensor2& o) const noexcept {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  // Exact (bitwise for finite values) equality of shape and contents.
  bool operator==(const Tensor2& o) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Tensor = Tensor2<float>;

template <typename T>
using RowMajorMatrix =
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<RowMajorMatrix<T>> as_matrix(Tensor2<T>& t) {
  return {t.data(), static_cast<Eigen::Index>(t.rows()),
          static_cast<Eigen::Index>(t.cols())};
}

template <typename T>
Eigen::Map<const RowMajorMatrix<T>> as_matrix(const Tensor2<T>& t) {
  return {t.data(), static_cast<Eigen::Index>(t.rows()),
          static_cast<Eigen::Index>(t.cols())};
}

// A learnable tensor with its gradient buffer.
template <typename T>
struct Param {
  std::string name;
  Tensor2<T> value;
  Tensor2<T> grad;

  Param() = default;
  Param(std::string n, std::size_t rows, std::size_t cols)
      : name(std::move(n)), value(rows, cols), grad(rows, cols) {}

  void zero_grad() { grad.fill(T(0)); }
};

namespace detail {

inline void require(bool ok, const char* what) {
  if (!ok) {
    throw DimensionError(what);
  }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise helpers

template <typename T>
void add_inplace(Tensor2<T>& dst, const Tensor2<T>& src) {
  detail::require(dst.same_shape(src), "add_inplace: shape mismatch");
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    d[i] += s[i];
  }
}

// dst[r, :] += v for every row.
template <typename T>
void add_row_broadcast(Tensor2<T>& dst, ConstSpan<T> v) {
  detail::require(v.size() == dst.cols(), "add_row_broadcast: width mismatch");
  for (std::size_t r = 0; r < dst.rows(); ++r) {
    T* row = dst.data() + r * dst.cols();
    for (std::size_t c = 0; c < dst.cols(); ++c) {
      row[c] += v[c];
    }
  }
}

// Accumulates the column sums of src into out (length = src.cols()).
template <typename T>
void accumulate_column_sum(const Tensor2<T>& src, std::span<T> out) {
  detail::require(out.size() == src.cols(), "column_sum: width mismatch");
  for (std::size_t c = 0; c < src.cols(); ++c) {
    double acc = 0.0;
    for (std::size_t r = 0; r < src.rows(); ++r) {
      acc += static_cast<double>(src(r, c));
    }
    out[c] += static_cast<T>(acc);
  }
}

// Accumulates the row sums of src into out (length = src.rows()).
template <typename T>
void accumulate_row_sum(const Tensor2<T>& src, std::span<T> out) {
  detail::require(out.size() == src.rows(), "row_sum: height mismatch");
  for (std::size_t r = 0; r < src.rows(); ++r) {
    double acc = 0.0;
    for (const T v : src.row(r)) {
      acc += static_cast<double>(v);
    }
    out[r] += static_cast<T>(acc);
  }
}

// ---------------------------------------------------------------------------
// Feature-axis linear map: out = x * W + b.

template <typename T>
Tensor2<T> linear_forward(const Tensor2<T>& x, const Tensor2<T>& weight,
                          ConstSpan<T> bias) {
  detail::require(x.cols() == weight.rows(),
                  "linear_forward: x.cols != W.rows");
  detail::require(bias.size() == weight.cols(),
                  "linear_forward: bias length != W.cols");
  Tensor2<T> out(x.rows(), weight.cols());
  as_matrix(out).noalias() = as_matrix(x) * as_matrix(weight);
  add_row_broadcast(out, bias);
  return out;
}

template <typename T>
struct LinearGrads {
  Tensor2<T> d_input;
  Tensor2<T> d_weight;
  Tensor2<T> d_bias; // 1 x out
};

// Accumulates into d_weight / d_bias and returns the input gradient.
template <typename T>
Tensor2<T> linear_backward_into(const Tensor2<T>& x, const Tensor2<T>& weight,
                                const Tensor2<T>& d_out, Tensor2<T>& d_weight,
                                std::span<T> d_bias) {
  detail::require(x.cols() == weight.rows() && d_out.cols() == weight.cols() &&
                      d_out.rows() == x.rows(),
                  "linear_backward: shape mismatch");
  detail::require(d_weight.same_shape(weight) && d_bias.size() == weight.cols(),
                  "linear_backward: gradient buffer shape mismatch");
  as_matrix(d_weight).noalias() += as_matrix(x).transpose() * as_matrix(d_out);
  accumulate_column_sum(d_out, d_bias);
  Tensor2<T> d_x(x.rows(), x.cols());
  as_matrix(d_x).noalias() = as_matrix(d_out) * as_matrix(weight).transpose();
  return d_x;
}

// Parameter gradients only, for layers whose input needs no gradient.
template <typename T>
void linear_param_grads_into(const Tensor2<T>& x, const Tensor2<T>& d_out,
                             Tensor2<T>& d_weight, std::span<T> d_bias) {
  detail::require(d_out.rows() == x.rows() && d_weight.rows() == x.cols() &&
                      d_weight.cols() == d_out.cols() &&
                      d_bias.size() == d_out.cols(),
                  "linear_param_grads: shape mismatch");
  as_matrix(d_weight).noalias() += as_matrix(x).transpose() * as_matrix(d_out);
  accumulate_column_sum(d_out, d_bias);
}

template <typename T>
LinearGrads<T> linear_backward(const Tensor2<T>& x, const Tensor2<T>& weight,
                               const Tensor2<T>& d_out) {
  LinearGrads<T> g;
  g.d_weight = Tensor2<T>(weight.rows(), weight.cols());
  g.d_bias = Tensor2<T>(1, weight.cols());
  g.d_input = linear_backward_into(x, weight, d_out, g.d_weight, g.d_bias.span());
  return g;
}

// ---------------------------------------------------------------------------
// Frame-axis linear map (a kernel-size-1 convolution whose channels are the
// frames): out = W * h + b, W is L x L, b has one entry per output frame.

template <typename T>
Tensor2<T> temporal_forward(const Tensor2<T>& h, const Tensor2<T>& weight,
                            ConstSpan<T> bias) {
  detail::require(weight.cols() == h.rows(),
                  "temporal_forward: W.cols != h.rows");
  detail::require(bias.size() == weight.rows(),
                  "temporal_forward: bias length != W.rows");
  Tensor2<T> out(weight.rows(), h.cols());
  as_matrix(out).noalias() = as_matrix(weight) * as_matrix(h);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (T& v : out.row(r)) {
      v += bias[r];
    }
  }
  return out;
}

template <typename T>
Tensor2<T> temporal_backward_into(const Tensor2<T>& h, const Tensor2<T>& weight,
                                  const Tensor2<T>& d_out, Tensor2<T>& d_weight,
                                  std::span<T> d_bias) {
  detail::require(weight.cols() == h.rows() && d_out.rows() == weight.rows() &&
                      d_out.cols() == h.cols(),
                  "temporal_backward: shape mismatch");
  detail::require(d_weight.same_shape(weight) && d_bias.size() == weight.rows(),
                  "temporal_backward: gradient buffer shape mismatch");
  as_matrix(d_weight).noalias() += as_matrix(d_out) * as_matrix(h).transpose();
  accumulate_row_sum(d_out, d_bias);
  Tensor2<T> d_h(h.rows(), h.cols());
  as_matrix(d_h).noalias() = as_matrix(weight).transpose() * as_matrix(d_out);
  return d_h;
}

// ---------------------------------------------------------------------------
// Layer normalization over the last axis.

inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
struct LayerNormCache {
  Tensor2<T> normalized;    // (x - mean) * rstd
  std::vector<double> mean; // per row
  std::vector<double> var;  // per row, biased
};

template <typename T>
Tensor2<T> layernorm_forward(const Tensor2<T>& x, ConstSpan<T> gamma,
                             ConstSpan<T> beta, double eps = kLayerNormEps,
                             LayerNormCache<T>* cache = nullptr) {
  const std::size_t d = x.cols();
  detail::require(d >= 1, "layernorm_forward: D must be >= 1");
  detail::require(gamma.size() == d && beta.size() == d,
                  "layernorm_forward: gamma/beta length != D");
  Tensor2<T> out(x.rows(), d);
  if (cache) {
    cache->normalized = Tensor2<T>(x.rows(), d);
    cache->mean.assign(x.rows(), 0.0);
    cache->var.assign(x.rows(), 0.0);
  }
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r);
    double mean = 0.0;
    for (const T v : row) {
      mean += static_cast<double>(v);
    }
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (const T v : row) {
      const double c = static_cast<double>(v) - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + eps);
    auto o = out.row(r);
    for (std::size_t c = 0; c < d; ++c) {
      const double n = (static_cast<double>(row[c]) - mean) * rstd;
      if (cache) {
        cache->normalized(r, c) = static_cast<T>(n);
      }
      o[c] = static_cast<T>(n * static_cast<double>(gamma[c]) +
                            static_cast<double>(beta[c]));
    }
    if (cache) {
      cache->mean[r] = mean;
      cache->var[r] = var;
    }
  }
  return out;
}

// Accumulates d_gamma / d_beta and returns dX.
template <typename T>
Tensor2<T> layernorm_backward_into(const LayerNormCache<T>& cache,
                                   ConstSpan<T> gamma,
                                   const Tensor2<T>& d_out, std::span<T> d_gamma,
                                   std::span<T> d_beta,
                                   double eps = kLayerNormEps) {
  const Tensor2<T>& xhat = cache.normalized;
  const std::size_t d = xhat.cols();
  detail::require(d_out.same_shape(xhat), "layernorm_backward: shape mismatch");
  detail::require(gamma.size() == d && d_gamma.size() == d && d_beta.size() == d,
                  "layernorm_backward: parameter length mismatch");
  for (std::size_t c = 0; c < d; ++c) {
    double g = 0.0;
    double b = 0.0;
    for (std::size_t r = 0; r < xhat.rows(); ++r) {
      g += static_cast<double>(d_out(r, c)) * static_cast<double>(xhat(r, c));
      b += static_cast<double>(d_out(r, c));
    }
    d_gamma[c] += static_cast<T>(g);
    d_beta[c] += static_cast<T>(b);
  }
  Tensor2<T> d_x(xhat.rows(), d);
  const double inv_d = 1.0 / static_cast<double>(d);
  for (std::size_t r = 0; r < xhat.rows(); ++r) {
    const double rstd = 1.0 / std::sqrt(cache.var[r] + eps);
    double sum_dn = 0.0;
    double sum_dn_n = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double dn =
          static_cast<double>(d_out(r, c)) * static_cast<double>(gamma[c]);
      sum_dn += dn;
      sum_dn_n += dn * static_cast<double>(xhat(r, c));
    }
    for (std::size_t c = 0; c < d; ++c) {
      const double dn =
          static_cast<double>(d_out(r, c)) * static_cast<double>(gamma[c]);
      d_x(r, c) = static_cast<T>(
          rstd * (dn - inv_d * sum_dn -
                  static_cast<double>(xhat(r, c)) * inv_d * sum_dn_n));
    }
  }
  return d_x;
}

template <typename T>
struct LayerNormGrads {
  Tensor2<T> d_input;
  Tensor2<T> d_gamma; // 1 x D
  Tensor2<T> d_beta;  // 1 x D
};

template <typename T>
LayerNormGrads<T> layernorm_backward(const LayerNormCache<T>& cache,
                                     ConstSpan<T> gamma,
                                     const Tensor2<T>& d_out,
                                     double eps = kLayerNormEps) {
  LayerNormGrads<T> g;
  g.d_gamma = Tensor2<T>(1, gamma.size());
  g.d_beta = Tensor2<T>(1, gamma.size());
  g.d_input = layernorm_backward_into(cache, gamma, d_out, g.d_gamma.span(),
                                      g.d_beta.span(), eps);
  return g;
}

// ---------------------------------------------------------------------------
// SiLU: x * sigmoid(x).

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
T silu(T x) {
  return x * sigmoid(x);
}

template <typename T>
T silu_grad(T x) {
  const T s = sigmoid(x);
  return s + x * s * (T(1) - s);
}

template <typename T>
Tensor2<T> silu(const Tensor2<T>& x) {
  Tensor2<T> y(x.rows(), x.cols());
  const T* in = x.data();
  T* out = y.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = silu(in[i]);
  }
  return y;
}

template <typename T>
Tensor2<T> silu_backward(const Tensor2<T>& x, const Tensor2<T>& d_out) {
  detail::require(x.same_shape(d_out), "silu_backward: shape mismatch");
  Tensor2<T> d_x(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    d_x.data()[i] = d_out.data()[i] * silu_grad(x.data()[i]);
  }
  return d_x;
}

} // namespace agrol
