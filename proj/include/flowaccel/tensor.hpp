#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace flowaccel {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

/// Dense row-major array of doubles. Extents are strictly positive and the
/// element count always equals the product of the extents.
class Tensor {
 public:
  Tensor() : shape_{1}, data_(1, 0.0) {}

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_volume(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (shape_volume(shape_) != data_.size()) {
      throw std::invalid_argument("tensor: shape " + shape_string(shape_) +
                                  " does not match " +
                                  std::to_string(data_.size()) + " elements");
    }
  }

  /// 1-D tensor from a list of values.
  static Tensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  double operator()(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }
  double& operator()(std::size_t i, std::size_t j) {
    return data_[i * shape_[1] + j];
  }

  /// Same data viewed under a different shape of equal volume.
  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  bool operator==(const Tensor&) const = default;

 private:
  static void check_shape(const Shape& shape) {
    if (shape.empty()) throw std::invalid_argument("tensor: empty shape");
    for (auto e : shape) {
      if (e == 0) {
        throw std::invalid_argument("tensor: zero extent in " +
                                    shape_string(shape));
      }
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b,
                               const char* what) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

inline Tensor scale(const Tensor& a, double s) {
  Tensor out = a;
  for (auto& v : out.data()) v *= s;
  return out;
}

/// Returns y + alpha * x.
inline Tensor axpy(const Tensor& y, double alpha, const Tensor& x) {
  require_same_shape(y, x, "axpy");
  Tensor out = y;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += alpha * x[i];
  return out;
}

inline double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm(const Tensor& a) { return std::sqrt(dot(a, a)); }

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

inline double mean_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mean_abs_diff");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

inline bool all_finite(const Tensor& a) {
  return std::all_of(a.data().begin(), a.data().end(),
                     [](double v) { return std::isfinite(v); });
}

/// <a,b> / (|a| |b|) over the flattened data, clamped to [-1, 1].
inline double cosine_similarity(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "cosine_similarity");
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) {
    throw std::domain_error("cosine_similarity: zero-norm operand");
  }
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

/// [m,k] x [k,n] -> [m,n]. Adds 2*m*k*n to `flops` when given.
inline Tensor matmul(const Tensor& a, const Tensor& b,
                     std::uint64_t* flops = nullptr) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw std::invalid_argument("matmul: cannot multiply " +
                                shape_string(a.shape()) + " by " +
                                shape_string(b.shape()));
  }
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor out({m, n});
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x[i * k + p];
      const double* yrow = y.data() + p * n;
      double* orow = o.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += xv * yrow[j];
    }
  }
  if (flops) *flops += 2ull * m * k * n;
  return out;
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("transpose: rank != 2");
  const std::size_t m = a.extent(0), n = a.extent(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = a(i, j);
  return out;
}

/// Row-wise softmax, stabilized by subtracting each row's max.
inline Tensor softmax_rows(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("softmax_rows: rank != 2");
  const std::size_t m = a.extent(0), n = a.extent(1);
  Tensor out = a;
  for (std::size_t i = 0; i < m; ++i) {
    double mx = out(i, 0);
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, out(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out(i, j) = std::exp(out(i, j) - mx);
      sum += out(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) out(i, j) /= sum;
  }
  return out;
}

// Token interleave of the [B, S*T, C] layout: S-major, T-minor, i.e. the T
// frames of patch s occupy rows s*T .. s*T+T-1. Both rearrangements below
// derive their index maps from this one function.
inline std::size_t token_row(std::size_t s, std::size_t t, std::size_t T) {
  return s * T + t;
}

/// [B, S*T, C] -> [B*S, T, C].
inline Tensor rearrange_b_st_c_to_bs_t_c(const Tensor& x, std::size_t B,
                                         std::size_t S, std::size_t T,
                                         std::size_t C) {
  if (x.shape() != Shape{B, S * T, C}) {
    throw std::invalid_argument("rearrange: expected " +
                                shape_string({B, S * T, C}) + ", got " +
                                shape_string(x.shape()));
  }
  Tensor out({B * S, T, C});
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t from = (b * S * T + token_row(s, t, T)) * C;
        const std::size_t to = ((b * S + s) * T + t) * C;
        std::copy_n(src.begin() + from, C, dst.begin() + to);
      }
  return out;
}

/// [B*S, T, C] -> [B, S*T, C]; exact inverse of rearrange_b_st_c_to_bs_t_c.
inline Tensor rearrange_bs_t_c_to_b_st_c(const Tensor& x, std::size_t B,
                                         std::size_t S, std::size_t T,
                                         std::size_t C) {
  if (x.shape() != Shape{B * S, T, C}) {
    throw std::invalid_argument("rearrange: expected " +
                                shape_string({B * S, T, C}) + ", got " +
                                shape_string(x.shape()));
  }
  Tensor out({B, S * T, C});
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t from = ((b * S + s) * T + t) * C;
        const std::size_t to = (b * S * T + token_row(s, t, T)) * C;
        std::copy_n(src.begin() + from, C, dst.begin() + to);
      }
  return out;
}

}  // namespace flowaccel
