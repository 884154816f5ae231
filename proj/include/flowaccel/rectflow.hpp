#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "flowaccel/rng.hpp"
#include "flowaccel/tensor.hpp"

namespace flowaccel {

/// Descending sample times t_1 > ... > t_K in (0, 1] with step sizes
/// dt_k = t_k - t_{k+1} and dt_K = t_K, so the steps sum to t_1.
/// Storage is 0-based: steps()[k-1] is t_k.
class TimeGrid {
 public:
  /// t_k = 1 - (k-1)/K.
  static TimeGrid uniform(std::size_t K) {
    if (K == 0) throw std::invalid_argument("time grid: K must be >= 1");
    std::vector<double> steps(K);
    for (std::size_t k = 0; k < K; ++k) {
      steps[k] = 1.0 - static_cast<double>(k) / static_cast<double>(K);
    }
    return TimeGrid(std::move(steps));
  }

  static TimeGrid explicit_steps(std::vector<double> steps) {
    if (steps.empty()) throw std::invalid_argument("time grid: empty list");
    for (std::size_t k = 0; k < steps.size(); ++k) {
      const double t = steps[k];
      if (!(t > 0.0 && t <= 1.0)) {
        throw std::invalid_argument("time grid: t_" + std::to_string(k + 1) +
                                    " = " + std::to_string(t) +
                                    " outside (0, 1]");
      }
      if (k > 0 && !(t < steps[k - 1])) {
        throw std::invalid_argument("time grid: not strictly decreasing at t_" +
                                    std::to_string(k + 1));
      }
    }
    return TimeGrid(std::move(steps));
  }

  std::size_t size() const noexcept { return steps_.size(); }
  const std::vector<double>& steps() const noexcept { return steps_; }
  const std::vector<double>& dts() const noexcept { return dts_; }

  /// 1-based accessors matching step numbering.
  double t(std::size_t k) const { return steps_.at(k - 1); }
  double dt(std::size_t k) const { return dts_.at(k - 1); }

 private:
  explicit TimeGrid(std::vector<double> steps) : steps_(std::move(steps)) {
    const std::size_t K = steps_.size();
    dts_.resize(K);
    for (std::size_t k = 0; k + 1 < K; ++k) dts_[k] = steps_[k] - steps_[k + 1];
    dts_[K - 1] = steps_[K - 1];
  }

  std::vector<double> steps_;
  std::vector<double> dts_;
};

/// Drift provider v(P, t). Implementations must be deterministic; the
/// evaluation counter is atomic so a field may be shared across threads.
class VelocityField {
 public:
  virtual ~VelocityField() = default;

  Tensor evaluate(const Tensor& position, double t) const {
    count_.fetch_add(1, std::memory_order_relaxed);
    Tensor v = drift(position, t);
    if (v.shape() != position.shape()) {
      throw std::invalid_argument("velocity field returned shape " +
                                  shape_string(v.shape()) + " for input " +
                                  shape_string(position.shape()));
    }
    return v;
  }

  std::uint64_t eval_count() const noexcept {
    return count_.load(std::memory_order_relaxed);
  }
  void reset_eval_count() noexcept { count_.store(0); }

 protected:
  virtual Tensor drift(const Tensor& position, double t) const = 0;

 private:
  mutable std::atomic<std::uint64_t> count_{0};
};

struct LplOff {};

/// n ordinary Euler steps, then one leap from step n+1 with step size t_{n+1}.
struct LplFixed {
  std::size_t n = 0;
};

/// Leap once `patience` consecutive improvements of the drift cosine series
/// fall below `tolerance`, counting only improvements measured from step
/// ceil(min_fraction * K) onwards.
struct LplDynamic {
  double min_fraction = 0.5;
  double tolerance = 1e-4;
  std::size_t patience = 3;
};

using LplConfig = std::variant<LplOff, LplFixed, LplDynamic>;

inline void validate(const LplDynamic& cfg) {
  if (!(cfg.min_fraction > 0.0 && cfg.min_fraction <= 1.0)) {
    throw std::invalid_argument("lpl: min_fraction must be in (0, 1]");
  }
  if (!(cfg.tolerance > 0.0)) {
    throw std::invalid_argument("lpl: tolerance must be > 0");
  }
  if (cfg.patience < 1) throw std::invalid_argument("lpl: patience must be >= 1");
}

inline void validate(const LplConfig& cfg, std::size_t K) {
  if (const auto* f = std::get_if<LplFixed>(&cfg)) {
    if (f->n >= K) {
      throw std::invalid_argument("lpl: fixed n = " + std::to_string(f->n) +
                                  " must be < K = " + std::to_string(K));
    }
  } else if (const auto* d = std::get_if<LplDynamic>(&cfg)) {
    validate(*d);
  }
}

/// ceil(min_fraction * K), with products within 1e-9 of an integer snapped
/// to it (0.1 * 30 must give 3, not 4).
inline std::size_t min_steps(double min_fraction, std::size_t K) {
  const double x = min_fraction * static_cast<double>(K);
  const double r = std::round(x);
  const double m = std::abs(x - r) < 1e-9 ? r : std::ceil(x);
  return static_cast<std::size_t>(m);
}

/// True iff step k may be the leap step: k >= ceil(min_fraction * K) and the
/// last `patience` deltas series[i] - series[i-1] are each below tolerance.
inline bool dynamic_leap_trigger(std::span<const double> cosine_series,
                                 std::size_t k, std::size_t K,
                                 const LplDynamic& cfg) {
  if (k < min_steps(cfg.min_fraction, K)) return false;
  if (cosine_series.size() < cfg.patience + 1) return false;
  const std::size_t last = cosine_series.size() - 1;
  for (std::size_t i = 0; i < cfg.patience; ++i) {
    const double delta = cosine_series[last - i] - cosine_series[last - i - 1];
    if (!(delta < cfg.tolerance)) return false;
  }
  return true;
}

struct TrajectoryRecord {
  std::vector<Tensor> positions;      // z_0 .. z_final
  std::vector<Tensor> drifts;         // v_1 .. v_steps
  std::vector<double> cosine_series;  // cos(v_k, v_{k-1}) for k >= 2
  std::size_t steps_executed = 0;
  std::optional<std::size_t> leap_step;  // 1-based
};

struct SampleResult {
  Tensor endpoint;
  TrajectoryRecord record;
};

namespace detail {

// Portion of the cosine series the dynamic trigger may inspect before step
// k: entries c_s with s >= max(2, m - 1), so the first usable improvement is
// the one measured at step m = ceil(min_fraction * K).  series[j] holds
// c_{j+2}.
inline std::span<const double> monitored_window(
    const std::vector<double>& series, std::size_t m) {
  const std::size_t first_step = std::max<std::size_t>(2, m > 0 ? m - 1 : 0);
  const std::size_t begin = first_step - 2;
  if (begin >= series.size()) return {};
  return std::span<const double>(series).subspan(begin);
}

}  // namespace detail

/// Euler integration with optional Linear Proportional Leap.
///
/// Step k evaluates v at the current state z_{k-1} and time t_k. A leap at
/// step k applies that drift with step size t_k, which equals the sum of all
/// remaining dt_i, and ends sampling.
inline SampleResult lpl_sample(const VelocityField& field, const Tensor& z0,
                               const TimeGrid& grid, const LplConfig& cfg) {
  const std::size_t K = grid.size();
  validate(cfg, K);

  const auto* fixed = std::get_if<LplFixed>(&cfg);
  const auto* dynamic = std::get_if<LplDynamic>(&cfg);
  const std::size_t m = dynamic ? min_steps(dynamic->min_fraction, K) : 0;

  TrajectoryRecord rec;
  rec.positions.reserve(K + 1);
  rec.drifts.reserve(K);
  rec.positions.push_back(z0);
  Tensor z = z0;

  for (std::size_t k = 1; k <= K; ++k) {
    bool leap = false;
    if (fixed) {
      leap = (k == fixed->n + 1);
    } else if (dynamic && k > 1) {
      leap = dynamic_leap_trigger(detail::monitored_window(rec.cosine_series, m),
                                  k, K, *dynamic);
    }

    Tensor v = field.evaluate(z, grid.t(k));
    if (!rec.drifts.empty()) {
      rec.cosine_series.push_back(cosine_similarity(v, rec.drifts.back()));
    }
    const double step = leap ? grid.t(k) : grid.dt(k);
    z = axpy(z, step, v);
    rec.drifts.push_back(std::move(v));
    rec.positions.push_back(z);
    if (leap) {
      rec.leap_step = k;
      break;
    }
  }
  rec.steps_executed = rec.drifts.size();
  return {std::move(z), std::move(rec)};
}

/// Plain Euler over all K steps.
inline SampleResult euler_sample(const VelocityField& field, const Tensor& z0,
                                 const TimeGrid& grid) {
  return lpl_sample(field, z0, grid, LplOff{});
}

/// t * p1 + (1 - t) * p0.
inline Tensor interpolate_position(const Tensor& p0, const Tensor& p1,
                                   double t) {
  require_same_shape(p0, p1, "interpolate_position");
  if (!(t >= 0.0 && t <= 1.0)) {
    throw std::invalid_argument("interpolate_position: t outside [0, 1]");
  }
  Tensor out(p0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = t * p1[i] + (1.0 - t) * p0[i];
  }
  return out;
}

struct ForwardNoiseConfig {
  std::vector<double> betas;  // beta_1 .. beta_K, each in (0, 1)
};

inline void validate(const ForwardNoiseConfig& cfg) {
  for (std::size_t i = 0; i < cfg.betas.size(); ++i) {
    const double b = cfg.betas[i];
    if (!(b > 0.0 && b < 1.0)) {
      throw std::invalid_argument("forward noise: beta_" + std::to_string(i + 1) +
                                  " outside (0, 1)");
    }
  }
}

/// x_k = sqrt(1 - beta_k) x_{k-1} + sqrt(beta_k) eps_k, applied k times with
/// fresh standard normal draws from `rng`.
inline Tensor forward_noise(const Tensor& x0, const ForwardNoiseConfig& cfg,
                            std::size_t k, Rng& rng) {
  validate(cfg);
  if (k > cfg.betas.size()) {
    throw std::out_of_range("forward noise: k = " + std::to_string(k) +
                            " exceeds K = " + std::to_string(cfg.betas.size()));
  }
  Tensor x = x0;
  for (std::size_t i = 0; i < k; ++i) {
    const double keep = std::sqrt(1.0 - cfg.betas[i]);
    const double mix = std::sqrt(cfg.betas[i]);
    for (auto& v : x.data()) v = keep * v + mix * rng.normal();
  }
  return x;
}

}  // namespace flowaccel
