#pragma once

#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <variant>
#include <vector>

#include "flowaccel/attention.hpp"
#include "flowaccel/realrun.hpp"
#include "flowaccel/rectflow.hpp"
#include "flowaccel/rng.hpp"
#include "flowaccel/tensor.hpp"

namespace flowaccel {

inline constexpr std::size_t kFineGridSteps = 3000;

namespace spec {

struct Constant {
  Tensor c;
};

/// v = (A - P) / t: every trajectory is a straight line ending at A.
struct Funnel {
  Tensor target;
};

/// v = 2*pi*omega * R P, where R rotates the leading two coordinates by 90
/// degrees. omega is in revolutions per unit time.
struct Rotational {
  double omega = 1.0;
};

/// Funnel toward A plus 2*pi*omega * R (P - A) while t > t_star; the pure
/// funnel for t <= t_star.
struct CurvedThenStraight {
  double t_star = 0.5;
  double omega = 2.0;
  Tensor target;
};

struct ToyStdit {
  std::uint64_t seed = 0;
  std::size_t depth = 2;
  std::size_t batch = 1;
  std::size_t patches = 4;
  std::size_t frames = 8;
  std::size_t channels = 8;
  std::size_t heads = 2;
  std::size_t context_tokens = 4;
  bool cross_attention = true;

  Shape token_shape() const { return {batch, patches * frames, channels}; }
};

}  // namespace spec

using FieldSpec = std::variant<spec::Constant, spec::Funnel, spec::Rotational,
                               spec::CurvedThenStraight, spec::ToyStdit>;

inline const char* kind_name(const FieldSpec& s) {
  constexpr const char* names[] = {"constant", "funnel", "rotational",
                                   "curved_then_straight", "toy_stdit"};
  return names[s.index()];
}

namespace detail {

// 90-degree rotation of coordinates (0, 1); zero elsewhere.
inline Tensor rotate_leading(const Tensor& p) {
  if (p.size() < 2) {
    throw std::invalid_argument("rotational field needs at least 2 coordinates");
  }
  Tensor out(p.shape());
  out[0] = -p[1];
  out[1] = p[0];
  return out;
}

inline Tensor funnel_drift(const Tensor& target, const Tensor& p, double t) {
  require_same_shape(target, p, "funnel field");
  Tensor v = sub(target, p);
  for (auto& x : v.data()) x /= t;
  return v;
}

}  // namespace detail

class ConstantField final : public VelocityField {
 public:
  explicit ConstantField(Tensor c) : c_(std::move(c)) {}

 protected:
  Tensor drift(const Tensor& p, double) const override {
    require_same_shape(c_, p, "constant field");
    return c_;
  }

 private:
  Tensor c_;
};

class FunnelField final : public VelocityField {
 public:
  explicit FunnelField(Tensor target) : target_(std::move(target)) {}

 protected:
  Tensor drift(const Tensor& p, double t) const override {
    return detail::funnel_drift(target_, p, t);
  }

 private:
  Tensor target_;
};

class RotationalField final : public VelocityField {
 public:
  explicit RotationalField(double omega) : rate_(2.0 * std::numbers::pi * omega) {}

 protected:
  Tensor drift(const Tensor& p, double) const override {
    return scale(detail::rotate_leading(p), rate_);
  }

 private:
  double rate_;
};

class CurvedThenStraightField final : public VelocityField {
 public:
  explicit CurvedThenStraightField(spec::CurvedThenStraight s)
      : s_(std::move(s)), rate_(2.0 * std::numbers::pi * s_.omega) {}

 protected:
  Tensor drift(const Tensor& p, double t) const override {
    Tensor v = detail::funnel_drift(s_.target, p, t);
    if (t <= s_.t_star) return v;
    return axpy(v, rate_, detail::rotate_leading(sub(p, s_.target)));
  }

 private:
  spec::CurvedThenStraight s_;
  double rate_;
};

/// Weights of one toy transformer block.
struct ToyBlockWeights {
  Tensor time_embedding;  // [C]
  AttentionWeights self_attn;
  std::optional<AttentionWeights> cross_attn;
};

inline std::uint64_t toy_block_seed(std::uint64_t seed, std::size_t block) {
  return seed * 0x9E3779B97F4A7C15ull + 0x632BE59BD9B4E019ull * (block + 1);
}

inline ToyBlockWeights make_toy_block(const spec::ToyStdit& s, std::size_t block) {
  const std::uint64_t base = toy_block_seed(s.seed, block);
  Rng rng(base);
  const double a = 1.0 / std::sqrt(static_cast<double>(s.channels));
  ToyBlockWeights w;
  w.time_embedding = rng.uniform_tensor({s.channels}, -a, a);
  w.self_attn = AttentionWeights::random(base + 1, s.channels, s.heads);
  if (s.cross_attention) {
    w.cross_attn = AttentionWeights::random(base + 2, s.channels, s.heads);
  }
  return w;
}

/// Text-embedding stand-in [B, M, C], fixed by the seed.
inline Tensor make_toy_context(const spec::ToyStdit& s) {
  Rng rng(s.seed ^ 0xC0FFEEull);
  return rng.normal_tensor({s.batch, s.context_tokens, s.channels});
}

/// h = x + t * e;  h += SelfAttn(h);  h += CrossAttn(h, ctx).
inline Tensor apply_toy_block(const spec::ToyStdit& s, const ToyBlockWeights& w,
                              const Tensor& context, const Tensor& x, double t,
                              const TdtmPolicy& policy, std::size_t step,
                              FlopCounter& self_counter,
                              FlopCounter& cross_counter) {
  const std::size_t C = s.channels;
  Tensor h = x;
  for (std::size_t i = 0; i < h.size(); ++i) h[i] += t * w.time_embedding[i % C];
  TokenTensor tok(std::move(h), s.batch, s.patches, s.frames, C);
  tok.data = add(tok.data, attention_with_tdtm(tok, nullptr, w.self_attn, policy,
                                               step, self_counter)
                               .data);
  if (w.cross_attn) {
    tok.data = add(tok.data, attention_with_tdtm(tok, &context, *w.cross_attn,
                                                 policy, step, cross_counter)
                                 .data);
  }
  return std::move(tok.data);
}

inline void validate(const spec::ToyStdit& s) {
  if (s.depth == 0 || s.batch == 0 || s.patches == 0 || s.frames == 0 ||
      s.channels == 0 || s.context_tokens == 0) {
    throw std::invalid_argument("toy_stdit: all extents must be positive");
  }
  if (s.heads == 0 || s.channels % s.heads != 0) {
    throw std::invalid_argument("toy_stdit: channels must be divisible by heads");
  }
}

/// Stack of `depth` attention blocks over [B, S*T, C] latents. The drift is
/// the stack output minus its input.
///
/// With a merge policy attached, the n-th evaluation since the last
/// reset_eval_count() runs as denoising step n, so such an instance serves one
/// trajectory at a time. FLOPs of all evaluations accumulate in flops().
class ToyStditField final : public VelocityField {
 public:
  explicit ToyStditField(spec::ToyStdit s, TdtmPolicy policy = {0, 1})
      : s_(std::move(s)), policy_(policy) {
    validate(s_);
    policy_.validate();
    context_ = make_toy_context(s_);
    for (std::size_t i = 0; i < s_.depth; ++i) blocks_.push_back(make_toy_block(s_, i));
  }

  const spec::ToyStdit& spec() const noexcept { return s_; }
  const TdtmPolicy& policy() const noexcept { return policy_; }
  void set_policy(TdtmPolicy p) {
    p.validate();
    policy_ = p;
  }
  const Tensor& context() const noexcept { return context_; }
  const std::vector<ToyBlockWeights>& blocks() const noexcept { return blocks_; }

  FlopReport flops() const {
    std::lock_guard lock(mu_);
    FlopReport all = self_flops_;
    all += cross_flops_;
    return all;
  }
  FlopReport self_flops() const {
    std::lock_guard lock(mu_);
    return self_flops_;
  }
  FlopReport cross_flops() const {
    std::lock_guard lock(mu_);
    return cross_flops_;
  }
  void reset() {
    reset_eval_count();
    std::lock_guard lock(mu_);
    self_flops_ = {};
    cross_flops_ = {};
  }

  /// Full stack at an explicit denoising step.
  Tensor forward(const Tensor& x, double t, std::size_t step,
                 FlopCounter& counter) const {
    Tensor h = x;
    for (const auto& w : blocks_) {
      h = apply_toy_block(s_, w, context_, h, t, policy_, step, counter, counter);
    }
    return h;
  }

 protected:
  Tensor drift(const Tensor& p, double t) const override {
    if (p.shape() != s_.token_shape()) {
      throw std::invalid_argument("toy_stdit: expected latent " +
                                  shape_string(s_.token_shape()) + ", got " +
                                  shape_string(p.shape()));
    }
    const std::size_t step =
        policy_.merge_steps == 0 ? 1 : static_cast<std::size_t>(eval_count());
    const TdtmPolicy effective =
        policy_.merge_steps == 0 ? TdtmPolicy{0, 1} : policy_;
    FlopCounter self_local, cross_local;
    Tensor h = p;
    for (const auto& w : blocks_) {
      h = apply_toy_block(s_, w, context_, h, t, effective, step, self_local,
                          cross_local);
    }
    {
      std::lock_guard lock(mu_);
      self_flops_ += self_local.counts();
      cross_flops_ += cross_local.counts();
    }
    return sub(h, p);
  }

 private:
  spec::ToyStdit s_;
  TdtmPolicy policy_;
  Tensor context_;
  std::vector<ToyBlockWeights> blocks_;
  mutable std::mutex mu_;
  mutable FlopReport self_flops_, cross_flops_;
};

/// One toy block as a loadable unit: load() materializes its weights from
/// the seed, exec() applies the block at a fixed time without merging.
class ToyBlockUnit final : public BlockUnit {
 public:
  ToyBlockUnit(spec::ToyStdit s, std::size_t index, double t = 1.0)
      : s_(std::move(s)), index_(index), t_(t), context_(make_toy_context(s_)) {
    validate(s_);
  }

  void load() override { weights_ = make_toy_block(s_, index_); }
  Tensor exec(const Tensor& x) override {
    if (!weights_) {
      throw std::logic_error("toy block " + std::to_string(index_) +
                             " executed while not loaded");
    }
    FlopCounter counter;
    return apply_toy_block(s_, *weights_, context_, x, t_, TdtmPolicy{0, 1}, 1,
                           counter, counter);
  }
  void unload() override { weights_.reset(); }
  bool loaded() const noexcept { return weights_.has_value(); }

 private:
  spec::ToyStdit s_;
  std::size_t index_;
  double t_;
  Tensor context_;
  std::optional<ToyBlockWeights> weights_;
};

inline void validate(const FieldSpec& fs) {
  std::visit(
      [](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, spec::Rotational>) {
          if (!std::isfinite(s.omega)) throw std::invalid_argument("rotational: omega not finite");
        } else if constexpr (std::is_same_v<S, spec::CurvedThenStraight>) {
          if (!(s.t_star > 0.0 && s.t_star < 1.0)) {
            throw std::invalid_argument("curved_then_straight: t_star must be in (0, 1)");
          }
          if (s.target.size() < 2) {
            throw std::invalid_argument("curved_then_straight: target needs >= 2 coordinates");
          }
        } else if constexpr (std::is_same_v<S, spec::ToyStdit>) {
          validate(s);
        }
      },
      fs);
}

inline std::unique_ptr<VelocityField> build_field(const FieldSpec& fs) {
  validate(fs);
  return std::visit(
      [](const auto& s) -> std::unique_ptr<VelocityField> {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, spec::Constant>) {
          return std::make_unique<ConstantField>(s.c);
        } else if constexpr (std::is_same_v<S, spec::Funnel>) {
          return std::make_unique<FunnelField>(s.target);
        } else if constexpr (std::is_same_v<S, spec::Rotational>) {
          return std::make_unique<RotationalField>(s.omega);
        } else if constexpr (std::is_same_v<S, spec::CurvedThenStraight>) {
          return std::make_unique<CurvedThenStraightField>(s);
        } else {
          return std::make_unique<ToyStditField>(s);
        }
      },
      fs);
}

/// Exact endpoint where one exists in closed form; nullopt otherwise, in
/// which case callers integrate on a kFineGridSteps uniform grid instead.
inline std::optional<Tensor> analytic_endpoint(const FieldSpec& fs,
                                               const Tensor& z0,
                                               double t1 = 1.0) {
  if (const auto* c = std::get_if<spec::Constant>(&fs)) return axpy(z0, t1, c->c);
  if (const auto* f = std::get_if<spec::Funnel>(&fs)) return f->target;
  return std::nullopt;
}

/// Analytic endpoint if available, else the fine-grid Euler endpoint.
inline Tensor reference_endpoint(const FieldSpec& fs, const Tensor& z0) {
  if (auto e = analytic_endpoint(fs, z0)) return *e;
  auto field = build_field(fs);
  return euler_sample(*field, z0, TimeGrid::uniform(kFineGridSteps)).endpoint;
}

}  // namespace flowaccel
