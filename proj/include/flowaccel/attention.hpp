#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <tuple>

#include "flowaccel/rng.hpp"
#include "flowaccel/tensor.hpp"

namespace flowaccel {

/// Video tokens in the [B, S*T, C] layout (S patches, T frames per patch).
struct TokenTensor {
  Tensor data;
  std::size_t B = 1, S = 1, T = 1, C = 1;

  TokenTensor() = default;
  TokenTensor(Tensor d, std::size_t b, std::size_t s, std::size_t t,
              std::size_t c)
      : data(std::move(d)), B(b), S(s), T(t), C(c) {
    if (data.shape() != Shape{B, S * T, C}) {
      throw std::invalid_argument("token tensor: data shape " +
                                  shape_string(data.shape()) +
                                  " inconsistent with B,S,T,C = " +
                                  shape_string({B, S, T, C}));
    }
  }

  std::size_t tokens() const noexcept { return S * T; }
};

/// Multiply-add pairs counted as two flops. Softmax, scaling and residual
/// additions are not counted.
struct FlopReport {
  std::uint64_t projections = 0;   // Q, K, V projections
  std::uint64_t scores = 0;        // Q K^T
  std::uint64_t weighted_sum = 0;  // softmax(QK^T) V
  std::uint64_t output = 0;        // output projection

  std::uint64_t total() const noexcept {
    return projections + scores + weighted_sum + output;
  }
  FlopReport& operator+=(const FlopReport& o) noexcept {
    projections += o.projections;
    scores += o.scores;
    weighted_sum += o.weighted_sum;
    output += o.output;
    return *this;
  }
  bool operator==(const FlopReport&) const = default;
};

class FlopCounter {
 public:
  FlopReport& counts() noexcept { return counts_; }
  const FlopReport& counts() const noexcept { return counts_; }
  std::uint64_t accumulated() const noexcept { return counts_.total(); }
  void reset() noexcept { counts_ = {}; }

 private:
  FlopReport counts_;
};

inline FlopReport flop_report(const FlopCounter& counter) {
  return counter.counts();
}

/// Projection weights for one attention layer. Queries come from tokens with
/// `model_dim` channels; keys and values from inputs with `kv_dim` channels
/// (equal to model_dim for self-attention).
struct AttentionWeights {
  std::size_t heads = 1;
  std::uint64_t seed = 0;
  Tensor wq, wk, wv, wo;  // [C,C], [Ckv,C], [Ckv,C], [C,C]

  std::size_t model_dim() const { return wq.extent(0); }
  std::size_t kv_dim() const { return wk.extent(0); }

  /// Entries uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  static AttentionWeights random(std::uint64_t seed, std::size_t model_dim,
                                 std::size_t heads, std::size_t kv_dim = 0) {
    if (kv_dim == 0) kv_dim = model_dim;
    if (heads == 0 || model_dim % heads != 0) {
      throw std::invalid_argument("attention: channels " +
                                  std::to_string(model_dim) +
                                  " not divisible by heads " +
                                  std::to_string(heads));
    }
    Rng rng(seed);
    const double aq = 1.0 / std::sqrt(static_cast<double>(model_dim));
    const double akv = 1.0 / std::sqrt(static_cast<double>(kv_dim));
    AttentionWeights w;
    w.heads = heads;
    w.seed = seed;
    w.wq = rng.uniform_tensor({model_dim, model_dim}, -aq, aq);
    w.wk = rng.uniform_tensor({kv_dim, model_dim}, -akv, akv);
    w.wv = rng.uniform_tensor({kv_dim, model_dim}, -akv, akv);
    w.wo = rng.uniform_tensor({model_dim, model_dim}, -aq, aq);
    return w;
  }
};

namespace detail {

inline Tensor batch_rows(const Tensor& x, std::size_t b) {
  const std::size_t n = x.extent(1), c = x.extent(2);
  std::vector<double> rows(x.data().begin() + b * n * c,
                           x.data().begin() + (b + 1) * n * c);
  return Tensor({n, c}, std::move(rows));
}

inline Tensor column_slice(const Tensor& x, std::size_t begin,
                           std::size_t width) {
  Tensor out({x.extent(0), width});
  for (std::size_t i = 0; i < x.extent(0); ++i)
    for (std::size_t j = 0; j < width; ++j) out(i, j) = x(i, begin + j);
  return out;
}

// Scaled dot-product multi-head attention for one batch element:
// queries [n, C], keys/values source [m, Ckv] -> [n, C].
inline Tensor attend(const Tensor& queries, const Tensor& kv_source,
                     const AttentionWeights& w, FlopCounter& counter) {
  auto& f = counter.counts();
  const Tensor q = matmul(queries, w.wq, &f.projections);
  const Tensor k = matmul(kv_source, w.wk, &f.projections);
  const Tensor v = matmul(kv_source, w.wv, &f.projections);

  const std::size_t n = queries.extent(0);
  const std::size_t C = w.model_dim();
  const std::size_t dh = C / w.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor concat({n, C});
  for (std::size_t h = 0; h < w.heads; ++h) {
    const Tensor qh = column_slice(q, h * dh, dh);
    const Tensor kh = column_slice(k, h * dh, dh);
    const Tensor vh = column_slice(v, h * dh, dh);
    const Tensor probs =
        softmax_rows(scale(matmul(qh, transpose(kh), &f.scores), inv_sqrt));
    const Tensor oh = matmul(probs, vh, &f.weighted_sum);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < dh; ++j) concat(i, h * dh + j) = oh(i, j);
  }
  return matmul(concat, w.wo, &f.output);
}

inline void check_weights(const TokenTensor& tokens, const AttentionWeights& w,
                          std::size_t kv_channels) {
  if (w.model_dim() != tokens.C) {
    throw std::invalid_argument("attention: weights expect " +
                                std::to_string(w.model_dim()) +
                                " channels, tokens have " +
                                std::to_string(tokens.C));
  }
  if (w.kv_dim() != kv_channels) {
    throw std::invalid_argument("attention: key/value weights expect " +
                                std::to_string(w.kv_dim()) +
                                " channels, source has " +
                                std::to_string(kv_channels));
  }
}

inline void write_batch(Tensor& out, const Tensor& rows, std::size_t b) {
  const std::size_t stride = rows.size();
  std::copy(rows.data().begin(), rows.data().end(),
            out.data().begin() + b * stride);
}

}  // namespace detail

/// Multi-head self-attention over the S*T token axis of each batch element.
inline TokenTensor self_attention(const TokenTensor& tokens,
                                  const AttentionWeights& w,
                                  FlopCounter& counter) {
  detail::check_weights(tokens, w, tokens.C);
  Tensor out(tokens.data.shape());
  for (std::size_t b = 0; b < tokens.B; ++b) {
    const Tensor x = detail::batch_rows(tokens.data, b);
    detail::write_batch(out, detail::attend(x, x, w, counter), b);
  }
  return TokenTensor(std::move(out), tokens.B, tokens.S, tokens.T, tokens.C);
}

/// Queries from tokens, keys and values from `context` [B, M, C_ctx].
inline TokenTensor cross_attention(const TokenTensor& tokens,
                                   const Tensor& context,
                                   const AttentionWeights& w,
                                   FlopCounter& counter) {
  if (context.rank() != 3 || context.extent(0) != tokens.B) {
    throw std::invalid_argument("cross_attention: context shape " +
                                shape_string(context.shape()) +
                                " incompatible with batch " +
                                std::to_string(tokens.B));
  }
  detail::check_weights(tokens, w, context.extent(2));
  Tensor out(tokens.data.shape());
  for (std::size_t b = 0; b < tokens.B; ++b) {
    const Tensor x = detail::batch_rows(tokens.data, b);
    const Tensor ctx = detail::batch_rows(context, b);
    detail::write_batch(out, detail::attend(x, ctx, w, counter), b);
  }
  return TokenTensor(std::move(out), tokens.B, tokens.S, tokens.T, tokens.C);
}

/// Averages temporally adjacent frame pairs (2i, 2i+1) of every patch. With
/// odd T the last frame is carried over unchanged; T' = ceil(T/2).
inline TokenTensor tdtm_merge(const TokenTensor& tokens) {
  const auto [B, S, T, C] =
      std::tuple{tokens.B, tokens.S, tokens.T, tokens.C};
  const std::size_t Tm = (T + 1) / 2;
  const Tensor frames = rearrange_b_st_c_to_bs_t_c(tokens.data, B, S, T, C);
  Tensor merged({B * S, Tm, C});
  for (std::size_t r = 0; r < B * S; ++r) {
    for (std::size_t i = 0; i < Tm; ++i) {
      const std::size_t a = (r * T + 2 * i) * C;
      const std::size_t o = (r * Tm + i) * C;
      if (2 * i + 1 < T) {
        const std::size_t b = a + C;
        for (std::size_t c = 0; c < C; ++c) {
          merged[o + c] = 0.5 * (frames[a + c] + frames[b + c]);
        }
      } else {
        for (std::size_t c = 0; c < C; ++c) merged[o + c] = frames[a + c];
      }
    }
  }
  return TokenTensor(rearrange_bs_t_c_to_b_st_c(merged, B, S, Tm, C), B, S, Tm,
                     C);
}

/// Duplicates merged frame i into frames 2i and 2i+1 (only 2i for an odd
/// trailing frame), restoring `original_T` frames.
inline TokenTensor tdtm_unmerge(const TokenTensor& merged,
                                std::size_t original_T) {
  if (merged.T != (original_T + 1) / 2) {
    throw std::invalid_argument(
        "tdtm_unmerge: " + std::to_string(merged.T) +
        " merged frames cannot restore " + std::to_string(original_T));
  }
  const auto [B, S, Tm, C] = std::tuple{merged.B, merged.S, merged.T, merged.C};
  const std::size_t T = original_T;
  const Tensor frames = rearrange_b_st_c_to_bs_t_c(merged.data, B, S, Tm, C);
  Tensor out({B * S, T, C});
  for (std::size_t r = 0; r < B * S; ++r) {
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t from = (r * Tm + t / 2) * C;
      const std::size_t to = (r * T + t) * C;
      for (std::size_t c = 0; c < C; ++c) out[to + c] = frames[from + c];
    }
  }
  return TokenTensor(rearrange_bs_t_c_to_b_st_c(out, B, S, T, C), B, S, T, C);
}

/// Merge tokens only during the first `merge_steps` of `total_steps`
/// denoising steps.
struct TdtmPolicy {
  std::size_t merge_steps = 0;
  std::size_t total_steps = 1;

  void validate() const {
    if (merge_steps > total_steps) {
      throw std::invalid_argument("tdtm policy: merge_steps " +
                                  std::to_string(merge_steps) +
                                  " exceeds total_steps " +
                                  std::to_string(total_steps));
    }
  }
  bool merges(std::size_t step_index) const {
    if (step_index < 1 || step_index > total_steps) {
      throw std::out_of_range("tdtm policy: step " + std::to_string(step_index) +
                              " outside [1, " + std::to_string(total_steps) +
                              "]");
    }
    return step_index <= merge_steps;
  }
};

/// Self-attention when `context` is null, cross-attention otherwise. On
/// merged steps the tokens are merged before and unmerged after attention;
/// the context is never merged.
inline TokenTensor attention_with_tdtm(const TokenTensor& tokens,
                                       const Tensor* context,
                                       const AttentionWeights& w,
                                       const TdtmPolicy& policy,
                                       std::size_t step_index,
                                       FlopCounter& counter) {
  policy.validate();
  auto run = [&](const TokenTensor& x) {
    return context ? cross_attention(x, *context, w, counter)
                   : self_attention(x, w, counter);
  };
  if (!policy.merges(step_index)) return run(tokens);
  return tdtm_unmerge(run(tdtm_merge(tokens)), tokens.T);
}

}  // namespace flowaccel
