#pragma once

// Reference implementations used only by the test suites. Each one takes a
// different route from the library code it checks: explicit index loops
// instead of rearrangements, per-element dot products instead of matmul,
// and an event-queue replay of the two agents instead of the simulator's
// recurrences.

#include <cmath>
#include <cstdint>
#include <queue>
#include <tuple>
#include <vector>

#include "flowaccel/attention.hpp"
#include "flowaccel/pipeline.hpp"
#include "flowaccel/tensor.hpp"

namespace oracle {

using flowaccel::Tensor;

inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a(i, p) * b(p, j);
      out(i, j) = acc;
    }
  return out;
}

// Element (b, s*T + t, c) -> (b*S + s, t, c), written as one flat index map.
inline Tensor rearrange_forward(const Tensor& x, std::size_t B, std::size_t S,
                                std::size_t T, std::size_t C) {
  Tensor out({B * S, T, C});
  for (std::size_t idx = 0; idx < x.size(); ++idx) {
    const std::size_t c = idx % C;
    const std::size_t row = (idx / C) % (S * T);
    const std::size_t b = idx / (C * S * T);
    const std::size_t s = row / T, t = row % T;
    out[((b * S + s) * T + t) * C + c] = x[idx];
  }
  return out;
}

// Merge computed directly in the [B, S*T, C] layout.
inline Tensor merge_loop(const Tensor& x, std::size_t B, std::size_t S,
                         std::size_t T, std::size_t C) {
  const std::size_t Tm = (T + 1) / 2;
  Tensor out({B, S * Tm, C});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t i = 0; i < Tm; ++i)
        for (std::size_t c = 0; c < C; ++c) {
          auto at = [&](std::size_t t) { return x[(b * S * T + s * T + t) * C + c]; };
          const double v = (2 * i + 1 < T) ? (at(2 * i) + at(2 * i + 1)) / 2.0 : at(2 * i);
          out[(b * S * Tm + s * Tm + i) * C + c] = v;
        }
  return out;
}

inline Tensor unmerge_loop(const Tensor& m, std::size_t B, std::size_t S,
                           std::size_t T, std::size_t C) {
  const std::size_t Tm = (T + 1) / 2;
  Tensor out({B, S * T, C});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < C; ++c)
          out[(b * S * T + s * T + t) * C + c] = m[(b * S * Tm + s * Tm + t / 2) * C + c];
  return out;
}

// Dense multi-head attention for one batch element, one query row at a time.
inline Tensor dense_attention(const Tensor& xq, const Tensor& xkv,
                              const flowaccel::AttentionWeights& w) {
  const std::size_t n = xq.extent(0), m = xkv.extent(0);
  const std::size_t C = w.wq.extent(1), Ckv = w.wk.extent(0);
  const std::size_t dh = C / w.heads;
  auto proj = [](const Tensor& x, std::size_t row, const Tensor& W, std::size_t col) {
    double acc = 0.0;
    for (std::size_t p = 0; p < W.extent(0); ++p) acc += x(row, p) * W(p, col);
    return acc;
  };
  std::vector<double> q(n * C), k(m * C), v(m * C);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < C; ++c) q[i * C + c] = proj(xq, i, w.wq, c);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t c = 0; c < C; ++c) {
      k[j * C + c] = proj(xkv, j, w.wk, c);
      v[j * C + c] = proj(xkv, j, w.wv, c);
    }
  (void)Ckv;
  Tensor concat({n, C});
  for (std::size_t h = 0; h < w.heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> logits(m);
      double mx = -INFINITY;
      for (std::size_t j = 0; j < m; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dh; ++c) acc += q[i * C + h * dh + c] * k[j * C + h * dh + c];
        logits[j] = acc / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, logits[j]);
      }
      double z = 0.0;
      for (auto& l : logits) z += (l = std::exp(l - mx));
      for (std::size_t c = 0; c < dh; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) acc += logits[j] / z * v[j * C + h * dh + c];
        concat(i, h * dh + c) = acc;
      }
    }
  }
  Tensor out({n, C});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < C; ++c) out(i, c) = proj(concat, i, w.wo, c);
  return out;
}

// Multiply-add flop counts of one attention pass, from first principles.
struct AttentionCost {
  std::uint64_t scores, weighted_sum;
};
inline AttentionCost attention_cost(std::uint64_t batch, std::uint64_t n,
                                    std::uint64_t m, std::uint64_t C) {
  return {batch * 2 * n * m * C, batch * 2 * n * m * C};
}

enum class Mode { sequential, overlapped };

// Event-queue replay of a loader agent and an executor agent.
//
// Sequential mode: nothing overlaps; the loader works only while the
// executor is idle and no loaded block is waiting. Overlapped mode: the
// loader takes one of `prefetch_depth` slots before each load; the executor
// returns it when it begins executing that block. Iteration it+1 opens when
// iteration it's last exec ends. The first `retained` blocks are loaded only
// in iteration 1. Returns the time of the last completion.
inline double replay_makespan(const flowaccel::PipelineConfig& cfg, Mode mode,
                              std::size_t retained = 0) {
  const std::size_t b = cfg.blocks.size();
  const std::size_t iters = cfg.iterations;
  struct Pending {
    double time;
    std::uint64_t seq;
    int agent;  // 0 loader finished, 1 executor finished
  };
  auto later = [](const Pending& a, const Pending& c) {
    return std::tie(a.time, a.seq) > std::tie(c.time, c.seq);
  };
  std::priority_queue<Pending, std::vector<Pending>, decltype(later)> queue(later);
  std::uint64_t seq = 0;

  auto needs_load = [&](std::size_t it, std::size_t i) {
    return mode == Mode::sequential || it == 1 || i >= retained;
  };

  std::size_t open_iteration = 1;
  std::size_t exec_it = 1, exec_i = 0;  // next job for the executor
  std::size_t load_it = 1, load_i = 0;  // next candidate job for the loader
  bool loader_busy = false, exec_busy = false;
  std::size_t loading_block = 0;
  std::vector<std::vector<bool>> loaded(iters + 1, std::vector<bool>(b, false));
  std::size_t slots = mode == Mode::sequential ? 1 : cfg.prefetch_depth;
  std::size_t waiting = 0;
  double now = 0.0, last = 0.0;
  bool done = false;

  auto skip_unneeded_loads = [&] {
    while (load_it <= iters && !needs_load(load_it, load_i)) {
      if (++load_i == b) { load_i = 0; ++load_it; }
    }
  };

  while (!done) {
    bool progressed = true;
    while (progressed) {
      progressed = false;
      skip_unneeded_loads();
      if (!loader_busy && load_it <= iters && load_it <= open_iteration && slots > 0 &&
          (mode == Mode::overlapped || (!exec_busy && waiting == 0))) {
        --slots;
        loader_busy = true;
        loading_block = load_i;
        queue.push({now + cfg.blocks[load_i].load_latency, seq++, 0});
        progressed = true;
      }
      if (!exec_busy && exec_it <= iters && exec_it <= open_iteration) {
        const bool need = needs_load(exec_it, exec_i);
        if (!need || loaded[exec_it][exec_i]) {
          if (need) { --waiting; ++slots; }
          exec_busy = true;
          queue.push({now + cfg.blocks[exec_i].exec_latency * cfg.exec_factor(exec_it),
                      seq++, 1});
          progressed = true;
        }
      }
    }
    if (queue.empty()) break;
    const Pending ev = queue.top();
    queue.pop();
    now = ev.time;
    last = std::max(last, now);
    if (ev.agent == 0) {
      loader_busy = false;
      loaded[load_it][loading_block] = true;
      ++waiting;
      if (++load_i == b) { load_i = 0; ++load_it; }
    } else {
      exec_busy = false;
      if (++exec_i == b) {
        exec_i = 0;
        ++exec_it;
        open_iteration = exec_it;
      }
      done = exec_it > iters;
    }
  }
  return last;
}

}  // namespace oracle
