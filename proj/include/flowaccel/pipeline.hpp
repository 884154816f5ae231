#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace flowaccel {

struct BlockSpec {
  std::size_t id = 0;
  double load_latency = 1.0;  // seconds
  double exec_latency = 1.0;  // seconds
  std::uint64_t mem_size = 1;  // bytes
};

struct PipelineConfig {
  std::vector<BlockSpec> blocks;
  std::size_t iterations = 1;
  std::uint64_t memory_budget = 0;
  std::uint64_t exec_headroom = 0;
  std::size_t prefetch_depth = 1;
  double alpha = 0.0;
  // Optional per-iteration multiplier on every block's exec latency
  // (e.g. cheaper merged-token steps). Empty means 1.0 throughout.
  std::vector<double> exec_scale;

  double exec_factor(std::size_t iteration) const {
    return exec_scale.empty() ? 1.0 : exec_scale.at(iteration - 1);
  }
};

/// Plain uniform configuration: b identical blocks with ample memory.
inline PipelineConfig uniform_pipeline(std::size_t b, double load, double exec,
                                       std::size_t iterations = 1) {
  PipelineConfig cfg;
  for (std::size_t i = 0; i < b; ++i) cfg.blocks.push_back({i, load, exec, 1});
  cfg.iterations = iterations;
  cfg.memory_budget = b + 1;
  return cfg;
}

inline void validate(const PipelineConfig& cfg) {
  if (cfg.blocks.empty()) throw std::invalid_argument("pipeline: no blocks");
  if (cfg.iterations < 1) {
    throw std::invalid_argument("pipeline: iterations must be >= 1");
  }
  if (cfg.prefetch_depth < 1) {
    throw std::invalid_argument("pipeline: prefetch_depth must be >= 1");
  }
  if (!(cfg.alpha >= 0.0)) throw std::invalid_argument("pipeline: alpha < 0");
  std::uint64_t largest = 0;
  for (const auto& b : cfg.blocks) {
    if (!(b.load_latency > 0.0) || !(b.exec_latency > 0.0) || b.mem_size == 0) {
      throw std::invalid_argument("pipeline: block " + std::to_string(b.id) +
                                  " needs positive latencies and memory");
    }
    largest = std::max(largest, b.mem_size);
  }
  if (largest + cfg.exec_headroom > cfg.memory_budget) {
    throw std::invalid_argument(
        "pipeline: unexecutable, largest block (" + std::to_string(largest) +
        " B) plus headroom (" + std::to_string(cfg.exec_headroom) +
        " B) exceeds budget (" + std::to_string(cfg.memory_budget) + " B)");
  }
  if (!cfg.exec_scale.empty()) {
    if (cfg.exec_scale.size() != cfg.iterations) {
      throw std::invalid_argument("pipeline: exec_scale needs one entry per iteration");
    }
    for (double s : cfg.exec_scale) {
      if (!(s > 0.0)) throw std::invalid_argument("pipeline: exec_scale <= 0");
    }
  }
}

enum class EventKind { load_start, load_end, exec_start, exec_end, evict };

inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::load_start: return "load_start";
    case EventKind::load_end: return "load_end";
    case EventKind::exec_start: return "exec_start";
    case EventKind::exec_end: return "exec_end";
    case EventKind::evict: return "evict";
  }
  return "?";
}

inline EventKind event_kind_from_string(const std::string& s) {
  for (auto k : {EventKind::load_start, EventKind::load_end, EventKind::exec_start,
                 EventKind::exec_end, EventKind::evict}) {
    if (s == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown event kind '" + s + "'");
}

struct Event {
  std::size_t block_id = 0;
  std::size_t iteration = 1;  // 1-based
  EventKind kind = EventKind::load_start;
  double time = 0.0;
  bool operator==(const Event&) const = default;
};

struct Timeline {
  std::vector<Event> events;
  double makespan = 0.0;

  std::size_t count(EventKind kind, std::size_t iteration) const {
    return static_cast<std::size_t>(
        std::count_if(events.begin(), events.end(), [&](const Event& e) {
          return e.kind == kind && e.iteration == iteration;
        }));
  }

  /// Last event time of `iteration` minus the first.
  double iteration_span(std::size_t iteration) const {
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& e : events) {
      if (e.iteration != iteration) continue;
      lo = std::min(lo, e.time);
      hi = std::max(hi, e.time);
    }
    return hi >= lo ? hi - lo : 0.0;
  }
};

/// Blocks kept resident across iterations: always a prefix of the block
/// order, so d == retained_ids.size() and retained_ids == ids of blocks[0, d).
struct RetentionPlan {
  std::vector<std::size_t> retained_ids;
  std::size_t d() const noexcept { return retained_ids.size(); }

  static RetentionPlan prefix(const PipelineConfig& cfg, std::size_t d) {
    if (d > cfg.blocks.size()) {
      throw std::invalid_argument("retention: d exceeds block count");
    }
    RetentionPlan plan;
    for (std::size_t i = 0; i < d; ++i) plan.retained_ids.push_back(cfg.blocks[i].id);
    return plan;
  }
};

/// Bytes needed with the first d blocks resident plus room to run the
/// largest remaining block.
inline std::uint64_t retention_footprint(const PipelineConfig& cfg,
                                         std::size_t d) {
  std::uint64_t kept = 0, largest_rest = 0;
  for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
    if (i < d) kept += cfg.blocks[i].mem_size;
    else largest_rest = std::max(largest_rest, cfg.blocks[i].mem_size);
  }
  return kept + largest_rest + cfg.exec_headroom;
}

inline void validate(const RetentionPlan& plan, const PipelineConfig& cfg) {
  const std::size_t d = plan.d();
  if (d > cfg.blocks.size()) {
    throw std::invalid_argument("retention: more retained blocks than blocks");
  }
  for (std::size_t i = 0; i < d; ++i) {
    if (plan.retained_ids[i] != cfg.blocks[i].id) {
      throw std::invalid_argument("retention: retained ids must be a prefix of the block order");
    }
  }
  if (retention_footprint(cfg, d) > cfg.memory_budget) {
    throw std::invalid_argument("retention: d = " + std::to_string(d) +
                                " does not fit the memory budget");
  }
}

/// Largest prefix d whose footprint fits the budget; 0 if none does.
inline RetentionPlan choose_retention(const PipelineConfig& cfg) {
  validate(cfg);
  for (std::size_t d = cfg.blocks.size(); d > 0; --d) {
    if (retention_footprint(cfg, d) <= cfg.memory_budget) {
      return RetentionPlan::prefix(cfg, d);
    }
  }
  return {};
}

namespace detail {

inline void finish(Timeline& tl) {
  std::stable_sort(tl.events.begin(), tl.events.end(),
                   [](const Event& a, const Event& b) { return a.time < b.time; });
  tl.makespan = 0.0;
  for (const auto& e : tl.events) tl.makespan = std::max(tl.makespan, e.time);
}

// One loader and one executor. Each iteration is an independent invocation:
// its loads begin once the previous iteration's last exec has ended. Within
// an iteration, the j-th block that needs loading may start loading once
// the loader is free and the (j - prefetch_depth)-th loaded block has
// started executing (a handoff buffer of prefetch_depth slots). Blocks with
// index < retained skip their load from iteration 2 on and are never
// evicted.
inline Timeline overlapped(const PipelineConfig& cfg, std::size_t retained) {
  Timeline tl;
  const std::size_t b = cfg.blocks.size();
  const std::size_t p = cfg.prefetch_depth;
  double iteration_start = 0.0;
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    double loader_free = iteration_start;
    double exec_free = iteration_start;
    std::vector<double> loaded_exec_starts;
    for (std::size_t i = 0; i < b; ++i) {
      const BlockSpec& blk = cfg.blocks[i];
      const bool keep = i < retained;
      double ready = iteration_start;
      if (it == 1 || !keep) {
        const std::size_t j = loaded_exec_starts.size();
        const double gate = j >= p ? loaded_exec_starts[j - p] : iteration_start;
        const double start = std::max(loader_free, gate);
        ready = start + blk.load_latency;
        loader_free = ready;
        tl.events.push_back({blk.id, it, EventKind::load_start, start});
        tl.events.push_back({blk.id, it, EventKind::load_end, ready});
      }
      const double es = std::max(exec_free, ready);
      const double ee = es + blk.exec_latency * cfg.exec_factor(it);
      exec_free = ee;
      if (it == 1 || !keep) loaded_exec_starts.push_back(es);
      tl.events.push_back({blk.id, it, EventKind::exec_start, es});
      tl.events.push_back({blk.id, it, EventKind::exec_end, ee});
      if (!keep) tl.events.push_back({blk.id, it, EventKind::evict, ee});
    }
    iteration_start = exec_free;
  }
  finish(tl);
  return tl;
}

}  // namespace detail

/// Load then execute every block strictly serially, evicting after each exec.
inline Timeline simulate_sequential(const PipelineConfig& cfg) {
  validate(cfg);
  Timeline tl;
  double t = 0.0;
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    for (const auto& blk : cfg.blocks) {
      const double le = t + blk.load_latency;
      const double ee = le + blk.exec_latency * cfg.exec_factor(it);
      tl.events.push_back({blk.id, it, EventKind::load_start, t});
      tl.events.push_back({blk.id, it, EventKind::load_end, le});
      tl.events.push_back({blk.id, it, EventKind::exec_start, le});
      tl.events.push_back({blk.id, it, EventKind::exec_end, ee});
      tl.events.push_back({blk.id, it, EventKind::evict, ee});
      t = ee;
    }
  }
  detail::finish(tl);
  return tl;
}

/// Loading of block i+1 overlaps execution of block i.
inline Timeline simulate_concurrent(const PipelineConfig& cfg) {
  validate(cfg);
  return detail::overlapped(cfg, 0);
}

/// Concurrent schedule with the plan's prefix kept resident after iteration 1.
inline Timeline simulate_dynamic(const PipelineConfig& cfg,
                                 const RetentionPlan& plan) {
  validate(cfg);
  validate(plan, cfg);
  return detail::overlapped(cfg, plan.d());
}

/// Latency reduction of concurrent inference: b * min(l, e) - alpha.
inline double predict_reduction_ci(std::size_t b, double l, double e,
                                   double alpha) {
  return static_cast<double>(b) * std::min(l, e) - alpha;
}

/// With d resident blocks:
/// b * min(l, e) + d * max(0, l - e) - alpha * (1 - d / b).
inline double predict_reduction_dl(std::size_t b, double l, double e,
                                   double alpha, std::size_t d) {
  if (b == 0 || d > b) {
    throw std::invalid_argument("predict_reduction_dl: need 0 <= d <= b, b >= 1");
  }
  const double bd = static_cast<double>(b);
  const double dd = static_cast<double>(d);
  return bd * std::min(l, e) + dd * std::max(0.0, l - e) -
         alpha * (1.0 - dd / bd);
}

/// Ordering violations of a timeline; empty when legal.
inline std::vector<std::string> timeline_violations(const Timeline& tl) {
  std::vector<std::string> out;
  struct Job {
    double ls = NAN, le = NAN, es = NAN, ee = NAN;
    int execs = 0;
  };
  std::map<std::pair<std::size_t, std::size_t>, Job> jobs;
  std::vector<std::pair<double, double>> loads, execs;
  double latest = 0.0;
  for (const auto& e : tl.events) {
    auto& j = jobs[{e.block_id, e.iteration}];
    latest = std::max(latest, e.time);
    switch (e.kind) {
      case EventKind::load_start: j.ls = e.time; break;
      case EventKind::load_end: j.le = e.time; break;
      case EventKind::exec_start: j.es = e.time; ++j.execs; break;
      case EventKind::exec_end: j.ee = e.time; break;
      case EventKind::evict: break;
    }
  }
  for (const auto& [key, j] : jobs) {
    const std::string tag = "block " + std::to_string(key.first) + " iter " +
                            std::to_string(key.second);
    if (j.execs != 1) out.push_back(tag + ": executed " + std::to_string(j.execs) + " times");
    if (!std::isnan(j.ls)) {
      if (std::isnan(j.le) || j.le < j.ls) out.push_back(tag + ": load_end before load_start");
      else if (!(j.le <= j.es)) out.push_back(tag + ": exec_start before load_end");
      loads.emplace_back(j.ls, j.le);
    }
    if (!(j.es <= j.ee)) out.push_back(tag + ": exec_end before exec_start");
    execs.emplace_back(j.es, j.ee);
  }
  auto overlap_check = [&](std::vector<std::pair<double, double>>& iv,
                           const char* what) {
    std::sort(iv.begin(), iv.end());
    for (std::size_t i = 1; i < iv.size(); ++i) {
      if (iv[i].first < iv[i - 1].second) {
        out.push_back(std::string(what) + " intervals overlap at t=" +
                      std::to_string(iv[i].first));
      }
    }
  };
  overlap_check(loads, "load");
  overlap_check(execs, "exec");
  if (tl.makespan != latest) out.push_back("makespan differs from latest event time");
  return out;
}

}  // namespace flowaccel
