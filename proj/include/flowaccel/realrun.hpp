#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <exception>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <stop_token>
#include <string>
#include <thread>
#include <vector>

#include "flowaccel/pipeline.hpp"
#include "flowaccel/tensor.hpp"

namespace flowaccel {

/// A model block that must be brought into memory before it can run.
class BlockUnit {
 public:
  virtual ~BlockUnit() = default;
  virtual void load() = 0;
  virtual Tensor exec(const Tensor& input) = 0;
  virtual void unload() = 0;
};

/// Stretches load() and exec() of a wrapped unit to at least the given
/// wall-clock durations by sleeping out the remainder.
class PaddedUnit : public BlockUnit {
  using clock = std::chrono::steady_clock;

 public:
  PaddedUnit(BlockUnit& inner, std::chrono::duration<double> load,
             std::chrono::duration<double> exec)
      : inner_(inner),
        load_(std::chrono::duration_cast<clock::duration>(load)),
        exec_(std::chrono::duration_cast<clock::duration>(exec)) {}

  void load() override {
    const auto until = clock::now() + load_;
    inner_.load();
    std::this_thread::sleep_until(until);
  }
  Tensor exec(const Tensor& input) override {
    const auto until = clock::now() + exec_;
    Tensor out = inner_.exec(input);
    std::this_thread::sleep_until(until);
    return out;
  }
  void unload() override { inner_.unload(); }

 private:
  BlockUnit& inner_;
  std::chrono::steady_clock::duration load_, exec_;
};

class PipelineError : public std::runtime_error {
 public:
  PipelineError(std::size_t block_id, std::string phase, const std::string& what)
      : std::runtime_error("block " + std::to_string(block_id) + " failed during " +
                           phase + ": " + what),
        block_id_(block_id),
        phase_(std::move(phase)) {}

  std::size_t block_id() const noexcept { return block_id_; }
  const std::string& phase() const noexcept { return phase_; }

 private:
  std::size_t block_id_;
  std::string phase_;
};

struct RealRunResult {
  Tensor output;
  Timeline timeline;  // wall-clock seconds since start
  std::size_t peak_residency = 0;
};

namespace detail {

class ResidencyMeter {
 public:
  void up() {
    const std::size_t now = ++current_;
    std::size_t seen = peak_.load();
    while (now > seen && !peak_.compare_exchange_weak(seen, now)) {}
  }
  void down() { --current_; }
  std::size_t peak() const { return peak_.load(); }

 private:
  std::atomic<std::size_t> current_{0};
  std::atomic<std::size_t> peak_{0};
};

inline std::string what_of(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const std::exception& ex) {
    return ex.what();
  } catch (...) {
    return "unknown error";
  }
}

}  // namespace detail

/// Runs `units` (one per cfg block, same order) for cfg.iterations, feeding
/// each block's output into the next and the last block's output into the
/// next iteration.
///
/// Two agents: a loader thread and the calling thread as executor, joined by
/// a handoff buffer of cfg.prefetch_depth slots. A slot is taken before a
/// load starts and returned when the executor picks the block up. Iteration
/// i+1 loads begin after iteration i has finished executing. Blocks in
/// `plan` stay loaded after iteration 1.
inline RealRunResult run_real(const std::vector<BlockUnit*>& units,
                              const Tensor& input, const PipelineConfig& cfg,
                              const RetentionPlan& plan = {}) {
  validate(cfg);
  validate(plan, cfg);
  if (units.size() != cfg.blocks.size()) {
    throw std::invalid_argument("run_real: one unit per block required");
  }
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  auto now = [&] {
    return std::chrono::duration<double>(clock::now() - t0).count();
  };

  const std::size_t b = units.size();
  const std::size_t d = plan.d();
  const std::size_t iterations = cfg.iterations;
  auto needs_load = [&](std::size_t it, std::size_t i) { return it == 1 || i >= d; };

  struct Handoff {
    std::size_t block = 0;
    std::exception_ptr error;
  };
  std::mutex mu;
  std::condition_variable_any cv;
  std::deque<Handoff> ready;
  std::size_t free_slots = cfg.prefetch_depth;
  std::size_t started_iteration = 0;

  detail::ResidencyMeter residency;
  std::vector<Event> loader_events, exec_events;

  std::jthread loader([&](std::stop_token stop) {
    for (std::size_t it = 1; it <= iterations; ++it) {
      {
        std::unique_lock lock(mu);
        if (!cv.wait(lock, stop, [&] { return started_iteration >= it; })) return;
      }
      for (std::size_t i = 0; i < b; ++i) {
        if (!needs_load(it, i)) continue;
        {
          std::unique_lock lock(mu);
          if (!cv.wait(lock, stop, [&] { return free_slots > 0; })) return;
          --free_slots;
        }
        const std::size_t id = cfg.blocks[i].id;
        Handoff h{i, nullptr};
        residency.up();
        loader_events.push_back({id, it, EventKind::load_start, now()});
        try {
          units[i]->load();
        } catch (...) {
          h.error = std::current_exception();
        }
        loader_events.push_back({id, it, EventKind::load_end, now()});
        {
          std::lock_guard lock(mu);
          ready.push_back(h);
        }
        cv.notify_all();
        if (h.error) return;
      }
    }
  });

  auto take = [&](std::size_t expected) {
    std::unique_lock lock(mu);
    cv.wait(lock, [&] { return !ready.empty(); });
    Handoff h = ready.front();
    ready.pop_front();
    ++free_slots;
    lock.unlock();
    cv.notify_all();
    if (h.block != expected && !h.error) {
      throw std::logic_error("run_real: loader delivered blocks out of order");
    }
    return h;
  };

  auto stop_loader_and_unload = [&](std::vector<bool>& resident) {
    loader.request_stop();
    loader.join();
    for (auto& h : ready) {
      if (!h.error) resident[h.block] = true;
    }
    for (std::size_t i = 0; i < b; ++i) {
      if (resident[i]) units[i]->unload();
    }
  };

  std::vector<bool> resident(b, false);
  Tensor x = input;
  for (std::size_t it = 1; it <= iterations; ++it) {
    {
      std::lock_guard lock(mu);
      started_iteration = it;
    }
    cv.notify_all();
    for (std::size_t i = 0; i < b; ++i) {
      const std::size_t id = cfg.blocks[i].id;
      if (needs_load(it, i)) {
        Handoff h = take(i);
        if (h.error) {
          residency.down();
          stop_loader_and_unload(resident);
          throw PipelineError(id, "load", detail::what_of(h.error));
        }
        resident[i] = true;
      }
      exec_events.push_back({id, it, EventKind::exec_start, now()});
      try {
        x = units[i]->exec(x);
      } catch (const std::exception& ex) {
        stop_loader_and_unload(resident);
        throw PipelineError(id, "exec", ex.what());
      }
      exec_events.push_back({id, it, EventKind::exec_end, now()});
      if (i >= d) {
        units[i]->unload();
        resident[i] = false;
        residency.down();
        exec_events.push_back({id, it, EventKind::evict, now()});
      }
    }
  }
  loader.join();
  for (std::size_t i = 0; i < d; ++i) {
    units[i]->unload();
    residency.down();
  }

  RealRunResult result;
  result.output = std::move(x);
  result.timeline.events = std::move(loader_events);
  result.timeline.events.insert(result.timeline.events.end(), exec_events.begin(),
                                exec_events.end());
  detail::finish(result.timeline);
  result.peak_residency = residency.peak();
  return result;
}

/// Reference schedule: load, exec, unload one block at a time.
inline Tensor run_serial(const std::vector<BlockUnit*>& units,
                         const Tensor& input, std::size_t iterations) {
  Tensor x = input;
  for (std::size_t it = 0; it < iterations; ++it) {
    for (auto* u : units) {
      u->load();
      x = u->exec(x);
      u->unload();
    }
  }
  return x;
}

}  // namespace flowaccel
