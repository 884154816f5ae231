#pragma once

// Config-driven experiment commands shared by the flowaccel tool and the
// test suites. Each command takes a parsed JSON config, validates it
// strictly, and returns CSV text plus optional side outputs.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "flowaccel/attention.hpp"
#include "flowaccel/fields.hpp"
#include "flowaccel/pipeline.hpp"
#include "flowaccel/realrun.hpp"
#include "flowaccel/rectflow.hpp"
#include "flowaccel/serialize.hpp"

namespace flowaccel::experiments {

/// An invariant the command checks on its own results did not hold.
class AssertionFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& invariant) {
  if (!ok) throw AssertionFailure("assertion failed: " + invariant);
}

struct Options {
  std::optional<std::uint64_t> seed;  // overrides the config's "seed"
  std::size_t threads = 1;
  std::ostream* log = nullptr;  // verbose diagnostics when set
};

struct Output {
  std::string csv;
  // Extra files requested by the config, as (path, contents).
  std::vector<std::pair<std::string, std::string>> files;
};

inline std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}
inline std::string fmt(std::uint64_t x) { return std::to_string(x); }
inline std::string fmt(std::optional<double> x) { return x ? fmt(*x) : "NA"; }

class Csv {
 public:
  explicit Csv(std::vector<std::string> header) : width_(header.size()) {
    add(std::move(header));
  }
  void add(std::vector<std::string> row) {
    if (row.size() != width_) throw std::logic_error("csv: row width mismatch");
    std::string line;
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) line += ',';
      line += row[i];
    }
    text_ += line + '\n';
  }
  const std::string& str() const noexcept { return text_; }

 private:
  std::size_t width_;
  std::string text_;
};

namespace detail {

inline std::uint64_t read_seed(ConfigReader& r, const Options& opt) {
  const std::uint64_t s = r.count("seed", 0);
  return opt.seed.value_or(s);
}

inline Shape state_shape(const FieldSpec& fs, std::size_t dim) {
  return std::visit(
      [&](const auto& s) -> Shape {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, spec::Constant>) return s.c.shape();
        else if constexpr (std::is_same_v<S, spec::Funnel>) return s.target.shape();
        else if constexpr (std::is_same_v<S, spec::CurvedThenStraight>) return s.target.shape();
        else if constexpr (std::is_same_v<S, spec::Rotational>) return {dim};
        else return s.token_shape();
      },
      fs);
}

// "z0" as a flat array, else standard normal draws from the seed. "dim" sets
// the state size of the rotational field (default 2).
inline Tensor initial_state(ConfigReader& r, const FieldSpec& fs,
                            std::uint64_t seed) {
  std::size_t dim = 2;
  if (r.has("dim")) {
    if (!std::holds_alternative<spec::Rotational>(fs)) {
      throw ConfigError(r.path_of("dim"), "only the rotational field takes dim");
    }
    dim = r.count("dim");
    if (dim < 2) throw ConfigError(r.path_of("dim"), "must be >= 2");
  }
  const Shape shape = state_shape(fs, dim);
  if (!r.has("z0")) return Rng(seed).normal_tensor(shape);
  std::vector<double> v = r.numbers("z0");
  if (v.size() != shape_volume(shape)) {
    throw ConfigError(r.path_of("z0"), "expected " + std::to_string(shape_volume(shape)) +
                                           " values for state shape " + shape_string(shape));
  }
  return Tensor(shape, std::move(v));
}

inline spec::ToyStdit read_toy(ConfigReader& r) {
  const FieldSpec fs = read_field_spec(r.object("field"));
  if (!std::holds_alternative<spec::ToyStdit>(fs)) {
    throw ConfigError(r.path_of("field.kind"), "this command needs a toy_stdit field");
  }
  return std::get<spec::ToyStdit>(fs);
}

inline void log(const Options& opt, const std::string& line) {
  if (opt.log) *opt.log << line << '\n';
}

template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& body) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            body(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Per-evaluation FLOP totals of a toy field, for cost-weighted schedules.
class MeteredField final : public VelocityField {
 public:
  explicit MeteredField(const ToyStditField& inner) : inner_(inner) {}
  const std::vector<std::uint64_t>& per_eval() const noexcept { return per_eval_; }

 protected:
  Tensor drift(const Tensor& p, double t) const override {
    const std::uint64_t before = inner_.flops().total();
    Tensor v = inner_.evaluate(p, t);
    per_eval_.push_back(inner_.flops().total() - before);
    return v;
  }

 private:
  const ToyStditField& inner_;
  mutable std::vector<std::uint64_t> per_eval_;
};

}  // namespace detail

/// Keys: field, grid, settings (array of lpl objects), z0?, dim?, seed?.
inline Output cmd_lpl_bench(const json& config, const Options& opt = {}) {
  ConfigReader r(config, "config");
  const FieldSpec fs = read_field_spec(r.object("field"));
  const TimeGrid grid = read_grid(r.object("grid"));
  const std::uint64_t seed = detail::read_seed(r, opt);
  const Tensor z0 = detail::initial_state(r, fs, seed);
  const json& list = r.raw("settings");
  if (!list.is_array() || list.empty()) {
    throw ConfigError("config.settings", "expected a non-empty array");
  }
  std::vector<LplConfig> settings;
  for (std::size_t i = 0; i < list.size(); ++i) {
    const std::string path = "config.settings[" + std::to_string(i) + "]";
    settings.push_back(read_lpl(ConfigReader(list[i], path)));
    try {
      validate(settings.back(), grid.size());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(path, e.what());
    }
  }
  r.finish();

  const std::size_t K = grid.size();
  const Tensor full = euler_sample(*build_field(fs), z0, grid).endpoint;
  const Tensor reference = reference_endpoint(fs, z0);
  detail::log(opt, "lpl-bench: " + std::string(kind_name(fs)) + ", K = " + std::to_string(K) +
                       ", " + std::to_string(settings.size()) + " settings");

  std::vector<SampleResult> results(settings.size());
  std::vector<std::size_t> evals(settings.size());
  detail::parallel_for(settings.size(), opt.threads, [&](std::size_t i) {
    auto field = build_field(fs);
    results[i] = lpl_sample(*field, z0, grid, settings[i]);
    evals[i] = field->eval_count();
  });

  Csv csv({"setting", "steps_executed", "leap_step", "eval_speedup",
           "endpoint_error_vs_full", "endpoint_error_vs_reference"});
  for (std::size_t i = 0; i < settings.size(); ++i) {
    const auto& rec = results[i].record;
    const std::string label = lpl_label(settings[i]);
    require(evals[i] == rec.steps_executed,
            label + ": field evaluations equal steps executed");
    if (const auto* f = std::get_if<LplFixed>(&settings[i])) {
      require(rec.steps_executed == f->n + 1, label + ": fixed leap executes n + 1 steps");
    }
    if (const auto* d = std::get_if<LplDynamic>(&settings[i])) {
      require(!rec.leap_step || *rec.leap_step >= min_steps(d->min_fraction, K),
              label + ": dynamic leap not before ceil(min_fraction * K)");
    }
    csv.add({label, fmt(std::uint64_t{rec.steps_executed}),
             rec.leap_step ? fmt(std::uint64_t{*rec.leap_step}) : "NA",
             fmt(static_cast<double>(K) / static_cast<double>(rec.steps_executed)),
             fmt(max_abs_diff(results[i].endpoint, full)),
             fmt(max_abs_diff(results[i].endpoint, reference))});
  }
  return {csv.str(), {}};
}

/// Keys: field, grid, z0?, dim?, seed?. One row per adjacent drift pair.
inline Output cmd_straightness(const json& config, const Options& opt = {}) {
  ConfigReader r(config, "config");
  const FieldSpec fs = read_field_spec(r.object("field"));
  const TimeGrid grid = read_grid(r.object("grid"));
  const std::uint64_t seed = detail::read_seed(r, opt);
  const Tensor z0 = detail::initial_state(r, fs, seed);
  r.finish();

  const auto result = euler_sample(*build_field(fs), z0, grid);
  const auto& series = result.record.cosine_series;
  require(series.size() + 1 == grid.size(), "cosine series has K - 1 entries");
  Csv csv({"step", "cosine"});
  for (std::size_t j = 0; j < series.size(); ++j) {
    csv.add({fmt(std::uint64_t{j + 2}), fmt(series[j])});
  }
  if (!series.empty()) {
    detail::log(opt, "straightness: min cosine " +
                         fmt(*std::min_element(series.begin(), series.end())));
  }
  return {csv.str(), {}};
}

/// Keys: field (toy_stdit), grid, merge_steps (array), seed?, wall_time?.
inline Output cmd_tdtm_bench(const json& config, const Options& opt = {}) {
  ConfigReader r(config, "config");
  const spec::ToyStdit toy = detail::read_toy(r);
  const TimeGrid grid = read_grid(r.object("grid"));
  const std::uint64_t seed = detail::read_seed(r, opt);
  const bool wall_time = r.flag("wall_time", false);
  const json& list = r.raw("merge_steps");
  if (!list.is_array() || list.empty()) {
    throw ConfigError("config.merge_steps", "expected a non-empty array");
  }
  const std::size_t K = grid.size();
  std::vector<std::size_t> ks;
  for (std::size_t i = 0; i < list.size(); ++i) {
    const std::string path = "config.merge_steps[" + std::to_string(i) + "]";
    ks.push_back(ConfigReader::as_count(list[i], path));
    if (ks.back() > K) throw ConfigError(path, "exceeds the number of steps K");
  }
  r.finish();

  const Tensor z0 = Rng(seed).normal_tensor(toy.token_shape());
  struct Run {
    FlopReport self, cross;
    Tensor endpoint;
    double seconds = 0.0;
  };
  auto run = [&](std::size_t k) {
    ToyStditField field(toy, {k, K});
    const auto t0 = std::chrono::steady_clock::now();
    Tensor end = euler_sample(field, z0, grid).endpoint;
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
    return Run{field.self_flops(), field.cross_flops(), std::move(end), dt.count()};
  };
  const Run base = run(0);

  Csv csv({"merge_steps", "score_flops_ratio", "cross_score_flops_ratio",
           "total_flops_ratio", "mean_abs_deviation_vs_unmerged", "wall_time_ratio"});
  auto ratio = [](std::uint64_t a, std::uint64_t b) {
    return static_cast<double>(a) / static_cast<double>(b);
  };
  const bool ascending = std::is_sorted(ks.begin(), ks.end());
  double previous = 0.0;
  for (std::size_t k : ks) {
    const Run cur = run(k);
    const double self_ratio = ratio(cur.self.scores, base.self.scores);
    const std::optional<double> cross_ratio =
        toy.cross_attention ? std::optional(ratio(cur.cross.scores, base.cross.scores))
                            : std::nullopt;
    FlopReport cur_total = cur.self, base_total = base.self;
    cur_total += cur.cross;
    base_total += base.cross;
    const double dev = mean_abs_diff(cur.endpoint, base.endpoint);
    const std::string tag = "merge_steps " + std::to_string(k);
    if (k == 0) require(dev == 0.0 && self_ratio == 1.0, tag + ": no merging changes nothing");
    if (k == K && toy.frames % 2 == 0) {
      require(self_ratio == 0.25, tag + ": self-attention score flops at one quarter");
      require(!cross_ratio || *cross_ratio == 0.5, tag + ": cross-attention score flops at one half");
    }
    if (ascending) require(dev >= previous, tag + ": deviation non-decreasing in merge_steps");
    previous = dev;
    csv.add({fmt(std::uint64_t{k}), fmt(self_ratio), fmt(cross_ratio),
             fmt(ratio(cur_total.total(), base_total.total())), fmt(dev),
             wall_time ? fmt(cur.seconds / base.seconds) : "NA"});
  }
  return {csv.str(), {}};
}

struct Phase {
  std::string name;
  PipelineConfig cfg;
  std::optional<std::size_t> retention;  // nullopt: choose_retention
  double alpha = 0.0;
};

namespace detail {

inline std::vector<BlockSpec> read_blocks(ConfigReader& r) {
  std::vector<BlockSpec> out;
  if (r.has("blocks") == r.has("uniform")) {
    throw ConfigError(r.path(), "give exactly one of blocks or uniform");
  }
  auto positive = [](double x, const std::string& path) {
    if (!(x > 0.0)) throw ConfigError(path, "must be > 0");
    return x;
  };
  if (r.has("blocks")) {
    const json& list = r.raw("blocks");
    if (!list.is_array() || list.empty()) {
      throw ConfigError(r.path_of("blocks"), "expected a non-empty array");
    }
    for (std::size_t i = 0; i < list.size(); ++i) {
      ConfigReader b(list[i], r.path_of("blocks") + "[" + std::to_string(i) + "]");
      BlockSpec s;
      s.id = b.count("id", i);
      s.load_latency = positive(b.number("load_latency"), b.path_of("load_latency"));
      s.exec_latency = positive(b.number("exec_latency"), b.path_of("exec_latency"));
      s.mem_size = b.count("mem_size");
      b.finish();
      out.push_back(s);
    }
    return out;
  }
  // Uniform blocks, given either per-block latencies or one iteration's
  // latency and the fraction of it spent loading.
  ConfigReader u = r.object("uniform");
  const std::size_t count = u.count("count");
  if (count == 0) throw ConfigError(u.path_of("count"), "must be >= 1");
  double l = 0.0, e = 0.0;
  if (u.has("iteration_latency")) {
    const double total = positive(u.number("iteration_latency"), u.path_of("iteration_latency"));
    const double f = u.number("load_fraction");
    if (!(f > 0.0 && f < 1.0)) throw ConfigError(u.path_of("load_fraction"), "must be in (0, 1)");
    l = total * f / static_cast<double>(count);
    e = total * (1.0 - f) / static_cast<double>(count);
  } else {
    l = positive(u.number("load_latency"), u.path_of("load_latency"));
    e = positive(u.number("exec_latency"), u.path_of("exec_latency"));
  }
  const std::uint64_t mem = u.count("mem_size");
  const std::uint64_t first_mem = u.count("first_mem_size", mem);
  u.finish();
  for (std::size_t i = 0; i < count; ++i) out.push_back({i, l, e, i == 0 ? first_mem : mem});
  return out;
}

inline double mean_of(const std::vector<BlockSpec>& bs, double BlockSpec::*m) {
  double s = 0.0;
  for (const auto& b : bs) s += b.*m;
  return s / static_cast<double>(bs.size());
}

inline Phase read_phase(ConfigReader r) {
  Phase p;
  p.name = r.text("name");
  p.cfg.blocks = read_blocks(r);
  p.cfg.iterations = r.count("iterations", 1);
  std::uint64_t total = 0, largest = 0;
  for (const auto& b : p.cfg.blocks) {
    total += b.mem_size;
    largest = std::max(largest, b.mem_size);
  }
  p.cfg.exec_headroom = r.count("exec_headroom", 0);
  p.cfg.memory_budget = r.count("memory_budget", total + p.cfg.exec_headroom);
  p.cfg.prefetch_depth = r.count("prefetch_depth", 1);
  const double l = mean_of(p.cfg.blocks, &BlockSpec::load_latency);
  const double e = mean_of(p.cfg.blocks, &BlockSpec::exec_latency);
  p.alpha = r.number("alpha", std::min(l, e));
  p.cfg.alpha = p.alpha;
  if (r.has("retention")) {
    const json& v = r.raw("retention");
    if (v.is_string() && v.get<std::string>() == "auto") {
      p.retention.reset();
    } else if (v.is_string() && v.get<std::string>() == "all") {
      p.retention = p.cfg.blocks.size();
    } else {
      p.retention = ConfigReader::as_count(v, r.path_of("retention"));
    }
  }
  r.finish();
  try {
    validate(p.cfg);
    if (p.retention) validate(RetentionPlan::prefix(p.cfg, *p.retention), p.cfg);
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(r.path(), ex.what());
  }
  return p;
}

}  // namespace detail

struct PhaseResult {
  Phase phase;
  RetentionPlan plan;
  Timeline sequential, concurrent, dynamic;
  double predicted_ci = 0.0, predicted_dl = 0.0;
};

/// Simulates all three schedules of one phase and checks their invariants.
inline PhaseResult simulate_phase(const Phase& p) {
  PhaseResult out{p, p.retention ? RetentionPlan::prefix(p.cfg, *p.retention)
                                 : choose_retention(p.cfg),
                  {}, {}, {}};
  out.sequential = simulate_sequential(p.cfg);
  out.concurrent = simulate_concurrent(p.cfg);
  out.dynamic = simulate_dynamic(p.cfg, out.plan);
  for (const auto* tl : {&out.sequential, &out.concurrent, &out.dynamic}) {
    const auto v = timeline_violations(*tl);
    require(v.empty(), p.name + ": legal timeline (" + (v.empty() ? "" : v.front()) + ")");
  }
  require(out.concurrent.makespan <= out.sequential.makespan,
          p.name + ": concurrent makespan <= sequential");
  require(out.dynamic.makespan <= out.concurrent.makespan,
          p.name + ": dynamic makespan <= concurrent");

  const std::size_t b = p.cfg.blocks.size();
  const double iters = static_cast<double>(p.cfg.iterations);
  const double l = detail::mean_of(p.cfg.blocks, &BlockSpec::load_latency);
  const double e = detail::mean_of(p.cfg.blocks, &BlockSpec::exec_latency);
  const double ci = predict_reduction_ci(b, l, e, p.alpha);
  out.predicted_ci = iters * ci;
  out.predicted_dl = ci + (iters - 1.0) * predict_reduction_dl(b, l, e, p.alpha, out.plan.d());
  return out;
}

inline std::vector<Phase> read_phases(ConfigReader& r) {
  const json& list = r.raw("phases");
  if (!list.is_array() || list.empty()) {
    throw ConfigError("config.phases", "expected a non-empty array");
  }
  std::vector<Phase> phases;
  for (std::size_t i = 0; i < list.size(); ++i) {
    phases.push_back(detail::read_phase(
        ConfigReader(list[i], "config.phases[" + std::to_string(i) + "]")));
  }
  return phases;
}

/// Keys: phases (array), timelines? (path for the JSON timelines).
inline Output cmd_pipeline_sim(const json& config, const Options& opt = {}) {
  ConfigReader r(config, "config");
  const std::vector<Phase> phases = read_phases(r);
  const std::optional<std::string> timeline_path =
      r.has("timelines") ? std::optional(r.text("timelines")) : std::nullopt;
  r.finish();

  Csv csv({"phase", "schedule", "blocks", "iterations", "retained", "makespan",
           "reduction", "relative_reduction", "predicted_reduction", "prediction_gap"});
  json timelines = json::array();
  double tot_seq = 0, tot_con = 0, tot_dyn = 0, tot_pci = 0, tot_pdl = 0;
  auto emit = [&](const std::string& name, std::size_t b, std::size_t iters, std::size_t d,
                  double seq, double con, double dyn, double pci, double pdl) {
    const std::string bs = fmt(std::uint64_t{b}), is = fmt(std::uint64_t{iters});
    csv.add({name, "sequential", bs, is, "0", fmt(seq), "0", "0", "NA", "NA"});
    csv.add({name, "concurrent", bs, is, "0", fmt(con), fmt(seq - con),
             fmt((seq - con) / seq), fmt(pci), fmt(seq - con - pci)});
    csv.add({name, "dynamic", bs, is, fmt(std::uint64_t{d}), fmt(dyn), fmt(seq - dyn),
             fmt((seq - dyn) / seq), fmt(pdl), fmt(seq - dyn - pdl)});
  };
  std::size_t tot_blocks = 0, tot_d = 0;
  for (const auto& p : phases) {
    const PhaseResult res = simulate_phase(p);
    const double seq = res.sequential.makespan, con = res.concurrent.makespan,
                 dyn = res.dynamic.makespan;
    emit(p.name, p.cfg.blocks.size(), p.cfg.iterations, res.plan.d(), seq, con, dyn,
         res.predicted_ci, res.predicted_dl);
    detail::log(opt, "pipeline-sim: " + p.name + " concurrent/sequential = " + fmt(con / seq) +
                         ", retained " + std::to_string(res.plan.d()));
    tot_seq += seq;
    tot_con += con;
    tot_dyn += dyn;
    tot_pci += res.predicted_ci;
    tot_pdl += res.predicted_dl;
    tot_blocks += p.cfg.blocks.size();
    tot_d += res.plan.d();
    timelines.push_back({{"name", p.name},
                         {"retained", res.plan.d()},
                         {"sequential", to_json_value(res.sequential)},
                         {"concurrent", to_json_value(res.concurrent)},
                         {"dynamic", to_json_value(res.dynamic)}});
  }
  if (phases.size() > 1) {
    emit("total", tot_blocks, 0, tot_d, tot_seq, tot_con, tot_dyn, tot_pci, tot_pdl);
  }
  Output out{csv.str(), {}};
  if (timeline_path) out.files.emplace_back(*timeline_path, json{{"phases", timelines}}.dump(1) + "\n");
  return out;
}

struct E2eRow {
  std::string technique;
  std::size_t field_evals = 0;
  std::uint64_t flops = 0;
  double makespan = 0.0;
  double deviation = 0.0;
};

/// Keys: field (toy_stdit), grid, lpl, tdtm {merge_steps}, pipeline
/// {load_latency, exec_latency, mem_size, memory_budget?, exec_headroom?,
/// prefetch_depth?}, seed?. One pipeline block per toy block.
inline std::vector<E2eRow> run_e2e(const json& config, const Options& opt = {}) {
  ConfigReader r(config, "config");
  const spec::ToyStdit toy = detail::read_toy(r);
  const TimeGrid grid = read_grid(r.object("grid"));
  const std::size_t K = grid.size();
  const LplConfig lpl = read_lpl(r.object("lpl"));
  try {
    validate(lpl, K);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config.lpl", e.what());
  }
  ConfigReader tr = r.object("tdtm");
  const std::size_t merge_steps = tr.count("merge_steps");
  tr.finish();
  if (merge_steps > K) throw ConfigError("config.tdtm.merge_steps", "exceeds K");

  ConfigReader pr = r.object("pipeline");
  PipelineConfig base_cfg;
  {
    const double l = pr.number("load_latency"), e = pr.number("exec_latency");
    const std::uint64_t mem = pr.count("mem_size");
    for (std::size_t i = 0; i < toy.depth; ++i) base_cfg.blocks.push_back({i, l, e, mem});
    base_cfg.exec_headroom = pr.count("exec_headroom", 0);
    base_cfg.memory_budget = pr.count("memory_budget", mem * toy.depth + base_cfg.exec_headroom);
    base_cfg.prefetch_depth = pr.count("prefetch_depth", 1);
    pr.finish();
    try {
      validate(base_cfg);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("config.pipeline", e.what());
    }
  }
  std::optional<double> real_scale;
  if (r.has("real")) {
    ConfigReader rr = r.object("real");
    real_scale = rr.number("time_scale");
    rr.finish();
    if (!(*real_scale >= 0.0)) throw ConfigError("config.real.time_scale", "must be >= 0");
  }
  const std::uint64_t seed = detail::read_seed(r, opt);
  r.finish();

  const Tensor z0 = Rng(seed).normal_tensor(toy.token_shape());
  const RetentionPlan plan = choose_retention(base_cfg);

  struct Sampled {
    Tensor endpoint;
    std::vector<std::uint64_t> per_eval;
  };
  auto sample = [&](bool use_lpl, bool use_tdtm) {
    ToyStditField field(toy, {use_tdtm ? merge_steps : 0, K});
    detail::MeteredField metered(field);
    const auto res = lpl_sample(metered, z0, grid, use_lpl ? lpl : LplConfig{LplOff{}});
    return Sampled{res.endpoint, metered.per_eval()};
  };
  const Sampled plain = sample(false, false);
  const double unit = static_cast<double>(plain.per_eval.front());

  auto schedule = [&](const Sampled& s, bool overlapped) {
    PipelineConfig cfg = base_cfg;
    cfg.iterations = s.per_eval.size();
    for (auto f : s.per_eval) cfg.exec_scale.push_back(static_cast<double>(f) / unit);
    return overlapped ? simulate_dynamic(cfg, plan).makespan
                      : simulate_sequential(cfg).makespan;
  };

  std::vector<E2eRow> rows;
  auto add = [&](const std::string& name, const Sampled& s, bool overlapped) {
    std::uint64_t flops = 0;
    for (auto f : s.per_eval) flops += f;
    rows.push_back({name, s.per_eval.size(), flops, schedule(s, overlapped),
                    mean_abs_diff(s.endpoint, plain.endpoint)});
  };
  add("baseline", plain, false);
  add("lpl", sample(true, false), false);
  add("tdtm", sample(false, true), false);
  add("ci_dl", plain, true);
  add("all", sample(true, true), true);
  detail::log(opt, "e2e: retained " + std::to_string(plan.d()) + " of " +
                       std::to_string(base_cfg.blocks.size()) + " blocks");

  require(rows[0].field_evals == K, "baseline runs K field evaluations");
  require(rows[4].field_evals == rows[1].field_evals, "all runs as many evaluations as lpl");
  require(rows[4].flops <= rows[1].flops, "all uses no more flops than lpl");
  for (std::size_t i = 1; i < 4; ++i) {
    require(rows[4].makespan <= rows[i].makespan,
            "all makespan <= " + rows[i].technique + " makespan");
  }

  // Real mode: push the toy block stack through the loader/executor pair
  // under the ci_dl schedule. Timings are wall-clock, so they only go to
  // the log; the checked properties are deterministic.
  if (real_scale) {
    std::vector<std::unique_ptr<ToyBlockUnit>> blocks;
    std::vector<std::unique_ptr<PaddedUnit>> padded;
    std::vector<BlockUnit*> plain_units, units;
    for (std::size_t i = 0; i < toy.depth; ++i) {
      blocks.push_back(std::make_unique<ToyBlockUnit>(toy, i));
      plain_units.push_back(blocks.back().get());
      const auto& b = base_cfg.blocks[i];
      padded.push_back(std::make_unique<PaddedUnit>(
          *blocks.back(), std::chrono::duration<double>(b.load_latency * *real_scale),
          std::chrono::duration<double>(b.exec_latency * *real_scale)));
      units.push_back(padded.back().get());
    }
    PipelineConfig cfg = base_cfg;
    cfg.iterations = K;
    const RealRunResult real = run_real(units, z0, cfg, plan);
    require(real.output == run_serial(plain_units, z0, K),
            "real two-agent output equals serial execution");
    require(real.peak_residency <= plan.d() + 2, "peak block residency <= d + 2");
    detail::log(opt, "e2e real: measured " + fmt(real.timeline.makespan) + " s, simulated " +
                         fmt(simulate_dynamic(cfg, plan).makespan * *real_scale) + " s");
  }
  return rows;
}

inline Output cmd_e2e(const json& config, const Options& opt = {}) {
  Csv csv({"technique", "field_evals", "flops", "simulated_makespan",
           "endpoint_deviation_vs_baseline"});
  for (const auto& row : run_e2e(config, opt)) {
    csv.add({row.technique, fmt(std::uint64_t{row.field_evals}), fmt(row.flops),
             fmt(row.makespan), fmt(row.deviation)});
  }
  return {csv.str(), {}};
}

inline const std::map<std::string, Output (*)(const json&, const Options&)>& commands() {
  static const std::map<std::string, Output (*)(const json&, const Options&)> table = {
      {"lpl-bench", &cmd_lpl_bench},
      {"straightness", &cmd_straightness},
      {"tdtm-bench", &cmd_tdtm_bench},
      {"pipeline-sim", &cmd_pipeline_sim},
      {"e2e", &cmd_e2e},
  };
  return table;
}

}  // namespace flowaccel::experiments
