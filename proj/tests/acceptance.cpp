// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails or exceeds its runtime budget.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include "flowaccel/experiments.hpp"
#include "flowaccel/realrun.hpp"
#include "oracles.hpp"

using namespace flowaccel;
namespace fx = flowaccel::experiments;

namespace {

struct Verdict {
  bool ok = true;
  std::string detail;

  void check(bool cond, const std::string& what) {
    if (!cond && ok) {
      ok = false;
      detail = what;
    }
  }
};

int failures = 0;

void criterion(int id, const char* name, double budget_s,
               const std::function<Verdict()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Verdict v;
  try {
    v = body();
  } catch (const std::exception& e) {
    v.ok = false;
    v.detail = std::string("exception: ") + e.what();
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (v.ok && secs >= budget_s) {
    v.ok = false;
    v.detail = "runtime budget exceeded";
  }
  if (!v.ok) ++failures;
  std::printf("%s %2d %s (%.3f s, budget %.0f s)%s%s\n", v.ok ? "PASS" : "FAIL", id, name, secs,
              budget_s, v.detail.empty() ? "" : ": ", v.detail.c_str());
  std::fflush(stdout);
}

json load_config(const std::string& name) {
  std::ifstream in(std::string(FLOWACCEL_CONFIG_DIR) + "/" + name);
  if (!in) throw std::runtime_error("missing config " + name);
  return json::parse(in);
}

std::map<std::string, std::string> csv_row(const std::string& csv, const std::string& a,
                                           const std::string& b) {
  std::istringstream in(csv);
  std::string line;
  std::vector<std::string> header;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::istringstream ls(s);
    std::string cell;
    while (std::getline(ls, cell, ',')) out.push_back(cell);
    return out;
  };
  std::getline(in, line);
  header = split(line);
  while (std::getline(in, line)) {
    const auto cells = split(line);
    if (cells.size() >= 2 && cells[0] == a && cells[1] == b) {
      std::map<std::string, std::string> out;
      for (std::size_t i = 0; i < header.size(); ++i) out[header[i]] = cells[i];
      return out;
    }
  }
  throw std::runtime_error("row " + a + "," + b + " not found");
}

Tensor vec(std::vector<double> v) { return Tensor::vector(std::move(v)); }

}  // namespace

int main() {
  criterion(1, "LPL exact on the constant field", 1.0, [] {
    Verdict v;
    ConstantField field(vec({0.7, -1.3, 2.0, 0.25}));
    const Tensor z0 = vec({1.0, 2.0, -3.0, 0.5});
    for (std::size_t K : {2u, 5u, 30u, 50u}) {
      const auto grid = TimeGrid::uniform(K);
      const Tensor euler = euler_sample(field, z0, grid).endpoint;
      for (std::size_t n = 0; n < K; ++n) {
        const double err = max_abs_diff(lpl_sample(field, z0, grid, LplFixed{n}).endpoint, euler);
        v.check(err < 1e-12, "K=" + std::to_string(K) + " n=" + std::to_string(n) +
                                 " error " + fx::fmt(err));
      }
    }
    return v;
  });

  criterion(2, "LPL 16/30 runs 16 field evaluations", 1.0, [] {
    Verdict v;
    CurvedThenStraightField field({0.5, 2.0, vec({3.0, 0.0})});
    const auto r = lpl_sample(field, vec({0.0, 0.0}), TimeGrid::uniform(30), LplFixed{15});
    v.check(field.eval_count() == 16, "evaluations " + std::to_string(field.eval_count()));
    v.check(r.record.steps_executed == 16, "steps executed");
    v.check(30.0 / static_cast<double>(field.eval_count()) == 1.875, "speedup");
    v.detail = v.ok ? "speedup 1.875" : v.detail;
    return v;
  });

  criterion(3, "LPL accurate after straightening", 5.0, [] {
    Verdict v;
    CurvedThenStraightField field({0.5, 2.0, vec({3.0, 0.0})});
    const Tensor z0 = vec({0.0, 0.0});
    const Tensor fine = euler_sample(field, z0, TimeGrid::uniform(kFineGridSteps)).endpoint;
    const auto grid = TimeGrid::uniform(30);
    const double e16 = max_abs_diff(lpl_sample(field, z0, grid, LplFixed{15}).endpoint, fine);
    const double e8 = max_abs_diff(lpl_sample(field, z0, grid, LplFixed{7}).endpoint, fine);
    v.check(e16 < 1e-6, "leap@16 error " + fx::fmt(e16));
    v.check(e16 < e8, "leap@16 not better than leap@8");
    if (v.ok) v.detail = "leap@16 " + fx::fmt(e16) + ", leap@8 " + fx::fmt(e8);
    return v;
  });

  criterion(4, "dynamic trigger timing", 1.0, [] {
    Verdict v;
    const LplDynamic cfg{0.5, 1e-4, 3};
    for (std::size_t K : {8u, 10u, 15u, 30u, 31u, 50u}) {
      const std::size_t m = (K + 1) / 2;
      FunnelField funnel(vec({3.0, -1.0}));
      const auto r = lpl_sample(funnel, vec({0.2, 0.4}), TimeGrid::uniform(K), cfg);
      v.check(r.record.leap_step == m + 3,
              "funnel K=" + std::to_string(K) + " leap " +
                  (r.record.leap_step ? std::to_string(*r.record.leap_step) : "none"));
      std::vector<std::unique_ptr<VelocityField>> fields;
      fields.push_back(std::make_unique<ConstantField>(vec({1.0, 2.0})));
      fields.push_back(std::make_unique<RotationalField>(0.3));
      fields.push_back(std::make_unique<CurvedThenStraightField>(
          spec::CurvedThenStraight{0.5, 2.0, vec({3.0, 0.0})}));
      fields.push_back(std::make_unique<CurvedThenStraightField>(
          spec::CurvedThenStraight{0.8, 0.5, vec({1.0, 1.0})}));
      for (const auto& f : fields) {
        const auto q = lpl_sample(*f, vec({0.5, -0.5}), TimeGrid::uniform(K), cfg);
        v.check(!q.record.leap_step || *q.record.leap_step >= m,
                "leap before ceil(K/2) at K=" + std::to_string(K));
      }
    }
    spec::ToyStdit toy;
    ToyStditField field(toy);
    const auto q = lpl_sample(field, Rng(1).normal_tensor(toy.token_shape()),
                              TimeGrid::uniform(20), cfg);
    v.check(!q.record.leap_step || *q.record.leap_step >= 10, "toy field leaped early");
    return v;
  });

  criterion(5, "TDTM score FLOP ratios 0.25 self / 0.5 cross", 1.0, [] {
    Verdict v;
    Rng rng(5);
    for (std::size_t T : {4u, 8u, 16u}) {
      const auto ws = AttentionWeights::random(T, 8, 2);
      const auto wc = AttentionWeights::random(T + 100, 8, 2, 6);
      const TokenTensor x(rng.normal_tensor({2, 3 * T, 8}), 2, 3, T, 8);
      const Tensor ctx = rng.normal_tensor({2, 5, 6});
      const TdtmPolicy policy{1, 2};
      FlopCounter sm, su, cm, cu;
      attention_with_tdtm(x, nullptr, ws, policy, 1, sm);
      attention_with_tdtm(x, nullptr, ws, policy, 2, su);
      attention_with_tdtm(x, &ctx, wc, policy, 1, cm);
      attention_with_tdtm(x, &ctx, wc, policy, 2, cu);
      auto ratio = [](std::uint64_t a, std::uint64_t b) {
        return static_cast<double>(a) / static_cast<double>(b);
      };
      const std::string tag = " at T=" + std::to_string(T);
      v.check(ratio(sm.counts().scores, su.counts().scores) == 0.25, "self scores" + tag);
      v.check(ratio(sm.counts().weighted_sum, su.counts().weighted_sum) == 0.25, "self av" + tag);
      v.check(ratio(cm.counts().scores, cu.counts().scores) == 0.5, "cross scores" + tag);
      v.check(ratio(cm.counts().weighted_sum, cu.counts().weighted_sum) == 0.5, "cross av" + tag);
    }
    return v;
  });

  criterion(6, "TDTM lossless when frame pairs are identical", 5.0, [] {
    Verdict v;
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(seed);
      const std::size_t B = 2, S = 3, T = 8, C = 6;
      Tensor data = rng.normal_tensor({B, S * T, C});
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t s = 0; s < S; ++s)
          for (std::size_t t = 1; t < T; t += 2)
            for (std::size_t c = 0; c < C; ++c)
              data[(b * S * T + token_row(s, t, T)) * C + c] =
                  data[(b * S * T + token_row(s, t - 1, T)) * C + c];
      const TokenTensor x(data, B, S, T, C);
      const Tensor ctx = rng.normal_tensor({B, 4, 5});
      const auto ws = AttentionWeights::random(seed, C, 2);
      const auto wc = AttentionWeights::random(seed + 1000, C, 3, 5);
      FlopCounter c;
      const TdtmPolicy policy{1, 1};
      worst = std::max(worst, max_abs_diff(attention_with_tdtm(x, nullptr, ws, policy, 1, c).data,
                                           self_attention(x, ws, c).data));
      worst = std::max(worst, max_abs_diff(attention_with_tdtm(x, &ctx, wc, policy, 1, c).data,
                                           cross_attention(x, ctx, wc, c).data));
    }
    v.check(worst < 1e-9, "deviation " + fx::fmt(worst));
    if (v.ok) v.detail = "max deviation " + fx::fmt(worst);
    return v;
  });

  criterion(7, "TDTM merge/unmerge equal the index-loop oracle", 5.0, [] {
    Verdict v;
    Rng rng(7);
    bool odd = false, even = false;
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t B = 1 + rng.next_u64() % 4, S = 1 + rng.next_u64() % 4;
      const std::size_t C = 1 + rng.next_u64() % 4, T = 1 + rng.next_u64() % 9;
      (T % 2 ? odd : even) = true;
      const TokenTensor x(rng.normal_tensor({B, S * T, C}), B, S, T, C);
      const TokenTensor m = tdtm_merge(x);
      v.check(m.data == oracle::merge_loop(x.data, B, S, T, C), "merge mismatch");
      const TokenTensor u = tdtm_unmerge(m, T);
      v.check(u.data == oracle::unmerge_loop(m.data, B, S, T, C), "unmerge mismatch");
      v.check(u.data.shape() == x.data.shape(), "shape contract");
    }
    v.check(odd && even, "both parities covered");
    return v;
  });

  criterion(8, "pipeline simulator equals event replay", 10.0, [] {
    Verdict v;
    Rng rng(8);
    for (int trial = 0; trial < 200; ++trial) {
      PipelineConfig cfg;
      const std::size_t b = 1 + rng.next_u64() % 8;
      for (std::size_t i = 0; i < b; ++i) {
        cfg.blocks.push_back({i, rng.uniform(1, 10), rng.uniform(1, 10), 1});
      }
      cfg.iterations = 1 + rng.next_u64() % 3;
      cfg.memory_budget = b + 1;
      const std::string tag = "config " + std::to_string(trial);
      v.check(simulate_sequential(cfg).makespan ==
                  oracle::replay_makespan(cfg, oracle::Mode::sequential),
              tag + " sequential");
      v.check(simulate_concurrent(cfg).makespan ==
                  oracle::replay_makespan(cfg, oracle::Mode::overlapped),
              tag + " concurrent");
    }
    for (std::size_t b = 1; b <= 10; ++b)
      for (double l : {1.0, 2.0, 3.0, 4.5})
        for (double e : {1.0, 2.0, 3.0, 0.5}) {
          const auto cfg = uniform_pipeline(b, l, e);
          const double red = simulate_sequential(cfg).makespan - simulate_concurrent(cfg).makespan;
          v.check(red == static_cast<double>(b - 1) * std::min(l, e),
                  "closed form b=" + std::to_string(b));
        }
    return v;
  });

  criterion(9, "iPhone 15 Pro scenario latency analogue", 5.0, [] {
    Verdict v;
    const auto out = fx::cmd_pipeline_sim(load_config("iphone15_table1.json"));
    const double seq = std::stod(csv_row(out.csv, "stdit", "sequential")["makespan"]);
    const double con = std::stod(csv_row(out.csv, "stdit", "concurrent")["makespan"]);
    const double stdit_rel = std::stod(csv_row(out.csv, "stdit", "concurrent")["relative_reduction"]);
    const double t5_rel = std::stod(csv_row(out.csv, "t5", "concurrent")["relative_reduction"]);
    v.check(std::abs(seq - 50 * 35.366) < 1e-6, "STDiT sequential total");
    v.check(std::abs(con / seq - 0.75) <= 0.02, "STDiT ratio " + fx::fmt(con / seq));
    v.check(t5_rel < stdit_rel, "T5 reduction not smaller");
    if (v.ok) {
      v.detail = "STDiT " + fx::fmt(con / seq) + " of sequential, T5 reduction " +
                 fx::fmt(t5_rel) + " vs STDiT " + fx::fmt(stdit_rel);
    }
    return v;
  });

  criterion(10, "latency predictors are consistent", 1.0, [] {
    Verdict v;
    Rng rng(10);
    for (int trial = 0; trial < 500; ++trial) {
      const std::size_t b = 1 + rng.next_u64() % 24;
      const double l = rng.uniform(0.1, 10), e = rng.uniform(0.1, 10), a = rng.uniform(0, 4);
      v.check(predict_reduction_dl(b, l, e, a, 0) == predict_reduction_ci(b, l, e, a), "d=0");
      for (std::size_t d = 1; d <= b; ++d) {
        v.check(predict_reduction_dl(b, l, e, a, d) >= predict_reduction_dl(b, l, e, a, d - 1),
                "monotone in d");
      }
    }
    for (std::size_t b = 1; b <= 10; ++b)
      for (double l : {1.0, 2.0, 3.0})
        for (double e : {1.0, 2.0, 3.0}) {
          const auto cfg = uniform_pipeline(b, l, e);
          const double sim = simulate_sequential(cfg).makespan - simulate_concurrent(cfg).makespan;
          v.check(predict_reduction_ci(b, l, e, std::min(l, e)) == sim, "ci vs simulation");
        }
    return v;
  });

  criterion(11, "real two-agent execution", 30.0, [] {
    Verdict v;
    spec::ToyStdit toy;
    toy.depth = 8;
    std::vector<std::unique_ptr<ToyBlockUnit>> owned;
    std::vector<BlockUnit*> units;
    for (std::size_t i = 0; i < toy.depth; ++i) {
      owned.push_back(std::make_unique<ToyBlockUnit>(toy, i));
      units.push_back(owned.back().get());
    }
    const Tensor x = Rng(11).normal_tensor(toy.token_shape());
    for (std::size_t iters : {1u, 3u}) {
      const Tensor serial = run_serial(units, x, iters);
      for (std::size_t d : {0u, 3u}) {
        const auto cfg = uniform_pipeline(toy.depth, 1, 1, iters);
        const auto r = run_real(units, x, cfg, RetentionPlan::prefix(cfg, d));
        v.check(r.output == serial, "output differs from serial");
        v.check(r.peak_residency <= d + 2, "peak residency " + std::to_string(r.peak_residency));
      }
    }
    std::vector<std::unique_ptr<PaddedUnit>> padded;
    std::vector<BlockUnit*> slow;
    for (auto* u : units) {
      padded.push_back(std::make_unique<PaddedUnit>(*u, std::chrono::milliseconds(50),
                                                    std::chrono::milliseconds(20)));
      slow.push_back(padded.back().get());
    }
    const auto cfg = uniform_pipeline(toy.depth, 0.050, 0.020);
    const double predicted = simulate_concurrent(cfg).makespan;
    const auto r = run_real(slow, x, cfg);
    const double rel = std::abs(r.timeline.makespan - predicted) / predicted;
    v.check(r.output == run_serial(units, x, 1), "padded output differs");
    v.check(rel <= 0.2, "measured " + fx::fmt(r.timeline.makespan) + " s vs " +
                            fx::fmt(predicted) + " s");
    if (v.ok) {
      v.detail = "measured " + fx::fmt(r.timeline.makespan) + " s, simulated " +
                 fx::fmt(predicted) + " s";
    }
    return v;
  });

  criterion(12, "combined techniques beat each one alone", 30.0, [] {
    Verdict v;
    const auto rows = fx::run_e2e(load_config("e2e_default.json"));
    const auto& all = rows.back();
    v.check(all.technique == "all", "row order");
    for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
      v.check(all.makespan < rows[i].makespan,
              "all " + fx::fmt(all.makespan) + " vs " + rows[i].technique + " " +
                  fx::fmt(rows[i].makespan));
    }
    if (v.ok) {
      double best = INFINITY;
      for (std::size_t i = 1; i + 1 < rows.size(); ++i) best = std::min(best, rows[i].makespan);
      v.detail = "all " + fx::fmt(all.makespan) + ", best single " + fx::fmt(best);
    }
    return v;
  });

  std::printf("%s: %d of 12 criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
