#include <gtest/gtest.h>

#include <memory>

#include "flowaccel/fields.hpp"
#include "flowaccel/realrun.hpp"

using namespace flowaccel;

namespace {

struct Stack {
  spec::ToyStdit spec;
  std::vector<std::unique_ptr<ToyBlockUnit>> owned;
  std::vector<BlockUnit*> units;

  explicit Stack(std::size_t depth) {
    spec.depth = depth;
    for (std::size_t i = 0; i < depth; ++i) {
      owned.push_back(std::make_unique<ToyBlockUnit>(spec, i));
      units.push_back(owned.back().get());
    }
  }
};

class FailingUnit final : public BlockUnit {
 public:
  explicit FailingUnit(bool in_load) : in_load_(in_load) {}
  void load() override {
    if (in_load_) throw std::runtime_error("disk gone");
    loaded = true;
  }
  Tensor exec(const Tensor&) override { throw std::runtime_error("kernel fault"); }
  void unload() override { loaded = false; }
  bool loaded = false;

 private:
  bool in_load_;
};

}  // namespace

TEST(RunReal, BitEqualToSerial) {
  Stack s(4);
  Rng rng(1);
  const Tensor x = rng.normal_tensor(s.spec.token_shape());
  for (std::size_t iters : {1u, 3u}) {
    const Tensor serial = run_serial(s.units, x, iters);
    for (std::size_t d : {0u, 2u, 4u}) {
      auto cfg = uniform_pipeline(4, 1, 1, iters);
      const auto r = run_real(s.units, x, cfg, RetentionPlan::prefix(cfg, d));
      EXPECT_EQ(r.output, serial) << "iters=" << iters << " d=" << d;
      for (auto& u : s.owned) EXPECT_FALSE(u->loaded());
      EXPECT_TRUE(timeline_violations(r.timeline).empty());
    }
  }
}

TEST(RunReal, PeakResidencyBounded) {
  Stack s(6);
  Rng rng(2);
  const Tensor x = rng.normal_tensor(s.spec.token_shape());
  for (std::size_t d : {0u, 1u, 3u}) {
    auto cfg = uniform_pipeline(6, 1, 1, 3);
    std::vector<std::unique_ptr<PaddedUnit>> padded;
    std::vector<BlockUnit*> units;
    for (auto* u : s.units) {
      // Fast loads stress the bound: the loader always wants to run ahead.
      padded.push_back(std::make_unique<PaddedUnit>(*u, std::chrono::microseconds(100),
                                                    std::chrono::milliseconds(3)));
      units.push_back(padded.back().get());
    }
    const auto r = run_real(units, x, cfg, RetentionPlan::prefix(cfg, d));
    EXPECT_LE(r.peak_residency, d + 2) << "d=" << d;
    EXPECT_GE(r.peak_residency, d + 1);
  }
}

TEST(RunReal, PaddedMakespanTracksSimulator) {
  Stack s(8);
  Rng rng(3);
  const Tensor x = rng.normal_tensor(s.spec.token_shape());
  std::vector<std::unique_ptr<PaddedUnit>> padded;
  std::vector<BlockUnit*> units;
  for (auto* u : s.units) {
    padded.push_back(std::make_unique<PaddedUnit>(*u, std::chrono::milliseconds(50),
                                                  std::chrono::milliseconds(20)));
    units.push_back(padded.back().get());
  }
  const auto cfg = uniform_pipeline(8, 0.050, 0.020);
  const double predicted = simulate_concurrent(cfg).makespan;
  EXPECT_NEAR(predicted, 0.420, 1e-12);
  const auto r = run_real(units, x, cfg);
  EXPECT_NEAR(r.timeline.makespan, predicted, 0.2 * predicted);
}

TEST(RunReal, LoadFailureNamesBlock) {
  Stack s(3);
  FailingUnit bad(true);
  std::vector<BlockUnit*> units = {s.units[0], &bad, s.units[2]};
  auto cfg = uniform_pipeline(3, 1, 1, 2);
  cfg.blocks[1].id = 41;
  Rng rng(4);
  try {
    run_real(units, rng.normal_tensor(s.spec.token_shape()), cfg);
    FAIL() << "expected PipelineError";
  } catch (const PipelineError& e) {
    EXPECT_EQ(e.block_id(), 41u);
    EXPECT_EQ(e.phase(), "load");
    EXPECT_NE(std::string(e.what()).find("disk gone"), std::string::npos);
  }
  for (auto& u : s.owned) EXPECT_FALSE(u->loaded());
}

TEST(RunReal, ExecFailureNamesBlock) {
  Stack s(3);
  FailingUnit bad(false);
  std::vector<BlockUnit*> units = {s.units[0], s.units[1], &bad};
  auto cfg = uniform_pipeline(3, 1, 1, 2);
  Rng rng(5);
  try {
    run_real(units, rng.normal_tensor(s.spec.token_shape()), cfg, RetentionPlan::prefix(cfg, 1));
    FAIL() << "expected PipelineError";
  } catch (const PipelineError& e) {
    EXPECT_EQ(e.block_id(), 2u);
    EXPECT_EQ(e.phase(), "exec");
  }
  EXPECT_FALSE(bad.loaded);
  for (auto& u : s.owned) EXPECT_FALSE(u->loaded());
}

TEST(RunReal, RejectsUnitCountMismatch) {
  Stack s(2);
  EXPECT_THROW(run_real(s.units, Tensor(s.spec.token_shape()), uniform_pipeline(3, 1, 1)),
               std::invalid_argument);
}
