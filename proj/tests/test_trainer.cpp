#include "dunet/trainer.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace dunet;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("dunet_trainer_" + tag + "_" +
                                        std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Small 32x32 samples: a bright blob painted at each landmark, so there is a
// learnable image-to-heatmap signal without full-size rendering.
Dataset blob_dataset(int n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset ds;
  for (int i = 0; i < n; ++i) {
    Sample s;
    s.image = Tensor<float>(1, 3, 32, 32);
    for (auto& v : s.image.vec()) v = static_cast<float>(rng.uniform(0.0, 0.15));
    for (int k = 0; k < 5; ++k) {
      const double x = rng.uniform(6.0, 26.0), y = rng.uniform(6.0, 26.0);
      s.landmarks.push_back({x, y});
      const int cx = static_cast<int>(x), cy = static_cast<int>(y);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          s.image.at(0, k % 3, cy + dy, cx + dx) = 1.0f;
        }
      }
    }
    s.id = "blob-" + std::to_string(i);
    ds.push_back(std::move(s));
  }
  return ds;
}

// Topology sized for those 32x32 samples (stem pools to 16).
StackSpec toy_spec(int stacks = 1) {
  StackSpec s;
  s.topology.kind = TopologyKind::Sat3;
  s.topology.down_steps = 3;
  s.topology.input_resolution = 16;
  s.topology.block = BlockSpec{BlockKind::Cab, 8, 4, 2};
  s.num_stacks = stacks;
  s.num_landmarks = 5;
  return s;
}

TrainConfig toy_train(int steps = 4) {
  TrainConfig c;
  c.batch = 2;
  c.total_steps = steps;
  return c;
}

std::vector<double> param_snapshot(ParamRegistry<float>& reg) {
  std::vector<double> out;
  for (auto& [name, var] : reg.params) {
    for (float v : var.tensor().vec()) out.push_back(v);
  }
  return out;
}

std::string file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST(LrSchedule, TwoDropsAtFixedRunFractions) {
  TrainConfig c;
  c.lr0 = 2.5e-4;
  c.total_steps = 30000;
  EXPECT_DOUBLE_EQ(lr_at(0, c), 2.5e-4);
  EXPECT_DOUBLE_EQ(lr_at(15999, c), 2.5e-4);
  EXPECT_DOUBLE_EQ(lr_at(16000, c), 5e-5);
  EXPECT_DOUBLE_EQ(lr_at(23999, c), 5e-5);
  EXPECT_DOUBLE_EQ(lr_at(24000, c), 1e-5);
  EXPECT_DOUBLE_EQ(lr_at(29999, c), 1e-5);
  // Toy runs inherit the same shape proportionally.
  c.total_steps = 3000;
  EXPECT_DOUBLE_EQ(lr_at(1599, c), 2.5e-4);
  EXPECT_DOUBLE_EQ(lr_at(1600, c), 5e-5);
  EXPECT_DOUBLE_EQ(lr_at(2400, c), 1e-5);
}

TEST(Nadam, ZeroBetasMatchClosedForm) {
  // With both betas zero the update must collapse to
  //   theta -= lr * g / (|g| + eps),
  // checked on f(theta) = theta^2 / 2 where g = theta.
  ParamRegistry<double> reg;
  Var<double> p(Tensor<double>::scalar(0.7), true);
  reg.add_param("p", p);
  OptimizerState<double> opt;
  opt.beta1 = 0.0;
  opt.beta2 = 0.0;
  opt.init(reg);
  const double lr = 0.1;
  double expected = 0.7;
  for (int k = 0; k < 5; ++k) {
    p.tensor().zero_grad();
    p.tensor().grad()[0] = p.tensor().vec()[0];
    nadam_apply(reg, opt, lr, 0.0);
    expected -= lr * expected / (std::abs(expected) + opt.eps);
    EXPECT_NEAR(p.tensor().vec()[0], expected, 1e-15) << "step " << k;
  }
  EXPECT_EQ(opt.step, 5);
}

TEST(Nadam, FirstStepMatchesHandDerivation) {
  ParamRegistry<double> reg;
  Var<double> p(Tensor<double>::scalar(1.0), true);
  reg.add_param("p", p);
  OptimizerState<double> opt;
  opt.init(reg);
  p.tensor().zero_grad();
  p.tensor().grad()[0] = 0.5;
  nadam_apply(reg, opt, 1e-2, 0.0);
  const double g = 0.5;
  const double m1 = 0.1 * g, v1 = 0.001 * g * g;
  const double mhat = m1 / (1.0 - std::pow(0.9, 2));
  const double ghat = g / (1.0 - 0.9);
  const double vhat = v1 / (1.0 - 0.999);
  const double upd = (0.9 * mhat + 0.1 * ghat) / (std::sqrt(vhat) + 1e-8);
  EXPECT_NEAR(p.tensor().vec()[0], 1.0 - 1e-2 * upd, 1e-15);
}

TEST(Nadam, GlobalNormClipRescalesUpdate) {
  // Two identical parameter sets; one gets its gradient clipped from norm 10
  // to 5, which must match feeding the pre-scaled gradient unclipped.
  for (double clip : {5.0}) {
    ParamRegistry<double> ra, rb;
    Var<double> a(Tensor<double>::scalar(1.0), true);
    Var<double> b(Tensor<double>::scalar(1.0), true);
    ra.add_param("p", a);
    rb.add_param("p", b);
    OptimizerState<double> oa, ob;
    oa.init(ra);
    ob.init(rb);
    a.tensor().zero_grad();
    a.tensor().grad()[0] = 10.0;
    b.tensor().zero_grad();
    b.tensor().grad()[0] = 5.0;
    const double norm = nadam_apply(ra, oa, 1e-3, clip);
    nadam_apply(rb, ob, 1e-3, 0.0);
    EXPECT_DOUBLE_EQ(norm, 10.0);  // reported norm is pre-clip
    EXPECT_DOUBLE_EQ(a.tensor().vec()[0], b.tensor().vec()[0]);
  }
}

TEST(TrainStep, ZeroLrLeavesParametersBitExact) {
  const Dataset ds = blob_dataset(4, 1);
  TrainConfig cfg = toy_train();
  cfg.lr0 = 0.0;
  TrainSession<float> session(toy_spec(), cfg);
  const auto before = param_snapshot(session.registry());
  session.step(ds);
  session.step(ds);
  EXPECT_EQ(param_snapshot(session.registry()), before);
}

TEST(TrainStep, FixedSeedIsBitReproducible) {
  const Dataset ds = blob_dataset(4, 2);
  TrainSession<float> a(toy_spec(), toy_train());
  TrainSession<float> b(toy_spec(), toy_train());
  const auto ra = a.step(ds);
  const auto rb = b.step(ds);
  EXPECT_EQ(ra.parts.total, rb.parts.total);
  EXPECT_EQ(ra.grad_norm, rb.grad_norm);
  EXPECT_EQ(param_snapshot(a.registry()), param_snapshot(b.registry()));
}

TEST(TrainStep, EveryStackHeadReceivesGradient) {
  const Dataset ds = blob_dataset(4, 3);
  TrainSession<float> session(toy_spec(2), toy_train());
  session.step(ds);
  int heads_seen = 0;
  for (auto& [name, var] : session.registry().params) {
    if (name.find("/head/kernel") == std::string::npos) continue;
    double sq = 0.0;
    for (float g : var.tensor().grad()) sq += static_cast<double>(g) * g;
    EXPECT_GT(sq, 0.0) << name;
    ++heads_seen;
  }
  EXPECT_EQ(heads_seen, 2);
}

TEST(TrainStep, LossFallsWithinFiftySteps) {
  const Dataset ds = blob_dataset(32, 4);
  TrainConfig cfg = toy_train(50);
  cfg.batch = 4;
  cfg.lr0 = 1e-3;
  TrainSession<float> session(toy_spec(), cfg);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 50; ++i) {
    const auto rep = session.step(ds);
    if (i == 0) first = rep.parts.total;
    last = rep.parts.total;
  }
  EXPECT_LT(last, first);
}

TEST(TrainStep, RunWritesJsonLinesLog) {
  const Dataset ds = blob_dataset(4, 5);
  TrainSession<float> session(toy_spec(), toy_train(3));
  std::ostringstream log;
  session.run(ds, &log);
  std::istringstream lines(log.str());
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("step").get<int>(), n);
    EXPECT_TRUE(j.contains("lr"));
    EXPECT_TRUE(j.contains("L_pp"));
    EXPECT_TRUE(j.contains("L_pg1"));
    EXPECT_TRUE(j.contains("L_pg2"));
    EXPECT_TRUE(j.contains("wall_ms"));
    ++n;
  }
  EXPECT_EQ(n, 3);
  EXPECT_EQ(session.step_count(), 3);
  // run() resumes from the current step: nothing more to do.
  session.run(ds, nullptr);
  EXPECT_EQ(session.step_count(), 3);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  TempDir td("ckpt");
  const Dataset ds = blob_dataset(4, 6);
  TrainSession<float> session(toy_spec(), toy_train());
  session.step(ds);
  session.step(ds);
  const std::string p1 = (td.path / "a.ckpt").string();
  const std::string p2 = (td.path / "b.ckpt").string();
  session.save(p1);
  auto restored = TrainSession<float>::load(p1);
  restored.save(p2);
  EXPECT_EQ(file_bytes(p1), file_bytes(p2));
  EXPECT_EQ(restored.step_count(), 2);
  EXPECT_EQ(param_snapshot(restored.registry()), param_snapshot(session.registry()));
}

TEST(Checkpoint, TruncatedFileIsAnIntegrityError) {
  TempDir td("trunc");
  const Dataset ds = blob_dataset(2, 7);
  TrainSession<float> session(toy_spec(), toy_train());
  session.step(ds);
  const std::string full = (td.path / "full.ckpt").string();
  session.save(full);
  const std::string bytes = file_bytes(full);
  for (double frac : {0.1, 0.5, 0.95}) {
    const std::string cut = (td.path / "cut.ckpt").string();
    std::ofstream(cut, std::ios::binary)
        << bytes.substr(0, static_cast<std::size_t>(bytes.size() * frac));
    EXPECT_THROW(TrainSession<float>::load(cut), ParseError) << frac;
  }
  const std::string junk = (td.path / "junk.ckpt").string();
  std::ofstream(junk, std::ios::binary) << "NOPE" << bytes.substr(4);
  EXPECT_THROW(TrainSession<float>::load(junk), ParseError);
  EXPECT_THROW(TrainSession<float>::load((td.path / "absent.ckpt").string()), IoError);
}

TEST(Checkpoint, ResumeMatchesUninterruptedRun) {
  TempDir td("resume");
  const Dataset ds = blob_dataset(6, 8);
  TrainConfig cfg = toy_train(6);
  TrainSession<float> straight(toy_spec(), cfg);
  straight.run(ds);

  TrainSession<float> half(toy_spec(), cfg);
  half.step(ds);
  half.step(ds);
  half.step(ds);
  const std::string mid = (td.path / "mid.ckpt").string();
  half.save(mid);
  auto resumed = TrainSession<float>::load(mid);
  resumed.run(ds);

  EXPECT_EQ(resumed.step_count(), 6);
  EXPECT_EQ(param_snapshot(resumed.registry()), param_snapshot(straight.registry()));
  // Running statistics must match too, or eval-mode outputs would drift.
  auto& ba = resumed.registry().buffers;
  auto& bb = straight.registry().buffers;
  ASSERT_EQ(ba.size(), bb.size());
  for (std::size_t i = 0; i < ba.size(); ++i) {
    EXPECT_EQ(ba[i].second->vec(), bb[i].second->vec()) << ba[i].first;
  }
}

TEST(RunConfig, ParsesFullDescription) {
  const auto j = nlohmann::json::parse(R"({
    "model": {
      "topology": {"kind": "sat3", "down_steps": 3, "width": 16,
                   "block": {"kind": "cab"}, "input_resolution": 64},
      "num_stacks": 2, "num_landmarks": 5, "with_deformable": true
    },
    "train": {"lr0": 2.5e-4, "batch": 8, "total_steps": 2000,
              "lambda": 0.001, "seed": 7},
    "data": {"synth": {"n_landmarks": 5, "seed": 7}, "n_train": 12, "n_eval": 4}
  })");
  const TrainRunConfig c = run_from_json(j);
  EXPECT_EQ(c.model.topology.kind, TopologyKind::Sat3);
  EXPECT_EQ(c.model.num_stacks, 2);
  EXPECT_TRUE(c.model.with_deformable);
  EXPECT_EQ(c.train.total_steps, 2000);
  EXPECT_EQ(c.train.seed, 7u);
  EXPECT_TRUE(c.use_synth);
  EXPECT_EQ(c.n_train, 12);
  EXPECT_EQ(c.n_eval, 4);
  // Round trip through JSON preserves the description.
  const TrainRunConfig c2 = run_from_json(run_to_json(c));
  EXPECT_EQ(run_to_json(c2), run_to_json(c));

  const auto [train, heldout] = load_run_datasets(c);
  EXPECT_EQ(train.size(), 12u);
  EXPECT_EQ(heldout.size(), 4u);
  // Held-out samples are disjoint continuations of the same stream.
  EXPECT_NE(train.back().id, heldout.front().id);
}

TEST(RunConfig, RejectsContradictorySources) {
  auto base = nlohmann::json::parse(R"({
    "model": {"topology": {"kind": "unet", "width": 8}, "num_landmarks": 5},
    "data": {"synth": {"n_landmarks": 5}}
  })");
  EXPECT_NO_THROW(run_from_json(base));
  auto both = base;
  both["data"]["manifest"] = "x.json";
  EXPECT_THROW(run_from_json(both), ConfigError);
  auto neither = base;
  neither["data"].erase("synth");
  EXPECT_THROW(run_from_json(neither), ConfigError);
  auto mismatch = base;
  mismatch["model"]["num_landmarks"] = 68;
  EXPECT_THROW(run_from_json(mismatch), ConfigError);
  auto typo = base;
  typo["train"] = {{"learning_rate", 0.1}};
  EXPECT_THROW(run_from_json(typo), ConfigError);
  auto badloss = base;
  badloss["train"] = {{"loss", "l1"}};
  EXPECT_THROW(run_from_json(badloss), ConfigError);
}

TEST(RunConfig, TopologyJsonRejectsNestedWidth) {
  auto j = nlohmann::json::parse(
      R"({"kind": "sat3", "down_steps": 3, "width": 16, "block": {"kind": "cab", "width": 8}})");
  EXPECT_THROW(topology_from_json(j), ConfigError);
  auto bare = nlohmann::json::parse(R"({"kind": "hourglass", "width": 16, "block": "hpm"})");
  const TopologySpec t = topology_from_json(bare);
  EXPECT_EQ(t.block.kind, BlockKind::Hpm);
  EXPECT_EQ(t.block.width, 16);
}
