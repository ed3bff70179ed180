#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "mgdpr/synthetic.hpp"
#include "mgdpr/training.hpp"

using namespace mgdpr;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.num_stocks = 4;
  c.window = 5;
  c.num_layers = 1;
  c.expansion_steps = 2;
  c.embed_dim = 8;
  return c;
}

std::vector<Example> tiny_examples(std::uint64_t seed = 5) {
  synthetic::PlantedMarketConfig pc;
  pc.stocks = 4;
  pc.days = 16;
  pc.window = 5;
  pc.seed = seed;
  auto panel = align_panel(synthetic::planted_market(pc));
  return make_examples(make_windows(panel, 5), true);
}

ad::Var logits_of(std::initializer_list<double> v) {
  return ad::Var::constant(Tensor(Shape{v.size() / 2, 2}, std::vector<double>(v)));
}

}  // namespace

TEST(CrossEntropy, SaturatedCorrectIsNearZero) {
  ad::Tape tape;
  EXPECT_LT(cross_entropy(tape, logits_of({10, -10}), {0}).value()[0], 1e-4);
}

TEST(CrossEntropy, UniformIsLn2) {
  ad::Tape tape;
  EXPECT_NEAR(cross_entropy(tape, logits_of({0, 0}), {0}).value()[0], std::log(2.0), 1e-15);
  EXPECT_NEAR(cross_entropy(tape, logits_of({0, 0, 0, 0}), {1, 0}).value()[0], std::log(2.0), 1e-15);
}

TEST(CrossEntropy, RejectsBadLabels) {
  ad::Tape tape;
  EXPECT_THROW(cross_entropy(tape, logits_of({0, 0}), {2}), DataError);
  EXPECT_THROW(cross_entropy(tape, logits_of({0, 0}), {-1}), DataError);
  EXPECT_THROW(cross_entropy(tape, logits_of({0, 0}), {0, 1}), DimensionError);
}

TEST(CrossEntropy, GradientIsSoftmaxMinusOneHot) {
  ad::Tape tape;
  auto x = ad::Var::parameter(Tensor(Shape{2, 2}, {1.0, -0.5, 0.25, 2.0}));
  tape.backward(cross_entropy(tape, x, {0, 1}));
  const Tensor g = x.grad();
  for (std::size_t i = 0; i < 2; ++i) {
    const double a = x.value().at(i, 0), b = x.value().at(i, 1);
    const double p1 = 1.0 / (1.0 + std::exp(a - b));
    const double y1 = i == 1 ? 1.0 : 0.0;
    EXPECT_NEAR(g.at(i, 1), (p1 - y1) / 2.0, 1e-15);
    EXPECT_NEAR(g.at(i, 0), (y1 - p1) / 2.0, 1e-15);
  }
}

TEST(Objective, MeanOverDaysPlusZeroConstraint) {
  auto cfg = tiny_config();
  MgdprModel model(cfg, 1);
  ad::Tape tape;
  std::vector<ad::Var> logits{logits_of({0, 0, 1, -1}), logits_of({2, 0, 0, 3})};
  std::vector<std::vector<int>> labels{{1, 0}, {0, 1}};
  auto obj = objective(tape, logits, labels, model.gammas(tape));
  auto ce = [](double a, double b, int y) { return std::log(std::exp(a) + std::exp(b)) - (y ? b : a); };
  const double day0 = (ce(0, 0, 1) + ce(1, -1, 0)) / 2, day1 = (ce(2, 0, 0) + ce(0, 3, 1)) / 2;
  EXPECT_NEAR(obj.cross_entropy, (day0 + day1) / 2, 1e-14);
  EXPECT_LT(std::abs(obj.constraint), 1e-9);
  EXPECT_NEAR(obj.loss.value()[0], obj.cross_entropy + obj.constraint, 1e-15);
  EXPECT_THROW(objective(tape, logits, {{1, 0}}, {}), UsageError);
}

TEST(Objective, ConstraintTermOfSoftmaxGammasVanishes) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-8, 8);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> raw(5 * 7);
    for (auto& v : raw) v = u(rng);
    ad::Tape tape;
    auto g = materialize_gamma(tape, ad::Var::parameter(Tensor(Shape{5, 7}, raw)));
    EXPECT_LT(std::abs(constraint_term(tape, {g, g}).value()[0]), 1e-9);
  }
}

TEST(Adam, FirstStepMovesByLearningRateAgainstGradientSign) {
  auto w = ad::Var::parameter(Tensor(Shape{3}, {1.0, -2.0, 0.5}));
  TrainConfig tc;
  tc.learning_rate = 0.1;
  Adam opt({w}, tc);
  ad::Tape tape;
  // d/dw sum(w * c) = c
  tape.backward(tape.sum(tape.hadamard(w, ad::Var::constant(Tensor(Shape{3}, {2.0, -3.0, 1e-3})))));
  opt.step();
  EXPECT_NEAR(w.value()[0], 1.0 - 0.1 * 2.0 / (2.0 + 1e-8), 1e-15);
  EXPECT_NEAR(w.value()[1], -2.0 + 0.1 * 3.0 / (3.0 + 1e-8), 1e-15);
  EXPECT_NEAR(w.value()[2], 0.5 - 0.1 * 1e-3 / (1e-3 + 1e-8), 1e-15);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(Adam, SecondStepUsesBiasCorrectedMoments) {
  auto w = ad::Var::parameter(Tensor(Shape{1}, {0.0}));
  TrainConfig tc;
  tc.learning_rate = 0.5;
  Adam opt({w}, tc);
  const double g1 = 4.0, g2 = -1.0;
  for (double g : {g1, g2}) {
    w.zero_grad();
    ad::Tape tape;
    tape.backward(tape.scale(tape.sum(w), g));
    opt.step();
  }
  const double m = (0.1 * 0.9 * g1 + 0.1 * g2) / (1 - 0.81);
  const double v = (0.001 * 0.999 * g1 * g1 + 0.001 * g2 * g2) / (1 - 0.999 * 0.999);
  const double expected = -0.5 * g1 / (std::abs(g1) + 1e-8) - 0.5 * m / (std::sqrt(v) + 1e-8);
  EXPECT_NEAR(w.value()[0], expected, 1e-12);
}

TEST(Train, ZeroEpochsKeepsInitialParams) {
  auto cfg = tiny_config();
  MgdprModel model(cfg, 3);
  const auto before = model.params().snapshot();
  auto ex = tiny_examples();
  TrainConfig tc;
  tc.epochs = 0;
  auto res = train(model, ex, {}, tc);
  EXPECT_EQ(model.params().snapshot(), before);
  EXPECT_TRUE(res.trace.empty());
  EXPECT_EQ(res.best_epoch, 0u);
}

TEST(Train, SameSeedIsBitIdentical) {
  auto cfg = tiny_config();
  auto ex = tiny_examples();
  std::vector<Example> tr(ex.begin(), ex.begin() + 7), va(ex.begin() + 7, ex.end());
  TrainConfig tc;
  tc.epochs = 6;
  tc.learning_rate = 1e-2;
  MgdprModel a(cfg, 9), b(cfg, 9);
  auto ra = train(a, tr, va, tc);
  auto rb = train(b, tr, va, tc);
  ASSERT_EQ(ra.trace.size(), 6u);
  for (std::size_t e = 0; e < ra.trace.size(); ++e) {
    EXPECT_EQ(ra.trace[e].loss, rb.trace[e].loss);
    EXPECT_EQ(ra.trace[e].val_accuracy, rb.trace[e].val_accuracy);
  }
  EXPECT_EQ(a.params().snapshot(), b.params().snapshot());
}

TEST(Train, KeepsBestValidationParams) {
  auto cfg = tiny_config();
  auto ex = tiny_examples();
  std::vector<Example> tr(ex.begin(), ex.begin() + 7), va(ex.begin() + 7, ex.end());
  TrainConfig tc;
  tc.epochs = 15;
  tc.learning_rate = 2e-2;
  MgdprModel model(cfg, 4);
  const double initial = evaluate(model, va).accuracy;
  auto res = train(model, tr, va, tc);
  double best = initial;
  std::size_t best_epoch = 0;
  for (const auto& r : res.trace) {
    if (r.val_accuracy > best) {
      best = r.val_accuracy;
      best_epoch = r.epoch;
    }
  }
  EXPECT_EQ(res.best_epoch, best_epoch);
  EXPECT_EQ(res.best_val_accuracy, best);
  EXPECT_EQ(evaluate(model, va).accuracy, best);
  EXPECT_EQ(model.params().snapshot(), res.best_params);
}

TEST(Train, ConstraintTermZeroAtEveryEpoch) {
  auto cfg = tiny_config();
  cfg.num_layers = 2;
  auto ex = tiny_examples();
  TrainConfig tc;
  tc.epochs = 20;
  tc.learning_rate = 5e-2;
  MgdprModel model(cfg, 6);
  auto res = train(model, ex, {}, tc);
  for (const auto& r : res.trace) EXPECT_LT(std::abs(r.constraint), 1e-9) << "epoch " << r.epoch;
}

TEST(Train, MiniBatchTakesOneStepPerBatch) {
  auto cfg = tiny_config();
  auto ex = tiny_examples();
  TrainConfig full, mini;
  full.epochs = mini.epochs = 1;
  mini.batch_size = 1;
  MgdprModel a(cfg, 2), b(cfg, 2);
  train(a, ex, {}, full);
  train(b, ex, {}, mini);
  // one Adam step moves each weight by at most ~lr; n steps by up to n * lr
  double da = 0, db = 0;
  const auto init = MgdprModel(cfg, 2).params().snapshot();
  const auto pa = a.params().snapshot(), pb = b.params().snapshot();
  for (std::size_t i = 0; i < init.size(); ++i) {
    for (std::size_t j = 0; j < init[i].size(); ++j) {
      da = std::max(da, std::abs(pa[i][j] - init[i][j]));
      db = std::max(db, std::abs(pb[i][j] - init[i][j]));
    }
  }
  EXPECT_LE(da, full.learning_rate * 1.0001);
  EXPECT_GT(db, full.learning_rate * 1.5);
}

TEST(Train, NonFiniteInputIsDivergence) {
  auto cfg = tiny_config();
  auto ex = tiny_examples();
  ex[2].features[3] = std::numeric_limits<double>::infinity();
  MgdprModel model(cfg, 1);
  TrainConfig tc;
  tc.epochs = 3;
  try {
    train(model, ex, {}, tc);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("0.00025"), std::string::npos) << msg;
  }
}

TEST(Train, LossMostlyDecreasesOverFirstEpochsOnPlantedMarket) {
  synthetic::PlantedMarketConfig pc;
  auto panel = align_panel(synthetic::planted_market(pc));
  auto ex = make_examples(make_windows(panel, 21), true);
  ex.resize(24);
  ModelConfig mc;
  mc.num_stocks = 12;
  mc.embed_dim = 32;
  mc.num_layers = 2;
  mc.expansion_steps = 2;
  MgdprModel model(mc, 0);
  TrainConfig tc;
  tc.epochs = 11;
  auto res = train(model, ex, {}, tc);
  int bumps = 0;
  for (std::size_t e = 1; e < res.trace.size(); ++e) bumps += res.trace[e].loss > res.trace[e - 1].loss;
  EXPECT_LE(bumps, 2);
}

TEST(Evaluate, EmptyIsUsageError) {
  MgdprModel model(tiny_config(), 1);
  EXPECT_THROW(evaluate(model, {}), UsageError);
}

TEST(Evaluate, ConstantDownModelScoresClassZeroFraction) {
  auto cfg = tiny_config();
  MgdprModel model(cfg, 1);
  auto& p = model.params();
  p.readout_w2.assign(Tensor(p.readout_w2.shape(), 0.0));
  p.readout_b2.assign(Tensor(Shape{2}, {1.0, 0.0}));
  auto ex = tiny_examples();
  auto rep = evaluate(model, ex);
  std::size_t zeros = 0, total = 0;
  for (const auto& e : ex) {
    for (int y : e.labels) {
      zeros += y == 0;
      ++total;
    }
  }
  EXPECT_EQ(rep.confusion.total(), cfg.num_stocks * ex.size());
  EXPECT_EQ(rep.days, ex.size());
  EXPECT_EQ(rep.accuracy, double(zeros) / double(total));
  EXPECT_EQ(rep.confusion.tp + rep.confusion.fp, 0u);
  EXPECT_EQ(rep.accuracy, double(rep.confusion.tp + rep.confusion.tn) / double(rep.confusion.total()));
  EXPECT_EQ(rep.mcc, 0.0);
  EXPECT_EQ(rep.f1, 0.0);
}
