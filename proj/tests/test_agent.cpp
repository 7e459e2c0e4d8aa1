#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "damq/agent.hpp"
#include "damq/random.hpp"

using namespace damq;

namespace {

const std::vector<int> kSmall{2049, 32, 16, 1};

Features random_features(std::mt19937_64& rng, int input = 2049) {
  std::set<std::uint16_t> bits;
  const int n = 5 + static_cast<int>(uniform_index(rng, 40));
  while (static_cast<int>(bits.size()) < n) bits.insert(static_cast<std::uint16_t>(uniform_index(rng, input - 1)));
  return {{bits.begin(), bits.end()}, static_cast<double>(uniform_index(rng, 11))};
}

Transition random_transition(std::mt19937_64& rng, bool terminal) {
  Transition t;
  t.result = random_features(rng);
  t.reward = 2.0 * uniform01(rng) - 1.0;
  t.terminal = terminal;
  if (!terminal) {
    for (int i = 0; i < 5; ++i) t.successors.push_back(random_features(rng));
  }
  return t;
}

// Dense reference forward pass, written independently of the library's
// sparse first layer.
double reference_q(const ModelParams& p, const Features& x) {
  Eigen::VectorXd a = Eigen::VectorXd::Zero(p.input_size());
  for (auto b : x.bits) a(b) = 1.0;
  a(p.input_size() - 1) = x.steps_remaining;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    Eigen::VectorXd z = p.layers[l].w * a + p.layers[l].b;
    a = l + 1 < p.layers.size() ? Eigen::VectorXd(z.cwiseMax(0.0)) : z;
  }
  return a(0);
}

}  // namespace

TEST(QValue, ZeroParamsGiveZero) {
  ModelParams p = ModelParams::zeros(kDefaultLayerSizes);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(q_value(p, random_features(rng)), 0.0);
}

TEST(QValue, DefaultArchitecture) {
  std::mt19937_64 rng(2);
  ModelParams p = ModelParams::random(kDefaultLayerSizes, rng);
  EXPECT_EQ(p.sizes(), (std::vector<int>{2049, 1024, 512, 128, 32, 1}));
  EXPECT_EQ(p.parameter_count(), 2049u * 1024 + 1024 + 1024 * 512 + 512 + 512 * 128 + 128 + 128 * 32 + 32 + 32 + 1);
  const Features x = random_features(rng);
  EXPECT_EQ(q_value(p, x), q_value(p, x));
  EXPECT_NEAR(q_value(p, x), reference_q(p, x), 1e-9);
}

TEST(QValue, BatchMatchesSingleAndReference) {
  std::mt19937_64 rng(3);
  ModelParams p = ModelParams::random(kSmall, rng);
  std::vector<Features> xs;
  for (int i = 0; i < 20; ++i) xs.push_back(random_features(rng));
  const Eigen::VectorXd q = q_values(p, xs);
  // Eigen uses GEMV for one column and blocked GEMM for many, so the
  // summation order and the last bits can differ.
  for (int i = 0; i < 20; ++i) {
    EXPECT_NEAR(q(i), q_value(p, xs[i]), 1e-14 * std::max(1.0, std::abs(q(i))));
    EXPECT_NEAR(q(i), reference_q(p, xs[i]), 1e-12);
  }
}

TEST(QValue, ShapeMismatch) {
  std::mt19937_64 rng(4);
  ModelParams p = ModelParams::random({65, 8, 1}, rng);
  Features x{{70}, 0.0};
  EXPECT_THROW(q_value(p, x), ShapeMismatch);
  EXPECT_THROW(ModelParams::zeros({10}), ShapeMismatch);
}

TEST(Huber, Values) {
  EXPECT_DOUBLE_EQ(huber(0.5), 0.125);
  EXPECT_DOUBLE_EQ(huber(-0.5), 0.125);
  EXPECT_DOUBLE_EQ(huber(3.0), 2.5);
  EXPECT_DOUBLE_EQ(huber(-3.0), 2.5);
}

TEST(Gradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  for (const auto& sizes : {kSmall, std::vector<int>{2049, 8, 1}, std::vector<int>{2049, 1}}) {
    ModelParams p = ModelParams::random(sizes, rng);
    for (auto& layer : p.layers) layer.b.setConstant(0.05);
    std::vector<Transition> ts;
    for (int i = 0; i < 6; ++i) ts.push_back(random_transition(rng, true));
    std::vector<const Transition*> batch;
    for (auto& t : ts) batch.push_back(&t);
    // Targets on both sides of the Huber kink.
    std::vector<double> y;
    for (auto* t : batch) y.push_back(q_value(p, t->result) + (y.size() % 2 ? 0.3 : -2.5));
    const auto lg = loss_and_gradient(p, batch, y);
    const auto analytic = lg.gradient.flatten();
    auto flat = p.flatten();
    double worst = 0.0;
    for (int k = 0; k < 300; ++k) {
      const std::size_t i = uniform_index(rng, flat.size());
      if (analytic[i] == 0.0 && k % 3) continue;  // mostly look at live coordinates
      const double h = 1e-6, orig = flat[i];
      ModelParams q = p;
      flat[i] = orig + h;
      q.assign(flat);
      const double up = loss_and_gradient(q, batch, y).loss;
      flat[i] = orig - h;
      q.assign(flat);
      const double down = loss_and_gradient(q, batch, y).loss;
      flat[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double scale = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-7});
      worst = std::max(worst, std::abs(numeric - analytic[i]) / scale);
    }
    EXPECT_LT(worst, 1e-4);
  }
}

TEST(Gradient, BatchLossIsMeanOfSampleLosses) {
  std::mt19937_64 rng(6);
  ModelParams p = ModelParams::random(kSmall, rng);
  std::vector<Transition> ts;
  for (int i = 0; i < 7; ++i) ts.push_back(random_transition(rng, true));
  std::vector<const Transition*> batch;
  std::vector<double> y;
  double sum = 0.0;
  for (auto& t : ts) {
    batch.push_back(&t);
    y.push_back(t.reward);
    const Transition* one = &t;
    sum += loss_and_gradient(p, std::span(&one, 1), std::span(&t.reward, 1)).loss;
  }
  EXPECT_NEAR(loss_and_gradient(p, batch, y).loss, sum / 7, 1e-12);
  EXPECT_THROW(loss_and_gradient(p, {}, {}), EmptyBatch);
}

TEST(TdTargets, TerminalAndBootstrapped) {
  std::mt19937_64 rng(7);
  ModelParams target = ModelParams::random(kSmall, rng);
  Transition term = random_transition(rng, true);
  Transition next = random_transition(rng, false);
  std::vector<const Transition*> batch{&term, &next};
  const auto y = td_targets(target, batch, 1.0);
  EXPECT_EQ(y[0], term.reward);
  double best = -1e300;
  for (const auto& s : next.successors) best = std::max(best, q_value(target, s));
  EXPECT_DOUBLE_EQ(y[1], next.reward + best);
}

TEST(TrainStep, ZeroLearningRateLeavesParams) {
  std::mt19937_64 rng(8);
  ModelParams p = ModelParams::random(kSmall, rng);
  const ModelParams before = p;
  Adam adam;
  Transition t = random_transition(rng, true);
  const Transition* batch[] = {&t};
  const double loss = train_step(p, p, adam, batch, 0.0);
  EXPECT_EQ(p, before);
  EXPECT_GT(loss, 0.0);
}

TEST(TrainStep, ConvergesOnSingleTerminalTransition) {
  std::mt19937_64 rng(9);
  ModelParams p = ModelParams::random(kSmall, rng);
  Adam adam;
  Transition t = random_transition(rng, true);
  t.reward = 0.75;
  const Transition* batch[] = {&t};
  double prev = std::abs(q_value(p, t.result) - t.reward);
  int converged_at = -1;
  for (int step = 1; step <= 5000; ++step) {
    train_step(p, p, adam, batch, 1e-4);
    const double err = std::abs(q_value(p, t.result) - t.reward);
    if (step > 10 && converged_at < 0) EXPECT_LE(err, prev) << "step " << step;
    prev = err;
    if (err < 1e-3 && converged_at < 0) converged_at = step;
  }
  EXPECT_GT(converged_at, 0);
  EXPECT_LE(converged_at, 5000);
}

TEST(ReplayBuffer, FifoEviction) {
  ReplayBuffer buf(4000);
  for (int i = 0; i < 4001; ++i) {
    Transition t;
    t.reward = i;
    buf.push(std::move(t));
  }
  EXPECT_EQ(buf.size(), 4000u);
  EXPECT_EQ(buf.items().front().reward, 1.0);
  EXPECT_EQ(buf.items().back().reward, 4000.0);
}

TEST(ReplayBuffer, SampleWithoutReplacement) {
  ReplayBuffer buf;
  for (int i = 0; i < 10; ++i) {
    Transition t;
    t.reward = i;
    buf.push(std::move(t));
  }
  std::mt19937_64 rng(10);
  auto all = buf.sample(128, rng);
  EXPECT_EQ(all.size(), 10u);
  std::set<const Transition*> distinct(all.begin(), all.end());
  EXPECT_EQ(distinct.size(), 10u);
  for (int round = 0; round < 50; ++round) {
    auto some = buf.sample(4, rng);
    ASSERT_EQ(some.size(), 4u);
    std::set<const Transition*> s(some.begin(), some.end());
    EXPECT_EQ(s.size(), 4u);
    for (auto* t : some) EXPECT_TRUE(std::any_of(buf.items().begin(), buf.items().end(), [&](auto& x) { return &x == t; }));
  }
}

TEST(Epsilon, Schedule) {
  EpsilonSchedule e{1.0, 0.999};
  EXPECT_NEAR(e.at(100), 0.90479214711370904, 1e-12);
  EXPECT_NEAR(e.at(100), std::pow(0.999, 100), 1e-15);
  EXPECT_DOUBLE_EQ(e.at(0), 1.0);
  EXPECT_DOUBLE_EQ(e.at(100000), 0.01);
  EXPECT_DOUBLE_EQ((EpsilonSchedule{0.5, 0.961}.at(0)), 0.5);
}

TEST(SelectAction, EpsilonOneIsUniform) {
  std::mt19937_64 rng(11);
  ModelParams p = ModelParams::random(kSmall, rng);
  std::vector<Features> cands;
  for (int i = 0; i < 8; ++i) cands.push_back(random_features(rng));
  std::vector<int> counts(8);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) ++counts[select_action(p, cands, 1.0, rng)];
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - draws / 8.0) * (c - draws / 8.0) / (draws / 8.0);
  // 7 degrees of freedom; p = 0.01 at 18.475.
  EXPECT_LT(chi2, 18.475);
}

TEST(SelectAction, GreedyPicksMaximum) {
  std::mt19937_64 rng(12);
  ModelParams p = ModelParams::random(kSmall, rng);
  std::vector<Features> cands;
  for (int i = 0; i < 30; ++i) cands.push_back(random_features(rng));
  const Eigen::VectorXd q = q_values(p, cands);
  Eigen::Index best;
  q.maxCoeff(&best);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(select_action(p, cands, 0.0, rng), static_cast<std::size_t>(best));

  // Positive affine transform of every Q value: scale and shift the output layer.
  ModelParams scaled = p;
  scaled.layers.back().w *= 3.5;
  scaled.layers.back().b = scaled.layers.back().b * 3.5 + Eigen::VectorXd::Constant(1, -7.0);
  EXPECT_EQ(select_action(scaled, cands, 0.0, rng), static_cast<std::size_t>(best));
}

TEST(SelectAction, TiesGoToLowestIndex) {
  ModelParams zero = ModelParams::zeros(kSmall);
  std::mt19937_64 rng(13);
  std::vector<Features> cands{random_features(rng), random_features(rng), random_features(rng)};
  EXPECT_EQ(select_action(zero, cands, 0.0, rng), 0u);
}

TEST(CapSuccessors, KeepsOrderAndCap) {
  std::mt19937_64 rng(14);
  std::vector<Features> cands;
  for (int i = 0; i < 300; ++i) cands.push_back({{}, static_cast<double>(i)});
  auto kept = cap_successors(cands, 256, rng);
  ASSERT_EQ(kept.size(), 256u);
  for (std::size_t i = 1; i < kept.size(); ++i) EXPECT_LT(kept[i - 1].steps_remaining, kept[i].steps_remaining);
  EXPECT_EQ(cap_successors(std::vector<Features>(cands.begin(), cands.begin() + 10), 256, rng).size(), 10u);
}

TEST(SyncTarget, CopiesOnline) {
  AgentConfig cfg;
  cfg.layer_sizes = kSmall;
  Agent agent(cfg, 15);
  std::mt19937_64 rng(15);
  for (int i = 0; i < 20; ++i) agent.remember(random_transition(rng, i % 2 == 0), rng);
  agent.apply_gradient(agent.compute_gradient(rng).gradient);
  EXPECT_FALSE(agent.params() == agent.target());
  agent.sync_target();
  EXPECT_EQ(agent.params(), agent.target());
  const Features x = random_features(rng);
  EXPECT_EQ(q_value(agent.params(), x), q_value(agent.target(), x));
  agent.sync_target();
  EXPECT_EQ(agent.params(), agent.target());
}

TEST(Agent, MemoizedTargetsMatchDirectComputation) {
  AgentConfig cfg;
  cfg.layer_sizes = kSmall;
  cfg.batch_cap = 8;
  Agent a(cfg, 16), b(cfg, 16);
  std::mt19937_64 rng(16), ra(17), rb(17);
  for (int i = 0; i < 12; ++i) {
    Transition t = random_transition(rng, i % 3 == 0);
    std::mt19937_64 r1(i), r2(i);
    a.remember(t, r1);
    b.remember(t, r2);
  }
  // a trains on the same batches as b; b recomputes targets from scratch.
  for (int step = 0; step < 5; ++step) {
    auto ga = a.compute_gradient(ra);
    auto batch = b.buffer().sample(cfg.batch_cap, rb);
    auto y = td_targets(b.target(), batch, 1.0);
    auto gb = loss_and_gradient(b.params(), batch, y);
    EXPECT_EQ(ga.loss, gb.loss);
    EXPECT_EQ(ga.gradient, gb.gradient);
    a.apply_gradient(ga.gradient);
    b.apply_gradient(gb.gradient);
    if (step == 2) {
      a.sync_target();
      b.sync_target();
    }
  }
}

TEST(Checkpoint, RoundTrip) {
  std::mt19937_64 rng(18);
  ModelParams p = ModelParams::random({2049, 16, 4, 1}, rng);
  const std::string bytes = encode_params(p);
  EXPECT_EQ(bytes.substr(0, 5), "DAMQ1");
  EXPECT_EQ(bytes.size(), 5 + 4 + 4 * 4 + 8 * p.parameter_count() + 8);
  EXPECT_EQ(decode_params(bytes), p);
  const auto path = std::filesystem::temp_directory_path() / "damq_agent_test.ckpt";
  save_checkpoint(p, path.string());
  EXPECT_EQ(load_checkpoint(path.string()), p);
  std::filesystem::remove(path);
}

TEST(Checkpoint, LittleEndianLayout) {
  ModelParams p = ModelParams::zeros({2, 1});
  p.layers[0].w(0, 0) = 1.0;  // 0x3ff0000000000000
  const std::string bytes = encode_params(p);
  const std::size_t first = 5 + 4 + 2 * 4;
  EXPECT_EQ(static_cast<unsigned char>(bytes[first + 7]), 0x3f);
  EXPECT_EQ(static_cast<unsigned char>(bytes[first + 6]), 0xf0);
  EXPECT_EQ(static_cast<unsigned char>(bytes[first]), 0x00);
}

TEST(Checkpoint, DetectsCorruption) {
  std::mt19937_64 rng(19);
  ModelParams p = ModelParams::random({2049, 8, 1}, rng);
  std::string bytes = encode_params(p);
  std::string flipped = bytes;
  flipped[100] ^= 1;
  EXPECT_THROW(decode_params(flipped), CheckpointError);
  EXPECT_THROW(decode_params(bytes.substr(0, bytes.size() - 1)), CheckpointError);
  EXPECT_THROW(decode_params("DAMQ2" + bytes.substr(5)), CheckpointError);
  EXPECT_THROW(load_checkpoint("/nonexistent/damq.ckpt"), CheckpointError);
  EXPECT_EQ(params_checksum(p), params_checksum(decode_params(bytes)));
  ModelParams q = p;
  q.layers[0].b(0) += 1e-12;
  EXPECT_NE(params_checksum(p), params_checksum(q));
}

TEST(Agent, DeterministicTrajectory) {
  AgentConfig cfg;
  cfg.layer_sizes = kSmall;
  auto run = [&] {
    Agent agent(cfg, 20);
    std::mt19937_64 rng(21);
    for (int i = 0; i < 40; ++i) {
      agent.remember(random_transition(rng, i % 4 == 3), rng);
      if (i % 5 == 4) agent.apply_gradient(agent.compute_gradient(rng).gradient);
      if (i % 10 == 9) agent.sync_target();
    }
    return encode_params(agent.params());
  };
  EXPECT_EQ(run(), run());
}
