#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "nid/metric_learner.hpp"
#include "oracles.hpp"

using namespace nid;
using namespace nid::metric;

namespace {

// Two domains with two intents each, `per` rows per intent.
View toy_seen(std::size_t per, std::uint64_t seed, std::size_t dim = 6) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.1);
  View v;
  v.x = Matrix(0, dim);
  const char* intents[] = {"a1", "a2", "b1", "b2"};
  const char* domains[] = {"A", "A", "B", "B"};
  for (std::size_t k = 0; k < 4; ++k) {
    for (std::size_t r = 0; r < per; ++r) {
      std::vector<double> row(dim);
      for (std::size_t j = 0; j < dim; ++j) row[j] = g(rng);
      row[k % dim] += 1.0;
      row[(k / 2 + 4) % dim] += 1.0;
      v.push_back({std::string(intents[k]) + "-" + std::to_string(r), {}, intents[k], domains[k],
                   Split::train_seen},
                  row);
    }
  }
  return v;
}

EncoderNet random_net(std::size_t d, std::size_t h, std::size_t e, std::mt19937_64& rng) {
  EncoderNet net = zero_net(d, h, e);
  std::normal_distribution<double> g(0.0, 0.5);
  for (double& v : net.w1.storage()) v = g(rng);
  for (double& v : net.b1) v = g(rng);
  for (double& v : net.w2.storage()) v = g(rng);
  for (double& v : net.b2) v = g(rng);
  return net;
}

}  // namespace

TEST(Forward, ZeroNetGivesZeros) {
  const auto a = forward(zero_net(3, 4, 2), std::vector<double>{1, 2, 3});
  EXPECT_EQ(a.e, std::vector<double>(4, 0.0));
  EXPECT_EQ(a.emb, std::vector<double>(2, 0.0));
}

TEST(Forward, IdentityFirstLayerIsNearLinearForSmallInputs) {
  EncoderNet net = zero_net(3, 3, 3);
  for (std::size_t i = 0; i < 3; ++i) net.w1(i, i) = 1.0;
  const std::vector<double> x{0.01, -0.02, 0.03};
  const auto a = forward(net, x);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a.e[i], x[i], 1e-3);
}

TEST(Forward, HiddenLayerIsBounded) {
  std::mt19937_64 rng(5);
  const auto net = random_net(4, 6, 2, rng);
  const auto a = forward(net, std::vector<double>{100, -100, 50, 7});
  for (double v : a.e) EXPECT_LE(std::abs(v), 1.0);
  EXPECT_THROW(forward(net, std::vector<double>{1, 2}), DataError);
}

TEST(Hinge, Examples) {
  const LossConfig cfg{};
  EXPECT_DOUBLE_EQ(hinge_loss({0.1, 0.5, 0.9}, cfg), 0.0);
  EXPECT_NEAR(hinge_loss({0.5, 0.4, 0.6}, cfg), 0.15 + 0.0 + 0.0, 1e-15);
  // 0.15 from the first term, 0.05 from the second.
  EXPECT_NEAR(hinge_loss({0.5, 0.4, 0.5}, cfg), 0.15 + 0.05 + 0.0, 1e-15);
  const LossConfig only_first{0.05, 0.05, 0.05, 0.0, 0.0};
  EXPECT_NEAR(hinge_loss({0.5, 0.3, 0.0}, only_first), 0.25, 1e-15);
  EXPECT_DOUBLE_EQ(hinge_loss({0.1, 0.5, 0.0}, only_first), 0.0);
}

TEST(Hinge, InvalidConfig) {
  EXPECT_THROW((LossConfig{-0.1, 0.05, 0.05, 1, 1}.validate()), ConfigError);
  EXPECT_THROW((LossConfig{0.05, 0.05, 0.05, -1, 1}.validate()), ConfigError);
}

TEST(CosineDistance, ScaleInvariantWithZeroConvention) {
  const std::vector<double> u{1, 2, 3}, v{-2, 0.5, 4};
  std::vector<double> u3{3, 6, 9}, v7{-14, 3.5, 28};
  EXPECT_NEAR(cosine_distance(u, v), cosine_distance(u3, v7), 1e-15);
  EXPECT_NEAR(cosine_distance(u, u), 0.0, 1e-15);
  EXPECT_EQ(cosine_distance(std::vector<double>{0, 0, 0}, v), 1.0);
  const std::vector<double> neg{-1, -2, -3};
  EXPECT_NEAR(cosine_distance(u, neg), 2.0, 1e-15);
}

TEST(Gradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  const auto seen = toy_seen(4, 2);
  const auto sample = sample_quadruplets(seen, 2, 3);
  const LossConfig cfg{0.3, 0.3, 0.3, 1.0, 1.0};  // wide margins keep every hinge active
  for (int trial = 0; trial < 5; ++trial) {
    const auto net = random_net(6, 5, 3, rng);
    NetGradient g;
    const double loss = loss_gradients(net, seen.x, sample.quadruplets, cfg, g);
    EXPECT_NEAR(loss, mean_loss(net, seen.x, sample.quadruplets, cfg), 1e-12);
    const auto numeric = oracle::numeric_gradient(net, seen.x, sample.quadruplets, cfg, 1e-5);
    EXPECT_LT(oracle::relative_error(oracle::flatten(g), numeric), 1e-6);
    for (double v : g.w2.storage()) EXPECT_EQ(v, 0.0);
    for (double v : g.b2) EXPECT_EQ(v, 0.0);
  }
}

TEST(Gradient, InactiveHingesGiveZero) {
  EncoderNet net = zero_net(2, 2, 1);
  net.w1(0, 0) = 1.0;
  net.w1(1, 1) = 1.0;
  Matrix x(0, 2);
  for (auto row : {std::vector<double>{1, 0}, {1, 0.01}, {0.5, 0.5}, {0, 1}}) x.append_row(row);
  const std::vector<Quadruplet> batch{{0, 1, 2, 3}};
  NetGradient g;
  EXPECT_EQ(loss_gradients(net, x, batch, LossConfig{}, g), 0.0);
  for (double v : g.w1.storage()) EXPECT_EQ(v, 0.0);
  for (double v : g.b1) EXPECT_EQ(v, 0.0);
}

TEST(Gradient, DuplicatedBatchHasSameMean) {
  std::mt19937_64 rng(4);
  const auto seen = toy_seen(3, 9);
  const auto sample = sample_quadruplets(seen, 1, 1);
  auto twice = sample.quadruplets;
  twice.insert(twice.end(), sample.quadruplets.begin(), sample.quadruplets.end());
  const auto net = random_net(6, 4, 2, rng);
  const LossConfig cfg{0.3, 0.3, 0.3, 1.0, 1.0};
  NetGradient a, b;
  EXPECT_NEAR(loss_gradients(net, seen.x, sample.quadruplets, cfg, a),
              loss_gradients(net, seen.x, twice, cfg, b), 1e-12);
  EXPECT_LT(oracle::relative_error(oracle::flatten(a), oracle::flatten(b)), 1e-12);
  EXPECT_THROW(loss_gradients(net, seen.x, {}, cfg, a), DataError);
}

TEST(Sampling, QuadrupletsRespectCategories) {
  const auto seen = toy_seen(3, 1);
  const auto s = sample_quadruplets(seen, 4, 7);
  EXPECT_EQ(s.skipped_anchors, 0u);
  EXPECT_EQ(s.quadruplets.size(), seen.size() * 4);
  for (const auto& q : s.quadruplets) {
    EXPECT_NE(q.anchor, q.same_intent);
    EXPECT_EQ(*seen.intents[q.anchor], *seen.intents[q.same_intent]);
    EXPECT_EQ(*seen.domains[q.anchor], *seen.domains[q.same_domain]);
    EXPECT_NE(*seen.intents[q.anchor], *seen.intents[q.same_domain]);
    EXPECT_NE(*seen.domains[q.anchor], *seen.domains[q.diff_domain]);
  }
  EXPECT_EQ(sample_quadruplets(seen, 4, 7).quadruplets, s.quadruplets);
}

TEST(Sampling, AnchorsWithoutCompanionsAreSkipped) {
  auto seen = toy_seen(2, 1);
  // A lone row of a fresh intent in domain A has no same-intent partner.
  seen.push_back({"lone", {}, "a3", "A", Split::train_seen}, std::vector<double>(6, 0.3));
  const auto s = sample_quadruplets(seen, 1, 0);
  EXPECT_EQ(s.skipped_anchors, 1u);
  EXPECT_EQ(s.quadruplets.size(), seen.size() - 1);
}

TEST(Sampling, SingleDomainIsAnError) {
  View v;
  v.x = Matrix(0, 2);
  for (int i = 0; i < 4; ++i) {
    v.push_back({"u" + std::to_string(i), {}, i < 2 ? "x" : "y", "D", Split::train_seen},
                std::vector<double>{double(i), 1});
  }
  EXPECT_THROW(sample_quadruplets(v, 1, 0), DataError);
  v.intents[0].reset();
  EXPECT_THROW(sample_quadruplets(v, 1, 0), DataError);
}

TEST(Training, LossDecreasesAndIsDeterministic) {
  const auto seen = toy_seen(8, 3);
  MetricTrainConfig cfg;
  cfg.hidden = 16;
  cfg.output = 4;
  cfg.epochs = 30;
  cfg.learning_rate = 1e-2;
  cfg.rng_seed = 42;
  const LossConfig loss{0.3, 0.3, 0.3, 1.0, 1.0};
  const auto fit = train_metric(seen, loss, cfg);
  EXPECT_EQ(fit.loss_history.size(), 30u);
  EXPECT_LT(fit.final_loss, fit.initial_loss);
  const auto again = train_metric(seen, loss, cfg);
  EXPECT_EQ(again.net, fit.net);
  EXPECT_EQ(again.loss_history, fit.loss_history);
}

TEST(Training, ZeroEpochsReturnsInitialNet) {
  const auto seen = toy_seen(3, 3);
  MetricTrainConfig cfg;
  cfg.hidden = 5;
  cfg.output = 2;
  cfg.epochs = 0;
  cfg.rng_seed = 8;
  const auto fit = train_metric(seen, LossConfig{}, cfg);
  EXPECT_EQ(fit.net, xavier_net(6, 5, 2, 8));
  EXPECT_TRUE(fit.loss_history.empty());
}

TEST(Training, InvalidConfig) {
  const auto seen = toy_seen(3, 3);
  MetricTrainConfig cfg;
  cfg.batch_quadruplets = 0;
  EXPECT_THROW(train_metric(seen, LossConfig{}, cfg), ConfigError);
  EXPECT_THROW(train_metric(View{}, LossConfig{}, MetricTrainConfig{}), DataError);
}

TEST(EmbedAll, ShapesAndEmptyInput) {
  const auto net = xavier_net(768, 8, 5, 1);
  EmbeddingSet raw;
  raw.matrix = Matrix(1000, 768, 0.01);
  for (int i = 0; i < 1000; ++i) raw.ids.push_back("r" + std::to_string(i));
  const auto out = embed_all(net, raw);
  EXPECT_EQ(out.matrix.rows(), 1000u);
  EXPECT_EQ(out.matrix.cols(), 5u);
  EXPECT_EQ(out.space, SpaceTag::Emb);
  EXPECT_EQ(embed_all(net, EmbeddingSet{}).size(), 0u);
}

TEST(EncoderJson, RoundTrip) {
  const auto net = xavier_net(3, 4, 2, 9);
  EXPECT_EQ(net_from_json(to_json(net)), net);
  auto j = to_json(net);
  j["hidden_dim"] = 5;
  EXPECT_THROW(net_from_json(j), DataError);
}

TEST(Defaults, MatchPublishedHyperparameters) {
  const LossConfig loss;
  EXPECT_EQ(loss.m1, 0.05);
  EXPECT_EQ(loss.m2, 0.05);
  EXPECT_EQ(loss.m3, 0.05);
  EXPECT_EQ(loss.alpha, 1.0);
  EXPECT_EQ(loss.beta, 1.0);
  const MetricTrainConfig train;
  EXPECT_EQ(train.batch_quadruplets, 64u);
  EXPECT_EQ(train.epochs, 15u);
  EXPECT_EQ(train.adam_beta1, 0.9);
  EXPECT_EQ(train.adam_beta2, 0.999);
}
