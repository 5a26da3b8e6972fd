// Copyright 2026 The mannflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <gtest/gtest.h>

#include "mann/harness.hpp"
#include "mann/planted.hpp"
#include "mann/trainer.hpp"
#include "test_support.hpp"

namespace mann {
namespace {

TEST(ForwardBackward, MatchesFiniteDifferencesOnSpecShape) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Dimensions d{8, 4, 5, 3, 2};
    const ModelWeights m = testing::random_model(d, rng, 0.5);
    const QASample s = testing::random_sample(d, rng);
    const auto check = testing::finite_difference_check(m, s);
    EXPECT_LT(check.max_rel_error, 1e-4) << seed;
  }
}

TEST(ForwardBackward, MatchesFiniteDifferencesOnRandomShapes) {
  for (std::uint64_t seed = 100; seed < 125; ++seed) {
    Rng rng(seed);
    const Dimensions d = testing::random_dims(rng, 8, 5, 6, 4, 3);
    const ModelWeights m = testing::random_model(d, rng, 0.6, seed % 2 == 0);
    const QASample s = testing::random_sample(d, rng);
    EXPECT_LT(testing::finite_difference_check(m, s).max_rel_error, 1e-4) << seed;
  }
}

TEST(ForwardBackward, ForwardMatchesOracle) {
  Rng rng(3);
  const Dimensions d{10, 4, 6, 4, 3};
  const ModelWeights m = testing::random_model(d, rng);
  const QASample s = testing::random_sample(d, rng);
  const auto fb = forward_backward(m, s);
  const auto ref = oracle_infer(m, s.story, s.question);
  for (std::size_t i = 0; i < ref.logits.size(); ++i) EXPECT_NEAR(fb.logits[i], ref.logits[i], 1e-12);
}

TEST(ForwardBackward, UniformLogitsGiveLogILossAndUniformMinusOneHot) {
  Rng rng(4);
  const Dimensions d{6, 3, 5, 2, 2};
  ModelWeights m = testing::random_model(d, rng);
  m.output.set_zero();
  QASample s = testing::random_sample(d, rng);
  s.answer = 2;
  const auto fb = forward_backward(m, s);
  EXPECT_NEAR(fb.loss, std::log(5.0), 1e-12);
  // dL/dW_o[i,:] = (softmax_i - onehot_i) h, so each row is a multiple of h.
  const Vector h = oracle_infer(m, s.story, s.question).hidden;
  for (std::size_t i = 0; i < 5; ++i) {
    const double coef = 0.2 - (i == 2 ? 1.0 : 0.0);
    for (std::size_t e = 0; e < 3; ++e) EXPECT_NEAR(fb.grad.output(i, e), coef * h[e], 1e-12);
  }
}

TEST(ForwardBackward, LossIsNonNegative) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const Dimensions d = testing::random_dims(rng, 10, 6, 8, 4, 3);
    const auto fb = forward_backward(testing::random_model(d, rng, 2.0), testing::random_sample(d, rng));
    ASSERT_GE(fb.loss, 0.0);
  }
}

TEST(ForwardBackward, NonFiniteLossIsDivergence) {
  const Dimensions d{3, 1, 2, 1, 1};
  auto m = ModelWeights::zeros(d);
  m.emb_question(0, 0) = 1e200;
  m.controller(0, 0) = 1e200;
  m.output(0, 0) = 1e200;
  m.output(1, 0) = -1e200;
  try {
    forward_backward(m, QASample{Story{Sentence{1}}, Sentence{0}, 1, {}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDivergence);
  }
}

TEST(Train, ZeroEpochsReturnsInitialisation) {
  Rng data_rng(1);
  const Dimensions d{8, 4, 3, 3, 2};
  const Dataset data = testing::random_dataset(d, data_rng, 20);
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.hops = 2;
  const TrainResult r = train(data, d, cfg);
  Rng init_rng(cfg.seed);
  EXPECT_EQ(r.model, initialize_model(d, cfg, init_rng));
  EXPECT_TRUE(r.curve.empty());
}

TEST(Train, DeterministicPerSeed) {
  Rng data_rng(2);
  const Dimensions d{8, 4, 3, 3, 2};
  const Dataset data = testing::random_dataset(d, data_rng, 30);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.hops = 2;
  const TrainResult a = train(data, d, cfg);
  const TrainResult b = train(data, d, cfg);
  EXPECT_EQ(a.model, b.model);
  cfg.seed = 9;
  EXPECT_NE(train(data, d, cfg).model, a.model);
}

TEST(Train, InitialisationWithinScale) {
  TrainConfig cfg;
  cfg.init_scale = 0.05;
  Rng rng(1);
  const ModelWeights m = initialize_model(Dimensions{5, 3, 2, 2, 1}, cfg, rng);
  for (double v : m.emb_address.data()) {
    EXPECT_LE(std::abs(v), 0.05);
  }
}

TEST(Train, LearnsPlantedTask) {
  PlantedConfig pc;
  pc.n_samples = 1000;
  const PlantedTask task = synthesize_planted(pc);
  const Split split = split_dataset(task.dataset.size(), 7);
  const Dataset train_set = select(task.dataset, split.train);
  const Dataset test_set = select(task.dataset, split.test);
  Dimensions d = task.model.dims;
  d.embed_dim = 20;
  TrainConfig cfg;
  cfg.epochs = 50;
  const TrainResult r = train(train_set, d, cfg);
  ASSERT_EQ(r.curve.size(), 50u);
  EXPECT_GT(r.curve.front().mean_loss, r.curve.back().mean_loss);
  std::size_t correct = 0;
  for (const auto& s : test_set) correct += oracle_infer(r.model, s.story, s.question).label == s.answer;
  EXPECT_GE(static_cast<double>(correct) / static_cast<double>(test_set.size()), 0.95);
}

TEST(Train, AnnealingAndSharedEmbeddingsRun) {
  PlantedConfig pc;
  pc.n_samples = 200;
  const PlantedTask task = synthesize_planted(pc);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.anneal = Anneal{0.5, 2};
  cfg.shared_embeddings = true;
  const TrainResult r = train(task.dataset, task.model.dims, cfg);
  EXPECT_TRUE(r.model.shared_embeddings);
  EXPECT_EQ(r.model.emb_context.size(), 0u);
  r.model.validate();
}

TEST(Train, InvalidConfig) {
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = TrainConfig{};
  cfg.init_scale = -1.0;
  EXPECT_THROW(cfg.validate(), Error);
  EXPECT_THROW(train(Dataset{}, Dimensions{}, TrainConfig{}), Error);
}

TEST(Train, DivergenceCarriesContext) {
  Rng data_rng(2);
  const Dimensions d{4, 2, 2, 2, 1};
  const Dataset data = testing::random_dataset(d, data_rng, 5);
  TrainConfig cfg;
  cfg.learning_rate = 1e300;
  cfg.clip_norm = 1e300;
  cfg.init_scale = 1.0;
  cfg.hops = 1;
  try {
    train(data, d, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDivergence);
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

}  // namespace
}  // namespace mann
