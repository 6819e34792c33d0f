#include <cmath>
#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "planted.hpp"
#include "refpred/referent_model.hpp"

using namespace refpred;
using refpred::testing::random_instance;

namespace {

// Direct evaluation of sum_v w_v softmax(F_v w), in long double.
std::vector<double> naive_predict(const Eigen::VectorXd& w, const InstanceFeatures& f) {
  const std::size_t n = f.candidates.size();
  std::vector<long double> p(n, 0.0L);
  for (const auto& h : f.hypotheses) {
    std::vector<long double> e(n);
    long double z = 0;
    for (std::size_t i = 0; i < n; ++i) {
      long double s = 0;
      for (int j = 0; j < w.size(); ++j) s += static_cast<long double>(h.features(i, j)) * w[j];
      e[i] = std::exp(s);
      z += e[i];
    }
    for (std::size_t i = 0; i < n; ++i) p[i] += h.weight * e[i] / z;
  }
  return {p.begin(), p.end()};
}

double naive_nll(const Eigen::VectorXd& w, const std::vector<InstanceFeatures>& batch, double l2) {
  long double total = 0;
  for (const auto& f : batch) total -= std::log(static_cast<long double>(naive_predict(w, f)[f.gold]));
  return static_cast<double>(total + l2 * w.squaredNorm());
}

Eigen::VectorXd random_weights(std::mt19937_64& rng, int dim, double scale = 0.5) {
  std::normal_distribution<double> normal(0.0, scale);
  Eigen::VectorXd w(dim);
  for (int j = 0; j < dim; ++j) w[j] = normal(rng);
  return w;
}

}  // namespace

TEST_CASE("predict matches the direct mixture of softmaxes") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    const int cands = 2 + trial % 7, dim = 3 + trial % 11, hyps = 1 + trial % 4;
    InstanceFeatures f = random_instance(rng, cands, dim, hyps);
    Eigen::VectorXd w = random_weights(rng, dim);
    PredictionDistribution d = predict(w, f);
    auto expect = naive_predict(w, f);
    double sum = 0;
    for (int i = 0; i < cands; ++i) {
      CHECK(d.probs[i] == doctest::Approx(expect[i]).epsilon(1e-12));
      sum += d.probs[i];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(d.candidates == f.candidates);
  }
}

TEST_CASE("predict is stable for large scores") {
  std::mt19937_64 rng(5);
  InstanceFeatures f = random_instance(rng, 4, 3, 2);
  Eigen::VectorXd w = Eigen::VectorXd::Constant(3, 800.0);
  PredictionDistribution d = predict(w, f);
  double sum = 0;
  for (double p : d.probs) {
    CHECK(std::isfinite(p));
    sum += p;
  }
  CHECK(sum == doctest::Approx(1.0));
}

TEST_CASE("property: shifting every candidate by the same vector changes nothing") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    InstanceFeatures f = random_instance(rng, 5, 6, 3);
    Eigen::VectorXd w = random_weights(rng, 6);
    InstanceFeatures g = f;
    for (auto& h : g.hypotheses) {
      Eigen::RowVectorXd shift = random_weights(rng, 6, 3.0).transpose();
      h.features.rowwise() += shift;
    }
    auto a = predict(w, f), b = predict(w, g);
    for (std::size_t i = 0; i < a.probs.size(); ++i) CHECK(a.probs[i] == doctest::Approx(b.probs[i]).epsilon(1e-10));
  }
}

TEST_CASE("property: permuting candidates permutes the prediction") {
  std::mt19937_64 rng(19);
  InstanceFeatures f = random_instance(rng, 6, 4, 2);
  Eigen::VectorXd w = random_weights(rng, 4);
  std::vector<int> perm = {3, 0, 5, 1, 4, 2};
  InstanceFeatures g = f;
  for (std::size_t h = 0; h < f.hypotheses.size(); ++h) {
    for (int i = 0; i < 6; ++i) {
      g.hypotheses[h].features.row(i) = f.hypotheses[h].features.row(perm[i]);
      g.candidates[i] = f.candidates[perm[i]];
    }
  }
  auto a = predict(w, f), b = predict(w, g);
  for (int i = 0; i < 6; ++i) CHECK(b.probs[i] == doctest::Approx(a.probs[perm[i]]).epsilon(1e-12));
}

TEST_CASE("argmax takes the first maximum") {
  PredictionDistribution d{"x", {Category::mentioned("a"), Category::mentioned("b"), Category::novel()},
                           {0.4, 0.4, 0.2}};
  CHECK(d.argmax() == 0);
  CHECK(d.argmax_category() == Category::mentioned("a"));
  CHECK(d.probability(Category::novel()) == 0.2);
  CHECK(d.probability(Category::unmentioned_pt("zz")) == 0.0);
}

TEST_CASE("objective and gradient against direct evaluation") {
  std::mt19937_64 rng(23);
  std::vector<InstanceFeatures> batch;
  for (int i = 0; i < 12; ++i) batch.push_back(random_instance(rng, 2 + i % 6, 7, 1 + i % 3));
  Eigen::VectorXd w = random_weights(rng, 7);
  for (double l2 : {0.0, 0.3}) {
    Objective o = nll_and_gradient(w, batch, l2);
    CHECK(o.value == doctest::Approx(naive_nll(w, batch, l2)).epsilon(1e-12));
    for (int j = 0; j < 7; ++j) {
      Eigen::VectorXd wp = w, wm = w;
      wp[j] += 1e-5;
      wm[j] -= 1e-5;
      const double fd = (naive_nll(wp, batch, l2) - naive_nll(wm, batch, l2)) / 2e-5;
      CHECK(std::abs(o.gradient[j] - fd) < 1e-6);
    }
  }
}

TEST_CASE("objective rejects unlabeled instances") {
  std::mt19937_64 rng(29);
  std::vector<InstanceFeatures> batch = {random_instance(rng, 3, 2, 1)};
  batch[0].gold = -1;
  CHECK_THROWS(nll_and_gradient(Eigen::VectorXd::Zero(2), batch));
}

TEST_CASE("fit_weights reaches a stationary point") {
  std::mt19937_64 rng(31);
  const int dim = 5;
  Eigen::VectorXd truth = random_weights(rng, dim, 1.0);
  std::vector<InstanceFeatures> batch;
  for (int i = 0; i < 300; ++i) {
    InstanceFeatures f = random_instance(rng, 4, dim, 1);
    // Draw the gold from the true model so the optimum is finite.
    auto p = predict(truth, f).probs;
    f.gold = std::discrete_distribution<int>(p.begin(), p.end())(rng);
    batch.push_back(std::move(f));
  }
  TrainSummary s;
  Eigen::VectorXd w = fit_weights(batch, dim, {}, {}, &s);
  CHECK(s.converged);
  CHECK(s.gradient_norm < 1e-6);
  CHECK(nll_and_gradient(w, batch).gradient.lpNorm<Eigen::Infinity>() < 1e-6);
  CHECK(s.objective < nll_and_gradient(Eigen::VectorXd::Zero(dim), batch).value);
  CHECK((w - truth).lpNorm<Eigen::Infinity>() < 0.5);
  CHECK_FALSE(s.used_development);

  // Deterministic.
  CHECK(fit_weights(batch, dim) == w);

  // Development data switches on early stopping bookkeeping.
  TrainSummary sd;
  std::span<const InstanceFeatures> all(batch);
  fit_weights(all.subspan(0, 250), dim, {}, all.subspan(250), &sd);
  CHECK(sd.used_development);
  CHECK(sd.best_iteration <= sd.iterations);
}

TEST_CASE("fit_weights errors") {
  CHECK_THROWS_AS(fit_weights({}, 3), TrainingError);
  std::mt19937_64 rng(37);
  std::vector<InstanceFeatures> batch = {random_instance(rng, 3, 2, 1)};
  batch[0].hypotheses[0].features(0, 0) = std::nan("");
  CHECK_THROWS_AS(fit_weights(batch, 2), TrainingError);
}

TEST_CASE("trained model round-trips through JSON") {
  refpred::testing::PlantedConfig cfg;
  cfg.stories_per_scenario = 16;
  auto world = refpred::testing::make_planted_world(cfg);
  const auto& sc = world.corpus.front();
  std::span<const Story> stories(sc.stories);
  ModelConfig mc;
  mc.marginalization_top_k = 4;
  ReferentModel m = train_referent_model(sc.scenario, stories.subspan(0, 12), stories.subspan(12, 2),
                                         &world.embeddings, &world.thematic_fit, mc);
  CHECK(m.training_stories.size() == 12);
  ReferentModel back = model_from_json(nlohmann::json::parse(model_to_json(m).dump()),
                                       &world.embeddings, &world.thematic_fit);
  CHECK(back.variant() == m.variant());
  CHECK(back.weights() == m.weights());
  CHECK(back.marginalization_top_k() == 4);
  for (const Story& st : stories.subspan(14)) {
    for (const auto& inst : extract_cloze_instances(st, sc.scenario)) {
      CHECK(back.predict(inst).probs == m.predict(inst).probs);
    }
  }
  auto j = model_to_json(m);
  j["version"] = 99;
  CHECK_THROWS(model_from_json(j, &world.embeddings, &world.thematic_fit));
}

TEST_CASE("variants without their resources are rejected") {
  auto world = refpred::testing::make_planted_world({});
  const auto& sc = world.corpus.front();
  std::span<const Story> stories(sc.stories);
  ModelConfig mc;
  mc.variant = Variant::kScript;
  CHECK_THROWS_AS(train_referent_model(sc.scenario, stories, {}, nullptr, &world.thematic_fit, mc),
                  TrainingError);
  mc.variant = Variant::kLinguistic;
  CHECK_THROWS_AS(train_referent_model(sc.scenario, stories, {}, &world.embeddings, nullptr, mc),
                  TrainingError);
  mc.variant = Variant::kBase;
  CHECK_NOTHROW(train_referent_model(sc.scenario, stories.subspan(0, 5), {}, nullptr, nullptr, mc));
  CHECK_THROWS_AS(train_referent_model(sc.scenario, {}, {}, nullptr, nullptr, mc), TrainingError);
}
