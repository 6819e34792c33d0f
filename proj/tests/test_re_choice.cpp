#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "refpred/re_choice.hpp"

using namespace refpred;
using refpred::testing::bath_corpus;
using refpred::testing::bath_scenario;
using refpred::testing::bath_story;

namespace {

// Uniform distribution over the candidate set at every mention of the bath story.
std::vector<PredictionDistribution> uniform_bath_distributions() {
  std::vector<PredictionDistribution> out;
  const Story& st = bath_story();
  for (int i = 0; i < static_cast<int>(st.mentions.size()); ++i) {
    History h(st, bath_scenario(), i);
    PredictionDistribution d;
    d.instance_id = st.id + ":" + std::to_string(i);
    d.candidates = candidate_set(h);
    d.probs.assign(d.candidates.size(), 1.0 / static_cast<double>(d.candidates.size()));
    out.push_back(std::move(d));
  }
  return out;
}

const RERow* row_at(const REDataset& data, int position) {
  for (const auto& r : data.rows) {
    if (r.position == position) return &r;
  }
  return nullptr;
}

double logit(double p) { return std::log(p / (1 - p)); }

}  // namespace

TEST_CASE("surprisal and residual entropy") {
  PredictionDistribution d{"x",
                           {Category::mentioned("a"), Category::mentioned("b"), Category::novel()},
                           {0.5, 0.25, 0.25}};
  CHECK(surprisal(d, Category::mentioned("a")) == doctest::Approx(std::log(2.0)));
  CHECK(surprisal(d, Category::novel()) == doctest::Approx(std::log(4.0)));
  CHECK(std::isinf(surprisal(d, Category::unmentioned_pt("drain"))));
  const double h = -(0.5 * std::log(0.5) + 2 * 0.25 * std::log(0.25));
  CHECK(residual_entropy(d, Category::mentioned("a")) == doctest::Approx(h));
  // Without "a" the rest is uniform over two.
  CHECK(residual_entropy(d, Category::mentioned("a"), ResidualEntropyMode::kWithoutGold) ==
        doctest::Approx(std::log(2.0)));
  PredictionDistribution point{"y", {Category::novel()}, {1.0}};
  CHECK(residual_entropy(point, Category::novel(), ResidualEntropyMode::kWithoutGold) == 0.0);
  CHECK(residual_entropy(point, Category::novel()) == 0.0);
}

TEST_CASE("property: surprisal falls as the gold probability rises") {
  double last = std::numeric_limits<double>::infinity();
  for (double p = 0.01; p < 1.0; p += 0.01) {
    PredictionDistribution d{"x", {Category::mentioned("a"), Category::novel()}, {p, 1 - p}};
    const double s = surprisal(d, Category::mentioned("a"));
    CHECK(s < last);
    last = s;
  }
  PredictionDistribution e3{"x", {Category::mentioned("a"), Category::novel()},
                            {std::exp(-3.0), 1 - std::exp(-3.0)}};
  CHECK(surprisal(e3, Category::mentioned("a")) == doctest::Approx(3.0).epsilon(1e-12));
  PredictionDistribution u4{"x",
                            {Category::mentioned("a"), Category::mentioned("b"),
                             Category::mentioned("c"), Category::novel()},
                            {0.25, 0.25, 0.25, 0.25}};
  CHECK(residual_entropy(u4, Category::novel()) == doctest::Approx(1.3863).epsilon(1e-4));
}

TEST_CASE("RE dataset: default subset of the bath story") {
  auto dists = uniform_bath_distributions();
  REDataset data = build_re_dataset(bath_corpus(), dists);
  CHECK(data.considered == 15);
  // First mentions and first-person pronouns leave four third-person repeats.
  REQUIRE(data.rows.size() == 4);
  CHECK(data.filtered_out == 11);
  std::vector<int> positions;
  for (const auto& r : data.rows) positions.push_back(r.position);
  CHECK(positions == std::vector<int>{8, 11, 12, 13});
  CHECK(row_at(data, 8)->short_form);
  CHECK_FALSE(row_at(data, 11)->short_form);
  CHECK(row_at(data, 12)->short_form);

  const RERow& tub = *row_at(data, 11);
  const double n = static_cast<double>(dists[11].candidates.size());
  CHECK(tub.x[kSurprisalColumn] == doctest::Approx(std::log(n)));
  CHECK(tub.x[kResidualEntropyColumn] == doctest::Approx(std::log(n)));
  CHECK(tub.x[4] == 1.0);  // previous mention of the tub was "it"
  CHECK(tub.x[6] == 1.0);  // object of "plugged"
  CHECK(tub.x[5] == 0.0);
  CHECK(tub.x[1] == 2.0);  // "bathroom tub", "it"
  CHECK(row_at(data, 12)->x[4] == 0.0);
}

TEST_CASE("RE dataset: options") {
  auto dists = uniform_bath_distributions();
  REDataset full = build_re_dataset(bath_corpus(), dists, REDatasetOptions::full());
  CHECK(full.rows.size() == 15);
  CHECK(full.filtered_out == 0);
  REDataset subset = build_re_dataset(bath_corpus(), dists);
  CHECK(full.rows.size() == subset.rows.size() + subset.filtered_out);

  // Filtering twice changes nothing.
  std::vector<PredictionDistribution> kept;
  for (const auto& r : subset.rows) kept.push_back(dists[static_cast<std::size_t>(r.position)]);
  REDataset twice = build_re_dataset(bath_corpus(), kept);
  CHECK(twice.rows.size() == subset.rows.size());
  CHECK(twice.filtered_out == 0);

  REDatasetOptions o;
  o.bits = true;
  o.entropy = ResidualEntropyMode::kWithoutGold;
  o.source = "uniform";
  REDataset bits = build_re_dataset(bath_corpus(), dists, o);
  const RERow& tub = *row_at(bits, 11);
  const double n = static_cast<double>(dists[11].candidates.size());
  CHECK(tub.x[kSurprisalColumn] == doctest::Approx(std::log2(n)));
  CHECK(tub.x[kResidualEntropyColumn] == doctest::Approx(std::log2(n - 1)));
  CHECK(tub.source == "uniform");

  // Input order does not matter.
  std::vector<PredictionDistribution> reversed(dists.rbegin(), dists.rend());
  REDataset again = build_re_dataset(bath_corpus(), reversed);
  REDataset base = build_re_dataset(bath_corpus(), dists);
  std::ostringstream a, b;
  write_re_dataset(a, again);
  write_re_dataset(b, base);
  CHECK(a.str() == b.str());
  CHECK(a.str().rfind("response\trecency\tfrequency", 0) == 0);
}

TEST_CASE("RE dataset: zero-probability golds and bad ids") {
  auto dists = uniform_bath_distributions();
  dists[11].probs.assign(dists[11].probs.size(), 0.0);
  dists[11].probs[0] = 1.0;  // DR 1, not the tub
  REDataset data = build_re_dataset(bath_corpus(), dists);
  CHECK(data.infinite_surprisal == 1);
  CHECK(row_at(data, 11) == nullptr);

  auto bad = uniform_bath_distributions();
  bad[0].instance_id = "bath_fig1:99";
  CHECK_THROWS_AS(build_re_dataset(bath_corpus(), bad), RegressionError);
  bad[0].instance_id = "nope:1";
  CHECK_THROWS_AS(build_re_dataset(bath_corpus(), bad), RegressionError);
  bad[0].instance_id = "no-colon";
  CHECK_THROWS_AS(build_re_dataset(bath_corpus(), bad), RegressionError);
}

TEST_CASE("logistic regression: single binary predictor has a closed form") {
  // Group x=0: 40 of 100 positive; x=1: 70 of 100 positive.
  const int n0 = 100, k0 = 40, n1 = 100, k1 = 70;
  Eigen::MatrixXd X(n0 + n1, 1);
  Eigen::VectorXd y(n0 + n1);
  for (int i = 0; i < n0 + n1; ++i) {
    const bool g1 = i >= n0;
    X(i, 0) = g1;
    y[i] = g1 ? (i - n0 < k1) : (i < k0);
  }
  LogisticFit fit = fit_logistic(X, y, {"x"}, {.standardize = {}});
  CHECK(fit.converged);
  CHECK(fit.names == std::vector<std::string>{"(Intercept)", "x"});
  const double b0 = logit(0.4), b1 = logit(0.7) - logit(0.4);
  CHECK(fit.coefficients[0] == doctest::Approx(b0).epsilon(1e-9));
  CHECK(fit.coefficients[1] == doctest::Approx(b1).epsilon(1e-9));
  const double se0 = std::sqrt(1.0 / k0 + 1.0 / (n0 - k0));
  const double se1 = std::sqrt(se0 * se0 + 1.0 / k1 + 1.0 / (n1 - k1));
  CHECK(fit.std_errors[0] == doctest::Approx(se0).epsilon(1e-8));
  CHECK(fit.std_errors[1] == doctest::Approx(se1).epsilon(1e-8));
  CHECK(fit.p_value("x") == doctest::Approx(std::erfc(b1 / se1 / std::sqrt(2.0))).epsilon(1e-8));
  // Saturated per group: deviance is -2 log L of the group proportions.
  const double ll = k0 * std::log(0.4) + (n0 - k0) * std::log(0.6) + k1 * std::log(0.7) +
                    (n1 - k1) * std::log(0.3);
  CHECK(fit.deviance == doctest::Approx(-2 * ll).epsilon(1e-9));
  CHECK(std::isnan(fit.coefficient("missing")));
}

TEST_CASE("property: the fitted coefficients solve the score equations") {
  std::mt19937_64 rng(41);
  std::normal_distribution<double> normal;
  for (int rep = 0; rep < 5; ++rep) {
    const int n = 400;
    Eigen::MatrixXd X(n, 3);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < 3; ++j) X(i, j) = normal(rng);
      const double eta = 0.3 + 0.8 * X(i, 0) - 0.5 * X(i, 1);
      y[i] = std::bernoulli_distribution(1 / (1 + std::exp(-eta)))(rng);
    }
    LogisticFit fit = fit_logistic(X, y, {"a", "b", "c"}, {.standardize = {}});
    Eigen::VectorXd score = Eigen::VectorXd::Zero(4);
    for (int i = 0; i < n; ++i) {
      double eta = fit.coefficients[0];
      for (int j = 0; j < 3; ++j) eta += fit.coefficients[j + 1] * X(i, j);
      const double r = y[i] - 1 / (1 + std::exp(-eta));
      score[0] += r;
      for (int j = 0; j < 3; ++j) score[j + 1] += r * X(i, j);
    }
    CHECK(score.cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("property: affine transforms of a predictor leave deviance and p-values alone") {
  std::mt19937_64 rng(47);
  std::normal_distribution<double> normal;
  const int n = 300;
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = normal(rng);
    X(i, 1) = normal(rng) > 0;
    y[i] = std::bernoulli_distribution(1 / (1 + std::exp(-(0.7 * X(i, 0) + 0.5 * X(i, 1)))))(rng);
  }
  Eigen::MatrixXd T = X;
  T.col(0) = X.col(0).array() * -3.5 + 12.0;
  LogisticFit a = fit_logistic(X, y, {"s", "b"}, {.standardize = {}});
  LogisticFit b = fit_logistic(T, y, {"s", "b"}, {.standardize = {}});
  CHECK(b.deviance == doctest::Approx(a.deviance).epsilon(1e-10));
  CHECK(b.p_value("s") == doctest::Approx(a.p_value("s")).epsilon(1e-8));
  CHECK(b.p_value("b") == doctest::Approx(a.p_value("b")).epsilon(1e-8));
  CHECK(b.coefficient("s") == doctest::Approx(a.coefficient("s") / -3.5).epsilon(1e-8));
}

TEST_CASE("logistic regression: standardization rescales the coefficient") {
  std::mt19937_64 rng(43);
  std::normal_distribution<double> normal(5.0, 3.0);
  const int n = 500;
  Eigen::MatrixXd X(n, 1);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = normal(rng);
    y[i] = std::bernoulli_distribution(1 / (1 + std::exp(-(0.4 * (X(i, 0) - 5)))))(rng);
  }
  LogisticFit raw = fit_logistic(X, y, {"s"}, {.standardize = {}});
  LogisticFit z = fit_logistic(X, y, {"s"}, {.standardize = {"s"}});
  const double mean = X.col(0).mean();
  const double sd = std::sqrt((X.col(0).array() - mean).square().sum() / (n - 1));
  CHECK(z.coefficient("s") == doctest::Approx(raw.coefficient("s") * sd).epsilon(1e-8));
  CHECK(z.p_value("s") == doctest::Approx(raw.p_value("s")).epsilon(1e-8));
  CHECK(z.deviance == doctest::Approx(raw.deviance).epsilon(1e-10));
}

TEST_CASE("logistic regression: degenerate inputs") {
  Eigen::MatrixXd X(6, 2);
  X << 1, 0.1, 2, 0.2, 3, 0.3, 4, 0.4, 5, 0.5, 6, 0.6;
  Eigen::VectorXd y(6);
  y << 0, 0, 0, 1, 1, 1;
  try {
    fit_logistic(X, y, {"sep", "also"});
    FAIL("expected separation");
  } catch (const RegressionError& e) {
    CHECK(std::string(e.what()).find("sep") != std::string::npos);
  }

  // Constant predictors are dropped and reported.
  Eigen::MatrixXd C(8, 2);
  C << 1, 3, 2, 3, 1, 3, 2, 3, 1, 3, 2, 3, 1, 3, 2, 3;
  Eigen::VectorXd yc(8);
  yc << 0, 0, 1, 1, 0, 1, 1, 0;
  LogisticFit fit = fit_logistic(C, yc, {"x", "const"});
  CHECK(fit.dropped == std::vector<std::string>{"const"});
  CHECK(std::isnan(fit.coefficient("const")));
  CHECK(fit.names.size() == 2);
  std::ostringstream table;
  write_coefficient_table(table, fit);
  CHECK(table.str().find("const\tNA") != std::string::npos);

  Eigen::VectorXd one(8);
  one << 1, 0, 0, 0, 0, 0, 0, 0;
  CHECK_THROWS_AS(fit_logistic(C, one, {"x", "const"}), RegressionError);
  CHECK_THROWS_AS(fit_logistic(C, yc, {"x"}), RegressionError);
}
