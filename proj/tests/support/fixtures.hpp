#pragma once

#include <filesystem>
#include <random>
#include <string_view>

#include "refpred/corpus.hpp"
#include "refpred/features.hpp"

namespace refpred::testing {

inline std::filesystem::path data_path(std::string_view name) {
  return std::filesystem::path(REFPRED_TEST_DATA) / name;
}

// The hand-annotated bath story.
inline const Corpus& bath_corpus() {
  static const Corpus corpus = load_corpus(data_path("bath.txt"));
  return corpus;
}

inline const Story& bath_story() { return bath_corpus().front().stories.front(); }
inline const Scenario& bath_scenario() { return bath_corpus().front().scenario; }

// Mention index of the "tub" after "plugged".
inline constexpr int kPluggedTub = 11;

// Random feature tensor: `cands` candidates, `dim` features, `hyps` predicate
// hypotheses with random positive weights summing to one.
inline InstanceFeatures random_instance(std::mt19937_64& rng, int cands, int dim, int hyps) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.05, 1.0);
  InstanceFeatures f;
  f.id = "random";
  for (int c = 0; c < cands; ++c) f.candidates.push_back(Category::mentioned(std::to_string(c)));
  f.gold = std::uniform_int_distribution<int>(0, cands - 1)(rng);
  double total = 0;
  for (int h = 0; h < hyps; ++h) {
    PredicateHypothesis p;
    p.verb = "v" + std::to_string(h);
    p.weight = hyps == 1 ? 1.0 : unit(rng);
    total += p.weight;
    p.features = Eigen::MatrixXd(cands, dim);
    for (int i = 0; i < cands; ++i) {
      for (int j = 0; j < dim; ++j) p.features(i, j) = normal(rng);
    }
    f.hypotheses.push_back(std::move(p));
  }
  for (auto& p : f.hypotheses) p.weight /= total;
  return f;
}

}  // namespace refpred::testing
