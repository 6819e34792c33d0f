#pragma once

#include <string>
#include <vector>

#include "refpred/corpus.hpp"

namespace refpred {

// Probabilities aligned with an ordered candidate list.
struct PredictionDistribution {
  std::string instance_id;
  std::vector<Category> candidates;
  std::vector<double> probs;

  // 0 for categories outside the support.
  double probability(const Category& c) const;
  // Highest probability; ties go to the earlier candidate.
  std::size_t argmax() const;
  const Category& argmax_category() const { return candidates.at(argmax()); }
};

}  // namespace refpred
