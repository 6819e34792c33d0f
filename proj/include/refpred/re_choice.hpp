#pragma once

#include <Eigen/Dense>
#include <array>
#include <map>
#include <ostream>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "refpred/corpus.hpp"
#include "refpred/distribution.hpp"

namespace refpred {

class RegressionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// -ln p(gold); +inf when the gold has probability 0.
double surprisal(const PredictionDistribution& dist, const Category& gold);

enum class ResidualEntropyMode {
  kFull,         // entropy of the whole predictive distribution
  kWithoutGold,  // entropy after removing the realized referent and renormalizing
};

// Shannon entropy in nats.
double residual_entropy(const PredictionDistribution& dist, const Category& gold,
                        ResidualEntropyMode mode = ResidualEntropyMode::kFull);

inline constexpr std::array<std::string_view, 9> kRePredictors = {
    "recency",     "frequency",   "pastObj",   "pastSubj",       "pastExpPronoun",
    "depTypeSubj", "depTypeObj",  "surprisal", "residualEntropy"};

inline constexpr std::size_t kSurprisalColumn = 7;
inline constexpr std::size_t kResidualEntropyColumn = 8;

struct RERow {
  bool short_form = false;  // pronoun or proper name
  std::array<double, kRePredictors.size()> x{};
  std::string story_id;
  int position = 0;
  std::string source;
};

struct REDatasetOptions {
  // Default analysis subset; false for both gives the full dataset.
  bool drop_first_mentions = true;
  bool drop_first_second_person = true;
  ResidualEntropyMode entropy = ResidualEntropyMode::kFull;
  bool bits = false;  // surprisal and entropy in bits instead of nats
  std::string source;

  static REDatasetOptions full() {
    REDatasetOptions o;
    o.drop_first_mentions = false;
    o.drop_first_second_person = false;
    return o;
  }
};

struct REDataset {
  std::vector<RERow> rows;
  std::size_t considered = 0;
  std::size_t filtered_out = 0;
  std::size_t infinite_surprisal = 0;  // excluded, gold had probability 0
};

// One row per distribution; ids are "<story>:<position>" and must resolve to
// a mention of the corpus. Rows follow corpus order.
REDataset build_re_dataset(const Corpus& corpus, std::span<const PredictionDistribution> dists,
                           const REDatasetOptions& options = {});

void write_re_dataset(std::ostream& out, const REDataset& data);

struct LogisticConfig {
  int max_iterations = 100;
  double tolerance = 1e-10;
  // Predictors z-scored before fitting; coefficients are then per standard
  // deviation.
  std::set<std::string> standardize = {"surprisal", "residualEntropy"};
};

struct LogisticFit {
  std::vector<std::string> names;  // "(Intercept)" first
  Eigen::VectorXd coefficients;
  Eigen::VectorXd std_errors;
  Eigen::VectorXd z;
  Eigen::VectorXd p_values;
  std::vector<std::string> dropped;  // constant predictors left out of the fit
  double deviance = 0;
  int iterations = 0;
  bool converged = false;
  std::size_t n = 0;

  // NaN for dropped or unknown names.
  double coefficient(std::string_view name) const;
  double p_value(std::string_view name) const;
};

// Maximum-likelihood logistic regression by iteratively reweighted least
// squares. X excludes the intercept. Throws RegressionError on fewer than two
// rows per class, complete separation (naming the predictor) or
// non-convergence.
LogisticFit fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                         const std::vector<std::string>& names, const LogisticConfig& cfg = {});

LogisticFit fit_re_model(const REDataset& data, const LogisticConfig& cfg = {});

// "Estimate / Std. Error / Pr(>|z|)" table with significance codes.
void write_coefficient_table(std::ostream& out, const LogisticFit& fit);

}  // namespace refpred
