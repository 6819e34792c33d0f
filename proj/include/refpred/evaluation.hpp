#pragma once

#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "refpred/corpus.hpp"
#include "refpred/distribution.hpp"
#include "refpred/guesses.hpp"
#include "refpred/referent_model.hpp"

namespace refpred {

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Percentage of matching positions. Throws on empty or unequal inputs.
double accuracy(std::span<const Category> predicted, std::span<const Category> gold);

inline constexpr double kPerplexityFloor = 1e-6;

struct PerplexityResult {
  double value = 0;  // +inf when some gold has probability 0 and no floor is set
  std::size_t zero_probability_items = 0;  // golds with probability 0 before any floor
  std::size_t items = 0;
};

// exp of the mean negative log probability of the golds. With a floor, every
// candidate probability is raised to at least `floor` and renormalized first.
PerplexityResult perplexity(std::span<const PredictionDistribution> dists,
                            std::span<const Category> golds,
                            std::optional<double> floor = std::nullopt);

// Unsmoothed guess frequencies over the instance's candidate set.
struct HumanDistribution {
  PredictionDistribution dist;
  std::vector<int> counts;  // aligned with dist.candidates
  int total = 0;
};

// Guesses for other positions are ignored. Throws EvaluationError for an
// unresolved "New" guess, a click or antecedent at or after the target, or an
// instance without guesses.
HumanDistribution build_human_distribution(std::span<const GuessRecord> guesses,
                                           std::span<const ResolutionRecord> resolutions,
                                           const History& history);

// Category a single resolved guess stands for at this history.
Category guess_category(const GuessRecord& guess, const std::optional<Verdict>& verdict,
                        const History& history);

struct RelativeAccuracy {
  double percentage = 0;
  // Mean human probability of the model's top category.
  double expected_human_probability = 0;
};

RelativeAccuracy relative_accuracy(std::span<const PredictionDistribution> model,
                                   std::span<const PredictionDistribution> human);

// Base-2 Jensen-Shannon divergence over the union of both supports.
double jensen_shannon(const PredictionDistribution& p, const PredictionDistribution& q);
double jensen_shannon(std::span<const double> p, std::span<const double> q);

struct McNemarResult {
  double statistic = 0;
  double p_value = 1;
  int b = 0;  // a right, b wrong
  int c = 0;  // a wrong, b right
};

// Uncorrected McNemar test with a chi-square(1) p-value.
McNemarResult mcnemar(std::span<const Category> preds_a, std::span<const Category> preds_b,
                      std::span<const Category> golds);
McNemarResult mcnemar_from_counts(int b, int c);

// Test-set results of one trained model.
struct VariantResult {
  std::string scenario;
  Variant variant = Variant::kScript;
  std::vector<std::string> instance_ids;
  std::vector<Category> golds;
  std::vector<Category> predictions;
  std::vector<PredictionDistribution> distributions;
  double accuracy = 0;
  PerplexityResult perplexity;
  TrainSummary training;
};

VariantResult evaluate_model(const ReferentModel& model, const Scenario& scenario,
                             std::span<const Story> test, const ExtractionConfig& extraction = {});

inline constexpr Variant kAblationVariants[] = {Variant::kLinguistic, Variant::kLinguisticSchemas,
                                                Variant::kLinguisticPtFit, Variant::kScript};

// One independently trained model per ablation row.
std::vector<VariantResult> run_ablation(const Scenario& scenario, std::span<const Story> train,
                                        std::span<const Story> development,
                                        std::span<const Story> test,
                                        const EmbeddingStore* embeddings,
                                        const ThematicFitStore* thematic_fit,
                                        const ModelConfig& base_config,
                                        const ExtractionConfig& extraction = {});

}  // namespace refpred
