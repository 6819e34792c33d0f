#pragma once

#include <Eigen/Dense>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "refpred/distribution.hpp"
#include "refpred/features.hpp"
#include "refpred/predicate_lm.hpp"

namespace refpred {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// p(d | h) = sum_v p(v | h) softmax_d(w . f(d, h, v)); a single hypothesis of
// weight 1 reduces to the plain softmax. Computed in log space.
PredictionDistribution predict(const Eigen::VectorXd& w, const InstanceFeatures& f);

const Category& argmax_category(const PredictionDistribution& dist);

struct Objective {
  double value = 0;
  Eigen::VectorXd gradient;
};

// Negative log-likelihood of the gold candidates plus l2 * |w|^2.
Objective nll_and_gradient(const Eigen::VectorXd& w, std::span<const InstanceFeatures> batch,
                           double l2 = 0.0);

struct OptimizerConfig {
  int max_iterations = 500;
  double gradient_tolerance = 1e-6;  // max-norm of the gradient
  double l2 = 0.0;
  // Keep the iterate with the lowest development nll and stop after this many
  // iterations without improvement. Only used when development data is given.
  int early_stopping_patience = 25;
};

struct TrainSummary {
  bool converged = false;
  int iterations = 0;
  double objective = 0;
  double gradient_norm = 0;
  bool used_development = false;
  int best_iteration = 0;
  double best_development_nll = 0;
  std::string termination;
};

// L-BFGS from w = 0. Deterministic for fixed inputs.
Eigen::VectorXd fit_weights(std::span<const InstanceFeatures> train, int dimension,
                            const OptimizerConfig& cfg = {},
                            std::span<const InstanceFeatures> development = {},
                            TrainSummary* summary = nullptr);

struct ModelConfig {
  Variant variant = Variant::kScript;
  OptimizerConfig optimizer;
  std::size_t marginalization_top_k = 0;
  std::string predicate_lm = "wb-trigram";
  bool early_stopping = true;
};

// A trained per-scenario referent predictor with its calibrated resources.
class ReferentModel {
 public:
  ReferentModel(std::string scenario_id, Variant variant, Eigen::VectorXd weights,
                Resources resources, std::shared_ptr<const PredicateLM> plm,
                std::size_t marginalization_top_k = 0);

  const std::string& scenario_id() const { return scenario_id_; }
  Variant variant() const { return variant_; }
  const Eigen::VectorXd& weights() const { return weights_; }
  const Resources& resources() const { return resources_; }
  const PredicateLM* predicate_lm() const { return plm_.get(); }
  std::size_t marginalization_top_k() const { return top_k_; }

  InstanceFeatures features(const ClozeInstance& instance) const;
  PredictionDistribution predict(const ClozeInstance& instance) const;

  TrainSummary summary;
  std::map<std::string, std::string> resource_checksums;
  std::vector<std::string> training_stories;

 private:
  std::string scenario_id_;
  Variant variant_;
  Eigen::VectorXd weights_;
  Resources resources_;
  std::shared_ptr<const PredicateLM> plm_;
  std::size_t top_k_;
};

// Calibrates resources and the predicate LM on `train`, then fits the weights
// on every event-governed position of the training stories.
ReferentModel train_referent_model(const Scenario& scenario, std::span<const Story> train,
                                   std::span<const Story> development,
                                   const EmbeddingStore* embeddings,
                                   const ThematicFitStore* thematic_fit, const ModelConfig& cfg);

// Feature tensors for every training-mode position of the given stories.
std::vector<InstanceFeatures> training_features(const Scenario& scenario,
                                                std::span<const Story> stories,
                                                const Resources& resources, const PredicateLM* plm,
                                                const FeatureConfig& cfg);

inline constexpr int kModelFormatVersion = 1;

nlohmann::json model_to_json(const ReferentModel& model);
ReferentModel model_from_json(const nlohmann::json& j, const EmbeddingStore* embeddings,
                              const ThematicFitStore* thematic_fit);

}  // namespace refpred
