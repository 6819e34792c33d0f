#include "refpred/referent_model.hpp"

#include <ceres/ceres.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace refpred {

double PredictionDistribution::probability(const Category& c) const {
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i] == c) return probs[i];
  }
  return 0.0;
}

std::size_t PredictionDistribution::argmax() const {
  if (probs.empty()) throw std::invalid_argument("argmax of an empty distribution");
  return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(const Eigen::VectorXd& x) {
  const double m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x.array() - m).exp().sum());
}

struct Posterior {
  Eigen::VectorXd log_p;                // per candidate
  std::vector<Eigen::VectorXd> log_pi;  // per hypothesis, per candidate
};

Posterior log_mixture(const Eigen::VectorXd& w, const InstanceFeatures& f) {
  if (f.candidates.empty()) throw std::invalid_argument("instance " + f.id + " has no candidates");
  if (f.hypotheses.empty()) throw std::invalid_argument("instance " + f.id + " has no hypotheses");
  const auto n = static_cast<Eigen::Index>(f.candidates.size());
  Posterior post;
  Eigen::MatrixXd terms(n, static_cast<Eigen::Index>(f.hypotheses.size()));
  for (std::size_t k = 0; k < f.hypotheses.size(); ++k) {
    const auto& h = f.hypotheses[k];
    if (h.features.cols() != w.size() || h.features.rows() != n) {
      throw std::invalid_argument("feature matrix of instance " + f.id + " does not match weights");
    }
    Eigen::VectorXd s = h.features * w;
    s.array() -= log_sum_exp(s);
    terms.col(static_cast<Eigen::Index>(k)) =
        s.array() + (h.weight > 0 ? std::log(h.weight) : kNegInf);
    post.log_pi.push_back(std::move(s));
  }
  post.log_p.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) post.log_p[i] = log_sum_exp(terms.row(i).transpose());
  return post;
}

}  // namespace

PredictionDistribution predict(const Eigen::VectorXd& w, const InstanceFeatures& f) {
  Posterior post = log_mixture(w, f);
  PredictionDistribution d{f.id, f.candidates, {}};
  d.probs.resize(f.candidates.size());
  for (std::size_t i = 0; i < d.probs.size(); ++i) {
    d.probs[i] = std::exp(post.log_p[static_cast<Eigen::Index>(i)]);
  }
  return d;
}

const Category& argmax_category(const PredictionDistribution& dist) {
  return dist.argmax_category();
}

Objective nll_and_gradient(const Eigen::VectorXd& w, std::span<const InstanceFeatures> batch,
                           double l2) {
  Objective out{l2 * w.squaredNorm(), 2.0 * l2 * w};
  for (const InstanceFeatures& f : batch) {
    if (f.gold < 0 || f.gold >= static_cast<int>(f.candidates.size())) {
      throw std::invalid_argument("instance " + f.id + " has no gold candidate");
    }
    Posterior post = log_mixture(w, f);
    const double log_pg = post.log_p[f.gold];
    if (!std::isfinite(log_pg)) {
      throw TrainingError("non-finite log-likelihood at instance " + f.id);
    }
    out.value -= log_pg;
    for (std::size_t k = 0; k < f.hypotheses.size(); ++k) {
      const auto& h = f.hypotheses[k];
      if (h.weight <= 0) continue;
      const Eigen::VectorXd& log_pi = post.log_pi[k];
      // Posterior weight of hypothesis k given the gold.
      const double q = std::exp(std::log(h.weight) + log_pi[f.gold] - log_pg);
      const Eigen::VectorXd pi = log_pi.array().exp();
      out.gradient -= q * (h.features.row(f.gold).transpose() - h.features.transpose() * pi);
    }
  }
  return out;
}

namespace {

class NllFunction : public ceres::FirstOrderFunction {
 public:
  NllFunction(std::span<const InstanceFeatures> batch, int dim, double l2)
      : batch_(batch), dim_(dim), l2_(l2) {}

  bool Evaluate(const double* parameters, double* cost, double* gradient) const override {
    Eigen::Map<const Eigen::VectorXd> w(parameters, dim_);
    try {
      Objective o = nll_and_gradient(w, batch_, l2_);
      if (!std::isfinite(o.value)) return false;
      *cost = o.value;
      if (gradient) Eigen::Map<Eigen::VectorXd>(gradient, dim_) = o.gradient;
      return true;
    } catch (const TrainingError&) {
      return false;
    }
  }

  int NumParameters() const override { return dim_; }

 private:
  std::span<const InstanceFeatures> batch_;
  int dim_;
  double l2_;
};

class DevelopmentMonitor : public ceres::IterationCallback {
 public:
  DevelopmentMonitor(const double* params, int dim, std::span<const InstanceFeatures> dev,
                     int patience)
      : params_(params), dim_(dim), dev_(dev), patience_(patience),
        best_(Eigen::VectorXd::Zero(dim)) {
    best_nll_ = nll_and_gradient(best_, dev_).value;
  }

  ceres::CallbackReturnType operator()(const ceres::IterationSummary& s) override {
    if (s.iteration == 0) return ceres::SOLVER_CONTINUE;
    Eigen::Map<const Eigen::VectorXd> w(params_, dim_);
    const double nll = nll_and_gradient(w, dev_).value;
    if (nll < best_nll_) {
      best_nll_ = nll;
      best_ = w;
      best_iteration_ = s.iteration;
    } else if (s.iteration - best_iteration_ >= patience_) {
      return ceres::SOLVER_TERMINATE_SUCCESSFULLY;
    }
    return ceres::SOLVER_CONTINUE;
  }

  const Eigen::VectorXd& best() const { return best_; }
  double best_nll() const { return best_nll_; }
  int best_iteration() const { return best_iteration_; }

 private:
  const double* params_;
  int dim_;
  std::span<const InstanceFeatures> dev_;
  int patience_;
  Eigen::VectorXd best_;
  double best_nll_ = 0;
  int best_iteration_ = 0;
};

}  // namespace

Eigen::VectorXd fit_weights(std::span<const InstanceFeatures> train, int dimension,
                            const OptimizerConfig& cfg,
                            std::span<const InstanceFeatures> development,
                            TrainSummary* summary) {
  if (train.empty()) throw TrainingError("empty training set");
  Eigen::VectorXd w = Eigen::VectorXd::Zero(dimension);
  for (const InstanceFeatures& f : train) {
    const double v = nll_and_gradient(w, std::span(&f, 1)).value;
    if (!std::isfinite(v)) throw TrainingError("non-finite objective at instance " + f.id);
  }

  ceres::GradientProblem problem(new NllFunction(train, dimension, cfg.l2));
  ceres::GradientProblemSolver::Options options;
  options.line_search_direction_type = ceres::LBFGS;
  options.max_num_iterations = cfg.max_iterations;
  options.gradient_tolerance = cfg.gradient_tolerance;
  options.function_tolerance = 1e-15;
  options.parameter_tolerance = 1e-15;
  options.logging_type = ceres::SILENT;

  std::unique_ptr<DevelopmentMonitor> monitor;
  if (!development.empty()) {
    monitor = std::make_unique<DevelopmentMonitor>(w.data(), dimension, development,
                                                   cfg.early_stopping_patience);
    options.update_state_every_iteration = true;
    options.callbacks.push_back(monitor.get());
  }

  ceres::GradientProblemSolver::Summary s;
  ceres::Solve(options, problem, w.data(), &s);

  const Objective final_obj = nll_and_gradient(w, train, cfg.l2);
  TrainSummary out;
  out.iterations = static_cast<int>(s.iterations.size()) - 1;
  out.objective = final_obj.value;
  out.gradient_norm = final_obj.gradient.lpNorm<Eigen::Infinity>();
  out.converged = out.gradient_norm < cfg.gradient_tolerance;
  out.termination = ceres::TerminationTypeToString(s.termination_type);
  if (monitor) {
    out.used_development = true;
    out.best_iteration = monitor->best_iteration();
    out.best_development_nll = monitor->best_nll();
    w = monitor->best();
  }
  if (!w.allFinite()) throw TrainingError("optimizer produced non-finite weights");
  if (summary) *summary = out;
  return w;
}

ReferentModel::ReferentModel(std::string scenario_id, Variant variant, Eigen::VectorXd weights,
                             Resources resources, std::shared_ptr<const PredicateLM> plm,
                             std::size_t marginalization_top_k)
    : scenario_id_(std::move(scenario_id)),
      variant_(variant),
      weights_(std::move(weights)),
      resources_(std::move(resources)),
      plm_(std::move(plm)),
      top_k_(marginalization_top_k) {
  if (weights_.size() != resources_.layout.size()) {
    throw std::invalid_argument("weight vector has " + std::to_string(weights_.size()) +
                                " entries, layout has " + std::to_string(resources_.layout.size()));
  }
}

InstanceFeatures ReferentModel::features(const ClozeInstance& instance) const {
  return compute_instance_features(instance, resources_, plm_.get(),
                                   {variant_groups(variant_), top_k_});
}

PredictionDistribution ReferentModel::predict(const ClozeInstance& instance) const {
  return refpred::predict(weights_, features(instance));
}

std::vector<InstanceFeatures> training_features(const Scenario& scenario,
                                                std::span<const Story> stories,
                                                const Resources& resources, const PredicateLM* plm,
                                                const FeatureConfig& cfg) {
  std::vector<InstanceFeatures> out;
  for (const Story& st : stories) {
    for (const ClozeInstance& inst :
         extract_cloze_instances(st, scenario, ExtractionConfig::training())) {
      out.push_back(compute_instance_features(inst, resources, plm, cfg));
    }
  }
  return out;
}

ReferentModel train_referent_model(const Scenario& scenario, std::span<const Story> train,
                                   std::span<const Story> development,
                                   const EmbeddingStore* embeddings,
                                   const ThematicFitStore* thematic_fit, const ModelConfig& cfg) {
  if (train.empty()) throw TrainingError("no training stories for scenario " + scenario.id);
  const unsigned groups = variant_groups(cfg.variant);
  if ((groups & kPredicateGroups) && !embeddings) {
    throw TrainingError("variant " + std::string(to_string(cfg.variant)) +
                        " needs word embeddings");
  }
  if ((groups & kSelectionalPreference) && !thematic_fit) {
    throw TrainingError("variant " + std::string(to_string(cfg.variant)) +
                        " needs a thematic-fit table");
  }
  Resources resources = calibrate_resources(scenario, train, embeddings, thematic_fit);
  std::shared_ptr<const PredicateLM> plm = train_predicate_lm(train, cfg.predicate_lm);
  const FeatureConfig fcfg{groups, cfg.marginalization_top_k};

  auto train_feats = training_features(scenario, train, resources, plm.get(), fcfg);
  if (train_feats.empty()) {
    throw TrainingError("no event-governed mentions in the training stories of " + scenario.id);
  }
  std::vector<InstanceFeatures> dev_feats;
  if (cfg.early_stopping) {
    dev_feats = training_features(scenario, development, resources, plm.get(), fcfg);
  }
  TrainSummary summary;
  Eigen::VectorXd w =
      fit_weights(train_feats, resources.layout.size(), cfg.optimizer, dev_feats, &summary);
  ReferentModel model(scenario.id, cfg.variant, std::move(w), std::move(resources), std::move(plm),
                      cfg.marginalization_top_k);
  model.summary = summary;
  for (const Story& st : train) model.training_stories.push_back(st.id);
  return model;
}

nlohmann::json model_to_json(const ReferentModel& model) {
  const auto& w = model.weights();
  const auto& s = model.summary;
  return {{"format", "refpred-model"},
          {"version", kModelFormatVersion},
          {"scenario", model.scenario_id()},
          {"variant", to_string(model.variant())},
          {"layout", model.resources().layout.names()},
          {"weights", std::vector<double>(w.begin(), w.end())},
          {"marginalization_top_k", model.marginalization_top_k()},
          {"calibration", calibration_to_json(model.resources())},
          {"predicate_lm", model.predicate_lm()->to_json()},
          {"resource_checksums", model.resource_checksums},
          {"training_stories", model.training_stories},
          {"training",
           {{"converged", s.converged},
            {"iterations", s.iterations},
            {"objective", s.objective},
            {"gradient_norm", s.gradient_norm},
            {"termination", s.termination},
            {"used_development", s.used_development},
            {"best_iteration", s.best_iteration}}}};
}

ReferentModel model_from_json(const nlohmann::json& j, const EmbeddingStore* embeddings,
                              const ThematicFitStore* thematic_fit) {
  if (j.value("format", "") != "refpred-model") throw std::invalid_argument("not a model file");
  const int version = j.at("version").get<int>();
  if (version != kModelFormatVersion) {
    throw std::invalid_argument("unsupported model version " + std::to_string(version));
  }
  auto variant = parse_variant(j.at("variant").get<std::string>());
  if (!variant) throw std::invalid_argument("unknown variant in model file");
  Resources res = calibration_from_json(j.at("calibration"), embeddings, thematic_fit);
  if (res.layout.names() != j.at("layout").get<std::vector<std::string>>()) {
    throw std::invalid_argument("model layout does not match its calibration");
  }
  const unsigned groups = variant_groups(*variant);
  if ((groups & kPredicateGroups) && !embeddings) {
    throw ResourceError("variant " + std::string(to_string(*variant)) + " needs word embeddings");
  }
  if ((groups & kSelectionalPreference) && !thematic_fit) {
    throw ResourceError("variant " + std::string(to_string(*variant)) +
                        " needs a thematic-fit table");
  }
  auto ws = j.at("weights").get<std::vector<double>>();
  Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(ws.data(), static_cast<Eigen::Index>(ws.size()));
  ReferentModel model(j.at("scenario").get<std::string>(), *variant, std::move(w), std::move(res),
                      load_predicate_lm(j.at("predicate_lm")),
                      j.at("marginalization_top_k").get<std::size_t>());
  model.resource_checksums =
      j.value("resource_checksums", std::map<std::string, std::string>{});
  model.training_stories = j.value("training_stories", std::vector<std::string>{});
  const auto& t = j.at("training");
  model.summary.converged = t.at("converged").get<bool>();
  model.summary.iterations = t.at("iterations").get<int>();
  model.summary.objective = t.at("objective").get<double>();
  model.summary.gradient_norm = t.at("gradient_norm").get<double>();
  model.summary.termination = t.at("termination").get<std::string>();
  model.summary.used_development = t.at("used_development").get<bool>();
  model.summary.best_iteration = t.at("best_iteration").get<int>();
  return model;
}

}  // namespace refpred
