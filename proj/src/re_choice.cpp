#include "refpred/re_choice.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>

#include "refpred/features.hpp"

namespace refpred {

double surprisal(const PredictionDistribution& dist, const Category& gold) {
  const double p = dist.probability(gold);
  if (p <= 0) return std::numeric_limits<double>::infinity();
  return -std::log(p);
}

double residual_entropy(const PredictionDistribution& dist, const Category& gold,
                        ResidualEntropyMode mode) {
  double z = 0;
  for (std::size_t i = 0; i < dist.probs.size(); ++i) {
    if (mode == ResidualEntropyMode::kWithoutGold && dist.candidates[i] == gold) continue;
    z += dist.probs[i];
  }
  if (z <= 0) return 0.0;
  double h = 0;
  for (std::size_t i = 0; i < dist.probs.size(); ++i) {
    if (mode == ResidualEntropyMode::kWithoutGold && dist.candidates[i] == gold) continue;
    const double p = dist.probs[i] / z;
    if (p > 0) h -= p * std::log(p);
  }
  return h;
}

namespace {

struct Located {
  const Story* story;
  const Scenario* scenario;
  int position;
};

Located locate(const Corpus& corpus, const std::string& id) {
  const auto colon = id.rfind(':');
  if (colon == std::string::npos) throw RegressionError("malformed instance id '" + id + "'");
  const std::string story_id = id.substr(0, colon);
  int pos = -1;
  try {
    pos = std::stoi(id.substr(colon + 1));
  } catch (const std::exception&) {
    throw RegressionError("malformed instance id '" + id + "'");
  }
  for (const auto& sc : corpus) {
    auto it = std::lower_bound(sc.stories.begin(), sc.stories.end(), story_id,
                               [](const Story& s, const std::string& k) { return s.id < k; });
    if (it == sc.stories.end() || it->id != story_id) continue;
    if (pos < 0 || pos >= static_cast<int>(it->mentions.size())) break;
    return {&*it, &sc.scenario, pos};
  }
  throw RegressionError("distribution " + id + " does not match any corpus mention");
}

}  // namespace

REDataset build_re_dataset(const Corpus& corpus, std::span<const PredictionDistribution> dists,
                           const REDatasetOptions& options) {
  struct Keyed {
    std::size_t scenario, story;
    int position;
    RERow row;
  };
  std::vector<Keyed> keyed;
  REDataset out;
  const double unit = options.bits ? std::numbers::ln2 : 1.0;
  for (const PredictionDistribution& d : dists) {
    Located loc = locate(corpus, d.instance_id);
    ++out.considered;
    const Story& story = *loc.story;
    const Mention& target = story.mentions[loc.position];
    History h(story, *loc.scenario, loc.position);
    const Category gold = gold_category(story, *loc.scenario, loc.position);

    const bool first_mention = gold.is_new();
    const bool local_person = target.re_form == ReForm::kPronoun &&
                              (target.person == Person::kFirst || target.person == Person::kSecond);
    if ((options.drop_first_mentions && first_mention) ||
        (options.drop_first_second_person && local_person)) {
      ++out.filtered_out;
      continue;
    }
    const double s = surprisal(d, gold);
    if (!std::isfinite(s)) {
      ++out.infinite_surprisal;
      continue;
    }
    RERow row;
    row.short_form = target.re_form == ReForm::kPronoun || target.re_form == ReForm::kProperName;
    ShallowCategoricals sc = shallow_categoricals(h, gold);
    const SlotRelation slot = story.relation(target);
    row.x = {recency(h, gold),
             frequency(h, gold),
             sc.prev_object ? 1.0 : 0.0,
             sc.prev_subject ? 1.0 : 0.0,
             sc.prev_re_type == PrevReType::kPronoun ? 1.0 : 0.0,
             slot == SlotRelation::kSubject ? 1.0 : 0.0,
             slot == SlotRelation::kObject ? 1.0 : 0.0,
             s / unit,
             residual_entropy(d, gold, options.entropy) / unit};
    row.story_id = story.id;
    row.position = loc.position;
    row.source = options.source;

    std::size_t si = 0;
    for (; si < corpus.size(); ++si) {
      if (&corpus[si].scenario == loc.scenario) break;
    }
    const std::size_t ti = static_cast<std::size_t>(loc.story - corpus[si].stories.data());
    keyed.push_back({si, ti, loc.position, std::move(row)});
  }
  std::stable_sort(keyed.begin(), keyed.end(), [](const Keyed& a, const Keyed& b) {
    return std::tie(a.scenario, a.story, a.position) < std::tie(b.scenario, b.story, b.position);
  });
  for (auto& k : keyed) out.rows.push_back(std::move(k.row));
  return out;
}

void write_re_dataset(std::ostream& out, const REDataset& data) {
  out << "response";
  for (auto name : kRePredictors) out << '\t' << name;
  out << "\tstory\tposition\tsource\n";
  out << std::setprecision(12);
  for (const RERow& r : data.rows) {
    out << (r.short_form ? "short" : "full_np");
    for (double x : r.x) out << '\t' << x;
    out << '\t' << r.story_id << '\t' << r.position << '\t' << r.source << '\n';
  }
}

namespace {

double sigmoid(double t) {
  return t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

double deviance(const Eigen::VectorXd& eta, const Eigen::VectorXd& y) {
  double d = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    // log(1 + exp(eta)) - y * eta, computed stably.
    const double e = eta[i];
    const double softplus = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
    d += softplus - y[i] * e;
  }
  return 2.0 * d;
}

}  // namespace

double LogisticFit::coefficient(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return coefficients[static_cast<Eigen::Index>(i)];
  }
  return std::numeric_limits<double>::quiet_NaN();
}

double LogisticFit::p_value(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return p_values[static_cast<Eigen::Index>(i)];
  }
  return std::numeric_limits<double>::quiet_NaN();
}

LogisticFit fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                         const std::vector<std::string>& names, const LogisticConfig& cfg) {
  const Eigen::Index n = X.rows();
  if (y.size() != n || static_cast<Eigen::Index>(names.size()) != X.cols()) {
    throw RegressionError("design matrix, response and names disagree in size");
  }
  const double positives = y.sum();
  if (positives < 2 || n - positives < 2) {
    throw RegressionError("need at least two observations of each response class");
  }

  LogisticFit fit;
  fit.n = static_cast<std::size_t>(n);
  fit.names.push_back("(Intercept)");
  std::vector<Eigen::Index> kept;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const auto col = X.col(j);
    if (col.maxCoeff() == col.minCoeff()) {
      fit.dropped.push_back(names[j]);
      continue;
    }
    // Complete separation by a single predictor.
    double max0 = -INFINITY, min0 = INFINITY, max1 = -INFINITY, min1 = INFINITY;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (y[i] > 0.5) {
        max1 = std::max(max1, col[i]);
        min1 = std::min(min1, col[i]);
      } else {
        max0 = std::max(max0, col[i]);
        min0 = std::min(min0, col[i]);
      }
    }
    if (max0 < min1 || max1 < min0) {
      throw RegressionError("predictor " + names[j] + " completely separates the response");
    }
    kept.push_back(j);
    fit.names.push_back(names[j]);
  }

  const Eigen::Index p = static_cast<Eigen::Index>(kept.size()) + 1;
  Eigen::MatrixXd D(n, p);
  D.col(0).setOnes();
  for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(kept.size()); ++k) {
    Eigen::VectorXd col = X.col(kept[k]);
    if (cfg.standardize.count(names[kept[k]])) {
      const double mean = col.mean();
      const double sd = std::sqrt((col.array() - mean).square().sum() / static_cast<double>(n - 1));
      col = (col.array() - mean) / sd;
    }
    D.col(k + 1) = col;
  }

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd info(p, p);
  double dev = deviance(D * beta, y);
  for (int it = 1; it <= cfg.max_iterations; ++it) {
    const Eigen::VectorXd eta = D * beta;
    Eigen::VectorXd mu(n), w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      mu[i] = sigmoid(eta[i]);
      w[i] = std::max(mu[i] * (1.0 - mu[i]), 1e-300);
    }
    info = D.transpose() * w.asDiagonal() * D;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
      throw RegressionError("information matrix is singular (collinear predictors)");
    }
    const Eigen::VectorXd step = ldlt.solve(D.transpose() * (y - mu));
    beta += step;
    const double new_dev = deviance(D * beta, y);
    fit.iterations = it;
    if (!beta.allFinite() || beta.cwiseAbs().maxCoeff() > 1e3) {
      Eigen::Index worst = 0;
      beta.tail(p - 1).cwiseAbs().maxCoeff(&worst);
      throw RegressionError("coefficients diverge (quasi-separation), largest on " +
                            fit.names[static_cast<std::size_t>(worst + 1)]);
    }
    const bool done = step.cwiseAbs().maxCoeff() < cfg.tolerance ||
                      std::abs(new_dev - dev) < cfg.tolerance * (std::abs(new_dev) + 0.1);
    dev = new_dev;
    if (done) {
      fit.converged = true;
      break;
    }
  }
  if (!fit.converged) {
    throw RegressionError("IRLS did not converge in " + std::to_string(cfg.max_iterations) +
                          " iterations");
  }
  // Information at the final estimate.
  {
    const Eigen::VectorXd eta = D * beta;
    Eigen::VectorXd w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double m = sigmoid(eta[i]);
      w[i] = m * (1.0 - m);
    }
    info = D.transpose() * w.asDiagonal() * D;
  }
  const Eigen::MatrixXd cov = info.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  fit.coefficients = beta;
  fit.std_errors = cov.diagonal().cwiseSqrt();
  fit.z = beta.cwiseQuotient(fit.std_errors);
  fit.p_values.resize(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    fit.p_values[j] = std::erfc(std::abs(fit.z[j]) / std::numbers::sqrt2);
  }
  fit.deviance = dev;
  return fit;
}

LogisticFit fit_re_model(const REDataset& data, const LogisticConfig& cfg) {
  const auto n = static_cast<Eigen::Index>(data.rows.size());
  const auto k = static_cast<Eigen::Index>(kRePredictors.size());
  Eigen::MatrixXd X(n, k);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const RERow& r = data.rows[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < k; ++j) X(i, j) = r.x[static_cast<std::size_t>(j)];
    y[i] = r.short_form ? 1.0 : 0.0;
  }
  return fit_logistic(X, y, std::vector<std::string>(kRePredictors.begin(), kRePredictors.end()),
                      cfg);
}

void write_coefficient_table(std::ostream& out, const LogisticFit& fit) {
  auto stars = [](double p) {
    if (p < 0.001) return "***";
    if (p < 0.01) return "**";
    if (p < 0.05) return "*";
    if (p < 0.1) return ".";
    return "";
  };
  out << "predictor\tEstimate\tStd. Error\tz value\tPr(>|z|)\tsignif\n";
  for (std::size_t i = 0; i < fit.names.size(); ++i) {
    const auto j = static_cast<Eigen::Index>(i);
    out << fit.names[i] << '\t' << std::setprecision(4) << fit.coefficients[j] << '\t'
        << fit.std_errors[j] << '\t' << fit.z[j] << '\t' << std::setprecision(3)
        << fit.p_values[j] << '\t' << stars(fit.p_values[j]) << '\n';
  }
  for (const auto& d : fit.dropped) out << d << "\tNA\tNA\tNA\tNA\tconstant\n";
  out << "# n=" << fit.n << " deviance=" << std::setprecision(10) << fit.deviance
      << " iterations=" << fit.iterations << '\n';
}

}  // namespace refpred
