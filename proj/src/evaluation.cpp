#include "refpred/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace refpred {

double accuracy(std::span<const Category> predicted, std::span<const Category> gold) {
  if (predicted.size() != gold.size()) {
    throw EvaluationError("accuracy: " + std::to_string(predicted.size()) + " predictions for " +
                          std::to_string(gold.size()) + " golds");
  }
  if (gold.empty()) throw EvaluationError("accuracy of an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hits += predicted[i] == gold[i];
  return 100.0 * static_cast<double>(hits) / static_cast<double>(gold.size());
}

PerplexityResult perplexity(std::span<const PredictionDistribution> dists,
                            std::span<const Category> golds, std::optional<double> floor) {
  if (dists.size() != golds.size()) throw EvaluationError("perplexity: misaligned inputs");
  if (golds.empty()) throw EvaluationError("perplexity of an empty set");
  PerplexityResult out;
  out.items = golds.size();
  double sum = 0;
  bool infinite = false;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    double p = dists[i].probability(golds[i]);
    if (p <= 0) ++out.zero_probability_items;
    if (floor) {
      double z = 0;
      for (double q : dists[i].probs) z += std::max(q, *floor);
      p = std::max(p, *floor) / z;
    }
    if (p <= 0) {
      infinite = true;
      continue;
    }
    sum -= std::log(p);
  }
  out.value = infinite ? std::numeric_limits<double>::infinity()
                       : std::exp(sum / static_cast<double>(golds.size()));
  return out;
}

namespace {

Category visible_mention_category(int index, const History& history, const std::string& what) {
  const Story& story = history.story();
  const Mention& target = story.mentions[history.position()];
  if (index < 0 || index >= static_cast<int>(story.mentions.size()) ||
      story.mentions[index].head_index >= target.start) {
    throw EvaluationError(what + " " + std::to_string(index) + " does not precede the target at " +
                          story.id + ":" + std::to_string(history.position()));
  }
  return Category::mentioned(story.mentions[index].dr_id);
}

}  // namespace

Category guess_category(const GuessRecord& guess, const std::optional<Verdict>& verdict,
                        const History& history) {
  if (guess.kind == GuessRecord::Kind::kClicked) {
    return visible_mention_category(guess.clicked_mention, history, "clicked mention");
  }
  if (!verdict) {
    throw EvaluationError("guess " + guess.guess_id + " (\"" + guess.text + "\") is unresolved");
  }
  switch (verdict->kind) {
    case Verdict::Kind::kAntecedent:
      return visible_mention_category(verdict->antecedent_mention, history, "antecedent");
    case Verdict::Kind::kTrulyNovel: return Category::novel();
    case Verdict::Kind::kParticipantType: break;
  }
  const std::string& pt = verdict->participant_type;
  if (!history.scenario().has_participant_type(pt)) {
    throw EvaluationError("guess " + guess.guess_id + " resolved to unknown participant type '" +
                          pt + "'");
  }
  // An already instantiated type has no category of its own any more.
  return history.participant_type_mentioned(pt) ? Category::novel() : Category::unmentioned_pt(pt);
}

HumanDistribution build_human_distribution(std::span<const GuessRecord> guesses,
                                           std::span<const ResolutionRecord> resolutions,
                                           const History& history) {
  std::map<std::string, Verdict> latest;
  for (const auto& r : resolutions) latest[r.guess_id] = r.verdict;

  HumanDistribution out;
  out.dist.instance_id = history.story().id + ":" + std::to_string(history.position());
  out.dist.candidates = candidate_set(history);
  out.counts.assign(out.dist.candidates.size(), 0);
  for (const GuessRecord& g : guesses) {
    if (g.story_id != history.story().id || g.position != history.position()) continue;
    std::optional<Verdict> v;
    if (auto it = latest.find(g.guess_id); it != latest.end()) v = it->second;
    const Category c = guess_category(g, v, history);
    auto pos = std::find(out.dist.candidates.begin(), out.dist.candidates.end(), c);
    if (pos == out.dist.candidates.end()) {
      throw EvaluationError("guess " + g.guess_id + " maps outside the candidate set");
    }
    ++out.counts[pos - out.dist.candidates.begin()];
    ++out.total;
  }
  if (out.total == 0) throw EvaluationError("no guesses for " + out.dist.instance_id);
  out.dist.probs.resize(out.counts.size());
  for (std::size_t i = 0; i < out.counts.size(); ++i) {
    out.dist.probs[i] = static_cast<double>(out.counts[i]) / out.total;
  }
  return out;
}

RelativeAccuracy relative_accuracy(std::span<const PredictionDistribution> model,
                                   std::span<const PredictionDistribution> human) {
  if (model.size() != human.size()) throw EvaluationError("relative accuracy: misaligned inputs");
  if (model.empty()) throw EvaluationError("relative accuracy of an empty set");
  std::size_t hits = 0;
  double expected = 0;
  for (std::size_t i = 0; i < model.size(); ++i) {
    if (!model[i].instance_id.empty() && !human[i].instance_id.empty() &&
        model[i].instance_id != human[i].instance_id) {
      throw EvaluationError("relative accuracy: " + model[i].instance_id + " paired with " +
                            human[i].instance_id);
    }
    const Category& top = model[i].argmax_category();
    hits += top == human[i].argmax_category();
    expected += human[i].probability(top);
  }
  const double n = static_cast<double>(model.size());
  return {100.0 * static_cast<double>(hits) / n, expected / n};
}

double jensen_shannon(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("jensen_shannon: size mismatch");
  double zp = 0, zq = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    zp += p[i];
    zq += q[i];
  }
  if (zp <= 0 || zq <= 0) throw std::invalid_argument("jensen_shannon: empty distribution");
  double js = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double a = p[i] / zp;
    const double b = q[i] / zq;
    const double m = 0.5 * (a + b);
    if (a > 0) js += 0.5 * a * std::log2(a / m);
    if (b > 0) js += 0.5 * b * std::log2(b / m);
  }
  return std::clamp(js, 0.0, 1.0);
}

double jensen_shannon(const PredictionDistribution& p, const PredictionDistribution& q) {
  std::vector<Category> all = p.candidates;
  for (const auto& c : q.candidates) {
    if (std::find(all.begin(), all.end(), c) == all.end()) all.push_back(c);
  }
  std::vector<double> a, b;
  for (const auto& c : all) {
    a.push_back(p.probability(c));
    b.push_back(q.probability(c));
  }
  return jensen_shannon(a, b);
}

McNemarResult mcnemar_from_counts(int b, int c) {
  McNemarResult r{0.0, 1.0, b, c};
  if (b + c == 0) return r;
  const double d = static_cast<double>(b - c);
  r.statistic = d * d / static_cast<double>(b + c);
  r.p_value = std::erfc(std::sqrt(r.statistic / 2.0));
  return r;
}

McNemarResult mcnemar(std::span<const Category> preds_a, std::span<const Category> preds_b,
                      std::span<const Category> golds) {
  if (preds_a.size() != golds.size() || preds_b.size() != golds.size()) {
    throw EvaluationError("mcnemar: misaligned inputs");
  }
  int b = 0, c = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    const bool ra = preds_a[i] == golds[i];
    const bool rb = preds_b[i] == golds[i];
    b += ra && !rb;
    c += !ra && rb;
  }
  return mcnemar_from_counts(b, c);
}

VariantResult evaluate_model(const ReferentModel& model, const Scenario& scenario,
                             std::span<const Story> test, const ExtractionConfig& extraction) {
  VariantResult out;
  out.scenario = scenario.id;
  out.variant = model.variant();
  out.training = model.summary;
  for (const Story& st : test) {
    for (const ClozeInstance& inst : extract_cloze_instances(st, scenario, extraction)) {
      PredictionDistribution d = model.predict(inst);
      out.instance_ids.push_back(inst.id());
      out.golds.push_back(inst.gold);
      out.predictions.push_back(d.argmax_category());
      out.distributions.push_back(std::move(d));
    }
  }
  if (out.golds.empty()) throw EvaluationError("no test instances for scenario " + scenario.id);
  out.accuracy = accuracy(out.predictions, out.golds);
  out.perplexity = perplexity(out.distributions, out.golds);
  return out;
}

std::vector<VariantResult> run_ablation(const Scenario& scenario, std::span<const Story> train,
                                        std::span<const Story> development,
                                        std::span<const Story> test,
                                        const EmbeddingStore* embeddings,
                                        const ThematicFitStore* thematic_fit,
                                        const ModelConfig& base_config,
                                        const ExtractionConfig& extraction) {
  std::vector<VariantResult> rows;
  for (Variant v : kAblationVariants) {
    ModelConfig cfg = base_config;
    cfg.variant = v;
    ReferentModel m =
        train_referent_model(scenario, train, development, embeddings, thematic_fit, cfg);
    rows.push_back(evaluate_model(m, scenario, test, extraction));
  }
  return rows;
}

}  // namespace refpred
