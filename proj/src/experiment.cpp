#include "refpred/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace refpred {

std::string fnv1a_hex(std::string_view data) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_checksum(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return fnv1a_hex(os.str());
}

StorySplit split_stories(const std::vector<Story>& stories, const SplitSpec& spec) {
  if (spec.train < 0 || spec.development < 0 || spec.train + spec.development > 1.0) {
    throw std::invalid_argument("split fractions must be non-negative and sum to at most 1");
  }
  const std::size_t n = stories.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Salted by scenario so scenarios of equal size get different splits.
  const std::string salt = n ? stories.front().scenario_id : std::string();
  const std::uint64_t salt_hash = std::stoull(fnv1a_hex(salt), nullptr, 16);
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(salt_hash), static_cast<std::uint32_t>(salt_hash >> 32)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);

  auto n_train = static_cast<std::size_t>(std::llround(spec.train * static_cast<double>(n)));
  auto n_dev = static_cast<std::size_t>(std::llround(spec.development * static_cast<double>(n)));
  if (n >= 2) {
    n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
    n_dev = std::min(n_dev, n - 1 - n_train);
  } else {
    n_train = n;
    n_dev = 0;
  }
  std::vector<int> part(n, 2);
  for (std::size_t i = 0; i < n_train; ++i) part[order[i]] = 0;
  for (std::size_t i = n_train; i < n_train + n_dev; ++i) part[order[i]] = 1;
  StorySplit out;
  for (std::size_t i = 0; i < n; ++i) {
    (part[i] == 0 ? out.train : part[i] == 1 ? out.development : out.test).push_back(stories[i]);
  }
  return out;
}

nlohmann::json ExperimentConfig::to_json() const {
  std::vector<std::string> vs;
  for (Variant v : variants) vs.emplace_back(to_string(v));
  auto path_or_null = [](const std::optional<std::filesystem::path>& p) -> nlohmann::json {
    return p ? nlohmann::json(p->string()) : nlohmann::json(nullptr);
  };
  return {{"corpus", corpus.string()},
          {"embeddings", path_or_null(embeddings)},
          {"thematic_fit", path_or_null(thematic_fit)},
          {"human_guesses", path_or_null(human_guesses)},
          {"split", {{"train", split.train}, {"development", split.development}, {"seed", split.seed}}},
          {"variants", vs},
          {"ablation", ablation},
          {"pooled", pooled},
          {"min_guesses", min_guesses},
          {"optimizer",
           {{"max_iterations", model.optimizer.max_iterations},
            {"gradient_tolerance", model.optimizer.gradient_tolerance},
            {"l2", model.optimizer.l2},
            {"early_stopping", model.early_stopping},
            {"patience", model.optimizer.early_stopping_patience}}},
          {"marginalization_top_k", model.marginalization_top_k},
          {"predicate_lm", model.predicate_lm}};
}

std::string ExperimentConfig::hash() const {
  nlohmann::json j = to_json();
  // Paths are replaced by content so the hash survives moving the inputs.
  j.erase("corpus");
  j["corpus_sha"] = file_checksum(corpus);
  for (const char* key : {"embeddings", "thematic_fit", "human_guesses"}) {
    if (!j[key].is_null()) j[key] = file_checksum(j[key].get<std::string>());
  }
  return fnv1a_hex(j.dump());
}

double EvalReport::average_accuracy(Variant v) const {
  double s = 0;
  for (const auto& sc : scenarios) s += sc.results.at(v).accuracy;
  return s / static_cast<double>(scenarios.size());
}

double EvalReport::average_perplexity(Variant v) const {
  double s = 0;
  for (const auto& sc : scenarios) s += sc.results.at(v).perplexity.value;
  return s / static_cast<double>(scenarios.size());
}

namespace {

std::map<std::string, ReferentModel> train_pooled(const Corpus& corpus,
                                                  const std::vector<StorySplit>& splits,
                                                  const LoadedResources& res,
                                                  const ModelConfig& cfg) {
  const EmbeddingStore* emb = res.embeddings ? &*res.embeddings : nullptr;
  const ThematicFitStore* tf = res.thematic_fit ? &*res.thematic_fit : nullptr;
  std::vector<Story> all_train;
  for (const auto& s : splits) all_train.insert(all_train.end(), s.train.begin(), s.train.end());
  const FeatureLayout layout = FeatureLayout::from_training(all_train);
  const FeatureConfig fcfg{variant_groups(cfg.variant), cfg.marginalization_top_k};

  std::vector<Resources> resources;
  std::vector<std::shared_ptr<const PredicateLM>> lms;
  std::vector<InstanceFeatures> train_feats, dev_feats;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    Resources r = calibrate_resources(corpus[i].scenario, splits[i].train, emb, tf);
    r.layout = layout;
    std::shared_ptr<const PredicateLM> lm = train_predicate_lm(splits[i].train, cfg.predicate_lm);
    auto t = training_features(corpus[i].scenario, splits[i].train, r, lm.get(), fcfg);
    train_feats.insert(train_feats.end(), t.begin(), t.end());
    if (cfg.early_stopping) {
      auto d = training_features(corpus[i].scenario, splits[i].development, r, lm.get(), fcfg);
      dev_feats.insert(dev_feats.end(), d.begin(), d.end());
    }
    resources.push_back(std::move(r));
    lms.push_back(std::move(lm));
  }
  TrainSummary summary;
  Eigen::VectorXd w = fit_weights(train_feats, layout.size(), cfg.optimizer, dev_feats, &summary);
  std::map<std::string, ReferentModel> out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    ReferentModel m(corpus[i].scenario.id, cfg.variant, w, std::move(resources[i]), lms[i],
                    cfg.marginalization_top_k);
    m.summary = summary;
    out.emplace(corpus[i].scenario.id, std::move(m));
  }
  return out;
}

HumanScores score_humans(const Scenario& scenario, const std::vector<Story>& test,
                         const GuessExport& human, std::size_t min_guesses,
                         const std::map<Variant, VariantResult>& models) {
  std::map<std::pair<std::string, int>, std::size_t> counts;
  for (const auto& g : human.guesses) ++counts[{g.story_id, g.position}];
  HumanScores hs;
  for (const Story& st : test) {
    for (const ClozeInstance& inst : extract_cloze_instances(st, scenario)) {
      auto it = counts.find({st.id, inst.history.position()});
      if (it == counts.end() || it->second < min_guesses) continue;
      HumanDistribution hd = build_human_distribution(human.guesses, human.resolutions, inst.history);
      hs.instance_ids.push_back(inst.id());
      hs.golds.push_back(inst.gold);
      hs.distributions.push_back(std::move(hd.dist));
    }
  }
  if (hs.golds.empty()) return hs;
  std::vector<Category> top;
  for (const auto& d : hs.distributions) top.push_back(d.argmax_category());
  hs.accuracy = accuracy(top, hs.golds);
  hs.perplexity = perplexity(hs.distributions, hs.golds);
  hs.floored_perplexity = perplexity(hs.distributions, hs.golds, kPerplexityFloor);
  for (const auto& [v, r] : models) {
    std::map<std::string, const PredictionDistribution*> by_id;
    for (const auto& d : r.distributions) by_id[d.instance_id] = &d;
    std::vector<PredictionDistribution> aligned;
    double jsd = 0;
    for (const auto& h : hs.distributions) {
      aligned.push_back(*by_id.at(h.instance_id));
      jsd += jensen_shannon(aligned.back(), h);
    }
    hs.relative[v] = relative_accuracy(aligned, hs.distributions);
    hs.mean_jsd[v] = jsd / static_cast<double>(aligned.size());
  }
  return hs;
}

}  // namespace

EvalReport run_experiment(const ExperimentConfig& cfg, const Corpus& corpus,
                          const LoadedResources& resources,
                          const std::optional<GuessExport>& human) {
  if (cfg.variants.empty()) throw std::invalid_argument("no model variants requested");
  if (corpus.empty()) throw std::invalid_argument("empty corpus");
  EvalReport report;
  report.config_hash = cfg.hash();
  report.seed = cfg.split.seed;
  report.variants = cfg.variants;
  const EmbeddingStore* emb = resources.embeddings ? &*resources.embeddings : nullptr;
  const ThematicFitStore* tf = resources.thematic_fit ? &*resources.thematic_fit : nullptr;

  std::vector<StorySplit> splits;
  for (const auto& sc : corpus) splits.push_back(split_stories(sc.stories, cfg.split));

  std::vector<Variant> needed = cfg.variants;
  if (cfg.ablation) {
    for (Variant v : kAblationVariants) {
      if (std::find(needed.begin(), needed.end(), v) == needed.end()) needed.push_back(v);
    }
  }
  std::map<Variant, std::map<std::string, ReferentModel>> pooled;
  if (cfg.pooled) {
    for (Variant v : needed) {
      ModelConfig mc = cfg.model;
      mc.variant = v;
      pooled.emplace(v, train_pooled(corpus, splits, resources, mc));
    }
  }

  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const Scenario& scenario = corpus[i].scenario;
    const StorySplit& split = splits[i];
    ScenarioReport sr;
    sr.scenario = scenario.id;
    std::map<Variant, VariantResult> all;
    for (Variant v : needed) {
      if (cfg.pooled) {
        all.emplace(v, evaluate_model(pooled.at(v).at(scenario.id), scenario, split.test));
        continue;
      }
      ModelConfig mc = cfg.model;
      mc.variant = v;
      ReferentModel m = train_referent_model(scenario, split.train, split.development, emb, tf, mc);
      all.emplace(v, evaluate_model(m, scenario, split.test));
    }
    for (Variant v : cfg.variants) sr.results.emplace(v, all.at(v));
    if (cfg.ablation) {
      for (Variant v : kAblationVariants) sr.ablation.push_back(all.at(v));
    }
    sr.test_instances = sr.results.begin()->second.golds.size();
    if (human) sr.human = score_humans(scenario, split.test, *human, cfg.min_guesses, sr.results);
    report.scenarios.push_back(std::move(sr));
  }

  for (std::size_t a = 0; a < cfg.variants.size(); ++a) {
    for (std::size_t b = a + 1; b < cfg.variants.size(); ++b) {
      std::vector<Category> pa, pb, golds;
      for (const auto& sr : report.scenarios) {
        const auto& ra = sr.results.at(cfg.variants[a]);
        const auto& rb = sr.results.at(cfg.variants[b]);
        pa.insert(pa.end(), ra.predictions.begin(), ra.predictions.end());
        pb.insert(pb.end(), rb.predictions.begin(), rb.predictions.end());
        golds.insert(golds.end(), ra.golds.begin(), ra.golds.end());
      }
      report.mcnemar.push_back({cfg.variants[a], cfg.variants[b], mcnemar(pa, pb, golds)});
    }
  }
  return report;
}

namespace {

std::string num(double x, int precision = 4) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  if (std::isnan(x)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, x);
  return buf;
}

std::string header(const EvalReport& r) {
  return "# config_hash=" + r.config_hash + " seed=" + std::to_string(r.seed) + "\n";
}

bool has_human(const EvalReport& r) {
  return std::any_of(r.scenarios.begin(), r.scenarios.end(),
                     [](const ScenarioReport& s) { return s.human && !s.human->golds.empty(); });
}

}  // namespace

std::string table2_tsv(const EvalReport& r) {
  std::ostringstream os;
  os << header(r) << "scenario\tinstances";
  for (Variant v : r.variants) os << '\t' << to_string(v) << "_accuracy\t" << to_string(v) << "_perplexity";
  const bool human = has_human(r);
  if (human) os << "\thuman_instances\thuman_accuracy\thuman_perplexity\thuman_zero_gold\thuman_perplexity_floor";
  os << '\n';
  for (const auto& sc : r.scenarios) {
    os << sc.scenario << '\t' << sc.test_instances;
    for (Variant v : r.variants) {
      const auto& res = sc.results.at(v);
      os << '\t' << num(res.accuracy) << '\t' << num(res.perplexity.value);
    }
    if (human) {
      if (sc.human && !sc.human->golds.empty()) {
        const auto& h = *sc.human;
        os << '\t' << h.golds.size() << '\t' << num(h.accuracy) << '\t' << num(h.perplexity.value)
           << '\t' << h.perplexity.zero_probability_items << '\t' << num(h.floored_perplexity.value);
      } else {
        os << "\t0\tnan\tnan\t0\tnan";
      }
    }
    os << '\n';
  }
  os << "Average\t";
  std::size_t total = 0;
  for (const auto& sc : r.scenarios) total += sc.test_instances;
  os << total;
  for (Variant v : r.variants) {
    os << '\t' << num(r.average_accuracy(v)) << '\t' << num(r.average_perplexity(v));
  }
  if (human) {
    double acc = 0, ppl = 0, floor = 0;
    std::size_t n = 0, zero = 0, k = 0;
    for (const auto& sc : r.scenarios) {
      if (!sc.human || sc.human->golds.empty()) continue;
      acc += sc.human->accuracy;
      ppl += sc.human->perplexity.value;
      floor += sc.human->floored_perplexity.value;
      n += sc.human->golds.size();
      zero += sc.human->perplexity.zero_probability_items;
      ++k;
    }
    os << '\t' << n << '\t' << num(acc / k) << '\t' << num(ppl / k) << '\t' << zero << '\t'
       << num(floor / k);
  }
  os << '\n';
  return os.str();
}

std::string table3_tsv(const EvalReport& r) {
  std::ostringstream os;
  os << header(r) << "model";
  for (const auto& sc : r.scenarios) os << '\t' << sc.scenario;
  os << "\tAverage\n";
  if (r.scenarios.empty() || r.scenarios.front().ablation.empty()) return os.str();
  for (std::size_t k = 0; k < std::size(kAblationVariants); ++k) {
    os << to_string(kAblationVariants[k]);
    double sum = 0;
    for (const auto& sc : r.scenarios) {
      os << '\t' << num(sc.ablation[k].accuracy);
      sum += sc.ablation[k].accuracy;
    }
    os << '\t' << num(sum / static_cast<double>(r.scenarios.size())) << '\n';
  }
  return os.str();
}

std::string mcnemar_tsv(const EvalReport& r) {
  std::ostringstream os;
  os << header(r) << "model_a\tmodel_b\tb\tc\tstatistic\tp_value\n";
  for (const auto& m : r.mcnemar) {
    os << to_string(m.a) << '\t' << to_string(m.b) << '\t' << m.result.b << '\t' << m.result.c
       << '\t' << num(m.result.statistic) << '\t' << num(m.result.p_value, 6) << '\n';
  }
  return os.str();
}

std::string human_tsv(const EvalReport& r) {
  std::ostringstream os;
  os << header(r) << "scenario\tmodel\tinstances\trelative_accuracy\texpected_human_probability\tmean_jsd\n";
  std::map<Variant, std::array<double, 3>> sums;
  std::size_t k = 0;
  for (const auto& sc : r.scenarios) {
    if (!sc.human || sc.human->golds.empty()) continue;
    ++k;
    for (Variant v : r.variants) {
      const auto& rel = sc.human->relative.at(v);
      const double jsd = sc.human->mean_jsd.at(v);
      os << sc.scenario << '\t' << to_string(v) << '\t' << sc.human->golds.size() << '\t'
         << num(rel.percentage) << '\t' << num(rel.expected_human_probability) << '\t' << num(jsd, 6)
         << '\n';
      auto& s = sums[v];
      s[0] += rel.percentage;
      s[1] += rel.expected_human_probability;
      s[2] += jsd;
    }
  }
  if (k == 0) return os.str();
  for (Variant v : r.variants) {
    const auto& s = sums[v];
    os << "Average\t" << to_string(v) << "\t-\t" << num(s[0] / k) << '\t' << num(s[1] / k) << '\t'
       << num(s[2] / k, 6) << '\n';
  }
  return os.str();
}

nlohmann::json distribution_to_json(const PredictionDistribution& d) {
  std::vector<std::string> keys;
  for (const auto& c : d.candidates) keys.push_back(c.key());
  return {{"instance", d.instance_id}, {"candidates", keys}, {"probs", d.probs}};
}

PredictionDistribution distribution_from_json(const nlohmann::json& j) {
  PredictionDistribution d;
  d.instance_id = j.at("instance").get<std::string>();
  for (const auto& k : j.at("candidates")) {
    auto c = Category::from_key(k.get<std::string>());
    if (!c) throw std::invalid_argument("bad category key " + k.dump());
    d.candidates.push_back(*c);
  }
  d.probs = j.at("probs").get<std::vector<double>>();
  if (d.probs.size() != d.candidates.size()) {
    throw std::invalid_argument("distribution " + d.instance_id + " has mismatched lengths");
  }
  return d;
}

std::vector<PredictionDistribution> read_distributions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ResourceError("cannot open " + path.string());
  std::vector<PredictionDistribution> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      if (!j.contains("instance")) continue;  // provenance header
      out.push_back(distribution_from_json(j));
    } catch (const std::exception& e) {
      throw ResourceError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

nlohmann::json report_json(const EvalReport& r) {
  auto result_json = [](const VariantResult& v) {
    return nlohmann::json{{"variant", to_string(v.variant)},
                          {"accuracy", v.accuracy},
                          {"perplexity", std::isinf(v.perplexity.value) ? nlohmann::json("inf")
                                                                        : nlohmann::json(v.perplexity.value)},
                          {"zero_probability_items", v.perplexity.zero_probability_items},
                          {"instances", v.golds.size()},
                          {"training",
                           {{"converged", v.training.converged},
                            {"iterations", v.training.iterations},
                            {"objective", v.training.objective},
                            {"best_iteration", v.training.best_iteration}}}};
  };
  nlohmann::json scenarios = nlohmann::json::array();
  for (const auto& sc : r.scenarios) {
    nlohmann::json s = {{"scenario", sc.scenario}, {"instances", sc.test_instances}};
    for (Variant v : r.variants) s["models"].push_back(result_json(sc.results.at(v)));
    for (const auto& a : sc.ablation) s["ablation"].push_back(result_json(a));
    if (sc.human && !sc.human->golds.empty()) {
      const auto& h = *sc.human;
      nlohmann::json hj = {{"instances", h.golds.size()},
                           {"accuracy", h.accuracy},
                           {"perplexity", std::isinf(h.perplexity.value) ? nlohmann::json("inf")
                                                                         : nlohmann::json(h.perplexity.value)},
                           {"zero_probability_items", h.perplexity.zero_probability_items},
                           {"perplexity_floor", h.floored_perplexity.value}};
      for (Variant v : r.variants) {
        hj["models"].push_back({{"variant", to_string(v)},
                                {"relative_accuracy", h.relative.at(v).percentage},
                                {"expected_human_probability", h.relative.at(v).expected_human_probability},
                                {"mean_jsd", h.mean_jsd.at(v)}});
      }
      s["human"] = hj;
    }
    scenarios.push_back(s);
  }
  nlohmann::json average = nlohmann::json::array();
  for (Variant v : r.variants) {
    average.push_back({{"variant", to_string(v)},
                       {"accuracy", r.average_accuracy(v)},
                       {"perplexity", r.average_perplexity(v)}});
  }
  nlohmann::json mc = nlohmann::json::array();
  for (const auto& m : r.mcnemar) {
    mc.push_back({{"a", to_string(m.a)},
                  {"b", to_string(m.b)},
                  {"b_count", m.result.b},
                  {"c_count", m.result.c},
                  {"statistic", m.result.statistic},
                  {"p_value", m.result.p_value}});
  }
  return {{"config_hash", r.config_hash},
          {"seed", r.seed},
          {"scenarios", scenarios},
          {"average", average},
          {"mcnemar", mc}};
}

void write_report_files(const EvalReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "distributions");
  auto write = [&](const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + p.string());
  };
  write(dir / "table2.tsv", table2_tsv(report));
  write(dir / "table3.tsv", table3_tsv(report));
  write(dir / "mcnemar.tsv", mcnemar_tsv(report));
  if (has_human(report)) write(dir / "human.tsv", human_tsv(report));
  write(dir / "report.json", report_json(report).dump(2) + "\n");
  for (const auto& sc : report.scenarios) {
    for (const auto& [v, res] : sc.results) {
      std::ostringstream os;
      os << "{\"config_hash\":\"" << report.config_hash << "\",\"seed\":" << report.seed << "}\n";
      for (const auto& d : res.distributions) os << distribution_to_json(d).dump() << '\n';
      write(dir / "distributions" / (sc.scenario + "." + std::string(to_string(v)) + ".jsonl"),
            os.str());
    }
  }
}

}  // namespace refpred
