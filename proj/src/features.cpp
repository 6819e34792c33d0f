#include "refpred/features.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

#include "text_util.hpp"

namespace refpred {

unsigned variant_groups(Variant v) {
  switch (v) {
    case Variant::kBase: return kShallowGroups;
    case Variant::kLinguistic: return kShallowGroups | kSelectionalPreference;
    case Variant::kLinguisticSchemas:
      return kShallowGroups | kSelectionalPreference | kPredicateSchema;
    case Variant::kLinguisticPtFit:
      return kShallowGroups | kSelectionalPreference | kParticipantTypeFit;
    case Variant::kScript: return kAllGroups;
  }
  return kAllGroups;
}

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kBase: return "base";
    case Variant::kLinguistic: return "linguistic";
    case Variant::kLinguisticSchemas: return "linguistic+schemas";
    case Variant::kLinguisticPtFit: return "linguistic+ptfit";
    case Variant::kScript: return "script";
  }
  return "script";
}

std::optional<Variant> parse_variant(std::string_view s) {
  for (Variant v : {Variant::kBase, Variant::kLinguistic, Variant::kLinguisticSchemas,
                    Variant::kLinguisticPtFit, Variant::kScript}) {
    if (to_string(v) == s) return v;
  }
  return std::nullopt;
}

FeatureLayout::FeatureLayout(std::vector<std::string> gf_labels) {
  std::set<std::string> unique;
  for (auto& l : gf_labels) {
    if (!l.empty() && l != "none" && l != "<unk>") unique.insert(std::move(l));
  }
  gf_labels_.assign(unique.begin(), unique.end());
  names_ = {"recency", "frequency"};
  for (const auto& l : gf_labels_) names_.push_back("gf=" + l);
  names_.push_back("gf=<unk>");
  names_.push_back("gf=none");
  names_.push_back("prev_subject");
  names_.push_back("prev_object");
  names_.push_back("prev_re=pronoun");
  names_.push_back("prev_re=non_pronominal");
  names_.push_back("prev_re=never");
  names_.push_back("selectional_preference");
  names_.push_back("participant_type_fit");
  names_.push_back("predicate_schema");
}

FeatureLayout FeatureLayout::from_training(std::span<const Story> stories) {
  std::vector<std::string> labels;
  for (const Story& st : stories) {
    for (const Mention& m : st.mentions) labels.push_back(st.head_token(m).dep_relation);
  }
  return FeatureLayout(std::move(labels));
}

int FeatureLayout::gf(std::string_view label) const {
  auto it = std::lower_bound(gf_labels_.begin(), gf_labels_.end(), label);
  if (it != gf_labels_.end() && *it == label) {
    return gf_begin() + static_cast<int>(it - gf_labels_.begin());
  }
  return gf_none() - 1;
}

FeatureGroup FeatureLayout::group_of(int index) const {
  if (index == recency()) return kRecency;
  if (index == frequency()) return kFrequency;
  if (index <= gf_none()) return kGrammaticalFunction;
  if (index == prev_subject()) return kPrevSubject;
  if (index == prev_object()) return kPrevObject;
  if (index < selectional_preference()) return kPrevReType;
  if (index == selectional_preference()) return kSelectionalPreference;
  if (index == participant_type_fit()) return kParticipantTypeFit;
  if (index == predicate_schema()) return kPredicateSchema;
  throw std::out_of_range("feature index " + std::to_string(index) + " outside layout");
}

Eigen::VectorXd FeatureLayout::mask(unsigned groups) const {
  Eigen::VectorXd m(size());
  for (int i = 0; i < size(); ++i) m[i] = (group_of(i) & groups) ? 1.0 : 0.0;
  return m;
}

Vector PTProfiles::get(const std::string& pt, SlotRelation r) const {
  auto it = profiles_.find({pt, r});
  return it == profiles_.end() ? Vector::Zero(dimension_) : it->second;
}

PTProfiles build_pt_profiles(std::span<const Story> stories, const EmbeddingStore& emb) {
  std::map<std::pair<std::string, SlotRelation>, std::pair<Vector, int>> sums;
  for (const Story& st : stories) {
    for (const Mention& m : st.mentions) {
      if (!m.participant_type) continue;
      const Token* gov = st.governor(m);
      if (!gov || !gov->event_type) continue;
      const Vector* x = emb.find(gov->lemma);
      if (!x) continue;
      auto [it, inserted] = sums.try_emplace({*m.participant_type, st.relation(m)},
                                             Vector::Zero(emb.dimension()), 0);
      it->second.first += *x;
      it->second.second += 1;
    }
  }
  PTProfiles profiles(emb.dimension());
  for (auto& [key, acc] : sums) profiles.set(key.first, key.second, acc.first / acc.second);
  return profiles;
}

Vector SchemaParams::alpha(SlotRelation r) const {
  auto it = by_relation.find(r);
  return it == by_relation.end() ? Vector::Zero(dimension) : it->second.alpha;
}

long SchemaParams::rule_count(SlotRelation r) const {
  auto it = by_relation.find(r);
  return it == by_relation.end() ? 0 : it->second.rule_count;
}

std::vector<SchemaRule> schema_rules(const History& history, const std::string& dr_id,
                                     std::string_view verb, SlotRelation r,
                                     const EmbeddingStore& emb) {
  std::vector<SchemaRule> out;
  if (!emb.find(verb)) return out;
  const auto& verbs = history.preceding_event_verbs();
  const auto& chain = history.prior_mentions(dr_id);
  const Story& story = history.story();
  const std::size_t first = verbs.size() > kSchemaWindow ? verbs.size() - kSchemaWindow : 0;
  for (std::size_t i = first; i < verbs.size(); ++i) {
    const int u = verbs[i];
    const bool governs = std::any_of(chain.begin(), chain.end(), [&](const Mention* m) {
      const Token& head = story.head_token(*m);
      return head.head_index == u && story.relation(*m) == r;
    });
    if (!governs) continue;
    const std::string& lemma = story.tokens[u].lemma;
    if (!emb.find(lemma)) continue;
    out.push_back({u, detail::lowercase(lemma), detail::lowercase(verb)});
  }
  return out;
}

SchemaParams estimate_schema_params(const Scenario& scenario, std::span<const Story> stories,
                                    const EmbeddingStore& emb) {
  SchemaParams params;
  params.dimension = emb.dimension();
  for (const Story& st : stories) {
    for (const ClozeInstance& inst :
         extract_cloze_instances(st, scenario, ExtractionConfig::training())) {
      const Mention& target = inst.gold_mention();
      const Token* gov = st.governor(target);
      auto rules = schema_rules(inst.history, target.dr_id, gov->lemma, inst.slot, emb);
      if (rules.empty()) continue;
      auto [it, inserted] = params.by_relation.try_emplace(
          inst.slot, SchemaParams::Entry{Vector::Zero(emb.dimension()), 0});
      for (const SchemaRule& rule : rules) {
        it->second.alpha += *emb.find(rule.antecedent) - *emb.find(rule.consequent);
        it->second.rule_count += 1;
      }
    }
  }
  for (auto& [r, e] : params.by_relation) e.alpha /= static_cast<double>(e.rule_count);
  return params;
}

Resources calibrate_resources(const Scenario& scenario, std::span<const Story> train,
                              const EmbeddingStore* embeddings,
                              const ThematicFitStore* thematic_fit) {
  Resources r;
  r.embeddings = embeddings;
  r.thematic_fit = thematic_fit;
  r.layout = FeatureLayout::from_training(train);
  if (embeddings) {
    r.null_referent = compute_null_referent(train, *embeddings);
    r.profiles = build_pt_profiles(train, *embeddings);
    r.schema = estimate_schema_params(scenario, train, *embeddings);
  }
  return r;
}

namespace {

nlohmann::json vec_json(const Vector& v) { return std::vector<double>(v.begin(), v.end()); }

Vector json_vec(const nlohmann::json& j) {
  auto xs = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(xs.data(), static_cast<Eigen::Index>(xs.size()));
}

SlotRelation parse_slot(const std::string& s) {
  for (SlotRelation r : {SlotRelation::kSubject, SlotRelation::kObject, SlotRelation::kOther}) {
    if (to_string(r) == s) return r;
  }
  throw std::invalid_argument("unknown slot relation '" + s + "'");
}

}  // namespace

nlohmann::json calibration_to_json(const Resources& r) {
  nlohmann::json profiles = nlohmann::json::array();
  for (const auto& [key, v] : r.profiles.entries()) {
    profiles.push_back({{"pt", key.first}, {"relation", to_string(key.second)}, {"vector", vec_json(v)}});
  }
  nlohmann::json schema = nlohmann::json::array();
  for (const auto& [rel, e] : r.schema.by_relation) {
    schema.push_back(
        {{"relation", to_string(rel)}, {"rule_count", e.rule_count}, {"alpha", vec_json(e.alpha)}});
  }
  return {{"gf_labels", r.layout.gf_labels()},
          {"dimension", r.profiles.dimension()},
          {"null_referent", vec_json(r.null_referent)},
          {"pt_profiles", profiles},
          {"schema_dimension", r.schema.dimension},
          {"schema", schema}};
}

Resources calibration_from_json(const nlohmann::json& j, const EmbeddingStore* embeddings,
                                const ThematicFitStore* thematic_fit) {
  Resources r;
  r.embeddings = embeddings;
  r.thematic_fit = thematic_fit;
  r.layout = FeatureLayout(j.at("gf_labels").get<std::vector<std::string>>());
  r.null_referent = json_vec(j.at("null_referent"));
  r.profiles = PTProfiles(j.at("dimension").get<int>());
  for (const auto& p : j.at("pt_profiles")) {
    r.profiles.set(p.at("pt").get<std::string>(), parse_slot(p.at("relation").get<std::string>()),
                   json_vec(p.at("vector")));
  }
  r.schema.dimension = j.at("schema_dimension").get<int>();
  for (const auto& s : j.at("schema")) {
    r.schema.by_relation[parse_slot(s.at("relation").get<std::string>())] = {
        json_vec(s.at("alpha")), s.at("rule_count").get<long>()};
  }
  if (embeddings && r.profiles.dimension() != 0 && r.profiles.dimension() != embeddings->dimension()) {
    throw ResourceError("model was calibrated with " + std::to_string(r.profiles.dimension()) +
                        "-dimensional embeddings, got " + std::to_string(embeddings->dimension()));
  }
  return r;
}

double recency(const History& history, const Category& candidate) {
  if (candidate.kind != Category::Kind::kMentioned) return 0.0;
  const auto& chain = history.prior_mentions(candidate.label);
  if (chain.empty()) return 0.0;
  const int last = history.story().head_token(*chain.back()).sentence_index;
  return std::exp(-static_cast<double>(history.target_sentence() - last));
}

double frequency(const History& history, const Category& candidate) {
  if (candidate.kind != Category::Kind::kMentioned) return 0.0;
  return static_cast<double>(history.prior_mentions(candidate.label).size());
}

ShallowCategoricals shallow_categoricals(const History& history, const Category& candidate) {
  ShallowCategoricals out{"none", false, false, PrevReType::kNeverObserved};
  if (candidate.kind != Category::Kind::kMentioned) return out;
  const auto& chain = history.prior_mentions(candidate.label);
  if (chain.empty()) return out;
  const Story& story = history.story();
  const Mention& last = *chain.back();
  out.grammatical_function = story.head_token(last).dep_relation;
  out.prev_re_type =
      last.re_form == ReForm::kPronoun ? PrevReType::kPronoun : PrevReType::kNonPronominal;
  const auto& verbs = history.preceding_event_verbs();
  if (!verbs.empty()) {
    const int u = verbs.back();
    for (const Mention* m : chain) {
      if (story.head_token(*m).head_index != u) continue;
      const SlotRelation r = story.relation(*m);
      out.prev_subject |= r == SlotRelation::kSubject;
      out.prev_object |= r == SlotRelation::kObject;
    }
  }
  return out;
}

double selectional_preference(const History& history, const Category& candidate,
                              std::string_view verb, SlotRelation r, const EmbeddingStore& emb,
                              const ThematicFitStore& store, const Vector& null_referent) {
  return cosine(dr_vector(history, candidate, emb, null_referent),
                predicate_slot_vector(verb, to_string(r), store, emb));
}

std::optional<std::string> candidate_participant_type(const History& history,
                                                      const Category& candidate) {
  switch (candidate.kind) {
    case Category::Kind::kUnmentionedPt: return candidate.label;
    case Category::Kind::kNovel: return std::nullopt;
    case Category::Kind::kMentioned: break;
  }
  const auto& chain = history.prior_mentions(candidate.label);
  for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
    if ((*it)->participant_type) return (*it)->participant_type;
  }
  return std::nullopt;
}

double participant_type_fit(const History& history, const Category& candidate,
                            std::string_view verb, SlotRelation r, const PTProfiles& profiles,
                            const EmbeddingStore& emb) {
  auto pt = candidate_participant_type(history, candidate);
  const Vector* x = emb.find(verb);
  if (!pt || !x) return 0.0;
  Vector profile = profiles.get(*pt, r);
  if (profile.size() != x->size()) return 0.0;
  return profile.dot(*x);
}

double predicate_schema(const History& history, const Category& candidate, std::string_view verb,
                        SlotRelation r, const SchemaParams& params, const EmbeddingStore& emb) {
  if (candidate.kind != Category::Kind::kMentioned) return 0.0;
  auto rules = schema_rules(history, candidate.label, verb, r, emb);
  if (rules.empty()) return 0.0;
  const Vector alpha = params.alpha(r);
  if (alpha.size() != emb.dimension()) return 0.0;
  double sum = 0;
  for (const SchemaRule& rule : rules) {
    sum += alpha.dot(*emb.find(rule.antecedent) - *emb.find(rule.consequent));
  }
  return sum / static_cast<double>(rules.size());
}

namespace {

// Per-candidate quantities that do not depend on the predicate.
struct CandidateContext {
  Category category;
  Eigen::VectorXd shallow;  // full layout, predicate features left at 0
  Vector dr_vec;
  std::optional<std::string> pt;
};

CandidateContext candidate_context(const ClozeInstance& instance, const Category& c,
                                   const Resources& res, unsigned groups) {
  const History& h = instance.history;
  const FeatureLayout& L = res.layout;
  CandidateContext ctx{c, Eigen::VectorXd::Zero(L.size()), {}, {}};
  auto& f = ctx.shallow;
  if (groups & kRecency) f[L.recency()] = recency(h, c);
  if (groups & kFrequency) f[L.frequency()] = frequency(h, c);
  if (groups & (kGrammaticalFunction | kPrevSubject | kPrevObject | kPrevReType)) {
    ShallowCategoricals s = shallow_categoricals(h, c);
    if (groups & kGrammaticalFunction) {
      f[s.grammatical_function == "none" && c.is_new() ? L.gf_none() : L.gf(s.grammatical_function)] = 1.0;
    }
    if (groups & kPrevSubject) f[L.prev_subject()] = s.prev_subject ? 1.0 : 0.0;
    if (groups & kPrevObject) f[L.prev_object()] = s.prev_object ? 1.0 : 0.0;
    if (groups & kPrevReType) f[L.prev_re(s.prev_re_type)] = 1.0;
  }
  if (res.embeddings && (groups & kSelectionalPreference)) {
    ctx.dr_vec = dr_vector(h, c, *res.embeddings, res.null_referent);
  }
  if (groups & kParticipantTypeFit) ctx.pt = candidate_participant_type(h, c);
  return ctx;
}

// Per-predicate quantities shared by all candidates.
struct VerbContext {
  std::string verb;
  const Vector* x = nullptr;
  Vector slot_vec;
};

VerbContext verb_context(std::string_view verb, SlotRelation r, const Resources& res,
                         unsigned groups) {
  VerbContext v{std::string(verb), nullptr, {}};
  if (verb.empty() || !res.embeddings) return v;
  v.x = res.embeddings->find(verb);
  if (res.thematic_fit && (groups & kSelectionalPreference)) {
    v.slot_vec = predicate_slot_vector(verb, to_string(r), *res.thematic_fit, *res.embeddings);
  }
  return v;
}

void fill_predicate_features(Eigen::Ref<Eigen::VectorXd> f, const ClozeInstance& instance,
                             const CandidateContext& c, const VerbContext& v,
                             const Resources& res, unsigned groups) {
  const FeatureLayout& L = res.layout;
  f = c.shallow;
  if (v.verb.empty() || !res.embeddings) return;
  if ((groups & kSelectionalPreference) && v.slot_vec.size() > 0 && c.dr_vec.size() > 0) {
    f[L.selectional_preference()] = cosine(c.dr_vec, v.slot_vec);
  }
  if ((groups & kParticipantTypeFit) && c.pt && v.x) {
    Vector profile = res.profiles.get(*c.pt, instance.slot);
    if (profile.size() == v.x->size()) f[L.participant_type_fit()] = profile.dot(*v.x);
  }
  if (groups & kPredicateSchema) {
    f[L.predicate_schema()] = predicate_schema(instance.history, c.category, v.verb, instance.slot,
                                               res.schema, *res.embeddings);
  }
}

}  // namespace

Eigen::VectorXd feature_vector(const ClozeInstance& instance, const Category& candidate,
                               std::string_view verb, const Resources& resources,
                               unsigned groups) {
  Eigen::VectorXd f(resources.layout.size());
  fill_predicate_features(f, instance, candidate_context(instance, candidate, resources, groups),
                          verb_context(verb, instance.slot, resources, groups), resources, groups);
  return f;
}

InstanceFeatures compute_instance_features(const ClozeInstance& instance,
                                           const Resources& resources, const PredicateLM* plm,
                                           const FeatureConfig& cfg) {
  InstanceFeatures out;
  out.id = instance.id();
  out.candidates = candidate_set(instance.history);
  auto g = std::find(out.candidates.begin(), out.candidates.end(), instance.gold);
  out.gold = g == out.candidates.end() ? -1 : static_cast<int>(g - out.candidates.begin());

  std::vector<CandidateContext> cands;
  cands.reserve(out.candidates.size());
  for (const Category& c : out.candidates) {
    cands.push_back(candidate_context(instance, c, resources, cfg.groups));
  }

  std::vector<std::pair<std::string, double>> hyps;
  const auto& observed = instance.history.observed_predicate();
  if (observed) {
    hyps.emplace_back(observed->lemma, 1.0);
  } else if (!(cfg.groups & kPredicateGroups) || !resources.embeddings) {
    hyps.emplace_back(std::string(), 1.0);
  } else {
    if (!plm) {
      throw std::invalid_argument("instance " + out.id +
                                  " has an unobserved predicate but no predicate LM was given");
    }
    auto probs = plm->probabilities(event_verb_sequence(instance.history));
    const auto& vocab = plm->vocabulary();
    std::vector<std::size_t> order(vocab.size());
    std::iota(order.begin(), order.end(), 0);
    if (cfg.marginalization_top_k > 0 && cfg.marginalization_top_k < order.size()) {
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
      order.resize(cfg.marginalization_top_k);
      std::sort(order.begin(), order.end());
    }
    double total = 0;
    for (std::size_t i : order) total += probs[i];
    for (std::size_t i : order) hyps.emplace_back(vocab[i], probs[i] / total);
  }

  const int n = static_cast<int>(cands.size());
  for (auto& [verb, weight] : hyps) {
    VerbContext v = verb_context(verb, instance.slot, resources, cfg.groups);
    PredicateHypothesis hyp{verb, weight, Eigen::MatrixXd(n, resources.layout.size())};
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd row(resources.layout.size());
      fill_predicate_features(row, instance, cands[i], v, resources, cfg.groups);
      hyp.features.row(i) = row.transpose();
    }
    out.hypotheses.push_back(std::move(hyp));
  }
  return out;
}

InstanceFeatures mask_features(InstanceFeatures features, const FeatureLayout& layout,
                               unsigned groups) {
  const Eigen::VectorXd m = layout.mask(groups);
  for (auto& h : features.hypotheses) h.features = h.features * m.asDiagonal();
  return features;
}

}  // namespace refpred
