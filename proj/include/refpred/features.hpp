#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "refpred/corpus.hpp"
#include "refpred/lexical.hpp"
#include "refpred/predicate_lm.hpp"

namespace refpred {

// Feature groups, one bit per row of the feature summary.
enum FeatureGroup : unsigned {
  kRecency = 1u << 0,
  kFrequency = 1u << 1,
  kGrammaticalFunction = 1u << 2,
  kPrevSubject = 1u << 3,
  kPrevObject = 1u << 4,
  kPrevReType = 1u << 5,
  kSelectionalPreference = 1u << 6,
  kParticipantTypeFit = 1u << 7,
  kPredicateSchema = 1u << 8,
};

inline constexpr unsigned kShallowGroups =
    kRecency | kFrequency | kGrammaticalFunction | kPrevSubject | kPrevObject | kPrevReType;
inline constexpr unsigned kAllGroups =
    kShallowGroups | kSelectionalPreference | kParticipantTypeFit | kPredicateSchema;
// Groups whose value depends on the governing predicate.
inline constexpr unsigned kPredicateGroups =
    kSelectionalPreference | kParticipantTypeFit | kPredicateSchema;

// Model variants. The two middle ones are the ablation rows.
enum class Variant { kBase, kLinguistic, kLinguisticSchemas, kLinguisticPtFit, kScript };

unsigned variant_groups(Variant v);
std::string_view to_string(Variant v);
std::optional<Variant> parse_variant(std::string_view s);

enum class PrevReType { kPronoun, kNonPronominal, kNeverObserved };

// Named dense layout. The grammatical-function one-hot covers the dependency
// labels seen on training mention heads, plus "<unk>" and "none".
class FeatureLayout {
 public:
  FeatureLayout() : FeatureLayout(std::vector<std::string>{}) {}
  explicit FeatureLayout(std::vector<std::string> gf_labels);
  static FeatureLayout from_training(std::span<const Story> stories);

  int size() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<std::string>& gf_labels() const { return gf_labels_; }

  static constexpr int recency() { return 0; }
  static constexpr int frequency() { return 1; }
  int gf(std::string_view label) const;  // unknown labels map to "<unk>"
  int gf_none() const { return gf_begin() + static_cast<int>(gf_labels_.size()) + 1; }
  int prev_subject() const { return gf_none() + 1; }
  int prev_object() const { return gf_none() + 2; }
  int prev_re(PrevReType t) const { return gf_none() + 3 + static_cast<int>(t); }
  int selectional_preference() const { return gf_none() + 6; }
  int participant_type_fit() const { return gf_none() + 7; }
  int predicate_schema() const { return gf_none() + 8; }

  FeatureGroup group_of(int index) const;
  // 1 where the group is enabled, 0 elsewhere.
  Eigen::VectorXd mask(unsigned groups) const;

  friend bool operator==(const FeatureLayout& a, const FeatureLayout& b) {
    return a.names_ == b.names_;
  }

 private:
  static constexpr int gf_begin() { return 2; }

  std::vector<std::string> gf_labels_;
  std::vector<std::string> names_;
};

// Mean embedding of the event verbs governing participant type p in slot r
// over the training stories.
class PTProfiles {
 public:
  explicit PTProfiles(int dimension = 0) : dimension_(dimension) {}

  int dimension() const { return dimension_; }
  void set(const std::string& pt, SlotRelation r, Vector v) { profiles_[{pt, r}] = std::move(v); }
  // Zero vector for unattested pairs.
  Vector get(const std::string& pt, SlotRelation r) const;
  const std::map<std::pair<std::string, SlotRelation>, Vector>& entries() const { return profiles_; }

 private:
  int dimension_;
  std::map<std::pair<std::string, SlotRelation>, Vector> profiles_;
};

PTProfiles build_pt_profiles(std::span<const Story> stories, const EmbeddingStore& emb);

// Per-relation mean rule vector: alpha_r = (1/D_r) * sum (x_u - x_v).
struct SchemaParams {
  struct Entry {
    Vector alpha;
    long rule_count = 0;
  };

  int dimension = 0;
  std::map<SlotRelation, Entry> by_relation;

  // Zero vector when no rule was seen for r.
  Vector alpha(SlotRelation r) const;
  long rule_count(SlotRelation r) const;
};

// One applicable rule "X-r-of-antecedent -> X-r-of-consequent".
struct SchemaRule {
  int antecedent_token = 0;
  std::string antecedent;
  std::string consequent;
};

inline constexpr std::size_t kSchemaWindow = 2;

// Rules whose antecedent is one of the last kSchemaWindow event verbs before
// the target predicate and governs a prior mention of dr_id in slot r. Rules
// with a verb missing from the embeddings are dropped.
std::vector<SchemaRule> schema_rules(const History& history, const std::string& dr_id,
                                     std::string_view verb, SlotRelation r,
                                     const EmbeddingStore& emb);

SchemaParams estimate_schema_params(const Scenario& scenario, std::span<const Story> stories,
                                    const EmbeddingStore& emb);

// Everything the feature function needs beyond the instance itself.
struct Resources {
  const EmbeddingStore* embeddings = nullptr;
  const ThematicFitStore* thematic_fit = nullptr;
  FeatureLayout layout;
  Vector null_referent;
  PTProfiles profiles;
  SchemaParams schema;
};

// Fits layout, null referent, PT profiles and schema parameters on training
// stories only. Either store may be null; dependent features are then 0.
Resources calibrate_resources(const Scenario& scenario, std::span<const Story> train,
                              const EmbeddingStore* embeddings,
                              const ThematicFitStore* thematic_fit);

nlohmann::json calibration_to_json(const Resources& r);
// Restores the calibrated part; the stores are attached by the caller.
Resources calibration_from_json(const nlohmann::json& j, const EmbeddingStore* embeddings,
                                const ThematicFitStore* thematic_fit);

double recency(const History& history, const Category& candidate);
double frequency(const History& history, const Category& candidate);

struct ShallowCategoricals {
  std::string grammatical_function;  // "none" for new categories
  bool prev_subject = false;
  bool prev_object = false;
  PrevReType prev_re_type = PrevReType::kNeverObserved;
};

ShallowCategoricals shallow_categoricals(const History& history, const Category& candidate);

double selectional_preference(const History& history, const Category& candidate,
                              std::string_view verb, SlotRelation r, const EmbeddingStore& emb,
                              const ThematicFitStore& store, const Vector& null_referent);

// Participant type of a candidate: the label for unmentioned types, the most
// recent labeled prior mention for mentioned referents.
std::optional<std::string> candidate_participant_type(const History& history,
                                                      const Category& candidate);

double participant_type_fit(const History& history, const Category& candidate,
                            std::string_view verb, SlotRelation r, const PTProfiles& profiles,
                            const EmbeddingStore& emb);

double predicate_schema(const History& history, const Category& candidate, std::string_view verb,
                        SlotRelation r, const SchemaParams& params, const EmbeddingStore& emb);

// Full feature vector for one candidate under one predicate hypothesis; an
// empty verb disables the predicate-dependent features. Groups outside
// `groups` are zero.
Eigen::VectorXd feature_vector(const ClozeInstance& instance, const Category& candidate,
                               std::string_view verb, const Resources& resources,
                               unsigned groups = kAllGroups);

// Features of all candidates under one predicate, weighted by p(verb | history).
struct PredicateHypothesis {
  std::string verb;
  double weight = 1.0;
  Eigen::MatrixXd features;  // candidates x layout size
};

struct InstanceFeatures {
  std::string id;
  std::vector<Category> candidates;
  int gold = -1;  // index into candidates, -1 when unknown
  std::vector<PredicateHypothesis> hypotheses;
};

struct FeatureConfig {
  unsigned groups = kAllGroups;
  // Keep only the k most probable predicates when marginalizing (renormalized);
  // 0 keeps the full vocabulary.
  std::size_t marginalization_top_k = 0;
};

// A single hypothesis when the predicate is observed or no enabled feature
// depends on it; otherwise one per predicate of the LM vocabulary.
InstanceFeatures compute_instance_features(const ClozeInstance& instance,
                                           const Resources& resources, const PredicateLM* plm,
                                           const FeatureConfig& cfg = {});

// Zeroes disabled groups. Idempotent.
InstanceFeatures mask_features(InstanceFeatures features, const FeatureLayout& layout,
                               unsigned groups);

}  // namespace refpred
