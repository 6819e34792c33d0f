#pragma once

#include <compare>
#include <cstddef>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace refpred {

// Surface type of a referring expression.
enum class ReForm { kPronoun, kProperName, kFullNp, kOther };
enum class Person { kFirst, kSecond, kThird, kNa };

// Coarse syntactic slot used by the selectional, participant-type and schema
// features. Fine labels are kept on the token for the grammatical-function
// one-hot.
enum class SlotRelation { kSubject, kObject, kOther };

SlotRelation collapse_relation(std::string_view dep_label);
std::string_view to_string(SlotRelation r);
std::string_view to_string(ReForm f);
std::string_view to_string(Person p);
std::optional<ReForm> parse_re_form(std::string_view s);
std::optional<Person> parse_person(std::string_view s);

struct Scenario {
  std::string id;
  std::vector<std::string> participant_types;
  std::vector<std::string> event_types;

  bool has_participant_type(std::string_view pt) const;
  bool has_event_type(std::string_view ev) const;
};

struct Token {
  int index = 0;
  std::string surface;
  std::string lemma;
  int sentence_index = 0;
  std::string dep_relation;
  std::optional<int> head_index;
  std::optional<std::string> event_type;
};

struct Mention {
  std::string story_id;
  int start = 0;  // [start, end)
  int end = 0;
  int head_index = 0;
  std::string dr_id;
  std::optional<std::string> participant_type;
  ReForm re_form = ReForm::kFullNp;
  Person person = Person::kThird;
};

struct Story {
  std::string id;
  std::string scenario_id;
  std::vector<Token> tokens;
  std::vector<Mention> mentions;  // ordered by head_index

  const Token& head_token(const Mention& m) const { return tokens[m.head_index]; }
  // Token governing the mention head, if any.
  const Token* governor(const Mention& m) const;
  SlotRelation relation(const Mention& m) const;
};

struct ScenarioCorpus {
  Scenario scenario;
  std::vector<Story> stories;  // sorted by story id
};

// Scenarios sorted by id.
using Corpus = std::vector<ScenarioCorpus>;

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed record; the message carries "file:line".
class CorpusParseError : public CorpusError {
 public:
  CorpusParseError(const std::string& file, std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Type invariant violated; the message names the story and mention.
class CorpusValidationError : public CorpusError {
 public:
  using CorpusError::CorpusError;
};

Corpus load_corpus(const std::filesystem::path& path);
Corpus parse_corpus(std::string_view text, const std::string& source_name = "<memory>");
void validate_story(const Story& story, const Scenario& scenario);
std::string format_corpus(const Corpus& corpus);

const ScenarioCorpus* find_scenario(const Corpus& corpus, std::string_view id);

// A prediction target: a mentioned discourse referent, a not yet instantiated
// participant type, or the single catch-all novel category.
struct Category {
  enum class Kind { kMentioned, kUnmentionedPt, kNovel };

  Kind kind = Kind::kNovel;
  std::string label;  // dr id, participant type, or empty for novel

  static Category mentioned(std::string dr_id) { return {Kind::kMentioned, std::move(dr_id)}; }
  static Category unmentioned_pt(std::string pt) { return {Kind::kUnmentionedPt, std::move(pt)}; }
  static Category novel() { return {Kind::kNovel, {}}; }

  bool is_new() const { return kind != Kind::kMentioned; }

  // Stable textual key: "dr:<id>", "pt:<label>" or "novel".
  std::string key() const;
  static std::optional<Category> from_key(std::string_view key);

  friend auto operator<=>(const Category&, const Category&) = default;
};

struct ObservedPredicate {
  int token_index = 0;
  std::string lemma;
};

// Incremental view of a story just before the referring expression at a
// given mention position. Nothing at or after the target span is reachable
// through this interface. The story and scenario must outlive the history.
class History {
 public:
  History(const Story& story, const Scenario& scenario, int position);

  const Story& story() const { return *story_; }
  const Scenario& scenario() const { return *scenario_; }
  int position() const { return position_; }

  std::span<const Token> visible_tokens() const;
  const std::vector<const Mention*>& visible_mentions() const { return visible_mentions_; }
  const std::optional<ObservedPredicate>& observed_predicate() const { return observed_predicate_; }

  // Sentence index the target starts in.
  int target_sentence() const { return target_sentence_; }

  // Event-labeled verbs preceding the target's predicate, in textual order.
  // When the predicate is observed this stops before it; otherwise it covers
  // every visible event verb.
  const std::vector<int>& preceding_event_verbs() const { return preceding_event_verbs_; }

  // DRs in order of first visible mention.
  const std::vector<std::string>& mentioned_drs() const { return dr_order_; }
  const std::vector<const Mention*>& prior_mentions(const std::string& dr_id) const;
  bool has_prior_mention(const std::string& dr_id) const;
  bool participant_type_mentioned(const std::string& pt) const;

 private:
  const Story* story_;
  const Scenario* scenario_;
  int position_;
  int visible_token_count_ = 0;
  int target_sentence_ = 0;
  std::vector<const Mention*> visible_mentions_;
  std::optional<ObservedPredicate> observed_predicate_;
  std::vector<int> preceding_event_verbs_;
  std::vector<std::string> dr_order_;
  std::map<std::string, std::vector<const Mention*>> chains_;
};

struct ClozeInstance {
  History history;
  std::string target_relation;  // fine dependency label of the target head
  SlotRelation slot = SlotRelation::kOther;
  Category gold;

  const Mention& gold_mention() const { return history.story().mentions[history.position()]; }
  std::string id() const;  // "<story_id>:<position>"
};

struct ExtractionConfig {
  int min_sentence = 2;
  std::size_t max_targets = 30;
  bool require_script_governor = true;

  // Every event-governed mention of the story, used for calibration and training.
  static ExtractionConfig training() {
    return {0, std::numeric_limits<std::size_t>::max(), true};
  }
};

std::vector<Category> candidate_set(const History& history);
Category gold_category(const Story& story, const Scenario& scenario, int position);
std::vector<ClozeInstance> extract_cloze_instances(const Story& story, const Scenario& scenario,
                                                   const ExtractionConfig& cfg = {});

}  // namespace refpred
