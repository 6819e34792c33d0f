#include "refpred/corpus.hpp"

#include <algorithm>
#include <set>

#include "text_util.hpp"

namespace refpred {

SlotRelation collapse_relation(std::string_view dep_label) {
  static const std::set<std::string, std::less<>> kSubject = {
      "nsubj", "nsubjpass", "nsubj:pass", "csubj", "csubjpass", "subj", "subject", "sbj",
      "sbj_tr", "sbj_intr"};
  static const std::set<std::string, std::less<>> kObject = {"dobj", "obj", "object"};
  std::string l = detail::lowercase(dep_label);
  if (kSubject.count(l)) return SlotRelation::kSubject;
  if (kObject.count(l)) return SlotRelation::kObject;
  return SlotRelation::kOther;
}

std::string_view to_string(SlotRelation r) {
  switch (r) {
    case SlotRelation::kSubject: return "subject";
    case SlotRelation::kObject: return "object";
    case SlotRelation::kOther: return "other";
  }
  return "other";
}

std::string_view to_string(ReForm f) {
  switch (f) {
    case ReForm::kPronoun: return "pronoun";
    case ReForm::kProperName: return "proper_name";
    case ReForm::kFullNp: return "full_np";
    case ReForm::kOther: return "other";
  }
  return "other";
}

std::string_view to_string(Person p) {
  switch (p) {
    case Person::kFirst: return "first";
    case Person::kSecond: return "second";
    case Person::kThird: return "third";
    case Person::kNa: return "na";
  }
  return "na";
}

std::optional<ReForm> parse_re_form(std::string_view s) {
  if (s == "pronoun") return ReForm::kPronoun;
  if (s == "proper_name") return ReForm::kProperName;
  if (s == "full_np") return ReForm::kFullNp;
  if (s == "other") return ReForm::kOther;
  return std::nullopt;
}

std::optional<Person> parse_person(std::string_view s) {
  if (s == "first") return Person::kFirst;
  if (s == "second") return Person::kSecond;
  if (s == "third") return Person::kThird;
  if (s == "na") return Person::kNa;
  return std::nullopt;
}

bool Scenario::has_participant_type(std::string_view pt) const {
  return std::find(participant_types.begin(), participant_types.end(), pt) !=
         participant_types.end();
}

bool Scenario::has_event_type(std::string_view ev) const {
  return std::find(event_types.begin(), event_types.end(), ev) != event_types.end();
}

const Token* Story::governor(const Mention& m) const {
  const Token& head = tokens[m.head_index];
  if (!head.head_index) return nullptr;
  return &tokens[*head.head_index];
}

SlotRelation Story::relation(const Mention& m) const {
  return collapse_relation(tokens[m.head_index].dep_relation);
}

const ScenarioCorpus* find_scenario(const Corpus& corpus, std::string_view id) {
  for (const auto& sc : corpus) {
    if (sc.scenario.id == id) return &sc;
  }
  return nullptr;
}

std::string Category::key() const {
  switch (kind) {
    case Kind::kMentioned: return "dr:" + label;
    case Kind::kUnmentionedPt: return "pt:" + label;
    case Kind::kNovel: return "novel";
  }
  return "novel";
}

std::optional<Category> Category::from_key(std::string_view key) {
  if (key == "novel") return Category::novel();
  if (key.starts_with("dr:") && key.size() > 3) return Category::mentioned(std::string(key.substr(3)));
  if (key.starts_with("pt:") && key.size() > 3) {
    return Category::unmentioned_pt(std::string(key.substr(3)));
  }
  return std::nullopt;
}

History::History(const Story& story, const Scenario& scenario, int position)
    : story_(&story), scenario_(&scenario), position_(position) {
  if (position < 0 || position >= static_cast<int>(story.mentions.size())) {
    throw std::out_of_range("history position out of range for story " + story.id);
  }
  const Mention& target = story.mentions[position];
  visible_token_count_ = target.start;
  target_sentence_ = story.tokens[target.start].sentence_index;

  for (const Mention& m : story.mentions) {
    if (m.head_index >= target.start) continue;
    visible_mentions_.push_back(&m);
    auto [it, inserted] = chains_.try_emplace(m.dr_id);
    if (inserted) dr_order_.push_back(m.dr_id);
    it->second.push_back(&m);
  }

  const Token* gov = story.governor(target);
  int verb_limit = visible_token_count_;
  if (gov && gov->index < target.start) {
    observed_predicate_ = ObservedPredicate{gov->index, detail::lowercase(gov->lemma)};
    verb_limit = gov->index;
  }
  for (int i = 0; i < verb_limit; ++i) {
    if (story.tokens[i].event_type) preceding_event_verbs_.push_back(i);
  }
}

std::span<const Token> History::visible_tokens() const {
  return std::span<const Token>(story_->tokens.data(), visible_token_count_);
}

const std::vector<const Mention*>& History::prior_mentions(const std::string& dr_id) const {
  static const std::vector<const Mention*> kEmpty;
  auto it = chains_.find(dr_id);
  return it == chains_.end() ? kEmpty : it->second;
}

bool History::has_prior_mention(const std::string& dr_id) const {
  return chains_.count(dr_id) > 0;
}

bool History::participant_type_mentioned(const std::string& pt) const {
  return std::any_of(visible_mentions_.begin(), visible_mentions_.end(),
                     [&](const Mention* m) { return m->participant_type == pt; });
}

std::string ClozeInstance::id() const {
  return history.story().id + ":" + std::to_string(history.position());
}

std::vector<Category> candidate_set(const History& history) {
  std::vector<Category> out;
  for (const auto& dr : history.mentioned_drs()) out.push_back(Category::mentioned(dr));
  for (const auto& pt : history.scenario().participant_types) {
    if (!history.participant_type_mentioned(pt)) out.push_back(Category::unmentioned_pt(pt));
  }
  out.push_back(Category::novel());
  return out;
}

Category gold_category(const Story& story, const Scenario& scenario, int position) {
  History history(story, scenario, position);
  const Mention& target = story.mentions[position];
  if (history.has_prior_mention(target.dr_id)) return Category::mentioned(target.dr_id);
  // A participant type that is already instantiated by another referent no
  // longer has its own category, so a further instance counts as novel.
  if (target.participant_type && scenario.has_participant_type(*target.participant_type) &&
      !history.participant_type_mentioned(*target.participant_type)) {
    return Category::unmentioned_pt(*target.participant_type);
  }
  return Category::novel();
}

std::vector<ClozeInstance> extract_cloze_instances(const Story& story, const Scenario& scenario,
                                                   const ExtractionConfig& cfg) {
  std::vector<ClozeInstance> out;
  for (int pos = 0; pos < static_cast<int>(story.mentions.size()); ++pos) {
    if (out.size() >= cfg.max_targets) break;
    const Mention& m = story.mentions[pos];
    const Token& head = story.head_token(m);
    if (story.tokens[m.start].sentence_index < cfg.min_sentence) continue;
    const Token* gov = story.governor(m);
    if (cfg.require_script_governor && (!gov || !gov->event_type)) continue;
    History history(story, scenario, pos);
    Category gold = gold_category(story, scenario, pos);
    out.push_back(ClozeInstance{std::move(history), head.dep_relation,
                                collapse_relation(head.dep_relation), std::move(gold)});
  }
  return out;
}

}  // namespace refpred
