#include "refpred/predicate_lm.hpp"

#include <algorithm>
#include <mutex>
#include <set>

#include "text_util.hpp"

namespace refpred {

std::vector<std::string> event_verb_sequence(const Story& story) {
  std::vector<std::string> out;
  for (const Token& t : story.tokens) {
    if (t.event_type) out.push_back(detail::lowercase(t.lemma));
  }
  return out;
}

std::vector<std::string> event_verb_sequence(const History& history) {
  std::vector<std::string> out;
  for (int i : history.preceding_event_verbs()) {
    out.push_back(detail::lowercase(history.story().tokens[i].lemma));
  }
  return out;
}

WittenBellPredicateLM::WittenBellPredicateLM(int order) : order_(order) {
  if (order < 1) throw PredicateLMError("n-gram order must be positive");
}

std::string WittenBellPredicateLM::implementation() const {
  switch (order_) {
    case 1: return "unigram";
    case 2: return "wb-bigram";
    case 3: return "wb-trigram";
    default: return "wb-" + std::to_string(order_) + "gram";
  }
}

void WittenBellPredicateLM::train(std::span<const std::vector<std::string>> sequences) {
  std::set<std::string> words;
  stats_.clear();
  for (const auto& seq : sequences) {
    for (std::size_t i = 0; i < seq.size(); ++i) {
      words.insert(seq[i]);
      for (int k = 0; k < order_ && k <= static_cast<int>(i); ++k) {
        std::vector<std::string> ctx(seq.begin() + (i - k), seq.begin() + i);
        auto& s = stats_[ctx];
        s.next[seq[i]] += 1;
        s.total += 1;
      }
    }
  }
  if (words.empty()) throw PredicateLMError("no event-labeled verbs in training stories");
  words.insert(std::string(kUnknownPredicate));
  vocabulary_.assign(words.begin(), words.end());
}

double WittenBellPredicateLM::probability(const std::string& word,
                                          std::span<const std::string> context) const {
  if (context.empty()) {
    const ContextStats& s = stats_.at({});
    auto it = s.next.find(word);
    const double c = it == s.next.end() ? 0.0 : it->second;
    const double types = static_cast<double>(s.next.size());
    return (c + types / static_cast<double>(vocabulary_.size())) / (s.total + types);
  }
  const double lower = probability(word, context.subspan(1));
  auto it = stats_.find(std::vector<std::string>(context.begin(), context.end()));
  if (it == stats_.end()) return lower;
  const ContextStats& s = it->second;
  auto w = s.next.find(word);
  const double c = w == s.next.end() ? 0.0 : w->second;
  const double types = static_cast<double>(s.next.size());
  return (c + types * lower) / (s.total + types);
}

std::vector<double> WittenBellPredicateLM::probabilities(
    std::span<const std::string> preceding) const {
  const std::size_t keep = std::min<std::size_t>(preceding.size(), order_ - 1);
  std::vector<std::string> ctx;
  for (std::size_t i = preceding.size() - keep; i < preceding.size(); ++i) {
    std::string w = detail::lowercase(preceding[i]);
    if (!std::binary_search(vocabulary_.begin(), vocabulary_.end(), w)) {
      w = std::string(kUnknownPredicate);
    }
    ctx.push_back(std::move(w));
  }
  std::vector<double> out;
  out.reserve(vocabulary_.size());
  for (const auto& w : vocabulary_) out.push_back(probability(w, ctx));
  return out;
}

nlohmann::json WittenBellPredicateLM::to_json() const {
  nlohmann::json counts = nlohmann::json::array();
  for (const auto& [ctx, s] : stats_) {
    for (const auto& [w, c] : s.next) counts.push_back({ctx, w, c});
  }
  return {{"implementation", implementation()},
          {"order", order_},
          {"vocabulary", vocabulary_},
          {"counts", counts}};
}

std::unique_ptr<WittenBellPredicateLM> WittenBellPredicateLM::from_json(const nlohmann::json& j) {
  auto lm = std::make_unique<WittenBellPredicateLM>(j.at("order").get<int>());
  lm->vocabulary_ = j.at("vocabulary").get<std::vector<std::string>>();
  for (const auto& row : j.at("counts")) {
    auto ctx = row.at(0).get<std::vector<std::string>>();
    auto& s = lm->stats_[ctx];
    const double c = row.at(2).get<double>();
    s.next[row.at(1).get<std::string>()] += c;
    s.total += c;
  }
  if (!lm->stats_.count({})) throw PredicateLMError("predicate LM has no unigram counts");
  return lm;
}

namespace {

struct Registry {
  std::mutex mu;
  std::map<std::string, std::pair<PredicateLMTrainer, PredicateLMLoader>> entries;
};

Registry& registry() {
  static Registry* r = [] {
    auto* reg = new Registry;
    for (int order : {1, 2, 3}) {
      std::string name = WittenBellPredicateLM(order).implementation();
      reg->entries[name] = {
          [order](std::span<const std::vector<std::string>> seqs) -> std::unique_ptr<PredicateLM> {
            auto lm = std::make_unique<WittenBellPredicateLM>(order);
            lm->train(seqs);
            return lm;
          },
          [](const nlohmann::json& j) -> std::unique_ptr<PredicateLM> {
            return WittenBellPredicateLM::from_json(j);
          }};
    }
    return reg;
  }();
  return *r;
}

}  // namespace

void register_predicate_lm(const std::string& name, PredicateLMTrainer trainer,
                           PredicateLMLoader loader) {
  auto& reg = registry();
  std::lock_guard lock(reg.mu);
  reg.entries[name] = {std::move(trainer), std::move(loader)};
}

std::vector<std::string> predicate_lm_implementations() {
  auto& reg = registry();
  std::lock_guard lock(reg.mu);
  std::vector<std::string> out;
  for (const auto& [name, _] : reg.entries) out.push_back(name);
  return out;
}

std::unique_ptr<PredicateLM> train_predicate_lm(std::span<const Story> stories,
                                                const std::string& implementation) {
  PredicateLMTrainer trainer;
  {
    auto& reg = registry();
    std::lock_guard lock(reg.mu);
    auto it = reg.entries.find(implementation);
    if (it == reg.entries.end()) {
      throw PredicateLMError("unknown predicate LM implementation '" + implementation + "'");
    }
    trainer = it->second.first;
  }
  std::vector<std::vector<std::string>> seqs;
  for (const Story& st : stories) seqs.push_back(event_verb_sequence(st));
  return trainer(seqs);
}

std::unique_ptr<PredicateLM> load_predicate_lm(const nlohmann::json& j) {
  const auto name = j.at("implementation").get<std::string>();
  PredicateLMLoader loader;
  {
    auto& reg = registry();
    std::lock_guard lock(reg.mu);
    auto it = reg.entries.find(name);
    if (it == reg.entries.end()) {
      throw PredicateLMError("unknown predicate LM implementation '" + name + "'");
    }
    loader = it->second.second;
  }
  return loader(j);
}

std::vector<PredicateProbability> next_predicate_distribution(
    const PredicateLM& lm, std::span<const std::string> preceding) {
  auto probs = lm.probabilities(preceding);
  const auto& vocab = lm.vocabulary();
  std::vector<PredicateProbability> out;
  out.reserve(vocab.size());
  for (std::size_t i = 0; i < vocab.size(); ++i) out.push_back({vocab[i], probs[i]});
  return out;
}

}  // namespace refpred
