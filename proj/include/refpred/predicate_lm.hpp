#pragma once

#include <functional>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "refpred/corpus.hpp"

namespace refpred {

inline constexpr std::string_view kUnknownPredicate = "<unk>";

struct PredicateProbability {
  std::string verb;
  double probability = 0;
};

// Distribution over the next script predicate given the preceding ones.
// Implementations must return a proper distribution over vocabulary().
class PredicateLM {
 public:
  virtual ~PredicateLM() = default;

  virtual std::string implementation() const = 0;
  // Event-verb lemmas seen in training plus kUnknownPredicate, sorted.
  virtual const std::vector<std::string>& vocabulary() const = 0;
  // Probabilities aligned with vocabulary().
  virtual std::vector<double> probabilities(std::span<const std::string> preceding) const = 0;
  virtual nlohmann::json to_json() const = 0;
};

class PredicateLMError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Event-verb lemma sequence of a story in textual order, lowercased.
std::vector<std::string> event_verb_sequence(const Story& story);
std::vector<std::string> event_verb_sequence(const History& history);

// Interpolated Witten-Bell n-gram model over predicate sequences. Context is
// reset at story boundaries; no sentence padding, so an empty history yields
// the unigram distribution.
class WittenBellPredicateLM : public PredicateLM {
 public:
  explicit WittenBellPredicateLM(int order = 3);

  void train(std::span<const std::vector<std::string>> sequences);

  std::string implementation() const override;
  const std::vector<std::string>& vocabulary() const override { return vocabulary_; }
  std::vector<double> probabilities(std::span<const std::string> preceding) const override;
  nlohmann::json to_json() const override;
  static std::unique_ptr<WittenBellPredicateLM> from_json(const nlohmann::json& j);

  int order() const { return order_; }

 private:
  struct ContextStats {
    std::map<std::string, double> next;  // word -> count
    double total = 0;
  };

  double probability(const std::string& word, std::span<const std::string> context) const;

  int order_;
  std::vector<std::string> vocabulary_;
  // Keyed by context (size 0..order-1).
  std::map<std::vector<std::string>, ContextStats> stats_;
};

using PredicateLMTrainer =
    std::function<std::unique_ptr<PredicateLM>(std::span<const std::vector<std::string>>)>;
using PredicateLMLoader = std::function<std::unique_ptr<PredicateLM>(const nlohmann::json&)>;

// Implementations are selected by name. Built in: "wb-trigram" (default),
// "wb-bigram", "unigram".
void register_predicate_lm(const std::string& name, PredicateLMTrainer trainer,
                           PredicateLMLoader loader);
std::vector<std::string> predicate_lm_implementations();

std::unique_ptr<PredicateLM> train_predicate_lm(std::span<const Story> stories,
                                                const std::string& implementation = "wb-trigram");
std::unique_ptr<PredicateLM> load_predicate_lm(const nlohmann::json& j);

std::vector<PredicateProbability> next_predicate_distribution(
    const PredicateLM& lm, std::span<const std::string> preceding);

}  // namespace refpred
