#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "refpred/corpus.hpp"

namespace refpred {

using Vector = Eigen::VectorXd;

class ResourceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Word vectors keyed by lowercased word.
class EmbeddingStore {
 public:
  explicit EmbeddingStore(int dimension = 0) : dimension_(dimension) {}

  int dimension() const { return dimension_; }
  std::size_t size() const { return table_.size(); }

  // Replaces an existing entry. Throws if the dimension differs.
  void insert(std::string_view word, Vector v);
  const Vector* find(std::string_view word) const;

  const std::vector<std::string>& load_warnings() const { return warnings_; }

 private:
  friend EmbeddingStore load_embeddings(const std::filesystem::path& path);

  int dimension_;
  std::unordered_map<std::string, Vector> table_;
  std::vector<std::string> warnings_;
};

// Text format: optional "<vocab_size> <dim>" header, then "word f1 ... fdim".
EmbeddingStore load_embeddings(const std::filesystem::path& path);

struct Filler {
  std::string word;
  double lmi = 0;
};

// (head, relation, filler) -> LMI, e.g. a distributional-memory tensor.
class ThematicFitStore {
 public:
  void insert(std::string_view head, std::string_view relation, std::string_view filler, double lmi);

  // Fillers of (head, relation), highest LMI first, ties by filler.
  std::span<const Filler> fillers(std::string_view head, std::string_view relation) const;
  std::size_t size() const { return size_; }

  using SlotMap = std::map<std::pair<std::string, std::string>, std::vector<Filler>, std::less<>>;
  const SlotMap& slots() const { return slots_; }

 private:
  friend ThematicFitStore load_thematic_fit(const std::filesystem::path& path);

  SlotMap slots_;
  std::size_t size_ = 0;
};

// Tab-separated "w0<TAB>relation<TAB>w1<TAB>lmi" lines. Subject and object labels
// are collapsed; when several collapse onto one slot the highest LMI is kept.
ThematicFitStore load_thematic_fit(const std::filesystem::path& path);

// 0 when either vector has zero norm. Throws std::invalid_argument on
// dimension mismatch.
double cosine(const Vector& a, const Vector& b);

// Mean embedding of the given words, skipping out-of-vocabulary ones.
// Returns nullopt when nothing is in vocabulary.
std::optional<Vector> mean_embedding(std::span<const std::string> words, const EmbeddingStore& emb);

// Average head-word embedding over every mention in the given stories.
Vector compute_null_referent(std::span<const Story> stories, const EmbeddingStore& emb);

Vector dr_vector(const History& history, const Category& candidate, const EmbeddingStore& emb,
                 const Vector& null_referent);

inline constexpr std::size_t kSlotFillerCount = 20;

// Mean embedding of the top fillers of (verb, relation); zero vector when
// there are none in vocabulary.
Vector predicate_slot_vector(std::string_view verb, std::string_view relation,
                             const ThematicFitStore& store, const EmbeddingStore& emb);

}  // namespace refpred
