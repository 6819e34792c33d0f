#include "refpred/lexical.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <tuple>

#include "text_util.hpp"

namespace refpred {

void EmbeddingStore::insert(std::string_view word, Vector v) {
  if (dimension_ == 0) dimension_ = static_cast<int>(v.size());
  if (v.size() != dimension_) {
    throw ResourceError("embedding for '" + std::string(word) + "' has dimension " +
                        std::to_string(v.size()) + ", expected " + std::to_string(dimension_));
  }
  table_[detail::lowercase(word)] = std::move(v);
}

const Vector* EmbeddingStore::find(std::string_view word) const {
  auto it = table_.find(detail::lowercase(word));
  return it == table_.end() ? nullptr : &it->second;
}

EmbeddingStore load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ResourceError("cannot open embeddings file " + path.string());
  EmbeddingStore store;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) {
    throw ResourceError(path.string() + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    auto fields = detail::split_ws(detail::strip_cr(line));
    if (fields.empty()) continue;
    if (line_no == 1 && fields.size() == 2 && detail::parse_int(fields[0]) &&
        detail::parse_int(fields[1])) {
      store.dimension_ = *detail::parse_int(fields[1]);
      if (store.dimension_ <= 0) fail("non-positive dimension in header");
      continue;
    }
    const int arity = static_cast<int>(fields.size()) - 1;
    if (arity <= 0) fail("word without vector");
    if (store.dimension_ == 0) store.dimension_ = arity;
    if (arity != store.dimension_) {
      fail("expected " + std::to_string(store.dimension_) + " components, got " +
           std::to_string(arity));
    }
    Vector v(arity);
    for (int i = 0; i < arity; ++i) {
      auto x = detail::parse_double(fields[i + 1]);
      if (!x) fail("bad number '" + std::string(fields[i + 1]) + "'");
      v[i] = *x;
    }
    std::string word = detail::lowercase(fields[0]);
    if (store.table_.count(word)) {
      store.warnings_.push_back(path.string() + ":" + std::to_string(line_no) +
                                ": duplicate word '" + word + "', keeping the last occurrence");
    }
    store.table_[word] = std::move(v);
  }
  return store;
}

namespace {

bool filler_order(const Filler& a, const Filler& b) {
  if (a.lmi != b.lmi) return a.lmi > b.lmi;
  return a.word < b.word;
}

}  // namespace

void ThematicFitStore::insert(std::string_view head, std::string_view relation,
                              std::string_view filler, double lmi) {
  if (lmi < 0) throw ResourceError("negative LMI for (" + std::string(head) + ", " +
                                   std::string(relation) + ", " + std::string(filler) + ")");
  auto& slot = slots_[{detail::lowercase(head), std::string(relation)}];
  std::string w = detail::lowercase(filler);
  for (const auto& f : slot) {
    if (f.word == w) {
      throw ResourceError("duplicate thematic-fit entry (" + std::string(head) + ", " +
                          std::string(relation) + ", " + w + ")");
    }
  }
  Filler f{std::move(w), lmi};
  slot.insert(std::upper_bound(slot.begin(), slot.end(), f, filler_order), std::move(f));
  ++size_;
}

std::span<const Filler> ThematicFitStore::fillers(std::string_view head,
                                                  std::string_view relation) const {
  auto it = slots_.find(std::pair<std::string, std::string>(detail::lowercase(head), relation));
  if (it == slots_.end()) return {};
  return it->second;
}

ThematicFitStore load_thematic_fit(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ResourceError("cannot open thematic-fit file " + path.string());
  // Collect first, sort once per slot.
  std::map<std::pair<std::string, std::string>, std::map<std::string, double>> raw;
  std::set<std::tuple<std::string, std::string, std::string>> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto text = detail::strip_cr(line);
    if (text.empty() || text.front() == '#') continue;
    auto f = detail::split(text, '\t');
    auto where = path.string() + ":" + std::to_string(line_no) + ": ";
    if (f.size() != 4) throw ResourceError(where + "expected 4 tab-separated fields");
    auto lmi = detail::parse_double(f[3]);
    if (!lmi) throw ResourceError(where + "bad LMI '" + std::string(f[3]) + "'");
    if (*lmi < 0) throw ResourceError(where + "negative LMI");
    if (!seen.emplace(detail::lowercase(f[0]), std::string(f[1]), detail::lowercase(f[2])).second) {
      throw ResourceError(where + "duplicate entry (" + std::string(f[0]) + ", " +
                          std::string(f[1]) + ", " + std::string(f[2]) + ")");
    }
    // Labels such as sbj_tr or dobj are stored under their collapsed slot name.
    const SlotRelation r = collapse_relation(f[1]);
    const std::string rel = r == SlotRelation::kOther ? std::string(f[1]) : std::string(to_string(r));
    auto [it, inserted] = raw[{detail::lowercase(f[0]), rel}].emplace(detail::lowercase(f[2]), *lmi);
    if (!inserted) it->second = std::max(it->second, *lmi);
  }
  ThematicFitStore store;
  for (auto& [key, fillers] : raw) {
    auto& slot = store.slots_[key];
    for (auto& [w, lmi] : fillers) slot.push_back({w, lmi});
    std::sort(slot.begin(), slot.end(), filler_order);
    store.size_ += slot.size();
  }
  return store;
}

double cosine(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("cosine of vectors with dimensions " + std::to_string(a.size()) +
                                " and " + std::to_string(b.size()));
  }
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

std::optional<Vector> mean_embedding(std::span<const std::string> words, const EmbeddingStore& emb) {
  Vector sum = Vector::Zero(emb.dimension());
  int n = 0;
  for (const auto& w : words) {
    if (const Vector* v = emb.find(w)) {
      sum += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return Vector(sum / n);
}

Vector compute_null_referent(std::span<const Story> stories, const EmbeddingStore& emb) {
  std::vector<std::string> heads;
  for (const Story& st : stories) {
    for (const Mention& m : st.mentions) heads.push_back(st.head_token(m).lemma);
  }
  return mean_embedding(heads, emb).value_or(Vector::Zero(emb.dimension()));
}

Vector dr_vector(const History& history, const Category& candidate, const EmbeddingStore& emb,
                 const Vector& null_referent) {
  if (candidate.kind != Category::Kind::kMentioned) return null_referent;
  std::vector<std::string> heads;
  for (const Mention* m : history.prior_mentions(candidate.label)) {
    heads.push_back(history.story().head_token(*m).lemma);
  }
  return mean_embedding(heads, emb).value_or(null_referent);
}

Vector predicate_slot_vector(std::string_view verb, std::string_view relation,
                             const ThematicFitStore& store, const EmbeddingStore& emb) {
  auto fillers = store.fillers(verb, relation);
  std::vector<std::string> words;
  for (std::size_t i = 0; i < fillers.size() && i < kSlotFillerCount; ++i) {
    words.push_back(fillers[i].word);
  }
  return mean_embedding(words, emb).value_or(Vector::Zero(emb.dimension()));
}

}  // namespace refpred
