#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "json.hpp"

namespace refpred {

// One human guess at a cloze position: a click on a preceding mention or a
// free-text "New" answer.
struct GuessRecord {
  enum class Kind { kClicked, kNew };

  std::string guess_id;
  std::string session_id;
  std::string story_id;
  int position = 0;  // index of the target mention
  Kind kind = Kind::kClicked;
  int clicked_mention = -1;
  std::string text;
  std::string timestamp;
};

struct Verdict {
  enum class Kind { kParticipantType, kTrulyNovel, kAntecedent };

  Kind kind = Kind::kTrulyNovel;
  std::string participant_type;
  int antecedent_mention = -1;
};

// Adjudication of a "New" guess. Later records for the same guess supersede
// earlier ones.
struct ResolutionRecord {
  std::string guess_id;
  std::string adjudicator;
  Verdict verdict;
  std::string timestamp;
};

std::string_view to_string(GuessRecord::Kind k);
std::string_view to_string(Verdict::Kind k);

nlohmann::json to_json(const GuessRecord& g);
nlohmann::json to_json(const ResolutionRecord& r);
GuessRecord guess_from_json(const nlohmann::json& j);
ResolutionRecord resolution_from_json(const nlohmann::json& j);
Verdict verdict_from_json(const nlohmann::json& j);

}  // namespace refpred
