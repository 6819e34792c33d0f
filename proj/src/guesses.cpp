#include "refpred/guesses.hpp"

#include <stdexcept>

namespace refpred {

std::string_view to_string(GuessRecord::Kind k) {
  return k == GuessRecord::Kind::kClicked ? "clicked" : "new";
}

std::string_view to_string(Verdict::Kind k) {
  switch (k) {
    case Verdict::Kind::kParticipantType: return "participant_type";
    case Verdict::Kind::kTrulyNovel: return "truly_novel";
    case Verdict::Kind::kAntecedent: return "antecedent";
  }
  return "truly_novel";
}

nlohmann::json to_json(const GuessRecord& g) {
  nlohmann::json j = {{"guess_id", g.guess_id},
                      {"session", g.session_id},
                      {"story", g.story_id},
                      {"position", g.position},
                      {"kind", to_string(g.kind)}};
  if (g.kind == GuessRecord::Kind::kClicked) {
    j["mention"] = g.clicked_mention;
  } else {
    j["text"] = g.text;
  }
  j["timestamp"] = g.timestamp;
  return j;
}

nlohmann::json to_json(const ResolutionRecord& r) {
  nlohmann::json v = {{"kind", to_string(r.verdict.kind)}};
  if (r.verdict.kind == Verdict::Kind::kParticipantType) v["participant_type"] = r.verdict.participant_type;
  if (r.verdict.kind == Verdict::Kind::kAntecedent) v["mention"] = r.verdict.antecedent_mention;
  return {{"guess_id", r.guess_id},
          {"adjudicator", r.adjudicator},
          {"verdict", v},
          {"timestamp", r.timestamp}};
}

GuessRecord guess_from_json(const nlohmann::json& j) {
  GuessRecord g;
  g.guess_id = j.value("guess_id", "");
  g.session_id = j.value("session", "");
  g.story_id = j.at("story").get<std::string>();
  g.position = j.at("position").get<int>();
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "clicked") {
    g.kind = GuessRecord::Kind::kClicked;
    g.clicked_mention = j.at("mention").get<int>();
  } else if (kind == "new") {
    g.kind = GuessRecord::Kind::kNew;
    g.text = j.at("text").get<std::string>();
  } else {
    throw std::invalid_argument("unknown guess kind '" + kind + "'");
  }
  g.timestamp = j.value("timestamp", "");
  return g;
}

Verdict verdict_from_json(const nlohmann::json& j) {
  Verdict v;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "participant_type") {
    v.kind = Verdict::Kind::kParticipantType;
    v.participant_type = j.at("participant_type").get<std::string>();
  } else if (kind == "truly_novel") {
    v.kind = Verdict::Kind::kTrulyNovel;
  } else if (kind == "antecedent") {
    v.kind = Verdict::Kind::kAntecedent;
    v.antecedent_mention = j.at("mention").get<int>();
  } else {
    throw std::invalid_argument("unknown verdict kind '" + kind + "'");
  }
  return v;
}

ResolutionRecord resolution_from_json(const nlohmann::json& j) {
  return {j.at("guess_id").get<std::string>(), j.value("adjudicator", ""),
          verdict_from_json(j.at("verdict")), j.value("timestamp", "")};
}

}  // namespace refpred
