#include "refpred/cloze_service.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace refpred {

TaskView make_task_view(const History& history) {
  const Story& story = history.story();
  const Mention& target = story.mentions[history.position()];
  TaskView v;
  v.story_id = story.id;
  v.scenario_id = history.scenario().id;
  v.position = history.position();
  v.task_id = story.id + ":" + std::to_string(history.position());
  v.target_start = target.start;
  for (const Token& t : history.visible_tokens()) {
    v.tokens.push_back({t.index, t.surface, t.sentence_index});
  }
  const auto& order = history.mentioned_drs();
  for (const Mention* m : history.visible_mentions()) {
    const int color =
        static_cast<int>(std::find(order.begin(), order.end(), m->dr_id) - order.begin());
    v.mentions.push_back({static_cast<int>(m - story.mentions.data()), m->start,
                          std::min(m->end, target.start), m->head_index, color});
  }
  return v;
}

nlohmann::json to_json(const TaskView& view) {
  nlohmann::json tokens = nlohmann::json::array();
  for (const auto& t : view.tokens) {
    tokens.push_back({{"i", t.index}, {"text", t.surface}, {"sentence", t.sentence}});
  }
  nlohmann::json mentions = nlohmann::json::array();
  for (const auto& m : view.mentions) {
    mentions.push_back({{"mention", m.mention},
                        {"start", m.start},
                        {"end", m.end},
                        {"head", m.head},
                        {"color", m.color}});
  }
  return {{"task", view.task_id},
          {"story", view.story_id},
          {"scenario", view.scenario_id},
          {"position", view.position},
          {"tokens", tokens},
          {"mentions", mentions},
          {"target_start", view.target_start}};
}

nlohmann::json to_json(const GuessExport& e) {
  nlohmann::json guesses = nlohmann::json::array();
  for (const auto& g : e.guesses) guesses.push_back(to_json(g));
  nlohmann::json resolutions = nlohmann::json::array();
  for (const auto& r : e.resolutions) resolutions.push_back(to_json(r));
  nlohmann::json audit = nlohmann::json::array();
  for (const auto& r : e.audit) audit.push_back(to_json(r));
  nlohmann::json counts = nlohmann::json::array();
  for (const auto& c : e.counts) {
    counts.push_back({{"story", c.story_id}, {"position", c.position}, {"guesses", c.guesses}});
  }
  return {{"guesses", guesses}, {"resolutions", resolutions}, {"audit", audit}, {"counts", counts}};
}

GuessExport guess_export_from_json(const nlohmann::json& j) {
  GuessExport e;
  for (const auto& g : j.at("guesses")) e.guesses.push_back(guess_from_json(g));
  for (const auto& r : j.at("resolutions")) e.resolutions.push_back(resolution_from_json(r));
  for (const auto& r : j.value("audit", nlohmann::json::array())) {
    e.audit.push_back(resolution_from_json(r));
  }
  for (const auto& c : j.value("counts", nlohmann::json::array())) {
    e.counts.push_back({c.at("story").get<std::string>(), c.at("position").get<int>(),
                        c.at("guesses").get<int>()});
  }
  return e;
}

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

ClozeService::ClozeService(const Corpus& corpus, ServiceConfig cfg)
    : corpus_(corpus), cfg_(std::move(cfg)) {
  for (const auto& sc : corpus_) {
    for (const auto& st : sc.stories) {
      for (const auto& inst : extract_cloze_instances(st, sc.scenario, cfg_.extraction)) {
        task_index_[inst.id()] = tasks_.size();
        tasks_.push_back({inst.id(), &st, &sc.scenario, inst.history.position()});
      }
    }
  }
  guess_counts_.assign(tasks_.size(), 0);
  pending_.assign(tasks_.size(), 0);
  rng_.seed(cfg_.seed ? cfg_.seed : std::random_device{}());
  if (!cfg_.data_dir.empty()) {
    std::filesystem::create_directories(cfg_.data_dir);
    load();
  }
}

const std::vector<std::string>& ClozeService::participant_types(
    const std::string& scenario_id) const {
  const ScenarioCorpus* sc = find_scenario(corpus_, scenario_id);
  if (!sc) throw ServiceError(404, "unknown scenario " + scenario_id);
  return sc->scenario.participant_types;
}

const ClozeService::Task& ClozeService::task(const std::string& task_id) const {
  auto it = task_index_.find(task_id);
  if (it == task_index_.end()) throw ServiceError(404, "unknown task " + task_id);
  return tasks_[it->second];
}

std::string ClozeService::now() const { return cfg_.clock ? cfg_.clock() : utc_now(); }

void ClozeService::apply(const nlohmann::json& event) {
  const auto type = event.at("type").get<std::string>();
  if (type == "session") {
    sessions_.try_emplace(event.at("session").get<std::string>());
  } else if (type == "guess") {
    GuessRecord g = guess_from_json(event.at("record"));
    const std::size_t t = task_index_.at(g.story_id + ":" + std::to_string(g.position));
    sessions_[g.session_id].answered.insert(t);
    ++guess_counts_[t];
    guess_index_[g.guess_id] = guesses_.size();
    guesses_.push_back(std::move(g));
  } else if (type == "resolution") {
    ResolutionRecord r = resolution_from_json(event.at("record"));
    latest_resolution_[r.guess_id] = audit_.size();
    audit_.push_back(std::move(r));
  } else {
    throw std::runtime_error("unknown event type '" + type + "' in guess log");
  }
  ++events_;
}

void ClozeService::append(const nlohmann::json& event) {
  if (!cfg_.data_dir.empty()) {
    std::ofstream log(cfg_.data_dir / "guesses.ndjson", std::ios::app);
    log << event.dump() << '\n';
    log.flush();
    if (!log) throw ServiceError(500, "cannot append to the guess log");
  }
  apply(event);
  if (!cfg_.data_dir.empty() && cfg_.snapshot_every > 0 && events_ % cfg_.snapshot_every == 0) {
    write_snapshot();
  }
}

void ClozeService::write_snapshot() {
  nlohmann::json sessions = nlohmann::json::array();
  for (const auto& [id, _] : sessions_) sessions.push_back(id);
  nlohmann::json guesses = nlohmann::json::array();
  for (const auto& g : guesses_) guesses.push_back(to_json(g));
  nlohmann::json audit = nlohmann::json::array();
  for (const auto& r : audit_) audit.push_back(to_json(r));
  nlohmann::json snap = {
      {"events", events_}, {"sessions", sessions}, {"guesses", guesses}, {"audit", audit}};
  const auto tmp = cfg_.data_dir / "snapshot.json.tmp";
  std::ofstream(tmp) << snap.dump() << '\n';
  std::filesystem::rename(tmp, cfg_.data_dir / "snapshot.json");
}

void ClozeService::load() {
  std::size_t skip = 0;
  const auto snap_path = cfg_.data_dir / "snapshot.json";
  if (std::filesystem::exists(snap_path)) {
    std::ifstream in(snap_path);
    const auto snap = nlohmann::json::parse(in);
    for (const auto& s : snap.at("sessions")) apply({{"type", "session"}, {"session", s}});
    for (const auto& g : snap.at("guesses")) apply({{"type", "guess"}, {"record", g}});
    for (const auto& r : snap.at("audit")) apply({{"type", "resolution"}, {"record", r}});
    skip = snap.at("events").get<std::size_t>();
    events_ = skip;
  }
  std::ifstream log(cfg_.data_dir / "guesses.ndjson");
  std::string line;
  std::size_t n = 0;
  while (std::getline(log, line)) {
    if (line.empty() || n++ < skip) continue;
    apply(nlohmann::json::parse(line));
  }
}

std::string ClozeService::new_session() {
  std::unique_lock lock(mu_);
  std::string id;
  do {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << rng_();
    id = os.str();
  } while (sessions_.count(id));
  append({{"type", "session"}, {"session", id}});
  return id;
}

std::optional<TaskView> ClozeService::next_task(const std::string& session) {
  std::unique_lock lock(mu_);
  auto it = sessions_.find(session);
  if (it == sessions_.end()) throw ServiceError(404, "unknown session " + session);
  Session& s = it->second;
  if (!s.assigned) {
    std::optional<std::size_t> best;
    for (std::size_t t = 0; t < tasks_.size(); ++t) {
      if (s.answered.count(t)) continue;
      // Open assignments count against the target so it is never overshot.
      const int load = guess_counts_[t] + pending_[t];
      if (load >= static_cast<int>(cfg_.target_guesses)) continue;
      if (!best || load < guess_counts_[*best] + pending_[*best]) best = t;
    }
    if (!best) return std::nullopt;
    s.assigned = best;
    ++pending_[*best];
  }
  const Task& t = tasks_[*s.assigned];
  return make_task_view(History(*t.story, *t.scenario, t.position));
}

GuessRecord ClozeService::record_guess(const std::string& session, const std::string& task_id,
                                       const ClozeAnswer& answer) {
  std::unique_lock lock(mu_);
  auto it = sessions_.find(session);
  if (it == sessions_.end()) throw ServiceError(404, "unknown session " + session);
  Session& s = it->second;
  const std::size_t idx = task_index_.count(task_id) ? task_index_.at(task_id) : tasks_.size();
  if (idx < tasks_.size() && s.answered.count(idx)) {
    throw ServiceError(409, "task " + task_id + " was already answered in this session");
  }
  if (!s.assigned || *s.assigned != idx) {
    throw ServiceError(409, "task " + task_id + " is not the task assigned to this session");
  }
  const Task& t = tasks_[idx];
  const Mention& target = t.story->mentions[t.position];

  GuessRecord g;
  g.session_id = session;
  g.story_id = t.story->id;
  g.position = t.position;
  g.kind = answer.kind;
  if (answer.kind == GuessRecord::Kind::kClicked) {
    const int m = answer.mention;
    if (m < 0 || m >= static_cast<int>(t.story->mentions.size()) ||
        t.story->mentions[m].head_index >= target.start) {
      throw ServiceError(422, "mention " + std::to_string(m) + " is not in the shown text");
    }
    g.clicked_mention = m;
  } else {
    g.text = trim(answer.text);
    if (g.text.empty()) throw ServiceError(422, "a \"New\" answer needs a description");
  }
  std::ostringstream id;
  id << 'g' << std::setw(6) << std::setfill('0') << guesses_.size() + 1;
  g.guess_id = id.str();
  g.timestamp = now();

  s.assigned.reset();
  --pending_[idx];
  append({{"type", "guess"}, {"record", to_json(g)}});
  return g;
}

std::vector<ResolutionItem> ClozeService::resolution_queue() const {
  std::shared_lock lock(mu_);
  std::vector<ResolutionItem> out;
  for (const GuessRecord& g : guesses_) {
    if (g.kind != GuessRecord::Kind::kNew || latest_resolution_.count(g.guess_id)) continue;
    const Task& t = task(g.story_id + ":" + std::to_string(g.position));
    out.push_back({g, make_task_view(History(*t.story, *t.scenario, t.position)),
                   t.scenario->participant_types});
  }
  return out;
}

ResolutionRecord ClozeService::record_resolution(const std::string& adjudicator,
                                                 const std::string& guess_id,
                                                 const Verdict& verdict) {
  std::unique_lock lock(mu_);
  if (trim(adjudicator).empty()) throw ServiceError(422, "adjudicator name is required");
  auto gi = guess_index_.find(guess_id);
  if (gi == guess_index_.end()) throw ServiceError(404, "unknown guess " + guess_id);
  const GuessRecord& g = guesses_[gi->second];
  if (g.kind != GuessRecord::Kind::kNew) {
    throw ServiceError(422, "guess " + guess_id + " is a click and needs no resolution");
  }
  const Task& t = task(g.story_id + ":" + std::to_string(g.position));
  switch (verdict.kind) {
    case Verdict::Kind::kParticipantType:
      if (!t.scenario->has_participant_type(verdict.participant_type)) {
        throw ServiceError(422, "participant type '" + verdict.participant_type +
                                    "' is not in scenario " + t.scenario->id);
      }
      break;
    case Verdict::Kind::kAntecedent: {
      const int m = verdict.antecedent_mention;
      const Mention& target = t.story->mentions[t.position];
      if (m < 0 || m >= static_cast<int>(t.story->mentions.size()) ||
          t.story->mentions[m].head_index >= target.start) {
        throw ServiceError(422, "antecedent " + std::to_string(m) + " does not precede the target");
      }
      break;
    }
    case Verdict::Kind::kTrulyNovel: break;
  }
  if (auto prev = latest_resolution_.find(guess_id); prev != latest_resolution_.end()) {
    if (audit_[prev->second].adjudicator != adjudicator) {
      throw ServiceError(409, "guess " + guess_id + " was resolved by another adjudicator");
    }
  }
  ResolutionRecord r{guess_id, adjudicator, verdict, now()};
  append({{"type", "resolution"}, {"record", to_json(r)}});
  return r;
}

GuessExport ClozeService::export_guesses(const ExportFilter& filter) const {
  std::shared_lock lock(mu_);
  auto keep = [&](const std::string& story_id, const Scenario* scenario) {
    if (filter.story && *filter.story != story_id) return false;
    if (filter.scenario && (!scenario || scenario->id != *filter.scenario)) return false;
    return true;
  };
  auto scenario_of = [&](const GuessRecord& g) {
    return task(g.story_id + ":" + std::to_string(g.position)).scenario;
  };
  GuessExport e;
  for (const GuessRecord& g : guesses_) {
    if (!keep(g.story_id, scenario_of(g))) continue;
    e.guesses.push_back(g);
    if (auto it = latest_resolution_.find(g.guess_id); it != latest_resolution_.end()) {
      e.resolutions.push_back(audit_[it->second]);
    }
  }
  for (const ResolutionRecord& r : audit_) {
    const GuessRecord& g = guesses_[guess_index_.at(r.guess_id)];
    if (keep(g.story_id, scenario_of(g))) e.audit.push_back(r);
  }
  for (std::size_t t = 0; t < tasks_.size(); ++t) {
    if (!keep(tasks_[t].story->id, tasks_[t].scenario)) continue;
    e.counts.push_back({tasks_[t].story->id, tasks_[t].position, guess_counts_[t]});
  }
  return e;
}

}  // namespace refpred
