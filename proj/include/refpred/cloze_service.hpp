#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "refpred/corpus.hpp"
#include "refpred/guesses.hpp"

namespace refpred {

// Carries the HTTP status the API layer maps it to.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

// Story prefix up to the target, with prior mentions colored by chain.
struct TaskView {
  struct ViewToken {
    int index = 0;
    std::string surface;
    int sentence = 0;
  };
  struct ViewMention {
    int mention = 0;  // index in the story's mention list
    int start = 0;
    int end = 0;  // clipped to the prefix
    int head = 0;
    int color = 0;  // order of first appearance of the chain
  };

  std::string task_id;
  std::string story_id;
  std::string scenario_id;
  int position = 0;
  std::vector<ViewToken> tokens;
  std::vector<ViewMention> mentions;
  int target_start = 0;  // the mask sits right after the last token
};

TaskView make_task_view(const History& history);
nlohmann::json to_json(const TaskView& view);

struct ClozeAnswer {
  GuessRecord::Kind kind = GuessRecord::Kind::kClicked;
  int mention = -1;
  std::string text;
};

struct ResolutionItem {
  GuessRecord guess;
  TaskView view;
  std::vector<std::string> participant_types;
};

struct ExportFilter {
  std::optional<std::string> scenario;
  std::optional<std::string> story;
};

struct PositionCount {
  std::string story_id;
  int position = 0;
  int guesses = 0;
};

struct GuessExport {
  std::vector<GuessRecord> guesses;          // append order
  std::vector<ResolutionRecord> resolutions;  // latest per guess
  std::vector<ResolutionRecord> audit;        // every resolution record
  std::vector<PositionCount> counts;          // task order
};

nlohmann::json to_json(const GuessExport& e);
GuessExport guess_export_from_json(const nlohmann::json& j);

struct ServiceConfig {
  std::size_t target_guesses = 20;
  std::uint64_t seed = 0;  // 0 draws from std::random_device
  std::filesystem::path data_dir;  // empty keeps everything in memory
  std::size_t snapshot_every = 200;
  ExtractionConfig extraction;
  std::function<std::string()> clock;  // defaults to UTC ISO-8601
};

// Guess collection and adjudication over the cloze instances of a corpus.
// Thread-safe; writes are serialized.
class ClozeService {
 public:
  ClozeService(const Corpus& corpus, ServiceConfig cfg = {});

  std::string new_session();
  // Same task until it is answered; nullopt once every position is answered
  // or held by other sessions up to the target.
  std::optional<TaskView> next_task(const std::string& session);
  GuessRecord record_guess(const std::string& session, const std::string& task_id,
                           const ClozeAnswer& answer);

  std::vector<ResolutionItem> resolution_queue() const;
  ResolutionRecord record_resolution(const std::string& adjudicator, const std::string& guess_id,
                                     const Verdict& verdict);

  GuessExport export_guesses(const ExportFilter& filter = {}) const;

  std::size_t task_count() const { return tasks_.size(); }
  const std::vector<std::string>& participant_types(const std::string& scenario_id) const;

 private:
  struct Task {
    std::string id;
    const Story* story;
    const Scenario* scenario;
    int position;
  };
  struct Session {
    std::optional<std::size_t> assigned;
    std::set<std::size_t> answered;
  };

  const Task& task(const std::string& task_id) const;
  std::string now() const;
  void apply(const nlohmann::json& event);
  void append(const nlohmann::json& event);
  void write_snapshot();
  void load();

  const Corpus& corpus_;
  ServiceConfig cfg_;
  std::vector<Task> tasks_;
  std::map<std::string, std::size_t> task_index_;

  mutable std::shared_mutex mu_;
  std::mt19937_64 rng_;
  std::map<std::string, Session> sessions_;
  std::vector<GuessRecord> guesses_;
  std::map<std::string, std::size_t> guess_index_;
  std::vector<ResolutionRecord> audit_;
  std::map<std::string, std::size_t> latest_resolution_;  // guess id -> audit index
  std::vector<int> guess_counts_;                           // per task
  std::vector<int> pending_;                                // per task
  std::size_t events_ = 0;
};

}  // namespace refpred
