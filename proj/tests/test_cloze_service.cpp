#include <atomic>
#include <thread>

#include "doctest.h"
#include "fixtures.hpp"
#include "human_fixture.hpp"
#include "planted.hpp"
#include "refpred/cloze_service.hpp"
#include "refpred/evaluation.hpp"

using namespace refpred;
using refpred::testing::bath_corpus;
using refpred::testing::kPluggedTub;

namespace {

namespace fs = std::filesystem;

ServiceConfig quiet_config(std::size_t target = 20) {
  ServiceConfig cfg;
  cfg.target_guesses = target;
  cfg.seed = 99;
  cfg.clock = [] { return std::string("2020-01-01T00:00:00Z"); };
  return cfg;
}

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("refpred_cloze_" + name);
  fs::remove_all(p);
  return p;
}

ClozeAnswer click(int m) { return {GuessRecord::Kind::kClicked, m, ""}; }
ClozeAnswer fresh(std::string text) { return {GuessRecord::Kind::kNew, -1, std::move(text)}; }

int status_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ServiceError& e) {
    return e.status();
  }
  return 0;
}

// Checks the view shows nothing at or after the target.
void check_no_leak(const TaskView& v, const Story& story) {
  const Mention& target = story.mentions[v.position];
  CHECK(v.target_start == target.start);
  CHECK(static_cast<int>(v.tokens.size()) == target.start);
  for (std::size_t i = 0; i < v.tokens.size(); ++i) {
    CHECK(v.tokens[i].index == static_cast<int>(i));
    CHECK(v.tokens[i].surface == story.tokens[i].surface);
  }
  for (const auto& m : v.mentions) {
    CHECK(m.head < target.start);
    CHECK(m.end <= target.start);
    CHECK(m.mention != v.position);
  }
  const nlohmann::json j = to_json(v);
  for (const auto& [key, _] : j.items()) {
    CHECK(key != "gold");
    CHECK(key != "dr");
  }
  for (const auto& m : j.at("mentions")) CHECK(m.size() == 5);
}

}  // namespace

TEST_CASE("task assignment spreads sessions over the least-guessed positions") {
  ClozeService svc(bath_corpus(), quiet_config(2));
  REQUIRE(svc.task_count() == 4);
  std::set<std::string> first_round;
  std::vector<std::string> sessions;
  for (int i = 0; i < 4; ++i) {
    sessions.push_back(svc.new_session());
    auto v = svc.next_task(sessions.back());
    REQUIRE(v);
    first_round.insert(v->task_id);
    // The same task comes back until it is answered.
    CHECK(svc.next_task(sessions.back())->task_id == v->task_id);
  }
  CHECK(first_round.size() == 4);

  // Every session answers everything; two guesses per task saturates the store.
  for (const auto& s : sessions) {
    int answered = 0;
    while (auto v = svc.next_task(s)) {
      svc.record_guess(s, v->task_id, click(0));
      ++answered;
      if (answered > 4) break;
    }
    CHECK(answered <= 4);
  }
  for (const auto& c : svc.export_guesses().counts) CHECK(c.guesses == 2);
  CHECK_FALSE(svc.next_task(svc.new_session()));
  CHECK(status_of([&] { svc.next_task("nobody"); }) == 404);
}

TEST_CASE("guess validation: duplicates and stale tasks conflict, bad answers are rejected") {
  ClozeService svc(bath_corpus(), quiet_config());
  const std::string s = svc.new_session();
  auto v = svc.next_task(s);
  REQUIRE(v);
  const std::string other = v->task_id == "bath_fig1:10" ? "bath_fig1:11" : "bath_fig1:10";

  CHECK(status_of([&] { svc.record_guess(s, other, click(0)); }) == 409);
  CHECK(status_of([&] { svc.record_guess(s, "bath_fig1:999", click(0)); }) == 409);
  CHECK(status_of([&] { svc.record_guess("nobody", v->task_id, click(0)); }) == 404);
  CHECK(status_of([&] { svc.record_guess(s, v->task_id, click(v->position)); }) == 422);
  CHECK(status_of([&] { svc.record_guess(s, v->task_id, click(-1)); }) == 422);
  CHECK(status_of([&] { svc.record_guess(s, v->task_id, fresh("   ")); }) == 422);

  GuessRecord g = svc.record_guess(s, v->task_id, fresh("  bathtub drain "));
  CHECK(g.kind == GuessRecord::Kind::kNew);
  CHECK(g.text == "bathtub drain");
  CHECK(g.timestamp == "2020-01-01T00:00:00Z");
  CHECK(status_of([&] { svc.record_guess(s, v->task_id, click(0)); }) == 409);
  CHECK(svc.export_guesses().guesses.size() == 1);
}

TEST_CASE("resolutions: validation, queue and audited overwrite") {
  ClozeService svc(bath_corpus(), quiet_config());
  const std::string s = svc.new_session();
  std::vector<GuessRecord> made;
  while (auto v = svc.next_task(s)) {
    made.push_back(svc.record_guess(s, v->task_id, made.size() % 2 ? click(0) : fresh("the drain")));
  }
  REQUIRE(made.size() == 4);
  const GuessRecord& n0 = made[0];
  const GuessRecord& c1 = made[1];

  auto queue = svc.resolution_queue();
  CHECK(queue.size() == 2);
  CHECK(queue[0].participant_types == refpred::testing::bath_scenario().participant_types);
  for (const auto& item : queue) check_no_leak(item.view, refpred::testing::bath_story());

  const Verdict drain{Verdict::Kind::kParticipantType, "drain", -1};
  CHECK(status_of([&] { svc.record_resolution("ann", c1.guess_id, drain); }) == 422);
  CHECK(status_of([&] { svc.record_resolution("ann", "g999999", drain); }) == 404);
  CHECK(status_of([&] { svc.record_resolution(" ", n0.guess_id, drain); }) == 422);
  CHECK(status_of([&] {
          svc.record_resolution("ann", n0.guess_id, {Verdict::Kind::kParticipantType, "sponge", -1});
        }) == 422);
  CHECK(status_of([&] {
          svc.record_resolution("ann", n0.guess_id, {Verdict::Kind::kAntecedent, "", n0.position});
        }) == 422);

  svc.record_resolution("ann", n0.guess_id, drain);
  CHECK(svc.resolution_queue().size() == 1);
  CHECK(status_of([&] { svc.record_resolution("bob", n0.guess_id, drain); }) == 409);
  svc.record_resolution("ann", n0.guess_id, {Verdict::Kind::kTrulyNovel, "", -1});

  GuessExport e = svc.export_guesses();
  CHECK(e.audit.size() == 2);
  REQUIRE(e.resolutions.size() == 1);
  CHECK(e.resolutions[0].verdict.kind == Verdict::Kind::kTrulyNovel);
  CHECK(e.audit[0].verdict.participant_type == "drain");
}

TEST_CASE("export: empty store, counts and round-trip") {
  ClozeService svc(bath_corpus(), quiet_config());
  GuessExport empty = svc.export_guesses();
  CHECK(empty.guesses.empty());
  CHECK(empty.resolutions.empty());
  CHECK(empty.counts.size() == 4);
  for (const auto& c : empty.counts) CHECK(c.guesses == 0);

  for (int i = 0; i < 20; ++i) {
    const std::string s = svc.new_session();
    while (auto v = svc.next_task(s)) svc.record_guess(s, v->task_id, click(0));
  }
  GuessExport e = svc.export_guesses();
  CHECK(e.guesses.size() == 80);
  for (const auto& c : e.counts) CHECK(c.guesses == 20);
  GuessExport back = guess_export_from_json(nlohmann::json::parse(to_json(e).dump()));
  CHECK(to_json(back) == to_json(e));
  CHECK(to_json(svc.export_guesses()).dump() == to_json(e).dump());
}

TEST_CASE("collected plugged-tub guesses give the expected human distribution") {
  ClozeService svc(bath_corpus(), quiet_config());
  const auto fx = refpred::testing::plugged_tub_guesses();
  std::map<std::string, std::string> ids;  // fixture id -> service id
  for (const GuessRecord& want : fx.guesses) {
    const std::string s = svc.new_session();
    while (auto v = svc.next_task(s)) {
      if (v->position != kPluggedTub) {
        svc.record_guess(s, v->task_id, click(0));
        continue;
      }
      ClozeAnswer a = want.kind == GuessRecord::Kind::kClicked ? click(want.clicked_mention)
                                                               : fresh(want.text);
      ids[want.guess_id] = svc.record_guess(s, v->task_id, a).guess_id;
      break;
    }
  }
  REQUIRE(ids.size() == 20);
  for (const auto& r : fx.resolutions) svc.record_resolution(r.adjudicator, ids.at(r.guess_id), r.verdict);
  CHECK(svc.resolution_queue().empty());

  GuessExport e = svc.export_guesses({std::nullopt, std::string("bath_fig1")});
  History h(refpred::testing::bath_story(), refpred::testing::bath_scenario(), kPluggedTub);
  HumanDistribution hd = build_human_distribution(e.guesses, e.resolutions, h);
  CHECK(hd.total == 20);
  CHECK(hd.dist.probability(Category::mentioned("4")) == doctest::Approx(0.6));
  CHECK(hd.dist.probability(Category::mentioned("1")) == doctest::Approx(0.15));
  CHECK(hd.dist.probability(Category::unmentioned_pt("drain")) == doctest::Approx(0.15));
  CHECK(hd.dist.probability(Category::novel()) == doctest::Approx(0.1));
  for (const auto& c : e.counts) {
    if (c.position == kPluggedTub) CHECK(c.guesses == 20);
  }
}

TEST_CASE("export filter by scenario and story") {
  refpred::testing::PlantedConfig pc;
  pc.stories_per_scenario = 3;
  auto world = refpred::testing::make_planted_world(pc);
  ClozeService svc(world.corpus, quiet_config(1));
  const std::string s = svc.new_session();
  while (auto v = svc.next_task(s)) svc.record_guess(s, v->task_id, click(v->mentions.front().mention));
  const std::string sc0 = world.corpus[0].scenario.id;
  GuessExport only = svc.export_guesses({sc0, std::nullopt});
  CHECK_FALSE(only.guesses.empty());
  std::set<std::string> stories;
  for (const auto& st : world.corpus[0].stories) stories.insert(st.id);
  for (const auto& g : only.guesses) CHECK(stories.count(g.story_id));
  for (const auto& c : only.counts) CHECK(stories.count(c.story_id));
  CHECK(only.guesses.size() + svc.export_guesses({world.corpus[1].scenario.id, std::nullopt}).guesses.size() ==
        svc.export_guesses().guesses.size());
  CHECK(svc.export_guesses({std::string("nope"), std::nullopt}).guesses.empty());
}

TEST_CASE("property: no task view reveals the target or anything after it") {
  refpred::testing::PlantedConfig pc;
  pc.stories_per_scenario = 6;
  auto world = refpred::testing::make_planted_world(pc);
  ClozeService svc(world.corpus, quiet_config(1));
  const std::string s = svc.new_session();
  std::size_t seen = 0;
  while (auto v = svc.next_task(s)) {
    const Story* story = nullptr;
    for (const auto& sc : world.corpus) {
      for (const auto& st : sc.stories) {
        if (st.id == v->story_id) story = &st;
      }
    }
    REQUIRE(story);
    check_no_leak(*v, *story);
    svc.record_guess(s, v->task_id, fresh("something"));
    ++seen;
  }
  CHECK(seen == svc.task_count());
  CHECK(svc.resolution_queue().size() == seen);
  for (const auto& item : svc.resolution_queue()) {
    for (const auto& sc : world.corpus) {
      for (const auto& st : sc.stories) {
        if (st.id == item.view.story_id) check_no_leak(item.view, st);
      }
    }
  }
}

TEST_CASE("persistence: log and snapshot survive a restart") {
  const fs::path dir = fresh_dir("persist");
  nlohmann::json before;
  {
    ServiceConfig cfg = quiet_config(3);
    cfg.data_dir = dir;
    cfg.snapshot_every = 4;
    ClozeService svc(bath_corpus(), cfg);
    for (int i = 0; i < 3; ++i) {
      const std::string s = svc.new_session();
      int k = 0;
      while (auto v = svc.next_task(s)) svc.record_guess(s, v->task_id, k++ % 2 ? click(0) : fresh("drain"));
    }
    const auto queue = svc.resolution_queue();
    svc.record_resolution("ann", queue[0].guess.guess_id, {Verdict::Kind::kParticipantType, "drain", -1});
    svc.record_resolution("ann", queue[0].guess.guess_id, {Verdict::Kind::kTrulyNovel, "", -1});
    before = to_json(svc.export_guesses());
  }
  CHECK(fs::exists(dir / "snapshot.json"));
  CHECK(fs::exists(dir / "guesses.ndjson"));
  ServiceConfig cfg = quiet_config(3);
  cfg.data_dir = dir;
  cfg.snapshot_every = 4;
  ClozeService again(bath_corpus(), cfg);
  CHECK(to_json(again.export_guesses()) == before);
  // Saturated positions stay saturated after reload.
  CHECK_FALSE(again.next_task(again.new_session()));
}

TEST_CASE("property: exports only grow under concurrent sessions") {
  refpred::testing::PlantedConfig pc;
  pc.stories_per_scenario = 4;
  auto world = refpred::testing::make_planted_world(pc);
  ServiceConfig cfg = quiet_config(6);
  cfg.data_dir = fresh_dir("concurrent");
  cfg.snapshot_every = 25;
  ClozeService svc(world.corpus, cfg);

  std::atomic<bool> stop{false};
  std::atomic<int> violations{0};
  std::thread reader([&] {
    std::vector<std::string> last;
    while (!stop) {
      GuessExport e = svc.export_guesses();
      if (e.guesses.size() < last.size()) ++violations;
      for (std::size_t i = 0; i < last.size() && i < e.guesses.size(); ++i) {
        if (e.guesses[i].guess_id != last[i]) ++violations;
      }
      last.clear();
      for (const auto& g : e.guesses) last.push_back(g.guess_id);
    }
  });
  std::atomic<int> answered{0};
  std::vector<std::thread> workers;
  for (int w = 0; w < 4; ++w) {
    workers.emplace_back([&] {
      for (int round = 0; round < 3; ++round) {
        const std::string s = svc.new_session();
        while (auto v = svc.next_task(s)) {
          svc.record_guess(s, v->task_id, click(v->mentions.front().mention));
          ++answered;
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  stop = true;
  reader.join();
  CHECK(violations == 0);
  GuessExport e = svc.export_guesses();
  CHECK(static_cast<int>(e.guesses.size()) == answered);
  std::set<std::string> ids;
  for (const auto& g : e.guesses) ids.insert(g.guess_id);
  CHECK(ids.size() == e.guesses.size());
  for (const auto& c : e.counts) CHECK(c.guesses <= 6);

  ClozeService reloaded(world.corpus, cfg);
  CHECK(to_json(reloaded.export_guesses()) == to_json(e));
}
