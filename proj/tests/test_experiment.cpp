#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "human_fixture.hpp"
#include "planted.hpp"
#include "refpred/experiment.hpp"

using namespace refpred;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("refpred_experiment_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<Story> numbered_stories(int n) {
  std::vector<Story> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)].id = "s" + std::to_string(1000 + i);
    out[static_cast<std::size_t>(i)].scenario_id = "sc";
  }
  return out;
}

// The bath story under several ids, written as one corpus file.
fs::path bath_copies(const fs::path& dir, const std::vector<std::string>& ids) {
  std::ifstream in(refpred::testing::data_path("bath.txt"));
  std::string line, scenario;
  std::vector<std::string> body;
  while (std::getline(in, line)) {
    if (line.rfind("SCENARIO", 0) == 0) scenario = line;
    else if (!line.empty() && line[0] != '#') body.push_back(line);
  }
  const fs::path out = dir / "bath_copies.txt";
  std::ofstream os(out);
  os << scenario << '\n';
  for (const auto& id : ids) {
    for (std::string l : body) {
      for (auto pos = l.find("bath_fig1"); pos != std::string::npos; pos = l.find("bath_fig1", pos)) {
        l.replace(pos, 9, id);
      }
      os << l << '\n';
    }
  }
  return out;
}

}  // namespace

TEST_CASE("property: story splits are disjoint, exhaustive and deterministic") {
  for (int n : {2, 3, 7, 10, 41}) {
    auto stories = numbered_stories(n);
    for (std::uint64_t seed : {1ull, 13ull, 99ull}) {
      SplitSpec spec{0.7, 0.1, seed};
      StorySplit s = split_stories(stories, spec);
      std::multiset<std::string> ids;
      for (const auto* part : {&s.train, &s.development, &s.test}) {
        for (std::size_t i = 0; i < part->size(); ++i) {
          ids.insert((*part)[i].id);
          if (i) CHECK((*part)[i - 1].id < (*part)[i].id);
        }
      }
      CHECK(ids.size() == static_cast<std::size_t>(n));
      CHECK(std::set<std::string>(ids.begin(), ids.end()).size() == static_cast<std::size_t>(n));
      CHECK_FALSE(s.train.empty());
      CHECK_FALSE(s.test.empty());
      StorySplit again = split_stories(stories, spec);
      CHECK(again.test.size() == s.test.size());
      for (std::size_t i = 0; i < s.test.size(); ++i) CHECK(again.test[i].id == s.test[i].id);
    }
  }
  auto ten = numbered_stories(10);
  StorySplit s = split_stories(ten, {0.7, 0.1, 13});
  CHECK(s.train.size() == 7);
  CHECK(s.development.size() == 1);
  CHECK(s.test.size() == 2);
  CHECK_THROWS_AS(split_stories(ten, {0.8, 0.3, 1}), std::invalid_argument);
}

TEST_CASE("FNV-1a reference values") {
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
  CHECK(fnv1a_hex("foobar") == "85944171f73967e8");
}

TEST_CASE("config hash follows content, not paths") {
  const fs::path dir = fresh_dir("hash");
  std::ofstream(dir / "a.txt") << "content";
  std::ofstream(dir / "b.txt") << "content";
  ExperimentConfig a;
  a.corpus = dir / "a.txt";
  ExperimentConfig b = a;
  b.corpus = dir / "b.txt";
  CHECK(a.hash() == b.hash());
  b.split.seed = 14;
  CHECK(a.hash() != b.hash());
  b = a;
  b.model.optimizer.l2 = 0.5;
  CHECK(a.hash() != b.hash());
  std::ofstream(dir / "b.txt") << "changed";
  b = a;
  b.corpus = dir / "b.txt";
  CHECK(a.hash() != b.hash());
}

TEST_CASE("distribution lines round-trip") {
  PredictionDistribution d{"st:3",
                           {Category::mentioned("2"), Category::unmentioned_pt("drain"), Category::novel()},
                           {0.125, 0.5, 0.375}};
  PredictionDistribution back = distribution_from_json(nlohmann::json::parse(distribution_to_json(d).dump()));
  CHECK(back.instance_id == d.instance_id);
  CHECK(back.candidates == d.candidates);
  CHECK(back.probs == d.probs);

  const fs::path dir = fresh_dir("dists");
  std::ofstream(dir / "d.jsonl") << R"({"config_hash":"x","seed":1})" << '\n'
                                 << distribution_to_json(d).dump() << '\n';
  auto read = read_distributions(dir / "d.jsonl");
  REQUIRE(read.size() == 1);
  CHECK(read[0].probs == d.probs);
}

TEST_CASE("Base-only experiment on a small planted scenario") {
  refpred::testing::PlantedConfig pc;
  pc.scenarios = 1;
  pc.stories_per_scenario = 10;
  auto world = refpred::testing::make_planted_world(pc);
  const fs::path dir = fresh_dir("base");
  refpred::testing::write_planted_world(world, dir);

  ExperimentConfig cfg;
  cfg.corpus = dir / "corpus.txt";
  cfg.variants = {Variant::kBase};
  cfg.ablation = false;
  Corpus corpus = load_corpus(cfg.corpus);
  EvalReport r = run_experiment(cfg, corpus, {});
  REQUIRE(r.scenarios.size() == 1);
  CHECK(r.scenarios[0].results.size() == 1);
  CHECK(r.scenarios[0].test_instances > 0);
  CHECK(r.mcnemar.empty());
  CHECK(r.config_hash == cfg.hash());

  const std::string t2 = table2_tsv(r);
  std::vector<std::string> rows;
  std::istringstream is(t2);
  for (std::string l; std::getline(is, l);) {
    if (!l.empty() && l[0] != '#') rows.push_back(l);
  }
  REQUIRE(rows.size() == 3);  // header, scenario, average
  CHECK(rows[0].rfind("scenario\tinstances\tbase_accuracy\tbase_perplexity", 0) == 0);
  CHECK(rows[2].rfind("Average", 0) == 0);
  CHECK(t2.find(r.config_hash) != std::string::npos);

  // Byte-identical reruns.
  const fs::path out1 = dir / "out1", out2 = dir / "out2";
  write_report_files(r, out1);
  write_report_files(run_experiment(cfg, load_corpus(cfg.corpus), {}), out2);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(out1)) {
    if (!e.is_regular_file()) continue;
    ++files;
    CHECK(slurp(e.path()) == slurp(out2 / fs::relative(e.path(), out1)));
  }
  CHECK(files >= 5);
  CHECK_FALSE(fs::exists(out1 / "human.tsv"));

  const std::string sc = corpus[0].scenario.id;
  auto dists = read_distributions(out1 / "distributions" / (sc + ".base.jsonl"));
  CHECK(dists.size() == r.scenarios[0].test_instances);
  for (std::size_t i = 0; i < dists.size(); ++i) {
    CHECK(dists[i].probs == r.scenarios[0].results.at(Variant::kBase).distributions[i].probs);
  }
  const std::string text = slurp(out1 / "distributions" / (sc + ".base.jsonl"));
  const auto header = nlohmann::json::parse(text.substr(0, text.find('\n')));
  CHECK(header.at("config_hash") == r.config_hash);
}

TEST_CASE("experiment with human guesses scores the humans on test positions") {
  const fs::path dir = fresh_dir("human");
  const std::vector<std::string> ids = {"bath_a", "bath_b", "bath_c", "bath_d"};
  ExperimentConfig cfg;
  cfg.corpus = bath_copies(dir, ids);
  cfg.variants = {Variant::kBase};
  cfg.ablation = false;
  cfg.model.early_stopping = false;
  Corpus corpus = load_corpus(cfg.corpus);
  REQUIRE(corpus[0].stories.size() == 4);

  GuessExport human;
  for (const auto& id : ids) {
    auto fx = refpred::testing::plugged_tub_guesses();
    for (auto& g : fx.guesses) {
      g.story_id = id;
      g.guess_id = id + g.guess_id;
      human.guesses.push_back(g);
    }
    for (auto& r : fx.resolutions) {
      r.guess_id = id + r.guess_id;
      human.resolutions.push_back(r);
    }
    // Too few guesses: never scored.
    for (int k = 0; k < 5; ++k) {
      GuessRecord g;
      g.guess_id = id + "x" + std::to_string(k);
      g.story_id = id;
      g.position = 10;
      g.clicked_mention = 0;
      human.guesses.push_back(g);
    }
  }
  EvalReport r = run_experiment(cfg, corpus, {}, human);
  const auto& h = r.scenarios[0].human;
  REQUIRE(h);
  const std::size_t test_stories = split_stories(corpus[0].stories, cfg.split).test.size();
  CHECK(h->golds.size() == test_stories);
  CHECK(h->accuracy == doctest::Approx(100.0));
  CHECK(h->perplexity.value == doctest::Approx(1 / 0.6).epsilon(1e-12));
  CHECK(h->perplexity.zero_probability_items == 0);
  CHECK(h->relative.count(Variant::kBase));
  CHECK(h->mean_jsd.at(Variant::kBase) >= 0);
  CHECK(h->mean_jsd.at(Variant::kBase) <= 1);
  CHECK(human_tsv(r).find("base") != std::string::npos);
  CHECK(table2_tsv(r).find("human_accuracy") != std::string::npos);

  const fs::path out = dir / "out";
  write_report_files(r, out);
  CHECK(fs::exists(out / "human.tsv"));
  const auto j = nlohmann::json::parse(slurp(out / "report.json"));
  CHECK(j.dump().find("expected_human_probability") != std::string::npos);
}
