#include <csignal>
#include <fstream>
#include <iostream>
#include <set>
#include <span>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "refpred/cloze_service.hpp"
#include "refpred/experiment.hpp"
#include "refpred/http_api.hpp"
#include "refpred/re_choice.hpp"
// After Eigen: <resolv.h> defines a _res macro.
#include "httplib.h"

namespace fs = std::filesystem;
using namespace refpred;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kValidation = 2, kRuntime = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string corpus;
  std::string embeddings;
  std::string thematic_fit;
  std::uint64_t seed = 13;
  double train_fraction = 0.7;
  double dev_fraction = 0.1;
  int max_iterations = 500;
  double gradient_tolerance = 1e-6;
  double l2 = 0;
  int patience = 25;
  bool no_early_stopping = false;
  std::size_t top_k = 0;
  std::string predicate_lm = "wb-trigram";
};

void add_corpus(CLI::App* app, Common& c) {
  app->add_option("--corpus", c.corpus, "Annotated corpus file")->required()->check(CLI::ExistingFile);
}

void add_resources(CLI::App* app, Common& c) {
  app->add_option("--embeddings", c.embeddings, "Word embeddings (text format)")
      ->envname("REFPRED_EMBEDDINGS")
      ->check(CLI::ExistingFile);
  app->add_option("--thematic-fit", c.thematic_fit, "Thematic-fit table (TSV)")
      ->envname("REFPRED_THEMATIC_FIT")
      ->check(CLI::ExistingFile);
}

void add_training(CLI::App* app, Common& c) {
  add_corpus(app, c);
  add_resources(app, c);
  app->add_option("--seed", c.seed, "Split seed")->capture_default_str();
  app->add_option("--train-fraction", c.train_fraction)->capture_default_str()->check(CLI::Range(0.0, 1.0));
  app->add_option("--dev-fraction", c.dev_fraction)->capture_default_str()->check(CLI::Range(0.0, 1.0));
  app->add_option("--max-iterations", c.max_iterations)->capture_default_str()->check(CLI::PositiveNumber);
  app->add_option("--gradient-tolerance", c.gradient_tolerance)->capture_default_str();
  app->add_option("--l2", c.l2, "L2 penalty on the weights")->capture_default_str()->check(CLI::NonNegativeNumber);
  app->add_option("--patience", c.patience, "Early-stopping patience")->capture_default_str();
  app->add_flag("--no-early-stopping", c.no_early_stopping);
  app->add_option("--top-k", c.top_k, "Predicate hypotheses kept when marginalizing (0 = all)")
      ->capture_default_str();
  app->add_option("--predicate-lm", c.predicate_lm)
      ->capture_default_str()
      ->check(CLI::IsMember(predicate_lm_implementations()));
}

Variant variant_arg(const std::string& s) {
  auto v = parse_variant(s);
  if (!v) throw UsageError("unknown variant '" + s + "' (base, linguistic, linguistic+schemas, linguistic+ptfit, script)");
  return *v;
}

ExperimentConfig experiment_config(const Common& c) {
  ExperimentConfig cfg;
  cfg.corpus = c.corpus;
  if (!c.embeddings.empty()) cfg.embeddings = c.embeddings;
  if (!c.thematic_fit.empty()) cfg.thematic_fit = c.thematic_fit;
  cfg.split = {c.train_fraction, c.dev_fraction, c.seed};
  if (c.train_fraction + c.dev_fraction > 1.0) throw UsageError("train and dev fractions exceed 1");
  cfg.model.optimizer.max_iterations = c.max_iterations;
  cfg.model.optimizer.gradient_tolerance = c.gradient_tolerance;
  cfg.model.optimizer.l2 = c.l2;
  cfg.model.optimizer.early_stopping_patience = c.patience;
  cfg.model.early_stopping = !c.no_early_stopping;
  cfg.model.marginalization_top_k = c.top_k;
  cfg.model.predicate_lm = c.predicate_lm;
  return cfg;
}

void require_resources(const Common& c, std::span<const Variant> variants) {
  for (Variant v : variants) {
    const unsigned groups = variant_groups(v);
    if ((groups & kPredicateGroups) && c.embeddings.empty()) {
      throw UsageError("variant " + std::string(to_string(v)) +
                       " needs word embeddings: pass --embeddings or set REFPRED_EMBEDDINGS");
    }
    if ((groups & kSelectionalPreference) && c.thematic_fit.empty()) {
      throw UsageError("variant " + std::string(to_string(v)) +
                       " needs a thematic-fit table: pass --thematic-fit or set REFPRED_THEMATIC_FIT");
    }
  }
}

LoadedResources load_resources(const Common& c) {
  LoadedResources r;
  if (!c.embeddings.empty()) r.embeddings = load_embeddings(c.embeddings);
  if (!c.thematic_fit.empty()) r.thematic_fit = load_thematic_fit(c.thematic_fit);
  return r;
}

std::vector<const ScenarioCorpus*> select_scenarios(const Corpus& corpus, const std::string& id) {
  std::vector<const ScenarioCorpus*> out;
  if (id.empty()) {
    for (const auto& sc : corpus) out.push_back(&sc);
    return out;
  }
  const ScenarioCorpus* sc = find_scenario(corpus, id);
  if (!sc) throw UsageError("no scenario '" + id + "' in the corpus");
  out.push_back(sc);
  return out;
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

int cmd_validate(const Common& c) {
  Corpus corpus = load_corpus(c.corpus);
  for (const auto& sc : corpus) {
    std::size_t mentions = 0, targets = 0;
    for (const auto& st : sc.stories) {
      mentions += st.mentions.size();
      targets += extract_cloze_instances(st, sc.scenario).size();
    }
    std::cout << sc.scenario.id << "\tstories=" << sc.stories.size() << "\tmentions=" << mentions
              << "\tparticipant_types=" << sc.scenario.participant_types.size()
              << "\tcloze_targets=" << targets << '\n';
  }
  LoadedResources r = load_resources(c);
  if (r.embeddings) {
    std::cout << "embeddings\twords=" << r.embeddings->size() << "\tdimension=" << r.embeddings->dimension()
              << '\n';
    for (const auto& w : r.embeddings->load_warnings()) std::cerr << "warning: " << w << '\n';
  }
  if (r.thematic_fit) std::cout << "thematic_fit\tslots=" << r.thematic_fit->slots().size() << '\n';
  std::cout << "ok\n";
  return kOk;
}

struct TrainArgs {
  std::string variant = "script";
  std::string scenario;
  std::string output_dir = "models";
};

int cmd_train(const Common& c, const TrainArgs& a) {
  const Variant v = variant_arg(a.variant);
  require_resources(c, {&v, 1});
  ExperimentConfig cfg = experiment_config(c);
  Corpus corpus = load_corpus(c.corpus);
  LoadedResources res = load_resources(c);
  for (const ScenarioCorpus* sc : select_scenarios(corpus, a.scenario)) {
    StorySplit split = split_stories(sc->stories, cfg.split);
    ModelConfig mc = cfg.model;
    mc.variant = v;
    ReferentModel m = train_referent_model(sc->scenario, split.train, split.development,
                                           res.embeddings ? &*res.embeddings : nullptr,
                                           res.thematic_fit ? &*res.thematic_fit : nullptr, mc);
    nlohmann::json j = model_to_json(m);
    j["config_hash"] = cfg.hash();
    j["seed"] = cfg.split.seed;
    const fs::path out = fs::path(a.output_dir) / (sc->scenario.id + "." + std::string(to_string(v)) + ".json");
    write_file(out, j.dump(1) + "\n");
    std::cout << out.string() << "\titerations=" << m.summary.iterations
              << "\tconverged=" << (m.summary.converged ? "yes" : "no") << '\n';
  }
  return kOk;
}

struct PredictArgs {
  std::string variant = "script";
  std::string scenario;
  std::vector<std::string> models;
  std::string split = "test";
  bool all_positions = false;
  std::string output = "distributions.jsonl";
};

int cmd_predict(const Common& c, const PredictArgs& a) {
  const Variant v = variant_arg(a.variant);
  if (a.models.empty()) require_resources(c, {&v, 1});
  ExperimentConfig cfg = experiment_config(c);
  Corpus corpus = load_corpus(c.corpus);
  LoadedResources res = load_resources(c);
  const EmbeddingStore* emb = res.embeddings ? &*res.embeddings : nullptr;
  const ThematicFitStore* tf = res.thematic_fit ? &*res.thematic_fit : nullptr;
  const ExtractionConfig extraction = a.all_positions ? ExtractionConfig::training() : ExtractionConfig{};

  std::map<std::string, ReferentModel> models;
  for (const auto& path : a.models) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open model " + path);
    ReferentModel m = model_from_json(nlohmann::json::parse(in), emb, tf);
    models.emplace(m.scenario_id(), std::move(m));
  }

  std::ostringstream os;
  os << nlohmann::json{{"config_hash", cfg.hash()}, {"seed", cfg.split.seed}}.dump() << '\n';
  std::size_t n = 0;
  for (const ScenarioCorpus* sc : select_scenarios(corpus, a.scenario)) {
    StorySplit split = split_stories(sc->stories, cfg.split);
    auto it = models.find(sc->scenario.id);
    if (it == models.end()) {
      if (!a.models.empty()) continue;
      ModelConfig mc = cfg.model;
      mc.variant = v;
      it = models.emplace(sc->scenario.id,
                          train_referent_model(sc->scenario, split.train, split.development, emb, tf, mc))
               .first;
    }
    const std::vector<Story>& stories = a.split == "all" ? sc->stories : split.test;
    for (const Story& st : stories) {
      for (const ClozeInstance& inst : extract_cloze_instances(st, sc->scenario, extraction)) {
        os << distribution_to_json(it->second.predict(inst)).dump() << '\n';
        ++n;
      }
    }
  }
  write_file(a.output, os.str());
  std::cout << a.output << "\tdistributions=" << n << '\n';
  return kOk;
}

struct EvaluateArgs {
  std::vector<std::string> variants;
  std::string human;
  std::string output_dir = "report";
  std::size_t min_guesses = 20;
  bool ablation = false;
  bool pooled = false;
};

int run_and_report(ExperimentConfig cfg, const Common& c, const EvaluateArgs& a) {
  require_resources(c, cfg.variants);
  if (cfg.ablation) require_resources(c, kAblationVariants);
  cfg.output_dir = a.output_dir;
  cfg.min_guesses = a.min_guesses;
  cfg.pooled = a.pooled;
  std::optional<GuessExport> human;
  if (!a.human.empty()) {
    cfg.human_guesses = a.human;
    std::ifstream in(a.human);
    if (!in) throw std::runtime_error("cannot open " + a.human);
    human = guess_export_from_json(nlohmann::json::parse(in));
  }
  Corpus corpus = load_corpus(c.corpus);
  EvalReport report = run_experiment(cfg, corpus, load_resources(c), human);
  write_report_files(report, cfg.output_dir);
  std::cout << table2_tsv(report);
  if (cfg.ablation) std::cout << table3_tsv(report);
  return kOk;
}

int cmd_evaluate(const Common& c, const EvaluateArgs& a) {
  ExperimentConfig cfg = experiment_config(c);
  if (!a.variants.empty()) {
    cfg.variants.clear();
    for (const auto& s : a.variants) cfg.variants.push_back(variant_arg(s));
  }
  cfg.ablation = a.ablation;
  return run_and_report(std::move(cfg), c, a);
}

int cmd_ablate(const Common& c, const EvaluateArgs& a) {
  ExperimentConfig cfg = experiment_config(c);
  cfg.variants.assign(std::begin(kAblationVariants), std::end(kAblationVariants));
  cfg.ablation = true;
  return run_and_report(std::move(cfg), c, a);
}

struct ReModelArgs {
  std::vector<std::string> distributions;
  std::string units = "bits";
  std::string entropy = "full";
  bool no_standardize = false;
  bool full_dataset = false;
  std::string dataset_out;
  std::string output;
};

int cmd_re_model(const Common& c, const ReModelArgs& a) {
  Corpus corpus = load_corpus(c.corpus);
  std::vector<PredictionDistribution> dists;
  std::string source;
  nlohmann::json provenance = {{"corpus", file_checksum(c.corpus)},
                               {"units", a.units},
                               {"entropy", a.entropy},
                               {"standardize", !a.no_standardize},
                               {"full_dataset", a.full_dataset},
                               {"inputs", nlohmann::json::array()}};
  std::set<std::uint64_t> seeds;
  for (const auto& p : a.distributions) {
    auto d = read_distributions(p);
    dists.insert(dists.end(), d.begin(), d.end());
    source += (source.empty() ? "" : ",") + fs::path(p).filename().string();
    provenance["inputs"].push_back(file_checksum(p));
    std::ifstream in(p);
    std::string first;
    std::getline(in, first);
    auto header = nlohmann::json::parse(first, nullptr, false);
    if (header.is_object() && header.contains("seed")) seeds.insert(header["seed"].get<std::uint64_t>());
  }
  std::string stamp = "# config_hash=" + fnv1a_hex(provenance.dump()) + " seed=";
  if (seeds.empty()) stamp += "none";
  for (auto it = seeds.begin(); it != seeds.end(); ++it) {
    stamp += (it == seeds.begin() ? "" : ",") + std::to_string(*it);
  }
  stamp += '\n';
  REDatasetOptions opt = a.full_dataset ? REDatasetOptions::full() : REDatasetOptions{};
  opt.bits = a.units == "bits";
  opt.entropy = a.entropy == "without-gold" ? ResidualEntropyMode::kWithoutGold : ResidualEntropyMode::kFull;
  opt.source = source;
  REDataset data = build_re_dataset(corpus, dists, opt);
  if (!a.dataset_out.empty()) {
    std::ostringstream os;
    os << stamp;
    write_re_dataset(os, data);
    write_file(a.dataset_out, os.str());
  }
  LogisticConfig lc;
  if (a.no_standardize) lc.standardize.clear();
  LogisticFit fit = fit_re_model(data, lc);
  std::ostringstream os;
  os << stamp;
  os << "# rows=" << data.rows.size() << " considered=" << data.considered
     << " filtered_out=" << data.filtered_out << " infinite_surprisal=" << data.infinite_surprisal
     << " units=" << a.units << " standardized=" << (a.no_standardize ? "none" : "surprisal,residualEntropy")
     << '\n';
  write_coefficient_table(os, fit);
  if (!fit.dropped.empty()) {
    os << "# dropped constant predictors:";
    for (const auto& d : fit.dropped) os << ' ' << d;
    os << '\n';
  }
  if (!a.output.empty()) write_file(a.output, os.str());
  std::cout << os.str();
  return kOk;
}

struct ServeArgs {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string data_dir = "cloze-data";
  std::string ui_dir;
  std::size_t target_guesses = 20;
  std::uint64_t seed = 0;
};

httplib::Server* g_server = nullptr;

int cmd_serve(const Common& c, const ServeArgs& a) {
  Corpus corpus = load_corpus(c.corpus);
  ServiceConfig sc;
  sc.target_guesses = a.target_guesses;
  sc.seed = a.seed;
  sc.data_dir = a.data_dir;
  ClozeService service(corpus, sc);
  httplib::Server server;
  std::optional<fs::path> ui;
  if (!a.ui_dir.empty()) ui = a.ui_dir;
  register_cloze_routes(server, service, ui);
  g_server = &server;
  std::signal(SIGINT, [](int) { if (g_server) g_server->stop(); });
  std::signal(SIGTERM, [](int) { if (g_server) g_server->stop(); });
  std::cerr << "serving " << service.task_count() << " tasks on http://" << a.host << ':' << a.port << '\n';
  if (!server.listen(a.host, a.port)) throw std::runtime_error("cannot listen on port " + std::to_string(a.port));
  return kOk;
}

struct ExportArgs {
  std::string data_dir = "cloze-data";
  std::string output = "guesses.json";
  std::string scenario;
  std::string story;
};

int cmd_export(const Common& c, const ExportArgs& a) {
  if (!fs::is_directory(a.data_dir)) throw UsageError("no data directory " + a.data_dir);
  Corpus corpus = load_corpus(c.corpus);
  ServiceConfig sc;
  sc.data_dir = a.data_dir;
  sc.snapshot_every = 0;
  ClozeService service(corpus, sc);
  ExportFilter f;
  if (!a.scenario.empty()) f.scenario = a.scenario;
  if (!a.story.empty()) f.story = a.story;
  GuessExport e = service.export_guesses(f);
  nlohmann::json j = to_json(e);
  j["config_hash"] = fnv1a_hex(nlohmann::json{{"corpus", file_checksum(c.corpus)},
                                              {"scenario", a.scenario},
                                              {"story", a.story}}
                                   .dump());
  j["seed"] = nullptr;
  write_file(a.output, j.dump(1) + "\n");
  std::cout << a.output << "\tguesses=" << e.guesses.size() << "\tresolutions=" << e.resolutions.size() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Referent prediction with script knowledge"};
  app.require_subcommand(1);
  Common c;

  auto* validate = app.add_subcommand("validate", "Check a corpus and optional resources");
  add_corpus(validate, c);
  add_resources(validate, c);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train per-scenario models and save them");
  add_training(train, c);
  train->add_option("--variant", ta.variant)->capture_default_str();
  train->add_option("--scenario", ta.scenario, "Only this scenario");
  train->add_option("--output-dir", ta.output_dir)->capture_default_str();

  PredictArgs pa;
  auto* predict = app.add_subcommand("predict", "Write per-position predictive distributions (JSONL)");
  add_training(predict, c);
  predict->add_option("--variant", pa.variant)->capture_default_str();
  predict->add_option("--scenario", pa.scenario);
  predict->add_option("--model", pa.models, "Saved model(s); otherwise train on the split");
  predict->add_option("--split", pa.split, "Stories to predict on")
      ->capture_default_str()
      ->check(CLI::IsMember({"test", "all"}));
  predict->add_flag("--all-positions", pa.all_positions, "Every event-governed mention, not only cloze targets");
  predict->add_option("--output,-o", pa.output)->capture_default_str();

  EvaluateArgs ea;
  auto* evaluate = app.add_subcommand("evaluate", "Train, test and write the accuracy/perplexity report");
  add_training(evaluate, c);
  evaluate->add_option("--variant", ea.variants, "Variants to compare (default base, linguistic, script)");
  evaluate->add_option("--human", ea.human, "Guess export from the cloze service")->check(CLI::ExistingFile);
  evaluate->add_option("--min-guesses", ea.min_guesses)->capture_default_str();
  evaluate->add_flag("--ablation", ea.ablation, "Also run the feature ablation");
  evaluate->add_flag("--pooled", ea.pooled, "One weight vector shared by all scenarios");
  evaluate->add_option("--output-dir", ea.output_dir)->capture_default_str();

  EvaluateArgs aa;
  auto* ablate = app.add_subcommand("ablate", "Feature ablation over the script features");
  add_training(ablate, c);
  ablate->add_flag("--pooled", aa.pooled);
  ablate->add_option("--output-dir", aa.output_dir)->capture_default_str();

  ReModelArgs ra;
  auto* re_model = app.add_subcommand("re-model", "Logistic regression of referring-expression type");
  add_corpus(re_model, c);
  re_model->add_option("--distributions", ra.distributions, "Output of predict")->required()->check(CLI::ExistingFile);
  re_model->add_option("--units", ra.units)->capture_default_str()->check(CLI::IsMember({"nats", "bits"}));
  re_model->add_option("--entropy", ra.entropy)->capture_default_str()->check(CLI::IsMember({"full", "without-gold"}));
  re_model->add_flag("--no-standardize", ra.no_standardize, "Fit on raw surprisal and entropy");
  re_model->add_flag("--full-dataset", ra.full_dataset, "Keep first mentions and first/second person");
  re_model->add_option("--dataset-out", ra.dataset_out, "Write the regression rows as TSV");
  re_model->add_option("--output,-o", ra.output, "Write the coefficient table");

  ServeArgs sa;
  auto* serve = app.add_subcommand("serve", "Run the cloze guessing service");
  add_corpus(serve, c);
  serve->add_option("--host", sa.host)->capture_default_str();
  serve->add_option("--port", sa.port)->capture_default_str()->check(CLI::Range(1, 65535));
  serve->add_option("--data-dir", sa.data_dir)->capture_default_str();
  serve->add_option("--ui-dir", sa.ui_dir, "Static UI assets")->check(CLI::ExistingDirectory);
  serve->add_option("--target-guesses", sa.target_guesses)->capture_default_str();
  serve->add_option("--seed", sa.seed, "Session token seed (0 = random)")->capture_default_str();

  ExportArgs xa;
  auto* export_human = app.add_subcommand("export-human", "Export collected guesses and resolutions");
  add_corpus(export_human, c);
  export_human->add_option("--data-dir", xa.data_dir)->capture_default_str();
  export_human->add_option("--output,-o", xa.output)->capture_default_str();
  export_human->add_option("--scenario", xa.scenario);
  export_human->add_option("--story", xa.story);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*validate) return cmd_validate(c);
    if (*train) return cmd_train(c, ta);
    if (*predict) return cmd_predict(c, pa);
    if (*evaluate) return cmd_evaluate(c, ea);
    if (*ablate) return cmd_ablate(c, aa);
    if (*re_model) return cmd_re_model(c, ra);
    if (*serve) return cmd_serve(c, sa);
    if (*export_human) return cmd_export(c, xa);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const CorpusError& e) {
    std::cerr << "invalid corpus: " << e.what() << '\n';
    return kValidation;
  } catch (const ResourceError& e) {
    std::cerr << "invalid resource: " << e.what() << '\n';
    return kValidation;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "invalid JSON input: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
