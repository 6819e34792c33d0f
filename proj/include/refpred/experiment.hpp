#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "refpred/cloze_service.hpp"
#include "refpred/evaluation.hpp"
#include "refpred/lexical.hpp"
#include "refpred/referent_model.hpp"

namespace refpred {

// 64-bit FNV-1a, rendered as 16 hex digits.
std::string fnv1a_hex(std::string_view data);
std::string file_checksum(const std::filesystem::path& path);

struct SplitSpec {
  double train = 0.7;
  double development = 0.1;
  std::uint64_t seed = 13;
};

struct StorySplit {
  std::vector<Story> train;
  std::vector<Story> development;
  std::vector<Story> test;
};

// Story-level random split; each part keeps corpus order. With at least two
// stories, train and test are never empty.
StorySplit split_stories(const std::vector<Story>& stories, const SplitSpec& spec);

struct ExperimentConfig {
  std::filesystem::path corpus;
  std::optional<std::filesystem::path> embeddings;
  std::optional<std::filesystem::path> thematic_fit;
  std::optional<std::filesystem::path> human_guesses;  // export of the cloze service
  std::filesystem::path output_dir;
  SplitSpec split;
  std::vector<Variant> variants = {Variant::kBase, Variant::kLinguistic, Variant::kScript};
  bool ablation = true;
  bool pooled = false;
  ModelConfig model;  // variant field ignored
  std::size_t min_guesses = 20;

  nlohmann::json to_json() const;
  // Hash of the configuration and the content of every input file.
  std::string hash() const;
};

struct HumanScores {
  std::vector<std::string> instance_ids;
  std::vector<PredictionDistribution> distributions;
  std::vector<Category> golds;
  double accuracy = 0;
  PerplexityResult perplexity;
  PerplexityResult floored_perplexity;
  std::map<Variant, RelativeAccuracy> relative;
  std::map<Variant, double> mean_jsd;
};

struct ScenarioReport {
  std::string scenario;
  std::size_t test_instances = 0;
  std::map<Variant, VariantResult> results;
  std::vector<VariantResult> ablation;
  std::optional<HumanScores> human;
};

struct McNemarRow {
  Variant a;
  Variant b;
  McNemarResult result;
};

struct EvalReport {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<Variant> variants;
  std::vector<ScenarioReport> scenarios;
  std::vector<McNemarRow> mcnemar;  // pooled over scenarios

  // Unweighted mean over scenarios.
  double average_accuracy(Variant v) const;
  double average_perplexity(Variant v) const;
};

struct LoadedResources {
  std::optional<EmbeddingStore> embeddings;
  std::optional<ThematicFitStore> thematic_fit;
};

// Trains every variant per scenario (or pooled), evaluates on the test split,
// runs the ablation and, with human guesses, the human comparisons.
EvalReport run_experiment(const ExperimentConfig& cfg, const Corpus& corpus,
                          const LoadedResources& resources,
                          const std::optional<GuessExport>& human = std::nullopt);

// Files: table2.tsv, table3.tsv, mcnemar.tsv, human.tsv (with guesses),
// report.json and distributions/<scenario>.<variant>.jsonl.
void write_report_files(const EvalReport& report, const std::filesystem::path& dir);

std::string table2_tsv(const EvalReport& report);
std::string table3_tsv(const EvalReport& report);
std::string mcnemar_tsv(const EvalReport& report);
std::string human_tsv(const EvalReport& report);
nlohmann::json report_json(const EvalReport& report);

// One JSON object per line: {"instance", "candidates", "probs"}. Lines without
// an "instance" key (the provenance header) are skipped on reading.
nlohmann::json distribution_to_json(const PredictionDistribution& d);
PredictionDistribution distribution_from_json(const nlohmann::json& j);
// Throws ResourceError carrying "file:line".
std::vector<PredictionDistribution> read_distributions(const std::filesystem::path& path);

}  // namespace refpred
