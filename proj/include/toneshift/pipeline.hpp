#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "toneshift/baselines.hpp"
#include "toneshift/embed.hpp"
#include "toneshift/io.hpp"
#include "toneshift/regressor.hpp"
#include "toneshift/train.hpp"

namespace toneshift::pipeline {

namespace fs = std::filesystem;

struct PipelineConfig {
  fs::path work_dir = "work";
  std::vector<std::string> inputs;  // dump files or glob patterns
  std::string provider = "hash";    // hash | transformer
  uint64_t provider_seed = 0;       // hash provider only
  fs::path model_dir;               // transformer assets
  uint64_t seed = 0;
  std::optional<std::string> subreddit;
  std::optional<fs::path> grid_file;
  bool gridsearch = false;
  bool gbt_search = false;  // full tree grid instead of the reference parameters
  model::ModelConfig model;
  train::TrainConfig train;
  size_t workers = 1;
  size_t scatter_points = 100;

  /// Fills the fields present in `j`; unknown keys throw InvalidArgument.
  void merge(const json& j);
  json to_json() const;
};

struct StageResult {
  std::string stage;
  bool skipped = false;
  json manifest;
};

/// The experiment as a chain of resumable stages. Every stage writes its
/// outputs under the work directory plus a manifest recording the seed, its
/// parameters and the checksums of inputs and outputs. A stage whose
/// manifest still matches is skipped. Errors are rethrown with the stage name
/// prefixed and the same code.
class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config);
  ~Pipeline();

  StageResult ingest();
  StageResult select();
  StageResult score();
  StageResult embed();
  StageResult split();
  StageResult gridsearch();
  StageResult train();
  StageResult baselines();
  StageResult evaluate();
  StageResult export_plots();
  StageResult stats();

  /// ingest through export-plots, in order.
  std::vector<StageResult> run(const std::function<void(const StageResult&)>& on_stage = {});

  fs::path path(const std::string& name) const;
  const PipelineConfig& config() const { return config_; }
  const embed::Embedder& provider();

 private:
  /// `body` returns outputs whose names are only known after it ran.
  StageResult stage(const std::string& name, const std::vector<std::string>& inputs, const json& params,
                    const std::vector<std::string>& outputs, const std::function<std::vector<std::string>()>& body);
  struct Data;
  Data load_data();

  PipelineConfig config_;
  std::unique_ptr<embed::Embedder> provider_;
};

}  // namespace toneshift::pipeline
