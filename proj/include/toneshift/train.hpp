#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "toneshift/io.hpp"
#include "toneshift/regressor.hpp"

namespace toneshift::train {

inline constexpr size_t kDefaultBins = 10;

/// Equal-length bins over [-1, 1]. Bins are right-open except the last,
/// which also holds +1.
std::vector<double> bin_edges(size_t bins = kDefaultBins);
size_t bin_index(double y, size_t bins = kDefaultBins);

struct BinWeights {
  std::vector<double> edges;
  std::vector<size_t> counts;
  std::vector<double> weights;

  size_t num_bins() const { return counts.size(); }
  size_t bin_of(double y) const { return bin_index(y, num_bins()); }
  double weight_of(double y) const { return weights[bin_of(y)]; }
  json to_json() const;
  static BinWeights from_json(const json& j);
};

/// Weights proportional to 1/max(count, 1), scaled so that
/// sum(counts * weights) equals the number of targets. Throws
/// EmptyTrainingSet; InvalidArgument for targets outside [-1, 1].
BinWeights compute_bin_weights(std::span<const double> targets, size_t bins = kDefaultBins);
/// All weights 1.
BinWeights uniform_bin_weights(size_t bins = kDefaultBins);

/// (1/N) sum w(bin(y_i)) |yhat_i - y_i|. Throws LengthMismatch.
double weighted_l1(std::span<const double> pred, std::span<const double> target, const BinWeights& bw);
double l1(std::span<const double> pred, std::span<const double> target);
double mse(std::span<const double> pred, std::span<const double> target);

enum class Loss { weighted_l1, l1, mse };
std::string to_string(Loss loss);
Loss parse_loss(const std::string& name);

/// Mean-reduced loss over a batch, with its per-sample derivative.
class LossFunction {
 public:
  LossFunction(Loss kind, BinWeights weights) : kind_(kind), weights_(std::move(weights)) {}
  double value(std::span<const double> pred, std::span<const double> target) const;
  /// d(loss)/d(pred_i) for a batch of size n. The L1 subgradient at
  /// pred == target is 0.
  double derivative(double pred, double target, size_t n) const;
  Loss kind() const { return kind_; }
  const BinWeights& weights() const { return weights_; }

 private:
  Loss kind_;
  BinWeights weights_;
};

// ---------------------------------------------------------------------------

enum class Part { train, val, test };
std::string to_string(Part part);

struct SplitSpec {
  std::array<double, 3> ratios{0.8, 0.1, 0.1};
  uint64_t seed = 0;
  size_t bins = kDefaultBins;
  std::map<std::string, Part> assignment;

  std::vector<std::string> ids(Part part) const;
  json to_json() const;
  static SplitSpec from_json(const json& j);
};

/// Shuffles each target bin with a seeded generator and cuts it by
/// largest-remainder rounding of the ratios. The result does not depend on
/// the order of the inputs. Throws InvalidArgument on empty or mismatched
/// input.
SplitSpec stratified_split(std::span<const std::string> ids, std::span<const double> targets,
                           std::array<double, 3> ratios = {0.8, 0.1, 0.1}, uint64_t seed = 0,
                           size_t bins = kDefaultBins);

/// Largest-remainder apportionment of `count` items; ties go to the earlier part.
std::array<size_t, 3> apportion(size_t count, std::array<double, 3> ratios);

// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  json to_json() const;
};

class Adam {
 public:
  Adam(size_t n, AdamConfig config = {});
  void step(std::vector<double>& params, const std::vector<double>& grad);
  size_t steps() const { return t_; }

 private:
  AdamConfig c_;
  size_t t_ = 0;
  std::vector<double> m_, v_;
};

struct TrainConfig {
  size_t batch_size = 32;
  size_t max_epochs = 20;
  size_t patience = 3;
  AdamConfig adam;
  Loss loss = Loss::weighted_l1;
  uint64_t seed = 0;

  void validate() const;
  json to_json() const;
  static TrainConfig from_json(const json& j);
};

/// Stops after `patience` consecutive epochs without a strict improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(size_t patience) : patience_(patience) {}
  /// Returns true when training should stop.
  bool update(size_t epoch, double val_loss);
  bool improved() const { return improved_; }
  size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }

 private:
  size_t patience_;
  size_t best_epoch_ = 0;
  double best_loss_ = 0;
  bool has_best_ = false;
  bool improved_ = false;
  size_t bad_epochs_ = 0;
};

struct EpochRecord {
  size_t epoch = 0;  // 1-based
  double train_loss = 0;
  double val_loss = 0;
  bool improved = false;
  json to_json() const;
};

struct FitResult {
  model::Params params;  // from the best validation epoch
  std::vector<EpochRecord> history;
  size_t best_epoch = 0;
  double best_val_loss = 0;
  bool stopped_early = false;
  json history_json() const;
};

struct FitHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  /// Replaces the measured validation loss of an epoch.
  std::function<double(size_t epoch, double measured)> val_loss_override;
};

using Dataset = std::vector<model::FeatureSequence>;

/// Validation loss of `params` on `data` in eval mode.
double evaluate_loss(const model::Params& params, std::span<const model::FeatureSequence> data,
                     const LossFunction& loss);
std::vector<double> predict(const model::Params& params, std::span<const model::FeatureSequence> data);

/// Minibatch Adam with early stopping. Throws EmptyTrainingSet and
/// DivergedLoss.
FitResult fit(const model::ModelConfig& model_config, const TrainConfig& config,
              std::span<const model::FeatureSequence> train, std::span<const model::FeatureSequence> val,
              const BinWeights& weights, const FitHooks& hooks = {});

// ---------------------------------------------------------------------------

struct GridSpec {
  std::vector<size_t> fc_out{2, 14, 62};
  std::vector<bool> bidirectional{false, true};
  std::vector<size_t> num_layers{1, 2};
  std::vector<double> dropout{0.0, 0.1, 0.2, 0.5};

  /// Dropout only varies for stacked models; single-layer models use 0.
  std::vector<model::ModelConfig> enumerate(size_t embed_dim = 768) const;
  json to_json() const;
  static GridSpec from_json(const json& j);
};

struct LeaderboardEntry {
  model::ModelConfig config;
  double best_val_loss = 0;
  size_t best_epoch = 0;
  size_t epochs_run = 0;
  json to_json() const;
};

struct GridResult {
  std::vector<LeaderboardEntry> leaderboard;  // ascending validation loss
  model::ModelConfig best;
  json to_json() const;
};

using Trainer = std::function<LeaderboardEntry(const model::ModelConfig&)>;

/// Runs every configuration (on up to `workers` threads) and ranks them by
/// validation loss, ties broken by config key. Throws InvalidArgument on an
/// empty grid.
GridResult grid_search(const std::vector<model::ModelConfig>& grid, const Trainer& trainer, size_t workers = 1);

}  // namespace toneshift::train
