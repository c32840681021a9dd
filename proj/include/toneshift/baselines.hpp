#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "toneshift/io.hpp"
#include "toneshift/regressor.hpp"
#include "toneshift/threadsel.hpp"

namespace toneshift::baselines {

// Heuristic predictors. The FeatureSequence overloads read the tone column;
// the segment overloads need every message of S scored (MissingField
// otherwise).

/// Average tone of S, post and author comments included.
double predict_mean(std::span<const double> tones);
double predict_mean(const model::FeatureSequence& seq);
double predict_mean(const threadsel::ThreadSegment& seg);

/// Tone of the final message of S.
double predict_last(std::span<const double> tones);
double predict_last(const model::FeatureSequence& seq);
double predict_last(const threadsel::ThreadSegment& seg);

/// Tone of the opening post.
double predict_unchanged(std::span<const double> tones);
double predict_unchanged(const model::FeatureSequence& seq);
double predict_unchanged(const threadsel::ThreadSegment& seg);

/// Mean pool then max pool of (e_m, emt, is_author) over the valid rows;
/// 2 * (embed_dim + 2) values. Throws MissingEmbedding.
std::vector<double> pool_features(const model::FeatureSequence& seq);

// ---------------------------------------------------------------------------
// Gradient-boosted regression trees on histogram-binned features, squared
// error objective.

struct FeatureMatrix {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<double> values;  // row-major

  std::span<const double> row(size_t i) const { return {values.data() + i * cols, cols}; }
  void push_row(std::span<const double> r);
};

struct GbtParams {
  double learning_rate = 0.1;
  size_t max_depth = 3;
  double min_child_weight = 1.0;
  double subsample = 1.0;
  double colsample_bytree = 1.0;
  size_t n_estimators = 100;
  size_t early_stopping_rounds = 10;  // 0 disables
  double reg_lambda = 1.0;
  double gamma = 0.0;
  size_t max_bins = 256;
  uint64_t seed = 0;

  void validate() const;
  std::string key() const;
  json to_json() const;
  static GbtParams from_json(const json& j);
  bool operator==(const GbtParams&) const = default;
};

struct TreeNode {
  int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0;  // x < threshold goes left
  int32_t left = -1;
  int32_t right = -1;
  double value = 0;      // leaf output, learning rate applied
};

class GbtModel {
 public:
  double predict(std::span<const double> x) const;
  std::vector<double> predict(const FeatureMatrix& x) const;

  double base_score = 0;
  size_t num_features = 0;
  std::vector<std::vector<TreeNode>> trees;
  std::vector<double> val_history;  // validation MSE after each tree
  size_t best_iteration = 0;        // number of trees kept
  GbtParams params;

  json to_json() const;
  static GbtModel from_json(const json& j);
};

/// Fits on (x, y), early stopping on (val_x, val_y) when those are non-empty.
/// Throws EmptyTrainingSet, LengthMismatch, DimensionMismatch.
GbtModel fit_gbt(const FeatureMatrix& x, std::span<const double> y, const FeatureMatrix& val_x,
                 std::span<const double> val_y, const GbtParams& params);

struct GbtGrid {
  std::vector<double> learning_rate{1e-3, 1e-2, 1e-1};
  std::vector<size_t> max_depth{1, 3, 5};
  std::vector<double> min_child_weight{1, 3, 5};
  std::vector<double> subsample{0.5, 0.7};
  std::vector<double> colsample_bytree{0.5, 0.7};
  std::vector<size_t> n_estimators{100, 200, 500};

  std::vector<GbtParams> enumerate(uint64_t seed = 0) const;
  json to_json() const;
  static GbtGrid from_json(const json& j);
};

/// The configuration reported best for the tree baseline.
GbtParams reference_gbt_params(uint64_t seed = 0);

struct GbtSearchEntry {
  GbtParams params;
  double val_mse = 0;
  size_t trees = 0;
};

struct GbtSearchResult {
  GbtModel best;
  std::vector<GbtSearchEntry> leaderboard;  // ascending validation MSE
  json to_json() const;
};

GbtSearchResult search_gbt(const FeatureMatrix& x, std::span<const double> y, const FeatureMatrix& val_x,
                           std::span<const double> val_y, const std::vector<GbtParams>& grid);

}  // namespace toneshift::baselines
