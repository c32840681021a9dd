#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "toneshift/io.hpp"
#include "toneshift/threadsel.hpp"
#include "toneshift/train.hpp"

namespace toneshift::eval {

struct Metrics {
  double weighted_l1 = 0;
  double l1 = 0;
  double mse = 0;
  json to_json() const;
  static Metrics from_json(const json& j);
  bool operator==(const Metrics&) const = default;
};

/// Weighted L1 (with training-split weights), L1 and MSE. Throws
/// LengthMismatch.
Metrics metrics(std::span<const double> pred, std::span<const double> target, const train::BinWeights& bw);

/// Percentile with linear interpolation between order statistics, q in
/// [0, 100]. Throws InvalidArgument on empty input.
double percentile(std::vector<double> values, double q);

inline double clamp_unit(double v) { return v < -1.0 ? -1.0 : (v > 1.0 ? 1.0 : v); }

/// One test segment with every predictor's output.
struct PredictionRow {
  std::string segment_id;
  std::string subreddit;
  double target = 0;                      // EmT(c_n)
  std::optional<double> previous_author;  // EmT of the author's comment before c_n
  size_t messages = 0;                    // |S| as fed to the model
  std::map<std::string, double> predictions;

  std::optional<double> delta() const {
    if (!previous_author) return std::nullopt;
    return target - *previous_author;
  }
  json to_json() const;
  static PredictionRow from_json(const json& j);
  bool operator==(const PredictionRow&) const = default;
};

inline const std::string kModel = "MODEL";

struct CellMetrics {
  std::string subreddit;  // "ALL" for the pooled test set
  std::string predictor;
  size_t count = 0;
  Metrics values;
  bool operator==(const CellMetrics&) const = default;
};

struct SubsetRow {
  std::string name;
  std::optional<double> threshold;  // empty when no row has a delta
  size_t count = 0;
  std::map<std::string, double> l1;        // per predictor; absent when count == 0
  std::map<std::string, double> win_rate;  // % of rows where MODEL's error is strictly smaller
  bool operator==(const SubsetRow&) const = default;
};

struct ExtremeReport {
  std::optional<double> delta_p95;
  std::optional<double> delta_p5;
  size_t with_delta = 0;
  std::vector<SubsetRow> rows;
  bool operator==(const ExtremeReport&) const = default;
};

/// The six subsets: delta above its 95th percentile, delta > +1, target >
/// +0.8, delta below its 5th percentile, delta < -1, target < -0.8.
/// Percentiles are pooled over the rows given. Rows without a previous author
/// comment only take part in the target subsets.
ExtremeReport extreme_subsets(const std::vector<PredictionRow>& rows, const std::string& model = kModel);

/// Membership predicate used by extreme_subsets, by subset index 0..5.
bool in_subset(const PredictionRow& row, size_t subset, const ExtremeReport& report);

struct EvaluationReport {
  std::vector<std::string> predictors;
  std::vector<std::string> subreddits;
  std::vector<CellMetrics> cells;
  ExtremeReport extremes;
  json metadata;

  const CellMetrics* cell(const std::string& subreddit, const std::string& predictor) const;
  json to_json() const;
  static EvaluationReport from_json(const json& j);
  /// Plain-text tables: weighted L1 by subreddit, L1 and MSE, extreme subsets.
  std::string render() const;
  bool operator==(const EvaluationReport&) const = default;
};

EvaluationReport evaluate(const std::vector<PredictionRow>& rows, const train::BinWeights& bw,
                          const std::string& model = kModel);

// ---------------------------------------------------------------------------

struct ScatterPoint {
  std::string id;
  double x = 0;
  double y = 0;
  size_t size = 0;
};

struct JointDensityGrid {
  double lo = -1.0, hi = 1.0;
  size_t points = 100;       // per axis
  double bandwidth_x = 0, bandwidth_y = 0;
  std::vector<double> density;  // points x points, row = y index, column = x index
  std::vector<ScatterPoint> scatter;

  double axis(size_t i) const { return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1); }
  double at(size_t ix, size_t iy) const { return density[iy * points + ix]; }
  /// Trapezoidal integral over the grid.
  double integral() const;
  std::string grid_csv() const;
  std::string scatter_csv() const;
};

inline constexpr double kBandwidthFloor = 1e-3;

/// Product Gaussian kernel with per-axis bandwidth max(sd * n^(-1/6), floor),
/// evaluated on the grid and rescaled to integrate to 1 there. Points are
/// clamped to the grid range. `n_scatter` indices are drawn without
/// replacement. Throws InvalidArgument for fewer than 2 points.
JointDensityGrid joint_density(std::span<const double> x, std::span<const double> y, size_t n_scatter,
                               uint64_t seed, std::span<const size_t> sizes = {},
                               std::span<const std::string> ids = {}, size_t grid_points = 100);

// ---------------------------------------------------------------------------

struct Quartiles {
  double q1 = 0, q2 = 0, q3 = 0;
  json to_json() const { return {q1, q2, q3}; }
};

struct Characterization {
  std::string subreddit;
  size_t threads = 0;
  Quartiles post, last_comment, others_mean;
  // Shares of (EmT(p), EmT(c_n)) in each quadrant, counted anticlockwise from
  // (+, +); points on an axis are in none of them.
  std::array<double, 4> quadrant{};
  json to_json() const;
};

/// Per subreddit plus "ALL". `others_mean` is the per-thread average tone of
/// the non-author comments in S. Needs scored segments (MissingField).
std::vector<Characterization> characterize(const std::vector<threadsel::ThreadSegment>& segments);
std::string render(const std::vector<Characterization>& rows);

}  // namespace toneshift::eval
