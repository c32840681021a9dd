#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "toneshift/baselines.hpp"
#include "toneshift/error.hpp"
#include "toneshift/rng.hpp"

namespace toneshift::baselines {

void FeatureMatrix::push_row(std::span<const double> r) {
  if (rows == 0 && cols == 0) cols = r.size();
  if (r.size() != cols)
    throw DimensionMismatch("row has " + std::to_string(r.size()) + " features, expected " + std::to_string(cols));
  values.insert(values.end(), r.begin(), r.end());
  ++rows;
}

void GbtParams::validate() const {
  if (!(learning_rate > 0)) throw InvalidArgument("learning_rate must be positive");
  if (max_depth == 0) throw InvalidArgument("max_depth must be positive");
  if (!(subsample > 0 && subsample <= 1)) throw InvalidArgument("subsample must be in (0, 1]");
  if (!(colsample_bytree > 0 && colsample_bytree <= 1)) throw InvalidArgument("colsample_bytree must be in (0, 1]");
  if (n_estimators == 0) throw InvalidArgument("n_estimators must be positive");
  if (max_bins < 2 || max_bins > 256) throw InvalidArgument("max_bins must be in [2, 256]");
  if (min_child_weight < 0 || reg_lambda < 0 || gamma < 0) throw InvalidArgument("negative regularization");
}

std::string GbtParams::key() const {
  std::ostringstream os;
  os << "lr" << format_double(learning_rate) << "-d" << max_depth << "-mcw" << format_double(min_child_weight)
     << "-ss" << format_double(subsample) << "-cs" << format_double(colsample_bytree) << "-n" << n_estimators;
  return os.str();
}

json GbtParams::to_json() const {
  return {{"learning_rate", learning_rate},
          {"max_depth", max_depth},
          {"min_child_weight", min_child_weight},
          {"subsample", subsample},
          {"colsample_bytree", colsample_bytree},
          {"n_estimators", n_estimators},
          {"early_stopping_rounds", early_stopping_rounds},
          {"reg_lambda", reg_lambda},
          {"gamma", gamma},
          {"max_bins", max_bins},
          {"seed", seed},
          {"objective", "squared_error"}};
}

GbtParams GbtParams::from_json(const json& j) {
  GbtParams p;
  p.learning_rate = j.value("learning_rate", p.learning_rate);
  p.max_depth = j.value("max_depth", p.max_depth);
  p.min_child_weight = j.value("min_child_weight", p.min_child_weight);
  p.subsample = j.value("subsample", p.subsample);
  p.colsample_bytree = j.value("colsample_bytree", p.colsample_bytree);
  p.n_estimators = j.value("n_estimators", p.n_estimators);
  p.early_stopping_rounds = j.value("early_stopping_rounds", p.early_stopping_rounds);
  p.reg_lambda = j.value("reg_lambda", p.reg_lambda);
  p.gamma = j.value("gamma", p.gamma);
  p.max_bins = j.value("max_bins", p.max_bins);
  p.seed = j.value("seed", p.seed);
  p.validate();
  return p;
}

GbtParams reference_gbt_params(uint64_t seed) {
  GbtParams p;
  p.learning_rate = 1e-2;
  p.max_depth = 5;
  p.min_child_weight = 1;
  p.subsample = 0.7;
  p.colsample_bytree = 0.7;
  p.n_estimators = 500;
  p.seed = seed;
  return p;
}

double GbtModel::predict(std::span<const double> x) const {
  if (x.size() != num_features)
    throw DimensionMismatch("expected " + std::to_string(num_features) + " features, got " + std::to_string(x.size()));
  double s = base_score;
  for (const auto& tree : trees) {
    int32_t i = 0;
    while (tree[static_cast<size_t>(i)].feature >= 0) {
      const auto& n = tree[static_cast<size_t>(i)];
      i = x[static_cast<size_t>(n.feature)] < n.threshold ? n.left : n.right;
    }
    s += tree[static_cast<size_t>(i)].value;
  }
  return s;
}

std::vector<double> GbtModel::predict(const FeatureMatrix& x) const {
  std::vector<double> out(x.rows);
  for (size_t i = 0; i < x.rows; ++i) out[i] = predict(x.row(i));
  return out;
}

json GbtModel::to_json() const {
  json t = json::array();
  for (const auto& tree : trees) {
    json nodes = json::array();
    for (const auto& n : tree) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value});
    t.push_back(std::move(nodes));
  }
  return {{"format", "toneshift-gbt"}, {"format_version", 1},          {"base_score", base_score},
          {"num_features", num_features}, {"params", params.to_json()}, {"best_iteration", best_iteration},
          {"val_history", val_history},   {"trees", t}};
}

GbtModel GbtModel::from_json(const json& j) {
  GbtModel m;
  try {
    m.base_score = j.at("base_score").get<double>();
    m.num_features = j.at("num_features").get<size_t>();
    m.params = GbtParams::from_json(j.at("params"));
    m.best_iteration = j.at("best_iteration").get<size_t>();
    m.val_history = j.value("val_history", std::vector<double>{});
    for (const auto& tree : j.at("trees")) {
      std::vector<TreeNode> nodes;
      for (const auto& n : tree)
        nodes.push_back({n.at(0).get<int32_t>(), n.at(1).get<double>(), n.at(2).get<int32_t>(),
                         n.at(3).get<int32_t>(), n.at(4).get<double>()});
      m.trees.push_back(std::move(nodes));
    }
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("bad tree model: ") + e.what());
  }
  return m;
}

namespace {

struct Binned {
  size_t rows = 0, cols = 0;
  std::vector<uint8_t> bins;               // column-major
  std::vector<std::vector<double>> cuts;   // bin(x) = #cuts <= x

  uint8_t at(size_t col, size_t row) const { return bins[col * rows + row]; }
};

Binned bin_matrix(const FeatureMatrix& x, size_t max_bins) {
  Binned b;
  b.rows = x.rows;
  b.cols = x.cols;
  b.bins.resize(x.rows * x.cols);
  b.cuts.resize(x.cols);
  std::vector<double> col(x.rows);
  for (size_t f = 0; f < x.cols; ++f) {
    for (size_t r = 0; r < x.rows; ++r) col[r] = x.values[r * x.cols + f];
    std::vector<double> sorted = col;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> uniq = sorted;
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    auto& cuts = b.cuts[f];
    if (uniq.size() <= max_bins) {
      cuts.assign(uniq.begin() + 1, uniq.end());
    } else {
      for (size_t j = 1; j < max_bins; ++j) {
        double c = sorted[j * sorted.size() / max_bins];
        if (c > sorted.front() && (cuts.empty() || c > cuts.back())) cuts.push_back(c);
      }
    }
    for (size_t r = 0; r < x.rows; ++r)
      b.bins[f * x.rows + r] =
          static_cast<uint8_t>(std::upper_bound(cuts.begin(), cuts.end(), col[r]) - cuts.begin());
  }
  return b;
}

struct Pending {
  int32_t node;
  std::vector<uint32_t> rows;
  size_t depth;
};

std::vector<TreeNode> grow_tree(const Binned& data, const std::vector<double>& grad,
                                std::vector<uint32_t> rows, const std::vector<size_t>& features,
                                const GbtParams& p) {
  std::vector<TreeNode> tree(1);
  std::vector<Pending> stack;
  stack.push_back({0, std::move(rows), 0});
  std::vector<double> hg(256), hh(256);
  const double lambda = p.reg_lambda;
  while (!stack.empty()) {
    Pending work = std::move(stack.back());
    stack.pop_back();
    double G = 0;
    for (uint32_t r : work.rows) G += grad[r];
    const double H = static_cast<double>(work.rows.size());
    auto leaf = [&] { tree[static_cast<size_t>(work.node)].value = -G / (H + lambda) * p.learning_rate; };
    if (work.depth >= p.max_depth || work.rows.size() < 2) {
      leaf();
      continue;
    }
    double best_gain = 0;
    int32_t best_f = -1;
    size_t best_bin = 0;
    const double parent = G * G / (H + lambda);
    for (size_t f : features) {
      size_t nb = data.cuts[f].size() + 1;
      if (nb < 2) continue;
      std::fill_n(hg.begin(), nb, 0.0);
      std::fill_n(hh.begin(), nb, 0.0);
      const uint8_t* col = data.bins.data() + f * data.rows;
      for (uint32_t r : work.rows) {
        hg[col[r]] += grad[r];
        hh[col[r]] += 1.0;
      }
      double gl = 0, hl = 0;
      for (size_t b = 0; b + 1 < nb; ++b) {
        gl += hg[b];
        hl += hh[b];
        double gr = G - gl, hr = H - hl;
        if (hl < p.min_child_weight || hr < p.min_child_weight || hl == 0 || hr == 0) continue;
        double gain = 0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent) - p.gamma;
        if (gain > best_gain + 1e-15) {
          best_gain = gain;
          best_f = static_cast<int32_t>(f);
          best_bin = b;
        }
      }
    }
    if (best_f < 0) {
      leaf();
      continue;
    }
    std::vector<uint32_t> left, right;
    const uint8_t* col = data.bins.data() + static_cast<size_t>(best_f) * data.rows;
    for (uint32_t r : work.rows) (col[r] <= best_bin ? left : right).push_back(r);
    auto li = static_cast<int32_t>(tree.size());
    tree.emplace_back();
    tree.emplace_back();
    TreeNode& n = tree[static_cast<size_t>(work.node)];
    n.feature = best_f;
    n.threshold = data.cuts[static_cast<size_t>(best_f)][best_bin];
    n.left = li;
    n.right = li + 1;
    stack.push_back({li + 1, std::move(right), work.depth + 1});
    stack.push_back({li, std::move(left), work.depth + 1});
  }
  return tree;
}

double tree_value_binned(const std::vector<TreeNode>& tree, const Binned& data,
                         const std::vector<std::vector<double>>& cuts, size_t row) {
  int32_t i = 0;
  while (tree[static_cast<size_t>(i)].feature >= 0) {
    const auto& n = tree[static_cast<size_t>(i)];
    auto f = static_cast<size_t>(n.feature);
    // x < cuts[b] exactly when bin(x) <= b.
    size_t b = static_cast<size_t>(std::lower_bound(cuts[f].begin(), cuts[f].end(), n.threshold) - cuts[f].begin());
    i = data.at(f, row) <= b ? n.left : n.right;
  }
  return tree[static_cast<size_t>(i)].value;
}

double mse_of(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

}  // namespace

GbtModel fit_gbt(const FeatureMatrix& x, std::span<const double> y, const FeatureMatrix& val_x,
                 std::span<const double> val_y, const GbtParams& params) {
  params.validate();
  if (x.rows == 0) throw EmptyTrainingSet("no rows to fit the tree ensemble on");
  if (y.size() != x.rows) throw LengthMismatch("feature rows and targets differ in length");
  if (val_y.size() != val_x.rows) throw LengthMismatch("validation rows and targets differ in length");
  if (val_x.rows > 0 && val_x.cols != x.cols) throw DimensionMismatch("validation features differ in width");
  if (x.rows > std::numeric_limits<uint32_t>::max()) throw InvalidArgument("too many rows");

  GbtModel model;
  model.params = params;
  model.num_features = x.cols;
  model.base_score = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());

  Binned data = bin_matrix(x, params.max_bins);
  Rng rng(params.seed);
  std::vector<double> pred(x.rows, model.base_score), grad(x.rows);
  std::vector<double> val_pred(val_x.rows, model.base_score);
  std::vector<size_t> all_features(x.cols);
  std::iota(all_features.begin(), all_features.end(), 0);
  const size_t ncols = std::max<size_t>(1, static_cast<size_t>(params.colsample_bytree * static_cast<double>(x.cols)));

  double best = std::numeric_limits<double>::infinity();
  size_t since_best = 0;
  for (size_t t = 0; t < params.n_estimators; ++t) {
    for (size_t i = 0; i < x.rows; ++i) grad[i] = pred[i] - y[i];
    std::vector<uint32_t> rows;
    if (params.subsample < 1.0) {
      for (uint32_t i = 0; i < x.rows; ++i)
        if (rng.bernoulli(params.subsample)) rows.push_back(i);
    }
    if (rows.empty()) {
      rows.resize(x.rows);
      std::iota(rows.begin(), rows.end(), 0u);
    }
    std::vector<size_t> features = all_features;
    if (ncols < features.size()) {
      for (size_t k = 0; k < ncols; ++k) std::swap(features[k], features[k + rng.uniform_index(features.size() - k)]);
      features.resize(ncols);
      std::sort(features.begin(), features.end());
    }
    auto tree = grow_tree(data, grad, std::move(rows), features, params);
    for (size_t i = 0; i < x.rows; ++i) pred[i] += tree_value_binned(tree, data, data.cuts, i);
    model.trees.push_back(std::move(tree));

    if (val_x.rows > 0) {
      GbtModel last;
      last.num_features = x.cols;
      last.trees.push_back(model.trees.back());
      for (size_t i = 0; i < val_x.rows; ++i) val_pred[i] += last.predict(val_x.row(i));
      double m = mse_of(val_pred, val_y);
      model.val_history.push_back(m);
      if (m < best) {
        best = m;
        model.best_iteration = model.trees.size();
        since_best = 0;
      } else if (params.early_stopping_rounds > 0 && ++since_best >= params.early_stopping_rounds) {
        break;
      }
    } else {
      model.best_iteration = model.trees.size();
    }
  }
  model.trees.resize(model.best_iteration);
  return model;
}

std::vector<GbtParams> GbtGrid::enumerate(uint64_t seed) const {
  std::vector<GbtParams> out;
  for (double lr : learning_rate)
    for (size_t d : max_depth)
      for (double mcw : min_child_weight)
        for (double ss : subsample)
          for (double cs : colsample_bytree)
            for (size_t n : n_estimators) {
              GbtParams p;
              p.learning_rate = lr;
              p.max_depth = d;
              p.min_child_weight = mcw;
              p.subsample = ss;
              p.colsample_bytree = cs;
              p.n_estimators = n;
              p.seed = seed;
              p.validate();
              out.push_back(p);
            }
  return out;
}

json GbtGrid::to_json() const {
  return {{"learning_rate", learning_rate}, {"max_depth", max_depth},
          {"min_child_weight", min_child_weight}, {"subsample", subsample},
          {"colsample_bytree", colsample_bytree}, {"n_estimators", n_estimators}};
}

GbtGrid GbtGrid::from_json(const json& j) {
  GbtGrid g;
  if (j.contains("learning_rate")) j["learning_rate"].get_to(g.learning_rate);
  if (j.contains("max_depth")) j["max_depth"].get_to(g.max_depth);
  if (j.contains("min_child_weight")) j["min_child_weight"].get_to(g.min_child_weight);
  if (j.contains("subsample")) j["subsample"].get_to(g.subsample);
  if (j.contains("colsample_bytree")) j["colsample_bytree"].get_to(g.colsample_bytree);
  if (j.contains("n_estimators")) j["n_estimators"].get_to(g.n_estimators);
  return g;
}

json GbtSearchResult::to_json() const {
  json rows = json::array();
  for (const auto& e : leaderboard)
    rows.push_back({{"params", e.params.to_json()}, {"key", e.params.key()}, {"val_mse", e.val_mse}, {"trees", e.trees}});
  return {{"best", best.params.to_json()}, {"best_key", best.params.key()}, {"leaderboard", rows}};
}

GbtSearchResult search_gbt(const FeatureMatrix& x, std::span<const double> y, const FeatureMatrix& val_x,
                           std::span<const double> val_y, const std::vector<GbtParams>& grid) {
  if (grid.empty()) throw InvalidArgument("tree grid is empty");
  if (val_x.rows == 0) throw EmptyTrainingSet("tree grid search needs validation rows");
  GbtSearchResult r;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : grid) {
    auto m = fit_gbt(x, y, val_x, val_y, p);
    double v = mse_of(m.predict(val_x), val_y);
    r.leaderboard.push_back({p, v, m.trees.size()});
    if (v < best) {
      best = v;
      r.best = std::move(m);
    }
  }
  std::stable_sort(r.leaderboard.begin(), r.leaderboard.end(),
                   [](const GbtSearchEntry& a, const GbtSearchEntry& b) { return a.val_mse < b.val_mse; });
  return r;
}

}  // namespace toneshift::baselines
