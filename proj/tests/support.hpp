#pragma once

// Helpers shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "toneshift/regressor.hpp"
#include "toneshift/rng.hpp"

namespace testsupport {

using toneshift::Rng;
using toneshift::model::FeatureSequence;
using toneshift::model::ModelConfig;
using toneshift::model::Params;

inline FeatureSequence random_sequence(Rng& rng, size_t length, size_t embed_dim) {
  FeatureSequence s;
  s.id = "s" + std::to_string(rng.next_u64() % 100000);
  s.embed_dim = embed_dim;
  std::vector<float> e(embed_dim);
  for (size_t m = 0; m < length; ++m) {
    for (auto& v : e) v = static_cast<float>(rng.normal());
    s.push(e, rng.uniform(-1, 1), rng.bernoulli(0.4));
  }
  s.target = rng.uniform(-1, 1);
  return s;
}

/// Appends zero rows after the valid length.
inline FeatureSequence padded(FeatureSequence s, size_t rows) {
  s.embeddings.resize(rows * s.embed_dim, 0.0f);
  s.emt.resize(rows, 0.0);
  s.is_author.resize(rows, 0.0);
  return s;
}

/// |a - n| / max(|a|, |n|, floor)
inline double relative_error(double a, double n, double floor = 1e-6) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Central differences of a scalar loss of the parameter vector.
inline std::vector<double> numeric_gradient(Params params, const std::function<double(const Params&)>& loss,
                                            double eps = 1e-4) {
  std::vector<double> g(params.values().size());
  for (size_t i = 0; i < g.size(); ++i) {
    double keep = params.values()[i];
    params.values()[i] = keep + eps;
    double up = loss(params);
    params.values()[i] = keep - eps;
    double down = loss(params);
    params.values()[i] = keep;
    g[i] = (up - down) / (2 * eps);
  }
  return g;
}

inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& n) {
  double worst = 0;
  for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, relative_error(a[i], n[i]));
  return worst;
}

}  // namespace testsupport
