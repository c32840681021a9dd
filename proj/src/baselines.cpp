#include "toneshift/baselines.hpp"

#include <algorithm>

#include "toneshift/error.hpp"

namespace toneshift::baselines {

namespace {

void require_nonempty(std::span<const double> tones) {
  if (tones.empty()) throw InvalidArgument("segment has no messages");
}

std::vector<double> tones_of(const model::FeatureSequence& seq) {
  if (seq.emt.size() < seq.length) throw MissingField("sequence " + seq.id + " lacks tone values");
  return {seq.emt.begin(), seq.emt.begin() + static_cast<std::ptrdiff_t>(seq.length)};
}

std::vector<double> tones_of(const threadsel::ThreadSegment& seg) {
  std::vector<double> out;
  out.reserve(seg.messages.size());
  for (const auto& m : seg.messages) {
    if (!m.emt) throw MissingField("message " + m.id + " of segment " + seg.segment_id + " is not scored");
    out.push_back(*m.emt);
  }
  return out;
}

}  // namespace

double predict_mean(std::span<const double> tones) {
  require_nonempty(tones);
  double s = 0;
  for (double t : tones) s += t;
  return s / static_cast<double>(tones.size());
}
double predict_mean(const model::FeatureSequence& seq) { return predict_mean(tones_of(seq)); }
double predict_mean(const threadsel::ThreadSegment& seg) { return predict_mean(tones_of(seg)); }

double predict_last(std::span<const double> tones) {
  require_nonempty(tones);
  return tones.back();
}
double predict_last(const model::FeatureSequence& seq) { return predict_last(tones_of(seq)); }
double predict_last(const threadsel::ThreadSegment& seg) { return predict_last(tones_of(seg)); }

double predict_unchanged(std::span<const double> tones) {
  require_nonempty(tones);
  return tones.front();
}
double predict_unchanged(const model::FeatureSequence& seq) { return predict_unchanged(tones_of(seq)); }
double predict_unchanged(const threadsel::ThreadSegment& seg) { return predict_unchanged(tones_of(seg)); }

std::vector<double> pool_features(const model::FeatureSequence& seq) {
  const size_t d = seq.embed_dim + 2;
  if (seq.length == 0) throw InvalidArgument("sequence " + seq.id + " is empty");
  if (seq.embeddings.size() < seq.length * seq.embed_dim)
    throw MissingEmbedding("sequence " + seq.id + " has fewer embedding rows than messages");
  if (seq.emt.size() < seq.length || seq.is_author.size() < seq.length)
    throw MissingField("sequence " + seq.id + " lacks tone or author columns");
  std::vector<double> mean(d, 0.0), mx(d, -std::numeric_limits<double>::infinity());
  for (size_t m = 0; m < seq.length; ++m) {
    auto e = seq.embedding(m);
    for (size_t k = 0; k < seq.embed_dim; ++k) {
      double v = e[k];
      mean[k] += v;
      mx[k] = std::max(mx[k], v);
    }
    mean[d - 2] += seq.emt[m];
    mx[d - 2] = std::max(mx[d - 2], seq.emt[m]);
    mean[d - 1] += seq.is_author[m];
    mx[d - 1] = std::max(mx[d - 1], seq.is_author[m]);
  }
  for (double& v : mean) v /= static_cast<double>(seq.length);
  mean.insert(mean.end(), mx.begin(), mx.end());
  return mean;
}

}  // namespace toneshift::baselines
