#include "toneshift/features.hpp"

#include "toneshift/error.hpp"
#include "toneshift/text.hpp"

namespace toneshift::features {

EmbeddingSource EmbeddingSource::from(const embed::Embedder& provider, embed::EmbeddingCache* cache) {
  return {&provider, cache, provider.provider_id(), provider.dim()};
}

std::vector<float> EmbeddingSource::get(std::string_view text) const {
  if (provider) {
    auto e = embed::get_or_compute(cache, text, *provider);
    if (e.vector.size() != dim)
      throw DimensionMismatch("provider returned " + std::to_string(e.vector.size()) + " values, expected " +
                              std::to_string(dim));
    return std::move(e.vector);
  }
  if (text::trim(text).empty()) return std::vector<float>(dim, 0.0f);
  if (!cache) throw MissingEmbedding("no embedding provider or cache configured");
  auto hit = cache->get(embed::cache_key(provider_id, text));
  if (!hit) throw MissingEmbedding("no cached embedding from " + provider_id + " for a message");
  return std::move(*hit);
}

void score_segment(threadsel::ThreadSegment& segment, const tone::ToneScorer& scorer) {
  for (auto& m : segment.messages) m.emt = scorer.score(m.text).compound;
  segment.target.emt = scorer.score(segment.target.text).compound;
  if (segment.previous_author_comment)
    segment.previous_author_comment->emt = scorer.score(segment.previous_author_comment->text).compound;
}

model::FeatureSequence build_sequence(const threadsel::ThreadSegment& segment, const EmbeddingSource& source) {
  model::FeatureSequence seq;
  seq.id = segment.segment_id;
  seq.embed_dim = source.dim;
  seq.embeddings.reserve(segment.messages.size() * source.dim);
  for (const auto& m : segment.messages) {
    if (!m.emt) throw MissingField("message " + m.id + " of segment " + segment.segment_id + " is not scored");
    seq.push(source.get(m.text), *m.emt, m.is_post_author);
  }
  if (!segment.target.emt) throw MissingField("target of segment " + segment.segment_id + " is not scored");
  seq.target = *segment.target.emt;
  return seq;
}

}  // namespace toneshift::features
