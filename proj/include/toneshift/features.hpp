#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "toneshift/embed.hpp"
#include "toneshift/regressor.hpp"
#include "toneshift/threadsel.hpp"
#include "toneshift/tone.hpp"

namespace toneshift::features {

/// Where message embeddings come from: a cache, a provider, or both (cache
/// first). With no provider a cache miss throws MissingEmbedding.
struct EmbeddingSource {
  const embed::Embedder* provider = nullptr;
  embed::EmbeddingCache* cache = nullptr;
  std::string provider_id;
  size_t dim = embed::kEmbeddingDim;

  static EmbeddingSource from(const embed::Embedder& provider, embed::EmbeddingCache* cache = nullptr);
  std::vector<float> get(std::string_view text) const;
};

/// Fills the tone of every message in S, the target and the previous author
/// comment.
void score_segment(threadsel::ThreadSegment& segment, const tone::ToneScorer& scorer);

/// Model input for S. Throws MissingField when S is not scored.
model::FeatureSequence build_sequence(const threadsel::ThreadSegment& segment, const EmbeddingSource& source);

}  // namespace toneshift::features
