#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "toneshift/digest.hpp"

namespace toneshift::embed {

inline constexpr size_t kEmbeddingDim = 768;

struct Embedding {
  std::vector<float> vector;
  std::string provider_id;
  Sha256 text_hash{};
  bool empty = false;  // text had no content; vector is all zeros
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual Embedding embed(std::string_view text) const = 0;
  virtual std::string provider_id() const = 0;
  virtual size_t dim() const = 0;
};

/// Seeded feature hashing of lowercased word unigrams and bigrams.
class HashEmbedder final : public Embedder {
 public:
  explicit HashEmbedder(uint64_t seed = 0, size_t dim = kEmbeddingDim);
  Embedding embed(std::string_view text) const override;
  std::string provider_id() const override;
  size_t dim() const override { return dim_; }

 private:
  uint64_t seed_;
  size_t dim_;
};

/// Word tokens used by the hash provider: lowercased runs of letters and
/// digits (apostrophes kept inside words); other punctuation marks become
/// single-character tokens.
std::vector<std::string> hash_tokens(std::string_view text);

// ---------------------------------------------------------------------------
// Transformer encoder (DistilBERT architecture, inference only).

enum class Pooling { first_token, mean };

struct TransformerConfig {
  size_t vocab_size = 0;
  size_t dim = 0;
  size_t n_layers = 0;
  size_t n_heads = 0;
  size_t hidden_dim = 0;
  size_t max_position_embeddings = 0;
  bool do_lower_case = true;
  double layer_norm_eps = 1e-12;
  std::string name;
};

/// BERT basic tokenization followed by WordPiece.
class WordPieceTokenizer {
 public:
  WordPieceTokenizer(std::vector<std::string> vocab, bool do_lower_case);
  static WordPieceTokenizer from_file(const std::filesystem::path& vocab_file, bool do_lower_case);

  std::vector<std::string> basic_tokenize(std::string_view text) const;
  std::vector<std::string> wordpiece(const std::string& word) const;
  /// [CLS] tokens [SEP], truncated so the total fits `max_len`.
  std::vector<int32_t> encode(std::string_view text, size_t max_len) const;

  int32_t id_of(const std::string& token) const;
  size_t vocab_size() const { return vocab_.size(); }

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int32_t> ids_;
  bool lower_;
  int32_t unk_, cls_, sep_;
};

class TransformerEmbedder final : public Embedder {
 public:
  /// Loads config.json, vocab.txt and weights.bin from `asset_dir`.
  /// Throws ProviderUnavailable when the assets are missing or unreadable.
  static std::unique_ptr<TransformerEmbedder> load(const std::filesystem::path& asset_dir,
                                                   Pooling pooling = Pooling::first_token);
  ~TransformerEmbedder() override;

  Embedding embed(std::string_view text) const override;
  std::string provider_id() const override;
  size_t dim() const override;

  /// Final-layer hidden states, one row per token (row-major, tokens x dim).
  std::vector<float> hidden_states(const std::vector<int32_t>& ids) const;
  const WordPieceTokenizer& tokenizer() const;
  const TransformerConfig& config() const;

 private:
  struct Impl;
  explicit TransformerEmbedder(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

/// Environment variable naming the transformer asset directory.
inline constexpr const char* kModelDirEnv = "TONESHIFT_MODEL_DIR";

/// "hash" or "transformer". The transformer reads its assets from
/// `asset_dir`, or from $TONESHIFT_MODEL_DIR when that is empty.
std::unique_ptr<Embedder> make_embedder(const std::string& provider, uint64_t seed,
                                        const std::filesystem::path& asset_dir = {});

// ---------------------------------------------------------------------------
// Content-addressed cache. One append-only file of fixed-width records
// (32-byte key, dim little-endian float32, CRC32) plus a ".idx" sidecar.

Sha256 cache_key(std::string_view provider_id, std::string_view text);

class EmbeddingCache {
 public:
  enum class Mode { read_only, read_write };

  EmbeddingCache(const std::filesystem::path& path, size_t dim, Mode mode);
  ~EmbeddingCache();
  EmbeddingCache(const EmbeddingCache&) = delete;
  EmbeddingCache& operator=(const EmbeddingCache&) = delete;

  /// Throws CacheCorrupt when the stored record fails its checksum.
  std::optional<std::vector<float>> get(const Sha256& key) const;
  /// No-op if the key is already present.
  void put(const Sha256& key, std::span<const float> values);
  bool contains(const Sha256& key) const;
  size_t size() const;
  size_t dim() const { return dim_; }
  /// Rewrites the index sidecar. Called on destruction for writable caches.
  void write_index() const;

 private:
  size_t record_size() const { return 32 + dim_ * 4 + 4; }
  void scan_from(uint64_t offset);
  bool load_index();

  std::filesystem::path path_;
  size_t dim_;
  Mode mode_;
  int fd_ = -1;
  uint64_t end_ = 0;
  std::unordered_map<std::string, uint64_t> index_;  // raw key bytes -> offset
  mutable std::shared_mutex mu_;
};

/// Cache hit returns the stored vector without calling the provider.
Embedding get_or_compute(EmbeddingCache* cache, std::string_view text, const Embedder& provider);

}  // namespace toneshift::embed
