#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include "toneshift/embed.hpp"
#include "toneshift/io.hpp"
#include "toneshift/regressor.hpp"
#include "toneshift/tone.hpp"

namespace toneshift::serve {

struct RequestMessage {
  std::string text;
  std::string author;
  int64_t created_utc = 0;
};

struct Draft {
  std::string text;
  bool as_post_author = false;
};

/// The first message is the post.
struct PredictRequest {
  std::vector<RequestMessage> messages;
  std::string post_author;
  std::optional<Draft> draft;

  /// Throws EmptyRequest when there are no messages, MalformedRecord for
  /// fields of the wrong type.
  static PredictRequest from_json(const json& j);
  json to_json() const;
};

struct PredictResponse {
  double predicted_emt = 0;  // clamped to [-1, 1]
  std::vector<double> per_message_emt;
  std::string model_id;
  double latency_ms = 0;
  bool truncated = false;

  json to_json() const;
  static PredictResponse from_json(const json& j);
};

class PredictionService {
 public:
  PredictionService(std::shared_ptr<const tone::VaderScorer> scorer, std::shared_ptr<const embed::Embedder> provider,
                    embed::EmbeddingCache* cache = nullptr);

  /// Throws CheckpointInvalid, or ProviderMismatch when the checkpoint was
  /// trained on another embedding provider. A lexicon checksum that differs
  /// from the one recorded at training time leaves the service degraded.
  void load(const std::filesystem::path& checkpoint);
  void load(model::Checkpoint checkpoint);
  bool loaded() const;

  /// Throws ModelNotLoaded, EmptyRequest.
  PredictResponse predict(const PredictRequest& request) const;
  json health() const;

 private:
  std::shared_ptr<const tone::VaderScorer> scorer_;
  std::shared_ptr<const embed::Embedder> provider_;
  embed::EmbeddingCache* cache_;
  std::shared_ptr<const model::Checkpoint> model_;
  std::vector<std::string> load_reasons_;
  mutable std::shared_mutex mu_;
  std::chrono::steady_clock::time_point started_;
};

/// HTTP front end: POST /v1/predict, GET /v1/health.
class Server {
 public:
  explicit Server(std::shared_ptr<PredictionService> service);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds and serves on a background thread. Port 0 picks a free port.
  /// Returns the bound port; throws IoFailure when binding fails.
  int start(const std::string& host, int port);
  /// Serves on the calling thread until stop().
  void listen(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace toneshift::serve
