#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "toneshift/io.hpp"
#include "toneshift/rng.hpp"

namespace toneshift::model {

struct ModelConfig {
  size_t fc_out = 62;  // o
  size_t num_layers = 2;
  bool bidirectional = false;
  double dropout = 0.0;
  size_t seq_cap = 64;
  size_t embed_dim = 768;

  size_t input_dim() const { return fc_out + 2; }
  size_t hidden_dim() const { return input_dim() / 2; }
  size_t directions() const { return bidirectional ? 2 : 1; }

  /// Throws InvalidArgument for inconsistent settings (odd input size,
  /// dropout with a single layer, ...).
  void validate() const;
  std::string key() const;  // stable identifier, e.g. "o62-l2-uni-d0"
  json to_json() const;
  static ModelConfig from_json(const json& j);
  bool operator==(const ModelConfig&) const = default;
};

struct TensorSpec {
  std::string name;
  std::vector<size_t> shape;
  size_t offset = 0;
  size_t size = 0;
  size_t fan_in = 1;
};

/// Named views into one flat parameter vector, in a fixed order.
class ParamLayout {
 public:
  explicit ParamLayout(const ModelConfig& config);
  const std::vector<TensorSpec>& tensors() const { return tensors_; }
  const TensorSpec& find(const std::string& name) const;
  size_t total() const { return total_; }

 private:
  void add(std::string name, std::vector<size_t> shape);
  std::vector<TensorSpec> tensors_;
  size_t total_ = 0;
};

class Params {
 public:
  explicit Params(const ModelConfig& config);

  /// Uniform in +-1/sqrt(fan_in) per tensor.
  void init_uniform(Rng& rng);
  void set_zero();

  const ModelConfig& config() const { return config_; }
  const ParamLayout& layout() const { return layout_; }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  std::span<double> tensor(const std::string& name);
  std::span<const double> tensor(const std::string& name) const;

 private:
  ModelConfig config_;
  ParamLayout layout_;
  std::vector<double> values_;
};

/// Raw per-message features for one segment. Rows at or beyond `length`
/// are padding and never read.
struct FeatureSequence {
  std::string id;
  size_t embed_dim = 768;
  size_t length = 0;
  std::vector<float> embeddings;  // rows x embed_dim, row-major
  std::vector<double> emt;
  std::vector<double> is_author;
  double target = 0.0;

  std::span<const float> embedding(size_t row) const {
    return {embeddings.data() + row * embed_dim, embed_dim};
  }
  void push(std::span<const float> e, double tone, bool author);
};

/// x_m = [FC(e_m), emt, is_author]. Throws DimensionMismatch.
std::vector<double> build_input(const Params& params, std::span<const float> embedding, double emt,
                                bool is_author);

enum class Mode { eval, train };

/// Cached activations for one sequence.
struct Trace;

class Regressor {
 public:
  explicit Regressor(const ModelConfig& config);
  ~Regressor();
  Regressor(Regressor&&) noexcept;
  Regressor& operator=(Regressor&&) noexcept;

  /// Forward pass. In train mode dropout masks are drawn from `rng`. Throws
  /// NonFiniteActivation.
  double forward(const Params& params, const FeatureSequence& seq, Mode mode = Mode::eval,
                 Rng* rng = nullptr);
  std::vector<double> forward_batch(const Params& params, std::span<const FeatureSequence* const> batch,
                                    Mode mode = Mode::eval, Rng* rng = nullptr);

  /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(y_hat) for the
  /// sequence most recently passed to forward().
  void backward(const Params& params, double upstream, std::vector<double>& grad);

  const ModelConfig& config() const { return config_; }

 private:
  ModelConfig config_;
  std::unique_ptr<Trace> trace_;
};

/// d(loss)/d(y_hat_i) for sample i of a batch, given its prediction.
using UpstreamFn = std::function<double(size_t index, double prediction)>;

/// Forward and backward over a batch, one sample at a time in batch order so
/// the summation order is fixed. Returns predictions; `grad` is overwritten.
std::vector<double> batch_gradient(const Params& params, std::span<const FeatureSequence* const> batch,
                                   const UpstreamFn& upstream, std::vector<double>& grad,
                                   Mode mode = Mode::eval, Rng* rng = nullptr);

// ---------------------------------------------------------------------------
// Checkpoint: "TSCKPT01", u32 header length, JSON header, float32 payload.

struct Checkpoint {
  Params params;
  json metadata;  // seed, bin weights, provider id, ...
  std::string model_id;
};

std::string model_id_of(const Params& params);
void save_checkpoint(const std::filesystem::path& path, const Params& params, const json& metadata);
/// Throws CheckpointInvalid.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Parameters rounded through float32, as a checkpoint stores them.
Params quantize_float32(const Params& params);

}  // namespace toneshift::model
