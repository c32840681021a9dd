#include "toneshift/regressor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>

#include <Eigen/Dense>

#include "toneshift/digest.hpp"
#include "toneshift/error.hpp"

namespace toneshift::model {

namespace {

using Eigen::Dynamic;
using MatrixR = Eigen::Matrix<double, Dynamic, Dynamic, Eigen::RowMajor>;
using CMapR = Eigen::Map<const MatrixR>;
using MapR = Eigen::Map<MatrixR>;
using CMapV = Eigen::Map<const Eigen::VectorXd>;
using MapV = Eigen::Map<Eigen::VectorXd>;

constexpr char kCheckpointMagic[8] = {'T', 'S', 'C', 'K', 'P', 'T', '0', '1'};

std::string gru_suffix(size_t layer, size_t dir) {
  return "_l" + std::to_string(layer) + (dir == 1 ? "_reverse" : "");
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Views {
  const double* base;
  const ParamLayout& layout;
  CMapR mat(const std::string& name) const {
    const auto& t = layout.find(name);
    return CMapR(base + t.offset, static_cast<Eigen::Index>(t.shape[0]),
                 static_cast<Eigen::Index>(t.shape.size() > 1 ? t.shape[1] : 1));
  }
  CMapV vec(const std::string& name) const {
    const auto& t = layout.find(name);
    return CMapV(base + t.offset, static_cast<Eigen::Index>(t.size));
  }
};

struct GradViews {
  double* base;
  const ParamLayout& layout;
  MapR mat(const std::string& name) const {
    const auto& t = layout.find(name);
    return MapR(base + t.offset, static_cast<Eigen::Index>(t.shape[0]),
                static_cast<Eigen::Index>(t.shape.size() > 1 ? t.shape[1] : 1));
  }
  MapV vec(const std::string& name) const {
    const auto& t = layout.find(name);
    return MapV(base + t.offset, static_cast<Eigen::Index>(t.size));
  }
};

}  // namespace

// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  if (fc_out == 0 || (fc_out + 2) % 2 != 0)
    throw InvalidArgument("fc_out must be positive and even so that (o+2)/2 is exact");
  if (num_layers == 0) throw InvalidArgument("num_layers must be at least 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("dropout must be in [0, 1)");
  if (num_layers == 1 && dropout != 0.0)
    throw InvalidArgument("dropout is only applied between stacked layers");
  if (seq_cap == 0) throw InvalidArgument("seq_cap must be positive");
  if (embed_dim == 0) throw InvalidArgument("embed_dim must be positive");
}

std::string ModelConfig::key() const {
  std::ostringstream os;
  os << 'o' << fc_out << "-l" << num_layers << '-' << (bidirectional ? "bi" : "uni") << "-p"
     << format_double(dropout);
  return os.str();
}

json ModelConfig::to_json() const {
  return {{"fc_out", fc_out},       {"num_layers", num_layers}, {"bidirectional", bidirectional},
          {"dropout", dropout},     {"seq_cap", seq_cap},       {"embed_dim", embed_dim},
          {"input_dim", input_dim()}, {"hidden_dim", hidden_dim()}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  try {
    c.fc_out = j.at("fc_out").get<size_t>();
    c.num_layers = j.at("num_layers").get<size_t>();
    c.bidirectional = j.at("bidirectional").get<bool>();
    c.dropout = j.value("dropout", 0.0);
    c.seq_cap = j.value("seq_cap", size_t{64});
    c.embed_dim = j.value("embed_dim", size_t{768});
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

ParamLayout::ParamLayout(const ModelConfig& c) {
  c.validate();
  const size_t o = c.fc_out, h = c.hidden_dim(), e = c.embed_dim;
  add("fc1.weight", {o, e});
  add("fc1.bias", {o});
  tensors_.back().fan_in = e;
  for (size_t l = 0; l < c.num_layers; ++l) {
    size_t in = l == 0 ? c.input_dim() : h * c.directions();
    for (size_t d = 0; d < c.directions(); ++d) {
      std::string s = gru_suffix(l, d);
      add("gru.weight_ih" + s, {3 * h, in});
      add("gru.weight_hh" + s, {3 * h, h});
      add("gru.bias_ih" + s, {3 * h});
      tensors_.back().fan_in = in;
      add("gru.bias_hh" + s, {3 * h});
      tensors_.back().fan_in = h;
    }
  }
  add("fc2.weight", {1, h * c.directions()});
  add("fc2.bias", {1});
  tensors_.back().fan_in = h * c.directions();
}

void ParamLayout::add(std::string name, std::vector<size_t> shape) {
  TensorSpec t;
  t.name = std::move(name);
  t.size = 1;
  for (size_t s : shape) t.size *= s;
  t.fan_in = shape.size() > 1 ? shape[1] : 1;
  t.shape = std::move(shape);
  t.offset = total_;
  total_ += t.size;
  tensors_.push_back(std::move(t));
}

const TensorSpec& ParamLayout::find(const std::string& name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return t;
  throw InvalidArgument("no parameter tensor named " + name);
}

Params::Params(const ModelConfig& config)
    : config_(config), layout_(config), values_(layout_.total(), 0.0) {}

void Params::init_uniform(Rng& rng) {
  for (const auto& t : layout_.tensors()) {
    double bound = 1.0 / std::sqrt(static_cast<double>(t.fan_in));
    for (size_t i = 0; i < t.size; ++i) values_[t.offset + i] = rng.uniform(-bound, bound);
  }
}

void Params::set_zero() { std::fill(values_.begin(), values_.end(), 0.0); }

std::span<double> Params::tensor(const std::string& name) {
  const auto& t = layout_.find(name);
  return {values_.data() + t.offset, t.size};
}

std::span<const double> Params::tensor(const std::string& name) const {
  const auto& t = layout_.find(name);
  return {values_.data() + t.offset, t.size};
}

void FeatureSequence::push(std::span<const float> e, double tone, bool author) {
  if (e.size() != embed_dim)
    throw DimensionMismatch("embedding has " + std::to_string(e.size()) + " values, expected " +
                            std::to_string(embed_dim));
  embeddings.resize((length + 1) * embed_dim, 0.0f);
  std::copy(e.begin(), e.end(), embeddings.begin() + static_cast<std::ptrdiff_t>(length * embed_dim));
  emt.resize(length + 1, 0.0);
  is_author.resize(length + 1, 0.0);
  emt[length] = tone;
  is_author[length] = author ? 1.0 : 0.0;
  ++length;
}

std::vector<double> build_input(const Params& params, std::span<const float> embedding, double emt,
                                bool is_author) {
  const auto& c = params.config();
  if (embedding.size() != c.embed_dim)
    throw DimensionMismatch("embedding has " + std::to_string(embedding.size()) +
                            " values, expected " + std::to_string(c.embed_dim));
  Views v{params.values().data(), params.layout()};
  Eigen::VectorXd e = Eigen::Map<const Eigen::VectorXf>(embedding.data(),
                                                        static_cast<Eigen::Index>(embedding.size()))
                          .cast<double>();
  Eigen::VectorXd proj = v.mat("fc1.weight") * e + v.vec("fc1.bias");
  std::vector<double> x(proj.data(), proj.data() + proj.size());
  x.push_back(emt);
  x.push_back(is_author ? 1.0 : 0.0);
  return x;
}

// ---------------------------------------------------------------------------

struct DirTrace {
  MatrixR h_prev, r, z, n, g;  // L x H, indexed by time step
};

struct LayerTrace {
  MatrixR input;  // L x in, after dropout
  MatrixR mask;   // empty when no dropout was applied
  MatrixR output; // L x D*H
  std::vector<DirTrace> dirs;
};

struct Trace {
  size_t length = 0;
  MatrixR embed;  // L x E
  std::vector<LayerTrace> layers;
  Eigen::VectorXd readout;
  bool valid = false;
};

Regressor::Regressor(const ModelConfig& config) : config_(config), trace_(std::make_unique<Trace>()) {
  config_.validate();
}
Regressor::~Regressor() = default;
Regressor::Regressor(Regressor&&) noexcept = default;
Regressor& Regressor::operator=(Regressor&&) noexcept = default;

namespace {

void check_finite(const MatrixR& m, const char* what, size_t layer) {
  if (!m.allFinite()) {
    for (Eigen::Index t = 0; t < m.rows(); ++t)
      if (!m.row(t).allFinite())
        throw NonFiniteActivation(std::string(what) + " is not finite at layer " + std::to_string(layer) +
                                  ", step " + std::to_string(t));
  }
}

}  // namespace

double Regressor::forward(const Params& params, const FeatureSequence& seq, Mode mode, Rng* rng) {
  const auto& c = config_;
  if (!(params.config() == c)) throw InvalidArgument("parameters belong to a different model config");
  if (seq.embed_dim != c.embed_dim)
    throw DimensionMismatch("sequence embeddings have " + std::to_string(seq.embed_dim) +
                            " values, expected " + std::to_string(c.embed_dim));
  const size_t L = seq.length;
  if (L == 0) throw InvalidArgument("sequence " + seq.id + " is empty");
  if (L > c.seq_cap)
    throw InvalidArgument("sequence " + seq.id + " is longer than " + std::to_string(c.seq_cap));
  if (seq.embeddings.size() < L * c.embed_dim || seq.emt.size() < L || seq.is_author.size() < L)
    throw DimensionMismatch("sequence " + seq.id + " has fewer feature rows than its length");
  const bool train = mode == Mode::train && c.dropout > 0.0;
  if (train && rng == nullptr) throw InvalidArgument("training mode with dropout needs an Rng");

  Views v{params.values().data(), params.layout()};
  Trace& t = *trace_;
  t.valid = false;
  t.length = L;
  const auto Li = static_cast<Eigen::Index>(L);
  const auto o = static_cast<Eigen::Index>(c.fc_out);
  const auto H = static_cast<Eigen::Index>(c.hidden_dim());
  const auto D = static_cast<Eigen::Index>(c.directions());

  t.embed = Eigen::Map<const Eigen::Matrix<float, Dynamic, Dynamic, Eigen::RowMajor>>(
                seq.embeddings.data(), Li, static_cast<Eigen::Index>(c.embed_dim))
                .cast<double>();
  MatrixR x(Li, o + 2);
  x.leftCols(o) = t.embed * v.mat("fc1.weight").transpose();
  x.leftCols(o).rowwise() += v.vec("fc1.bias").transpose();
  for (Eigen::Index i = 0; i < Li; ++i) {
    x(i, o) = seq.emt[static_cast<size_t>(i)];
    x(i, o + 1) = seq.is_author[static_cast<size_t>(i)];
  }
  check_finite(x, "input projection", 0);

  t.layers.resize(c.num_layers);
  MatrixR in = std::move(x);
  for (size_t l = 0; l < c.num_layers; ++l) {
    LayerTrace& lt = t.layers[l];
    lt.mask.resize(0, 0);
    if (l > 0 && train) {
      const double keep = 1.0 - c.dropout;
      lt.mask.resize(in.rows(), in.cols());
      for (Eigen::Index i = 0; i < in.rows(); ++i)
        for (Eigen::Index j = 0; j < in.cols(); ++j) lt.mask(i, j) = rng->bernoulli(keep) ? 1.0 / keep : 0.0;
      in = in.cwiseProduct(lt.mask);
    }
    lt.input = std::move(in);
    lt.output.setZero(Li, D * H);
    lt.dirs.resize(static_cast<size_t>(D));
    for (Eigen::Index d = 0; d < D; ++d) {
      std::string s = gru_suffix(l, static_cast<size_t>(d));
      auto Wih = v.mat("gru.weight_ih" + s);
      auto Whh = v.mat("gru.weight_hh" + s);
      auto bih = v.vec("gru.bias_ih" + s);
      auto bhh = v.vec("gru.bias_hh" + s);
      DirTrace& dt = lt.dirs[static_cast<size_t>(d)];
      dt.h_prev.resize(Li, H);
      dt.r.resize(Li, H);
      dt.z.resize(Li, H);
      dt.n.resize(Li, H);
      dt.g.resize(Li, H);
      Eigen::VectorXd h = Eigen::VectorXd::Zero(H);
      for (Eigen::Index s_ = 0; s_ < Li; ++s_) {
        Eigen::Index step = d == 0 ? s_ : Li - 1 - s_;
        Eigen::VectorXd ai = Wih * lt.input.row(step).transpose() + bih;
        Eigen::VectorXd ah = Whh * h + bhh;
        for (Eigen::Index k = 0; k < H; ++k) {
          double r = sigmoid(ai(k) + ah(k));
          double z = sigmoid(ai(H + k) + ah(H + k));
          double g = ah(2 * H + k);
          double n = std::tanh(ai(2 * H + k) + r * g);
          dt.h_prev(step, k) = h(k);
          dt.r(step, k) = r;
          dt.z(step, k) = z;
          dt.n(step, k) = n;
          dt.g(step, k) = g;
          lt.output(step, d * H + k) = (1.0 - z) * n + z * h(k);
        }
        h = lt.output.row(step).segment(d * H, H).transpose();
      }
    }
    check_finite(lt.output, "GRU hidden state", l);
    in = lt.output;
  }

  const MatrixR& top = t.layers.back().output;
  t.readout.resize(D * H);
  t.readout.head(H) = top.row(Li - 1).head(H).transpose();
  if (D == 2) t.readout.tail(H) = top.row(0).segment(H, H).transpose();
  double y = v.mat("fc2.weight").row(0).dot(t.readout) + v.vec("fc2.bias")(0);
  if (!std::isfinite(y)) throw NonFiniteActivation("prediction for " + seq.id + " is not finite");
  t.valid = true;
  return y;
}

std::vector<double> Regressor::forward_batch(const Params& params,
                                             std::span<const FeatureSequence* const> batch, Mode mode,
                                             Rng* rng) {
  std::vector<double> out;
  out.reserve(batch.size());
  for (const auto* s : batch) out.push_back(forward(params, *s, mode, rng));
  return out;
}

void Regressor::backward(const Params& params, double upstream, std::vector<double>& grad) {
  Trace& t = *trace_;
  if (!t.valid) throw InvalidArgument("backward called without a cached forward pass");
  if (grad.size() != params.values().size()) grad.assign(params.values().size(), 0.0);
  const auto& c = config_;
  Views v{params.values().data(), params.layout()};
  GradViews gv{grad.data(), params.layout()};
  const auto Li = static_cast<Eigen::Index>(t.length);
  const auto o = static_cast<Eigen::Index>(c.fc_out);
  const auto H = static_cast<Eigen::Index>(c.hidden_dim());
  const auto D = static_cast<Eigen::Index>(c.directions());

  gv.mat("fc2.weight").row(0) += upstream * t.readout.transpose();
  gv.vec("fc2.bias")(0) += upstream;
  auto w2 = v.mat("fc2.weight").row(0);

  MatrixR d_out = MatrixR::Zero(Li, D * H);
  d_out.row(Li - 1).head(H) += upstream * w2.head(H);
  if (D == 2) d_out.row(0).segment(H, H) += upstream * w2.segment(H, H);

  MatrixR d_in;
  for (size_t l = c.num_layers; l-- > 0;) {
    const LayerTrace& lt = t.layers[l];
    d_in.setZero(Li, lt.input.cols());
    for (Eigen::Index d = 0; d < D; ++d) {
      std::string s = gru_suffix(l, static_cast<size_t>(d));
      auto Wih = v.mat("gru.weight_ih" + s);
      auto Whh = v.mat("gru.weight_hh" + s);
      auto dWih = gv.mat("gru.weight_ih" + s);
      auto dWhh = gv.mat("gru.weight_hh" + s);
      auto dbih = gv.vec("gru.bias_ih" + s);
      auto dbhh = gv.vec("gru.bias_hh" + s);
      const DirTrace& dt = lt.dirs[static_cast<size_t>(d)];
      Eigen::VectorXd dh = Eigen::VectorXd::Zero(H);
      Eigen::VectorXd dai(3 * H), dah(3 * H);
      for (Eigen::Index s_ = Li; s_-- > 0;) {
        Eigen::Index step = d == 0 ? s_ : Li - 1 - s_;
        dh += d_out.row(step).segment(d * H, H).transpose();
        Eigen::VectorXd dh_prev(H);
        for (Eigen::Index k = 0; k < H; ++k) {
          double r = dt.r(step, k), z = dt.z(step, k), n = dt.n(step, k), g = dt.g(step, k);
          double hp = dt.h_prev(step, k);
          double dn = dh(k) * (1.0 - z);
          double dz = dh(k) * (hp - n);
          double dan = dn * (1.0 - n * n);
          double dr = dan * g;
          double dar = dr * r * (1.0 - r);
          double daz = dz * z * (1.0 - z);
          dai(k) = dar;
          dai(H + k) = daz;
          dai(2 * H + k) = dan;
          dah(k) = dar;
          dah(H + k) = daz;
          dah(2 * H + k) = dan * r;
          dh_prev(k) = dh(k) * z;
        }
        dWih.noalias() += dai * lt.input.row(step);
        dbih += dai;
        dWhh.noalias() += dah * dt.h_prev.row(step);
        dbhh += dah;
        d_in.row(step).noalias() += (Wih.transpose() * dai).transpose();
        dh = dh_prev + Whh.transpose() * dah;
      }
    }
    if (lt.mask.size() > 0) d_in = d_in.cwiseProduct(lt.mask);
    if (l > 0) d_out = d_in;
  }

  MatrixR d_proj = d_in.leftCols(o);
  gv.mat("fc1.weight").noalias() += d_proj.transpose() * t.embed;
  gv.vec("fc1.bias") += d_proj.colwise().sum().transpose();
}

std::vector<double> batch_gradient(const Params& params, std::span<const FeatureSequence* const> batch,
                                   const UpstreamFn& upstream, std::vector<double>& grad, Mode mode,
                                   Rng* rng) {
  grad.assign(params.values().size(), 0.0);
  Regressor reg(params.config());
  std::vector<double> preds;
  preds.reserve(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) {
    double y = reg.forward(params, *batch[i], mode, rng);
    preds.push_back(y);
    double u = upstream(i, y);
    if (u != 0.0) reg.backward(params, u, grad);
  }
  return preds;
}

// ---------------------------------------------------------------------------

namespace {

std::string payload_of(const Params& params) {
  std::string out(params.values().size() * 4, '\0');
  for (size_t i = 0; i < params.values().size(); ++i) {
    float f = static_cast<float>(params.values()[i]);
    std::memcpy(out.data() + i * 4, &f, 4);
  }
  return out;
}

std::string id_from_payload(const ModelConfig& c, const std::string& payload) {
  Sha256Builder b;
  b.update(c.key());
  b.update(std::string_view("\0", 1));
  b.update(payload);
  auto d = b.finish();
  return "m-" + to_hex(d).substr(0, 16);
}

}  // namespace

Params quantize_float32(const Params& params) {
  Params q = params;
  for (double& x : q.values()) x = static_cast<double>(static_cast<float>(x));
  return q;
}

std::string model_id_of(const Params& params) {
  return id_from_payload(params.config(), payload_of(params));
}

void save_checkpoint(const std::filesystem::path& path, const Params& params, const json& metadata) {
  static_assert(std::endian::native == std::endian::little);
  json header;
  header["format"] = "toneshift-checkpoint";
  header["format_version"] = 1;
  header["endianness"] = "little";
  header["dtype"] = "float32";
  header["config"] = params.config().to_json();
  header["param_count"] = params.values().size();
  json tensors = json::array();
  for (const auto& t : params.layout().tensors())
    tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", t.offset}});
  header["tensors"] = std::move(tensors);
  header["metadata"] = metadata;
  std::string payload = payload_of(params);
  header["model_id"] = id_from_payload(params.config(), payload);

  std::string h = header.dump();
  std::string out(kCheckpointMagic, 8);
  uint32_t n = static_cast<uint32_t>(h.size());
  out.append(reinterpret_cast<const char*>(&n), 4);
  out += h;
  out += payload;
  write_file_atomic(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::string raw;
  try {
    raw = read_file(path);
  } catch (const Error& e) {
    throw CheckpointInvalid("cannot read checkpoint " + path.string() + ": " + e.what());
  }
  if (raw.size() < 12 || std::memcmp(raw.data(), kCheckpointMagic, 8) != 0)
    throw CheckpointInvalid(path.string() + " is not a checkpoint");
  uint32_t n;
  std::memcpy(&n, raw.data() + 8, 4);
  if (raw.size() < 12 + static_cast<size_t>(n)) throw CheckpointInvalid("truncated checkpoint header");
  json header;
  ModelConfig config;
  try {
    header = json::parse(raw.substr(12, n));
    if (header.at("format_version").get<int>() != 1) throw CheckpointInvalid("unsupported checkpoint version");
    if (header.at("endianness") != "little" || header.at("dtype") != "float32")
      throw CheckpointInvalid("unsupported checkpoint encoding");
    config = ModelConfig::from_json(header.at("config"));
  } catch (const json::exception& e) {
    throw CheckpointInvalid(std::string("bad checkpoint header: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw CheckpointInvalid(std::string("bad checkpoint config: ") + e.what());
  }
  Params params(config);
  const auto& tensors = header.at("tensors");
  if (!tensors.is_array() || tensors.size() != params.layout().tensors().size())
    throw CheckpointInvalid("checkpoint tensor list does not match its config");
  for (size_t i = 0; i < tensors.size(); ++i) {
    const auto& want = params.layout().tensors()[i];
    if (tensors[i].value("name", "") != want.name ||
        tensors[i].value("shape", std::vector<size_t>{}) != want.shape ||
        tensors[i].value("offset", size_t{0}) != want.offset)
      throw CheckpointInvalid("checkpoint tensor " + want.name + " has an unexpected layout");
  }
  std::string payload = raw.substr(12 + n);
  if (payload.size() != params.values().size() * 4)
    throw CheckpointInvalid("checkpoint payload has " + std::to_string(payload.size()) + " bytes, expected " +
                            std::to_string(params.values().size() * 4));
  for (size_t i = 0; i < params.values().size(); ++i) {
    float f;
    std::memcpy(&f, payload.data() + i * 4, 4);
    if (!std::isfinite(f)) throw CheckpointInvalid("checkpoint holds a non-finite parameter");
    params.values()[i] = f;
  }
  std::string id = id_from_payload(config, payload);
  if (header.contains("model_id") && header["model_id"] != id)
    throw CheckpointInvalid("checkpoint payload does not match its model id");
  return Checkpoint{std::move(params), header.value("metadata", json::object()), id};
}

}  // namespace toneshift::model
