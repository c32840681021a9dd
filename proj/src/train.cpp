#include "toneshift/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>
#include <thread>

#include "toneshift/error.hpp"
#include "toneshift/rng.hpp"

namespace toneshift::train {

std::vector<double> bin_edges(size_t bins) {
  std::vector<double> e(bins + 1);
  // (2k - bins) / bins keeps the edges exact decimals for 10 bins.
  for (size_t k = 0; k <= bins; ++k)
    e[k] = (2.0 * static_cast<double>(k) - static_cast<double>(bins)) / static_cast<double>(bins);
  return e;
}

size_t bin_index(double y, size_t bins) {
  if (!(y >= -1.0 && y <= 1.0)) throw InvalidArgument("target " + format_double(y) + " outside [-1, 1]");
  auto edges = bin_edges(bins);
  for (size_t b = 0; b + 1 < bins; ++b)
    if (y < edges[b + 1]) return b;
  return bins - 1;
}

json BinWeights::to_json() const { return {{"edges", edges}, {"counts", counts}, {"weights", weights}}; }

BinWeights BinWeights::from_json(const json& j) {
  BinWeights b;
  j.at("edges").get_to(b.edges);
  j.at("counts").get_to(b.counts);
  j.at("weights").get_to(b.weights);
  if (b.edges.size() != b.counts.size() + 1 || b.weights.size() != b.counts.size())
    throw InvalidArgument("inconsistent bin weight table");
  return b;
}

BinWeights compute_bin_weights(std::span<const double> targets, size_t bins) {
  if (targets.empty()) throw EmptyTrainingSet("no training targets to compute bin weights from");
  if (bins == 0) throw InvalidArgument("need at least one bin");
  BinWeights b;
  b.edges = bin_edges(bins);
  b.counts.assign(bins, 0);
  for (double y : targets) ++b.counts[bin_index(y, bins)];
  // w_b = N / (K * max(c_b, 1)) with K occupied bins: sum c_b w_b = N.
  size_t occupied = std::count_if(b.counts.begin(), b.counts.end(), [](size_t c) { return c > 0; });
  const double n = static_cast<double>(targets.size());
  b.weights.resize(bins);
  for (size_t k = 0; k < bins; ++k)
    b.weights[k] = n / (static_cast<double>(occupied) * static_cast<double>(std::max<size_t>(b.counts[k], 1)));
  return b;
}

BinWeights uniform_bin_weights(size_t bins) {
  BinWeights b;
  b.edges = bin_edges(bins);
  b.counts.assign(bins, 0);
  b.weights.assign(bins, 1.0);
  return b;
}

namespace {

void check_lengths(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw LengthMismatch(std::to_string(a.size()) + " predictions for " + std::to_string(b.size()) + " targets");
  if (a.empty()) throw LengthMismatch("no predictions to score");
}

}  // namespace

double weighted_l1(std::span<const double> pred, std::span<const double> target, const BinWeights& bw) {
  check_lengths(pred, target);
  double s = 0;
  for (size_t i = 0; i < pred.size(); ++i) s += bw.weight_of(target[i]) * std::abs(pred[i] - target[i]);
  return s / static_cast<double>(pred.size());
}

double l1(std::span<const double> pred, std::span<const double> target) {
  check_lengths(pred, target);
  double s = 0;
  for (size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - target[i]);
  return s / static_cast<double>(pred.size());
}

double mse(std::span<const double> pred, std::span<const double> target) {
  check_lengths(pred, target);
  double s = 0;
  for (size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
  return s / static_cast<double>(pred.size());
}

std::string to_string(Loss loss) {
  switch (loss) {
    case Loss::weighted_l1: return "weighted_l1";
    case Loss::l1: return "l1";
    case Loss::mse: return "mse";
  }
  return "?";
}

Loss parse_loss(const std::string& name) {
  if (name == "weighted_l1") return Loss::weighted_l1;
  if (name == "l1") return Loss::l1;
  if (name == "mse") return Loss::mse;
  throw InvalidArgument("unknown loss '" + name + "' (weighted_l1, l1, mse)");
}

double LossFunction::value(std::span<const double> pred, std::span<const double> target) const {
  switch (kind_) {
    case Loss::weighted_l1: return weighted_l1(pred, target, weights_);
    case Loss::l1: return l1(pred, target);
    case Loss::mse: return mse(pred, target);
  }
  return 0;
}

double LossFunction::derivative(double pred, double target, size_t n) const {
  const double inv = 1.0 / static_cast<double>(n);
  double diff = pred - target;
  double sign = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
  switch (kind_) {
    case Loss::weighted_l1: return weights_.weight_of(target) * sign * inv;
    case Loss::l1: return sign * inv;
    case Loss::mse: return 2.0 * diff * inv;
  }
  return 0;
}

// ---------------------------------------------------------------------------

std::string to_string(Part part) {
  switch (part) {
    case Part::train: return "train";
    case Part::val: return "val";
    case Part::test: return "test";
  }
  return "?";
}

std::vector<std::string> SplitSpec::ids(Part part) const {
  std::vector<std::string> out;
  for (const auto& [id, p] : assignment)
    if (p == part) out.push_back(id);
  return out;
}

json SplitSpec::to_json() const {
  json a = json::object();
  for (const auto& [id, p] : assignment) a[id] = to_string(p);
  return {{"ratios", ratios}, {"seed", seed}, {"bins", bins}, {"assignment", a}};
}

SplitSpec SplitSpec::from_json(const json& j) {
  SplitSpec s;
  j.at("ratios").get_to(s.ratios);
  s.seed = j.at("seed").get<uint64_t>();
  s.bins = j.value("bins", kDefaultBins);
  for (const auto& [id, p] : j.at("assignment").items()) {
    std::string v = p.get<std::string>();
    if (v == "train") s.assignment[id] = Part::train;
    else if (v == "val") s.assignment[id] = Part::val;
    else if (v == "test") s.assignment[id] = Part::test;
    else throw InvalidArgument("bad split part " + v);
  }
  return s;
}

std::array<size_t, 3> apportion(size_t count, std::array<double, 3> ratios) {
  double total = ratios[0] + ratios[1] + ratios[2];
  if (!(total > 0) || std::any_of(ratios.begin(), ratios.end(), [](double r) { return r < 0; }))
    throw InvalidArgument("split ratios must be nonnegative with a positive sum");
  std::array<size_t, 3> out{};
  std::array<double, 3> rem{};
  size_t assigned = 0;
  for (size_t k = 0; k < 3; ++k) {
    double quota = static_cast<double>(count) * ratios[k] / total;
    double fl = std::floor(quota + 1e-9);
    out[k] = static_cast<size_t>(fl);
    rem[k] = quota - fl;
    assigned += out[k];
  }
  std::array<size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return rem[a] > rem[b] + 1e-12; });
  for (size_t i = 0; assigned < count; i = (i + 1) % 3, ++assigned) ++out[order[i]];
  return out;
}

SplitSpec stratified_split(std::span<const std::string> ids, std::span<const double> targets,
                           std::array<double, 3> ratios, uint64_t seed, size_t bins) {
  if (ids.empty()) throw InvalidArgument("cannot split an empty dataset");
  if (ids.size() != targets.size()) throw LengthMismatch("ids and targets differ in length");
  SplitSpec spec;
  spec.ratios = ratios;
  spec.seed = seed;
  spec.bins = bins;
  std::vector<std::vector<std::string>> members(bins);
  for (size_t i = 0; i < ids.size(); ++i) members[bin_index(targets[i], bins)].push_back(ids[i]);
  Rng rng(seed);
  for (size_t b = 0; b < bins; ++b) {
    auto& m = members[b];
    std::sort(m.begin(), m.end());
    if (std::adjacent_find(m.begin(), m.end()) != m.end()) throw InvalidArgument("duplicate id in split input");
    Rng bin_rng = rng.fork(b);
    bin_rng.shuffle(std::span<std::string>(m));
    auto sizes = apportion(m.size(), ratios);
    size_t i = 0;
    for (size_t part = 0; part < 3; ++part)
      for (size_t k = 0; k < sizes[part]; ++k) spec.assignment[m[i++]] = static_cast<Part>(part);
  }
  if (spec.assignment.size() != ids.size()) throw InvalidArgument("duplicate id in split input");
  return spec;
}

// ---------------------------------------------------------------------------

json AdamConfig::to_json() const {
  return {{"lr", lr}, {"beta1", beta1}, {"beta2", beta2}, {"eps", eps}};
}

Adam::Adam(size_t n, AdamConfig config) : c_(config), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::vector<double>& params, const std::vector<double>& grad) {
  ++t_;
  const double bc1 = 1.0 - std::pow(c_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(c_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    m_[i] = c_.beta1 * m_[i] + (1.0 - c_.beta1) * grad[i];
    v_[i] = c_.beta2 * v_[i] + (1.0 - c_.beta2) * grad[i] * grad[i];
    double mh = m_[i] / bc1;
    double vh = v_[i] / bc2;
    params[i] -= c_.lr * mh / (std::sqrt(vh) + c_.eps);
  }
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw InvalidArgument("batch_size must be positive");
  if (max_epochs == 0) throw InvalidArgument("max_epochs must be positive");
  if (patience == 0) throw InvalidArgument("patience must be positive");
  if (!(adam.lr > 0)) throw InvalidArgument("learning rate must be positive");
}

json TrainConfig::to_json() const {
  return {{"batch_size", batch_size}, {"max_epochs", max_epochs}, {"patience", patience},
          {"optimizer", "adam"},      {"adam", adam.to_json()},   {"loss", to_string(loss)},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  if (j.contains("adam")) {
    const auto& a = j["adam"];
    c.adam.lr = a.value("lr", c.adam.lr);
    c.adam.beta1 = a.value("beta1", c.adam.beta1);
    c.adam.beta2 = a.value("beta2", c.adam.beta2);
    c.adam.eps = a.value("eps", c.adam.eps);
  }
  if (j.contains("loss")) c.loss = parse_loss(j["loss"].get<std::string>());
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

bool EarlyStopping::update(size_t epoch, double val_loss) {
  improved_ = !has_best_ || val_loss < best_loss_;
  if (improved_) {
    has_best_ = true;
    best_loss_ = val_loss;
    best_epoch_ = epoch;
    bad_epochs_ = 0;
    return false;
  }
  return ++bad_epochs_ >= patience_;
}

json EpochRecord::to_json() const {
  return {{"epoch", epoch}, {"train_loss", train_loss}, {"val_loss", val_loss}, {"improved", improved}};
}

json FitResult::history_json() const {
  json h = json::array();
  for (const auto& r : history) h.push_back(r.to_json());
  return {{"history", h}, {"best_epoch", best_epoch}, {"best_val_loss", best_val_loss},
          {"stopped_early", stopped_early}};
}

std::vector<double> predict(const model::Params& params, std::span<const model::FeatureSequence> data) {
  model::Regressor reg(params.config());
  std::vector<double> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back(reg.forward(params, s));
  return out;
}

double evaluate_loss(const model::Params& params, std::span<const model::FeatureSequence> data,
                     const LossFunction& loss) {
  auto pred = predict(params, data);
  std::vector<double> y;
  y.reserve(data.size());
  for (const auto& s : data) y.push_back(s.target);
  return loss.value(pred, y);
}

FitResult fit(const model::ModelConfig& model_config, const TrainConfig& config,
              std::span<const model::FeatureSequence> train, std::span<const model::FeatureSequence> val,
              const BinWeights& weights, const FitHooks& hooks) {
  config.validate();
  if (train.empty()) throw EmptyTrainingSet("training split is empty");
  if (val.empty()) throw EmptyTrainingSet("validation split is empty");
  LossFunction loss(config.loss, weights);

  Rng root(config.seed);
  Rng init_rng = root.fork(1), order_rng = root.fork(2), dropout_rng = root.fork(3);
  model::Params params(model_config);
  params.init_uniform(init_rng);
  Adam adam(params.values().size(), config.adam);

  FitResult result{params, {}, 0, 0, false};
  EarlyStopping stopper(config.patience);
  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad;
  std::vector<const model::FeatureSequence*> batch;

  for (size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    order_rng.shuffle(std::span<size_t>(order));
    double total = 0;
    try {
      for (size_t start = 0; start < order.size(); start += config.batch_size) {
        size_t end = std::min(order.size(), start + config.batch_size);
        batch.clear();
        for (size_t i = start; i < end; ++i) batch.push_back(&train[order[i]]);
        const size_t n = batch.size();
        double batch_loss = 0;
        model::batch_gradient(
            params, batch,
            [&](size_t i, double pred) {
              double t = batch[i]->target;
              std::array<double, 1> p{pred}, y{t};
              batch_loss += loss.value(p, y);
              return loss.derivative(pred, t, n);
            },
            grad, model::Mode::train, &dropout_rng);
        if (!std::isfinite(batch_loss))
          throw DivergedLoss("training loss is not finite in epoch " + std::to_string(epoch));
        total += batch_loss;
        adam.step(params.values(), grad);
      }
    } catch (const NonFiniteActivation& e) {
      throw DivergedLoss("training diverged in epoch " + std::to_string(epoch) + ": " + e.what());
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = total / static_cast<double>(train.size());
    try {
      rec.val_loss = evaluate_loss(params, val, loss);
    } catch (const NonFiniteActivation& e) {
      throw DivergedLoss("validation diverged in epoch " + std::to_string(epoch) + ": " + e.what());
    }
    if (hooks.val_loss_override) rec.val_loss = hooks.val_loss_override(epoch, rec.val_loss);
    if (!std::isfinite(rec.val_loss) || !std::isfinite(rec.train_loss))
      throw DivergedLoss("loss is not finite in epoch " + std::to_string(epoch));
    bool stop = stopper.update(epoch, rec.val_loss);
    rec.improved = stopper.improved();
    if (rec.improved) {
      result.params = params;
      result.best_epoch = epoch;
      result.best_val_loss = rec.val_loss;
    }
    result.history.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
    if (stop) {
      result.stopped_early = true;
      break;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------

std::vector<model::ModelConfig> GridSpec::enumerate(size_t embed_dim) const {
  std::vector<model::ModelConfig> out;
  for (size_t o : fc_out)
    for (bool bi : bidirectional)
      for (size_t layers : num_layers) {
        std::vector<double> drops = layers == 1 ? std::vector<double>{0.0} : dropout;
        for (double p : drops) {
          model::ModelConfig c;
          c.fc_out = o;
          c.bidirectional = bi;
          c.num_layers = layers;
          c.dropout = p;
          c.embed_dim = embed_dim;
          c.validate();
          out.push_back(c);
        }
      }
  return out;
}

json GridSpec::to_json() const {
  return {{"fc_out", fc_out}, {"bidirectional", bidirectional}, {"num_layers", num_layers}, {"dropout", dropout}};
}

GridSpec GridSpec::from_json(const json& j) {
  GridSpec g;
  if (j.contains("fc_out")) j["fc_out"].get_to(g.fc_out);
  if (j.contains("bidirectional")) j["bidirectional"].get_to(g.bidirectional);
  if (j.contains("num_layers")) j["num_layers"].get_to(g.num_layers);
  if (j.contains("dropout")) j["dropout"].get_to(g.dropout);
  return g;
}

json LeaderboardEntry::to_json() const {
  return {{"config", config.to_json()}, {"key", config.key()},     {"best_val_loss", best_val_loss},
          {"best_epoch", best_epoch},   {"epochs_run", epochs_run}};
}

json GridResult::to_json() const {
  json rows = json::array();
  for (const auto& e : leaderboard) rows.push_back(e.to_json());
  return {{"best", best.to_json()}, {"best_key", best.key()}, {"leaderboard", rows}};
}

GridResult grid_search(const std::vector<model::ModelConfig>& grid, const Trainer& trainer, size_t workers) {
  if (grid.empty()) throw InvalidArgument("grid is empty");
  std::vector<std::optional<LeaderboardEntry>> slots(grid.size());
  std::atomic<size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr error;
  auto work = [&] {
    for (size_t i; (i = next++) < grid.size();) {
      try {
        slots[i] = trainer(grid[i]);
        slots[i]->config = grid[i];
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  workers = std::max<size_t>(1, std::min(workers, grid.size()));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);

  GridResult r;
  for (auto& s : slots) r.leaderboard.push_back(std::move(*s));
  std::sort(r.leaderboard.begin(), r.leaderboard.end(), [](const LeaderboardEntry& a, const LeaderboardEntry& b) {
    if (a.best_val_loss != b.best_val_loss) return a.best_val_loss < b.best_val_loss;
    return a.config.key() < b.config.key();
  });
  r.best = r.leaderboard.front().config;
  return r;
}

}  // namespace toneshift::train
