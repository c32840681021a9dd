#include "toneshift/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include <Eigen/Dense>

#include "toneshift/error.hpp"
#include "toneshift/rng.hpp"

namespace toneshift::eval {

json Metrics::to_json() const { return {{"weighted_l1", weighted_l1}, {"l1", l1}, {"mse", mse}}; }

Metrics Metrics::from_json(const json& j) {
  return {j.at("weighted_l1").get<double>(), j.at("l1").get<double>(), j.at("mse").get<double>()};
}

Metrics metrics(std::span<const double> pred, std::span<const double> target, const train::BinWeights& bw) {
  return {train::weighted_l1(pred, target, bw), train::l1(pred, target), train::mse(pred, target)};
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw InvalidArgument("percentile of an empty set");
  if (!(q >= 0 && q <= 100)) throw InvalidArgument("percentile rank must be in [0, 100]");
  std::sort(values.begin(), values.end());
  double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  auto lo = static_cast<size_t>(std::floor(pos));
  size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (values[hi] - values[lo]) * (pos - static_cast<double>(lo));
}

json PredictionRow::to_json() const {
  json j{{"segment_id", segment_id}, {"subreddit", subreddit}, {"target", target},
         {"messages", messages},     {"predictions", predictions}};
  j["previous_author"] = previous_author ? json(*previous_author) : json(nullptr);
  return j;
}

PredictionRow PredictionRow::from_json(const json& j) {
  PredictionRow r;
  r.segment_id = j.at("segment_id").get<std::string>();
  r.subreddit = j.value("subreddit", "");
  r.target = j.at("target").get<double>();
  r.messages = j.value("messages", size_t{0});
  j.at("predictions").get_to(r.predictions);
  if (j.contains("previous_author") && !j["previous_author"].is_null())
    r.previous_author = j["previous_author"].get<double>();
  return r;
}

namespace {

const char* const kSubsetNames[6] = {
    "dEmT > p95", "dEmT > +1.0", "EmT(c_n) > +0.8", "dEmT < p5", "dEmT < -1.0", "EmT(c_n) < -0.8",
};

std::vector<std::string> predictor_order(const std::set<std::string>& names, const std::string& model) {
  static const std::vector<std::string> preferred{"UNCHANGED", "MEAN", "LAST", "XGB"};
  std::vector<std::string> out;
  for (const auto& p : preferred)
    if (names.count(p) && p != model) out.push_back(p);
  for (const auto& p : names)
    if (p != model && std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
  if (names.count(model)) out.push_back(model);
  return out;
}

std::set<std::string> predictor_names(const std::vector<PredictionRow>& rows) {
  std::set<std::string> names;
  if (rows.empty()) return names;
  for (const auto& [k, v] : rows.front().predictions) names.insert(k);
  for (const auto& r : rows) {
    if (r.predictions.size() != names.size())
      throw InvalidArgument("segment " + r.segment_id + " lacks some predictor outputs");
    for (const auto& [k, v] : r.predictions)
      if (!names.count(k)) throw InvalidArgument("segment " + r.segment_id + " has an unexpected predictor " + k);
  }
  return names;
}

std::string pad(const std::string& s, size_t w, bool left = false) {
  if (s.size() >= w) return left ? s + " " : " " + s;
  return left ? s + std::string(w - s.size(), ' ') : std::string(w - s.size(), ' ') + s;
}

std::string loss3(double v) {
  std::string s = format_fixed(v, 3);
  if (s.rfind("0.", 0) == 0) s.erase(0, 1);
  return s;
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
std::optional<double> opt_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

bool in_subset(const PredictionRow& row, size_t subset, const ExtremeReport& report) {
  auto d = row.delta();
  switch (subset) {
    case 0: return d && report.delta_p95 && *d > *report.delta_p95;
    case 1: return d && *d > 1.0;
    case 2: return row.target > 0.8;
    case 3: return d && report.delta_p5 && *d < *report.delta_p5;
    case 4: return d && *d < -1.0;
    case 5: return row.target < -0.8;
  }
  throw InvalidArgument("subset index out of range");
}

ExtremeReport extreme_subsets(const std::vector<PredictionRow>& rows, const std::string& model) {
  ExtremeReport rep;
  std::vector<double> deltas;
  for (const auto& r : rows)
    if (auto d = r.delta()) deltas.push_back(*d);
  rep.with_delta = deltas.size();
  if (!deltas.empty()) {
    rep.delta_p95 = percentile(deltas, 95);
    rep.delta_p5 = percentile(deltas, 5);
  }
  auto names = predictor_names(rows);
  for (size_t k = 0; k < 6; ++k) {
    SubsetRow sr;
    sr.name = kSubsetNames[k];
    const std::optional<double> thresholds[6] = {rep.delta_p95, 1.0, 0.8, rep.delta_p5, -1.0, -0.8};
    sr.threshold = thresholds[k];
    std::map<std::string, double> err;
    std::map<std::string, size_t> wins;
    for (const auto& r : rows) {
      if (!in_subset(r, k, rep)) continue;
      ++sr.count;
      for (const auto& [p, v] : r.predictions) err[p] += std::abs(v - r.target);
      if (r.predictions.count(model)) {
        double me = std::abs(r.predictions.at(model) - r.target);
        for (const auto& [p, v] : r.predictions)
          if (p != model && me < std::abs(v - r.target)) ++wins[p];
      }
    }
    if (sr.count > 0) {
      for (const auto& p : names) {
        sr.l1[p] = err[p] / static_cast<double>(sr.count);
        if (p != model && names.count(model))
          sr.win_rate[p] = 100.0 * static_cast<double>(wins[p]) / static_cast<double>(sr.count);
      }
    }
    rep.rows.push_back(std::move(sr));
  }
  return rep;
}

const CellMetrics* EvaluationReport::cell(const std::string& subreddit, const std::string& predictor) const {
  for (const auto& c : cells)
    if (c.subreddit == subreddit && c.predictor == predictor) return &c;
  return nullptr;
}

EvaluationReport evaluate(const std::vector<PredictionRow>& rows, const train::BinWeights& bw,
                          const std::string& model) {
  if (rows.empty()) throw LengthMismatch("no test rows to evaluate");
  EvaluationReport rep;
  auto names = predictor_names(rows);
  rep.predictors = predictor_order(names, model);
  std::set<std::string> subs;
  for (const auto& r : rows) subs.insert(r.subreddit);
  rep.subreddits.assign(subs.begin(), subs.end());
  if (rep.subreddits.size() > 1 || rep.subreddits.front() != "ALL") rep.subreddits.push_back("ALL");
  for (const auto& sub : rep.subreddits) {
    std::vector<const PredictionRow*> sel;
    for (const auto& r : rows)
      if (sub == "ALL" || r.subreddit == sub) sel.push_back(&r);
    std::vector<double> y;
    for (const auto* r : sel) y.push_back(r->target);
    for (const auto& p : rep.predictors) {
      std::vector<double> pred;
      for (const auto* r : sel) pred.push_back(r->predictions.at(p));
      rep.cells.push_back({sub, p, sel.size(), metrics(pred, y, bw)});
    }
  }
  rep.extremes = extreme_subsets(rows, model);
  rep.metadata = {{"model", model}, {"test_size", rows.size()}, {"bin_weights", bw.to_json()}};
  return rep;
}

json EvaluationReport::to_json() const {
  json cj = json::array();
  for (const auto& c : cells)
    cj.push_back({{"subreddit", c.subreddit}, {"predictor", c.predictor}, {"count", c.count}, {"metrics", c.values.to_json()}});
  json ej = json::array();
  for (const auto& r : extremes.rows)
    ej.push_back({{"name", r.name}, {"threshold", opt(r.threshold)},
                  {"count", r.count}, {"l1", r.l1}, {"win_rate", r.win_rate}});
  return {{"predictors", predictors},
          {"subreddits", subreddits},
          {"cells", cj},
          {"extremes",
           {{"delta_p95", opt(extremes.delta_p95)},
            {"delta_p5", opt(extremes.delta_p5)},
            {"with_delta", extremes.with_delta},
            {"rows", ej}}},
          {"metadata", metadata}};
}

EvaluationReport EvaluationReport::from_json(const json& j) {
  EvaluationReport rep;
  j.at("predictors").get_to(rep.predictors);
  j.at("subreddits").get_to(rep.subreddits);
  for (const auto& c : j.at("cells"))
    rep.cells.push_back({c.at("subreddit").get<std::string>(), c.at("predictor").get<std::string>(),
                         c.at("count").get<size_t>(), Metrics::from_json(c.at("metrics"))});
  const auto& e = j.at("extremes");
  rep.extremes.delta_p95 = opt_from(e.at("delta_p95"));
  rep.extremes.delta_p5 = opt_from(e.at("delta_p5"));
  rep.extremes.with_delta = e.at("with_delta").get<size_t>();
  for (const auto& r : e.at("rows")) {
    SubsetRow s;
    s.name = r.at("name").get<std::string>();
    s.threshold = opt_from(r.at("threshold"));
    s.count = r.at("count").get<size_t>();
    r.at("l1").get_to(s.l1);
    r.at("win_rate").get_to(s.win_rate);
    rep.extremes.rows.push_back(std::move(s));
  }
  rep.metadata = j.value("metadata", json::object());
  return rep;
}

std::string EvaluationReport::render() const {
  std::ostringstream os;
  const size_t w0 = 12, w = 9;
  auto table = [&](const char* title, double Metrics::*field) {
    os << title << '\n' << pad("Predictor", w0, true);
    for (const auto& s : subreddits) os << pad(s, std::max(w, s.size() + 1));
    os << '\n';
    for (const auto& p : predictors) {
      os << pad(p, w0, true);
      for (const auto& s : subreddits) {
        const auto* c = cell(s, p);
        os << pad(c ? loss3(c->values.*field) : "-", std::max(w, s.size() + 1));
      }
      os << '\n';
    }
    os << '\n';
  };
  table("Weighted L1 loss", &Metrics::weighted_l1);
  table("L1 loss", &Metrics::l1);
  table("MSE loss", &Metrics::mse);

  std::string model = metadata.value("model", kModel);
  std::vector<std::string> others;
  for (const auto& p : predictors)
    if (p != model) others.push_back(p);
  os << "Extreme subsets (L1 loss, unweighted; % threads where " << model << " is better)\n";
  os << pad("Subset", 20, true) << pad("n", 6);
  for (const auto& p : predictors) os << pad(p, std::max(w, p.size() + 1));
  for (const auto& p : others) os << pad("%" + p, std::max(w + 2, p.size() + 2));
  os << '\n';
  for (const auto& r : extremes.rows) {
    std::string name = r.name;
    if (r.threshold && name.find(" p") != std::string::npos) name += " (" + format_fixed(*r.threshold, 3) + ")";
    os << pad(name, 20, true) << pad(std::to_string(r.count), 6);
    for (const auto& p : predictors) os << pad(r.l1.count(p) ? loss3(r.l1.at(p)) : "-", std::max(w, p.size() + 1));
    for (const auto& p : others)
      os << pad(r.win_rate.count(p) ? format_fixed(r.win_rate.at(p), 1) : "-", std::max(w + 2, p.size() + 2));
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------

double JointDensityGrid::integral() const {
  const double h = (hi - lo) / static_cast<double>(points - 1);
  double s = 0;
  for (size_t iy = 0; iy < points; ++iy)
    for (size_t ix = 0; ix < points; ++ix) {
      double wx = (ix == 0 || ix + 1 == points) ? 0.5 : 1.0;
      double wy = (iy == 0 || iy + 1 == points) ? 0.5 : 1.0;
      s += wx * wy * at(ix, iy);
    }
  return s * h * h;
}

std::string JointDensityGrid::grid_csv() const {
  std::string out = "x,y,density\n";
  for (size_t iy = 0; iy < points; ++iy)
    for (size_t ix = 0; ix < points; ++ix)
      out += format_double(axis(ix)) + "," + format_double(axis(iy)) + "," + format_double(at(ix, iy)) + "\n";
  return out;
}

std::string JointDensityGrid::scatter_csv() const {
  std::string out = "id,x,y,size\n";
  for (const auto& p : scatter)
    out += p.id + "," + format_double(p.x) + "," + format_double(p.y) + "," + std::to_string(p.size) + "\n";
  return out;
}

namespace {

double sample_sd(const std::vector<double>& v) {
  double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

JointDensityGrid joint_density(std::span<const double> x, std::span<const double> y, size_t n_scatter,
                               uint64_t seed, std::span<const size_t> sizes, std::span<const std::string> ids,
                               size_t grid_points) {
  if (x.size() != y.size()) throw LengthMismatch("density inputs differ in length");
  if (x.size() < 2) throw InvalidArgument("density needs at least two points");
  if (grid_points < 2) throw InvalidArgument("grid needs at least two points per axis");
  if (!sizes.empty() && sizes.size() != x.size()) throw LengthMismatch("sizes differ in length");
  if (!ids.empty() && ids.size() != x.size()) throw LengthMismatch("ids differ in length");
  JointDensityGrid g;
  g.points = grid_points;
  const size_t n = x.size();
  std::vector<double> cx(n), cy(n);
  for (size_t i = 0; i < n; ++i) {
    cx[i] = std::clamp(x[i], g.lo, g.hi);
    cy[i] = std::clamp(y[i], g.lo, g.hi);
  }
  const double factor = std::pow(static_cast<double>(n), -1.0 / 6.0);
  g.bandwidth_x = std::max(sample_sd(cx) * factor, kBandwidthFloor);
  g.bandwidth_y = std::max(sample_sd(cy) * factor, kBandwidthFloor);

  const auto P = static_cast<Eigen::Index>(grid_points);
  Eigen::MatrixXd kx(static_cast<Eigen::Index>(n), P), ky(static_cast<Eigen::Index>(n), P);
  const double norm = 1.0 / std::sqrt(2.0 * M_PI);
  for (size_t i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < P; ++k) {
      double a = (g.axis(static_cast<size_t>(k)) - cx[i]) / g.bandwidth_x;
      double b = (g.axis(static_cast<size_t>(k)) - cy[i]) / g.bandwidth_y;
      kx(static_cast<Eigen::Index>(i), k) = norm * std::exp(-0.5 * a * a) / g.bandwidth_x;
      ky(static_cast<Eigen::Index>(i), k) = norm * std::exp(-0.5 * b * b) / g.bandwidth_y;
    }
  Eigen::MatrixXd d = ky.transpose() * kx / static_cast<double>(n);  // rows: y, cols: x
  g.density.resize(grid_points * grid_points);
  for (Eigen::Index iy = 0; iy < P; ++iy)
    for (Eigen::Index ix = 0; ix < P; ++ix) g.density[static_cast<size_t>(iy * P + ix)] = d(iy, ix);
  double total = g.integral();
  if (!(total > 0)) throw InvalidArgument("density vanished on the grid");
  for (double& v : g.density) v /= total;

  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span<size_t>(idx));
  idx.resize(std::min(n_scatter, n));
  std::sort(idx.begin(), idx.end());
  for (size_t i : idx)
    g.scatter.push_back({ids.empty() ? std::to_string(i) : ids[i], x[i], y[i], sizes.empty() ? 0 : sizes[i]});
  return g;
}

// ---------------------------------------------------------------------------

json Characterization::to_json() const {
  return {{"subreddit", subreddit},
          {"threads", threads},
          {"post", post.to_json()},
          {"last_comment", last_comment.to_json()},
          {"others_mean", others_mean.to_json()},
          {"quadrant_share", quadrant}};
}

std::vector<Characterization> characterize(const std::vector<threadsel::ThreadSegment>& segments) {
  struct Acc {
    std::vector<double> post, last, others;
    std::array<size_t, 4> quad{};
  };
  std::map<std::string, Acc> acc;
  for (const auto& s : segments) {
    if (s.messages.empty() || !s.messages.front().emt || !s.target.emt)
      throw MissingField("segment " + s.segment_id + " is not scored");
    double p = *s.messages.front().emt, c = *s.target.emt;
    double sum = 0;
    size_t count = 0;
    for (size_t i = 1; i < s.messages.size(); ++i) {
      const auto& m = s.messages[i];
      if (m.is_post_author) continue;
      if (!m.emt) throw MissingField("message " + m.id + " is not scored");
      sum += *m.emt;
      ++count;
    }
    for (const std::string& key : {s.subreddit, std::string("ALL")}) {
      auto& a = acc[key];
      a.post.push_back(p);
      a.last.push_back(c);
      if (count > 0) a.others.push_back(sum / static_cast<double>(count));
      if (p > 0 && c > 0) ++a.quad[0];
      else if (p < 0 && c > 0) ++a.quad[1];
      else if (p < 0 && c < 0) ++a.quad[2];
      else if (p > 0 && c < 0) ++a.quad[3];
    }
  }
  auto quart = [](const std::vector<double>& v) {
    if (v.empty()) return Quartiles{NAN, NAN, NAN};
    return Quartiles{percentile(v, 25), percentile(v, 50), percentile(v, 75)};
  };
  std::vector<Characterization> out;
  auto emit = [&](const std::string& key) {
    const auto& a = acc.at(key);
    Characterization c;
    c.subreddit = key;
    c.threads = a.post.size();
    c.post = quart(a.post);
    c.last_comment = quart(a.last);
    c.others_mean = quart(a.others);
    for (size_t q = 0; q < 4; ++q) c.quadrant[q] = static_cast<double>(a.quad[q]) / static_cast<double>(c.threads);
    out.push_back(c);
  };
  for (const auto& [key, a] : acc)
    if (key != "ALL") emit(key);
  if (acc.count("ALL")) emit("ALL");
  return out;
}

std::string render(const std::vector<Characterization>& rows) {
  std::ostringstream os;
  os << pad("Subreddit", 12, true) << pad("threads", 8) << pad("EmT(p) q1/q2/q3", 24)
     << pad("EmT(c_n) q1/q2/q3", 24) << pad("others q1/q2/q3", 24) << pad("Q1", 7) << pad("Q2", 7)
     << pad("Q3", 7) << pad("Q4", 7) << '\n';
  auto q = [](const Quartiles& x) {
    return format_fixed(x.q1, 3) + "/" + format_fixed(x.q2, 3) + "/" + format_fixed(x.q3, 3);
  };
  for (const auto& r : rows) {
    os << pad(r.subreddit, 12, true) << pad(std::to_string(r.threads), 8) << pad(q(r.post), 24)
       << pad(q(r.last_comment), 24) << pad(q(r.others_mean), 24);
    for (double s : r.quadrant) os << pad(format_fixed(100 * s, 1) + "%", 7);
    os << '\n';
  }
  return os.str();
}

}  // namespace toneshift::eval
