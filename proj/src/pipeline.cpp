#include "toneshift/pipeline.hpp"

#include <map>
#include <set>

#include "toneshift/corpus.hpp"
#include "toneshift/digest.hpp"
#include "toneshift/error.hpp"
#include "toneshift/eval.hpp"
#include "toneshift/features.hpp"
#include "toneshift/threadsel.hpp"
#include "toneshift/tone.hpp"

namespace toneshift::pipeline {

namespace {

constexpr const char* kCorpus = "corpus.jsonl";
constexpr const char* kIngest = "ingest.json";
constexpr const char* kSegments = "segments.jsonl";
constexpr const char* kSelection = "selection.json";
constexpr const char* kScored = "scored.jsonl";
constexpr const char* kCache = "embeddings.cache";
constexpr const char* kSplit = "split.json";
constexpr const char* kLeaderboard = "leaderboard.json";
constexpr const char* kCheckpoint = "model.ckpt";
constexpr const char* kHistory = "history.json";
constexpr const char* kBaselines = "baselines.jsonl";
constexpr const char* kGbt = "gbt.json";
constexpr const char* kPredictions = "predictions.jsonl";
constexpr const char* kReportJson = "report.json";
constexpr const char* kReportText = "report.txt";
constexpr const char* kStatsJson = "stats.json";
constexpr const char* kStatsText = "stats.txt";

const std::vector<std::string> kBaselineNames{"UNCHANGED", "MEAN", "LAST", "XGB"};

template <class T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j[key].is_null()) out = j[key].get<T>();
}

std::vector<std::string> expand_inputs(const std::vector<std::string>& patterns) {
  std::vector<std::string> out;
  for (const auto& p : patterns) {
    auto found = expand_glob(p);
    if (found.empty()) throw IoFailure("no input matches " + p);
    for (const auto& f : found) out.push_back(fs::absolute(f).lexically_normal().string());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

double mean_of_comments(const threadsel::ThreadSegment& s, bool& any) {
  double sum = 0;
  size_t n = 0;
  for (size_t i = 1; i < s.messages.size(); ++i) {
    if (s.messages[i].emt) {
      sum += *s.messages[i].emt;
      ++n;
    }
  }
  any = n > 0;
  return n ? sum / static_cast<double>(n) : 0.0;
}

std::string safe_name(const std::string& s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_';
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

void PipelineConfig::merge(const json& j) {
  static const std::set<std::string> known{"work_dir", "inputs",     "provider",   "provider_seed",
                                           "model_dir", "seed",      "subreddit",  "grid_file",
                                           "gridsearch", "gbt_search", "model",     "train",
                                           "workers",  "scatter_points"};
  if (!j.is_object()) throw InvalidArgument("pipeline config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw InvalidArgument("unknown pipeline config key '" + it.key() + "'");
  try {
    if (j.contains("work_dir")) work_dir = j["work_dir"].get<std::string>();
    take(j, "inputs", inputs);
    take(j, "provider", provider);
    take(j, "provider_seed", provider_seed);
    if (j.contains("model_dir")) model_dir = j["model_dir"].get<std::string>();
    take(j, "seed", seed);
    if (j.contains("subreddit") && !j["subreddit"].is_null()) subreddit = j["subreddit"].get<std::string>();
    if (j.contains("grid_file") && !j["grid_file"].is_null()) grid_file = j["grid_file"].get<std::string>();
    take(j, "gridsearch", gridsearch);
    take(j, "gbt_search", gbt_search);
    take(j, "workers", workers);
    take(j, "scatter_points", scatter_points);
    if (j.contains("model")) {
      json m = model.to_json();
      m.merge_patch(j["model"]);
      model = model::ModelConfig::from_json(m);
    }
    if (j.contains("train")) {
      json t = train.to_json();
      t.merge_patch(j["train"]);
      train = train::TrainConfig::from_json(t);
    }
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("pipeline config: ") + e.what());
  }
}

json PipelineConfig::to_json() const {
  return {{"work_dir", work_dir.string()},
          {"inputs", inputs},
          {"provider", provider},
          {"provider_seed", provider_seed},
          {"model_dir", model_dir.string()},
          {"seed", seed},
          {"subreddit", subreddit ? json(*subreddit) : json(nullptr)},
          {"grid_file", grid_file ? json(grid_file->string()) : json(nullptr)},
          {"gridsearch", gridsearch},
          {"gbt_search", gbt_search},
          {"model", model.to_json()},
          {"train", train.to_json()},
          {"workers", workers},
          {"scatter_points", scatter_points}};
}

// ---------------------------------------------------------------------------

struct Pipeline::Data {
  std::vector<threadsel::ThreadSegment> segments;  // after the subreddit filter, by id
  std::map<std::string, const threadsel::ThreadSegment*> by_id;
  train::SplitSpec split;
  std::map<train::Part, train::Dataset> parts;
  std::map<train::Part, std::vector<const threadsel::ThreadSegment*>> part_segments;

  std::vector<double> targets(train::Part p) const {
    std::vector<double> y;
    for (const auto& s : parts.at(p)) y.push_back(s.target);
    return y;
  }
};

Pipeline::Pipeline(PipelineConfig config) : config_(std::move(config)) {
  config_.train.seed = config_.seed;
  fs::create_directories(config_.work_dir / "manifests");
}

Pipeline::~Pipeline() = default;

fs::path Pipeline::path(const std::string& name) const { return config_.work_dir / name; }

const embed::Embedder& Pipeline::provider() {
  if (!provider_) provider_ = embed::make_embedder(config_.provider, config_.provider_seed, config_.model_dir);
  return *provider_;
}

StageResult Pipeline::stage(const std::string& name, const std::vector<std::string>& inputs, const json& params,
                            const std::vector<std::string>& outputs,
                            const std::function<std::vector<std::string>()>& body) {
  json in = json::object();
  for (const auto& i : inputs) {
    fs::path p = fs::path(i).is_absolute() ? fs::path(i) : path(i);
    if (!fs::exists(p)) throw IoFailure("stage " + name + ": missing input " + p.string() + "; run the earlier stages first");
    in[i] = sha256_file_hex(p);
  }
  fs::path manifest_path = path("manifests/" + name + ".json");

  if (fs::exists(manifest_path)) {
    try {
      json old = read_json_file(manifest_path);
      bool same = old.value("inputs", json()) == in && old.value("params", json()) == params &&
                  old.value("seed", json()) == json(config_.seed);
      if (same) {
        for (auto it = old["outputs"].begin(); same && it != old["outputs"].end(); ++it)
          same = fs::exists(path(it.key())) && sha256_file_hex(path(it.key())) == it.value().get<std::string>();
      }
      if (same) return {name, true, old};
    } catch (const std::exception&) {
      // An unreadable manifest just means the stage runs again.
    }
  }

  std::vector<std::string> produced = outputs;
  try {
    auto extra = body();
    produced.insert(produced.end(), extra.begin(), extra.end());
  } catch (const Error& e) {
    throw Error(e.code(), "stage " + name + ": " + e.what());
  }
  json out = json::object();
  for (const auto& o : produced) out[o] = sha256_file_hex(path(o));
  json manifest{{"stage", name}, {"seed", config_.seed}, {"params", params}, {"inputs", in}, {"outputs", out}};
  write_json_file(manifest_path, manifest);
  return {name, false, manifest};
}

// ---------------------------------------------------------------------------

StageResult Pipeline::ingest() {
  auto files = expand_inputs(config_.inputs);
  return stage("ingest", files, json::object(), {kCorpus, kIngest}, [&] {
    corpus::IngestOptions opt;
    for (const auto& f : files) opt.inputs.emplace_back(f);
    opt.threads = static_cast<unsigned>(std::max<size_t>(1, config_.workers));
    auto result = corpus::ingest(opt);
    std::string text = corpus::serialize_corpus(result.threads);
    write_file_atomic(path(kCorpus), text);
    write_json_file(path(kIngest), result.manifest(sha256_hex(text)));
    return std::vector<std::string>{};
  });
}

StageResult Pipeline::stats() {
  return stage("stats", {kCorpus}, json::object(), {kStatsJson, kStatsText}, [&] {
    auto table = corpus::descriptive_stats(corpus::read_corpus(path(kCorpus)));
    write_json_file(path(kStatsJson), table.to_json());
    write_file_atomic(path(kStatsText), table.render());
    return std::vector<std::string>{};
  });
}

StageResult Pipeline::select() {
  threadsel::SelectOptions opt;
  opt.seq_cap = config_.model.seq_cap;
  json params{{"max_gap_seconds", opt.max_gap_seconds}, {"seq_cap", opt.seq_cap}};
  return stage("select", {kCorpus}, params, {kSegments, kSelection}, [&] {
    auto result = threadsel::select_all(corpus::read_corpus(path(kCorpus)), opt);
    threadsel::write_segments(path(kSegments), result.segments);
    std::map<std::string, size_t> per_sub;
    for (const auto& s : result.segments) ++per_sub[s.subreddit];
    write_json_file(path(kSelection), {{"segments", result.segments.size()},
                                       {"by_subreddit", per_sub},
                                       {"truncated", result.truncated},
                                       {"rejected", result.rejection_counts()}});
    return std::vector<std::string>{};
  });
}

StageResult Pipeline::score() {
  const auto& scorer = tone::default_scorer();
  json params{{"scorer", scorer.scorer_id()}, {"lexicon_checksum", scorer.lexicon().checksum()}};
  return stage("score", {kSegments}, params, {kScored}, [&] {
    auto segments = threadsel::read_segments(path(kSegments));
    for (auto& s : segments) features::score_segment(s, scorer);
    threadsel::write_segments(path(kScored), segments);
    return std::vector<std::string>{};
  });
}

StageResult Pipeline::embed() {
  const auto& prov = provider();
  json params{{"provider_id", prov.provider_id()}};
  return stage("embed", {kScored}, params, {kCache}, [&] {
    auto segments = threadsel::read_segments(path(kScored));
    embed::EmbeddingCache cache(path(kCache), prov.dim(), embed::EmbeddingCache::Mode::read_write);
    auto source = features::EmbeddingSource::from(prov, &cache);
    for (const auto& s : segments)
      for (const auto& m : s.messages) source.get(m.text);
    cache.write_index();
    return std::vector<std::string>{};
  });
}

StageResult Pipeline::split() {
  json params{{"subreddit", config_.subreddit ? json(*config_.subreddit) : json(nullptr)},
              {"ratios", {0.8, 0.1, 0.1}},
              {"bins", train::kDefaultBins}};
  return stage("split", {kScored}, params, {kSplit}, [&] {
    std::vector<std::string> ids;
    std::vector<double> y;
    for (const auto& s : threadsel::read_segments(path(kScored))) {
      if (config_.subreddit && s.subreddit != *config_.subreddit) continue;
      if (!s.target.emt) throw MissingField("segment " + s.segment_id + " is not scored");
      ids.push_back(s.segment_id);
      y.push_back(*s.target.emt);
    }
    if (ids.empty()) throw EmptyTrainingSet("no segments left after the subreddit filter");
    auto spec = train::stratified_split(ids, y, {0.8, 0.1, 0.1}, config_.seed);
    json j = spec.to_json();
    j["subreddit"] = params["subreddit"];
    write_json_file(path(kSplit), j);
    return std::vector<std::string>{};
  });
}

Pipeline::Data Pipeline::load_data() {
  Data d;
  d.split = train::SplitSpec::from_json(read_json_file(path(kSplit)));
  for (auto& s : threadsel::read_segments(path(kScored)))
    if (d.split.assignment.count(s.segment_id)) d.segments.push_back(std::move(s));
  for (const auto& s : d.segments) d.by_id[s.segment_id] = &s;

  const auto& prov = provider();
  embed::EmbeddingCache cache(path(kCache), prov.dim(), embed::EmbeddingCache::Mode::read_only);
  features::EmbeddingSource source{nullptr, &cache, prov.provider_id(), prov.dim()};
  for (auto part : {train::Part::train, train::Part::val, train::Part::test}) {
    auto& ds = d.parts[part];
    d.part_segments[part];
    for (const auto& id : d.split.ids(part)) {
      auto it = d.by_id.find(id);
      if (it == d.by_id.end()) throw MissingField("split names unknown segment " + id);
      ds.push_back(features::build_sequence(*it->second, source));
      d.part_segments[part].push_back(it->second);
    }
  }
  if (d.parts[train::Part::train].empty()) throw EmptyTrainingSet("training split is empty");
  return d;
}

StageResult Pipeline::gridsearch() {
  train::GridSpec grid;
  if (config_.grid_file) grid = train::GridSpec::from_json(read_json_file(*config_.grid_file));
  json params{{"grid", grid.to_json()}, {"train", config_.train.to_json()}};
  return stage("gridsearch", {kScored, kSplit, kCache}, params, {kLeaderboard}, [&] {
    auto d = load_data();
    auto bw = train::compute_bin_weights(d.targets(train::Part::train));
    const auto& tr = d.parts.at(train::Part::train);
    const auto& va = d.parts.at(train::Part::val);
    auto configs = grid.enumerate(provider().dim());
    for (auto& c : configs) c.seq_cap = config_.model.seq_cap;
    auto result = train::grid_search(
        configs,
        [&](const model::ModelConfig& c) {
          auto fit = train::fit(c, config_.train, tr, va, bw);
          return train::LeaderboardEntry{c, fit.best_val_loss, fit.best_epoch, fit.history.size()};
        },
        config_.workers);
    write_json_file(path(kLeaderboard), result.to_json());
    return std::vector<std::string>{};
  });
}

StageResult Pipeline::train() {
  std::vector<std::string> inputs{kScored, kSplit, kCache};
  model::ModelConfig cfg = config_.model;
  cfg.embed_dim = provider().dim();
  if (config_.gridsearch) {
    inputs.push_back(kLeaderboard);
    if (fs::exists(path(kLeaderboard)))
      cfg = model::ModelConfig::from_json(read_json_file(path(kLeaderboard)).at("best"));
  }
  const auto& scorer = tone::default_scorer();
  json params{{"model", cfg.to_json()}, {"train", config_.train.to_json()}};
  return stage("train", inputs, params, {kCheckpoint, kHistory}, [&] {
    auto d = load_data();
    auto bw = train::compute_bin_weights(d.targets(train::Part::train));
    auto fit = train::fit(cfg, config_.train, d.parts.at(train::Part::train), d.parts.at(train::Part::val), bw);
    json meta{{"seed", config_.seed},
              {"provider_id", provider().provider_id()},
              {"lexicon_checksum", scorer.lexicon().checksum()},
              {"scorer", scorer.scorer_id()},
              {"bin_weights", bw.to_json()},
              {"train", config_.train.to_json()},
              {"best_epoch", fit.best_epoch},
              {"best_val_loss", fit.best_val_loss},
              {"split_sha256", sha256_file_hex(path(kSplit))}};
    model::save_checkpoint(path(kCheckpoint), fit.params, meta);
    json history = fit.history_json();
    history["config"] = cfg.key();
    write_json_file(path(kHistory), history);
    return std::vector<std::string>{};
  });
}

StageResult Pipeline::baselines() {
  json params{{"gbt", config_.gbt_search ? baselines::GbtGrid{}.to_json()
                                         : baselines::reference_gbt_params(config_.seed).to_json()},
              {"gbt_search", config_.gbt_search}};
  return stage("baselines", {kScored, kSplit, kCache}, params, {kBaselines, kGbt}, [&] {
    auto d = load_data();
    auto pooled = [&](train::Part p) {
      baselines::FeatureMatrix m;
      for (const auto& s : d.parts.at(p)) m.push_row(baselines::pool_features(s));
      return m;
    };
    auto xtr = pooled(train::Part::train), xva = pooled(train::Part::val), xte = pooled(train::Part::test);
    auto ytr = d.targets(train::Part::train), yva = d.targets(train::Part::val);
    json gbt_json;
    baselines::GbtModel gbt;
    if (config_.gbt_search) {
      auto search = baselines::search_gbt(xtr, ytr, xva, yva, baselines::GbtGrid{}.enumerate(config_.seed));
      gbt = search.best;
      gbt_json = search.to_json();
    } else {
      gbt = baselines::fit_gbt(xtr, ytr, xva, yva, baselines::reference_gbt_params(config_.seed));
      gbt_json = {{"best", gbt.to_json()}};
    }
    std::vector<json> rows;
    const auto& test = d.parts.at(train::Part::test);
    for (size_t i = 0; i < test.size(); ++i) {
      const auto& seq = test[i];
      rows.push_back({{"segment_id", seq.id},
                      {"predictions",
                       {{"UNCHANGED", baselines::predict_unchanged(seq)},
                        {"MEAN", baselines::predict_mean(seq)},
                        {"LAST", baselines::predict_last(seq)},
                        {"XGB", gbt.predict(xte.row(i))}}}});
    }
    write_jsonl(path(kBaselines), rows);
    write_json_file(path(kGbt), gbt_json);
    return std::vector<std::string>{};
  });
}

StageResult Pipeline::evaluate() {
  return stage("evaluate", {kScored, kSplit, kCache, kCheckpoint, kBaselines}, json::object(),
               {kPredictions, kReportJson, kReportText}, [&] {
                 auto d = load_data();
                 auto ck = model::load_checkpoint(path(kCheckpoint));
                 if (ck.metadata.value("provider_id", "") != provider().provider_id())
                   throw ProviderMismatch("checkpoint was trained with another embedding provider");
                 auto bw = train::BinWeights::from_json(ck.metadata.at("bin_weights"));
                 std::map<std::string, json> base;
                 for (const auto& r : read_jsonl(path(kBaselines)))
                   base[r.at("segment_id").get<std::string>()] = r.at("predictions");

                 const auto& test = d.parts.at(train::Part::test);
                 const auto& segs = d.part_segments.at(train::Part::test);
                 auto model_pred = train::predict(ck.params, test);
                 std::vector<eval::PredictionRow> rows;
                 std::vector<json> lines;
                 for (size_t i = 0; i < test.size(); ++i) {
                   eval::PredictionRow row;
                   row.segment_id = test[i].id;
                   row.subreddit = segs[i]->subreddit;
                   row.target = test[i].target;
                   if (segs[i]->previous_author_comment) row.previous_author = segs[i]->previous_author_comment->emt;
                   row.messages = test[i].length;
                   auto it = base.find(row.segment_id);
                   if (it == base.end()) throw MissingField("no baseline predictions for " + row.segment_id);
                   for (const auto& name : kBaselineNames) row.predictions[name] = it->second.at(name).get<double>();
                   row.predictions[eval::kModel] = model_pred[i];
                   lines.push_back(row.to_json());
                   rows.push_back(std::move(row));
                 }
                 if (rows.empty()) throw EmptyTrainingSet("test split is empty");
                 auto report = eval::evaluate(rows, bw);
                 report.metadata = {{"seed", config_.seed},
                                    {"model_id", ck.model_id},
                                    {"model_config", ck.params.config().key()},
                                    {"provider_id", provider().provider_id()},
                                    {"test_segments", rows.size()},
                                    {"subreddit", config_.subreddit ? json(*config_.subreddit) : json(nullptr)}};
                 write_jsonl(path(kPredictions), lines);
                 write_json_file(path(kReportJson), report.to_json());
                 write_file_atomic(path(kReportText), report.render());
                 return std::vector<std::string>{};
               });
}

StageResult Pipeline::export_plots() {
  json params{{"scatter_points", config_.scatter_points}, {"grid_points", 100}};
  return stage("export-plots", {kScored, kSplit, kPredictions}, params, {}, [&] {
    fs::create_directories(path("plots"));
    std::vector<std::string> written;
    auto emit = [&](const std::string& stem, const eval::JointDensityGrid& g) {
      write_file_atomic(path("plots/" + stem + ".grid.csv"), g.grid_csv());
      write_file_atomic(path("plots/" + stem + ".scatter.csv"), g.scatter_csv());
      written.push_back("plots/" + stem + ".grid.csv");
      written.push_back("plots/" + stem + ".scatter.csv");
    };
    uint64_t seed = config_.seed;

    // Tone of post, final author comment and mean comment, pairwise.
    auto split = train::SplitSpec::from_json(read_json_file(path(kSplit)));
    std::vector<threadsel::ThreadSegment> segments;
    for (auto& s : threadsel::read_segments(path(kScored)))
      if (split.assignment.count(s.segment_id)) segments.push_back(std::move(s));
    std::map<std::string, std::vector<const threadsel::ThreadSegment*>> groups;
    for (const auto& s : segments) {
      groups[s.subreddit].push_back(&s);
      groups["ALL"].push_back(&s);
    }
    for (const auto& [sub, segs] : groups) {
      std::vector<double> post, last, others, post_o, last_o;
      std::vector<std::string> ids, ids_o;
      std::vector<size_t> sizes, sizes_o;
      for (const auto* s : segs) {
        post.push_back(*s->messages.front().emt);
        last.push_back(*s->target.emt);
        ids.push_back(s->segment_id);
        sizes.push_back(s->messages.size());
        bool any = false;
        double m = mean_of_comments(*s, any);
        if (any) {
          others.push_back(m);
          post_o.push_back(post.back());
          last_o.push_back(last.back());
          ids_o.push_back(s->segment_id);
          sizes_o.push_back(s->messages.size());
        }
      }
      if (segs.size() < 2) continue;
      std::string name = safe_name(sub);
      emit("tone_" + name + "_post_last", eval::joint_density(post, last, config_.scatter_points, seed, sizes, ids));
      if (others.size() >= 2) {
        emit("tone_" + name + "_post_comments",
             eval::joint_density(post_o, others, config_.scatter_points, seed, sizes_o, ids_o));
        emit("tone_" + name + "_comments_last",
             eval::joint_density(others, last_o, config_.scatter_points, seed, sizes_o, ids_o));
      }
    }
    write_file_atomic(path("plots/characterization.txt"), eval::render(eval::characterize(segments)));
    written.push_back("plots/characterization.txt");

    // True against predicted values, same sampled threads for every predictor.
    std::vector<eval::PredictionRow> rows;
    for (const auto& j : read_jsonl(path(kPredictions))) rows.push_back(eval::PredictionRow::from_json(j));
    std::map<std::string, std::vector<const eval::PredictionRow*>> by_sub;
    for (const auto& r : rows) {
      by_sub[r.subreddit].push_back(&r);
      by_sub["ALL"].push_back(&r);
    }
    for (const auto& [sub, rs] : by_sub) {
      if (rs.size() < 2) continue;
      std::vector<double> y;
      std::vector<std::string> ids;
      std::vector<size_t> sizes;
      for (const auto* r : rs) {
        y.push_back(r->target);
        ids.push_back(r->segment_id);
        sizes.push_back(r->messages);
      }
      for (const auto& [pred_name, unused] : rs.front()->predictions) {
        std::vector<double> p;
        for (const auto* r : rs) p.push_back(eval::clamp_unit(r->predictions.at(pred_name)));
        emit("pred_" + safe_name(sub) + "_" + pred_name,
             eval::joint_density(y, p, config_.scatter_points, seed, sizes, ids));
      }
    }
    return written;
  });
}

std::vector<StageResult> Pipeline::run(const std::function<void(const StageResult&)>& on_stage) {
  std::vector<StageResult> out;
  auto step = [&](StageResult r) {
    if (on_stage) on_stage(r);
    out.push_back(std::move(r));
  };
  step(ingest());
  step(stats());
  step(select());
  step(score());
  step(embed());
  step(split());
  if (config_.gridsearch) step(gridsearch());
  step(train());
  step(baselines());
  step(evaluate());
  step(export_plots());
  return out;
}

}  // namespace toneshift::pipeline
