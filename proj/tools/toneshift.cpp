// Command-line entry point: one subcommand per pipeline stage, plus `run`,
// `serve` and `synth`.

#include <CLI11.hpp>

#include <csignal>
#include <iostream>

#include "toneshift/error.hpp"
#include "toneshift/pipeline.hpp"
#include "toneshift/serve.hpp"
#include "toneshift/synth.hpp"
#include "toneshift/tone.hpp"

using namespace toneshift;
namespace fs = std::filesystem;

namespace {

struct Flags {
  std::string config_file;
  std::string work_dir;
  std::vector<std::string> inputs;
  std::string provider;
  uint64_t provider_seed = 0;
  std::string model_dir;
  uint64_t seed = 0;
  std::string subreddit;
  std::string grid_file;
  size_t workers = 1;
  // model and training
  size_t fc_out = 62;
  size_t layers = 2;
  bool bidirectional = false;
  double dropout = 0;
  size_t epochs = 20;
  size_t batch_size = 32;
  size_t patience = 3;
  double lr = 1e-3;
  std::string loss;
  bool gridsearch = false;
  bool gbt_search = false;
  size_t scatter_points = 100;
};

void report(const pipeline::StageResult& r) {
  std::cout << r.stage << ": " << (r.skipped ? "up to date" : "done") << "\n";
}

int serve_main(const std::string& checkpoint, const std::string& host, int port, const std::string& provider_name,
               uint64_t provider_seed, const std::string& model_dir, const std::string& cache_path) {
  // Block the stop signals before any thread starts so only sigwait sees them.
  sigset_t stop;
  sigemptyset(&stop);
  sigaddset(&stop, SIGINT);
  sigaddset(&stop, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop, nullptr);

  auto scorer = std::make_shared<tone::VaderScorer>(tone::Lexicon::bundled(), tone::emt_options());
  std::shared_ptr<const embed::Embedder> provider = embed::make_embedder(provider_name, provider_seed, model_dir);
  std::unique_ptr<embed::EmbeddingCache> cache;
  if (!cache_path.empty())
    cache = std::make_unique<embed::EmbeddingCache>(cache_path, provider->dim(), embed::EmbeddingCache::Mode::read_write);
  auto service = std::make_shared<serve::PredictionService>(scorer, provider, cache.get());
  service->load(fs::path(checkpoint));
  serve::Server server(service);
  int bound = server.start(host, port);
  std::cout << "serving " << service->health()["model_id"].get<std::string>() << " on http://" << host << ":" << bound
            << std::endl;
  int sig = 0;
  sigwait(&stop, &sig);
  server.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Predicts the emotional tone of a thread author's final comment."};
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;

  auto* o_config = app.add_option("--config", f.config_file, "JSON pipeline configuration")->check(CLI::ExistingFile);
  auto* o_seed = app.add_option("--seed", f.seed, "Seed for every random choice");
  auto* o_work = app.add_option("--work-dir", f.work_dir, "Directory for stage outputs");
  auto* o_provider = app.add_option("--provider", f.provider, "Embedding provider")
                         ->check(CLI::IsMember({"hash", "transformer"}));
  auto* o_pseed = app.add_option("--provider-seed", f.provider_seed, "Seed of the hash provider");
  auto* o_model_dir = app.add_option("--model-dir", f.model_dir, "Transformer asset directory");
  auto* o_sub = app.add_option("--subreddit", f.subreddit, "Keep only this community before the split");
  auto* o_workers = app.add_option("--workers", f.workers, "Worker threads")->check(CLI::PositiveNumber);
  auto* o_inputs = app.add_option("--input", f.inputs, "Forum dump files or glob patterns");
  auto* o_fc = app.add_option("--fc-out", f.fc_out, "Output size of the first layer");
  auto* o_layers = app.add_option("--layers", f.layers, "Stacked GRU layers");
  auto* o_bi = app.add_flag("--bidirectional", f.bidirectional, "Bidirectional GRU");
  auto* o_drop = app.add_option("--dropout", f.dropout, "Dropout between GRU layers");
  auto* o_epochs = app.add_option("--epochs", f.epochs, "Maximum training epochs");
  auto* o_batch = app.add_option("--batch-size", f.batch_size, "Minibatch size");
  auto* o_pat = app.add_option("--patience", f.patience, "Early-stopping patience in epochs");
  auto* o_lr = app.add_option("--lr", f.lr, "Adam learning rate");
  auto* o_loss = app.add_option("--loss", f.loss, "Training loss")->check(CLI::IsMember({"weighted_l1", "l1", "mse"}));
  auto* o_grid = app.add_option("--grid", f.grid_file, "JSON grid overriding the default search space")
                     ->check(CLI::ExistingFile);
  auto* o_gs = app.add_flag("--gridsearch", f.gridsearch, "Train the best configuration of the grid search");
  auto* o_gbt = app.add_flag("--gbt-search", f.gbt_search, "Search the tree-ensemble grid");
  auto* o_scatter = app.add_option("--scatter-points", f.scatter_points, "Sampled points per plot");

  auto* c_ingest = app.add_subcommand("ingest", "Parse forum dumps into the canonical corpus");
  auto* c_stats = app.add_subcommand("stats", "Per-community descriptive statistics");
  auto* c_select = app.add_subcommand("select", "Extract thread segments");
  auto* c_score = app.add_subcommand("score", "Score the tone of every message");
  auto* c_embed = app.add_subcommand("embed", "Embed every message into the cache");
  auto* c_split = app.add_subcommand("split", "Stratified train/validation/test split");
  auto* c_grid = app.add_subcommand("gridsearch", "Train every grid configuration");
  auto* c_train = app.add_subcommand("train", "Train the regressor");
  auto* c_base = app.add_subcommand("baselines", "Fit and apply the reference predictors");
  auto* c_eval = app.add_subcommand("evaluate", "Score every predictor on the test split");
  auto* c_plots = app.add_subcommand("export-plots", "Kernel density grids and sampled points");
  auto* c_run = app.add_subcommand("run", "Every stage in order, skipping those already up to date");

  auto* c_serve = app.add_subcommand("serve", "HTTP prediction service");
  std::string checkpoint, host = "127.0.0.1", cache_path;
  int port = 8080;
  c_serve->add_option("--checkpoint", checkpoint, "Trained model")->required()->check(CLI::ExistingFile);
  c_serve->add_option("--host", host, "Address to bind");
  c_serve->add_option("--port", port, "Port, 0 for any free port");
  c_serve->add_option("--cache", cache_path, "Embedding cache shared across requests");

  auto* c_synth = app.add_subcommand("synth", "Write a synthetic forum dump");
  size_t synth_threads = 50;
  std::string synth_out, synth_tallies;
  c_synth->add_option("--threads", synth_threads, "Threads to generate");
  c_synth->add_option("--out", synth_out, "Output dump file")->required();
  c_synth->add_option("--tallies", synth_tallies, "Where to write the generator's own counts");

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_synth->parsed()) {
      synth::DumpOptions opt;
      opt.threads = synth_threads;
      opt.seed = f.seed;
      auto dump = synth::generate_dump(opt);
      write_jsonl(synth_out, dump.records);
      if (!synth_tallies.empty()) write_json_file(synth_tallies, dump.tallies.to_json());
      std::cout << "wrote " << dump.records.size() << " records\n";
      return 0;
    }
    if (c_serve->parsed()) {
      return serve_main(checkpoint, host, port, f.provider.empty() ? "hash" : f.provider, f.provider_seed,
                        f.model_dir, cache_path);
    }

    pipeline::PipelineConfig cfg;
    if (*o_config) cfg.merge(read_json_file(f.config_file));
    if (*o_seed) cfg.seed = f.seed;
    if (*o_work) cfg.work_dir = f.work_dir;
    if (*o_provider) cfg.provider = f.provider;
    if (*o_pseed) cfg.provider_seed = f.provider_seed;
    if (*o_model_dir) cfg.model_dir = f.model_dir;
    if (*o_sub) cfg.subreddit = f.subreddit;
    if (*o_workers) cfg.workers = f.workers;
    if (*o_inputs) cfg.inputs = f.inputs;
    if (*o_fc) cfg.model.fc_out = f.fc_out;
    if (*o_layers) cfg.model.num_layers = f.layers;
    if (*o_bi) cfg.model.bidirectional = f.bidirectional;
    if (*o_drop) cfg.model.dropout = f.dropout;
    if (*o_epochs) cfg.train.max_epochs = f.epochs;
    if (*o_batch) cfg.train.batch_size = f.batch_size;
    if (*o_pat) cfg.train.patience = f.patience;
    if (*o_lr) cfg.train.adam.lr = f.lr;
    if (*o_loss) cfg.train.loss = train::parse_loss(f.loss);
    if (*o_grid) cfg.grid_file = f.grid_file;
    if (*o_gs) cfg.gridsearch = f.gridsearch;
    if (*o_gbt) cfg.gbt_search = f.gbt_search;
    if (*o_scatter) cfg.scatter_points = f.scatter_points;
    cfg.model.validate();
    cfg.train.validate();

    pipeline::Pipeline p(cfg);
    if (c_run->parsed()) {
      p.run(report);
      std::cout << "report: " << p.path("report.txt").string() << "\n";
    } else if (c_ingest->parsed()) {
      report(p.ingest());
    } else if (c_stats->parsed()) {
      report(p.stats());
      std::cout << read_file(p.path("stats.txt"));
    } else if (c_select->parsed()) {
      report(p.select());
    } else if (c_score->parsed()) {
      report(p.score());
    } else if (c_embed->parsed()) {
      report(p.embed());
    } else if (c_split->parsed()) {
      report(p.split());
    } else if (c_grid->parsed()) {
      report(p.gridsearch());
    } else if (c_train->parsed()) {
      report(p.train());
    } else if (c_base->parsed()) {
      report(p.baselines());
    } else if (c_eval->parsed()) {
      report(p.evaluate());
      std::cout << read_file(p.path("report.txt"));
    } else if (c_plots->parsed()) {
      report(p.export_plots());
    }
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
