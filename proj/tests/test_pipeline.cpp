#include <catch_amalgamated.hpp>

#include <filesystem>

#include "toneshift/corpus.hpp"
#include "toneshift/digest.hpp"
#include "toneshift/error.hpp"
#include "toneshift/eval.hpp"
#include "toneshift/pipeline.hpp"
#include "toneshift/synth.hpp"
#include "toneshift/threadsel.hpp"
#include "toneshift/tone.hpp"

using namespace toneshift;
namespace fs = std::filesystem;

namespace {

const fs::path kFixture = fs::path(TONESHIFT_FIXTURE_DIR) / "synthetic_50.jsonl";

pipeline::PipelineConfig small_config(const std::string& name) {
  pipeline::PipelineConfig cfg;
  cfg.work_dir = fs::temp_directory_path() / ("toneshift_pipeline_" + name);
  fs::remove_all(cfg.work_dir);
  cfg.inputs = {kFixture.string()};
  cfg.seed = 1;
  cfg.train.max_epochs = 2;
  return cfg;
}

std::vector<std::string> files_under(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), dir).string());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_CASE("synthetic dump matches its own tallies", "[pipeline][synth]") {
  auto dump = synth::generate_dump({});
  CHECK(dump.records.size() == 330);
  CHECK(json::parse(read_file(fs::path(TONESHIFT_FIXTURE_DIR) / "synthetic_50.tallies.json")) ==
        dump.tallies.to_json());
  std::string lines;
  for (const auto& r : dump.records) lines += r.dump() + "\n";
  CHECK(sha256_hex(lines) == sha256_file_hex(kFixture));

  corpus::IngestOptions opt;
  opt.inputs = {kFixture};
  auto corpus = corpus::ingest(opt);
  CHECK(corpus.malformed == 0);
  CHECK(corpus.orphan_count == 0);
  auto stats = corpus::descriptive_stats(corpus.threads);
  for (const auto& [sub, t] : dump.tallies.by_subreddit) {
    const auto& s = stats.by_subreddit.at(sub);
    CHECK(s.threads == t.threads);
    CHECK(s.comments == t.comments);
    CHECK(s.unique_users == t.unique_users);
    CHECK(s.posting_users == t.posting_users);
    CHECK(s.commenters == t.commenters);
  }
  auto sel = threadsel::select_all(corpus.threads);
  CHECK(sel.segments.size() == dump.tallies.kept);
  for (const auto& [reason, n] : sel.rejection_counts())
    CHECK(n == (dump.tallies.rejected.count(reason) ? dump.tallies.rejected.at(reason) : 0));

  // Same seed, same dump.
  CHECK(synth::generate_dump({}).records == dump.records);
  synth::DumpOptions other;
  other.seed = 9;
  CHECK(synth::generate_dump(other).records != dump.records);
}

TEST_CASE("signal target", "[pipeline][synth]") {
  std::vector<double> t{0.2, -0.4, 0.6};
  double mean = (0.2 - 0.4 + 0.6) / 3;
  CHECK(synth::signal_target(t) == Catch::Approx(0.6 * 0.6 + 0.4 * mean + 0.25 * (0.6 + 0.4)));
  CHECK(synth::signal_target(std::vector<double>{1, 1, 1}) == 1.0);
  CHECK(synth::signal_target(std::vector<double>{-1, 1}) == 1.0);
  CHECK(synth::signal_target(std::vector<double>{0.5}) == Catch::Approx(0.5));
  // Order matters.
  CHECK(synth::signal_target(std::vector<double>{0.6, 0.2, -0.4}) != synth::signal_target(t));
  CHECK_THROWS_AS(synth::signal_target(std::vector<double>{}), InvalidArgument);

  auto segs = synth::generate_segments(20, 4);
  CHECK(segs.size() == 20);
  for (const auto& s : segs) {
    CHECK(s.messages.size() >= 2);
    CHECK(s.messages.size() <= 12);
    CHECK(s.messages.front().is_post_author);
  }
}

TEST_CASE("end-to-end run on the synthetic fixture", "[pipeline]") {
  auto cfg = small_config("a");
  pipeline::Pipeline p(cfg);
  auto stages = p.run();
  CHECK(stages.size() == 10);
  for (const auto& s : stages) {
    CHECK_FALSE(s.skipped);
    CHECK(s.manifest["seed"] == 1);
  }
  auto report = eval::EvaluationReport::from_json(read_json_file(p.path("report.json")));
  CHECK(report.predictors == std::vector<std::string>{"UNCHANGED", "MEAN", "LAST", "XGB", "MODEL"});
  CHECK(report.cell("ALL", "MODEL")->count > 0);
  CHECK(read_file(p.path("report.txt")) == report.render());
  CHECK(fs::exists(p.path("plots/tone_ALL_post_last.grid.csv")));
  CHECK(fs::exists(p.path("plots/characterization.txt")));

  // The checkpoint knows what it was trained with.
  auto ck = model::load_checkpoint(p.path("model.ckpt"));
  CHECK(ck.metadata["provider_id"] == p.provider().provider_id());
  CHECK(ck.metadata["lexicon_checksum"] == std::string(tone::kLexiconSha256));
  CHECK(ck.metadata["seed"] == 1);

  // Each manifest names the checksums of the previous stage's outputs.
  auto select = read_json_file(p.path("manifests/select.json"));
  auto ingest = read_json_file(p.path("manifests/ingest.json"));
  CHECK(select["inputs"]["corpus.jsonl"] == ingest["outputs"]["corpus.jsonl"]);

  SECTION("rerun skips everything") {
    pipeline::Pipeline again(cfg);
    for (const auto& s : again.run()) CHECK(s.skipped);
  }
  SECTION("changed settings rerun only what depends on them") {
    auto changed = cfg;
    changed.train.max_epochs = 3;
    pipeline::Pipeline again(changed);
    std::map<std::string, bool> skipped;
    for (const auto& s : again.run()) skipped[s.stage] = s.skipped;
    CHECK(skipped["embed"]);
    CHECK(skipped["baselines"]);
    CHECK_FALSE(skipped["train"]);
    CHECK_FALSE(skipped["evaluate"]);
  }
  SECTION("a damaged output reruns its stage") {
    write_file_atomic(p.path("split.json"), "{}");
    pipeline::Pipeline again(cfg);
    CHECK_FALSE(again.split().skipped);
    CHECK(again.train().skipped);
  }
}

TEST_CASE("same seed gives byte-identical outputs", "[pipeline]") {
  auto a = small_config("det_a");
  auto b = small_config("det_b");
  pipeline::Pipeline(a).run();
  pipeline::Pipeline(b).run();
  auto fa = files_under(a.work_dir);
  REQUIRE(fa == files_under(b.work_dir));
  for (const auto& f : fa) {
    if (f == "manifests/ingest.json" || f == "ingest.json") continue;  // hold input paths
    INFO(f);
    CHECK(read_file(a.work_dir / f) == read_file(b.work_dir / f));
  }
}

TEST_CASE("subreddit filter applies before the split", "[pipeline]") {
  auto cfg = small_config("sub");
  cfg.subreddit = "lonely";
  pipeline::Pipeline p(cfg);
  p.ingest();
  p.select();
  p.score();
  p.split();
  auto spec = train::SplitSpec::from_json(read_json_file(p.path("split.json")));
  size_t lonely = 0;
  for (const auto& s : threadsel::read_segments(p.path("scored.jsonl"))) {
    if (s.subreddit == "lonely") {
      ++lonely;
      CHECK(spec.assignment.count(s.segment_id) == 1);
    } else {
      CHECK(spec.assignment.count(s.segment_id) == 0);
    }
  }
  CHECK(spec.assignment.size() == lonely);

  auto none = small_config("sub_none");
  none.subreddit = "nowhere";
  pipeline::Pipeline q(none);
  q.ingest();
  q.select();
  q.score();
  try {
    q.split();
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::empty_training_set);
    CHECK(std::string(e.what()).rfind("stage split:", 0) == 0);
  }
}

TEST_CASE("pipeline config", "[pipeline]") {
  pipeline::PipelineConfig cfg;
  cfg.merge(json::parse(R"({"seed": 5, "model": {"fc_out": 14}, "train": {"max_epochs": 4, "loss": "mse"},
                            "subreddit": "ANX"})"));
  CHECK(cfg.seed == 5);
  CHECK(cfg.model.fc_out == 14);
  CHECK(cfg.model.num_layers == 2);
  CHECK(cfg.train.max_epochs == 4);
  CHECK(cfg.train.batch_size == 32);
  CHECK(cfg.train.loss == train::Loss::mse);
  CHECK(*cfg.subreddit == "ANX");
  CHECK_THROWS_AS(cfg.merge(json::parse(R"({"sed": 1})")), InvalidArgument);
  CHECK_THROWS_AS(cfg.merge(json::parse(R"({"seed": "x"})")), InvalidArgument);
  pipeline::PipelineConfig back;
  back.merge(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());

  auto missing = small_config("missing");
  pipeline::Pipeline p(missing);
  CHECK_THROWS_AS(p.train(), IoFailure);
}
