#include <catch_amalgamated.hpp>
#include <httplib.h>

#include <filesystem>
#include <fstream>
#include <future>

#include "toneshift/error.hpp"
#include "toneshift/serve.hpp"

using namespace toneshift;
using namespace toneshift::serve;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  std::shared_ptr<const tone::VaderScorer> scorer =
      std::make_shared<tone::VaderScorer>(tone::Lexicon::bundled(), tone::emt_options());
  std::shared_ptr<const embed::Embedder> provider = std::make_shared<embed::HashEmbedder>(7, 64);

  model::Checkpoint checkpoint(size_t fc_out = 6) const {
    model::ModelConfig cfg;
    cfg.fc_out = fc_out;
    cfg.embed_dim = provider->dim();
    model::Params p(cfg);
    Rng rng(3);
    p.init_uniform(rng);
    auto q = model::quantize_float32(p);
    json meta{{"provider_id", provider->provider_id()}, {"lexicon_checksum", scorer->lexicon().checksum()}};
    return {q, meta, model::model_id_of(q)};
  }
};

PredictRequest request(size_t n, bool draft = false) {
  PredictRequest r;
  r.post_author = "op";
  const char* texts[] = {"I feel awful today and nobody cares.", "Hang in there, you matter!",
                         "Thanks, that actually helps a bit.", "Have you tried talking to someone?"};
  for (size_t i = 0; i < n; ++i)
    r.messages.push_back({texts[i % 4], i % 2 == 0 ? "op" : "helper" + std::to_string(i), int64_t(1000 + i)});
  if (draft) r.draft = Draft{"You are not alone. We are here for you.", false};
  return r;
}

fs::path temp_path(const std::string& name) {
  auto dir = fs::temp_directory_path() / "toneshift_serve_test";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("request schema", "[serve]") {
  auto j = json::parse(R"({
    "messages": [{"text": "hello", "author": "op", "created_utc": 5}, {"text": "hi", "author": "b"}],
    "post_author": "op",
    "draft": {"text": "good luck", "as_post_author": true}
  })");
  auto r = PredictRequest::from_json(j);
  CHECK(r.messages.size() == 2);
  CHECK(r.messages[0].created_utc == 5);
  CHECK(r.messages[1].created_utc == 0);
  REQUIRE(r.draft);
  CHECK(r.draft->as_post_author);
  CHECK(PredictRequest::from_json(r.to_json()).to_json() == r.to_json());

  CHECK_THROWS_AS(PredictRequest::from_json(json::parse(R"({"messages": []})")), EmptyRequest);
  CHECK_THROWS_AS(PredictRequest::from_json(json::parse(R"({"post_author": "x"})")), EmptyRequest);
  CHECK_THROWS_AS(PredictRequest::from_json(json::parse(R"({"messages": "nope"})")), MalformedRecord);
  CHECK_THROWS_AS(PredictRequest::from_json(json::parse(R"({"messages": [{"author": "a"}]})")), MalformedRecord);
  CHECK_THROWS_AS(PredictRequest::from_json(json::parse(R"({"messages": [{"text": 3}]})")), MalformedRecord);
  CHECK_THROWS_AS(PredictRequest::from_json(json::parse("[1]")), MalformedRecord);

  // post_author defaults to the first message's author.
  auto d = PredictRequest::from_json(json::parse(R"({"messages": [{"text": "x", "author": "z"}]})"));
  CHECK(d.post_author == "z");
  CHECK_FALSE(d.draft);

  PredictResponse resp{0.25, {0.1, -0.2}, "m-1", 3.5, false};
  auto rj = resp.to_json();
  std::set<std::string> keys;
  for (auto it = rj.begin(); it != rj.end(); ++it) keys.insert(it.key());
  CHECK(keys == std::set<std::string>{"predicted_emt", "per_message_emt", "model_id", "latency_ms", "truncated"});
  auto back = PredictResponse::from_json(rj);
  CHECK(back.per_message_emt == resp.per_message_emt);
  CHECK(back.model_id == "m-1");
}

TEST_CASE("prediction service", "[serve]") {
  Fixture f;
  PredictionService svc(f.scorer, f.provider);
  CHECK_FALSE(svc.loaded());
  CHECK_THROWS_AS(svc.predict(request(2)), ModelNotLoaded);
  auto h0 = svc.health();
  CHECK(h0["status"] == "degraded");
  CHECK(h0["model_id"] == "");
  CHECK(h0["provider_id"] == f.provider->provider_id());

  auto ck = f.checkpoint();
  auto path = temp_path("ok.ckpt");
  model::save_checkpoint(path, ck.params, ck.metadata);
  svc.load(path);
  auto h1 = svc.health();
  CHECK(h1["status"] == "ok");
  CHECK(h1["model_id"] == ck.model_id);
  CHECK(h1["lexicon_checksum"] == std::string(tone::kLexiconSha256));
  CHECK(h1["reasons"].empty());
  CHECK(h1["uptime_s"].get<double>() >= 0);

  // One message and no draft.
  auto one = svc.predict(request(1));
  CHECK(one.per_message_emt.size() == 1);
  CHECK(one.predicted_emt >= -1);
  CHECK(one.predicted_emt <= 1);
  CHECK(one.model_id == ck.model_id);
  CHECK_FALSE(one.truncated);

  // Per-message tone is the scorer's, draft appended last.
  auto req = request(5, true);
  auto a = svc.predict(req);
  REQUIRE(a.per_message_emt.size() == 6);
  for (size_t i = 0; i < 5; ++i) CHECK(a.per_message_emt[i] == f.scorer->score(req.messages[i].text).compound);
  CHECK(a.per_message_emt[5] == f.scorer->score(req.draft->text).compound);

  // Matches a direct forward pass over the same inputs.
  model::FeatureSequence seq;
  seq.embed_dim = f.provider->dim();
  for (size_t i = 0; i < 5; ++i)
    seq.push(f.provider->embed(req.messages[i].text).vector, a.per_message_emt[i], req.messages[i].author == "op");
  seq.push(f.provider->embed(req.draft->text).vector, a.per_message_emt[5], false);
  model::Regressor reg(ck.params.config());
  CHECK(a.predicted_emt == std::clamp(reg.forward(ck.params, seq), -1.0, 1.0));

  // The author flag on the draft changes the input.
  auto as_author = req;
  as_author.draft->as_post_author = true;
  CHECK(svc.predict(as_author).predicted_emt != a.predicted_emt);

  // Deterministic.
  auto b = svc.predict(req);
  CHECK(b.predicted_emt == a.predicted_emt);
  CHECK(b.per_message_emt == a.per_message_emt);

  // Oversized threads keep their first 64 messages.
  auto big = svc.predict(request(70, true));
  CHECK(big.truncated);
  CHECK(big.per_message_emt.size() == 64);
  CHECK(big.predicted_emt == svc.predict(request(64)).predicted_emt);

  CHECK_THROWS_AS(svc.predict(PredictRequest{}), EmptyRequest);
}

TEST_CASE("checkpoint compatibility", "[serve]") {
  Fixture f;
  PredictionService svc(f.scorer, f.provider);
  auto ck = f.checkpoint();

  auto other = ck;
  other.metadata["provider_id"] = "hash-v1:seed=8:dim=64";
  CHECK_THROWS_AS(svc.load(other), ProviderMismatch);
  CHECK_FALSE(svc.loaded());

  auto path = temp_path("broken.ckpt");
  {
    std::ofstream out(path, std::ios::binary);
    out << "TSCKPT01garbage";
  }
  CHECK_THROWS_AS(svc.load(path), CheckpointInvalid);

  // A lexicon that differs from the one used in training.
  auto stale = ck;
  stale.metadata["lexicon_checksum"] = std::string(64, '0');
  svc.load(stale);
  auto h = svc.health();
  CHECK(h["status"] == "degraded");
  CHECK(h["reasons"].size() == 1);
}

TEST_CASE("corrupt lexicon degrades health", "[serve]") {
  auto dir = temp_path("lexicon");
  fs::create_directories(dir);
  fs::path src = data_dir();
  fs::copy_file(src / "lexicon" / "emoji_utf8_lexicon.txt", dir / "emoji.txt", fs::copy_options::overwrite_existing);
  {
    std::ifstream in(src / "lexicon" / "vader_lexicon.txt", std::ios::binary);
    std::ofstream out(dir / "lex.txt", std::ios::binary);
    out << in.rdbuf() << "zzzz\t1.0\t0.5\t[1, 1]\n";
  }
  auto lex = std::make_shared<tone::Lexicon>(tone::Lexicon::load(dir / "lex.txt", dir / "emoji.txt"));
  CHECK_FALSE(lex->matches_pinned());
  Fixture f;
  auto scorer = std::make_shared<tone::VaderScorer>(lex, tone::emt_options());
  PredictionService svc(scorer, f.provider);
  auto ck = f.checkpoint();
  ck.metadata.erase("lexicon_checksum");
  svc.load(ck);
  auto h = svc.health();
  CHECK(h["status"] == "degraded");
  CHECK(h["lexicon_checksum"] != std::string(tone::kLexiconSha256));
  CHECK(h["reasons"].dump().find("pinned") != std::string::npos);
}

TEST_CASE("concurrent requests", "[serve]") {
  Fixture f;
  auto cache_path = temp_path("storm.cache");
  fs::remove(cache_path);
  fs::remove(cache_path.string() + ".idx");
  embed::EmbeddingCache cache(cache_path, f.provider->dim(), embed::EmbeddingCache::Mode::read_write);
  PredictionService svc(f.scorer, f.provider, &cache);
  auto ck = f.checkpoint();
  svc.load(ck);
  auto before = ck.params.values();

  std::vector<PredictRequest> reqs;
  std::vector<double> expected;
  for (size_t n = 1; n <= 8; ++n) {
    reqs.push_back(request(n, n % 2 == 0));
    expected.push_back(svc.predict(reqs.back()).predicted_emt);
  }
  std::vector<std::future<bool>> jobs;
  for (int t = 0; t < 8; ++t)
    jobs.push_back(std::async(std::launch::async, [&, t] {
      bool ok = true;
      for (int k = 0; k < 25; ++k) {
        size_t i = (t * 7 + k) % reqs.size();
        ok = ok && svc.predict(reqs[i]).predicted_emt == expected[i];
      }
      return ok;
    }));
  for (auto& j : jobs) CHECK(j.get());
  CHECK(ck.params.values() == before);
}

TEST_CASE("64-message latency", "[serve]") {
  Fixture f;
  auto provider = std::make_shared<embed::HashEmbedder>(7, embed::kEmbeddingDim);
  auto cache_path = temp_path("latency.cache");
  fs::remove(cache_path);
  fs::remove(cache_path.string() + ".idx");
  embed::EmbeddingCache cache(cache_path, provider->dim(), embed::EmbeddingCache::Mode::read_write);
  PredictionService svc(f.scorer, provider, &cache);
  model::ModelConfig cfg;
  model::Params p(cfg);
  Rng rng(1);
  p.init_uniform(rng);
  svc.load(model::Checkpoint{p, json{{"provider_id", provider->provider_id()}}, model::model_id_of(p)});
  auto req = request(64);
  svc.predict(req);  // warm the cache
  std::vector<double> ms;
  for (int i = 0; i < 15; ++i) ms.push_back(svc.predict(req).latency_ms);
  std::sort(ms.begin(), ms.end());
  CHECK(ms[ms.size() / 2] <= 50.0);
}

TEST_CASE("http endpoints", "[serve]") {
  Fixture f;
  auto svc = std::make_shared<PredictionService>(f.scorer, f.provider);
  Server server(svc);
  int port = server.start("127.0.0.1", 0);
  REQUIRE(port > 0);
  httplib::Client client("127.0.0.1", port);

  auto health = client.Get("/v1/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(json::parse(health->body)["status"] == "degraded");
  CHECK(health->get_header_value("Access-Control-Allow-Origin") == "*");

  auto body = request(3, true).to_json().dump();
  auto unloaded = client.Post("/v1/predict", body, "application/json");
  REQUIRE(unloaded);
  CHECK(unloaded->status == 503);
  CHECK(json::parse(unloaded->body)["error"] == "ModelNotLoaded");

  svc->load(f.checkpoint());
  auto ok = client.Post("/v1/predict", body, "application/json");
  REQUIRE(ok);
  CHECK(ok->status == 200);
  auto resp = PredictResponse::from_json(json::parse(ok->body));
  CHECK(resp.per_message_emt.size() == 4);
  CHECK(resp.predicted_emt == svc->predict(request(3, true)).predicted_emt);

  auto bad = client.Post("/v1/predict", "{not json", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  auto empty = client.Post("/v1/predict", R"({"messages": []})", "application/json");
  REQUIRE(empty);
  CHECK(empty->status == 400);
  CHECK(json::parse(empty->body)["error"] == "EmptyRequest");

  auto pre = client.Options("/v1/predict");
  REQUIRE(pre);
  CHECK(pre->status == 204);
  CHECK(client.Get("/v1/nothing")->status == 404);
  server.stop();
}
