#include "toneshift/serve.hpp"

#include <httplib.h>

#include <mutex>

#include "toneshift/error.hpp"
#include "toneshift/features.hpp"

namespace toneshift::serve {

namespace {

template <class T>
T field(const json& j, const char* name, T fallback, bool required = false) {
  if (!j.contains(name) || j[name].is_null()) {
    if (required) throw MalformedRecord(std::string("request is missing '") + name + "'");
    return fallback;
  }
  try {
    return j[name].get<T>();
  } catch (const json::exception&) {
    throw MalformedRecord(std::string("request field '") + name + "' has the wrong type");
  }
}

}  // namespace

PredictRequest PredictRequest::from_json(const json& j) {
  if (!j.is_object()) throw MalformedRecord("request body must be a JSON object");
  PredictRequest r;
  if (!j.contains("messages") || j["messages"].is_null()) throw EmptyRequest("request has no messages");
  if (!j["messages"].is_array()) throw MalformedRecord("'messages' must be an array");
  for (const auto& m : j["messages"]) {
    if (!m.is_object()) throw MalformedRecord("each message must be an object");
    r.messages.push_back({field<std::string>(m, "text", "", true), field<std::string>(m, "author", ""),
                          field<int64_t>(m, "created_utc", 0)});
  }
  if (r.messages.empty()) throw EmptyRequest("request has no messages");
  r.post_author = field<std::string>(j, "post_author", r.messages.front().author);
  if (j.contains("draft") && !j["draft"].is_null()) {
    const auto& d = j["draft"];
    if (d.is_string()) {
      r.draft = Draft{d.get<std::string>(), false};
    } else if (d.is_object()) {
      r.draft = Draft{field<std::string>(d, "text", "", true), field<bool>(d, "as_post_author", false)};
    } else {
      throw MalformedRecord("'draft' must be an object");
    }
  }
  return r;
}

json PredictRequest::to_json() const {
  json msgs = json::array();
  for (const auto& m : messages) msgs.push_back({{"text", m.text}, {"author", m.author}, {"created_utc", m.created_utc}});
  json j{{"messages", msgs}, {"post_author", post_author}};
  if (draft) j["draft"] = {{"text", draft->text}, {"as_post_author", draft->as_post_author}};
  return j;
}

json PredictResponse::to_json() const {
  return {{"predicted_emt", predicted_emt},
          {"per_message_emt", per_message_emt},
          {"model_id", model_id},
          {"latency_ms", latency_ms},
          {"truncated", truncated}};
}

PredictResponse PredictResponse::from_json(const json& j) {
  PredictResponse r;
  r.predicted_emt = j.at("predicted_emt").get<double>();
  j.at("per_message_emt").get_to(r.per_message_emt);
  r.model_id = j.at("model_id").get<std::string>();
  r.latency_ms = j.at("latency_ms").get<double>();
  r.truncated = j.value("truncated", false);
  return r;
}

// ---------------------------------------------------------------------------

PredictionService::PredictionService(std::shared_ptr<const tone::VaderScorer> scorer,
                                     std::shared_ptr<const embed::Embedder> provider, embed::EmbeddingCache* cache)
    : scorer_(std::move(scorer)), provider_(std::move(provider)), cache_(cache),
      started_(std::chrono::steady_clock::now()) {
  if (!scorer_ || !provider_) throw InvalidArgument("service needs a tone scorer and an embedding provider");
}

void PredictionService::load(const std::filesystem::path& checkpoint) { load(model::load_checkpoint(checkpoint)); }

void PredictionService::load(model::Checkpoint checkpoint) {
  const auto& meta = checkpoint.metadata;
  std::string trained_provider = meta.value("provider_id", "");
  if (!trained_provider.empty() && trained_provider != provider_->provider_id())
    throw ProviderMismatch("checkpoint was trained with " + trained_provider + " but the service uses " +
                           provider_->provider_id());
  if (checkpoint.params.config().embed_dim != provider_->dim())
    throw DimensionMismatch("checkpoint expects " + std::to_string(checkpoint.params.config().embed_dim) +
                            "-dimensional embeddings");
  std::vector<std::string> reasons;
  std::string trained_lexicon = meta.value("lexicon_checksum", "");
  if (!trained_lexicon.empty() && trained_lexicon != scorer_->lexicon().checksum())
    reasons.push_back("lexicon checksum differs from the one recorded at training time");
  auto ptr = std::make_shared<const model::Checkpoint>(std::move(checkpoint));
  std::unique_lock lock(mu_);
  model_ = std::move(ptr);
  load_reasons_ = std::move(reasons);
}

bool PredictionService::loaded() const {
  std::shared_lock lock(mu_);
  return model_ != nullptr;
}

PredictResponse PredictionService::predict(const PredictRequest& request) const {
  auto t0 = std::chrono::steady_clock::now();
  std::shared_ptr<const model::Checkpoint> m;
  {
    std::shared_lock lock(mu_);
    m = model_;
  }
  if (!m) throw ModelNotLoaded("no model is loaded");
  if (request.messages.empty()) throw EmptyRequest("request has no messages");

  struct Item {
    const std::string* text;
    bool is_author;
  };
  std::vector<Item> items;
  for (size_t i = 0; i < request.messages.size(); ++i)
    items.push_back({&request.messages[i].text, i == 0 || request.messages[i].author == request.post_author});
  if (request.draft) items.push_back({&request.draft->text, request.draft->as_post_author});

  PredictResponse r;
  const size_t cap = m->params.config().seq_cap;
  r.truncated = items.size() > cap;
  if (r.truncated) items.resize(cap);

  auto source = features::EmbeddingSource::from(*provider_, cache_);
  model::FeatureSequence seq;
  seq.id = "request";
  seq.embed_dim = provider_->dim();
  for (const auto& it : items) {
    double emt = scorer_->score(*it.text).compound;
    r.per_message_emt.push_back(emt);
    seq.push(source.get(*it.text), emt, it.is_author);
  }
  model::Regressor reg(m->params.config());
  double y = reg.forward(m->params, seq);
  r.predicted_emt = std::clamp(y, -1.0, 1.0);
  r.model_id = m->model_id;
  r.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

json PredictionService::health() const {
  std::shared_ptr<const model::Checkpoint> m;
  std::vector<std::string> reasons;
  {
    std::shared_lock lock(mu_);
    m = model_;
    reasons = load_reasons_;
  }
  const auto& lex = scorer_->lexicon();
  if (!m) reasons.insert(reasons.begin(), "no model loaded");
  if (!lex.matches_pinned()) reasons.push_back("lexicon checksum does not match the pinned value");
  double uptime = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
  return {{"status", reasons.empty() ? "ok" : "degraded"},
          {"model_id", m ? m->model_id : ""},
          {"lexicon_checksum", lex.checksum()},
          {"provider_id", provider_->provider_id()},
          {"uptime_s", uptime},
          {"reasons", reasons}};
}

// ---------------------------------------------------------------------------

struct Server::Impl {
  std::shared_ptr<PredictionService> service;
  httplib::Server http;
  std::thread thread;
};

namespace {

void send_error(httplib::Response& res, int status, const Error& e) {
  res.status = status;
  res.set_content(json{{"error", std::string(to_string(e.code()))}, {"message", e.what()}}.dump(), "application/json");
}

}  // namespace

Server::Server(std::shared_ptr<PredictionService> service) : impl_(std::make_unique<Impl>()) {
  impl_->service = std::move(service);
  auto& http = impl_->http;
  auto svc = impl_->service;
  http.set_payload_max_length(16 * 1024 * 1024);
  http.set_tcp_nodelay(true);
  http.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                            {"Access-Control-Allow-Headers", "Content-Type"},
                            {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  http.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  http.Get("/v1/health", [svc](const httplib::Request&, httplib::Response& res) {
    res.set_content(svc->health().dump(), "application/json");
  });
  http.Post("/v1/predict", [svc](const httplib::Request& req, httplib::Response& res) {
    try {
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::exception&) {
        throw MalformedRecord("request body is not valid JSON");
      }
      auto out = svc->predict(PredictRequest::from_json(body));
      res.set_content(out.to_json().dump(), "application/json");
    } catch (const ModelNotLoaded& e) {
      send_error(res, 503, e);
    } catch (const Error& e) {
      int status = e.code() == ErrorCode::empty_request || e.code() == ErrorCode::malformed_record ||
                           e.code() == ErrorCode::missing_field
                       ? 400
                       : 500;
      send_error(res, status, e);
    }
  });
}

Server::~Server() { stop(); }

int Server::start(const std::string& host, int port) {
  auto& http = impl_->http;
  int bound = port == 0 ? http.bind_to_any_port(host) : (http.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw IoFailure("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->http.listen_after_bind(); });
  impl_->http.wait_until_ready();
  return bound;
}

void Server::listen(const std::string& host, int port) {
  if (!impl_->http.listen(host, port)) throw IoFailure("cannot serve on " + host + ":" + std::to_string(port));
}

void Server::stop() {
  if (impl_->http.is_running()) impl_->http.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace toneshift::serve
