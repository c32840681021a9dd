#include <catch_amalgamated.hpp>

#include <atomic>
#include <cmath>
#include <fstream>
#include <thread>

#include "toneshift/embed.hpp"
#include "toneshift/error.hpp"
#include "toneshift/io.hpp"

using namespace toneshift;
using namespace toneshift::embed;

namespace {

const std::filesystem::path kTiny = std::filesystem::path(TONESHIFT_FIXTURE_DIR) / "tiny_distilbert";

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("toneshift_embed_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

class CountingEmbedder : public Embedder {
 public:
  explicit CountingEmbedder(std::string id) : inner_(3), id_(std::move(id)) {}
  Embedding embed(std::string_view text) const override {
    ++calls;
    auto e = inner_.embed(text);
    e.provider_id = id_;
    if (id_ != "a") e.vector[0] += 1.0f;
    return e;
  }
  std::string provider_id() const override { return id_; }
  size_t dim() const override { return kEmbeddingDim; }
  mutable std::atomic<int> calls{0};

 private:
  HashEmbedder inner_;
  std::string id_;
};

double norm(const std::vector<float>& v) {
  double s = 0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("hash embedding basics", "[embed]") {
  HashEmbedder h(42);
  auto e = h.embed("I feel a little better today, thanks!");
  CHECK(e.vector.size() == 768);
  CHECK(norm(e.vector) == Catch::Approx(1.0).margin(1e-6));
  CHECK_FALSE(e.empty);
  CHECK(h.embed("I feel a little better today, thanks!").vector == e.vector);
  CHECK(HashEmbedder(43).embed("I feel a little better today, thanks!").vector != e.vector);

  auto empty = h.embed("");
  CHECK(empty.empty);
  CHECK(norm(empty.vector) == 0.0);
  CHECK(h.embed("   \n").empty);
  CHECK(h.provider_id() == "hash-v1:seed=42:dim=768");
}

TEST_CASE("hash tokens", "[embed]") {
  using V = std::vector<std::string>;
  CHECK(hash_tokens("Don't PANIC!!") == V{"don't", "panic", "!", "!"});
  CHECK(hash_tokens("  ") == V{});
}

TEST_CASE("cache miss then hit", "[embed]") {
  auto dir = scratch("hit");
  CountingEmbedder a("a"), b("b");
  EmbeddingCache cache(dir / "cache.bin", kEmbeddingDim, EmbeddingCache::Mode::read_write);
  auto first = get_or_compute(&cache, "some text", a);
  auto second = get_or_compute(&cache, "some text", a);
  CHECK(a.calls == 1);
  CHECK(first.vector == second.vector);

  auto other = get_or_compute(&cache, "some text", b);
  CHECK(b.calls == 1);
  CHECK(cache.size() == 2);
  CHECK(other.vector != first.vector);

  get_or_compute(&cache, "some text!", a);
  CHECK(a.calls == 2);
}

TEST_CASE("cache persists and round-trips bit-exactly", "[embed]") {
  auto dir = scratch("persist");
  HashEmbedder h(1);
  std::vector<std::vector<float>> expected;
  {
    EmbeddingCache cache(dir / "c.bin", kEmbeddingDim, EmbeddingCache::Mode::read_write);
    for (int i = 0; i < 20; ++i) {
      auto e = h.embed("message " + std::to_string(i));
      cache.put(cache_key(h.provider_id(), "message " + std::to_string(i)), e.vector);
      expected.push_back(e.vector);
    }
  }
  CHECK(std::filesystem::exists(dir / "c.bin.idx"));
  EmbeddingCache ro(dir / "c.bin", kEmbeddingDim, EmbeddingCache::Mode::read_only);
  CHECK(ro.size() == 20);
  for (int i = 0; i < 20; ++i) {
    auto got = ro.get(cache_key(h.provider_id(), "message " + std::to_string(i)));
    REQUIRE(got);
    CHECK(std::memcmp(got->data(), expected[static_cast<size_t>(i)].data(), 768 * 4) == 0);
  }

  // A stale index is extended by scanning the appended records.
  std::filesystem::copy_file(dir / "c.bin.idx", dir / "old.idx");
  {
    EmbeddingCache cache(dir / "c.bin", kEmbeddingDim, EmbeddingCache::Mode::read_write);
    cache.put(cache_key("x", "y"), expected[0]);
  }
  std::filesystem::copy_file(dir / "old.idx", dir / "c.bin.idx", std::filesystem::copy_options::overwrite_existing);
  EmbeddingCache again(dir / "c.bin", kEmbeddingDim, EmbeddingCache::Mode::read_only);
  CHECK(again.size() == 21);

  std::filesystem::remove(dir / "c.bin.idx");
  EmbeddingCache rebuilt(dir / "c.bin", kEmbeddingDim, EmbeddingCache::Mode::read_only);
  CHECK(rebuilt.size() == 21);
}

TEST_CASE("cache corruption is detected", "[embed]") {
  auto dir = scratch("corrupt");
  HashEmbedder h(1);
  auto key = cache_key(h.provider_id(), "hello");
  {
    EmbeddingCache cache(dir / "c.bin", kEmbeddingDim, EmbeddingCache::Mode::read_write);
    cache.put(key, h.embed("hello").vector);
  }
  {
    std::fstream f(dir / "c.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(16 + 32 + 100);
    f.put('\x7f');
  }
  EmbeddingCache cache(dir / "c.bin", kEmbeddingDim, EmbeddingCache::Mode::read_only);
  CHECK_THROWS_AS(cache.get(key), CacheCorrupt);
  CHECK_THROWS_AS(EmbeddingCache(dir / "c.bin", 32, EmbeddingCache::Mode::read_only), DimensionMismatch);
}

TEST_CASE("torn trailing record is dropped", "[embed]") {
  auto dir = scratch("torn");
  HashEmbedder h(1);
  {
    EmbeddingCache cache(dir / "c.bin", kEmbeddingDim, EmbeddingCache::Mode::read_write);
    cache.put(cache_key("p", "a"), h.embed("a").vector);
  }
  std::filesystem::remove(dir / "c.bin.idx");
  {
    std::ofstream f(dir / "c.bin", std::ios::app | std::ios::binary);
    f << "partial";
  }
  EmbeddingCache cache(dir / "c.bin", kEmbeddingDim, EmbeddingCache::Mode::read_write);
  CHECK(cache.size() == 1);
  CHECK(cache.get(cache_key("p", "a")));
}

TEST_CASE("concurrent readers with one writer", "[embed]") {
  auto dir = scratch("concurrent");
  HashEmbedder h(5);
  EmbeddingCache cache(dir / "c.bin", kEmbeddingDim, EmbeddingCache::Mode::read_write);
  std::atomic<int> errors{0};
  std::thread writer([&] {
    for (int i = 0; i < 200; ++i) get_or_compute(&cache, "w" + std::to_string(i), h);
  });
  std::vector<std::thread> readers;
  for (int r = 0; r < 3; ++r) {
    readers.emplace_back([&] {
      for (int i = 0; i < 200; ++i) {
        auto e = get_or_compute(nullptr, "w" + std::to_string(i), h);
        if (auto got = cache.get(cache_key(h.provider_id(), "w" + std::to_string(i)))) {
          if (*got != e.vector) ++errors;
        }
      }
    });
  }
  writer.join();
  for (auto& t : readers) t.join();
  CHECK(errors == 0);
  CHECK(cache.size() == 200);
}

TEST_CASE("transformer matches the reference encoder", "[embed][transformer]") {
  auto model = TransformerEmbedder::load(kTiny);
  auto mean_model = TransformerEmbedder::load(kTiny, Pooling::mean);
  json expected = read_json_file(kTiny / "expected.json");
  const size_t max_len = expected["max_length"].get<size_t>();
  const size_t D = model->dim();
  CHECK(D == 32);
  for (const auto& c : expected["cases"]) {
    auto text = c["text"].get<std::string>();
    INFO(text);
    auto ids = model->tokenizer().encode(text, max_len);
    CHECK(ids == c["ids"].get<std::vector<int32_t>>());
    auto hidden = model->hidden_states(c["ids"].get<std::vector<int32_t>>());
    auto first = c["first_token"].get<std::vector<float>>();
    auto mean = c["mean"].get<std::vector<float>>();
    double max_err = 0;
    for (size_t d = 0; d < D; ++d) max_err = std::max(max_err, std::abs(double(hidden[d]) - first[d]));
    CHECK(max_err < 1e-4);
    if (!text.empty()) {
      auto e = model->embed(text);
      auto m = mean_model->embed(text);
      double err_cls = 0, err_mean = 0;
      for (size_t d = 0; d < D; ++d) {
        err_cls = std::max(err_cls, std::abs(double(e.vector[d]) - first[d]));
        err_mean = std::max(err_mean, std::abs(double(m.vector[d]) - mean[d]));
      }
      CHECK(err_cls < 1e-4);
      CHECK(err_mean < 1e-4);
    }
  }
  auto empty = model->embed("");
  CHECK(empty.empty);
  CHECK(norm(empty.vector) == 0.0);
  CHECK(model->embed("I feel so alone").vector == model->embed("I feel so alone").vector);
  CHECK(model->provider_id() != mean_model->provider_id());
}

TEST_CASE("missing transformer assets", "[embed][transformer]") {
  CHECK_THROWS_AS(TransformerEmbedder::load(scratch("none")), ProviderUnavailable);
  CHECK_THROWS_AS(make_embedder("transformer", 0, scratch("none2")), ProviderUnavailable);
  CHECK_THROWS_AS(make_embedder("bogus", 0), InvalidArgument);
  CHECK(make_embedder("hash", 9)->provider_id() == "hash-v1:seed=9:dim=768");
}
