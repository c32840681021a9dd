#include <catch_amalgamated.hpp>

#include <filesystem>

#include "support.hpp"
#include "toneshift/error.hpp"
#include "toneshift/regressor.hpp"

using namespace toneshift;
using namespace toneshift::model;
using Catch::Approx;

namespace {

ModelConfig tiny(size_t layers = 1, bool bi = false, double dropout = 0.0) {
  ModelConfig c;
  c.fc_out = 2;
  c.num_layers = layers;
  c.bidirectional = bi;
  c.dropout = dropout;
  c.embed_dim = 12;
  return c;
}

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "toneshift_regressor_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("config validation and shapes", "[regressor]") {
  ModelConfig best;
  CHECK(best.input_dim() == 64);
  CHECK(best.hidden_dim() == 32);
  CHECK(Params(best).values().size() == 63455);

  ModelConfig bad = best;
  bad.num_layers = 1;
  bad.dropout = 0.2;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = best;
  bad.fc_out = 3;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);

  for (size_t o : {2, 14, 62}) {
    ModelConfig c;
    c.fc_out = o;
    CHECK(c.hidden_dim() * 2 == c.input_dim());
  }

  ModelConfig bi = best;
  bi.bidirectional = true;
  ParamLayout layout(bi);
  CHECK(layout.find("gru.weight_ih_l1_reverse").shape == std::vector<size_t>{96, 64});
  CHECK(layout.find("fc2.weight").shape == std::vector<size_t>{1, 64});
  CHECK(ModelConfig::from_json(bi.to_json()) == bi);
}

TEST_CASE("build_input", "[regressor]") {
  ModelConfig c = tiny();
  Params p(c);
  std::vector<float> e(12, 0.0f);
  auto x = build_input(p, e, 0.25, true);
  CHECK(x == std::vector<double>{0.0, 0.0, 0.25, 1.0});

  // One-hot rows select coordinates of e.
  auto w = p.tensor("fc1.weight");
  w[0 * 12 + 3] = 1.0;
  w[1 * 12 + 7] = 1.0;
  for (size_t i = 0; i < 12; ++i) e[i] = static_cast<float>(i) * 0.5f;
  x = build_input(p, e, -0.5, false);
  CHECK(x[0] == 1.5);
  CHECK(x[1] == 3.5);
  CHECK(x[3] == 0.0);

  CHECK_THROWS_AS(build_input(p, std::vector<float>(5), 0, false), DimensionMismatch);
  ModelConfig full;
  CHECK(build_input(Params(full), std::vector<float>(768), 0, false).size() == 64);
}

TEST_CASE("zero parameters give the output bias", "[regressor]") {
  for (bool bi : {false, true}) {
    Params p(tiny(2, bi));
    p.tensor("fc2.bias")[0] = 0.37;
    Rng rng(3);
    auto s = testsupport::random_sequence(rng, 5, 12);
    Regressor reg(p.config());
    CHECK(reg.forward(p, s) == 0.37);
  }
}

TEST_CASE("hidden state stays zero with zero recurrent weights", "[regressor]") {
  Params p(tiny(2));
  Rng rng(4);
  p.init_uniform(rng);
  for (const auto& t : p.layout().tensors())
    if (t.name.starts_with("gru.") || t.name == "fc2.bias")
      std::fill_n(p.values().begin() + static_cast<std::ptrdiff_t>(t.offset), t.size, 0.0);
  auto s = testsupport::random_sequence(rng, 6, 12);
  Regressor reg(p.config());
  // z = 0.5 and n = 0 at every step, so h stays 0 and only fc2.bias survives.
  CHECK(reg.forward(p, s) == 0.0);
}

TEST_CASE("padding does not change predictions or gradients", "[regressor]") {
  Rng rng(11);
  for (bool bi : {false, true}) {
    Params p(tiny(2, bi, 0.0));
    p.init_uniform(rng);
    std::vector<FeatureSequence> batch;
    for (size_t i = 0; i < 8; ++i) batch.push_back(testsupport::random_sequence(rng, 2 + i % 5, 12));
    std::vector<FeatureSequence> padded;
    for (const auto& s : batch) padded.push_back(testsupport::padded(s, 7));

    Regressor reg(p.config());
    double alone = reg.forward(p, batch[3]);
    std::vector<const FeatureSequence*> ptrs;
    for (const auto& s : padded) ptrs.push_back(&s);
    auto preds = reg.forward_batch(p, ptrs);
    CHECK(preds[3] == Approx(alone).margin(1e-12));

    std::vector<double> g1, g2;
    std::vector<const FeatureSequence*> one{&batch[3]}, one_padded{&padded[3]};
    auto unit = [](size_t, double) { return 1.0; };
    batch_gradient(p, one, unit, g1);
    batch_gradient(p, one_padded, unit, g2);
    CHECK(g1 == g2);
  }
}

TEST_CASE("eval mode is deterministic, train mode uses dropout", "[regressor]") {
  Params p(tiny(2, false, 0.5));
  Rng rng(5);
  p.init_uniform(rng);
  auto s = testsupport::random_sequence(rng, 6, 12);
  Regressor reg(p.config());
  double a = reg.forward(p, s);
  CHECK(reg.forward(p, s) == a);

  Rng d1(9), d2(9), d3(10);
  double t1 = reg.forward(p, s, Mode::train, &d1);
  double t2 = reg.forward(p, s, Mode::train, &d2);
  double t3 = reg.forward(p, s, Mode::train, &d3);
  CHECK(t1 == t2);
  CHECK(t1 != a);
  CHECK(t3 != t1);
  CHECK_THROWS_AS(reg.forward(p, s, Mode::train, nullptr), InvalidArgument);
}

TEST_CASE("analytic gradients match finite differences", "[regressor]") {
  Rng rng(2024);
  double worst = 0;
  for (int trial = 0; trial < 24; ++trial) {
    ModelConfig c = tiny(1 + trial % 2, trial % 3 == 0, trial % 2 ? 0.2 : 0.0);
    Params p(c);
    p.init_uniform(rng);
    std::vector<FeatureSequence> batch;
    std::vector<double> coef;
    for (int i = 0; i < 3; ++i) {
      batch.push_back(testsupport::random_sequence(rng, 1 + rng.uniform_index(6), 12));
      coef.push_back(rng.uniform(-1, 1));
    }
    std::vector<const FeatureSequence*> ptrs;
    for (const auto& s : batch) ptrs.push_back(&s);
    const uint64_t mask_seed = rng.next_u64();

    auto loss = [&](const Params& q) {
      Rng masks(mask_seed);
      Regressor reg(q.config());
      double total = 0;
      for (size_t i = 0; i < ptrs.size(); ++i) total += coef[i] * reg.forward(q, *ptrs[i], Mode::train, &masks);
      return total;
    };
    std::vector<double> analytic;
    Rng masks(mask_seed);
    batch_gradient(p, ptrs, [&](size_t i, double) { return coef[i]; }, analytic, Mode::train, &masks);
    auto numeric = testsupport::numeric_gradient(p, loss);
    worst = std::max(worst, testsupport::max_relative_error(analytic, numeric));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("parameters that do not affect the output get zero gradient", "[regressor]") {
  Params p(tiny(1));
  Rng rng(8);
  p.init_uniform(rng);
  auto s = testsupport::random_sequence(rng, 4, 12);
  // Columns of fc1.weight that multiply zero embedding coordinates.
  std::fill(s.embeddings.begin(), s.embeddings.end(), 0.0f);
  std::vector<const FeatureSequence*> one{&s};
  std::vector<double> g;
  batch_gradient(p, one, [](size_t, double) { return 1.0; }, g);
  auto w = p.layout().find("fc1.weight");
  for (size_t i = 0; i < w.size; ++i) CHECK(g[w.offset + i] == 0.0);
  CHECK(g[p.layout().find("fc2.bias").offset] == 1.0);
}

TEST_CASE("duplicating a sample under mean reduction keeps gradients", "[regressor]") {
  Params p(tiny(2, true));
  Rng rng(12);
  p.init_uniform(rng);
  auto s = testsupport::random_sequence(rng, 5, 12);
  std::vector<const FeatureSequence*> one{&s}, two{&s, &s};
  std::vector<double> g1, g2;
  batch_gradient(p, one, [](size_t, double) { return 1.0; }, g1);
  batch_gradient(p, two, [](size_t, double) { return 0.5; }, g2);
  for (size_t i = 0; i < g1.size(); ++i) CHECK(g2[i] == Approx(g1[i]).margin(1e-15));
}

TEST_CASE("non-finite activations are reported", "[regressor]") {
  Params p(tiny(1));
  Rng rng(1);
  p.init_uniform(rng);
  auto s = testsupport::random_sequence(rng, 3, 12);
  s.emt[1] = std::numeric_limits<double>::quiet_NaN();
  Regressor reg(p.config());
  CHECK_THROWS_AS(reg.forward(p, s), NonFiniteActivation);
}

TEST_CASE("checkpoint roundtrip", "[regressor]") {
  ModelConfig c = tiny(2, true, 0.1);
  Params p(c);
  Rng rng(77);
  p.init_uniform(rng);
  auto path = temp_path("model.ckpt");
  save_checkpoint(path, p, {{"seed", 77}});
  auto ck = load_checkpoint(path);
  CHECK(ck.params.config() == c);
  CHECK(ck.metadata.at("seed") == 77);
  CHECK(ck.params.values() == quantize_float32(p).values());
  CHECK(ck.model_id == model_id_of(p));
  CHECK(ck.model_id.starts_with("m-"));

  // Header self-description.
  auto raw = read_file(path);
  CHECK(raw.substr(0, 8) == "TSCKPT01");

  raw[raw.size() - 3] ^= 0x40;
  write_file_atomic(path, raw);
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointInvalid);
  write_file_atomic(path, "garbage");
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointInvalid);
  CHECK_THROWS_AS(load_checkpoint(temp_path("missing.ckpt")), CheckpointInvalid);
}

TEST_CASE("initialization is seeded and bounded", "[regressor]") {
  ModelConfig c;
  Params a(c), b(c);
  Rng r1(5), r2(5);
  a.init_uniform(r1);
  b.init_uniform(r2);
  CHECK(a.values() == b.values());
  auto w = a.tensor("fc1.weight");
  double bound = 1.0 / std::sqrt(768.0);
  CHECK(std::all_of(w.begin(), w.end(), [&](double x) { return std::abs(x) <= bound; }));
  auto hh = a.tensor("gru.weight_hh_l1");
  double hb = 1.0 / std::sqrt(32.0);
  CHECK(std::all_of(hh.begin(), hh.end(), [&](double x) { return std::abs(x) <= hb; }));
}
