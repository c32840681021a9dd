#include <catch_amalgamated.hpp>

#include <cmath>
#include <thread>

#include "toneshift/io.hpp"
#include "toneshift/tone.hpp"

using namespace toneshift;
using namespace toneshift::tone;

namespace {

json golden() { return read_json_file(std::filesystem::path(TONESHIFT_FIXTURE_DIR) / "vader_golden.json"); }

}  // namespace

TEST_CASE("whole-text scores equal the reference implementation", "[tone]") {
  VaderScorer scorer(Lexicon::bundled());
  for (const auto& c : golden()["cases"]) {
    auto text = c["text"].get<std::string>();
    INFO(text);
    ToneScore got = scorer.polarity_scores(text).rounded();
    const auto& want = c["whole"];
    CHECK(got.compound == want["compound"].get<double>());
    CHECK(got.pos == want["pos"].get<double>());
    CHECK(got.neg == want["neg"].get<double>());
    CHECK(got.neu == want["neu"].get<double>());
  }
}

TEST_CASE("emotional tone equals the sentence-mean oracle", "[tone]") {
  for (const auto& c : golden()["cases"]) {
    auto text = c["text"].get<std::string>();
    INFO(text);
    CHECK(score_text(text).compound == Catch::Approx(c["emt"].get<double>()).margin(1e-12));
  }
}

TEST_CASE("empty and blank text score neutral", "[tone]") {
  for (const char* t : {"", "   ", "\n\t"}) {
    ToneScore s = score_text(t);
    CHECK(s.compound == 0.0);
    CHECK(s.neu == 1.0);
    CHECK(s.pos == 0.0);
    CHECK(s.neg == 0.0);
  }
}

TEST_CASE("normalize_valence", "[tone]") {
  CHECK(normalize_valence(0.0) == 0.0);
  CHECK(normalize_valence(4.0) == Catch::Approx(4.0 / std::sqrt(31.0)).epsilon(1e-15));
  CHECK(normalize_valence(4.0) == Catch::Approx(0.7184).margin(1e-4));
  for (double x : {0.1, 0.7, 2.5, 9.0, 1e6}) {
    CHECK(normalize_valence(x) + normalize_valence(-x) == 0.0);
    CHECK(normalize_valence(x) < normalize_valence(x * 1.5));
    CHECK(std::abs(normalize_valence(x)) <= 1.0);
  }
}

TEST_CASE("python_round matches round() on ties and near-ties", "[tone]") {
  CHECK(python_round(0.125, 2) == 0.12);
  CHECK(python_round(0.375, 2) == 0.38);
  CHECK(python_round(2.675, 2) == 2.67);  // binary value is below the tie
  CHECK(python_round(-0.00005, 4) == -0.0001);
  CHECK(python_round(0.44445, 4) == 0.4445);
}

TEST_CASE("proportions sum to one for nonempty text", "[tone]") {
  for (const auto& c : golden()["cases"]) {
    auto text = c["text"].get<std::string>();
    if (text.find_first_not_of(" \t\n") == std::string::npos) continue;
    ToneScore s = score_text(text);
    CHECK(s.pos + s.neg + s.neu == Catch::Approx(1.0).margin(1e-6));
    CHECK(s.compound >= -1.0);
    CHECK(s.compound <= 1.0);
  }
}

TEST_CASE("negation and emphasis properties", "[tone]") {
  CHECK(score_text("good").compound > 0);
  CHECK(score_text("not good").compound < score_text("good").compound);
  CHECK(score_text("good!!!").compound >= score_text("good").compound);
}

TEST_CASE("sentence splitting", "[tone]") {
  using V = std::vector<std::string>;
  CHECK(split_sentences("One. Two!  Three?? four") == V{"One.", "Two!", "Three??", "four"});
  CHECK(split_sentences("title\nbody text.\n\nmore") == V{"title", "body text.", "more"});
  CHECK(split_sentences("e.g.this stays, ok") == V{"e.g.this stays, ok"});
  CHECK(split_sentences("  ").empty());
}

TEST_CASE("html entities are decoded before scoring", "[tone]") {
  CHECK(score_text("I &lt;3 you &amp; good").compound == score_text("I <3 you & good").compound);
}

TEST_CASE("scoring is deterministic across threads", "[tone]") {
  const std::string text = golden()["cases"][4]["text"].get<std::string>();
  const double expected = score_text(text).compound;
  std::vector<std::thread> pool;
  std::atomic<int> mismatches{0};
  for (int t = 0; t < 4; ++t) {
    pool.emplace_back([&] {
      for (int i = 0; i < 50; ++i) {
        if (score_text(text).compound != expected) ++mismatches;
      }
    });
  }
  for (auto& th : pool) th.join();
  CHECK(mismatches == 0);
}

TEST_CASE("bundled lexicon matches the pinned checksums", "[tone]") {
  auto lex = Lexicon::bundled();
  CHECK(lex->matches_pinned());
  CHECK(lex->size() == 7506);
}
