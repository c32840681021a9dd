#include <catch_amalgamated.hpp>

#include "toneshift/corpus.hpp"
#include "toneshift/rng.hpp"
#include "toneshift/threadsel.hpp"

using namespace toneshift;
using namespace toneshift::threadsel;
using corpus::Kind;
using corpus::Publication;

namespace {

const std::filesystem::path kFixtures = TONESHIFT_FIXTURE_DIR;

Publication post(std::string id, std::string author, int64_t t) {
  return {id, std::nullopt, id, std::move(author), t, "post " + id, "sub", Kind::post};
}

Publication comment(std::string id, std::string thread, std::string author, int64_t t) {
  return {id, thread, thread, std::move(author), t, "comment " + id, "sub", Kind::comment};
}

std::vector<corpus::ThreadTree> threads_of(std::vector<Publication> pubs) {
  return corpus::build_threads(std::move(pubs)).threads;
}

}  // namespace

TEST_CASE("toy selection example", "[threadsel]") {
  corpus::IngestOptions opts;
  opts.inputs = {kFixtures / "fig2_toy.jsonl"};
  auto res = select_all(corpus::ingest(opts).threads);

  REQUIRE(res.segments.size() == 2);
  const auto& t1 = res.segments[0];
  CHECK(t1.segment_id == "t1");
  REQUIRE(t1.messages.size() == 4);
  CHECK(t1.target.id == "a4");
  CHECK(t1.previous_author_comment->id == "a2");
  CHECK(t1.messages[2].is_post_author);
  CHECK_FALSE(t1.messages[1].is_post_author);

  const auto& t2 = res.segments[1];
  CHECK(t2.segment_id == "t2");
  REQUIRE(t2.messages.size() == 2);
  CHECK(t2.target.id == "b2");
  CHECK_FALSE(t2.previous_author_comment);

  CHECK(res.rejected.at("t3") == Rejection::cross_thread_overlap);
  CHECK(res.rejected.at("t4") == Rejection::gap_exceeded);
}

TEST_CASE("rejection reasons", "[threadsel]") {
  auto only_author = threads_of({post("p", "u", 1), comment("c1", "p", "u", 2), comment("c2", "p", "u", 3)});
  CHECK(select_all(only_author).rejected.at("p") == Rejection::no_other_commenter);

  // The other user's comment comes after the author's last reply.
  auto late_other = threads_of({post("p", "u", 1), comment("c1", "p", "u", 2), comment("c2", "p", "v", 3)});
  CHECK(select_all(late_other).rejected.at("p") == Rejection::no_other_commenter);

  auto silent = threads_of({post("p", "u", 1), comment("c1", "p", "v", 2)});
  CHECK(select_all(silent).rejected.at("p") == Rejection::author_never_comments);

  auto deleted = threads_of({post("p", "[deleted]", 1), comment("c1", "p", "v", 2),
                             comment("c2", "p", "[deleted]", 3)});
  auto res = select_all(deleted);
  CHECK(res.segments.empty());
  CHECK(res.rejected.empty());
}

TEST_CASE("minimal accepted segment", "[threadsel]") {
  auto threads = threads_of({post("p", "u", 100), comment("c1", "p", "v", 200), comment("c2", "p", "u", 300),
                             comment("c3", "p", "w", 400)});
  auto res = select_all(threads);
  REQUIRE(res.segments.size() == 1);
  const auto& s = res.segments[0];
  CHECK(s.messages.size() == 2);
  CHECK(s.n == 2);
  CHECK(s.target.id == "c2");
  CHECK(s.target.is_post_author);
  CHECK_FALSE(s.truncated);
}

TEST_CASE("24 hour rule is strict", "[threadsel]") {
  auto at = [](int64_t gap) {
    return select_all(threads_of({post("p", "u", 1000), comment("c1", "p", "v", 1000 + gap),
                                  comment("c2", "p", "u", 1000 + gap + 10)}));
  };
  CHECK(at(86399).segments.size() == 1);
  CHECK(at(86400).rejected.at("p") == Rejection::gap_exceeded);
}

TEST_CASE("truncate_segment", "[threadsel]") {
  ThreadSegment s;
  for (int i = 0; i < 70; ++i) s.messages.push_back(Message{std::to_string(i)});
  auto t = truncate_segment(s);
  CHECK(t.messages.size() == 64);
  CHECK(t.truncated);
  CHECK(t.messages.back().id == "63");

  s.messages.resize(64);
  CHECK_FALSE(truncate_segment(s).truncated);
  s.messages.resize(3);
  CHECK(truncate_segment(s).messages.size() == 3);
}

TEST_CASE("long threads are truncated but keep the target", "[threadsel]") {
  std::vector<Publication> pubs{post("p", "u", 0)};
  for (int i = 0; i < 80; ++i) pubs.push_back(comment("c" + std::to_string(100 + i), "p", "v", 10 + i));
  pubs.push_back(comment("last", "p", "u", 500));
  auto res = select_all(threads_of(pubs));
  REQUIRE(res.segments.size() == 1);
  CHECK(res.segments[0].n == 81);
  CHECK(res.segments[0].messages.size() == 64);
  CHECK(res.segments[0].truncated);
  CHECK(res.segments[0].target.id == "last");
  CHECK(res.truncated == 1);
}

TEST_CASE("random corpora satisfy the segment invariants", "[threadsel][property]") {
  Rng rng(2024);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<Publication> pubs;
    const int users = 4;
    int next_id = 0;
    for (int t = 0; t < 12; ++t) {
      std::string pid = "p" + std::to_string(next_id++);
      int64_t start = static_cast<int64_t>(rng.uniform_index(400000));
      pubs.push_back(post(pid, "u" + std::to_string(rng.uniform_index(users)), start + 1));
      int64_t now = start + 1;
      int n = static_cast<int>(rng.uniform_index(8));
      for (int c = 0; c < n; ++c) {
        now += static_cast<int64_t>(rng.uniform_index(rng.bernoulli(0.1) ? 200000 : 20000));
        pubs.push_back(comment("c" + std::to_string(next_id++), pid,
                               "u" + std::to_string(rng.uniform_index(users)), now));
      }
    }
    auto threads = threads_of(pubs);
    auto res = select_all(threads);
    CHECK(res.segments.size() + res.rejected.size() == threads.size());
    std::map<std::string, std::vector<std::pair<int64_t, int64_t>>> spans;
    for (const auto& s : res.segments) {
      REQUIRE(s.messages.size() >= 2);
      CHECK(s.messages[0].kind == Kind::post);
      CHECK(s.messages[0].author == s.author);
      CHECK(s.target.author == s.author);
      CHECK(s.target.kind == Kind::comment);
      bool other = false;
      for (size_t i = 1; i < s.messages.size(); ++i) other = other || s.messages[i].author != s.author;
      CHECK(other);
      for (const auto& m : s.messages) CHECK(m.is_post_author == (m.author == s.author));
      int64_t prev = s.messages[0].created_utc;
      for (size_t i = 1; i <= s.messages.size(); ++i) {
        int64_t cur = i < s.messages.size() ? s.messages[i].created_utc : s.target.created_utc;
        CHECK(cur - prev < 86400);
        CHECK(cur >= prev);
        prev = cur;
      }
      spans[s.author].emplace_back(s.messages[0].created_utc, s.target.created_utc);
    }
    for (auto& [user, list] : spans) {
      std::sort(list.begin(), list.end());
      for (size_t i = 1; i < list.size(); ++i) CHECK(list[i - 1].second < list[i].first);
    }
  }
}

TEST_CASE("segments round-trip through json", "[threadsel]") {
  auto threads = threads_of({post("p", "u", 100), comment("c1", "p", "v", 200), comment("c2", "p", "u", 250),
                             comment("c3", "p", "v", 260), comment("c4", "p", "u", 300)});
  auto res = select_all(threads);
  REQUIRE(res.segments.size() == 1);
  auto seg = res.segments[0];
  seg.messages[1].emt = -0.25;
  CHECK(segment_from_json(to_json(seg)) == seg);
  CHECK(seg.previous_author_comment->id == "c2");
}
