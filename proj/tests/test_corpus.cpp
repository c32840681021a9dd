#include <catch_amalgamated.hpp>

#include <algorithm>
#include <random>

#include "toneshift/corpus.hpp"
#include "toneshift/digest.hpp"
#include "toneshift/error.hpp"
#include "toneshift/rng.hpp"

using namespace toneshift;
using namespace toneshift::corpus;

namespace {

const std::filesystem::path kFixtures = TONESHIFT_FIXTURE_DIR;

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("toneshift_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

Publication make_post(std::string id, std::string author, int64_t t, std::string text = "post") {
  return {id, std::nullopt, id, std::move(author), t, std::move(text), "sub", Kind::post};
}

Publication make_comment(std::string id, std::string thread, std::string author, int64_t t,
                         std::string text = "comment") {
  return {std::move(id), thread, thread, std::move(author), t, std::move(text), "sub", Kind::comment};
}

}  // namespace

TEST_CASE("parse_record handles posts and comments", "[corpus]") {
  auto post = parse_record(R"({"id":"p1","author":"a","created_utc":5,"subreddit":"s","title":"Hi","selftext":""})");
  CHECK(post.kind == Kind::post);
  CHECK(post.text == "Hi\n");
  CHECK(post.thread_id == "p1");
  CHECK_FALSE(post.parent_id);

  auto no_body = parse_record(R"({"id":"p2","author":"a","created_utc":5,"subreddit":"s","title":"Hi"})");
  CHECK(no_body.text == "Hi\n");

  auto c = parse_record(
      R"({"id":"c1","author":"b","created_utc":"7","subreddit":"s","body":"[deleted]","parent_id":"t1_x","link_id":"t3_p1"})");
  CHECK(c.kind == Kind::comment);
  CHECK(c.thread_id == "p1");
  CHECK(c.parent_id == "x");
  CHECK(c.text == "[deleted]");
  CHECK(c.created_utc == 7);
}

TEST_CASE("parse_record errors", "[corpus]") {
  CHECK_THROWS_AS(parse_record("not json"), MalformedRecord);
  CHECK_THROWS_AS(parse_record("[1,2]"), MalformedRecord);
  CHECK_THROWS_AS(parse_record(R"({"author":"a","created_utc":5,"subreddit":"s","title":"x"})"), MissingField);
  CHECK_THROWS_AS(parse_record(R"({"id":"a","author":"a","created_utc":5,"subreddit":"s"})"), MissingField);
  CHECK_THROWS_AS(
      parse_record(R"({"id":"c","author":"a","created_utc":5,"subreddit":"s","body":"x","link_id":"t3_p"})"),
      MissingField);
  CHECK_THROWS_AS(parse_record(R"({"id":"a","author":"a","created_utc":0,"subreddit":"s","title":"x"})"),
                  MalformedRecord);
}

TEST_CASE("pushshift-schema sample lines parse", "[corpus]") {
  std::vector<Publication> pubs;
  for_each_line(kFixtures / "pushshift_sample.jsonl",
                [&](std::string_view line) { pubs.push_back(parse_record(line)); });
  REQUIRE(pubs.size() == 5);
  CHECK(pubs[0].text == "New year, same me\nEveryone is celebrating &amp; I just feel empty.");
  CHECK(pubs[1].created_utc == 1483229411);
  CHECK(pubs[2].parent_id == "dbuojc2");
  CHECK(pubs[2].thread_id == "5lcgj9");
  CHECK(pubs[3].author == "[deleted]");
  CHECK(pubs[3].text == "[removed]");
  CHECK(pubs[4].text == "Panic at midnight\n");
  auto built = build_threads(pubs);
  REQUIRE(built.threads.size() == 2);
  CHECK(built.threads[0].post.id == "5lcgj9");
  CHECK(built.threads[0].comments.size() == 3);
}

TEST_CASE("build_threads groups, orders and counts orphans", "[corpus]") {
  auto built = build_threads({make_post("p", "a", 10), make_comment("c2", "p", "b", 30),
                              make_comment("c1", "p", "c", 20), make_comment("o", "zz", "d", 5)});
  REQUIRE(built.threads.size() == 1);
  CHECK(built.orphan_count == 1);
  REQUIRE(built.threads[0].comments.size() == 2);
  CHECK(built.threads[0].comments[0].id == "c1");

  // Same-second comments are ordered by id.
  auto tie = build_threads({make_post("p", "a", 1), make_comment("z", "p", "b", 2),
                            make_comment("m", "p", "c", 2)});
  CHECK(tie.threads[0].comments[0].id == "m");

  auto dup = build_threads({make_post("p", "a", 1), make_comment("c", "p", "b", 2),
                            make_comment("c", "p", "b", 2)});
  CHECK(dup.duplicate_count == 1);
  CHECK(dup.threads[0].comments.size() == 1);
}

TEST_CASE("build_threads is independent of input order", "[corpus]") {
  Rng rng(11);
  std::vector<Publication> pubs;
  for (int t = 0; t < 8; ++t) {
    std::string pid = "p" + std::to_string(t);
    pubs.push_back(make_post(pid, "u" + std::to_string(t % 3), 100 * t));
    for (int c = 0; c < 6; ++c) {
      pubs.push_back(make_comment(pid + "c" + std::to_string(c), pid, "v" + std::to_string(c),
                                  100 * t + static_cast<int64_t>(rng.uniform_index(5))));
    }
  }
  pubs.push_back(make_comment("orphan", "nope", "x", 3));
  const std::string reference = serialize_corpus(build_threads(pubs).threads);
  for (int k = 0; k < 10; ++k) {
    rng.shuffle(std::span<Publication>(pubs));
    auto built = build_threads(pubs);
    CHECK(serialize_corpus(built.threads) == reference);
    CHECK(built.orphan_count == 1);
    size_t comments = 0;
    for (const auto& t : built.threads) comments += t.comments.size();
    CHECK(comments + built.orphan_count == 48 + 1);
  }
}

TEST_CASE("ingest is idempotent and round-trips", "[corpus]") {
  auto dir = scratch_dir("ingest");
  IngestOptions opts;
  opts.inputs = {kFixtures / "pushshift_sample.jsonl", kFixtures / "fig2_toy.jsonl"};
  auto first = ingest(opts);
  auto second = ingest(opts);
  CHECK(serialize_corpus(first.threads) == serialize_corpus(second.threads));
  CHECK(first.malformed == 0);
  CHECK(first.posts == 6);
  write_corpus(dir / "corpus.jsonl", first.threads);
  auto back = read_corpus(dir / "corpus.jsonl");
  CHECK(serialize_corpus(back) == serialize_corpus(first.threads));

  opts.subreddit = "ANXIETY";
  auto filtered = ingest(opts);
  REQUIRE(filtered.threads.size() == 1);
  CHECK(filtered.threads[0].post.subreddit == "Anxiety");
}

TEST_CASE("ingest reads compressed shards and counts malformed lines", "[corpus]") {
  auto dir = scratch_dir("gz");
  std::string plain = read_file(kFixtures / "fig2_toy.jsonl") + "garbage line\n";
  write_file_atomic(dir / "dump.jsonl", plain);
  REQUIRE(std::system(("gzip -k -f " + (dir / "dump.jsonl").string()).c_str()) == 0);
  IngestOptions opts;
  opts.inputs = {dir / "dump.jsonl.gz"};
  auto res = ingest(opts);
  CHECK(res.malformed == 1);
  CHECK(res.threads.size() == 4);
  CHECK(res.comments_parsed == 14);
}

TEST_CASE("descriptive statistics", "[corpus]") {
  auto built = build_threads({make_post("p", "A", 1, "0123456789"), make_comment("c", "p", "B", 2, "abcd")});
  auto stats = descriptive_stats(built.threads);
  const auto& s = stats.total;
  CHECK(s.threads == 1);
  CHECK(s.comments == 1);
  CHECK(s.unique_users == 2);
  CHECK(s.posting_users == 1);
  CHECK(s.commenters == 1);
  CHECK(s.post_length.median == 10);
  CHECK(s.comment_length.median == 4);
  CHECK_THROWS_AS(descriptive_stats({}), InvalidArgument);

  auto deleted = build_threads({make_post("p", "[deleted]", 1), make_comment("c1", "p", "[deleted]", 2),
                                make_comment("c2", "p", "[deleted]", 3)});
  CHECK(descriptive_stats(deleted.threads).total.unique_users == 3);

  CHECK(median({4, 1, 3, 2}) == 2.5);
  CHECK(median({}) == 0.0);
  CHECK(stats.render().find("Comments in thread") != std::string::npos);
}
