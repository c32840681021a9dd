#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "toneshift/io.hpp"

namespace toneshift::corpus {

enum class Kind { post, comment };

std::string_view to_string(Kind kind);

inline constexpr std::string_view kDeletedAuthor = "[deleted]";

/// One post or comment. Posts carry no parent and are their own thread.
struct Publication {
  std::string id;
  std::optional<std::string> parent_id;
  std::string thread_id;
  std::string author;
  int64_t created_utc = 0;
  std::string text;
  std::string subreddit;
  Kind kind = Kind::post;

  bool is_post() const { return kind == Kind::post; }
  bool operator==(const Publication&) const = default;
};

/// A post with its comments in (created_utc, id) order.
struct ThreadTree {
  Publication post;
  std::vector<Publication> comments;
};

struct ThreadBuild {
  std::vector<ThreadTree> threads;  // ordered by post id
  size_t orphan_count = 0;
  size_t duplicate_count = 0;
};

/// Parses one line of a forum dump (submission or comment record).
/// Throws MalformedRecord or MissingField.
Publication parse_record(std::string_view line);

/// Canonical corpus row <-> Publication.
json to_json(const Publication& pub);
Publication publication_from_json(const json& row);

/// Groups publications into threads. Comments whose thread has no post are
/// dropped and counted; repeated ids keep a single copy.
ThreadBuild build_threads(std::vector<Publication> pubs);

/// Chronological order used everywhere: created_utc, then id.
bool chronological_less(const Publication& a, const Publication& b);

// ---------------------------------------------------------------------------
// Canonical corpus file: one Publication per line sorted by
// (thread_id, created_utc, id).

std::string serialize_corpus(const std::vector<ThreadTree>& threads);
void write_corpus(const std::filesystem::path& path, const std::vector<ThreadTree>& threads);
std::vector<ThreadTree> read_corpus(const std::filesystem::path& path);

struct IngestOptions {
  std::vector<std::filesystem::path> inputs;
  std::optional<std::string> subreddit;  // case-insensitive filter
  unsigned threads = 0;                  // 0 = hardware concurrency
};

struct SourceInfo {
  std::string path;
  std::string sha256;
  size_t lines = 0;
  size_t records = 0;
  size_t malformed = 0;
  size_t filtered_out = 0;
};

struct IngestResult {
  std::vector<ThreadTree> threads;
  size_t posts = 0;
  size_t comments_parsed = 0;
  size_t orphan_count = 0;
  size_t duplicate_count = 0;
  size_t malformed = 0;
  std::vector<SourceInfo> sources;

  json manifest(const std::string& corpus_sha256) const;
};

/// Parses every input shard (in parallel), filters by subreddit and builds
/// threads. Malformed lines are counted and skipped.
IngestResult ingest(const IngestOptions& options);

// ---------------------------------------------------------------------------
// Descriptive statistics per community.

struct Summary {
  double median = 0.0;
  double max = 0.0;
  bool operator==(const Summary&) const = default;
};

struct CommunityStats {
  size_t threads = 0;
  size_t comments = 0;
  size_t unique_users = 0;
  size_t posting_users = 0;
  size_t commenters = 0;
  Summary posts_per_poster;
  Summary comments_per_commenter;
  Summary comments_in_thread;
  Summary post_length;
  Summary comment_length;
};

struct StatsTable {
  std::map<std::string, CommunityStats> by_subreddit;
  CommunityStats total;

  json to_json() const;
  std::string render() const;
};

/// Lengths are in Unicode code points. "[deleted]" authors count as a distinct
/// user per publication. Throws InvalidArgument on an empty corpus.
StatsTable descriptive_stats(const std::vector<ThreadTree>& threads);

double median(std::vector<double> values);

}  // namespace toneshift::corpus
