#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "toneshift/corpus.hpp"
#include "toneshift/io.hpp"

namespace toneshift::threadsel {

inline constexpr size_t kSeqCap = 64;
inline constexpr int64_t kDefaultMaxGapSeconds = 86400;

struct Message {
  std::string id;
  std::string author;
  int64_t created_utc = 0;
  std::string text;
  corpus::Kind kind = corpus::Kind::comment;
  bool is_post_author = false;
  std::optional<double> emt;  // filled by the scoring stage

  bool operator==(const Message&) const = default;
};

struct ThreadSegment {
  std::string segment_id;  // id of the opening post
  std::string subreddit;
  std::string author;
  std::vector<Message> messages;  // S, chronological, post first
  Message target;                 // the author's final comment
  size_t n = 0;                   // |S| before truncation
  bool truncated = false;
  // The author's comment immediately preceding the target, if any. Kept even
  // when truncation drops it from `messages`.
  std::optional<Message> previous_author_comment;

  bool operator==(const ThreadSegment&) const = default;
};

enum class Rejection { no_other_commenter, gap_exceeded, author_never_comments, cross_thread_overlap };

std::string_view to_string(Rejection r);

struct SelectOptions {
  int64_t max_gap_seconds = kDefaultMaxGapSeconds;  // gaps must be strictly smaller
  size_t seq_cap = kSeqCap;
};

struct SelectionResult {
  std::vector<ThreadSegment> segments;        // sorted by segment_id
  std::map<std::string, Rejection> rejected;  // post id -> reason
  size_t truncated = 0;

  std::map<std::string, size_t> rejection_counts() const;
};

/// Segments for the threads started by `user`. `activity` must hold every
/// publication the user made anywhere in the corpus.
SelectionResult select_segments(const std::string& user,
                                const std::vector<const corpus::ThreadTree*>& threads,
                                const std::vector<const corpus::Publication*>& activity,
                                const SelectOptions& options = {});

/// Runs selection for every user who started a thread. Threads opened by
/// "[deleted]" are skipped.
SelectionResult select_all(const std::vector<corpus::ThreadTree>& threads,
                           const SelectOptions& options = {});

/// Keeps the first `cap` messages of S and flags the segment.
ThreadSegment truncate_segment(ThreadSegment segment, size_t cap = kSeqCap);

json to_json(const Message& m);
Message message_from_json(const json& j);
json to_json(const ThreadSegment& s);
ThreadSegment segment_from_json(const json& j);

void write_segments(const std::filesystem::path& path, const std::vector<ThreadSegment>& segments);
std::vector<ThreadSegment> read_segments(const std::filesystem::path& path);

}  // namespace toneshift::threadsel
