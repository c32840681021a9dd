#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "toneshift/io.hpp"
#include "toneshift/rng.hpp"
#include "toneshift/threadsel.hpp"

namespace toneshift::synth {

/// Short text whose tone leans toward `mood` in [-1, 1].
std::string mood_text(Rng& rng, double mood);

struct DumpOptions {
  size_t threads = 50;
  uint64_t seed = 0;
  std::vector<std::string> subreddits{"Anxiety", "depression", "lonely", "SuicideWatch"};
  int64_t start_utc = 1483228800;
};

/// What the generator put into a dump, for checking ingest and selection.
struct Tallies {
  struct Community {
    size_t threads = 0;
    size_t comments = 0;
    size_t unique_users = 0;
    size_t posting_users = 0;
    size_t commenters = 0;
  };
  std::map<std::string, Community> by_subreddit;
  size_t kept = 0;
  std::map<std::string, size_t> rejected;  // reason -> threads

  json to_json() const;
};

struct Dump {
  std::vector<json> records;  // submissions then comments, forum-dump schema
  Tallies tallies;
};

/// Threads whose closing author comment follows the tone of the discussion.
/// Some threads are built to fail selection (author silent, author alone,
/// a day-long gap).
Dump generate_dump(const DumpOptions& options);

/// Target of the recoverable-signal experiment:
/// clamp(0.6 * last + 0.4 * mean + 0.25 * (last - second last)).
double signal_target(std::span<const double> tones);

/// Unscored segments of 2..max_len messages with random moods.
std::vector<threadsel::ThreadSegment> generate_segments(size_t count, uint64_t seed, size_t max_len = 12);

}  // namespace toneshift::synth
