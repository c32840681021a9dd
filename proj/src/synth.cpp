#include "toneshift/synth.hpp"

#include <algorithm>
#include <set>

#include "toneshift/error.hpp"

namespace toneshift::synth {

namespace {

const std::vector<std::string> kPositive{"hope", "better", "thanks", "glad", "love", "great", "proud",
                                         "calm", "happy", "support", "grateful", "good"};
const std::vector<std::string> kNegative{"sad", "awful", "hopeless", "alone", "tired", "hate", "scared",
                                         "worthless", "empty", "hurt", "afraid", "bad"};
const std::vector<std::string> kNeutral{"today", "work", "my", "doctor", "week", "the", "morning", "I",
                                        "talked", "went", "school", "with", "home", "night", "about"};

const std::string& pick(Rng& rng, const std::vector<std::string>& words) {
  return words[rng.uniform_index(words.size())];
}

double clamp1(double v) { return std::clamp(v, -1.0, 1.0); }

}  // namespace

std::string mood_text(Rng& rng, double mood) {
  mood = clamp1(mood);
  size_t sentences = 1 + rng.uniform_index(2);
  std::string out;
  for (size_t s = 0; s < sentences; ++s) {
    size_t words = 4 + rng.uniform_index(5);
    std::string sentence;
    for (size_t w = 0; w < words; ++w) {
      double u = rng.uniform01();
      double p_pos = 0.35 * (1 + mood), p_neg = 0.35 * (1 - mood);
      const auto& word = u < p_pos ? pick(rng, kPositive) : u < p_pos + p_neg ? pick(rng, kNegative) : pick(rng, kNeutral);
      if (!sentence.empty()) sentence += ' ';
      sentence += word;
    }
    sentence[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(sentence[0])));
    if (!out.empty()) out += ' ';
    out += sentence + (rng.bernoulli(0.2) ? "!" : ".");
  }
  return out;
}

json Tallies::to_json() const {
  json subs = json::object();
  for (const auto& [name, c] : by_subreddit)
    subs[name] = {{"threads", c.threads},
                  {"comments", c.comments},
                  {"unique_users", c.unique_users},
                  {"posting_users", c.posting_users},
                  {"commenters", c.commenters}};
  return {{"by_subreddit", subs}, {"kept", kept}, {"rejected", rejected}};
}

Dump generate_dump(const DumpOptions& options) {
  if (options.subreddits.empty()) throw InvalidArgument("synthetic dump needs at least one subreddit");
  Rng rng(options.seed);
  Dump dump;
  std::vector<json> comments;
  struct Users {
    std::set<std::string> all, posters, commenters;
  };
  std::map<std::string, Users> users;
  int64_t t0 = options.start_utc;

  for (size_t i = 0; i < options.threads; ++i) {
    const std::string& sub = options.subreddits[i % options.subreddits.size()];
    std::string post_id = "p" + std::to_string(1000 + i);
    std::string op = "op_" + std::to_string(i);
    int64_t now = t0 + static_cast<int64_t>(i) * 7200;
    double mood = rng.uniform(-0.9, 0.5);
    dump.records.push_back({{"id", post_id},
                            {"author", op},
                            {"created_utc", now},
                            {"subreddit", sub},
                            {"title", mood_text(rng, mood)},
                            {"selftext", mood_text(rng, mood)}});
    auto& tally = dump.tallies.by_subreddit[sub];
    ++tally.threads;
    users[sub].all.insert(op);
    users[sub].posters.insert(op);

    // 0 kept, 1 author silent, 2 author alone, 3 day-long gap.
    double u = rng.uniform01();
    int kind = u < 0.76 ? 0 : u < 0.84 ? 1 : u < 0.92 ? 2 : 3;

    size_t k = 0;
    std::vector<double> tones{mood};
    std::string parent = "t3_" + post_id;
    auto add_comment = [&](const std::string& author, double m, int64_t gap) {
      now += gap;
      std::string id = "c" + std::to_string(1000 + i) + "x" + std::to_string(k++);
      comments.push_back({{"id", id},
                          {"author", author},
                          {"created_utc", now},
                          {"subreddit", sub},
                          {"body", mood_text(rng, m)},
                          {"link_id", "t3_" + post_id},
                          {"parent_id", parent}});
      parent = "t1_" + id;
      ++tally.comments;
      users[sub].all.insert(author);
      users[sub].commenters.insert(author);
      tones.push_back(m);
    };
    auto gap = [&] { return static_cast<int64_t>(60 + rng.uniform_index(6 * 3600)); };
    auto helper = [&] { return "helper_" + std::to_string(rng.uniform_index(30)); };

    size_t others = 1 + rng.uniform_index(8);
    if (kind == 2) {
      size_t own = 1 + rng.uniform_index(3);
      for (size_t c = 0; c < own; ++c) add_comment(op, mood, gap());
      if (rng.bernoulli(0.5)) add_comment(helper(), rng.uniform(-0.2, 0.9), gap());
      ++dump.tallies.rejected[std::string(threadsel::to_string(threadsel::Rejection::no_other_commenter))];
      continue;
    }
    size_t gap_at = kind == 3 ? rng.uniform_index(others + 1) : others + 1;
    for (size_t c = 0; c < others; ++c) {
      int64_t g = c == gap_at ? 86400 + static_cast<int64_t>(rng.uniform_index(3600)) : gap();
      if (kind != 1 && c > 0 && rng.bernoulli(0.25)) add_comment(op, 0.5 * mood + 0.5 * tones.back(), gap());
      add_comment(helper(), rng.uniform(-0.3, 0.9), g);
    }
    if (kind == 1) {
      ++dump.tallies.rejected[std::string(threadsel::to_string(threadsel::Rejection::author_never_comments))];
      continue;
    }
    double mean = 0;
    for (double t : tones) mean += t;
    mean /= static_cast<double>(tones.size());
    double final_mood = clamp1(0.35 + 0.6 * tones.back() + 0.4 * mean + 0.1 * rng.normal());
    add_comment(op, final_mood, gap_at == others ? 86400 + 60 : gap());
    if (rng.bernoulli(0.3)) add_comment(helper(), rng.uniform(-0.2, 0.9), gap());
    if (kind == 3) {
      ++dump.tallies.rejected[std::string(threadsel::to_string(threadsel::Rejection::gap_exceeded))];
    } else {
      ++dump.tallies.kept;
    }
  }
  for (auto& [sub, u] : users) {
    auto& c = dump.tallies.by_subreddit[sub];
    c.unique_users = u.all.size();
    c.posting_users = u.posters.size();
    c.commenters = u.commenters.size();
  }
  dump.records.insert(dump.records.end(), comments.begin(), comments.end());
  return dump;
}

double signal_target(std::span<const double> tones) {
  if (tones.empty()) throw InvalidArgument("signal target needs at least one tone");
  double mean = 0;
  for (double t : tones) mean += t;
  mean /= static_cast<double>(tones.size());
  double last = tones.back();
  double prev = tones.size() > 1 ? tones[tones.size() - 2] : last;
  return clamp1(0.6 * last + 0.4 * mean + 0.25 * (last - prev));
}

std::vector<threadsel::ThreadSegment> generate_segments(size_t count, uint64_t seed, size_t max_len) {
  if (max_len < 2) throw InvalidArgument("segments need room for at least two messages");
  Rng rng(seed);
  std::vector<threadsel::ThreadSegment> out;
  out.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    threadsel::ThreadSegment s;
    s.segment_id = "s" + std::to_string(100000 + i);
    s.subreddit = i % 2 ? "depression" : "Anxiety";
    s.author = "op_" + std::to_string(i);
    size_t len = 2 + rng.uniform_index(max_len - 1);
    for (size_t m = 0; m < len; ++m) {
      threadsel::Message msg;
      msg.id = s.segment_id + "m" + std::to_string(m);
      msg.is_post_author = m == 0 || rng.bernoulli(0.2);
      msg.author = msg.is_post_author ? s.author : "helper_" + std::to_string(rng.uniform_index(50));
      msg.kind = m == 0 ? corpus::Kind::post : corpus::Kind::comment;
      msg.created_utc = 1483228800 + static_cast<int64_t>(i * 86400 + m * 600);
      msg.text = mood_text(rng, rng.uniform(-1, 1));
      s.messages.push_back(std::move(msg));
    }
    s.target.id = s.segment_id + "t";
    s.target.author = s.author;
    s.target.is_post_author = true;
    s.target.created_utc = s.messages.back().created_utc + 600;
    s.n = len;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace toneshift::synth
