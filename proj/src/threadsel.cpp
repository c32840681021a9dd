#include "toneshift/threadsel.hpp"

#include <algorithm>
#include <limits>
#include <unordered_map>

#include "toneshift/error.hpp"

namespace toneshift::threadsel {

std::string_view to_string(Rejection r) {
  switch (r) {
    case Rejection::no_other_commenter: return "no_other_commenter";
    case Rejection::gap_exceeded: return "gap_exceeded";
    case Rejection::author_never_comments: return "author_never_comments";
    case Rejection::cross_thread_overlap: return "cross_thread_overlap";
  }
  return "unknown";
}

std::map<std::string, size_t> SelectionResult::rejection_counts() const {
  std::map<std::string, size_t> out;
  for (auto r : {Rejection::no_other_commenter, Rejection::gap_exceeded,
                 Rejection::author_never_comments, Rejection::cross_thread_overlap}) {
    out[std::string(to_string(r))] = 0;
  }
  for (const auto& [id, reason] : rejected) ++out[std::string(to_string(reason))];
  return out;
}

namespace {

Message make_message(const corpus::Publication& p, const std::string& segment_author) {
  Message m;
  m.id = p.id;
  m.author = p.author;
  m.created_utc = p.created_utc;
  m.text = p.text;
  m.kind = p.kind;
  m.is_post_author = p.author == segment_author;
  return m;
}

}  // namespace

ThreadSegment truncate_segment(ThreadSegment segment, size_t cap) {
  if (segment.messages.size() > cap) {
    segment.messages.resize(cap);
    segment.truncated = true;
  }
  return segment;
}

SelectionResult select_segments(const std::string& user,
                                const std::vector<const corpus::ThreadTree*>& threads,
                                const std::vector<const corpus::Publication*>& activity,
                                const SelectOptions& options) {
  SelectionResult result;
  for (const auto* thread : threads) {
    const auto& post = thread->post;
    if (post.author != user) continue;

    // The user "moves on" at their first publication in any other thread at or
    // after the post.
    int64_t cutoff = std::numeric_limits<int64_t>::max();
    for (const auto* a : activity) {
      if (a->thread_id != post.id && a->created_utc >= post.created_utc) {
        cutoff = std::min(cutoff, a->created_utc);
      }
    }

    const auto& comments = thread->comments;
    std::optional<size_t> target;
    bool author_commented = false;
    for (size_t i = 0; i < comments.size(); ++i) {
      if (comments[i].author != user) continue;
      author_commented = true;
      if (comments[i].created_utc < cutoff) target = i;
    }
    if (!target) {
      result.rejected[post.id] =
          author_commented ? Rejection::cross_thread_overlap : Rejection::author_never_comments;
      continue;
    }

    bool other = false;
    for (size_t i = 0; i < *target; ++i) other = other || comments[i].author != user;
    if (!other) {
      result.rejected[post.id] = Rejection::no_other_commenter;
      continue;
    }

    bool gap_ok = true;
    int64_t prev = post.created_utc;
    for (size_t i = 0; i <= *target && gap_ok; ++i) {
      gap_ok = comments[i].created_utc - prev < options.max_gap_seconds;
      prev = comments[i].created_utc;
    }
    if (!gap_ok) {
      result.rejected[post.id] = Rejection::gap_exceeded;
      continue;
    }

    ThreadSegment seg;
    seg.segment_id = post.id;
    seg.subreddit = post.subreddit;
    seg.author = user;
    seg.messages.push_back(make_message(post, user));
    for (size_t i = 0; i < *target; ++i) {
      seg.messages.push_back(make_message(comments[i], user));
      if (comments[i].author == user) seg.previous_author_comment = seg.messages.back();
    }
    seg.target = make_message(comments[*target], user);
    seg.n = seg.messages.size();
    seg = truncate_segment(std::move(seg), options.seq_cap);
    if (seg.truncated) ++result.truncated;
    result.segments.push_back(std::move(seg));
  }
  std::sort(result.segments.begin(), result.segments.end(),
            [](const auto& a, const auto& b) { return a.segment_id < b.segment_id; });
  return result;
}

SelectionResult select_all(const std::vector<corpus::ThreadTree>& threads,
                           const SelectOptions& options) {
  std::unordered_map<std::string, std::vector<const corpus::ThreadTree*>> started;
  std::unordered_map<std::string, std::vector<const corpus::Publication*>> activity;
  for (const auto& t : threads) {
    if (t.post.author != corpus::kDeletedAuthor) {
      started[t.post.author].push_back(&t);
      activity[t.post.author].push_back(&t.post);
    }
  }
  for (const auto& t : threads) {
    for (const auto& c : t.comments) {
      auto it = activity.find(c.author);
      if (it != activity.end()) it->second.push_back(&c);
    }
  }

  SelectionResult all;
  for (const auto& [user, user_threads] : started) {
    auto part = select_segments(user, user_threads, activity[user], options);
    all.truncated += part.truncated;
    all.rejected.merge(part.rejected);
    for (auto& s : part.segments) all.segments.push_back(std::move(s));
  }
  std::sort(all.segments.begin(), all.segments.end(),
            [](const auto& a, const auto& b) { return a.segment_id < b.segment_id; });
  return all;
}

// ---------------------------------------------------------------------------

json to_json(const Message& m) {
  json j{{"id", m.id},
         {"author", m.author},
         {"created_utc", m.created_utc},
         {"text", m.text},
         {"kind", corpus::to_string(m.kind)},
         {"is_post_author", m.is_post_author}};
  if (m.emt) j["emt"] = *m.emt;
  return j;
}

Message message_from_json(const json& j) {
  Message m;
  try {
    m.id = j.at("id").get<std::string>();
    m.author = j.at("author").get<std::string>();
    m.created_utc = j.at("created_utc").get<int64_t>();
    m.text = j.at("text").get<std::string>();
    m.kind = j.at("kind").get<std::string>() == "post" ? corpus::Kind::post : corpus::Kind::comment;
    m.is_post_author = j.at("is_post_author").get<bool>();
    if (auto it = j.find("emt"); it != j.end() && !it->is_null()) m.emt = it->get<double>();
  } catch (const json::exception& e) {
    throw MalformedRecord(std::string("bad message record: ") + e.what());
  }
  return m;
}

json to_json(const ThreadSegment& s) {
  json messages = json::array();
  for (const auto& m : s.messages) messages.push_back(to_json(m));
  json j{{"segment_id", s.segment_id},
         {"subreddit", s.subreddit},
         {"author", s.author},
         {"n", s.n},
         {"truncated", s.truncated},
         {"messages", std::move(messages)},
         {"target", to_json(s.target)}};
  if (s.previous_author_comment) j["previous_author_comment"] = to_json(*s.previous_author_comment);
  return j;
}

ThreadSegment segment_from_json(const json& j) {
  ThreadSegment s;
  try {
    s.segment_id = j.at("segment_id").get<std::string>();
    s.subreddit = j.at("subreddit").get<std::string>();
    s.author = j.at("author").get<std::string>();
    s.n = j.at("n").get<size_t>();
    s.truncated = j.at("truncated").get<bool>();
    for (const auto& m : j.at("messages")) s.messages.push_back(message_from_json(m));
    s.target = message_from_json(j.at("target"));
    if (auto it = j.find("previous_author_comment"); it != j.end() && !it->is_null()) {
      s.previous_author_comment = message_from_json(*it);
    }
  } catch (const json::exception& e) {
    throw MalformedRecord(std::string("bad segment record: ") + e.what());
  }
  if (s.messages.empty()) throw MalformedRecord("segment " + s.segment_id + " has no messages");
  return s;
}

void write_segments(const std::filesystem::path& path, const std::vector<ThreadSegment>& segments) {
  std::vector<json> rows;
  rows.reserve(segments.size());
  for (const auto& s : segments) rows.push_back(to_json(s));
  write_jsonl(path, rows);
}

std::vector<ThreadSegment> read_segments(const std::filesystem::path& path) {
  std::vector<ThreadSegment> out;
  for (const auto& row : read_jsonl(path)) out.push_back(segment_from_json(row));
  return out;
}

}  // namespace toneshift::threadsel
