#include "toneshift/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <iomanip>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>
#include <unordered_map>
#include <unordered_set>

#include "toneshift/digest.hpp"
#include "toneshift/error.hpp"
#include "toneshift/text.hpp"

namespace toneshift::corpus {

std::string_view to_string(Kind kind) { return kind == Kind::post ? "post" : "comment"; }

namespace {

const json& require(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) {
    throw MissingField(std::string("record has no '") + key + "'");
  }
  return *it;
}

std::string require_string(const json& obj, const char* key) {
  const json& v = require(obj, key);
  if (!v.is_string()) throw MalformedRecord(std::string("field '") + key + "' is not a string");
  return v.get<std::string>();
}

int64_t parse_timestamp(const json& v) {
  if (v.is_number_integer()) return v.get<int64_t>();
  if (v.is_number_float()) {
    double d = v.get<double>();
    if (!std::isfinite(d) || d != std::floor(d)) throw MalformedRecord("created_utc is not integral");
    return static_cast<int64_t>(d);
  }
  if (v.is_string()) {
    const auto& s = v.get_ref<const std::string&>();
    if (s.empty()) throw MalformedRecord("created_utc is empty");
    size_t pos = 0;
    int64_t value = 0;
    try {
      value = std::stoll(s, &pos);
    } catch (const std::exception&) {
      throw MalformedRecord("created_utc is not a number: " + s);
    }
    if (pos != s.size()) {
      // Tolerate "1483228800.0".
      std::string_view rest(s.data() + pos, s.size() - pos);
      if (rest.find_first_not_of(".0") != std::string_view::npos) {
        throw MalformedRecord("created_utc is not a number: " + s);
      }
    }
    return value;
  }
  throw MalformedRecord("created_utc has unsupported type");
}

std::string strip_fullname_prefix(std::string s) {
  // Reddit "fullnames" look like t3_abc123; the bare id is what links records.
  if (s.size() > 3 && s[0] == 't' && s[1] >= '1' && s[1] <= '6' && s[2] == '_') s.erase(0, 3);
  return s;
}

auto full_key(const Publication& p) {
  return std::tie(p.id, p.kind, p.created_utc, p.author, p.thread_id, p.parent_id, p.subreddit,
                  p.text);
}

bool iequals(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    auto lower = [](char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c + 32) : c; };
    if (lower(a[i]) != lower(b[i])) return false;
  }
  return true;
}

}  // namespace

Publication parse_record(std::string_view line) {
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::exception& e) {
    throw MalformedRecord(std::string("unparseable record: ") + e.what());
  }
  if (!obj.is_object()) throw MalformedRecord("record is not an object");

  Publication pub;
  pub.id = require_string(obj, "id");
  pub.author = require_string(obj, "author");
  pub.created_utc = parse_timestamp(require(obj, "created_utc"));
  pub.subreddit = require_string(obj, "subreddit");
  if (pub.id.empty()) throw MalformedRecord("empty id");
  if (pub.created_utc <= 0) throw MalformedRecord("created_utc must be positive");

  if (obj.contains("title")) {
    pub.kind = Kind::post;
    std::string title = require_string(obj, "title");
    std::string selftext;
    if (auto it = obj.find("selftext"); it != obj.end() && it->is_string()) {
      selftext = it->get<std::string>();
    }
    pub.text = title + "\n" + selftext;
    pub.thread_id = pub.id;
  } else if (obj.contains("body")) {
    pub.kind = Kind::comment;
    pub.text = require_string(obj, "body");
    pub.parent_id = strip_fullname_prefix(require_string(obj, "parent_id"));
    pub.thread_id = strip_fullname_prefix(require_string(obj, "link_id"));
    if (pub.thread_id.empty()) throw MalformedRecord("empty link_id");
  } else {
    throw MissingField("record has neither 'title' nor 'body'");
  }
  return pub;
}

json to_json(const Publication& pub) {
  json row{{"id", pub.id},
           {"thread_id", pub.thread_id},
           {"author", pub.author},
           {"created_utc", pub.created_utc},
           {"text", pub.text},
           {"subreddit", pub.subreddit},
           {"kind", to_string(pub.kind)}};
  if (pub.parent_id) row["parent_id"] = *pub.parent_id;
  return row;
}

Publication publication_from_json(const json& row) {
  Publication pub;
  try {
    pub.id = row.at("id").get<std::string>();
    pub.thread_id = row.at("thread_id").get<std::string>();
    pub.author = row.at("author").get<std::string>();
    pub.created_utc = row.at("created_utc").get<int64_t>();
    pub.text = row.at("text").get<std::string>();
    pub.subreddit = row.at("subreddit").get<std::string>();
    auto kind = row.at("kind").get<std::string>();
    if (kind == "post") {
      pub.kind = Kind::post;
    } else if (kind == "comment") {
      pub.kind = Kind::comment;
    } else {
      throw MalformedRecord("unknown kind " + kind);
    }
    if (auto it = row.find("parent_id"); it != row.end() && !it->is_null()) {
      pub.parent_id = it->get<std::string>();
    }
  } catch (const json::exception& e) {
    throw MalformedRecord(std::string("bad corpus row: ") + e.what());
  }
  if (pub.is_post() != !pub.parent_id.has_value() || pub.is_post() != (pub.id == pub.thread_id)) {
    throw MalformedRecord("post/comment linkage inconsistent for " + pub.id);
  }
  return pub;
}

bool chronological_less(const Publication& a, const Publication& b) {
  return std::tie(a.created_utc, a.id) < std::tie(b.created_utc, b.id);
}

ThreadBuild build_threads(std::vector<Publication> pubs) {
  ThreadBuild out;
  std::sort(pubs.begin(), pubs.end(),
            [](const Publication& a, const Publication& b) { return full_key(a) < full_key(b); });
  auto unique_end = std::unique(pubs.begin(), pubs.end(), [](const auto& a, const auto& b) {
    return a.id == b.id;
  });
  out.duplicate_count = static_cast<size_t>(pubs.end() - unique_end);
  pubs.erase(unique_end, pubs.end());

  std::map<std::string, ThreadTree> by_post;
  for (auto& p : pubs) {
    if (p.is_post()) {
      std::string key = p.id;
      by_post[key].post = std::move(p);
    }
  }
  for (auto& p : pubs) {
    if (p.is_post()) continue;
    auto it = by_post.find(p.thread_id);
    if (it == by_post.end()) {
      ++out.orphan_count;
    } else {
      it->second.comments.push_back(std::move(p));
    }
  }
  out.threads.reserve(by_post.size());
  for (auto& [id, tree] : by_post) {
    std::sort(tree.comments.begin(), tree.comments.end(), chronological_less);
    out.threads.push_back(std::move(tree));
  }
  return out;
}

std::string serialize_corpus(const std::vector<ThreadTree>& threads) {
  std::vector<const Publication*> rows;
  for (const auto& t : threads) {
    rows.push_back(&t.post);
    for (const auto& c : t.comments) rows.push_back(&c);
  }
  std::sort(rows.begin(), rows.end(), [](const Publication* a, const Publication* b) {
    return std::tie(a->thread_id, a->created_utc, a->id) <
           std::tie(b->thread_id, b->created_utc, b->id);
  });
  std::string out;
  for (const auto* p : rows) {
    out += to_json(*p).dump();
    out += '\n';
  }
  return out;
}

void write_corpus(const std::filesystem::path& path, const std::vector<ThreadTree>& threads) {
  write_file_atomic(path, serialize_corpus(threads));
}

std::vector<ThreadTree> read_corpus(const std::filesystem::path& path) {
  std::vector<Publication> pubs;
  size_t line_no = 0;
  for_each_line(path, [&](std::string_view line) {
    ++line_no;
    if (line.empty()) return;
    try {
      pubs.push_back(publication_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw MalformedRecord(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  });
  return build_threads(std::move(pubs)).threads;
}

// ---------------------------------------------------------------------------

json IngestResult::manifest(const std::string& corpus_sha256) const {
  json sources_json = json::array();
  for (const auto& s : sources) {
    sources_json.push_back({{"path", s.path},
                            {"sha256", s.sha256},
                            {"lines", s.lines},
                            {"records", s.records},
                            {"malformed", s.malformed},
                            {"filtered_out", s.filtered_out}});
  }
  size_t threaded_comments = 0;
  for (const auto& t : threads) threaded_comments += t.comments.size();
  return json{{"format", "toneshift-corpus"},
              {"format_version", 1},
              {"corpus_sha256", corpus_sha256},
              {"threads", threads.size()},
              {"posts", posts},
              {"comments", threaded_comments},
              {"comments_parsed", comments_parsed},
              {"orphan_count", orphan_count},
              {"duplicate_count", duplicate_count},
              {"malformed", malformed},
              {"sources", sources_json}};
}

IngestResult ingest(const IngestOptions& options) {
  struct Shard {
    SourceInfo info;
    std::vector<Publication> pubs;
  };
  auto parse_shard = [&options](const std::filesystem::path& path) {
    Shard shard;
    shard.info.path = path.string();
    shard.info.sha256 = sha256_file_hex(path);
    for_each_line(path, [&](std::string_view line) {
      ++shard.info.lines;
      if (text::trim(line).empty()) return;
      try {
        Publication pub = parse_record(line);
        ++shard.info.records;
        if (options.subreddit && !iequals(pub.subreddit, *options.subreddit)) {
          ++shard.info.filtered_out;
          return;
        }
        shard.pubs.push_back(std::move(pub));
      } catch (const Error&) {
        ++shard.info.malformed;
      }
    });
    return shard;
  };

  unsigned workers = options.threads ? options.threads : std::max(1u, std::thread::hardware_concurrency());
  std::vector<Shard> shards(options.inputs.size());
  for (size_t begin = 0; begin < options.inputs.size(); begin += workers) {
    size_t end = std::min(options.inputs.size(), begin + workers);
    std::vector<std::future<Shard>> pending;
    for (size_t i = begin; i < end; ++i) {
      pending.push_back(std::async(std::launch::async, parse_shard, options.inputs[i]));
    }
    for (size_t i = begin; i < end; ++i) shards[i] = pending[i - begin].get();
  }

  IngestResult result;
  std::vector<Publication> all;
  for (auto& shard : shards) {
    result.malformed += shard.info.malformed;
    for (auto& p : shard.pubs) {
      if (p.is_post()) {
        ++result.posts;
      } else {
        ++result.comments_parsed;
      }
      all.push_back(std::move(p));
    }
    result.sources.push_back(std::move(shard.info));
  }
  auto built = build_threads(std::move(all));
  result.threads = std::move(built.threads);
  result.orphan_count = built.orphan_count;
  result.duplicate_count = built.duplicate_count;
  return result;
}

// ---------------------------------------------------------------------------

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

namespace {

Summary summarize(const std::vector<double>& values) {
  if (values.empty()) return {};
  return {median(values), *std::max_element(values.begin(), values.end())};
}

std::string user_key(const Publication& p) {
  if (p.author == kDeletedAuthor) return std::string(kDeletedAuthor) + "#" + p.id;
  return p.author;
}

CommunityStats community_stats(const std::vector<const ThreadTree*>& threads) {
  CommunityStats s;
  std::map<std::string, size_t> posts_by_user;
  std::map<std::string, size_t> comments_by_user;
  std::vector<double> per_thread, post_len, comment_len;
  for (const auto* t : threads) {
    ++s.threads;
    ++posts_by_user[user_key(t->post)];
    post_len.push_back(static_cast<double>(text::code_point_count(t->post.text)));
    per_thread.push_back(static_cast<double>(t->comments.size()));
    for (const auto& c : t->comments) {
      ++s.comments;
      ++comments_by_user[user_key(c)];
      comment_len.push_back(static_cast<double>(text::code_point_count(c.text)));
    }
  }
  std::set<std::string> users;
  std::vector<double> ppp, cpc;
  for (const auto& [u, n] : posts_by_user) {
    users.insert(u);
    ppp.push_back(static_cast<double>(n));
  }
  for (const auto& [u, n] : comments_by_user) {
    users.insert(u);
    cpc.push_back(static_cast<double>(n));
  }
  s.unique_users = users.size();
  s.posting_users = posts_by_user.size();
  s.commenters = comments_by_user.size();
  s.posts_per_poster = summarize(ppp);
  s.comments_per_commenter = summarize(cpc);
  s.comments_in_thread = summarize(per_thread);
  s.post_length = summarize(post_len);
  s.comment_length = summarize(comment_len);
  return s;
}

json summary_json(const Summary& s) { return json{{"median", s.median}, {"max", s.max}}; }

json stats_json(const CommunityStats& s) {
  return json{{"threads", s.threads},
              {"comments", s.comments},
              {"unique_users", s.unique_users},
              {"posting_users", s.posting_users},
              {"commenters", s.commenters},
              {"posts_per_poster", summary_json(s.posts_per_poster)},
              {"comments_per_commenter", summary_json(s.comments_per_commenter)},
              {"comments_in_thread", summary_json(s.comments_in_thread)},
              {"post_length", summary_json(s.post_length)},
              {"comment_length", summary_json(s.comment_length)}};
}

}  // namespace

StatsTable descriptive_stats(const std::vector<ThreadTree>& threads) {
  if (threads.empty()) throw InvalidArgument("descriptive_stats: empty corpus");
  std::map<std::string, std::vector<const ThreadTree*>> groups;
  std::vector<const ThreadTree*> all;
  for (const auto& t : threads) {
    groups[t.post.subreddit].push_back(&t);
    all.push_back(&t);
  }
  StatsTable table;
  for (const auto& [sub, members] : groups) table.by_subreddit[sub] = community_stats(members);
  table.total = community_stats(all);
  return table;
}

json StatsTable::to_json() const {
  json out{{"total", stats_json(total)}, {"subreddits", json::object()}};
  for (const auto& [sub, s] : by_subreddit) out["subreddits"][sub] = stats_json(s);
  return out;
}

std::string StatsTable::render() const {
  std::vector<std::pair<std::string, const CommunityStats*>> cols;
  for (const auto& [sub, s] : by_subreddit) cols.emplace_back(sub, &s);
  cols.emplace_back("Total", &total);

  std::ostringstream os;
  auto row_count = [&](const std::string& label, size_t CommunityStats::*field) {
    os << std::left << std::setw(28) << label;
    for (const auto& [name, s] : cols) os << std::right << std::setw(16) << s->*field;
    os << '\n';
  };
  auto row_summary = [&](const std::string& label, Summary CommunityStats::*field) {
    os << std::left << std::setw(28) << label;
    for (const auto& [name, s] : cols) {
      const Summary& v = s->*field;
      std::ostringstream cell;
      cell << format_double(v.median) << " / " << format_double(v.max);
      os << std::right << std::setw(16) << cell.str();
    }
    os << '\n';
  };
  os << std::left << std::setw(28) << "";
  for (const auto& [name, s] : cols) os << std::right << std::setw(16) << name;
  os << '\n';
  row_count("Threads (posts)", &CommunityStats::threads);
  row_count("Comments", &CommunityStats::comments);
  row_count("Unique users", &CommunityStats::unique_users);
  row_count("Posting users", &CommunityStats::posting_users);
  row_count("Commenters", &CommunityStats::commenters);
  os << "(median / max)\n";
  row_summary("Posts per posting user", &CommunityStats::posts_per_poster);
  row_summary("Comments per commenter", &CommunityStats::comments_per_commenter);
  row_summary("Comments in thread", &CommunityStats::comments_in_thread);
  row_summary("Post length (chars)", &CommunityStats::post_length);
  row_summary("Comment length (chars)", &CommunityStats::comment_length);
  return os.str();
}

}  // namespace toneshift::corpus
