#include "toneshift/tone.hpp"

#include <charconv>
#include <cmath>
#include <mutex>
#include <unordered_set>

#include "toneshift/digest.hpp"
#include "toneshift/error.hpp"
#include "toneshift/io.hpp"
#include "toneshift/text.hpp"

namespace toneshift::tone {

namespace {

constexpr double kBIncr = 0.293;
constexpr double kBDecr = -0.293;
constexpr double kCIncr = 0.733;
constexpr double kNScalar = -0.74;

const std::unordered_set<std::string>& negate_words() {
  static const std::unordered_set<std::string> words{
      "aint",    "arent",   "cannot",   "cant",     "couldnt",  "darent",   "didnt",
      "doesnt",  "ain't",   "aren't",   "can't",    "couldn't", "daren't",  "didn't",
      "doesn't", "dont",    "hadnt",    "hasnt",    "havent",   "isnt",     "mightnt",
      "mustnt",  "neither", "don't",    "hadn't",   "hasn't",   "haven't",  "isn't",
      "mightn't", "mustn't", "neednt",  "needn't",  "never",    "none",     "nope",
      "nor",     "not",     "nothing",  "nowhere",  "oughtnt",  "shant",    "shouldnt",
      "uhuh",    "wasnt",   "werent",   "oughtn't", "shan't",   "shouldn't", "uh-uh",
      "wasn't",  "weren't", "without",  "wont",     "wouldnt",  "won't",    "wouldn't",
      "rarely",  "seldom",  "despite"};
  return words;
}

const std::unordered_map<std::string, double>& booster_dict() {
  static const std::unordered_map<std::string, double> dict = [] {
    std::unordered_map<std::string, double> d;
    for (const char* w :
         {"absolutely", "amazingly", "awfully", "completely", "considerable", "considerably",
          "decidedly", "deeply", "effing", "enormous", "enormously", "entirely", "especially",
          "exceptional", "exceptionally", "extreme", "extremely", "fabulously", "flipping",
          "flippin", "frackin", "fracking", "fricking", "frickin", "frigging", "friggin", "fully",
          "fuckin", "fucking", "fuggin", "fugging", "greatly", "hella", "highly", "hugely",
          "incredible", "incredibly", "intensely", "major", "majorly", "more", "most",
          "particularly", "purely", "quite", "really", "remarkably", "so", "substantially",
          "thoroughly", "total", "totally", "tremendous", "tremendously", "uber", "unbelievably",
          "unusually", "utter", "utterly", "very"}) {
      d[w] = kBIncr;
    }
    for (const char* w :
         {"almost", "barely", "hardly", "just enough", "kind of", "kinda", "kindof", "kind-of",
          "less", "little", "marginal", "marginally", "occasional", "occasionally", "partly",
          "scarce", "scarcely", "slight", "slightly", "somewhat", "sort of", "sorta", "sortof",
          "sort-of"}) {
      d[w] = kBDecr;
    }
    return d;
  }();
  return dict;
}

const std::unordered_map<std::string, double>& special_cases() {
  static const std::unordered_map<std::string, double> dict{
      {"the shit", 3},      {"the bomb", 3},      {"bad ass", 1.5},
      {"badass", 1.5},      {"bus stop", 0.0},    {"yeah right", -2},
      {"kiss of death", -1.5}, {"to die for", 3}, {"beating heart", 3.5}};
  return dict;
}

bool negated(const std::string& lower_word) {
  return negate_words().count(lower_word) > 0 || lower_word.find("n't") != std::string::npos;
}

bool is_ascii_punct(char32_t cp) {
  return (cp >= 0x21 && cp <= 0x2F) || (cp >= 0x3A && cp <= 0x40) || (cp >= 0x5B && cp <= 0x60) ||
         (cp >= 0x7B && cp <= 0x7E);
}

// Leading/trailing punctuation is removed unless that leaves two or fewer
// characters, which keeps emoticons such as ":)" intact.
std::string strip_punct_if_word(const std::string& token) {
  std::u32string cps = text::decode_utf8(token);
  size_t b = 0, e = cps.size();
  while (b < e && is_ascii_punct(cps[b])) ++b;
  while (e > b && is_ascii_punct(cps[e - 1])) --e;
  if (e - b <= 2) return token;
  return text::encode_utf8(std::u32string_view(cps).substr(b, e - b));
}

size_t count_char(std::string_view s, char c) {
  size_t n = 0;
  for (char x : s) n += x == c;
  return n;
}

class Pass {
 public:
  Pass(const Lexicon& lex, const std::vector<std::string>& words)
      : lex_(lex), words_(words) {
    lower_.reserve(words.size());
    size_t allcaps = 0;
    for (const auto& w : words) {
      lower_.push_back(text::to_lower(w));
      upper_.push_back(text::is_upper(w));
      allcaps += upper_.back();
    }
    size_t diff = words.size() - allcaps;
    cap_diff_ = diff > 0 && diff < words.size();
  }

  std::vector<double> sentiments() const {
    std::vector<double> out;
    out.reserve(words_.size());
    const auto& boosters = booster_dict();
    for (size_t i = 0; i < words_.size(); ++i) {
      if (boosters.count(lower_[i])) {
        out.push_back(0.0);
        continue;
      }
      if (i + 1 < words_.size() && lower_[i] == "kind" && lower_[i + 1] == "of") {
        out.push_back(0.0);
        continue;
      }
      out.push_back(valence_at(i));
    }
    but_check(out);
    return out;
  }

 private:
  bool in_lexicon(size_t i) const { return lex_.valence(lower_[i]) != nullptr; }

  double scalar_inc_dec(size_t j, double valence) const {
    const auto& boosters = booster_dict();
    auto it = boosters.find(lower_[j]);
    if (it == boosters.end()) return 0.0;
    double scalar = it->second;
    if (valence < 0) scalar *= -1;
    if (upper_[j] && cap_diff_) scalar += valence > 0 ? kCIncr : -kCIncr;
    return scalar;
  }

  double valence_at(size_t i) const {
    const double* base = lex_.valence(lower_[i]);
    if (!base) return 0.0;
    const size_t n = words_.size();
    double valence = *base;

    if (lower_[i] == "no" && i != n - 1 && in_lexicon(i + 1)) valence = 0.0;
    if ((i > 0 && lower_[i - 1] == "no") || (i > 1 && lower_[i - 2] == "no") ||
        (i > 2 && lower_[i - 3] == "no" && (lower_[i - 1] == "or" || lower_[i - 1] == "nor"))) {
      valence = *base * kNScalar;
    }

    if (upper_[i] && cap_diff_) valence += valence > 0 ? kCIncr : -kCIncr;

    for (size_t start = 0; start < 3; ++start) {
      if (i > start && !in_lexicon(i - (start + 1))) {
        double s = scalar_inc_dec(i - (start + 1), valence);
        if (start == 1 && s != 0) s *= 0.95;
        if (start == 2 && s != 0) s *= 0.9;
        valence += s;
        valence = negation_check(valence, start, i);
        if (start == 2) valence = special_idioms_check(valence, i);
      }
    }
    return least_check(valence, i);
  }

  double negation_check(double valence, size_t start, size_t i) const {
    const auto& w = lower_;
    if (start == 0) {
      if (negated(w[i - 1])) valence *= kNScalar;
    } else if (start == 1) {
      if (w[i - 2] == "never" && (w[i - 1] == "so" || w[i - 1] == "this")) {
        valence *= 1.25;
      } else if (w[i - 2] == "without" && w[i - 1] == "doubt") {
        // unchanged
      } else if (negated(w[i - 2])) {
        valence *= kNScalar;
      }
    } else {
      if ((w[i - 3] == "never" && (w[i - 2] == "so" || w[i - 2] == "this")) ||
          (w[i - 1] == "so" || w[i - 1] == "this")) {
        valence *= 1.25;
      } else if (w[i - 3] == "without" && (w[i - 2] == "doubt" || w[i - 1] == "doubt")) {
        // unchanged
      } else if (negated(w[i - 3])) {
        valence *= kNScalar;
      }
    }
    return valence;
  }

  double special_idioms_check(double valence, size_t i) const {
    const auto& w = lower_;
    const auto& cases = special_cases();
    const std::string onezero = w[i - 1] + " " + w[i];
    const std::string twoonezero = w[i - 2] + " " + w[i - 1] + " " + w[i];
    const std::string twoone = w[i - 2] + " " + w[i - 1];
    const std::string threetwoone = w[i - 3] + " " + w[i - 2] + " " + w[i - 1];
    const std::string threetwo = w[i - 3] + " " + w[i - 2];
    for (const auto* seq : {&onezero, &twoonezero, &twoone, &threetwoone, &threetwo}) {
      if (auto it = cases.find(*seq); it != cases.end()) {
        valence = it->second;
        break;
      }
    }
    if (w.size() - 1 > i) {
      if (auto it = cases.find(w[i] + " " + w[i + 1]); it != cases.end()) valence = it->second;
    }
    if (w.size() - 1 > i + 1) {
      if (auto it = cases.find(w[i] + " " + w[i + 1] + " " + w[i + 2]); it != cases.end()) {
        valence = it->second;
      }
    }
    const auto& boosters = booster_dict();
    for (const auto* gram : {&threetwoone, &threetwo, &twoone}) {
      if (auto it = boosters.find(*gram); it != boosters.end()) valence += it->second;
    }
    return valence;
  }

  double least_check(double valence, size_t i) const {
    const auto& w = lower_;
    if (i > 1 && !in_lexicon(i - 1) && w[i - 1] == "least") {
      if (w[i - 2] != "at" && w[i - 2] != "very") valence *= kNScalar;
    } else if (i > 0 && !in_lexicon(i - 1) && w[i - 1] == "least") {
      valence *= kNScalar;
    }
    return valence;
  }

  // Reproduces the reference behaviour exactly, including its habit of
  // locating each value by its first occurrence in the list.
  void but_check(std::vector<double>& s) const {
    size_t bi = 0;
    bool found = false;
    for (size_t k = 0; k < lower_.size(); ++k) {
      if (lower_[k] == "but") {
        bi = k;
        found = true;
        break;
      }
    }
    if (!found) return;
    for (size_t k = 0; k < s.size(); ++k) {
      double v = s[k];
      size_t si = 0;
      while (s[si] != v) ++si;
      if (si < bi) {
        s[si] = v * 0.5;
      } else if (si > bi) {
        s[si] = v * 1.5;
      }
    }
  }

  const Lexicon& lex_;
  const std::vector<std::string>& words_;
  std::vector<std::string> lower_;
  std::vector<bool> upper_;
  bool cap_diff_ = false;
};

ToneScore score_valence(const std::vector<double>& sentiments, std::string_view text) {
  ToneScore out;
  if (sentiments.empty()) return out;
  double sum = 0.0;
  for (double s : sentiments) sum += s;

  size_t ep = std::min<size_t>(count_char(text, '!'), 4);
  double amplifier = static_cast<double>(ep) * 0.292;
  size_t qm = count_char(text, '?');
  if (qm > 1) amplifier += qm <= 3 ? static_cast<double>(qm) * 0.18 : 0.96;

  if (sum > 0) {
    sum += amplifier;
  } else if (sum < 0) {
    sum -= amplifier;
  }
  out.compound = normalize_valence(sum);

  double pos_sum = 0.0, neg_sum = 0.0;
  size_t neu_count = 0;
  for (double s : sentiments) {
    if (s > 0) pos_sum += s + 1;
    if (s < 0) neg_sum += s - 1;
    if (s == 0) ++neu_count;
  }
  if (pos_sum > std::fabs(neg_sum)) {
    pos_sum += amplifier;
  } else if (pos_sum < std::fabs(neg_sum)) {
    neg_sum -= amplifier;
  }
  double total = pos_sum + std::fabs(neg_sum) + static_cast<double>(neu_count);
  out.pos = std::fabs(pos_sum / total);
  out.neg = std::fabs(neg_sum / total);
  out.neu = std::fabs(static_cast<double>(neu_count) / total);
  return out;
}

std::string python_strip(std::string_view s) {
  std::u32string cps = text::decode_utf8(s);
  size_t b = 0, e = cps.size();
  while (b < e && text::is_space(cps[b])) ++b;
  while (e > b && text::is_space(cps[e - 1])) --e;
  return text::encode_utf8(std::u32string_view(cps).substr(b, e - b));
}

}  // namespace

double python_round(double x, int ndigits) {
  if (!std::isfinite(x)) return x;
  char buf[400];
  auto res = std::to_chars(buf, buf + sizeof(buf), x, std::chars_format::fixed, ndigits);
  double out = 0.0;
  std::from_chars(buf, res.ptr, out);
  return out;
}

ToneScore ToneScore::rounded() const {
  return {python_round(neg, 3), python_round(neu, 3), python_round(pos, 3),
          python_round(compound, 4)};
}

double normalize_valence(double raw_sum, double alpha) {
  double v = raw_sum / std::sqrt(raw_sum * raw_sum + alpha);
  if (v < -1.0) return -1.0;
  if (v > 1.0) return 1.0;
  return v;
}

// ---------------------------------------------------------------------------

Lexicon Lexicon::load(const std::filesystem::path& lexicon_file,
                      const std::filesystem::path& emoji_file) {
  Lexicon lex;
  std::string words = read_file(lexicon_file);
  std::string emojis = read_file(emoji_file);
  lex.checksum_ = sha256_hex(words);
  lex.emoji_checksum_ = sha256_hex(emojis);

  auto each_line = [](std::string_view content, auto&& fn) {
    size_t pos = 0;
    while (pos < content.size()) {
      size_t nl = content.find('\n', pos);
      if (nl == std::string_view::npos) nl = content.size();
      fn(content.substr(pos, nl - pos));
      pos = nl + 1;
    }
  };
  each_line(words, [&](std::string_view line) {
    line = text::trim(line);
    if (line.empty()) return;
    size_t t1 = line.find('\t');
    if (t1 == std::string_view::npos) throw IoFailure("bad lexicon line: " + std::string(line));
    size_t t2 = line.find('\t', t1 + 1);
    std::string_view measure = line.substr(t1 + 1, t2 == std::string_view::npos ? t2 : t2 - t1 - 1);
    double value = 0.0;
    auto res = std::from_chars(measure.data(), measure.data() + measure.size(), value);
    if (res.ec != std::errc()) throw IoFailure("bad lexicon valence: " + std::string(line));
    lex.words_[std::string(line.substr(0, t1))] = value;
  });
  each_line(emojis, [&](std::string_view line) {
    line = text::trim(line);
    if (line.empty()) return;
    size_t t1 = line.find('\t');
    if (t1 == std::string_view::npos) return;
    size_t t2 = line.find('\t', t1 + 1);
    std::u32string key = text::decode_utf8(line.substr(0, t1));
    // Only single code points can ever match during translation.
    if (key.size() != 1) return;
    lex.emojis_[key[0]] =
        std::string(line.substr(t1 + 1, t2 == std::string_view::npos ? t2 : t2 - t1 - 1));
  });
  return lex;
}

std::shared_ptr<const Lexicon> Lexicon::bundled() {
  static std::mutex mu;
  static std::shared_ptr<const Lexicon> cached;
  std::lock_guard lock(mu);
  if (!cached) {
    auto dir = data_dir() / "lexicon";
    auto lex = std::make_shared<Lexicon>(
        load(dir / "vader_lexicon.txt", dir / "emoji_utf8_lexicon.txt"));
    if (!lex->matches_pinned()) {
      throw IoFailure("lexicon checksum mismatch in " + dir.string() + " (got " + lex->checksum() +
                      ")");
    }
    cached = std::move(lex);
  }
  return cached;
}

const double* Lexicon::valence(const std::string& lower_word) const {
  auto it = words_.find(lower_word);
  return it == words_.end() ? nullptr : &it->second;
}

const std::string* Lexicon::emoji_description(char32_t cp) const {
  auto it = emojis_.find(cp);
  return it == emojis_.end() ? nullptr : &it->second;
}

// ---------------------------------------------------------------------------

VaderOptions emt_options() {
  return VaderOptions{false, true, Granularity::sentence_mean};
}

VaderScorer::VaderScorer(std::shared_ptr<const Lexicon> lexicon, VaderOptions options)
    : lexicon_(std::move(lexicon)), options_(options), translate_emoji_(options.translate_emoji) {
  if (!lexicon_) throw InvalidArgument("VaderScorer needs a lexicon");
}

ToneScore VaderScorer::polarity_scores(std::string_view input) const {
  std::string text;
  if (translate_emoji_) {
    bool prev_space = true;
    for (char32_t cp : text::decode_utf8(input)) {
      if (const std::string* desc = lexicon_->emoji_description(cp)) {
        if (!prev_space) text.push_back(' ');
        text += *desc;
        prev_space = false;
      } else {
        text::append_utf8(text, cp);
        prev_space = cp == U' ';
      }
    }
    text = python_strip(text);
  } else {
    text = python_strip(input);
  }

  std::vector<std::string> words = text::split_whitespace(text);
  for (auto& w : words) w = strip_punct_if_word(w);
  Pass pass(*lexicon_, words);
  return score_valence(pass.sentiments(), text);
}

ToneScore VaderScorer::score(std::string_view input) const {
  std::string text = options_.unescape_html ? text::html_unescape(input) : std::string(input);
  ToneScore blank{0.0, 1.0, 0.0, 0.0};
  if (options_.granularity == Granularity::whole_text) {
    ToneScore s = polarity_scores(text);
    if (s.neg == 0 && s.neu == 0 && s.pos == 0) return blank;
    s.compound = python_round(s.compound, 4);
    return s;
  }
  auto sentences = split_sentences(text);
  if (sentences.empty()) return blank;
  ToneScore acc;
  for (const auto& sentence : sentences) {
    ToneScore s = polarity_scores(sentence);
    if (s.neg == 0 && s.neu == 0 && s.pos == 0) s.neu = 1.0;
    acc.neg += s.neg;
    acc.neu += s.neu;
    acc.pos += s.pos;
    acc.compound += python_round(s.compound, 4);
  }
  double k = static_cast<double>(sentences.size());
  return {acc.neg / k, acc.neu / k, acc.pos / k, acc.compound / k};
}

std::string VaderScorer::scorer_id() const {
  std::string id = "vader-3.3.2:" + lexicon_->checksum().substr(0, 12);
  id += options_.granularity == Granularity::sentence_mean ? ":sentences" : ":whole";
  if (!options_.translate_emoji) id += ":no-emoji";
  if (options_.unescape_html) id += ":html";
  return id;
}

std::vector<std::string> split_sentences(std::string_view input) {
  std::u32string cps = text::decode_utf8(input);
  std::vector<std::string> out;
  std::u32string current;
  auto flush = [&] {
    size_t b = 0, e = current.size();
    while (b < e && text::is_space(current[b])) ++b;
    while (e > b && text::is_space(current[e - 1])) --e;
    if (e > b) out.push_back(text::encode_utf8(std::u32string_view(current).substr(b, e - b)));
    current.clear();
  };
  size_t i = 0;
  while (i < cps.size()) {
    if (!text::is_space(cps[i])) {
      current.push_back(cps[i++]);
      continue;
    }
    size_t j = i;
    bool newline = false;
    while (j < cps.size() && text::is_space(cps[j])) {
      newline = newline || cps[j] == U'\n' || cps[j] == U'\r';
      ++j;
    }
    char32_t before = i > 0 ? cps[i - 1] : 0;
    if (newline || before == U'.' || before == U'!' || before == U'?') {
      flush();
    } else {
      current.append(cps, i, j - i);
    }
    i = j;
  }
  flush();
  return out;
}

const VaderScorer& default_scorer() {
  static const VaderScorer scorer(Lexicon::bundled(), emt_options());
  return scorer;
}

ToneScore score_text(std::string_view text) { return default_scorer().score(text); }

}  // namespace toneshift::tone
