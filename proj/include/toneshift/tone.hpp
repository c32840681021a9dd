#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace toneshift::tone {

/// VADER-style scores. `compound` is the emotional tone.
struct ToneScore {
  double neg = 0.0;
  double neu = 0.0;
  double pos = 0.0;
  double compound = 0.0;

  /// Rounded the way the reference implementation reports its dictionary:
  /// proportions to 3 decimals, compound to 4.
  ToneScore rounded() const;
  bool operator==(const ToneScore&) const = default;
};

/// Python's round(x, ndigits) for doubles.
double python_round(double x, int ndigits);

/// x / sqrt(x^2 + alpha), clamped to [-1, 1].
double normalize_valence(double raw_sum, double alpha = 15.0);

// SHA-256 of the shipped lexicon files.
inline constexpr std::string_view kLexiconSha256 =
    "1ec9c6e9ee19aade328f8beb393a6afa71a5bb3acf7d3cc22d4ef568df374bf5";
inline constexpr std::string_view kEmojiLexiconSha256 =
    "b8d54223ae1ce22a3e12c1f745316b71678c328eb5f5d3063a842f37cfbe2823";

class Lexicon {
 public:
  static Lexicon load(const std::filesystem::path& lexicon_file,
                      const std::filesystem::path& emoji_file);
  /// The lexicon shipped under the data directory. Throws IoFailure when the
  /// files are missing or their checksums differ from the pinned ones.
  static std::shared_ptr<const Lexicon> bundled();

  const double* valence(const std::string& lower_word) const;
  const std::string* emoji_description(char32_t cp) const;
  size_t size() const { return words_.size(); }

  const std::string& checksum() const { return checksum_; }
  const std::string& emoji_checksum() const { return emoji_checksum_; }
  bool matches_pinned() const {
    return checksum_ == kLexiconSha256 && emoji_checksum_ == kEmojiLexiconSha256;
  }

 private:
  std::unordered_map<std::string, double> words_;
  std::unordered_map<char32_t, std::string> emojis_;
  std::string checksum_;
  std::string emoji_checksum_;
};

enum class Granularity { whole_text, sentence_mean };

struct VaderOptions {
  bool translate_emoji = true;
  bool unescape_html = false;
  Granularity granularity = Granularity::whole_text;
};

/// The configuration used for every emotional-tone value in the pipeline:
/// HTML entities decoded, emoji left untranslated, compound averaged over
/// sentences.
VaderOptions emt_options();

class ToneScorer {
 public:
  virtual ~ToneScorer() = default;
  virtual ToneScore score(std::string_view text) const = 0;
  virtual std::string scorer_id() const = 0;
};

class VaderScorer final : public ToneScorer {
 public:
  explicit VaderScorer(std::shared_ptr<const Lexicon> lexicon, VaderOptions options = {});

  /// One pass of the reference algorithm over `text`, unrounded. Empty input
  /// gives all zeros.
  ToneScore polarity_scores(std::string_view text) const;

  /// Applies the configured preprocessing and granularity. Compound is
  /// rounded to 4 decimals; empty or blank text scores neu = 1.
  ToneScore score(std::string_view text) const override;
  std::string scorer_id() const override;

  const Lexicon& lexicon() const { return *lexicon_; }
  const VaderOptions& options() const { return options_; }

 private:
  std::shared_ptr<const Lexicon> lexicon_;
  VaderOptions options_;
  bool translate_emoji_;
};

/// Breaks after runs of . ! ? followed by whitespace, and at line breaks.
std::vector<std::string> split_sentences(std::string_view text);

/// Scores with the bundled lexicon and emt_options().
ToneScore score_text(std::string_view text);
const VaderScorer& default_scorer();

}  // namespace toneshift::tone
