#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include <Eigen/Dense>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "toneshift/digest.hpp"
#include "toneshift/embed.hpp"
#include "toneshift/error.hpp"
#include "toneshift/io.hpp"
#include "toneshift/text.hpp"

namespace toneshift::embed {

namespace {

using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXf;

bool is_control(char32_t cp) {
  if (cp == U'\t' || cp == U'\n' || cp == U'\r') return false;
  int8_t type = u_charType(static_cast<UChar32>(cp));
  return type == U_CONTROL_CHAR || type == U_FORMAT_CHAR || type == U_SURROGATE ||
         type == U_PRIVATE_USE_CHAR || type == U_UNASSIGNED;
}

bool is_bert_space(char32_t cp) {
  return cp == U' ' || cp == U'\t' || cp == U'\n' || cp == U'\r' ||
         u_charType(static_cast<UChar32>(cp)) == U_SPACE_SEPARATOR;
}

bool is_punctuation(char32_t cp) {
  if ((cp >= 33 && cp <= 47) || (cp >= 58 && cp <= 64) || (cp >= 91 && cp <= 96) ||
      (cp >= 123 && cp <= 126)) {
    return true;
  }
  switch (u_charType(static_cast<UChar32>(cp))) {
    case U_DASH_PUNCTUATION:
    case U_START_PUNCTUATION:
    case U_END_PUNCTUATION:
    case U_CONNECTOR_PUNCTUATION:
    case U_OTHER_PUNCTUATION:
    case U_INITIAL_PUNCTUATION:
    case U_FINAL_PUNCTUATION:
      return true;
    default:
      return false;
  }
}

bool is_cjk(char32_t cp) {
  return (cp >= 0x4E00 && cp <= 0x9FFF) || (cp >= 0x3400 && cp <= 0x4DBF) ||
         (cp >= 0x20000 && cp <= 0x2A6DF) || (cp >= 0x2A700 && cp <= 0x2B73F) ||
         (cp >= 0x2B740 && cp <= 0x2B81F) || (cp >= 0x2B820 && cp <= 0x2CEAF) ||
         (cp >= 0xF900 && cp <= 0xFAFF) || (cp >= 0x2F800 && cp <= 0x2FA1F);
}

std::u32string strip_accents(const std::u32string& s) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfd = icu::Normalizer2::getNFDInstance(status);
  if (U_FAILURE(status)) throw EncodeFailure("ICU NFD normalizer unavailable");
  icu::UnicodeString in = icu::UnicodeString::fromUTF32(reinterpret_cast<const UChar32*>(s.data()),
                                                         static_cast<int32_t>(s.size()));
  icu::UnicodeString decomposed = nfd->normalize(in, status);
  if (U_FAILURE(status)) throw EncodeFailure("NFD normalization failed");
  std::u32string out;
  for (int32_t i = 0; i < decomposed.length();) {
    UChar32 cp = decomposed.char32At(i);
    if (u_charType(cp) != U_NON_SPACING_MARK) out.push_back(static_cast<char32_t>(cp));
    i += U16_LENGTH(cp);
  }
  return out;
}

}  // namespace

WordPieceTokenizer::WordPieceTokenizer(std::vector<std::string> vocab, bool do_lower_case)
    : vocab_(std::move(vocab)), lower_(do_lower_case) {
  for (size_t i = 0; i < vocab_.size(); ++i) ids_[vocab_[i]] = static_cast<int32_t>(i);
  auto need = [&](const char* tok) {
    auto it = ids_.find(tok);
    if (it == ids_.end()) throw ProviderUnavailable(std::string("vocabulary lacks ") + tok);
    return it->second;
  };
  unk_ = need("[UNK]");
  cls_ = need("[CLS]");
  sep_ = need("[SEP]");
}

WordPieceTokenizer WordPieceTokenizer::from_file(const std::filesystem::path& vocab_file,
                                                 bool do_lower_case) {
  std::vector<std::string> vocab;
  for_each_line(vocab_file, [&](std::string_view line) { vocab.emplace_back(text::trim(line)); });
  return WordPieceTokenizer(std::move(vocab), do_lower_case);
}

int32_t WordPieceTokenizer::id_of(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? unk_ : it->second;
}

std::vector<std::string> WordPieceTokenizer::basic_tokenize(std::string_view input) const {
  std::u32string cleaned;
  for (char32_t cp : text::decode_utf8(input)) {
    if (cp == 0 || cp == 0xFFFD || is_control(cp)) continue;
    if (is_bert_space(cp)) {
      cleaned.push_back(U' ');
    } else if (is_cjk(cp)) {
      cleaned.push_back(U' ');
      cleaned.push_back(cp);
      cleaned.push_back(U' ');
    } else {
      cleaned.push_back(cp);
    }
  }

  std::vector<std::string> out;
  std::u32string word;
  auto emit_word = [&] {
    if (word.empty()) return;
    std::u32string w = word;
    word.clear();
    if (lower_) {
      w = text::decode_utf8(text::to_lower(text::encode_utf8(w)));
      w = strip_accents(w);
    }
    std::u32string piece;
    for (char32_t cp : w) {
      if (is_punctuation(cp)) {
        if (!piece.empty()) out.push_back(text::encode_utf8(piece));
        piece.clear();
        out.push_back(text::encode_utf8(std::u32string(1, cp)));
      } else {
        piece.push_back(cp);
      }
    }
    if (!piece.empty()) out.push_back(text::encode_utf8(piece));
  };
  for (char32_t cp : cleaned) {
    if (text::is_space(cp)) {
      emit_word();
    } else {
      word.push_back(cp);
    }
  }
  emit_word();
  return out;
}

std::vector<std::string> WordPieceTokenizer::wordpiece(const std::string& word) const {
  std::u32string cps = text::decode_utf8(word);
  if (cps.size() > 100) return {"[UNK]"};
  std::vector<std::string> pieces;
  size_t start = 0;
  while (start < cps.size()) {
    size_t end = cps.size();
    std::string found;
    while (start < end) {
      std::string candidate = text::encode_utf8(std::u32string_view(cps).substr(start, end - start));
      if (start > 0) candidate = "##" + candidate;
      if (ids_.count(candidate)) {
        found = std::move(candidate);
        break;
      }
      --end;
    }
    if (found.empty()) return {"[UNK]"};
    pieces.push_back(std::move(found));
    start = end;
  }
  return pieces;
}

std::vector<int32_t> WordPieceTokenizer::encode(std::string_view input, size_t max_len) const {
  if (max_len < 2) throw InvalidArgument("max_len must leave room for [CLS] and [SEP]");
  std::vector<int32_t> ids{cls_};
  for (const auto& word : basic_tokenize(input)) {
    for (const auto& piece : wordpiece(word)) {
      if (ids.size() + 1 >= max_len) break;
      ids.push_back(id_of(piece));
    }
    if (ids.size() + 1 >= max_len) break;
  }
  ids.push_back(sep_);
  return ids;
}

// ---------------------------------------------------------------------------

struct TransformerEmbedder::Impl {
  struct Layer {
    Matrix q_w, k_w, v_w, o_w, ff1_w, ff2_w;
    Vector q_b, k_b, v_b, o_b, ff1_b, ff2_b;
    Vector sa_ln_g, sa_ln_b, out_ln_g, out_ln_b;
  };

  TransformerConfig config;
  Pooling pooling = Pooling::first_token;
  std::unique_ptr<WordPieceTokenizer> tokenizer;
  Matrix word_emb, pos_emb;
  Vector emb_ln_g, emb_ln_b;
  std::vector<Layer> layers;
  std::string weights_digest;

  void layer_norm(Matrix& x, const Vector& g, const Vector& b) const {
    const float eps = static_cast<float>(config.layer_norm_eps);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      auto row = x.row(r);
      float mean = row.mean();
      float var = (row.array() - mean).square().mean();
      row = (((row.array() - mean) / std::sqrt(var + eps)) * g.transpose().array() +
             b.transpose().array())
                .matrix();
    }
  }

  static Matrix linear(const Matrix& x, const Matrix& w, const Vector& b) {
    Matrix y = x * w.transpose();
    y.rowwise() += b.transpose();
    return y;
  }

  Matrix forward(const std::vector<int32_t>& ids) const {
    const auto T = static_cast<Eigen::Index>(ids.size());
    const auto D = static_cast<Eigen::Index>(config.dim);
    Matrix x(T, D);
    for (Eigen::Index t = 0; t < T; ++t) {
      x.row(t) = word_emb.row(ids[static_cast<size_t>(t)]) + pos_emb.row(t);
    }
    layer_norm(x, emb_ln_g, emb_ln_b);

    const auto H = static_cast<Eigen::Index>(config.n_heads);
    const Eigen::Index dh = D / H;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
    for (const auto& L : layers) {
      Matrix q = linear(x, L.q_w, L.q_b) * scale;
      Matrix k = linear(x, L.k_w, L.k_b);
      Matrix v = linear(x, L.v_w, L.v_b);
      Matrix context(T, D);
      for (Eigen::Index h = 0; h < H; ++h) {
        Matrix scores = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose();
        for (Eigen::Index r = 0; r < T; ++r) {
          auto row = scores.row(r);
          float m = row.maxCoeff();
          row = (row.array() - m).exp().matrix();
          row /= row.sum();
        }
        context.middleCols(h * dh, dh) = scores * v.middleCols(h * dh, dh);
      }
      Matrix sa = linear(context, L.o_w, L.o_b) + x;
      layer_norm(sa, L.sa_ln_g, L.sa_ln_b);
      Matrix ff = linear(sa, L.ff1_w, L.ff1_b);
      ff = ff.unaryExpr([](float z) {
        return 0.5f * z * (1.0f + std::erf(z / static_cast<float>(M_SQRT2)));
      });
      Matrix out = linear(ff, L.ff2_w, L.ff2_b) + sa;
      layer_norm(out, L.out_ln_g, L.out_ln_b);
      x = std::move(out);
    }
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      if (!std::isfinite(x.data()[i])) throw EncodeFailure("non-finite encoder activation");
    }
    return x;
  }
};

namespace {

struct TensorTable {
  std::map<std::string, std::pair<std::vector<size_t>, size_t>> entries;  // shape, float offset
  std::vector<float> payload;

  const std::pair<std::vector<size_t>, size_t>& find(const std::string& name) const {
    auto it = entries.find(name);
    if (it == entries.end()) throw ProviderUnavailable("weights.bin lacks tensor " + name);
    return it->second;
  }

  Matrix matrix(const std::string& name, size_t rows, size_t cols) const {
    const auto& [shape, offset] = find(name);
    if (shape.size() != 2 || shape[0] != rows || shape[1] != cols) {
      throw ProviderUnavailable("tensor " + name + " has an unexpected shape");
    }
    Matrix m(rows, cols);
    std::memcpy(m.data(), payload.data() + offset, rows * cols * sizeof(float));
    return m;
  }

  Vector vector(const std::string& name, size_t n) const {
    const auto& [shape, offset] = find(name);
    if (shape.size() != 1 || shape[0] != n) {
      throw ProviderUnavailable("tensor " + name + " has an unexpected shape");
    }
    Vector v(n);
    std::memcpy(v.data(), payload.data() + offset, n * sizeof(float));
    return v;
  }
};

TensorTable read_weights(const std::filesystem::path& path, std::string& digest) {
  std::string raw = read_file(path);
  digest = sha256_hex(raw);
  if (raw.size() < 12 || raw.compare(0, 8, "TSWT0001") != 0) {
    throw ProviderUnavailable("not a toneshift weight file: " + path.string());
  }
  uint32_t header_len = 0;
  std::memcpy(&header_len, raw.data() + 8, 4);
  if (12 + static_cast<size_t>(header_len) > raw.size()) throw ProviderUnavailable("weight header truncated");
  json header;
  try {
    header = json::parse(raw.substr(12, header_len));
  } catch (const json::exception& e) {
    throw ProviderUnavailable(std::string("weight header unreadable: ") + e.what());
  }
  size_t payload_bytes = raw.size() - 12 - header_len;
  if (payload_bytes % 4 != 0) throw ProviderUnavailable("weight payload misaligned");
  TensorTable table;
  table.payload.resize(payload_bytes / 4);
  std::memcpy(table.payload.data(), raw.data() + 12 + header_len, payload_bytes);
  for (const auto& t : header.at("tensors")) {
    std::vector<size_t> shape = t.at("shape").get<std::vector<size_t>>();
    size_t offset = t.at("offset").get<size_t>();
    size_t n = 1;
    for (size_t s : shape) n *= s;
    if (offset + n > table.payload.size()) throw ProviderUnavailable("tensor outside payload");
    table.entries[t.at("name").get<std::string>()] = {shape, offset};
  }
  return table;
}

}  // namespace

TransformerEmbedder::TransformerEmbedder(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
TransformerEmbedder::~TransformerEmbedder() = default;

std::unique_ptr<TransformerEmbedder> TransformerEmbedder::load(const std::filesystem::path& dir,
                                                               Pooling pooling) {
  for (const char* f : {"config.json", "vocab.txt", "weights.bin"}) {
    if (!std::filesystem::exists(dir / f)) {
      throw ProviderUnavailable("transformer asset missing: " + (dir / f).string());
    }
  }
  auto impl = std::make_unique<Impl>();
  impl->pooling = pooling;
  try {
    json cfg = read_json_file(dir / "config.json");
    auto& c = impl->config;
    c.vocab_size = cfg.at("vocab_size").get<size_t>();
    c.dim = cfg.at("dim").get<size_t>();
    c.n_layers = cfg.at("n_layers").get<size_t>();
    c.n_heads = cfg.at("n_heads").get<size_t>();
    c.hidden_dim = cfg.at("hidden_dim").get<size_t>();
    c.max_position_embeddings = cfg.at("max_position_embeddings").get<size_t>();
    c.do_lower_case = cfg.value("do_lower_case", true);
    c.layer_norm_eps = cfg.value("layer_norm_eps", 1e-12);
    c.name = cfg.value("name", std::string("distilbert"));
    if (cfg.value("activation", std::string("gelu")) != "gelu") {
      throw ProviderUnavailable("unsupported activation");
    }
  } catch (const json::exception& e) {
    throw ProviderUnavailable(std::string("bad transformer config: ") + e.what());
  } catch (const IoFailure& e) {
    throw ProviderUnavailable(e.what());
  }
  const auto& c = impl->config;
  if (c.n_heads == 0 || c.dim % c.n_heads != 0) throw ProviderUnavailable("dim not divisible by heads");

  impl->tokenizer = std::make_unique<WordPieceTokenizer>(
      WordPieceTokenizer::from_file(dir / "vocab.txt", c.do_lower_case));
  if (impl->tokenizer->vocab_size() != c.vocab_size) {
    throw ProviderUnavailable("vocab.txt size differs from config vocab_size");
  }

  TensorTable w = read_weights(dir / "weights.bin", impl->weights_digest);
  impl->word_emb = w.matrix("embeddings.word_embeddings.weight", c.vocab_size, c.dim);
  impl->pos_emb = w.matrix("embeddings.position_embeddings.weight", c.max_position_embeddings, c.dim);
  impl->emb_ln_g = w.vector("embeddings.LayerNorm.weight", c.dim);
  impl->emb_ln_b = w.vector("embeddings.LayerNorm.bias", c.dim);
  for (size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "transformer.layer." + std::to_string(l) + ".";
    Impl::Layer L;
    L.q_w = w.matrix(p + "attention.q_lin.weight", c.dim, c.dim);
    L.q_b = w.vector(p + "attention.q_lin.bias", c.dim);
    L.k_w = w.matrix(p + "attention.k_lin.weight", c.dim, c.dim);
    L.k_b = w.vector(p + "attention.k_lin.bias", c.dim);
    L.v_w = w.matrix(p + "attention.v_lin.weight", c.dim, c.dim);
    L.v_b = w.vector(p + "attention.v_lin.bias", c.dim);
    L.o_w = w.matrix(p + "attention.out_lin.weight", c.dim, c.dim);
    L.o_b = w.vector(p + "attention.out_lin.bias", c.dim);
    L.sa_ln_g = w.vector(p + "sa_layer_norm.weight", c.dim);
    L.sa_ln_b = w.vector(p + "sa_layer_norm.bias", c.dim);
    L.ff1_w = w.matrix(p + "ffn.lin1.weight", c.hidden_dim, c.dim);
    L.ff1_b = w.vector(p + "ffn.lin1.bias", c.hidden_dim);
    L.ff2_w = w.matrix(p + "ffn.lin2.weight", c.dim, c.hidden_dim);
    L.ff2_b = w.vector(p + "ffn.lin2.bias", c.dim);
    L.out_ln_g = w.vector(p + "output_layer_norm.weight", c.dim);
    L.out_ln_b = w.vector(p + "output_layer_norm.bias", c.dim);
    impl->layers.push_back(std::move(L));
  }
  return std::unique_ptr<TransformerEmbedder>(new TransformerEmbedder(std::move(impl)));
}

std::vector<float> TransformerEmbedder::hidden_states(const std::vector<int32_t>& ids) const {
  if (ids.empty() || ids.size() > impl_->config.max_position_embeddings) {
    throw EncodeFailure("token sequence length out of range");
  }
  for (int32_t id : ids) {
    if (id < 0 || static_cast<size_t>(id) >= impl_->config.vocab_size) {
      throw EncodeFailure("token id out of range");
    }
  }
  Matrix h = impl_->forward(ids);
  return std::vector<float>(h.data(), h.data() + h.size());
}

Embedding TransformerEmbedder::embed(std::string_view input) const {
  Embedding e;
  e.provider_id = provider_id();
  e.text_hash = sha256(input);
  const size_t D = impl_->config.dim;
  std::string text = text::html_unescape(input);
  if (impl_->tokenizer->basic_tokenize(text).empty()) {
    e.vector.assign(D, 0.0f);
    e.empty = true;
    return e;
  }
  auto ids = impl_->tokenizer->encode(text, impl_->config.max_position_embeddings);
  Matrix h = impl_->forward(ids);
  if (impl_->pooling == Pooling::first_token) {
    e.vector.assign(h.row(0).data(), h.row(0).data() + D);
  } else {
    Eigen::RowVectorXf mean = h.colwise().mean();
    e.vector.assign(mean.data(), mean.data() + D);
  }
  return e;
}

std::string TransformerEmbedder::provider_id() const {
  return "distilbert:" + impl_->config.name + ":" + impl_->weights_digest.substr(0, 12) +
         (impl_->pooling == Pooling::first_token ? ":cls" : ":mean");
}

size_t TransformerEmbedder::dim() const { return impl_->config.dim; }
const WordPieceTokenizer& TransformerEmbedder::tokenizer() const { return *impl_->tokenizer; }
const TransformerConfig& TransformerEmbedder::config() const { return impl_->config; }

}  // namespace toneshift::embed
