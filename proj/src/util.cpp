#include <glob.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <boost/iostreams/filter/bzip2.hpp>
#include <boost/iostreams/filter/gzip.hpp>
#include <boost/iostreams/filter/zstd.hpp>
#include <boost/iostreams/filtering_stream.hpp>
#include <openssl/evp.h>
#include <zlib.h>

#include "toneshift/digest.hpp"
#include "toneshift/error.hpp"
#include "toneshift/io.hpp"
#include "toneshift/rng.hpp"

namespace toneshift {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::malformed_record: return "MalformedRecord";
    case ErrorCode::missing_field: return "MissingField";
    case ErrorCode::dimension_mismatch: return "DimensionMismatch";
    case ErrorCode::provider_unavailable: return "ProviderUnavailable";
    case ErrorCode::provider_mismatch: return "ProviderMismatch";
    case ErrorCode::encode_failure: return "EncodeFailure";
    case ErrorCode::cache_corrupt: return "CacheCorrupt";
    case ErrorCode::non_finite_activation: return "NonFiniteActivation";
    case ErrorCode::empty_training_set: return "EmptyTrainingSet";
    case ErrorCode::diverged_loss: return "DivergedLoss";
    case ErrorCode::missing_embedding: return "MissingEmbedding";
    case ErrorCode::length_mismatch: return "LengthMismatch";
    case ErrorCode::model_not_loaded: return "ModelNotLoaded";
    case ErrorCode::empty_request: return "EmptyRequest";
    case ErrorCode::checkpoint_invalid: return "CheckpointInvalid";
    case ErrorCode::io_failure: return "IoFailure";
    case ErrorCode::invalid_argument: return "InvalidArgument";
  }
  return "Unknown";
}

// ---------------------------------------------------------------------------
// rng

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t Rng::uniform_index(uint64_t n) {
  if (n == 0) throw InvalidArgument("uniform_index: empty range");
  // Rejection sampling keeps the result exactly uniform.
  uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
  uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::uniform01() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1;
  do {
    u1 = uniform01();
  } while (u1 <= 0.0);
  double u2 = uniform01();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

// ---------------------------------------------------------------------------
// digests

Sha256Builder::Sha256Builder() : ctx_(EVP_MD_CTX_new()) {
  EVP_DigestInit_ex(static_cast<EVP_MD_CTX*>(ctx_), EVP_sha256(), nullptr);
}

Sha256Builder::~Sha256Builder() { EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_)); }

void Sha256Builder::update(std::string_view data) {
  EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), data.data(), data.size());
}

void Sha256Builder::update(std::span<const uint8_t> data) {
  EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), data.data(), data.size());
}

Sha256 Sha256Builder::finish() {
  Sha256 out{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), out.data(), &len);
  return out;
}

Sha256 sha256(std::string_view data) {
  Sha256Builder b;
  b.update(data);
  return b.finish();
}

Sha256 sha256(std::span<const uint8_t> data) {
  Sha256Builder b;
  b.update(data);
  return b.finish();
}

Sha256 sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open " + path.string());
  Sha256Builder b;
  std::string buffer(1 << 16, '\0');
  while (in) {
    in.read(buffer.data(), static_cast<std::streamsize>(buffer.size()));
    b.update(std::string_view(buffer.data(), static_cast<size_t>(in.gcount())));
  }
  return b.finish();
}

std::string to_hex(std::span<const uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (uint8_t b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xF]);
  }
  return out;
}

std::string sha256_hex(std::string_view data) { return to_hex(sha256(data)); }
std::string sha256_file_hex(const std::filesystem::path& path) { return to_hex(sha256_file(path)); }

uint32_t crc32(std::span<const uint8_t> data, uint32_t seed) {
  return static_cast<uint32_t>(
      ::crc32(seed, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size())));
}

// ---------------------------------------------------------------------------
// io

Compression detect_compression(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  if (ext == ".gz") return Compression::gzip;
  if (ext == ".zst" || ext == ".zstd") return Compression::zstd;
  if (ext == ".bz2") return Compression::bzip2;
  return Compression::none;
}

namespace {

class CompressedStream : public std::istream {
 public:
  CompressedStream(const std::filesystem::path& path, Compression kind)
      : std::istream(nullptr), file_(path, std::ios::binary) {
    if (!file_) throw IoFailure("cannot open " + path.string());
    switch (kind) {
      case Compression::gzip: chain_.push(boost::iostreams::gzip_decompressor()); break;
      case Compression::zstd: chain_.push(boost::iostreams::zstd_decompressor()); break;
      case Compression::bzip2: chain_.push(boost::iostreams::bzip2_decompressor()); break;
      case Compression::none: break;
    }
    chain_.push(file_);
    rdbuf(chain_.rdbuf());
  }

 private:
  std::ifstream file_;
  boost::iostreams::filtering_istream chain_;
};

}  // namespace

std::unique_ptr<std::istream> open_input(const std::filesystem::path& path) {
  auto kind = detect_compression(path);
  if (kind == Compression::none) {
    auto in = std::make_unique<std::ifstream>(path, std::ios::binary);
    if (!*in) throw IoFailure("cannot open " + path.string());
    return in;
  }
  return std::make_unique<CompressedStream>(path, kind);
}

void for_each_line(const std::filesystem::path& path,
                   const std::function<void(std::string_view)>& fn) {
  auto in = open_input(path);
  std::string line;
  while (std::getline(*in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    fn(line);
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoFailure("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoFailure("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<std::filesystem::path> expand_glob(const std::string& pattern) {
  std::vector<std::filesystem::path> out;
  glob_t result{};
  int rc = ::glob(pattern.c_str(), 0, nullptr, &result);
  if (rc == 0) {
    for (size_t i = 0; i < result.gl_pathc; ++i) out.emplace_back(result.gl_pathv[i]);
  }
  globfree(&result);
  if (out.empty() && std::filesystem::exists(pattern)) out.emplace_back(pattern);
  std::sort(out.begin(), out.end());
  return out;
}

json read_json_file(const std::filesystem::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw IoFailure("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& value) {
  write_file_atomic(path, value.dump(2) + "\n");
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::vector<json> rows;
  size_t line_no = 0;
  for_each_line(path, [&](std::string_view line) {
    ++line_no;
    if (line.empty()) return;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw IoFailure(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  });
  return rows;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows) {
  std::string out;
  for (const auto& row : rows) {
    out += row.dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

std::string format_double(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

std::string format_fixed(double value, int decimals) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::fixed, decimals);
  return std::string(buf, res.ptr);
}

std::filesystem::path data_dir() {
  if (const char* env = std::getenv("TONESHIFT_DATA_DIR"); env && *env) return env;
  return TONESHIFT_DATA_DIR;
}

}  // namespace toneshift
